//! Text codec for model outputs.
//!
//! Wire format (one response):
//!
//! ```text
//! Thought: <free text>
//! Final Answer: intention=<0|1|2>; trajectory=coords[(x1,y1),(x2,y2),(x3,y3),(x4,y4)]
//! Final Answer: intention=<1|2>; trajectory=sam[W=<w>,D=<d>,v0=<v>,dvx=<a>]
//! ```
//!
//! Keep-lane answers carry four coordinates at 1, 2, 3 and 4 s; lane changes
//! carry the four maneuver parameters. Every number is written with exactly
//! three decimals and an optional leading `-`. Parsing is strict: anything
//! else is a [`ParseError`] carrying the byte offset of the failure.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{KinematicsError, SamParams};

pub const THOUGHT_MARKER: &str = "Thought:";
pub const ANSWER_MARKER: &str = "Final Answer:";

/// Number of coordinate points in a keep-lane answer.
pub const COORD_POINTS: usize = 4;
/// Point count of the dense coordinate baseline used for size comparisons.
pub const DENSE_BASELINE_POINTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Intention {
    KeepLane = 0,
    LeftLaneChange = 1,
    RightLaneChange = 2,
}

impl Intention {
    pub const ALL: [Intention; 3] = [Intention::KeepLane, Intention::LeftLaneChange, Intention::RightLaneChange];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::KeepLane),
            1 => Some(Self::LeftLaneChange),
            2 => Some(Self::RightLaneChange),
            _ => None,
        }
    }

    pub fn is_lane_change(self) -> bool {
        self != Self::KeepLane
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::KeepLane => "keep_lane",
            Self::LeftLaneChange => "left_lane_change",
            Self::RightLaneChange => "right_lane_change",
        }
    }
}

impl From<Intention> for u8 {
    fn from(i: Intention) -> u8 {
        i.code()
    }
}

impl TryFrom<u8> for Intention {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        Self::from_code(code).ok_or_else(|| format!("intention code {code} not in 0..=2"))
    }
}

impl fmt::Display for Intention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The predicted maneuver parameters; the insertion speed is context, not
/// part of the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamPayload {
    #[serde(rename = "W")]
    pub w: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub v0: f64,
    pub dvx: f64,
}

impl SamPayload {
    pub fn with_speed(self, vx0: f64) -> Result<SamParams, KinematicsError> {
        SamParams::new(self.w, self.d, self.v0, self.dvx, vx0)
    }
}

impl From<SamParams> for SamPayload {
    fn from(p: SamParams) -> Self {
        Self { w: p.w, d: p.d, v0: p.v0, dvx: p.dvx }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HybridTrajectory {
    Coords([(f64, f64); COORD_POINTS]),
    Params(SamPayload),
}

impl HybridTrajectory {
    /// Number of scalars the representation emits.
    pub fn payload_size(&self) -> usize {
        match self {
            Self::Coords(points) => 2 * points.len(),
            Self::Params(_) => 4,
        }
    }

    fn matches(&self, intention: Intention) -> bool {
        matches!(
            (intention, self),
            (Intention::KeepLane, Self::Coords(_))
                | (Intention::LeftLaneChange | Intention::RightLaneChange, Self::Params(_))
        )
    }
}

/// Scalar count of the dense coordinate baseline (`DENSE_BASELINE_POINTS`
/// `(x, y)` pairs).
pub fn dense_baseline_payload_size() -> usize {
    2 * DENSE_BASELINE_POINTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub thought: String,
    pub intention: Intention,
    pub trajectory: HybridTrajectory,
}

impl ModelOutput {
    /// Builds an output, enforcing keep-lane with coordinates and lane
    /// changes with parameters.
    pub fn new(thought: impl Into<String>, intention: Intention, trajectory: HybridTrajectory) -> Result<Self, EncodeError> {
        if !trajectory.matches(intention) {
            return Err(EncodeError::InconsistentVariant(intention));
        }
        Ok(Self { thought: thought.into(), intention, trajectory })
    }

    /// Rounds every number to the three decimals the wire format keeps.
    pub fn quantized(&self) -> Self {
        let trajectory = match self.trajectory {
            HybridTrajectory::Coords(pts) => HybridTrajectory::Coords(pts.map(|(x, y)| (quantize(x), quantize(y)))),
            HybridTrajectory::Params(p) => HybridTrajectory::Params(SamPayload {
                w: quantize(p.w),
                d: quantize(p.d),
                v0: quantize(p.v0),
                dvx: quantize(p.dvx),
            }),
        };
        Self { thought: self.thought.clone(), intention: self.intention, trajectory }
    }
}

/// `v` rounded to the nearest millimetre as it would be rendered.
pub fn quantize(v: f64) -> f64 {
    format_number(v).parse().expect("rendered numbers parse")
}

fn format_number(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("intention {0} does not match the trajectory variant")]
    InconsistentVariant(Intention),
    #[error("payload is not representable: {0}")]
    InvalidPayload(&'static str),
}

pub fn serialize(out: &ModelOutput) -> Result<String, EncodeError> {
    if !out.trajectory.matches(out.intention) {
        return Err(EncodeError::InconsistentVariant(out.intention));
    }
    let mut s = String::new();
    write!(s, "{THOUGHT_MARKER} {}\n{ANSWER_MARKER} intention={}; trajectory=", out.thought, out.intention.code()).unwrap();
    match out.trajectory {
        HybridTrajectory::Coords(points) => {
            if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(EncodeError::InvalidPayload("non-finite coordinate"));
            }
            let body: Vec<String> = points
                .iter()
                .map(|(x, y)| format!("({},{})", format_number(*x), format_number(*y)))
                .collect();
            write!(s, "coords[{}]", body.join(",")).unwrap();
        }
        HybridTrajectory::Params(p) => {
            if ![p.w, p.d, p.v0, p.dvx].iter().all(|v| v.is_finite()) {
                return Err(EncodeError::InvalidPayload("non-finite parameter"));
            }
            if !(quantize(p.d) > 0.0) {
                return Err(EncodeError::InvalidPayload("duration must render as positive"));
            }
            write!(
                s,
                "sam[W={},D={},v0={},dvx={}]",
                format_number(p.w),
                format_number(p.d),
                format_number(p.v0),
                format_number(p.dvx)
            )
            .unwrap();
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no `Final Answer:` marker")]
    MissingFinalAnswer { offset: usize },
    #[error("byte {offset}: intention must be 0, 1 or 2")]
    BadIntention { offset: usize },
    #[error("byte {offset}: expected {COORD_POINTS} coordinate pairs, found {found}")]
    WrongPointCount { offset: usize, found: usize },
    #[error("byte {offset}: malformed number")]
    MalformedNumber { offset: usize },
    #[error("byte {offset}: intention and trajectory variant disagree")]
    VariantMismatch { offset: usize },
    #[error("byte {offset}: expected {expected}")]
    Unexpected { offset: usize, expected: &'static str },
    #[error("byte {offset}: duration must be positive")]
    NonPositiveDuration { offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match *self {
            Self::MissingFinalAnswer { offset }
            | Self::BadIntention { offset }
            | Self::WrongPointCount { offset, .. }
            | Self::MalformedNumber { offset }
            | Self::VariantMismatch { offset }
            | Self::Unexpected { offset, .. }
            | Self::NonPositiveDuration { offset } => offset,
        }
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn expect(&mut self, lit: &'static str) -> Result<(), ParseError> {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(ParseError::Unexpected { offset: self.pos, expected: lit })
        }
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    /// `-?[0-9]+\.[0-9]{3}`
    fn number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        let bytes = self.rest().as_bytes();
        let mut i = 0;
        if bytes.first() == Some(&b'-') {
            i += 1;
        }
        let int_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let int_digits = i - int_start;
        let ok_point = bytes.get(i) == Some(&b'.');
        let frac_start = i + 1;
        let mut j = frac_start;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if int_digits == 0 || !ok_point || j - frac_start != 3 {
            return Err(ParseError::MalformedNumber { offset: start });
        }
        let value = self.rest()[..j].parse().map_err(|_| ParseError::MalformedNumber { offset: start })?;
        self.pos += j;
        Ok(value)
    }
}

/// Strict parse of one response.
///
/// The thought is everything between `Thought:` and the last `Final Answer:`,
/// so free text may itself mention the marker. The `Thought:` section may be
/// omitted entirely.
pub fn parse(text: &str) -> Result<ModelOutput, ParseError> {
    let lead = text.len() - text.trim_start().len();
    let body = text.trim();
    let end = lead + body.len();
    let Some(marker_rel) = body.rfind(ANSWER_MARKER) else {
        return Err(ParseError::MissingFinalAnswer { offset: end });
    };
    let marker = lead + marker_rel;

    let head = &text[lead..marker];
    let thought = if head.is_empty() {
        String::new()
    } else if let Some(rest) = head.strip_prefix(THOUGHT_MARKER) {
        let rest = rest.strip_prefix(' ').unwrap_or(rest);
        rest.strip_suffix('\n').unwrap_or(rest).to_string()
    } else {
        return Err(ParseError::Unexpected { offset: lead, expected: THOUGHT_MARKER });
    };

    let mut cur = Cursor { text: &text[..end], pos: marker + ANSWER_MARKER.len() };
    cur.expect(" intention=")?;
    let intention_at = cur.pos;
    let code = cur.rest().as_bytes().first().copied();
    let intention = match code {
        Some(c @ b'0'..=b'2') if !cur.rest()[1..].starts_with(|ch: char| ch.is_ascii_digit()) => {
            cur.pos += 1;
            Intention::from_code(c - b'0').expect("checked range")
        }
        _ => return Err(ParseError::BadIntention { offset: intention_at }),
    };
    cur.expect("; trajectory=")?;
    let variant_at = cur.pos;

    let trajectory = if cur.eat("coords[") {
        if intention != Intention::KeepLane {
            return Err(ParseError::VariantMismatch { offset: variant_at });
        }
        let mut points = Vec::new();
        loop {
            cur.expect("(")?;
            let x = cur.number()?;
            cur.expect(",")?;
            let y = cur.number()?;
            cur.expect(")")?;
            points.push((x, y));
            if !cur.eat(",") {
                break;
            }
        }
        let close_at = cur.pos;
        cur.expect("]")?;
        let points: [(f64, f64); COORD_POINTS] = points
            .try_into()
            .map_err(|v: Vec<_>| ParseError::WrongPointCount { offset: close_at, found: v.len() })?;
        HybridTrajectory::Coords(points)
    } else if cur.eat("sam[") {
        if intention == Intention::KeepLane {
            return Err(ParseError::VariantMismatch { offset: variant_at });
        }
        cur.expect("W=")?;
        let w = cur.number()?;
        cur.expect(",D=")?;
        let d_at = cur.pos;
        let d = cur.number()?;
        if !(d > 0.0) {
            return Err(ParseError::NonPositiveDuration { offset: d_at });
        }
        cur.expect(",v0=")?;
        let v0 = cur.number()?;
        cur.expect(",dvx=")?;
        let dvx = cur.number()?;
        cur.expect("]")?;
        HybridTrajectory::Params(SamPayload { w, d, v0, dvx })
    } else {
        return Err(ParseError::Unexpected { offset: variant_at, expected: "coords[ or sam[" });
    };

    if cur.pos != end {
        return Err(ParseError::Unexpected { offset: cur.pos, expected: "end of answer" });
    }
    Ok(ModelOutput { thought, intention, trajectory })
}

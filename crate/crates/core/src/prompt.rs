//! Natural-language prompts, rule-based reasoning text and fine-tuning corpus
//! records.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{serialize, EncodeError, HybridTrajectory, Intention, ModelOutput, SamPayload, COORD_POINTS};
use crate::fitting::FitResult;
use crate::scenario::{NeighborSlot, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    /// |mean vy| above which lateral motion is significant, m/s.
    pub lateral_motion_threshold: f64,
    /// Time-to-collision under which the lane ahead counts as blocked, s.
    pub ttc_threshold: f64,
    /// History tail averaged for the lateral velocity feature, s.
    pub lateral_window: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self { lateral_motion_threshold: 0.2, ttc_threshold: 5.0, lateral_window: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptFeatures {
    pub significant_lateral_motion: bool,
    /// Mean lateral velocity over the history tail, m/s (left positive).
    pub lateral_velocity: f64,
    pub blocked_lane_ahead: bool,
    pub time_to_collision: Option<f64>,
    /// Preceding vehicle speed minus ego speed, m/s.
    pub relative_speed_to_preceding: Option<f64>,
    /// Distance to the nearest vehicle in the left lane, m.
    pub adjacent_gap_left: Option<f64>,
    pub adjacent_gap_right: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub prompt: String,
    pub target: String,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("label {label} does not match the supplied trajectory payload")]
    VariantMismatch { label: Intention },
    #[error("scenario future does not cover t = {0} s")]
    FutureTooShort(f64),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Trajectory part of a training target.
#[derive(Debug, Clone, Copy)]
pub enum TargetPayload<'a> {
    Fit(&'a FitResult),
    Coords([(f64, f64); COORD_POINTS]),
}

fn nearest_gap(s: &Scenario, slots: [NeighborSlot; 3]) -> Option<f64> {
    slots
        .iter()
        .filter_map(|slot| s.neighbors.get(slot))
        .map(|n| (n.x - s.insertion.x).abs())
        .min_by(f64::total_cmp)
}

pub fn extract_features(s: &Scenario, cfg: &PromptConfig) -> PromptFeatures {
    let lateral_velocity = s.recent_lateral_velocity(cfg.lateral_window);
    let lead = s.neighbors.get(&NeighborSlot::Preceding);
    let relative_speed_to_preceding = lead.map(|l| l.vx - s.insertion.vx);
    let time_to_collision = lead.and_then(|l| {
        let gap = l.x - s.insertion.x;
        let closing = s.insertion.vx - l.vx;
        (gap > 0.0 && closing > 0.0).then(|| gap / closing)
    });
    PromptFeatures {
        significant_lateral_motion: lateral_velocity.abs() > cfg.lateral_motion_threshold,
        lateral_velocity,
        blocked_lane_ahead: time_to_collision.is_some_and(|ttc| ttc < cfg.ttc_threshold),
        time_to_collision,
        relative_speed_to_preceding,
        adjacent_gap_left: nearest_gap(
            s,
            [NeighborSlot::LeftPreceding, NeighborSlot::LeftAlongside, NeighborSlot::LeftFollowing],
        ),
        adjacent_gap_right: nearest_gap(
            s,
            [NeighborSlot::RightPreceding, NeighborSlot::RightAlongside, NeighborSlot::RightFollowing],
        ),
    }
}

/// Reasoning text: observed features first, then the behavior they support.
pub fn thought_text(f: &PromptFeatures, intention: Intention) -> String {
    let mut notes = Vec::new();
    if f.significant_lateral_motion {
        let side = if f.lateral_velocity > 0.0 { "left" } else { "right" };
        notes.push(format!("significant lateral movement toward the {side} ({:.2} m/s)", f.lateral_velocity.abs()));
    } else {
        notes.push("no significant lateral movement".to_string());
    }
    match (f.blocked_lane_ahead, f.time_to_collision) {
        (true, Some(ttc)) => notes.push(format!("a blocked lane ahead (time to collision {ttc:.2} s)")),
        _ if f.relative_speed_to_preceding.is_some() => notes.push("the lane ahead is not blocked".to_string()),
        _ => notes.push("no preceding vehicle".to_string()),
    }
    let behavior = match (intention, f.blocked_lane_ahead) {
        (Intention::KeepLane, _) => "keeping the current lane",
        (Intention::LeftLaneChange, true) => "overtaking through a left lane change",
        (Intention::LeftLaneChange, false) => "a left lane change",
        (Intention::RightLaneChange, true) => "passing the slower vehicle through a right lane change",
        (Intention::RightLaneChange, false) => "a right lane change",
    };
    format!("Notable features: {}. Potential behavior: {behavior}.", notes.join("; "))
}

const GRAMMAR_STANZA: &str = "Answer in exactly this format:\n\
Thought: <notable features and the behavior they suggest>\n\
Final Answer: intention=<0|1|2>; trajectory=<payload>\n\
Use intention=0 (keep lane) with payload coords[(x1,y1),(x2,y2),(x3,y3),(x4,y4)] giving positions at 1, 2, 3 and 4 s.\n\
Use intention=1 (left lane change) or intention=2 (right lane change) with payload sam[W=<w>,D=<d>,v0=<v>,dvx=<a>].\n\
Write every number with three decimals.";

/// Deterministic prompt describing the ego vehicle, its surroundings and the
/// expected answer format. Numbers use two decimals.
pub fn build_prompt(s: &Scenario, cfg: &PromptConfig) -> String {
    let f = extract_features(s, cfg);
    let ego = &s.insertion;
    let mut p = String::new();
    p.push_str("You are predicting the maneuver of a vehicle on a highway.\n");
    writeln!(
        p,
        "Ego vehicle: lane {}, position ({:.2}, {:.2}) m, longitudinal speed {:.2} m/s, lateral speed {:.2} m/s.",
        s.lanes.lane_id, ego.x, ego.y, ego.vx, ego.vy
    )
    .unwrap();
    writeln!(
        p,
        "Recent lateral velocity over the last {:.2} s: {:.2} m/s (positive is leftward).",
        cfg.lateral_window, f.lateral_velocity
    )
    .unwrap();
    if let (Some(first), Some(last)) = (s.history.first(), s.history.last()) {
        writeln!(
            p,
            "Over the observed {:.2} s the vehicle moved {:.2} m longitudinally and {:.2} m laterally.",
            (last.frame - first.frame) as f64 / s.sample_rate,
            last.x - first.x,
            last.y - first.y
        )
        .unwrap();
    }
    let lanes = |l: Option<u32>| l.map_or("none".to_string(), |l| format!("lane {l}"));
    writeln!(p, "Adjacent lanes: left {}, right {}.", lanes(s.lanes.left_lane), lanes(s.lanes.right_lane)).unwrap();
    if s.neighbors.is_empty() {
        p.push_str("Surrounding vehicles: no surrounding vehicles detected.\n");
    } else {
        p.push_str("Surrounding vehicles:\n");
        for (slot, n) in &s.neighbors {
            writeln!(
                p,
                "- {}: gap {:.2} m, relative speed {:.2} m/s.",
                slot.describe(),
                n.x - ego.x,
                n.vx - ego.vx
            )
            .unwrap();
        }
    }
    p.push_str("Predict the intention (0 keep lane, 1 left lane change, 2 right lane change) and the trajectory for the next 4 s.\n");
    p.push_str(GRAMMAR_STANZA);
    p
}

/// Ground-truth future positions at 1, 2, 3 and 4 s.
pub fn future_coords(s: &Scenario) -> Result<[(f64, f64); COORD_POINTS], PromptError> {
    let mut out = [(0.0, 0.0); COORD_POINTS];
    for (k, slot) in out.iter_mut().enumerate() {
        let t = (k + 1) as f64;
        let st = s.future_at(t).ok_or(PromptError::FutureTooShort(t))?;
        *slot = (st.x, st.y);
    }
    Ok(out)
}

pub fn build_target(s: &Scenario, payload: TargetPayload<'_>, cfg: &PromptConfig) -> Result<CorpusRecord, PromptError> {
    let trajectory = match (s.label, payload) {
        (Intention::KeepLane, TargetPayload::Coords(points)) => HybridTrajectory::Coords(points),
        (Intention::LeftLaneChange | Intention::RightLaneChange, TargetPayload::Fit(fit)) => {
            HybridTrajectory::Params(SamPayload::from(fit.params))
        }
        (label, _) => return Err(PromptError::VariantMismatch { label }),
    };
    let thought = thought_text(&extract_features(s, cfg), s.label);
    let output = ModelOutput::new(thought, s.label, trajectory)?;
    Ok(CorpusRecord { prompt: build_prompt(s, cfg), target: serialize(&output)? })
}

pub fn write_corpus<W: Write>(mut out: W, records: &[CorpusRecord]) -> Result<(), PromptError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

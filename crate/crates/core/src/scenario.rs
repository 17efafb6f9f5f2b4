//! Prediction scenarios cut from track recordings.
//!
//! A scenario is anchored at the insertion point: the first frame in which
//! the vehicle is registered in its new lane (or, for lane keeping, a frame
//! picked on a fixed stride). It carries the observed history before that
//! point, the states of surrounding vehicles at that point and the ground
//! truth future expressed in the insertion frame.
//!
//! States stored in a scenario are road-aligned: `x` grows along the
//! direction of travel and `y` grows to the left. For recordings that already
//! use that convention they are the raw values.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Intention;
use crate::kinematics::{KinematicState, KinematicsError, SamParams, Trajectory};
use crate::tracks::{detect_insertion, Direction, LaneNumbering, Track, VehicleState};

/// Longitudinal distance under which an adjacent-lane vehicle counts as
/// alongside, meters.
pub const ALONGSIDE_DISTANCE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Observed history length, seconds.
    pub t_input: f64,
    /// Prediction period, seconds.
    pub t_p: f64,
    /// Gap between the last observed frame and the insertion point, seconds.
    pub t_h: f64,
    /// Recording rate, Hz.
    pub sample_rate: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { t_input: 3.0, t_p: 4.0, t_h: 0.0, sample_rate: 25.0 }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.t_input) && ok(self.t_p) && ok(self.sample_rate) && self.t_h.is_finite() && self.t_h >= 0.0) {
            return Err(ScenarioError::InvalidConfig("window lengths and sample rate must be positive"));
        }
        if self.input_frames() == 0 || self.future_frames() == 0 {
            return Err(ScenarioError::InvalidConfig("windows shorter than one frame"));
        }
        Ok(())
    }

    pub fn frames(&self, seconds: f64) -> usize {
        (seconds * self.sample_rate).round() as usize
    }

    pub fn input_frames(&self) -> usize {
        self.frames(self.t_input)
    }

    pub fn gap_frames(&self) -> usize {
        self.frames(self.t_h)
    }

    /// Frames after the insertion frame that the future covers.
    pub fn future_frames(&self) -> usize {
        self.frames(self.t_p)
    }

    /// Frames spanned by one scenario window, insertion frame included.
    pub fn window_frames(&self) -> usize {
        self.input_frames() + self.gap_frames() + self.future_frames() + 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }
}

/// Orientation of the recording's lateral axis relative to its `+x` axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LateralAxis {
    #[default]
    LeftPositive,
    RightPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub window: WindowConfig,
    /// Spacing of keep-lane windows along a track, seconds.
    pub keep_lane_stride: f64,
    pub lane_numbering: LaneNumbering,
    pub lateral_axis: LateralAxis,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            keep_lane_stride: 5.0,
            lane_numbering: LaneNumbering::default(),
            lateral_axis: LateralAxis::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSlot {
    Preceding,
    Following,
    LeftPreceding,
    LeftAlongside,
    LeftFollowing,
    RightPreceding,
    RightAlongside,
    RightFollowing,
}

impl NeighborSlot {
    pub const ALL: [NeighborSlot; 8] = [
        Self::Preceding,
        Self::Following,
        Self::LeftPreceding,
        Self::LeftAlongside,
        Self::LeftFollowing,
        Self::RightPreceding,
        Self::RightAlongside,
        Self::RightFollowing,
    ];

    pub fn describe(self) -> &'static str {
        match self {
            Self::Preceding => "preceding",
            Self::Following => "following",
            Self::LeftPreceding => "left-preceding",
            Self::LeftAlongside => "left-alongside",
            Self::LeftFollowing => "left-following",
            Self::RightPreceding => "right-preceding",
            Self::RightAlongside => "right-alongside",
            Self::RightFollowing => "right-following",
        }
    }
}

/// The lane the vehicle was observed in and which neighbours of it exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneContext {
    pub lane_id: u32,
    pub left_lane: Option<u32>,
    pub right_lane: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub label: Intention,
    pub sample_rate: f64,
    pub lanes: LaneContext,
    pub history: Vec<VehicleState>,
    pub insertion: VehicleState,
    pub future: Trajectory,
    pub neighbors: BTreeMap<NeighborSlot, VehicleState>,
    /// Generator parameters for synthetic lane changes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_params: Option<SamParams>,
}

impl Scenario {
    /// Mean lateral velocity over the last `window` seconds of history.
    pub fn recent_lateral_velocity(&self, window: f64) -> f64 {
        let Some(last) = self.history.last() else {
            return 0.0;
        };
        let recent: Vec<f64> = self
            .history
            .iter()
            .filter(|s| (last.frame - s.frame) as f64 / self.sample_rate <= window + 1e-9)
            .map(|s| s.vy)
            .collect();
        recent.iter().sum::<f64>() / recent.len() as f64
    }

    /// Ground-truth future state at `t` seconds after insertion.
    pub fn future_at(&self, t: f64) -> Option<KinematicState> {
        self.future.interpolate(t)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildOutput {
    pub scenarios: Vec<Scenario>,
    /// Lane-change events dropped for lack of history or future.
    pub skipped: usize,
}

/// Maps recording coordinates to the road-aligned frame of one ego vehicle.
#[derive(Debug, Clone, Copy)]
struct RoadFrame {
    sx: f64,
    sy: f64,
}

impl RoadFrame {
    fn for_ego(ego: &VehicleState, axis: LateralAxis) -> Self {
        let sx = if ego.vx < 0.0 { -1.0 } else { 1.0 };
        let axis_sign = match axis {
            LateralAxis::LeftPositive => 1.0,
            LateralAxis::RightPositive => -1.0,
        };
        Self { sx, sy: sx * axis_sign }
    }

    fn apply(&self, s: &VehicleState) -> VehicleState {
        VehicleState {
            x: self.sx * s.x,
            y: self.sy * s.y,
            vx: self.sx * s.vx,
            vy: self.sy * s.vy,
            ax: self.sx * s.ax,
            ay: self.sy * s.ay,
            ..*s
        }
    }
}

/// Per-frame index over every vehicle of a recording.
pub struct Recording<'a> {
    by_frame: HashMap<u32, Vec<&'a VehicleState>>,
    lanes: BTreeSet<u32>,
}

impl<'a> Recording<'a> {
    pub fn new(tracks: &'a [Track]) -> Self {
        let mut by_frame: HashMap<u32, Vec<&VehicleState>> = HashMap::new();
        let mut lanes = BTreeSet::new();
        for s in tracks.iter().flatten() {
            by_frame.entry(s.frame).or_default().push(s);
            lanes.insert(s.lane_id);
        }
        Self { by_frame, lanes }
    }

    /// Marks lanes as present even if no vehicle was recorded in them.
    pub fn declare_lanes(&mut self, lanes: impl IntoIterator<Item = u32>) {
        self.lanes.extend(lanes);
    }

    pub fn lane_context(&self, lane_id: u32, numbering: LaneNumbering) -> LaneContext {
        let known = |l: Option<u32>| l.filter(|l| self.lanes.contains(l));
        LaneContext {
            lane_id,
            left_lane: known(numbering.left_of(lane_id)),
            right_lane: known(numbering.right_of(lane_id)),
        }
    }

    fn neighbors(
        &self,
        ego: &VehicleState,
        frame: RoadFrame,
        lanes: &LaneContext,
    ) -> BTreeMap<NeighborSlot, VehicleState> {
        let ego_x = frame.apply(ego).x;
        let mut best: BTreeMap<NeighborSlot, (f64, VehicleState)> = BTreeMap::new();
        for other in self.by_frame.get(&ego.frame).into_iter().flatten() {
            if other.vehicle_id == ego.vehicle_id {
                continue;
            }
            let o = frame.apply(other);
            let dx = o.x - ego_x;
            let slot = if o.lane_id == lanes.lane_id {
                if dx > 0.0 {
                    NeighborSlot::Preceding
                } else if dx < 0.0 {
                    NeighborSlot::Following
                } else {
                    continue;
                }
            } else {
                let side = if Some(o.lane_id) == lanes.left_lane {
                    [NeighborSlot::LeftPreceding, NeighborSlot::LeftAlongside, NeighborSlot::LeftFollowing]
                } else if Some(o.lane_id) == lanes.right_lane {
                    [NeighborSlot::RightPreceding, NeighborSlot::RightAlongside, NeighborSlot::RightFollowing]
                } else {
                    continue;
                };
                if dx.abs() <= ALONGSIDE_DISTANCE {
                    side[1]
                } else if dx > 0.0 {
                    side[0]
                } else {
                    side[2]
                }
            };
            let dist = dx.abs();
            let closer = best.get(&slot).is_none_or(|(d, cur)| dist < *d || (dist == *d && o.vehicle_id < cur.vehicle_id));
            if closer {
                best.insert(slot, (dist, o));
            }
        }
        best.into_iter().map(|(k, (_, v))| (k, v)).collect()
    }
}

fn contiguous(track: &[VehicleState], start: usize, end: usize) -> bool {
    track[start..=end].windows(2).all(|w| w[1].frame == w[0].frame + 1)
}

/// Cuts one scenario with the insertion point at `track[ins]`. The caller
/// guarantees the window fits inside the track.
pub fn scenario_at(
    recording: &Recording<'_>,
    track: &[VehicleState],
    ins: usize,
    label: Intention,
    cfg: &BuildConfig,
) -> Result<Scenario, ScenarioError> {
    let w = &cfg.window;
    let hist_end = ins - w.gap_frames();
    let hist_start = hist_end - w.input_frames();
    let raw_ins = &track[ins];
    let frame = RoadFrame::for_ego(raw_ins, cfg.lateral_axis);
    let insertion = frame.apply(raw_ins);
    let history: Vec<VehicleState> = track[hist_start..hist_end].iter().map(|s| frame.apply(s)).collect();
    let origin_lane = history.last().map_or(raw_ins.lane_id, |s| s.lane_id);
    let lanes = recording.lane_context(origin_lane, cfg.lane_numbering);

    let samples = track[ins..=ins + w.future_frames()]
        .iter()
        .map(|raw| {
            let s = frame.apply(raw);
            KinematicState {
                t: (s.frame - insertion.frame) as f64 / w.sample_rate,
                x: s.x - insertion.x,
                y: s.y - insertion.y,
                vx: s.vx,
                vy: s.vy,
                ay: s.ay,
            }
        })
        .collect();
    let future = Trajectory::new(samples, w.dt())?;

    Ok(Scenario {
        id: format!("v{:05}-f{:06}", raw_ins.vehicle_id, raw_ins.frame),
        label,
        sample_rate: w.sample_rate,
        lanes,
        history,
        insertion,
        future,
        neighbors: recording.neighbors(raw_ins, frame, &lanes),
        hidden_params: None,
    })
}

/// Extracts lane-change scenarios at every detected boundary crossing and
/// keep-lane scenarios on a fixed stride wherever a full window contains no
/// lane change. Output is ordered by scenario id.
pub fn build_scenarios(tracks: &[Track], cfg: &BuildConfig) -> Result<BuildOutput, ScenarioError> {
    cfg.window.validate()?;
    if !(cfg.keep_lane_stride.is_finite() && cfg.keep_lane_stride > 0.0) {
        return Err(ScenarioError::InvalidConfig("keep_lane_stride must be positive"));
    }
    let w = &cfg.window;
    let stride = w.frames(cfg.keep_lane_stride).max(1);
    let before = w.input_frames() + w.gap_frames();
    let recording = Recording::new(tracks);
    let mut out = BuildOutput::default();

    for track in tracks {
        for event in detect_insertion(track, cfg.lane_numbering) {
            let fits = event.index >= before && event.index + w.future_frames() < track.len();
            if !fits || !contiguous(track, event.index - before, event.index + w.future_frames()) {
                out.skipped += 1;
                continue;
            }
            let label = match event.direction {
                Direction::Left => Intention::LeftLaneChange,
                Direction::Right => Intention::RightLaneChange,
            };
            out.scenarios.push(scenario_at(&recording, track, event.index, label, cfg)?);
        }

        let span = w.window_frames();
        let mut start = 0;
        while start + span <= track.len() {
            let end = start + span - 1;
            let lane = track[start].lane_id;
            if contiguous(track, start, end) && track[start..=end].iter().all(|s| s.lane_id == lane) {
                out.scenarios.push(scenario_at(&recording, track, start + before, Intention::KeepLane, cfg)?);
            }
            start += stride;
        }
    }
    out.scenarios.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// One JSON object per line.
pub fn write_scenarios<W: Write>(mut out: W, scenarios: &[Scenario]) -> Result<(), ScenarioError> {
    for s in scenarios {
        serde_json::to_writer(&mut out, s).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a scenario file; blank lines are ignored, line numbers start at 1.
pub fn read_scenarios<R: BufRead>(input: R) -> Result<Vec<Scenario>, ScenarioError> {
    let mut scenarios = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Scenario =
            serde_json::from_str(&line).map_err(|e| ScenarioError::Malformed { line: i + 1, reason: e.to_string() })?;
        scenarios.push(s);
    }
    Ok(scenarios)
}

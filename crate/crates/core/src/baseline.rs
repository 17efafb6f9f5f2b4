//! Threshold heuristic that produces model-style answers offline.
//!
//! Lateral drift beyond a threshold toward an existing lane is read as a lane
//! change, answered with fixed maneuver width and duration and the observed
//! crossing speed. Everything else is lane keeping with constant-velocity
//! coordinates.

use serde::{Deserialize, Serialize};

use crate::codec::{serialize, HybridTrajectory, Intention, ModelOutput, SamPayload, COORD_POINTS};
use crate::kinematics::D_MIN;
use crate::prompt::{extract_features, thought_text, PromptConfig};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// m/s
    pub lateral_vel_threshold: f64,
    /// meters
    pub default_w: f64,
    /// seconds
    pub default_d: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { lateral_vel_threshold: 0.2, default_w: 3.75, default_d: 4.0 }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.lateral_vel_threshold > 0.0) {
            return Err("lateral_vel_threshold must be positive");
        }
        if !(self.default_d >= D_MIN) || !self.default_w.is_finite() {
            return Err("default_d must be at least D_MIN and default_w finite");
        }
        Ok(())
    }
}

pub fn predict_output(s: &Scenario, cfg: &BaselineConfig) -> ModelOutput {
    let prompt_cfg = PromptConfig { lateral_motion_threshold: cfg.lateral_vel_threshold, ..PromptConfig::default() };
    let features = extract_features(s, &prompt_cfg);
    let vy = features.lateral_velocity;
    let intention = if vy > cfg.lateral_vel_threshold && s.lanes.left_lane.is_some() {
        Intention::LeftLaneChange
    } else if vy < -cfg.lateral_vel_threshold && s.lanes.right_lane.is_some() {
        Intention::RightLaneChange
    } else {
        Intention::KeepLane
    };
    let ego = &s.insertion;
    let trajectory = match intention {
        Intention::KeepLane => {
            let mut points = [(0.0, 0.0); COORD_POINTS];
            for (k, p) in points.iter_mut().enumerate() {
                let t = (k + 1) as f64;
                *p = (ego.vx * t, ego.vy * t);
            }
            HybridTrajectory::Coords(points)
        }
        _ => {
            let sign = if intention == Intention::LeftLaneChange { 1.0 } else { -1.0 };
            HybridTrajectory::Params(SamPayload { w: sign * cfg.default_w.abs(), d: cfg.default_d, v0: ego.vy, dvx: 0.0 })
        }
    };
    ModelOutput::new(thought_text(&features, intention), intention, trajectory).expect("variant follows intention")
}

/// Baseline answer rendered in the model output format.
pub fn predict(s: &Scenario, cfg: &BaselineConfig) -> String {
    serialize(&predict_output(s, cfg)).expect("baseline payload is finite")
}

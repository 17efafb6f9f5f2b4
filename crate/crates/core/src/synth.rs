//! Seeded generator of synthetic highway recordings and scenarios.
//!
//! Each scenario gets its own block of frames on a three-lane road (lane 1
//! leftmost, 3.75 m lanes) so vehicles of different scenarios never meet.
//! Lane changes follow the post-boundary model after the crossing; before it
//! the lateral speed ramps up smoothly to the model's crossing speed so the
//! history shows the drift a real maneuver would. Keep-lane vehicles travel
//! at constant velocity with a slight lateral drift.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::Intention;
use crate::kinematics::{state_at, SamParams};
use crate::scenario::{scenario_at, BuildConfig, LateralAxis, Recording, Scenario, ScenarioError, WindowConfig};
use crate::tracks::{LaneNumbering, Track, VehicleState};

pub const LANE_WIDTH: f64 = 3.75;
pub const LANE_COUNT: u32 = 3;

/// Empty frames between consecutive scenario blocks.
const BLOCK_GAP_FRAMES: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMix {
    pub keep: f64,
    pub left: f64,
    pub right: f64,
}

impl Default for ClassMix {
    fn default() -> Self {
        Self { keep: 0.66, left: 0.17, right: 0.17 }
    }
}

impl ClassMix {
    /// Class counts for `n` scenarios: lane changes rounded, keep-lane takes
    /// the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let total = self.keep + self.left + self.right;
        let left = ((n as f64 * self.left / total).round() as usize).min(n);
        let right = ((n as f64 * self.right / total).round() as usize).min(n - left);
        (n - left - right, left, right)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub window: WindowConfig,
    pub class_mix: ClassMix,
    /// Standard deviation of lateral position noise, meters.
    pub noise_lat: f64,
    /// Standard deviation of longitudinal position noise, meters.
    pub noise_lon: f64,
    /// Range of |W|, meters.
    pub w_range: (f64, f64),
    /// Range of D, seconds.
    pub d_range: (f64, f64),
    /// Range of |v0|, m/s; the sign follows W.
    pub v0_range: (f64, f64),
    pub dvx_range: (f64, f64),
    pub speed_range: (f64, f64),
    /// Largest |vy| of keep-lane drift, m/s.
    pub keep_drift: f64,
    /// Probability that a slower vehicle precedes the ego in its lane.
    pub lead_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            class_mix: ClassMix::default(),
            noise_lat: 0.0,
            noise_lon: 0.0,
            w_range: (3.5, 4.0),
            d_range: (3.0, 6.0),
            v0_range: (0.0, 0.2),
            dvx_range: (-2.0, 2.0),
            speed_range: (22.0, 36.0),
            keep_drift: 0.05,
            lead_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub scenarios: Vec<Scenario>,
    pub tracks: Vec<Track>,
}

fn lane_center(lane: u32) -> f64 {
    (LANE_COUNT - lane) as f64 * LANE_WIDTH + 0.5 * LANE_WIDTH
}

/// Boundary on the left side of `lane`.
fn left_boundary(lane: u32) -> f64 {
    (LANE_COUNT - lane + 1) as f64 * LANE_WIDTH
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

struct Plan {
    label: Intention,
    origin: u32,
    target: u32,
    params: Option<SamParams>,
    speed: f64,
    lateral_offset: f64,
    drift: f64,
    lead: Option<(f64, f64)>,
}

fn plan(rng: &mut ChaCha8Rng, label: Intention, cfg: &SynthConfig) -> Plan {
    let speed = uniform(rng, cfg.speed_range);
    let (origin, target, params) = match label {
        Intention::KeepLane => {
            let lane = rng.random_range(1..=LANE_COUNT);
            (lane, lane, None)
        }
        Intention::LeftLaneChange | Intention::RightLaneChange => {
            let sign = if label == Intention::LeftLaneChange { 1.0 } else { -1.0 };
            let (origin, target) = if sign > 0.0 {
                let o = rng.random_range(2..=LANE_COUNT);
                (o, o - 1)
            } else {
                let o = rng.random_range(1..LANE_COUNT);
                (o, o + 1)
            };
            let w = sign * uniform(rng, cfg.w_range);
            let d = uniform(rng, cfg.d_range);
            let v0 = sign * uniform(rng, cfg.v0_range);
            let dvx = uniform(rng, cfg.dvx_range);
            let p = SamParams::new(w, d, v0, dvx, speed).expect("generator ranges are valid");
            (origin, target, Some(p))
        }
    };
    let lateral_offset = rng.random_range(-0.3..=0.3);
    let drift = cfg.keep_drift * rng.random_range(-1.0..=1.0);
    let lead = if rng.random_bool(cfg.lead_probability.clamp(0.0, 1.0)) {
        let gap = rng.random_range(20.0..=60.0);
        let slower = if label.is_lane_change() { rng.random_range(0.0..=8.0) } else { rng.random_range(-2.0..=3.0) };
        Some((gap, speed - slower))
    } else {
        None
    };
    Plan { label, origin, target, params, speed, lateral_offset, drift, lead }
}

/// Ego states before the crossing of a lane change. The lateral speed
/// follows a raised-cosine ramp from 0 to the model's crossing speed `W/(2D)`
/// over the `D` seconds preceding the crossing.
fn pre_crossing(p: &SamParams, t: f64) -> (f64, f64, f64) {
    let vy_cross = p.w / (2.0 * p.d);
    let ramp = p.d;
    let s = (t + ramp).max(0.0);
    let arg = PI * s / ramp;
    let travelled = |s: f64| 0.5 * vy_cross * (s - ramp / PI * (PI * s / ramp).sin());
    let y = -(travelled(ramp) - travelled(s));
    let vy = 0.5 * vy_cross * (1.0 - arg.cos());
    let ay = if s > 0.0 { 0.5 * vy_cross * PI / ramp * arg.sin() } else { 0.0 };
    (y, vy, ay)
}

/// Deterministic scenarios and the tracks they were cut from.
pub fn synth_generate(n: usize, seed: u64, cfg: &SynthConfig) -> Result<SynthOutput, ScenarioError> {
    let w = &cfg.window;
    w.validate()?;
    if !(cfg.noise_lat >= 0.0 && cfg.noise_lon >= 0.0) {
        return Err(ScenarioError::InvalidConfig("noise must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (keep, left, right) = cfg.class_mix.counts(n);
    let mut labels: Vec<Intention> = std::iter::repeat_n(Intention::KeepLane, keep)
        .chain(std::iter::repeat_n(Intention::LeftLaneChange, left))
        .chain(std::iter::repeat_n(Intention::RightLaneChange, right))
        .collect();
    labels.shuffle(&mut rng);

    let lat_noise = Normal::new(0.0, cfg.noise_lat).map_err(|_| ScenarioError::InvalidConfig("noise_lat"))?;
    let lon_noise = Normal::new(0.0, cfg.noise_lon).map_err(|_| ScenarioError::InvalidConfig("noise_lon"))?;

    let span = w.window_frames();
    let ins = w.input_frames() + w.gap_frames();
    let mut tracks: Vec<Track> = Vec::new();
    let mut egos = Vec::with_capacity(n);
    for (idx, &label) in labels.iter().enumerate() {
        let plan = plan(&mut rng, label, cfg);
        let base = (idx * (span + BLOCK_GAP_FRAMES)) as u32;
        let ego_id = 2 * idx as u32 + 1;
        let x_ins = 100.0;
        let y_ref = match plan.params {
            Some(p) if p.w > 0.0 => left_boundary(plan.origin),
            Some(_) => left_boundary(plan.target),
            None => lane_center(plan.origin) + plan.lateral_offset,
        };

        let mut ego = Vec::with_capacity(span);
        for k in 0..span {
            let t = (k as f64 - ins as f64) / w.sample_rate;
            let (x, y, vx, vy, ax, ay, lane) = match plan.params {
                Some(p) if t >= 0.0 => {
                    let s = state_at(&p, t);
                    (x_ins + s.x, y_ref + s.y, s.vx, s.vy, p.dvx / p.d, s.ay, plan.target)
                }
                Some(p) => {
                    let (y, vy, ay) = pre_crossing(&p, t);
                    (x_ins + p.vx0 * t, y_ref + y, p.vx0, vy, 0.0, ay, plan.origin)
                }
                None => (x_ins + plan.speed * t, y_ref + plan.drift * t, plan.speed, plan.drift, 0.0, 0.0, plan.origin),
            };
            ego.push(VehicleState { frame: base + k as u32, vehicle_id: ego_id, x, y, vx, vy, ax, ay, lane_id: lane });
        }
        if cfg.noise_lat > 0.0 || cfg.noise_lon > 0.0 {
            for s in &mut ego {
                s.x += lon_noise.sample(&mut rng);
                s.y += lat_noise.sample(&mut rng);
            }
        }
        tracks.push(ego);

        if let Some((gap, speed)) = plan.lead {
            let lead = (0..span)
                .map(|k| {
                    let t = (k as f64 - ins as f64) / w.sample_rate;
                    VehicleState {
                        frame: base + k as u32,
                        vehicle_id: ego_id + 1,
                        x: x_ins + gap + speed * t,
                        y: lane_center(plan.origin),
                        vx: speed,
                        vy: 0.0,
                        ax: 0.0,
                        ay: 0.0,
                        lane_id: plan.origin,
                    }
                })
                .collect();
            tracks.push(lead);
        }
        egos.push((tracks.len() - 1 - usize::from(plan.lead.is_some()), plan));
    }

    let build = BuildConfig {
        window: *w,
        keep_lane_stride: w.t_input + w.t_h + w.t_p,
        lane_numbering: LaneNumbering::SmallerIdIsLeft,
        lateral_axis: LateralAxis::LeftPositive,
    };
    let mut recording = Recording::new(&tracks);
    recording.declare_lanes(1..=LANE_COUNT);
    let mut scenarios = Vec::with_capacity(n);
    for (idx, (track_idx, plan)) in egos.iter().enumerate() {
        let mut s = scenario_at(&recording, &tracks[*track_idx], ins, plan.label, &build)?;
        s.id = format!("syn-{idx:06}");
        s.hidden_params = plan.params;
        scenarios.push(s);
    }
    Ok(SynthOutput { scenarios, tracks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{fit_sam, FitConfig};

    #[test]
    fn deterministic_from_seed() {
        let a = synth_generate(100, 7, &SynthConfig::default()).unwrap();
        let b = synth_generate(100, 7, &SynthConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(100, 8, &SynthConfig::default()).unwrap();
        assert_ne!(a.scenarios, c.scenarios);
    }

    #[test]
    fn default_class_mix() {
        let out = synth_generate(100, 7, &SynthConfig::default()).unwrap();
        let count = |l| out.scenarios.iter().filter(|s| s.label == l).count();
        assert_eq!(count(Intention::KeepLane), 66);
        assert_eq!(count(Intention::LeftLaneChange), 17);
        assert_eq!(count(Intention::RightLaneChange), 17);
        assert_eq!(ClassMix::default().counts(0), (0, 0, 0));
    }

    #[test]
    fn crossing_matches_labels() {
        let out = synth_generate(60, 3, &SynthConfig::default()).unwrap();
        for s in &out.scenarios {
            let last = s.history.last().unwrap();
            match s.label {
                Intention::KeepLane => {
                    assert_eq!(last.lane_id, s.insertion.lane_id);
                    assert!(s.recent_lateral_velocity(0.5).abs() <= 0.05 + 1e-12);
                }
                Intention::LeftLaneChange => {
                    assert_eq!(s.insertion.lane_id + 1, last.lane_id);
                    assert!(s.recent_lateral_velocity(0.5) > 0.2);
                    assert!(s.lanes.left_lane.is_some());
                }
                Intention::RightLaneChange => {
                    assert_eq!(s.insertion.lane_id, last.lane_id + 1);
                    assert!(s.recent_lateral_velocity(0.5) < -0.2);
                    assert!(s.lanes.right_lane.is_some());
                }
            }
        }
    }

    #[test]
    fn lateral_profile_is_continuous_at_crossing() {
        let p = SamParams::new(3.8, 4.0, 0.1, 0.0, 30.0).unwrap();
        let (y, vy, ay) = pre_crossing(&p, 0.0);
        let after = state_at(&p, 0.0);
        assert!(y.abs() < 1e-12);
        assert!((vy - after.vy).abs() < 1e-12);
        assert!((ay - after.ay).abs() < 1e-12);
    }

    #[test]
    fn noiseless_future_recovers_hidden_params() {
        let out = synth_generate(40, 11, &SynthConfig::default()).unwrap();
        for s in out.scenarios.iter().filter(|s| s.label.is_lane_change()) {
            let truth = s.hidden_params.unwrap();
            let fit = fit_sam(&s.future, s.insertion.vx, &FitConfig::default()).unwrap();
            assert!((fit.params.d - truth.d).abs() < 1e-4, "{}: {} vs {}", s.id, fit.params.d, truth.d);
            assert!(((fit.params.w - truth.w) / truth.w).abs() < 1e-4);
            assert!((fit.params.v0 - truth.v0).abs() < 1e-4 * truth.v0.abs().max(1.0));
            assert!((fit.params.dvx - truth.dvx).abs() < 1e-4 * truth.dvx.abs().max(1.0));
        }
    }

    #[test]
    fn zero_scenarios() {
        let out = synth_generate(0, 1, &SynthConfig::default()).unwrap();
        assert!(out.scenarios.is_empty() && out.tracks.is_empty());
    }
}

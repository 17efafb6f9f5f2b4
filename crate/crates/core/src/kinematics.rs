//! Sinusoidal acceleration lane-change kinematics.
//!
//! Two lateral models live here:
//!
//! * the classical model, which covers a complete maneuver from initiation to
//!   completion and has zero lateral velocity and acceleration at both ends;
//! * the post-boundary model, which starts at the lane-boundary crossing
//!   (`t = 0`) and is parameterised by `(W, D, v0)`.
//!
//! Longitudinal motion follows a linear velocity ramp of `dvx` over `D`.
//!
//! All trajectories are expressed in the insertion frame: origin at the
//! vehicle position at the boundary crossing, `x` along the lane direction and
//! `y` positive to the left. A left lane change has `W > 0`, a right one
//! `W < 0`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shortest admissible maneuver duration, seconds.
pub const D_MIN: f64 = 0.5;

/// Tolerance on sample spacing inside a [`Trajectory`].
const DT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("t = {t} s lies outside the maneuver window [{start}, {end}]")]
    OutOfManeuverWindow { t: f64, start: f64, end: f64 },
    #[error("invalid sampling step dt = {dt} for horizon {horizon}")]
    InvalidStep { dt: f64, horizon: f64 },
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error("sample {index} breaks uniform spacing (dt = {dt})")]
    IrregularSampling { index: usize, dt: f64 },
}

/// Parameters of the post-boundary lane-change model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamParams {
    /// Lateral displacement parameter, meters (signed, left positive).
    #[serde(rename = "W")]
    pub w: f64,
    /// Maneuver duration, seconds.
    #[serde(rename = "D")]
    pub d: f64,
    /// Lateral velocity parameter, m/s.
    pub v0: f64,
    /// Longitudinal velocity change over `d`, m/s.
    pub dvx: f64,
    /// Longitudinal speed at the insertion point, m/s.
    pub vx0: f64,
}

impl SamParams {
    pub fn new(w: f64, d: f64, v0: f64, dvx: f64, vx0: f64) -> Result<Self, KinematicsError> {
        let p = Self { w, d, v0, dvx, vx0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if ![self.w, self.d, self.v0, self.dvx, self.vx0].iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::InvalidParams("all fields must be finite"));
        }
        if self.d < D_MIN {
            return Err(KinematicsError::InvalidParams("duration below D_MIN"));
        }
        Ok(())
    }

    /// Same parameters with the duration raised to at least [`D_MIN`].
    pub fn clamped(mut self) -> Self {
        if self.d < D_MIN {
            self.d = D_MIN;
        }
        self
    }

    /// Lateral position reached at the end of the maneuver, `y(D)`.
    pub fn end_offset(&self) -> f64 {
        modified_sam_lateral(self, self.d).y
    }
}

/// Parameters of the classical full-maneuver model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalSamParams {
    pub y0: f64,
    pub w: f64,
    pub d: f64,
    pub t_start: f64,
}

impl ClassicalSamParams {
    pub fn new(y0: f64, w: f64, d: f64, t_start: f64) -> Result<Self, KinematicsError> {
        if ![y0, w, d, t_start].iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::InvalidParams("all fields must be finite"));
        }
        if d <= 0.0 {
            return Err(KinematicsError::InvalidParams("duration must be positive"));
        }
        Ok(Self { y0, w, d, t_start })
    }
}

/// Lateral position and its first two time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LateralState {
    pub y: f64,
    pub vy: f64,
    pub ay: f64,
}

/// Longitudinal position (relative to the insertion point) and speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongitudinalState {
    pub x: f64,
    pub vx: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ay: f64,
}

/// Post-boundary lateral model,
/// `y(t) = v0 t + (W - 2 v0 D)/pi * sin(pi t / (2D))`, with analytic derivatives.
///
/// The formula is evaluated as written for any `t`; the post-maneuver hold is
/// applied by [`state_at`] and [`sample_trajectory`], not here.
pub fn modified_sam_lateral(p: &SamParams, t: f64) -> LateralState {
    let omega = PI / (2.0 * p.d);
    let amp = (p.w - 2.0 * p.v0 * p.d) / PI;
    let (s, c) = (omega * t).sin_cos();
    LateralState {
        y: p.v0 * t + amp * s,
        vy: p.v0 + amp * omega * c,
        ay: -amp * omega * omega * s,
    }
}

/// Classical full-maneuver lateral model over `[t_start, t_start + D]`.
pub fn classical_sam_lateral(p: &ClassicalSamParams, t: f64) -> Result<LateralState, KinematicsError> {
    let end = p.t_start + p.d;
    if !(t >= p.t_start && t <= end) {
        return Err(KinematicsError::OutOfManeuverWindow { t, start: p.t_start, end });
    }
    let tau = t - p.t_start;
    let omega = 2.0 * PI / p.d;
    let (s, c) = (omega * tau).sin_cos();
    let rate = p.w / p.d;
    Ok(LateralState {
        y: p.y0 - p.w / (2.0 * PI) * s + rate * tau,
        vy: rate * (1.0 - c),
        ay: rate * omega * s,
    })
}

/// Linear longitudinal velocity ramp and its integral, with `x(0) = 0`.
pub fn longitudinal_profile(p: &SamParams, t: f64) -> LongitudinalState {
    let accel = p.dvx / p.d;
    LongitudinalState {
        x: p.vx0 * t + 0.5 * accel * t * t,
        vx: p.vx0 + accel * t,
    }
}

/// Lateral state with the post-maneuver extension: past `D` the vehicle keeps
/// the lateral velocity reached at `D` with zero acceleration.
pub fn lateral_with_hold(p: &SamParams, t: f64) -> LateralState {
    if t <= p.d {
        return modified_sam_lateral(p, t);
    }
    let end = modified_sam_lateral(p, p.d);
    LateralState {
        y: end.y + end.vy * (t - p.d),
        vy: end.vy,
        ay: 0.0,
    }
}

/// Full kinematic state at time `t` after insertion.
pub fn state_at(p: &SamParams, t: f64) -> KinematicState {
    let lat = lateral_with_hold(p, t);
    let lon = longitudinal_profile(p, t);
    KinematicState { t, x: lon.x, y: lat.y, vx: lon.vx, vy: lat.vy, ay: lat.ay }
}

/// Uniformly sample `p` at `0, dt, 2dt, ...` up to the last multiple of `dt`
/// not exceeding `horizon`.
pub fn sample_trajectory(p: &SamParams, horizon: f64, dt: f64) -> Result<Trajectory, KinematicsError> {
    if !(dt > 0.0) || !(horizon > 0.0) || dt > horizon || !dt.is_finite() || !horizon.is_finite() {
        return Err(KinematicsError::InvalidStep { dt, horizon });
    }
    // 1e-9 absorbs representation error in horizon/dt (e.g. 4 / 0.04).
    let steps = (horizon / dt + 1e-9).floor() as usize;
    let samples = (0..=steps).map(|k| state_at(p, k as f64 * dt)).collect();
    Ok(Trajectory { samples, dt })
}

/// Uniformly sampled sequence of kinematic states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<KinematicState>", into = "Vec<KinematicState>")]
pub struct Trajectory {
    samples: Vec<KinematicState>,
    dt: f64,
}

impl Trajectory {
    /// Builds a trajectory, checking non-emptiness and uniform spacing `dt`.
    pub fn new(samples: Vec<KinematicState>, dt: f64) -> Result<Self, KinematicsError> {
        if samples.is_empty() {
            return Err(KinematicsError::EmptyTrajectory);
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(KinematicsError::InvalidStep { dt, horizon: f64::NAN });
        }
        for (i, w) in samples.windows(2).enumerate() {
            if ((w[1].t - w[0].t) - dt).abs() > DT_TOLERANCE {
                return Err(KinematicsError::IrregularSampling { index: i + 1, dt });
            }
        }
        Ok(Self { samples, dt })
    }

    pub fn samples(&self) -> &[KinematicState] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples[self.samples.len() - 1].t - self.samples[0].t
    }

    /// Linear interpolation of the state at time `t`; `None` outside the
    /// sampled span.
    pub fn interpolate(&self, t: f64) -> Option<KinematicState> {
        let first = self.samples[0].t;
        let last = self.samples[self.samples.len() - 1].t;
        if t < first - DT_TOLERANCE || t > last + DT_TOLERANCE {
            return None;
        }
        let pos = ((t - first) / self.dt).clamp(0.0, (self.samples.len() - 1) as f64);
        let i = pos.floor() as usize;
        let a = &self.samples[i];
        if (a.t - t).abs() <= DT_TOLERANCE || i + 1 == self.samples.len() {
            return Some(KinematicState { t, ..*a });
        }
        let b = &self.samples[i + 1];
        let f = (t - a.t) / (b.t - a.t);
        let lerp = |u: f64, v: f64| u + (v - u) * f;
        Some(KinematicState {
            t,
            x: lerp(a.x, b.x),
            y: lerp(a.y, b.y),
            vx: lerp(a.vx, b.vx),
            vy: lerp(a.vy, b.vy),
            ay: lerp(a.ay, b.ay),
        })
    }
}

impl TryFrom<Vec<KinematicState>> for Trajectory {
    type Error = KinematicsError;

    /// Infers `dt` from the first two samples; a single sample gets `dt = 1`.
    fn try_from(samples: Vec<KinematicState>) -> Result<Self, Self::Error> {
        let dt = match samples.as_slice() {
            [a, b, ..] => b.t - a.t,
            _ => 1.0,
        };
        Trajectory::new(samples, dt)
    }
}

impl From<Trajectory> for Vec<KinematicState> {
    fn from(t: Trajectory) -> Self {
        t.samples
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: f64, d: f64, v0: f64) -> SamParams {
        SamParams::new(w, d, v0, 0.0, 30.0).unwrap()
    }

    #[test]
    fn modified_sam_start_is_origin() {
        let s = modified_sam_lateral(&params(3.75, 3.0, 0.0), 0.0);
        assert_eq!(s.y, 0.0);
        assert_eq!(s.ay, 0.0);
    }

    #[test]
    fn modified_sam_end_without_v0_is_w_over_pi() {
        let s = modified_sam_lateral(&params(3.75, 3.0, 0.0), 3.0);
        assert!((s.y - 3.75 / PI).abs() < 1e-12);
        assert!((s.y - 1.193662).abs() < 1e-6);
    }

    #[test]
    fn modified_sam_with_v0() {
        // 1.5 + 0.75/pi, evaluated independently to 1.7387324146...
        let s = modified_sam_lateral(&params(3.75, 3.0, 0.5), 3.0);
        assert!((s.y - 1.738_732_414_637_843).abs() < 1e-12);
    }

    #[test]
    fn classical_sam_examples() {
        let p = ClassicalSamParams::new(0.0, 3.75, 4.0, 0.0).unwrap();
        let end = classical_sam_lateral(&p, 4.0).unwrap();
        assert!((end.y - 3.75).abs() < 1e-12);
        assert!(end.vy.abs() < 1e-12 && end.ay.abs() < 1e-12);
        let mid = classical_sam_lateral(&p, 2.0).unwrap();
        assert!((mid.y - 1.875).abs() < 1e-12);
        // 0.9375 - 3.75/(2 pi) = 0.3406691...
        let q = classical_sam_lateral(&p, 1.0).unwrap();
        assert!((q.y - 0.340_668_963_405_392_5).abs() < 1e-12);
    }

    #[test]
    fn classical_sam_rejects_out_of_window() {
        let p = ClassicalSamParams::new(0.0, 3.75, 4.0, 1.0).unwrap();
        assert!(matches!(
            classical_sam_lateral(&p, 0.5),
            Err(KinematicsError::OutOfManeuverWindow { .. })
        ));
        assert!(classical_sam_lateral(&p, 5.0001).is_err());
    }

    #[test]
    fn longitudinal_examples() {
        let p = SamParams::new(0.0, 4.0, 0.0, 2.0, 30.0).unwrap();
        assert_eq!(longitudinal_profile(&p, 4.0).vx, 32.0);
        assert_eq!(longitudinal_profile(&p, 2.0).vx, 31.0);
        assert_eq!(longitudinal_profile(&p, 4.0).x, 124.0);
    }

    #[test]
    fn sampling_counts_and_hold() {
        let p = params(3.75, 3.0, 0.0);
        let tr = sample_trajectory(&p, 4.0, 1.0).unwrap();
        let ts: Vec<f64> = tr.samples().iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![0.0, 1.0, 2.0, 3.0, 4.0]);

        let tr = sample_trajectory(&p, 4.0, 0.04).unwrap();
        assert_eq!(tr.len(), 101);
        assert!((tr.samples()[75].y - 3.75 / PI).abs() < 1e-12);

        let p = params(3.75, 3.0, 0.5);
        let tr = sample_trajectory(&p, 4.0, 0.04).unwrap();
        let at3 = tr.samples()[75];
        let at4 = tr.samples()[100];
        // vy(D) = v0 exactly, so the hold extrapolates at 0.5 m/s.
        assert!((at3.vy - 0.5).abs() < 1e-12);
        assert!((at4.y - (at3.y + 0.5 * 1.0)).abs() < 1e-12);
        assert_eq!(at4.ay, 0.0);
    }

    #[test]
    fn sampling_rejects_bad_step() {
        let p = params(3.75, 3.0, 0.0);
        assert!(matches!(sample_trajectory(&p, 4.0, 0.0), Err(KinematicsError::InvalidStep { .. })));
        assert!(sample_trajectory(&p, 4.0, 5.0).is_err());
        assert!(sample_trajectory(&p, 4.0, -1.0).is_err());
    }

    #[test]
    fn params_reject_short_or_nonfinite() {
        assert!(SamParams::new(3.75, 0.4, 0.0, 0.0, 30.0).is_err());
        assert!(SamParams::new(3.75, D_MIN, 0.0, 0.0, 30.0).is_ok());
        assert!(SamParams::new(f64::NAN, 3.0, 0.0, 0.0, 30.0).is_err());
        assert!(ClassicalSamParams::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn trajectory_checks_spacing() {
        let mk = |t: f64| KinematicState { t, x: 0.0, y: 0.0, vx: 0.0, vy: 0.0, ay: 0.0 };
        assert!(Trajectory::new(vec![], 1.0).is_err());
        assert!(Trajectory::new(vec![mk(0.0), mk(1.0), mk(2.5)], 1.0).is_err());
        let tr = Trajectory::new(vec![mk(0.0), mk(1.0), mk(2.0)], 1.0).unwrap();
        assert_eq!(tr.interpolate(1.5).unwrap().t, 1.5);
        assert!(tr.interpolate(2.5).is_none());
    }

    #[test]
    fn trajectory_serde_infers_dt() {
        let p = params(3.75, 3.0, 0.2);
        let tr = sample_trajectory(&p, 1.0, 0.04).unwrap();
        let text = serde_json::to_string(&tr).unwrap();
        let back: Trajectory = serde_json::from_str(&text).unwrap();
        assert_eq!(back.samples(), tr.samples());
        assert!((back.dt() - 0.04).abs() < 1e-12);
    }
}

//! Least-squares recovery of lane-change parameters from an observed future
//! trajectory.
//!
//! For a fixed duration `D` the lateral model is linear in `(W, v0)`:
//!
//! ```text
//! y(t) = W * sin(pi t' / 2D) / pi  +  v0 * (t - (2D/pi) sin(pi t' / 2D)),   t' = min(t, D)
//! ```
//!
//! (the `t > D` branch is the constant-velocity hold used by the trajectory
//! sampler). The linear pair is solved exactly by a two-column QR
//! factorisation and the remaining one-dimensional problem in `D` is searched
//! with a coarse grid followed by golden-section refinement. The longitudinal
//! velocity change is then a one-column linear fit on the velocity samples.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{KinematicsError, SamParams, Trajectory, D_MIN};

/// Golden-section iterations allowed before giving up.
pub const MAX_REFINE_ITERATIONS: usize = 200;

/// Condition number above which the lateral design matrix is rejected.
pub const MAX_CONDITION: f64 = 1e12;

const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("lateral design matrix is rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },
    #[error("need at least {MIN_POINTS} samples, got {0}")]
    TooFewPoints(usize),
    #[error("trajectory spans {0} s, need at least 1 s")]
    ShortSpan(f64),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub d_tolerance: f64,
    pub grid_steps: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { d_min: 0.5, d_max: 10.0, d_tolerance: 1e-4, grid_steps: 96 }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.d_min.is_finite() && self.d_max.is_finite() && self.d_tolerance.is_finite()) {
            return Err(FitError::InvalidConfig("bounds must be finite"));
        }
        if self.d_min < D_MIN {
            return Err(FitError::InvalidConfig("d_min below D_MIN"));
        }
        if self.d_max < self.d_min {
            return Err(FitError::InvalidConfig("d_max below d_min"));
        }
        if !(self.d_tolerance > 0.0) {
            return Err(FitError::InvalidConfig("d_tolerance must be positive"));
        }
        if self.grid_steps == 0 {
            return Err(FitError::InvalidConfig("grid_steps must be at least 1"));
        }
        Ok(())
    }
}

/// Solution of the linear sub-problem at a fixed duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LateralFit {
    pub w: f64,
    pub v0: f64,
    pub sse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: SamParams,
    pub lateral_sse: f64,
    pub longitudinal_sse: f64,
    pub n_points: usize,
    pub converged: bool,
}

/// Basis functions multiplying `W` and `v0` at time `t` for duration `d`.
pub fn lateral_basis(t: f64, d: f64) -> (f64, f64) {
    let s = (PI * t.min(d) / (2.0 * d)).sin();
    (s / PI, t - 2.0 * d / PI * s)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Condition number of the upper-triangular `[[r11, r12], [0, r22]]`.
fn condition_2x2(r11: f64, r12: f64, r22: f64) -> f64 {
    let s = r11 * r11 + r12 * r12 + r22 * r22;
    let p = (r11 * r22).abs();
    if p == 0.0 {
        return f64::INFINITY;
    }
    let disc = (s * s - 4.0 * p * p).max(0.0).sqrt();
    let big = 0.5 * (s + disc);
    let small = 2.0 * p * p / (s + disc);
    (big / small).sqrt()
}

/// Exact linear least squares for `(W, v0)` at fixed `d`.
pub fn fit_lateral_given_d(traj: &Trajectory, d: f64) -> Result<LateralFit, FitError> {
    let samples = traj.samples();
    if samples.len() < MIN_POINTS {
        return Err(FitError::TooFewPoints(samples.len()));
    }
    if !(d.is_finite() && d > 0.0) {
        return Err(FitError::InvalidConfig("duration must be positive"));
    }
    let n = samples.len();
    let mut a1 = Vec::with_capacity(n);
    let mut a2 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for s in samples {
        if !(s.t.is_finite() && s.y.is_finite()) {
            return Err(FitError::NonFinite);
        }
        let (b1, b2) = lateral_basis(s.t, d);
        a1.push(b1);
        a2.push(b2);
        y.push(s.y);
    }

    // Modified Gram-Schmidt with one re-orthogonalisation pass.
    let r11 = dot(&a1, &a1).sqrt();
    if r11 == 0.0 {
        return Err(FitError::RankDeficient { condition: f64::INFINITY });
    }
    let q1: Vec<f64> = a1.iter().map(|v| v / r11).collect();
    let mut r12 = dot(&q1, &a2);
    let mut u: Vec<f64> = a2.iter().zip(&q1).map(|(a, q)| a - r12 * q).collect();
    let c = dot(&q1, &u);
    u.iter_mut().zip(&q1).for_each(|(v, q)| *v -= c * q);
    r12 += c;
    let r22 = dot(&u, &u).sqrt();

    let condition = condition_2x2(r11, r12, r22);
    if !(condition <= MAX_CONDITION) {
        return Err(FitError::RankDeficient { condition });
    }
    let q2: Vec<f64> = u.iter().map(|v| v / r22).collect();
    let v0 = dot(&q2, &y) / r22;
    let w = (dot(&q1, &y) - r12 * v0) / r11;

    let sse = a1
        .iter()
        .zip(&a2)
        .zip(&y)
        .map(|((b1, b2), yi)| {
            let r = yi - w * b1 - v0 * b2;
            r * r
        })
        .sum();
    Ok(LateralFit { w, v0, sse })
}

fn check_input(traj: &Trajectory, vx0: f64, cfg: &FitConfig) -> Result<(), FitError> {
    cfg.validate()?;
    if !vx0.is_finite() {
        return Err(FitError::NonFinite);
    }
    if traj.len() < MIN_POINTS {
        return Err(FitError::TooFewPoints(traj.len()));
    }
    let span = traj.duration();
    if span < 1.0 - 1e-9 {
        return Err(FitError::ShortSpan(span));
    }
    Ok(())
}

/// Tracks the best evaluated duration; ties go to the smaller `D`.
struct Search<'a> {
    traj: &'a Trajectory,
    best_d: f64,
    best: LateralFit,
}

impl<'a> Search<'a> {
    fn eval(&mut self, d: f64) -> Result<f64, FitError> {
        let fit = fit_lateral_given_d(self.traj, d)?;
        if fit.sse < self.best.sse || (fit.sse == self.best.sse && d < self.best_d) {
            self.best = fit;
            self.best_d = d;
        }
        Ok(fit.sse)
    }
}

/// Abscissa of the vertex of the parabola through three points, if it is a
/// minimum.
fn parabola_vertex((x0, f0): (f64, f64), (x1, f1): (f64, f64), (x2, f2): (f64, f64)) -> Option<f64> {
    let num = (x1 - x0).powi(2) * (f1 - f2) - (x1 - x2).powi(2) * (f1 - f0);
    let den = (x1 - x0) * (f1 - f2) - (x1 - x2) * (f1 - f0);
    if den == 0.0 {
        return None;
    }
    let curvature = f0 / ((x0 - x1) * (x0 - x2)) + f1 / ((x1 - x0) * (x1 - x2)) + f2 / ((x2 - x0) * (x2 - x1));
    if !(curvature > 0.0) {
        return None;
    }
    let v = x1 - 0.5 * num / den;
    v.is_finite().then_some(v)
}

fn grid_nodes(cfg: &FitConfig) -> Vec<f64> {
    if cfg.grid_steps == 1 || cfg.d_max == cfg.d_min {
        return vec![cfg.d_min];
    }
    let step = (cfg.d_max - cfg.d_min) / (cfg.grid_steps - 1) as f64;
    (0..cfg.grid_steps)
        .map(|i| if i + 1 == cfg.grid_steps { cfg.d_max } else { cfg.d_min + i as f64 * step })
        .collect()
}

/// Fits `(W, D, v0, dvx)` to `traj`, a future trajectory in the insertion
/// frame whose speed at `t = 0` is `vx0`.
///
/// The search over `D` evaluates `cfg.grid_steps` evenly spaced durations,
/// then refines around the best grid node by golden section down to
/// `cfg.d_tolerance`. Each golden step also probes the vertex of the parabola
/// through the current bracket; probes only ever replace the incumbent when
/// they lower the residual, so the search sequence for a smaller tolerance
/// extends the one for a larger tolerance.
///
/// If refinement needs more than [`MAX_REFINE_ITERATIONS`] steps the best
/// duration found so far is returned with `converged = false`.
pub fn fit_sam(traj: &Trajectory, vx0: f64, cfg: &FitConfig) -> Result<FitResult, FitError> {
    check_input(traj, vx0, cfg)?;
    let nodes = grid_nodes(cfg);
    let mut search = Search {
        traj,
        best_d: f64::INFINITY,
        best: LateralFit { w: 0.0, v0: 0.0, sse: f64::INFINITY },
    };
    let mut values = Vec::with_capacity(nodes.len());
    for &d in &nodes {
        values.push(search.eval(d)?);
    }
    let mut best_idx = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best_idx] {
            best_idx = i;
        }
    }

    let mut converged = true;
    if nodes.len() > 1 {
        let (mut a, mut fa) = if best_idx > 0 {
            (nodes[best_idx - 1], values[best_idx - 1])
        } else {
            (nodes[0], values[0])
        };
        let (mut b, mut fb) = if best_idx + 1 < nodes.len() {
            (nodes[best_idx + 1], values[best_idx + 1])
        } else {
            (nodes[nodes.len() - 1], values[nodes.len() - 1])
        };
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = b - inv_phi * (b - a);
        let mut x2 = a + inv_phi * (b - a);
        let mut f1 = search.eval(x1)?;
        let mut f2 = search.eval(x2)?;
        let mut iterations = 0;
        while b - a > cfg.d_tolerance {
            if iterations >= MAX_REFINE_ITERATIONS {
                converged = false;
                break;
            }
            iterations += 1;

            let probe = if f1 <= f2 {
                parabola_vertex((a, fa), (x1, f1), (x2, f2))
            } else {
                parabola_vertex((x1, f1), (x2, f2), (b, fb))
            };
            if let Some(d) = probe.filter(|d| *d > a && *d < b) {
                search.eval(d)?;
            }

            if f1 <= f2 {
                b = x2;
                fb = f2;
                x2 = x1;
                f2 = f1;
                x1 = b - inv_phi * (b - a);
                f1 = search.eval(x1)?;
            } else {
                a = x1;
                fa = f1;
                x1 = x2;
                f1 = f2;
                x2 = a + inv_phi * (b - a);
                f2 = search.eval(x2)?;
            }
        }
    }

    finish(traj, vx0, search.best_d, search.best, converged)
}

/// Exhaustive scan over `D` at spacing `cfg.d_tolerance`. Slow; meant as a
/// test oracle for [`fit_sam`].
pub fn fit_oracle(traj: &Trajectory, vx0: f64, cfg: &FitConfig) -> Result<FitResult, FitError> {
    check_input(traj, vx0, cfg)?;
    let count = ((cfg.d_max - cfg.d_min) / cfg.d_tolerance + 1e-9).floor() as usize;
    let mut best_d = cfg.d_min;
    let mut best = fit_lateral_given_d(traj, best_d)?;
    for k in 1..=count {
        let d = cfg.d_min + k as f64 * cfg.d_tolerance;
        let fit = fit_lateral_given_d(traj, d)?;
        if fit.sse < best.sse {
            best = fit;
            best_d = d;
        }
    }
    finish(traj, vx0, best_d, best, true)
}

fn finish(traj: &Trajectory, vx0: f64, d: f64, lateral: LateralFit, converged: bool) -> Result<FitResult, FitError> {
    let samples = traj.samples();
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        if !(s.vx.is_finite() && s.x.is_finite()) {
            return Err(FitError::NonFinite);
        }
        let basis = s.t / d;
        num += (s.vx - vx0) * basis;
        den += basis * basis;
    }
    if den == 0.0 {
        return Err(FitError::RankDeficient { condition: f64::INFINITY });
    }
    let dvx = num / den;
    let params = SamParams::new(lateral.w, d, lateral.v0, dvx, vx0)?;
    let longitudinal_sse = samples
        .iter()
        .map(|s| {
            let r = s.x - (vx0 * s.t + dvx * s.t * s.t / (2.0 * d));
            r * r
        })
        .sum();
    Ok(FitResult {
        params,
        lateral_sse: lateral.sse,
        longitudinal_sse,
        n_points: samples.len(),
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{sample_trajectory, KinematicState};

    fn synthetic(w: f64, d: f64, v0: f64, dvx: f64, vx0: f64) -> Trajectory {
        let p = SamParams::new(w, d, v0, dvx, vx0).unwrap();
        sample_trajectory(&p, 4.0, 0.04).unwrap()
    }

    fn zero_traj() -> Trajectory {
        let samples = (0..=100)
            .map(|k| {
                let t = k as f64 * 0.04;
                KinematicState { t, x: 30.0 * t, y: 0.0, vx: 30.0, vy: 0.0, ay: 0.0 }
            })
            .collect();
        Trajectory::new(samples, 0.04).unwrap()
    }

    #[test]
    fn linear_subfit_recovers_exact_pair() {
        let tr = synthetic(3.8, 4.0, 0.3, 0.0, 30.0);
        let fit = fit_lateral_given_d(&tr, 4.0).unwrap();
        assert!((fit.w - 3.8).abs() < 1e-9);
        assert!((fit.v0 - 0.3).abs() < 1e-9);
        assert!(fit.sse <= 1e-16);
    }

    #[test]
    fn linear_subfit_zero_trajectory() {
        let fit = fit_lateral_given_d(&zero_traj(), 3.0).unwrap();
        assert_eq!((fit.w, fit.v0, fit.sse), (0.0, 0.0, 0.0));
    }

    #[test]
    fn wrong_duration_costs_more() {
        let tr = synthetic(3.8, 4.0, 0.3, 0.0, 30.0);
        let right = fit_lateral_given_d(&tr, 4.0).unwrap().sse;
        let wrong = fit_lateral_given_d(&tr, 2.0).unwrap().sse;
        assert!(wrong > right);
    }

    #[test]
    fn degenerate_sampling_is_rank_deficient() {
        let samples = (0..5)
            .map(|k| KinematicState { t: k as f64 * 1e-12, x: 0.0, y: 0.0, vx: 0.0, vy: 0.0, ay: 0.0 })
            .collect();
        let tr = Trajectory::new(samples, 1e-12).unwrap();
        assert!(matches!(fit_lateral_given_d(&tr, 4.0), Err(FitError::RankDeficient { .. })));
    }

    #[test]
    fn residuals_orthogonal_to_basis() {
        let mut samples = synthetic(-3.6, 5.0, -0.2, 0.0, 25.0).samples().to_vec();
        for (i, s) in samples.iter_mut().enumerate() {
            s.y += 0.03 * ((i * 7919) % 13) as f64 / 13.0 - 0.015;
        }
        let tr = Trajectory::new(samples, 0.04).unwrap();
        let d = 4.3;
        let fit = fit_lateral_given_d(&tr, d).unwrap();
        let (mut g1, mut g2, mut n1, mut n2, mut ny) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for s in tr.samples() {
            let (b1, b2) = lateral_basis(s.t, d);
            let r = s.y - fit.w * b1 - fit.v0 * b2;
            g1 += r * b1;
            g2 += r * b2;
            n1 += b1 * b1;
            n2 += b2 * b2;
            ny += s.y * s.y;
        }
        assert!(g1.abs() <= 1e-9 * (n1 * ny).sqrt());
        assert!(g2.abs() <= 1e-9 * (n2 * ny).sqrt());
    }

    #[test]
    fn fit_sam_recovers_parameters() {
        let tr = synthetic(3.75, 4.2, 0.4, 1.5, 30.0);
        let r = fit_sam(&tr, 30.0, &FitConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.params.d - 4.2).abs() < 1e-4, "D = {}", r.params.d);
        assert!(((r.params.w - 3.75) / 3.75).abs() < 1e-6, "W = {}", r.params.w);
        assert!(((r.params.v0 - 0.4) / 0.4).abs() < 1e-6, "v0 = {}", r.params.v0);
        assert!(((r.params.dvx - 1.5) / 1.5).abs() < 1e-6, "dvx = {}", r.params.dvx);
        assert_eq!(r.n_points, 101);
    }

    #[test]
    fn fit_sam_zero_motion() {
        let r = fit_sam(&zero_traj(), 30.0, &FitConfig::default()).unwrap();
        assert_eq!((r.params.w, r.params.v0, r.params.dvx), (0.0, 0.0, 0.0));
        assert_eq!(r.lateral_sse, 0.0);
        // Flat objective: the tie rule keeps the shortest duration.
        assert_eq!(r.params.d, 0.5);
    }

    #[test]
    fn oracle_single_candidate_matches_subfit() {
        let tr = synthetic(3.75, 4.2, 0.4, 1.5, 30.0);
        let cfg = FitConfig { d_min: 4.2, d_max: 4.2, ..FitConfig::default() };
        let r = fit_oracle(&tr, 30.0, &cfg).unwrap();
        let direct = fit_lateral_given_d(&tr, 4.2).unwrap();
        assert_eq!(r.params.d, 4.2);
        assert_eq!((r.params.w, r.params.v0, r.lateral_sse), (direct.w, direct.v0, direct.sse));
        assert_eq!(fit_oracle(&zero_traj(), 30.0, &FitConfig::default()).unwrap().lateral_sse, 0.0);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let tr = synthetic(3.75, 4.2, 0.4, 1.5, 30.0);
        let cfg = FitConfig { d_tolerance: 1e-300, ..FitConfig::default() };
        let r = fit_sam(&tr, 30.0, &cfg).unwrap();
        assert!(!r.converged);
        assert!((r.params.d - 4.2).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_input() {
        let tr = synthetic(3.75, 4.2, 0.4, 1.5, 30.0);
        assert!(fit_sam(&tr, f64::NAN, &FitConfig::default()).is_err());
        let bad = FitConfig { d_min: 0.1, ..FitConfig::default() };
        assert!(matches!(fit_sam(&tr, 30.0, &bad), Err(FitError::InvalidConfig(_))));
        let p = SamParams::new(3.75, 4.2, 0.4, 1.5, 30.0).unwrap();
        let short = sample_trajectory(&p, 0.5, 0.04).unwrap();
        assert!(matches!(fit_sam(&short, 30.0, &FitConfig::default()), Err(FitError::ShortSpan(_))));
    }

    #[test]
    fn deterministic() {
        let tr = synthetic(-3.9, 3.3, -0.1, -0.7, 28.0);
        let a = fit_sam(&tr, 28.0, &FitConfig::default()).unwrap();
        let b = fit_sam(&tr, 28.0, &FitConfig::default()).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}

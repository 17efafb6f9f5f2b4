//! Scoring of model answers against scenario ground truth.
//!
//! Intention accuracy is reported per ground-truth class and overall. Position
//! errors are root-mean-square errors at fixed horizons after the insertion
//! point, lateral on `y` and longitudinal on `x`, taken over every scenario
//! whose answer parsed. The same errors restricted to correctly classified
//! scenarios are reported alongside.
//!
//! Parameter answers are reconstructed with the maneuver model, using the
//! insertion speed as initial longitudinal speed; coordinate answers are used
//! as given.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{parse, HybridTrajectory, Intention, ModelOutput, COORD_POINTS};
use crate::kinematics::{sample_trajectory, state_at, KinematicState, KinematicsError, Trajectory};
use crate::scenario::Scenario;
use crate::tracks::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Spacing of evaluation horizons, seconds.
    pub horizon_step: f64,
    /// Horizons are `horizon_step * (1..=horizon_count)`.
    pub horizon_count: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { horizon_step: 1.0, horizon_count: 4 }
    }
}

impl EvalConfig {
    pub fn horizons(&self) -> Vec<f64> {
        (1..=self.horizon_count).map(|k| k as f64 * self.horizon_step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("invalid evaluation configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Trajectory implied by an answer, sampled at the evaluation horizons.
///
/// Coordinate answers always map to `t = 1, 2, 3, 4` s, with velocities from
/// finite differences starting at the insertion point.
pub fn reconstruct(pred: &ModelOutput, insertion: &VehicleState, cfg: &EvalConfig) -> Result<Trajectory, EvalError> {
    if !(cfg.horizon_step > 0.0) || cfg.horizon_count == 0 {
        return Err(EvalError::InvalidConfig("horizons must be positive"));
    }
    match pred.trajectory {
        HybridTrajectory::Params(payload) => {
            let mut p = payload.with_speed(insertion.vx).or_else(|_| {
                let mut clamped = payload;
                clamped.d = clamped.d.max(crate::kinematics::D_MIN);
                clamped.with_speed(insertion.vx)
            })?;
            p = p.clamped();
            let samples = cfg.horizons().into_iter().map(|t| state_at(&p, t)).collect();
            Ok(Trajectory::new(samples, cfg.horizon_step)?)
        }
        HybridTrajectory::Coords(points) => {
            let mut prev = (0.0, 0.0, 0.0);
            let mut prev_vy = insertion.vy;
            let mut samples = Vec::with_capacity(COORD_POINTS);
            for (k, &(x, y)) in points.iter().enumerate() {
                let t = (k + 1) as f64;
                let dt = t - prev.0;
                let vy = (y - prev.2) / dt;
                samples.push(KinematicState { t, x, y, vx: (x - prev.1) / dt, vy, ay: (vy - prev_vy) / dt });
                prev = (t, x, y);
                prev_vy = vy;
            }
            Ok(Trajectory::new(samples, 1.0)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub t: f64,
    /// Scenarios contributing to the all-parsed RMSE.
    pub n: usize,
    pub lateral_rmse: Option<f64>,
    pub longitudinal_rmse: Option<f64>,
    /// Scenarios contributing to the correctly-classified RMSE.
    pub n_correct: usize,
    pub lateral_rmse_correct: Option<f64>,
    pub longitudinal_rmse_correct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub intention: Intention,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub parse_failures: usize,
    pub horizons: Vec<HorizonMetrics>,
    /// RMSE pooled over every horizon.
    pub lateral_rmse_pooled: Option<f64>,
    pub longitudinal_rmse_pooled: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub total: usize,
    pub overall_accuracy: f64,
    pub parse_failure_count: usize,
    pub payload_scalars_total: usize,
    /// Prediction ids with no matching scenario.
    pub unmatched_predictions: Vec<String>,
}

impl MetricsReport {
    pub fn class(&self, intention: Intention) -> &ClassMetrics {
        self.per_class.iter().find(|c| c.intention == intention).expect("all classes present")
    }
}

/// A reconstructed answer ready for scoring.
#[derive(Debug, Clone)]
pub struct ScoredPrediction {
    pub intention: Intention,
    pub trajectory: Trajectory,
    pub payload_size: usize,
}

#[derive(Default, Clone, Copy)]
struct SquareSum {
    lat: f64,
    lon: f64,
    n: usize,
}

impl SquareSum {
    fn add(&mut self, dx: f64, dy: f64) {
        self.lat += dy * dy;
        self.lon += dx * dx;
        self.n += 1;
    }

    fn rmse(&self) -> (Option<f64>, Option<f64>) {
        if self.n == 0 {
            return (None, None);
        }
        let n = self.n as f64;
        (Some((self.lat / n).sqrt()), Some((self.lon / n).sqrt()))
    }
}

/// Scores reconstructed predictions. `None` marks an answer that failed to
/// parse or was missing. Scenarios are visited in id order, so the result
/// does not depend on input order.
pub fn score_predictions(
    scenarios: &[Scenario],
    predictions: &BTreeMap<String, Option<ScoredPrediction>>,
    cfg: &EvalConfig,
) -> MetricsReport {
    let horizons = cfg.horizons();
    let mut ordered: Vec<&Scenario> = scenarios.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    struct Acc {
        count: usize,
        correct: usize,
        failures: usize,
        all: Vec<SquareSum>,
        right: Vec<SquareSum>,
        pooled: SquareSum,
    }
    let mut accs: BTreeMap<Intention, Acc> = Intention::ALL
        .iter()
        .map(|&i| {
            (
                i,
                Acc {
                    count: 0,
                    correct: 0,
                    failures: 0,
                    all: vec![SquareSum::default(); horizons.len()],
                    right: vec![SquareSum::default(); horizons.len()],
                    pooled: SquareSum::default(),
                },
            )
        })
        .collect();
    let mut payload_scalars_total = 0;
    let mut parse_failure_count = 0;

    for s in ordered {
        let acc = accs.get_mut(&s.label).expect("all classes present");
        acc.count += 1;
        let Some(Some(pred)) = predictions.get(&s.id) else {
            acc.failures += 1;
            parse_failure_count += 1;
            continue;
        };
        payload_scalars_total += pred.payload_size;
        let correct = pred.intention == s.label;
        if correct {
            acc.correct += 1;
        }
        for (k, &h) in horizons.iter().enumerate() {
            let (Some(gt), Some(p)) = (s.future_at(h), pred.trajectory.interpolate(h)) else {
                continue;
            };
            let (dx, dy) = (p.x - gt.x, p.y - gt.y);
            acc.all[k].add(dx, dy);
            acc.pooled.add(dx, dy);
            if correct {
                acc.right[k].add(dx, dy);
            }
        }
    }

    let per_class: Vec<ClassMetrics> = accs
        .into_iter()
        .map(|(intention, acc)| {
            let horizons = horizons
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let (lateral_rmse, longitudinal_rmse) = acc.all[k].rmse();
                    let (lateral_rmse_correct, longitudinal_rmse_correct) = acc.right[k].rmse();
                    HorizonMetrics {
                        t,
                        n: acc.all[k].n,
                        lateral_rmse,
                        longitudinal_rmse,
                        n_correct: acc.right[k].n,
                        lateral_rmse_correct,
                        longitudinal_rmse_correct,
                    }
                })
                .collect();
            let (lateral_rmse_pooled, longitudinal_rmse_pooled) = acc.pooled.rmse();
            ClassMetrics {
                intention,
                count: acc.count,
                correct: acc.correct,
                accuracy: if acc.count == 0 { 0.0 } else { 100.0 * acc.correct as f64 / acc.count as f64 },
                parse_failures: acc.failures,
                horizons,
                lateral_rmse_pooled,
                longitudinal_rmse_pooled,
            }
        })
        .collect();

    let total: usize = per_class.iter().map(|c| c.count).sum();
    let weighted: f64 = per_class.iter().map(|c| c.count as f64 * c.accuracy).sum();
    let known: std::collections::BTreeSet<&str> = scenarios.iter().map(|s| s.id.as_str()).collect();
    MetricsReport {
        per_class,
        total,
        overall_accuracy: if total == 0 { 0.0 } else { weighted / total as f64 },
        parse_failure_count,
        payload_scalars_total,
        unmatched_predictions: predictions.keys().filter(|id| !known.contains(id.as_str())).cloned().collect(),
    }
}

/// Parses and scores raw answer texts keyed by scenario id. Missing or
/// unparsable answers count as parse failures and as wrong intentions.
pub fn score(preds: &BTreeMap<String, String>, scenarios: &[Scenario], cfg: &EvalConfig) -> MetricsReport {
    let by_id: BTreeMap<&str, &Scenario> = scenarios.iter().map(|s| (s.id.as_str(), s)).collect();
    let parsed = preds
        .iter()
        .map(|(id, text)| {
            let scored = by_id.get(id.as_str()).and_then(|s| {
                let out = parse(text).ok()?;
                let trajectory = reconstruct(&out, &s.insertion, cfg).ok()?;
                Some(ScoredPrediction { intention: out.intention, trajectory, payload_size: out.trajectory.payload_size() })
            });
            (id.clone(), scored)
        })
        .collect();
    score_predictions(scenarios, &parsed, cfg)
}

/// Scores every scenario's own ground truth against itself.
pub fn score_ground_truth(scenarios: &[Scenario], cfg: &EvalConfig) -> MetricsReport {
    let preds = scenarios
        .iter()
        .map(|s| {
            let p = ScoredPrediction { intention: s.label, trajectory: s.future.clone(), payload_size: 0 };
            (s.id.clone(), Some(p))
        })
        .collect();
    score_predictions(scenarios, &preds, cfg)
}

pub const DISTRIBUTION_HEADER: &str = "intention,W,D,v0,dvx";

/// One CSV row per lane-change answer: `intention,W,D,v0,dvx`.
pub fn export_distributions<'a>(outputs: impl IntoIterator<Item = &'a ModelOutput>) -> String {
    let mut s = String::from(DISTRIBUTION_HEADER);
    s.push('\n');
    for out in outputs {
        if let HybridTrajectory::Params(p) = out.trajectory {
            writeln!(s, "{},{},{},{},{}", out.intention.code(), p.w, p.d, p.v0, p.dvx).unwrap();
        }
    }
    s
}

pub const OVERLAY_HEADER: &str = "id,intention,t,gt_x,gt_y,pred_x,pred_y";

/// Dense ground-truth and predicted positions for every parsable answer,
/// sampled every `dt` seconds over the scenario future.
pub fn export_overlays(preds: &BTreeMap<String, String>, scenarios: &[Scenario], dt: f64) -> Result<String, EvalError> {
    let mut out = String::from(OVERLAY_HEADER);
    out.push('\n');
    let mut ordered: Vec<&Scenario> = scenarios.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    for s in ordered {
        let Some(Ok(answer)) = preds.get(&s.id).map(|t| parse(t)) else {
            continue;
        };
        let horizon = s.future.duration();
        let dense = match answer.trajectory {
            HybridTrajectory::Params(payload) => {
                let mut clamped = payload;
                clamped.d = clamped.d.max(crate::kinematics::D_MIN);
                sample_trajectory(&clamped.with_speed(s.insertion.vx)?, horizon, dt)?
            }
            HybridTrajectory::Coords(points) => {
                let origin = KinematicState { t: 0.0, x: 0.0, y: 0.0, vx: 0.0, vy: 0.0, ay: 0.0 };
                let samples = std::iter::once(origin)
                    .chain(points.iter().enumerate().map(|(k, &(x, y))| KinematicState { t: (k + 1) as f64, x, y, ..origin }))
                    .collect();
                let knots = Trajectory::new(samples, 1.0)?;
                let steps = (horizon / dt + 1e-9).floor() as usize;
                let samples = (0..=steps).filter_map(|k| knots.interpolate(k as f64 * dt)).collect();
                Trajectory::new(samples, dt)?
            }
        };
        for p in dense.samples() {
            if let Some(gt) = s.future_at(p.t) {
                writeln!(out, "{},{},{},{},{},{},{}", s.id, answer.intention.code(), p.t, gt.x, gt.y, p.x, p.y).unwrap();
            }
        }
    }
    Ok(out)
}

fn cell(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |v| format!("{v:.3}"))
}

fn horizon_rows(s: &mut String, classes: &[ClassMetrics], get: impl Fn(&HorizonMetrics) -> (Option<f64>, Option<f64>)) {
    let n_h = classes.first().map_or(0, |c| c.horizons.len());
    for k in 0..n_h {
        let t = classes[0].horizons[k].t;
        for (i, name) in ["Lateral", "Longitudinal"].into_iter().enumerate() {
            let label = if i == 0 { format!("{t}s") } else { String::new() };
            write!(s, "{label:<6}{name:<14}").unwrap();
            for c in classes {
                let (lat, lon) = get(&c.horizons[k]);
                write!(s, "| {:>18}", cell(if i == 0 { lat } else { lon })).unwrap();
            }
            s.push('\n');
        }
    }
}

/// Human-readable summary: a class overview table followed by per-horizon
/// errors.
pub fn render_tables(report: &MetricsReport, method: &str) -> String {
    let mut s = String::new();
    let classes = &report.per_class;
    s.push_str("Performance by class\n");
    write!(s, "{:<16}", "Method").unwrap();
    for c in classes {
        write!(s, "| {:<26}", format!("{} ({})", c.intention, c.count)).unwrap();
    }
    s.push('\n');
    write!(s, "{:<16}", "").unwrap();
    for _ in classes {
        write!(s, "| {:>8}{:>9}{:>9}", "Acc", "Lat", "Lon").unwrap();
    }
    s.push('\n');
    write!(s, "{:<16}", method).unwrap();
    for c in classes {
        write!(
            s,
            "| {:>8.2}{:>9}{:>9}",
            c.accuracy,
            cell(c.lateral_rmse_pooled),
            cell(c.longitudinal_rmse_pooled)
        )
        .unwrap();
    }
    s.push('\n');
    writeln!(
        s,
        "Overall accuracy {:.2}% over {} scenarios; parse failures {}; payload scalars {}",
        report.overall_accuracy, report.total, report.parse_failure_count, report.payload_scalars_total
    )
    .unwrap();

    s.push_str("\nPoint-by-point RMSE (m)\n");
    write!(s, "{:<6}{:<14}", "Time", "Metric").unwrap();
    for c in classes {
        write!(s, "| {:>18}", c.intention.to_string()).unwrap();
    }
    s.push('\n');
    horizon_rows(&mut s, classes, |h| (h.lateral_rmse, h.longitudinal_rmse));

    let differs = classes.iter().flat_map(|c| &c.horizons).any(|h| {
        h.lateral_rmse != h.lateral_rmse_correct || h.longitudinal_rmse != h.longitudinal_rmse_correct
    });
    if differs {
        s.push_str("\nPoint-by-point RMSE (m), correctly classified only\n");
        horizon_rows(&mut s, classes, |h| (h.lateral_rmse_correct, h.longitudinal_rmse_correct));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::SamPayload;
    use crate::synth::{synth_generate, SynthConfig};

    fn ego() -> VehicleState {
        VehicleState { frame: 0, vehicle_id: 1, x: 0.0, y: 0.0, vx: 30.0, vy: 0.0, ax: 0.0, ay: 0.0, lane_id: 2 }
    }

    fn params(w: f64, d: f64, v0: f64) -> ModelOutput {
        ModelOutput::new("", Intention::LeftLaneChange, HybridTrajectory::Params(SamPayload { w, d, v0, dvx: 0.0 })).unwrap()
    }

    #[test]
    fn reconstruct_params() {
        let tr = reconstruct(&params(3.75, 3.0, 0.0), &ego(), &EvalConfig::default()).unwrap();
        assert_eq!(tr.len(), 4);
        assert!((tr.samples()[2].y - 3.75 / std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(tr.samples()[3].x, 120.0);
    }

    #[test]
    fn reconstruct_coords_identity() {
        let pts = [(30.1, 0.0), (60.2, 0.1), (90.3, 0.1), (120.4, 0.2)];
        let out = ModelOutput::new("", Intention::KeepLane, HybridTrajectory::Coords(pts)).unwrap();
        let tr = reconstruct(&out, &ego(), &EvalConfig::default()).unwrap();
        let got: Vec<(f64, f64)> = tr.samples().iter().map(|s| (s.x, s.y)).collect();
        assert_eq!(got, pts.to_vec());
        assert!((tr.samples()[1].vx - 30.1).abs() < 1e-9);
    }

    #[test]
    fn reconstruct_holds_after_short_maneuver() {
        let out = params(3.75, 2.0, 0.3);
        let tr = reconstruct(&out, &ego(), &EvalConfig::default()).unwrap();
        let p = SamPayload { w: 3.75, d: 2.0, v0: 0.3, dvx: 0.0 }.with_speed(30.0).unwrap();
        let dense = sample_trajectory(&p, 4.0, 0.04).unwrap();
        for s in &tr.samples()[2..] {
            let k = (s.t / 0.04).round() as usize;
            assert!((dense.samples()[k].y - s.y).abs() < 1e-12);
            assert_eq!(s.ay, 0.0);
        }
        // Hold: y(4) - y(3) = v0 * 1 s.
        assert!((tr.samples()[3].y - tr.samples()[2].y - 0.3).abs() < 1e-12);
    }

    #[test]
    fn reconstruct_clamps_short_duration() {
        let tr = reconstruct(&params(3.75, 0.2, 0.0), &ego(), &EvalConfig::default()).unwrap();
        assert!(tr.samples().iter().all(|s| s.y.is_finite()));
    }

    fn scenarios() -> Vec<Scenario> {
        synth_generate(30, 17, &SynthConfig::default()).unwrap().scenarios
    }

    #[test]
    fn perfect_ground_truth() {
        let sc = scenarios();
        let r = score_ground_truth(&sc, &EvalConfig::default());
        assert_eq!(r.overall_accuracy, 100.0);
        for c in &r.per_class {
            assert_eq!(c.accuracy, 100.0);
            for h in &c.horizons {
                assert_eq!((h.lateral_rmse, h.longitudinal_rmse), (Some(0.0), Some(0.0)));
            }
        }
    }

    #[test]
    fn constant_lateral_error() {
        let sc: Vec<Scenario> = scenarios().into_iter().filter(|s| s.label == Intention::KeepLane).take(2).collect();
        let preds: BTreeMap<String, Option<ScoredPrediction>> = sc
            .iter()
            .map(|s| {
                let mut tr = s.future.clone();
                let shifted: Vec<KinematicState> = tr.samples().iter().map(|k| KinematicState { y: k.y + 0.1, ..*k }).collect();
                tr = Trajectory::new(shifted, tr.dt()).unwrap();
                (s.id.clone(), Some(ScoredPrediction { intention: s.label, trajectory: tr, payload_size: 8 }))
            })
            .collect();
        let r = score_predictions(&sc, &preds, &EvalConfig::default());
        for h in &r.class(Intention::KeepLane).horizons {
            assert!((h.lateral_rmse.unwrap() - 0.1).abs() < 1e-12);
            assert_eq!(h.longitudinal_rmse, Some(0.0));
        }
    }

    #[test]
    fn three_errors_at_four_seconds() {
        let sc: Vec<Scenario> = scenarios().into_iter().filter(|s| s.label == Intention::KeepLane).take(3).collect();
        let preds = sc
            .iter()
            .zip([0.0, 0.3, 0.4])
            .map(|(s, e)| {
                let shifted: Vec<KinematicState> =
                    s.future.samples().iter().map(|k| KinematicState { y: k.y + e, ..*k }).collect();
                let tr = Trajectory::new(shifted, s.future.dt()).unwrap();
                (s.id.clone(), Some(ScoredPrediction { intention: s.label, trajectory: tr, payload_size: 8 }))
            })
            .collect();
        let r = score_predictions(&sc, &preds, &EvalConfig::default());
        let h4 = &r.class(Intention::KeepLane).horizons[3];
        // sqrt((0 + 0.09 + 0.16) / 3)
        assert!((h4.lateral_rmse.unwrap() - 0.288_675_134_594_812_9).abs() < 1e-9);
    }

    #[test]
    fn missing_and_malformed_count_as_failures() {
        let sc = scenarios();
        let mut preds = BTreeMap::new();
        preds.insert(sc[0].id.clone(), "garbage".to_string());
        preds.insert("nope".to_string(), "garbage".to_string());
        let r = score(&preds, &sc, &EvalConfig::default());
        assert_eq!(r.parse_failure_count, sc.len());
        assert_eq!(r.overall_accuracy, 0.0);
        assert_eq!(r.unmatched_predictions, vec!["nope".to_string()]);
        assert!(r.per_class.iter().all(|c| c.horizons.iter().all(|h| h.lateral_rmse.is_none())));
    }

    #[test]
    fn distributions_export() {
        assert_eq!(export_distributions(std::iter::empty()), "intention,W,D,v0,dvx\n");
        let keep = ModelOutput::new("", Intention::KeepLane, HybridTrajectory::Coords([(0.0, 0.0); 4])).unwrap();
        let outs = [params(3.8, 4.0, 0.1), keep, params(3.6, 5.0, 0.0)];
        let csv = export_distributions(&outs);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("1,3.8,4,0.1,0\n"));
    }

    #[test]
    fn overlays_cover_future() {
        let sc = scenarios();
        let preds: BTreeMap<String, String> =
            sc.iter().map(|s| (s.id.clone(), crate::baseline::predict(s, &Default::default()))).collect();
        let csv = export_overlays(&preds, &sc, 0.04).unwrap();
        assert_eq!(csv.lines().count(), 1 + sc.len() * 101);
    }

    #[test]
    fn tables_render() {
        let r = score_ground_truth(&scenarios(), &EvalConfig::default());
        let text = render_tables(&r, "ground truth");
        assert!(text.contains("keep_lane"));
        assert!(text.contains("4s"));
        assert!(text.contains("100.00"));
        assert!(!text.contains("correctly classified only"));
    }
}

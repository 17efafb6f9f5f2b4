use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use lanesam::baseline::{predict, BaselineConfig};
use lanesam::codec::{parse, Intention, ModelOutput};
use lanesam::eval::{
    export_distributions, export_overlays, render_tables, score, score_ground_truth, EvalConfig, MetricsReport,
};
use lanesam::fitting::{fit_sam, FitConfig, FitResult};
use lanesam::prompt::{build_target, future_coords, write_corpus, PromptConfig, PromptError, TargetPayload};
use lanesam::scenario::{
    build_scenarios, read_scenarios, write_scenarios, BuildConfig, LateralAxis, Scenario, ScenarioError,
};
use lanesam::synth::{synth_generate, SynthConfig};
use lanesam::tracks::{load_tracks, write_tracks, LaneNumbering, TrackError};

/// Lane-change scenario synthesis, maneuver fitting, corpus export and scoring.
#[derive(Debug, Parser)]
#[command(name = "lanesam", version, about)]
struct Cli {
    /// JSON configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic scenario set.
    Synth(SynthArgs),
    /// Extract scenarios from a highD-style tracks CSV.
    Ingest(IngestArgs),
    /// Fit maneuver parameters to every lane-change scenario.
    Fit(FitArgs),
    /// Build prompt/target training records.
    Corpus(CorpusArgs),
    /// Answer every scenario with the threshold baseline.
    PredictBaseline(PredictArgs),
    /// Score predictions and print the metric tables.
    Score(ScoreArgs),
    /// Write metric tables, structured metrics and plot data to a directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of scenarios.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// RNG seed (required, there is no hidden entropy).
    #[arg(long)]
    seed: u64,
    /// Scenario JSONL output.
    #[arg(long)]
    out: PathBuf,
    /// Also write the underlying tracks as CSV.
    #[arg(long)]
    tracks_out: Option<PathBuf>,
    /// Class shares as keep,left,right, e.g. 0.66,0.17,0.17.
    #[arg(long, value_parser = parse_mix)]
    class_mix: Option<(f64, f64, f64)>,
    /// Lateral position noise, meters.
    #[arg(long)]
    noise_lat: Option<f64>,
    /// Longitudinal position noise, meters.
    #[arg(long)]
    noise_lon: Option<f64>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Which lane ids lie to the left of the direction of travel.
    #[arg(long, value_parser = parse_numbering)]
    lane_numbering: Option<LaneNumbering>,
    /// Sign convention of the recording's lateral axis.
    #[arg(long, value_parser = parse_axis)]
    lateral_axis: Option<LateralAxis>,
    /// Spacing of keep-lane windows, seconds.
    #[arg(long)]
    keep_lane_stride: Option<f64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    scenarios: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    d_min: Option<f64>,
    #[arg(long)]
    d_max: Option<f64>,
    #[arg(long)]
    d_tolerance: Option<f64>,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    #[arg(long)]
    scenarios: PathBuf,
    #[arg(long)]
    fits: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    scenarios: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Lateral speed above which a lane change is predicted, m/s.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    scenarios: PathBuf,
    /// Predictions JSONL with `id` and `output` fields.
    #[arg(long, required_unless_present = "ground_truth")]
    predictions: Option<PathBuf>,
    /// Score each scenario's own future instead of predictions.
    #[arg(long, conflicts_with = "predictions")]
    ground_truth: bool,
    #[arg(long)]
    horizon_step: Option<f64>,
    #[arg(long)]
    horizon_count: Option<usize>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Structured metrics output (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Export fitted rather than predicted parameter distributions.
    #[arg(long)]
    fits: Option<PathBuf>,
    /// Output directory; it must exist.
    #[arg(long)]
    out_dir: PathBuf,
    /// Overlay sampling step, seconds.
    #[arg(long, default_value_t = 0.04)]
    overlay_dt: f64,
}

fn parse_mix(s: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    match parts[..] {
        [k, l, r] if [k, l, r].iter().all(|v| v.is_finite() && *v >= 0.0) && k + l + r > 0.0 => Ok((k, l, r)),
        _ => Err("expected three non-negative shares keep,left,right".into()),
    }
}

fn parse_numbering(s: &str) -> Result<LaneNumbering, String> {
    serde_json::from_value(Value::String(s.into())).map_err(|_| "expected smaller_id_is_left or larger_id_is_left".into())
}

fn parse_axis(s: &str) -> Result<LateralAxis, String> {
    serde_json::from_value(Value::String(s.into())).map_err(|_| "expected left_positive or right_positive".into())
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

type CliResult<T> = Result<T, CliError>;

/// Per-section configuration from the `--config` file. Sections may be
/// partial; missing keys keep their defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    synth: Option<Value>,
    #[serde(default)]
    build: Option<Value>,
    #[serde(default)]
    fit: Option<Value>,
    #[serde(default)]
    prompt: Option<Value>,
    #[serde(default)]
    baseline: Option<Value>,
    #[serde(default)]
    eval: Option<Value>,
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn section<T: Serialize + DeserializeOwned + Default>(over: &Option<Value>, name: &str) -> CliResult<T> {
    let Some(over) = over else { return Ok(T::default()) };
    let mut base = serde_json::to_value(T::default()).expect("config serializes");
    merge(&mut base, over);
    serde_json::from_value(base).map_err(|e| CliError::Usage(format!("config section `{name}`: {e}")))
}

fn load_config(path: &Option<PathBuf>) -> CliResult<ConfigFile> {
    let Some(path) = path else { return Ok(ConfigFile::default()) };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

struct Run {
    command: &'static str,
    started: Instant,
    inputs: Vec<PathBuf>,
    seed: Option<u64>,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Run { command, started: Instant::now(), inputs: Vec::new(), seed: None }
    }

    /// Writes an artifact and its `<path>.manifest.json`.
    fn emit(&self, path: &Path, bytes: &[u8], config: &Value, extra: Value) -> CliResult<()> {
        write_atomic(path, bytes)?;
        let manifest = json!({
            "command": self.command,
            "config": config,
            "inputs": self.inputs,
            "output": path,
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "wall_time_s": self.started.elapsed().as_secs_f64(),
            "details": extra,
        });
        let mut mpath = path.as_os_str().to_owned();
        mpath.push(".manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(Path::new(&mpath), text.as_bytes())
    }
}

fn open(path: &Path) -> CliResult<BufReader<fs::File>> {
    fs::File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn load_scenarios(path: &Path) -> CliResult<Vec<Scenario>> {
    read_scenarios(open(path)?).map_err(|e| match e {
        ScenarioError::Io(e) => CliError::io(path, e),
        e => CliError::Data(format!("{}: {e}", path.display())),
    })
}

/// Reads JSON lines, skipping blank ones. Errors name the 1-based line.
fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut rows = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| CliError::Data(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn to_jsonl<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct FitRecord {
    id: String,
    fit: FitResult,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    output: String,
}

fn cmd_synth(args: SynthArgs, file: &ConfigFile) -> CliResult<()> {
    let mut run = Run::new("synth");
    run.seed = Some(args.seed);
    let mut cfg: SynthConfig = section(&file.synth, "synth")?;
    if let Some((keep, left, right)) = args.class_mix {
        cfg.class_mix = lanesam::synth::ClassMix { keep, left, right };
    }
    if let Some(v) = args.noise_lat {
        cfg.noise_lat = v;
    }
    if let Some(v) = args.noise_lon {
        cfg.noise_lon = v;
    }
    let out = synth_generate(args.n, args.seed, &cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let config = json!({ "synth": cfg, "n": args.n });
    let mut buf = Vec::new();
    write_scenarios(&mut buf, &out.scenarios).map_err(|e| CliError::io(&args.out, e))?;
    run.emit(&args.out, &buf, &config, json!({ "scenarios": out.scenarios.len() }))?;
    if let Some(path) = &args.tracks_out {
        let mut buf = Vec::new();
        write_tracks(&mut buf, &out.tracks).map_err(|e| CliError::io(path, e))?;
        run.emit(path, &buf, &config, json!({ "tracks": out.tracks.len() }))?;
    }
    eprintln!("wrote {} scenarios to {}", out.scenarios.len(), args.out.display());
    Ok(())
}

fn cmd_ingest(args: IngestArgs, file: &ConfigFile) -> CliResult<()> {
    let mut run = Run::new("ingest");
    run.inputs.push(args.tracks.clone());
    let mut cfg: BuildConfig = section(&file.build, "build")?;
    if let Some(v) = args.lane_numbering {
        cfg.lane_numbering = v;
    }
    if let Some(v) = args.lateral_axis {
        cfg.lateral_axis = v;
    }
    if let Some(v) = args.keep_lane_stride {
        cfg.keep_lane_stride = v;
    }
    let tracks = load_tracks(&args.tracks).map_err(|e| match e {
        TrackError::Io(e) => CliError::io(&args.tracks, e),
        e => CliError::Data(format!("{}: {e}", args.tracks.display())),
    })?;
    let built = build_scenarios(&tracks, &cfg).map_err(|e| match e {
        ScenarioError::InvalidConfig(m) => CliError::Usage(m.into()),
        e => CliError::Data(e.to_string()),
    })?;
    let mut buf = Vec::new();
    write_scenarios(&mut buf, &built.scenarios).map_err(|e| CliError::io(&args.out, e))?;
    let details = json!({ "scenarios": built.scenarios.len(), "skipped_events": built.skipped });
    run.emit(&args.out, &buf, &json!({ "build": cfg }), details)?;
    eprintln!(
        "wrote {} scenarios to {} ({} lane changes skipped)",
        built.scenarios.len(),
        args.out.display(),
        built.skipped
    );
    Ok(())
}

fn cmd_fit(args: FitArgs, file: &ConfigFile) -> CliResult<()> {
    let mut run = Run::new("fit");
    run.inputs.push(args.scenarios.clone());
    let mut cfg: FitConfig = section(&file.fit, "fit")?;
    if let Some(v) = args.d_min {
        cfg.d_min = v;
    }
    if let Some(v) = args.d_max {
        cfg.d_max = v;
    }
    if let Some(v) = args.d_tolerance {
        cfg.d_tolerance = v;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let scenarios = load_scenarios(&args.scenarios)?;
    let mut fits = Vec::new();
    let mut skipped = 0;
    for s in &scenarios {
        if s.label == Intention::KeepLane {
            skipped += 1;
            continue;
        }
        let fit = fit_sam(&s.future, s.insertion.vx, &cfg).map_err(|e| CliError::Data(format!("scenario {}: {e}", s.id)))?;
        fits.push(FitRecord { id: s.id.clone(), fit });
    }
    let details = json!({ "fitted": fits.len(), "skipped_keep_lane": skipped });
    run.emit(&args.out, &to_jsonl(&fits), &json!({ "fit": cfg }), details)?;
    eprintln!("fitted {} lane changes, skipped {} keep-lane scenarios", fits.len(), skipped);
    Ok(())
}

fn cmd_corpus(args: CorpusArgs, file: &ConfigFile) -> CliResult<()> {
    let mut run = Run::new("corpus");
    run.inputs.extend([args.scenarios.clone(), args.fits.clone()]);
    let cfg: PromptConfig = section(&file.prompt, "prompt")?;
    let scenarios = load_scenarios(&args.scenarios)?;
    let fits: BTreeMap<String, FitResult> =
        read_jsonl::<FitRecord>(&args.fits)?.into_iter().map(|r| (r.id, r.fit)).collect();
    let data = |e: PromptError, id: &str| CliError::Data(format!("scenario {id}: {e}"));
    let mut records = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        let payload = if s.label == Intention::KeepLane {
            TargetPayload::Coords(future_coords(s).map_err(|e| data(e, &s.id))?)
        } else {
            let fit = fits.get(&s.id).ok_or_else(|| CliError::Data(format!("no fit for lane-change scenario {}", s.id)))?;
            TargetPayload::Fit(fit)
        };
        records.push(build_target(s, payload, &cfg).map_err(|e| data(e, &s.id))?);
    }
    let mut buf = Vec::new();
    write_corpus(&mut buf, &records).map_err(|e| CliError::io(&args.out, e))?;
    run.emit(&args.out, &buf, &json!({ "prompt": cfg }), json!({ "records": records.len() }))?;
    eprintln!("wrote {} corpus records to {}", records.len(), args.out.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs, file: &ConfigFile) -> CliResult<()> {
    let mut run = Run::new("predict-baseline");
    run.inputs.push(args.scenarios.clone());
    let mut cfg: BaselineConfig = section(&file.baseline, "baseline")?;
    if let Some(v) = args.threshold {
        cfg.lateral_vel_threshold = v;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.into()))?;
    let scenarios = load_scenarios(&args.scenarios)?;
    let preds: Vec<PredictionRecord> =
        scenarios.iter().map(|s| PredictionRecord { id: s.id.clone(), output: predict(s, &cfg) }).collect();
    run.emit(&args.out, &to_jsonl(&preds), &json!({ "baseline": cfg }), json!({ "predictions": preds.len() }))?;
    eprintln!("wrote {} predictions to {}", preds.len(), args.out.display());
    Ok(())
}

struct Evaluation {
    cfg: EvalConfig,
    scenarios: Vec<Scenario>,
    /// `None` when scoring the ground truth.
    predictions: Option<BTreeMap<String, String>>,
    report: MetricsReport,
}

fn evaluate(args: &EvalArgs, file: &ConfigFile, run: &mut Run) -> CliResult<Evaluation> {
    let mut cfg: EvalConfig = section(&file.eval, "eval")?;
    if let Some(v) = args.horizon_step {
        cfg.horizon_step = v;
    }
    if let Some(v) = args.horizon_count {
        cfg.horizon_count = v;
    }
    if !(cfg.horizon_step > 0.0 && cfg.horizon_step.is_finite()) || cfg.horizon_count == 0 {
        return Err(CliError::Usage("horizons must be positive".into()));
    }
    run.inputs.push(args.scenarios.clone());
    let scenarios = load_scenarios(&args.scenarios)?;
    let Some(path) = &args.predictions else {
        let report = score_ground_truth(&scenarios, &cfg);
        return Ok(Evaluation { cfg, scenarios, predictions: None, report });
    };
    run.inputs.push(path.clone());
    let mut predictions = BTreeMap::new();
    for r in read_jsonl::<PredictionRecord>(path)? {
        if predictions.insert(r.id.clone(), r.output).is_some() {
            return Err(CliError::Data(format!("{}: duplicate prediction for {}", path.display(), r.id)));
        }
    }
    let report = score(&predictions, &scenarios, &cfg);
    if let Some(id) = report.unmatched_predictions.first() {
        return Err(CliError::Data(format!(
            "{}: {} predictions match no scenario, first {id}",
            path.display(),
            report.unmatched_predictions.len()
        )));
    }
    Ok(Evaluation { cfg, scenarios, predictions: Some(predictions), report })
}

fn method_name(e: &Evaluation) -> &'static str {
    if e.predictions.is_some() { "predictions" } else { "ground truth" }
}

fn cmd_score(args: ScoreArgs, file: &ConfigFile) -> CliResult<()> {
    let mut run = Run::new("score");
    let e = evaluate(&args.eval, file, &mut run)?;
    print!("{}", render_tables(&e.report, method_name(&e)));
    if let Some(out) = &args.out {
        let text = serde_json::to_string_pretty(&e.report).expect("report serializes");
        run.emit(out, text.as_bytes(), &json!({ "eval": e.cfg }), Value::Null)?;
    }
    Ok(())
}

fn cmd_report(args: ReportArgs, file: &ConfigFile) -> CliResult<()> {
    let mut run = Run::new("report");
    let e = evaluate(&args.eval, file, &mut run)?;
    if !(args.overlay_dt > 0.0 && args.overlay_dt.is_finite()) {
        return Err(CliError::Usage("--overlay-dt must be positive".into()));
    }
    let config = json!({ "eval": e.cfg, "overlay_dt": args.overlay_dt });

    let predictions = match &e.predictions {
        Some(p) => p.clone(),
        None => ground_truth_answers(&e.scenarios)?,
    };
    let distributions = match &args.fits {
        Some(path) => {
            run.inputs.push(path.clone());
            let labels: BTreeMap<&str, Intention> = e.scenarios.iter().map(|s| (s.id.as_str(), s.label)).collect();
            let mut outputs = Vec::new();
            for r in read_jsonl::<FitRecord>(path)? {
                let label = labels.get(r.id.as_str()).copied().ok_or_else(|| {
                    CliError::Data(format!("{}: fit {} matches no scenario", path.display(), r.id))
                })?;
                let out = ModelOutput::new("", label, lanesam::codec::HybridTrajectory::Params(r.fit.params.into()))
                    .map_err(|err| CliError::Data(format!("fit {}: {err}", r.id)))?;
                outputs.push(out);
            }
            export_distributions(&outputs)
        }
        None => {
            let outputs: Vec<ModelOutput> = predictions.values().filter_map(|t| parse(t).ok()).collect();
            export_distributions(&outputs)
        }
    };
    let overlays = export_overlays(&predictions, &e.scenarios, args.overlay_dt).map_err(|err| CliError::Data(err.to_string()))?;

    let dir = &args.out_dir;
    run.emit(&dir.join("report.txt"), render_tables(&e.report, method_name(&e)).as_bytes(), &config, Value::Null)?;
    let text = serde_json::to_string_pretty(&e.report).expect("report serializes");
    run.emit(&dir.join("report.json"), text.as_bytes(), &config, Value::Null)?;
    run.emit(&dir.join("distributions.csv"), distributions.as_bytes(), &config, Value::Null)?;
    run.emit(&dir.join("overlays.csv"), overlays.as_bytes(), &config, Value::Null)?;
    eprintln!("wrote report to {}", dir.display());
    Ok(())
}

/// Ground-truth answers for overlay export: coordinates for keep-lane, the
/// generating parameters for lane changes when known.
fn ground_truth_answers(scenarios: &[Scenario]) -> CliResult<BTreeMap<String, String>> {
    use lanesam::codec::{serialize, HybridTrajectory};
    let mut out = BTreeMap::new();
    for s in scenarios {
        let trajectory = match (s.label, s.hidden_params) {
            (Intention::KeepLane, _) | (_, None) => {
                HybridTrajectory::Coords(future_coords(s).map_err(|e| CliError::Data(format!("scenario {}: {e}", s.id)))?)
            }
            (_, Some(p)) => HybridTrajectory::Params(p.into()),
        };
        let Ok(answer) = ModelOutput::new("", s.label, trajectory) else { continue };
        if let Ok(text) = serialize(&answer) {
            out.insert(s.id.clone(), text);
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> CliResult<()> {
    let file = load_config(&cli.config)?;
    match cli.command {
        Command::Synth(a) => cmd_synth(a, &file),
        Command::Ingest(a) => cmd_ingest(a, &file),
        Command::Fit(a) => cmd_fit(a, &file),
        Command::Corpus(a) => cmd_corpus(a, &file),
        Command::PredictBaseline(a) => cmd_predict(a, &file),
        Command::Score(a) => cmd_score(a, &file),
        Command::Report(a) => cmd_report(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lanesam: {e}");
            ExitCode::from(e.code())
        }
    }
}

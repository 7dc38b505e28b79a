use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polecal::calibration::CalibrationSet;
use polecal::geometry::EulerAngles;
use polecal::io::{
    read_calibration, read_streams, save_calibration, save_streams, write_json_line, IoError, Streams,
};
use polecal::online::{OnlineConfig, OnlineState};
use polecal::pipeline::{evaluate, run_offline, sweep_distortions, sweep_to_csv, OfflineOptions, SweepSpec};
use polecal::sim::{apply_distortion, generate_scenario, perturb_mount, DistortionKind, DistortionSpec, ScenarioParams};
use polecal::{mip::to_lp_format, Pose, TimedPose};
use serde::{Deserialize, Serialize};

/// Environment variable holding the log filter (`error`, `warn`, `info`, `debug`, ...).
const LOG_ENV: &str = "POLECAL_LOG";

#[derive(Parser)]
#[command(name = "polecal", version, about = "Multi-LiDAR extrinsic calibration from poles and ground")]
struct Cli {
    /// TOML file with scenario, offline, online and sweep settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write its sensor streams.
    Simulate(SimulateArgs),
    /// Calibrate all sensors from a recorded stream file.
    CalibrateOffline(OfflineArgs),
    /// Track the calibration frame by frame over a stream file.
    CalibrateOnline(OnlineArgs),
    /// Compare a calibration against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the distortion sweep and write a CSV table.
    Sweep(SweepArgs),
    /// Write the pole-pair selection problem in LP format.
    DumpMip(DumpArgs),
}

#[derive(Args)]
struct SelectionFlags {
    /// Largest matching error of a selected pole pair (meters).
    #[arg(long)]
    lambda: Option<f64>,
    /// Yaw trust radius of the pair selection (degrees).
    #[arg(long)]
    gamma: Option<f64>,
    /// Sensor whose measured ground height fixes the absolute heights.
    #[arg(long)]
    anchor_sensor: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the true calibration at the first timestamp here.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Distortion applied to the rendered frames (e.g. poles_position).
    #[arg(long, requires = "amount")]
    distortion: Option<DistortionKind>,
    #[arg(long)]
    amount: Option<f64>,
}

#[derive(Args)]
struct OfflineArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Summary of the run (warnings, counts, timings) as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    selection: SelectionFlags,
}

#[derive(Args)]
struct OnlineArgs {
    #[arg(long)]
    input: PathBuf,
    /// Starting calibration.
    #[arg(long)]
    initial: PathBuf,
    /// Final calibration.
    #[arg(long)]
    output: PathBuf,
    /// Per-step reports, one JSON object per line.
    #[arg(long)]
    reports: Option<PathBuf>,
    /// Frame batches kept in the sliding window.
    #[arg(long)]
    window: Option<usize>,
    /// Blending factor of each update.
    #[arg(long)]
    alpha: Option<f64>,
    /// Pairing gate for cross-sensor poles (meters).
    #[arg(long)]
    lambda: Option<f64>,
    /// Yaw bound of one x/y/yaw update (degrees).
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Report destination; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    output: PathBuf,
    /// First scenario seed; repetition r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated distortion amounts.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Comma-separated distortion kinds; all when absent.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<DistortionKind>>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    selection: SelectionFlags,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    selection: SelectionFlags,
}

/// A mount change of the simulated rig from `time` on.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Perturbation {
    sensor_id: String,
    time: f64,
    #[serde(default)]
    translation: [f64; 3],
    /// Roll, pitch, yaw in radians.
    #[serde(default)]
    rotation: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SweepSettings {
    kinds: Vec<DistortionKind>,
    amounts: Vec<f64>,
    reps: usize,
    seed: u64,
    workers: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        let d = SweepSpec::default();
        Self {
            kinds: d.kinds,
            amounts: d.amounts,
            reps: d.reps,
            seed: d.base_seed,
            workers: d.workers,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct Config {
    /// Frames of different sensors closer than this share a timestamp (seconds).
    sync_tol: f64,
    scenario: ScenarioParams,
    perturbations: Vec<Perturbation>,
    offline: OfflineOptions,
    online: OnlineConfig,
    sweep: SweepSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            sync_tol: polecal::io::DEFAULT_SYNC_TOL,
            scenario: ScenarioParams::default(),
            perturbations: Vec::new(),
            offline: OfflineOptions::default(),
            online: OnlineConfig::default(),
            sweep: SweepSettings::default(),
        }
    }
}

#[derive(Debug)]
enum CliError {
    Io(String),
    Parse(String),
    Validation(String),
    Config(String),
    Calibration(String),
    Evaluation(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 3,
            CliError::Parse(_) => 4,
            CliError::Validation(_) => 5,
            CliError::Config(_) => 6,
            CliError::Calibration(_) => 7,
            CliError::Evaluation(_) => 8,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Calibration(m) => write!(f, "calibration failed: {m}"),
            CliError::Evaluation(m) => write!(f, "evaluation failed: {m}"),
        }
    }
}

fn with_path(path: &Path) -> impl Fn(IoError) -> CliError + '_ {
    move |e| match e {
        IoError::Io(e) => CliError::Io(format!("{}: {e}", path.display())),
        IoError::Parse { .. } => CliError::Parse(format!("{}: {e}", path.display())),
        IoError::Validation(_) => CliError::Validation(format!("{}: {e}", path.display())),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn apply_selection(options: &mut OfflineOptions, flags: &SelectionFlags) {
    if let Some(l) = flags.lambda {
        options.mip.lambda = l;
    }
    if let Some(g) = flags.gamma {
        options.mip.gamma = g.to_radians();
    }
    if let Some(a) = &flags.anchor_sensor {
        options.anchor_sensor = Some(a.clone());
    }
}

fn check_offline(options: &OfflineOptions, streams: &Streams) -> Result<(), CliError> {
    let mip = &options.mip;
    if !(mip.lambda > 0.0 && mip.lambda.is_finite()) || !(mip.gamma > 0.0 && mip.gamma.is_finite()) {
        return Err(CliError::Config("lambda and gamma must be positive".into()));
    }
    if let Some(a) = &options.anchor_sensor {
        if !streams.sensors.iter().any(|s| &s.id == a) {
            return Err(CliError::Config(format!("anchor sensor {a} is not configured")));
        }
    }
    Ok(())
}

fn load_streams(path: &Path, config: &Config) -> Result<(Streams, polecal::calibration::VehicleGeometry), CliError> {
    let streams = read_streams(path, config.sync_tol).map_err(with_path(path))?;
    let vehicle = streams
        .vehicle
        .ok_or_else(|| CliError::Validation(format!("{}: no config record", path.display())))?;
    Ok((streams, vehicle))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn simulate(args: &SimulateArgs, config: &Config) -> Result<(), CliError> {
    let mut scn = generate_scenario(&config.scenario, args.seed).map_err(|e| CliError::Config(e.to_string()))?;
    for p in &config.perturbations {
        let [r, pi, y] = p.rotation;
        let delta = Pose::from_euler(p.translation.into(), EulerAngles::new(r, pi, y));
        scn = perturb_mount(&scn, &p.sensor_id, delta, p.time).map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut streams = Streams::from_scenario(&scn);
    if let (Some(kind), Some(amount)) = (args.distortion, args.amount) {
        if !(amount >= 0.0 && amount.is_finite()) {
            return Err(CliError::Config("distortion amount must be non-negative".into()));
        }
        streams.frames = apply_distortion(
            &streams.frames,
            &DistortionSpec {
                kind,
                amount,
                seed: args.seed,
            },
        );
    }
    save_streams(&args.output, &streams).map_err(with_path(&args.output))?;
    if let Some(path) = &args.truth {
        save_calibration(path, &scn.true_calibration(scn.time_span().0)).map_err(with_path(path))?;
    }
    log::info!("wrote {} ego poses and {} sensors", streams.ego.len(), streams.sensors.len());
    Ok(())
}

fn calibrate_offline(args: &OfflineArgs, config: &Config) -> Result<(), CliError> {
    let mut options = config.offline.clone();
    apply_selection(&mut options, &args.selection);
    let (streams, vehicle) = load_streams(&args.input, config)?;
    check_offline(&options, &streams)?;
    let result = run_offline(&streams.frames, &streams.ego, &streams.sensors, &vehicle, &options)
        .map_err(|e| CliError::Calibration(e.to_string()))?;
    save_calibration(&args.output, &result.calibration).map_err(with_path(&args.output))?;
    if let Some(path) = &args.report {
        let summary = serde_json::json!({
            "warnings": result.warnings,
            "candidate_count": result.candidate_count,
            "selected_count": result.selected_count,
            "plane_pair_count": result.plane_pair_count,
            "mip_status": result.mip_status,
            "mip_gap": result.mip_gap,
            "refine_converged": result.refine_converged,
            "yaw_estimates": result.yaw_estimates,
            "timings": result.timings,
        });
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))?;
    }
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn calibrate_online(args: &OnlineArgs, config: &Config) -> Result<(), CliError> {
    let mut online = config.online.clone();
    if let Some(w) = args.window {
        online.window = w;
    }
    if let Some(a) = args.alpha {
        online.alpha = a;
    }
    if let Some(l) = args.lambda {
        online.pair_gate = l;
    }
    if let Some(g) = args.gamma {
        online.gamma = g.to_radians();
    }
    let (streams, vehicle) = load_streams(&args.input, config)?;
    let initial = read_calibration(&args.initial).map_err(with_path(&args.initial))?;
    let mut state = OnlineState::new(&initial, &streams.sensors, &vehicle, online).map_err(|e| match e {
        polecal::online::OnlineError::Invalid(m) => CliError::Config(m),
        e => CliError::Validation(e.to_string()),
    })?;
    let mut reports = args.reports.as_deref().map(create).transpose()?;
    let mut fed = 0;
    for batch in streams.batches() {
        let t = batch[0].timestamp;
        let upto = fed + streams.ego[fed..].partition_point(|p: &TimedPose| p.timestamp <= t);
        let report = state.step(&batch, &streams.ego[fed..upto]);
        fed = upto;
        if let (Some(w), Some(path)) = (reports.as_mut(), args.reports.as_deref()) {
            write_json_line(w, &report).map_err(with_path(path))?;
        }
    }
    if let (Some(mut w), Some(path)) = (reports, args.reports.as_deref()) {
        w.flush().map_err(io_err(path))?;
    }
    save_calibration(&args.output, state.calibration()).map_err(with_path(&args.output))
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<(), CliError> {
    let est: CalibrationSet = read_calibration(&args.input).map_err(with_path(&args.input))?;
    let truth = read_calibration(&args.truth).map_err(with_path(&args.truth))?;
    let report = evaluate(&est, &truth).map_err(|e| CliError::Evaluation(e.to_string()))?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))? + "\n";
    match &args.output {
        Some(path) => std::fs::write(path, text).map_err(io_err(path)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string())),
    }
}

fn sweep(args: &SweepArgs, config: &Config) -> Result<(), CliError> {
    let mut options = config.offline.clone();
    apply_selection(&mut options, &args.selection);
    let s = &config.sweep;
    let spec = SweepSpec {
        kinds: args.kinds.clone().unwrap_or_else(|| s.kinds.clone()),
        amounts: args.grid.clone().unwrap_or_else(|| s.amounts.clone()),
        reps: args.reps.unwrap_or(s.reps),
        base_seed: args.seed.unwrap_or(s.seed),
        workers: args.workers.unwrap_or(s.workers).max(1),
    };
    if spec.reps == 0 || spec.amounts.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(CliError::Config("reps must be positive and amounts non-negative".into()));
    }
    let rows = sweep_distortions(&config.scenario, &spec, &options);
    std::fs::write(&args.output, sweep_to_csv(&rows)).map_err(io_err(&args.output))
}

fn dump_mip(args: &DumpArgs, config: &Config) -> Result<(), CliError> {
    let mut options = config.offline.clone();
    apply_selection(&mut options, &args.selection);
    let (streams, vehicle) = load_streams(&args.input, config)?;
    check_offline(&options, &streams)?;
    let result = run_offline(&streams.frames, &streams.ego, &streams.sensors, &vehicle, &options)
        .map_err(|e| CliError::Calibration(e.to_string()))?;
    std::fs::write(&args.output, to_lp_format(&result.selection_problem)).map_err(io_err(&args.output))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Simulate(a) => simulate(a, &config),
        Command::CalibrateOffline(a) => calibrate_offline(a, &config),
        Command::CalibrateOnline(a) => calibrate_online(a, &config),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep(a, &config),
        Command::DumpMip(a) => dump_mip(a, &config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("polecal: {e}");
            ExitCode::from(e.code())
        }
    }
}

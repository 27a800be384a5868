use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use govo::dataset::{self, Dataset, DatasetError};
use govo::geometry::CameraModel;
use govo::metrics::Trajectory;
use govo::pipeline::{
    evaluate, run_govo, run_ransac, sweep_row, GovoOptions, MetricsSummary, PairRecord, PipelineError, RansacOptions,
    SweepRow,
};
use govo::simulate::{simulate, SimulationConfig, TrajectoryKind, TrajectorySpec};
use govo::solver::SolverConfig;

#[derive(Debug, Error)]
enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Missing(String),
    #[error("{0} pair(s) failed the grid oracle check")]
    Oracle(usize),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Oracle(_) => 4,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Missing(_) => CliError::Missing(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Dataset(d) => d.into(),
            PipelineError::Solve(s) => CliError::Config(s.to_string()),
            PipelineError::Simulation(s) => CliError::Config(s.to_string()),
            PipelineError::Metrics(m) => CliError::Failed(m.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Correspondence-less planar motion estimation and its benchmark harness.
#[derive(Parser)]
#[command(name = "govo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Estimate the trajectory of a dataset.
    Solve(SolveArgs),
    /// Compare an estimated trajectory with ground truth.
    Eval(EvalArgs),
    /// Compare against matched 1-point RANSAC, or run a parameter sweep.
    Compare(CompareArgs),
    /// Per-pair solve-time statistics.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// TOML file with optional [simulation], [solver], [govo] and [ransac] tables.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SimFlags {
    #[arg(long, value_enum)]
    trajectory: Option<TrajectoryKind>,
    /// Radius, or semi-axis along x, in metres.
    #[arg(long)]
    a: Option<f64>,
    /// Semi-axis along y for ellipses, in metres.
    #[arg(long)]
    b: Option<f64>,
    /// Degrees between frames.
    #[arg(long)]
    step: Option<f64>,
    /// Number of canvas points.
    #[arg(long)]
    points: Option<usize>,
    /// Half-width of the uniform pixel noise.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct SolverFlags {
    /// Inlier threshold in pixels [default: 2.5]
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<f64>,
    /// Half-angle domain as `lo,hi` in radians.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    domain_phi: Option<(f64, f64)>,
    /// Baseline domain as `lo,hi` in metres.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    domain_rho: Option<(f64, f64)>,
    /// Worker threads per solve.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    min_phi_width: Option<f64>,
    #[arg(long)]
    min_rho_width: Option<f64>,
    /// Solve every pair on the full domain.
    #[arg(long)]
    no_warm_start: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    sim: SimFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    dataset: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    solver: SolverFlags,
    /// Check every pair against an exhaustive grid over the terminal lattice.
    #[arg(long)]
    oracle_check: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory or ground-truth CSV.
    #[arg(long)]
    groundtruth: PathBuf,
    /// Estimated trajectory CSV (frame,x,y,heading).
    #[arg(long)]
    estimate: PathBuf,
    /// Output metrics file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    Eccentricity,
    Noise,
    Density,
}

#[derive(Args)]
struct CompareArgs {
    /// Dataset to compare on; not needed with --sweep.
    #[arg(required_unless_present = "sweep")]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    solver: SolverFlags,
    /// Fraction of synthetic matches pointing at a wrong keypoint.
    #[arg(long)]
    ambiguity: Option<f64>,
    /// RANSAC iterations per pair.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    sweep: Option<Sweep>,
    /// Seeds per sweep cell.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Base radius for sweeps, in metres.
    #[arg(long, default_value_t = 0.5)]
    a: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Dataset to time; a dense synthetic circle is generated when omitted.
    dataset: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    solver: SolverFlags,
    #[command(flatten)]
    sim: SimFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if lo.is_nan() || hi.is_nan() || lo > hi {
        return Err(format!("empty range {lo},{hi}"));
    }
    Ok((lo, hi))
}

/// Parsed `--config` file, still untyped per table.
#[derive(Default)]
struct FileConfig {
    tables: toml::Table,
}

impl FileConfig {
    fn load(arg: &ConfigArg) -> Result<Self> {
        let Some(path) = &arg.config else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let tables: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for key in tables.keys() {
            if !["simulation", "solver", "govo", "ransac"].contains(&key.as_str()) {
                return Err(CliError::Config(format!("{}: unknown table `{key}`", path.display())));
            }
        }
        Ok(Self { tables })
    }

    /// `base` with the keys of table `name` written over it.
    fn overlay<T: Serialize + DeserializeOwned>(&self, name: &str, base: T) -> Result<T> {
        let Some(table) = self.tables.get(name) else {
            return Ok(base);
        };
        let table = table
            .as_table()
            .ok_or_else(|| CliError::Config(format!("`{name}` must be a table")))?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| CliError::Config(e.to_string()))?;
        for (k, v) in table {
            merged.insert(k.clone(), v.clone());
        }
        merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("[{name}] {}", e.message())))
    }
}

fn simulation_config(file: &FileConfig, flags: &SimFlags, base: SimulationConfig) -> Result<SimulationConfig> {
    let mut cfg = file.overlay("simulation", base)?;
    let t = &mut cfg.trajectory;
    if let Some(kind) = flags.trajectory {
        t.kind = kind;
    }
    if let Some(a) = flags.a {
        t.a = a;
        if flags.b.is_none() {
            t.b = a;
        }
    }
    if let Some(b) = flags.b {
        t.b = b;
    }
    if t.kind == TrajectoryKind::Circle {
        t.b = t.a;
    }
    if let Some(step) = flags.step {
        t.step_deg = step;
    }
    if let Some(p) = flags.points {
        cfg.points = p;
    }
    if let Some(n) = flags.noise {
        cfg.noise = n;
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn solver_config(file: &FileConfig, flags: &SolverFlags, cam: &CameraModel) -> Result<(SolverConfig, GovoOptions)> {
    let mut cfg = file.overlay("solver", SolverConfig::for_camera(cam))?;
    let mut opts = file.overlay("govo", GovoOptions::default())?;
    if let Some(e) = flags.epsilon {
        cfg.epsilon = e;
    }
    if let Some(d) = flags.domain_phi {
        cfg.phi_domain = d;
    }
    if let Some(d) = flags.domain_rho {
        cfg.rho_domain = d;
    }
    if let Some(j) = flags.jobs {
        cfg.parallel_width = j;
    }
    if let Some(w) = flags.min_phi_width {
        cfg.min_phi_width = w;
    }
    if let Some(w) = flags.min_rho_width {
        cfg.min_rho_width = w;
    }
    if flags.no_warm_start {
        opts.warm_start = false;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok((cfg, opts))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let fail = |e: csv::Error| CliError::Failed(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::Failed(e.to_string()))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let file = FileConfig::load(&args.config)?;
    let cfg = simulation_config(&file, &args.sim, SimulationConfig::default())?;
    let seq = simulate(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    dataset::write_sequence(&args.out, &seq)?;
    println!(
        "wrote {} frames ({:?}, step {} deg) to {}",
        seq.observations.len(),
        cfg.trajectory.kind,
        cfg.trajectory.step_deg,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ResolvedSolve<'a> {
    solver: &'a SolverConfig,
    govo: &'a GovoOptions,
}

#[derive(Serialize)]
struct RunReport<'a, C: Serialize> {
    command: &'static str,
    dataset: String,
    config: C,
    records: &'a [PairRecord],
    trajectory_file: String,
    raw_trajectory_file: String,
    metrics: Option<MetricsSummary>,
    metrics_before_refinement: Option<MetricsSummary>,
    oracle_violations: usize,
    wall_time_s: f64,
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let started = Instant::now();
    let file = FileConfig::load(&args.config)?;
    let ds = dataset::read_dataset(&args.dataset)?;
    let (cfg, mut opts) = solver_config(&file, &args.solver, &ds.meta.camera)?;
    opts.oracle_check |= args.oracle_check;
    let run = run_govo(&ds, &cfg, &opts)?;

    create_dir(&args.out)?;
    let traj_path = args.out.join("trajectory.csv");
    let raw_path = args.out.join("trajectory_raw.csv");
    dataset::write_trajectory(&traj_path, &run.trajectory)?;
    dataset::write_trajectory(&raw_path, &run.raw_trajectory)?;

    let gt = ds.groundtruth_trajectory();
    let metrics = evaluate(&run.trajectory, &gt).ok();
    let before = evaluate(&run.raw_trajectory, &gt).ok();
    if let Some(m) = &metrics {
        write_json(&args.out.join("metrics.json"), m)?;
    }
    let violations = run.oracle_violations();
    let report = RunReport {
        command: "solve",
        dataset: args.dataset.display().to_string(),
        config: ResolvedSolve {
            solver: &cfg,
            govo: &opts,
        },
        records: &run.records,
        trajectory_file: traj_path.display().to_string(),
        raw_trajectory_file: raw_path.display().to_string(),
        metrics,
        metrics_before_refinement: before,
        oracle_violations: violations,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    write_json(&args.out.join("report.json"), &report)?;
    println!("solved {} pairs; trajectory in {}", run.records.len(), traj_path.display());
    if let Some(m) = metrics {
        println!("rpe mean {:.6} m, ate rmse {:.6} m", m.rpe_mean, m.ate_rmse);
    }
    if violations > 0 {
        return Err(CliError::Oracle(violations));
    }
    Ok(())
}

fn load_groundtruth(path: &Path) -> Result<Trajectory> {
    if path.is_dir() {
        let meta = dataset::read_meta(path)?;
        let rows = dataset::read_groundtruth(&path.join("groundtruth.csv"))?;
        let ds = Dataset {
            meta,
            frames: Vec::new(),
            groundtruth: rows,
        };
        return Ok(ds.groundtruth_trajectory());
    }
    let rows = dataset::read_groundtruth(path)?;
    let closed = path
        .parent()
        .and_then(|dir| dataset::read_meta(dir).ok())
        .is_some_and(|m| m.closed);
    let mut poses: Vec<_> = rows.iter().map(|r| r.pose()).collect();
    if closed && !poses.is_empty() {
        poses.push(poses[0]);
    }
    Ok(Trajectory::from_poses(poses))
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let gt = load_groundtruth(&args.groundtruth)?;
    let est = dataset::read_trajectory(&args.estimate)?;
    let m = evaluate(&est, &gt).map_err(|e| CliError::Failed(e.to_string()))?;
    write_json(&args.out, &m)?;
    println!("rpe mean {:.6} m (rmse {:.6}), ate rmse {:.6} m", m.rpe_mean, m.rpe_rmse, m.ate_rmse);
    Ok(())
}

#[derive(Serialize)]
struct ComparisonRow {
    method: &'static str,
    rpe_mean: f64,
    rpe_rmse: f64,
    ate_mean: f64,
    ate_rmse: f64,
    pairs_carried_over: usize,
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let file = FileConfig::load(&args.config)?;
    create_dir(&args.out)?;
    if let Some(sweep) = args.sweep {
        return run_sweep(args, &file, sweep);
    }
    let dir = args.dataset.as_ref().expect("clap requires a dataset without --sweep");
    let ds = dataset::read_dataset(dir)?;
    let (cfg, opts) = solver_config(&file, &args.solver, &ds.meta.camera)?;
    let mut ransac = file.overlay("ransac", RansacOptions::default())?;
    ransac.epsilon = cfg.epsilon;
    if let Some(a) = args.ambiguity {
        ransac.ambiguity = a;
    }
    if let Some(i) = args.iterations {
        ransac.iterations = i;
    }
    if let Some(s) = args.seed {
        ransac.seed = s;
    }
    if !(0.0..=1.0).contains(&ransac.ambiguity) || ransac.iterations == 0 {
        return Err(CliError::Config("ambiguity must lie in [0, 1] and iterations be positive".into()));
    }

    let gt = ds.groundtruth_trajectory();
    let govo_run = run_govo(&ds, &cfg, &opts)?;
    let ransac_run = run_ransac(&ds, &ransac);
    let mut rows = Vec::new();
    for (method, run) in [("govo", &govo_run), ("ransac", &ransac_run)] {
        let m = evaluate(&run.trajectory, &gt).map_err(|e| CliError::Failed(e.to_string()))?;
        rows.push(ComparisonRow {
            method,
            rpe_mean: m.rpe_mean,
            rpe_rmse: m.rpe_rmse,
            ate_mean: m.ate_mean,
            ate_rmse: m.ate_rmse,
            pairs_carried_over: run.records.iter().filter(|r| r.carried_over).count(),
        });
        dataset::write_trajectory(&args.out.join(format!("trajectory_{method}.csv")), &run.trajectory)?;
    }
    write_csv_rows(&args.out.join("comparison.csv"), &rows)?;
    #[derive(Serialize)]
    struct Report<'a> {
        dataset: String,
        solver: &'a SolverConfig,
        govo: &'a GovoOptions,
        ransac: &'a RansacOptions,
        results: &'a [ComparisonRow],
    }
    write_json(
        &args.out.join("comparison.json"),
        &Report {
            dataset: dir.display().to_string(),
            solver: &cfg,
            govo: &opts,
            ransac: &ransac,
            results: &rows,
        },
    )?;
    for r in &rows {
        println!("{:<7} rpe {:.6} m  ate {:.6} m", r.method, r.rpe_mean, r.ate_rmse);
    }
    Ok(())
}

fn run_sweep(args: &CompareArgs, file: &FileConfig, sweep: Sweep) -> Result<()> {
    let base = file.overlay("simulation", SimulationConfig::default())?;
    let (cfg, opts) = solver_config(file, &args.solver, &base.camera)?;
    let a = args.a;
    let mut cells: Vec<SimulationConfig> = Vec::new();
    for seed in 0..args.seeds {
        match sweep {
            Sweep::Eccentricity => {
                for ratio in [0.6, 0.7, 0.8, 0.9, 1.0] {
                    for step in [2.0, 5.0, 10.0] {
                        cells.push(SimulationConfig {
                            trajectory: TrajectorySpec::ellipse(a, ratio * a, step),
                            seed,
                            ..base
                        });
                    }
                }
            }
            Sweep::Noise => {
                for noise in [0.0, 0.5, 1.0, 1.5, 2.0, 2.5] {
                    cells.push(SimulationConfig {
                        trajectory: TrajectorySpec::circle(a, 5.0),
                        noise,
                        seed,
                        ..base
                    });
                }
            }
            Sweep::Density => {
                for points in [3000, 4500, 6000, 7500, 9000] {
                    cells.push(SimulationConfig {
                        trajectory: TrajectorySpec::circle(a, 5.0),
                        points,
                        seed,
                        ..base
                    });
                }
            }
        }
    }
    let mut rows: Vec<SweepRow> = Vec::with_capacity(cells.len());
    for sim in &cells {
        sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
        rows.push(sweep_row(sim, &cfg, &opts)?);
    }
    let name = match sweep {
        Sweep::Eccentricity => "sweep_eccentricity.csv",
        Sweep::Noise => "sweep_noise.csv",
        Sweep::Density => "sweep_density.csv",
    };
    write_csv_rows(&args.out.join(name), &rows)?;
    println!("wrote {} rows to {}", rows.len(), args.out.join(name).display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct BenchReport {
    pairs: usize,
    mean_features: f64,
    p50_ms: f64,
    p95_ms: f64,
    mean_ms: f64,
    max_ms: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let file = FileConfig::load(&args.config)?;
    let ds = match &args.dataset {
        Some(dir) => dataset::read_dataset(dir)?,
        None => {
            let dense = SimulationConfig {
                trajectory: TrajectorySpec::circle(0.5, 5.0),
                points: 98_000,
                ..Default::default()
            };
            let cfg = simulation_config(&file, &args.sim, dense)?;
            Dataset::from_sequence(&simulate(&cfg).map_err(|e| CliError::Config(e.to_string()))?)
        }
    };
    let (cfg, opts) = solver_config(&file, &args.solver, &ds.meta.camera)?;
    let run = run_govo(&ds, &cfg, &opts)?;
    let mut times = run.solve_times_ms();
    times.sort_by(f64::total_cmp);
    let report = BenchReport {
        pairs: times.len(),
        mean_features: ds.frames.iter().map(|f| f.points.len() as f64).sum::<f64>() / ds.frames.len().max(1) as f64,
        p50_ms: percentile(&times, 0.5),
        p95_ms: percentile(&times, 0.95),
        mean_ms: times.iter().sum::<f64>() / times.len().max(1) as f64,
        max_ms: times.last().copied().unwrap_or(0.0),
    };
    println!(
        "pairs {}  features/frame {:.0}  P50 {:.1} ms  P95 {:.1} ms  mean {:.1} ms  max {:.1} ms",
        report.pairs, report.mean_features, report.p50_ms, report.p95_ms, report.mean_ms, report.max_ms
    );
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

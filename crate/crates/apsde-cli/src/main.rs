//! Command-line driver: trajectories, weak-error tables, parameter sweeps,
//! limit-gap studies, and generator-gap diagnostics, all emitted as CSV.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use apsde::montecarlo::{self, ReferenceSpec, TableConfig};
use apsde::schemes::SchemeId;
use apsde::{analysis, lookup, Error as CoreError, SchemeParams};

#[derive(Debug)]
enum CliError {
    /// Invalid configuration; the message names the offending key.
    Config(String),
    /// The computation itself failed (e.g. too many non-finite trajectories).
    Numerical(String),
    Io(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NumericalFailure(_) => CliError::Numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "apsde",
    about = "Integrators and Monte Carlo studies for slow-fast SDEs",
    version
)]
struct Cli {
    /// JSON config file mirroring the flags; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one trajectory and write t, x, m per step.
    Trajectory(CommonOpts),
    /// Weak-error table over a dt grid at a single eps.
    WeakError(CommonOpts),
    /// Weak-error table over the full (dt, eps) grid.
    Sweep(CommonOpts),
    /// Coupled pathwise gap to the limiting scheme over an eps grid.
    LimitGap(CommonOpts),
    /// Normalized generator residual of the perturbed test function.
    GeneratorGap(CommonOpts),
}

impl Command {
    fn opts(&self) -> &CommonOpts {
        match self {
            Command::Trajectory(o)
            | Command::WeakError(o)
            | Command::Sweep(o)
            | Command::LimitGap(o)
            | Command::GeneratorGap(o) => o,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct CommonOpts {
    /// Registry model name (avg-ex, diff-ex1, diff-ex1-line, diff-ex2).
    #[arg(long)]
    model: Option<String>,

    /// Scheme identifier (e.g. ap-avg, limit-diff, exp-ex1bis).
    #[arg(long)]
    scheme: Option<String>,

    /// Step size.
    #[arg(long)]
    dt: Option<f64>,

    /// Comma-separated step sizes, sorted descending.
    #[arg(long = "dt-grid", value_name = "LIST")]
    dt_grid: Option<String>,

    /// Scale-separation parameter.
    #[arg(long)]
    eps: Option<f64>,

    /// Comma-separated eps values, sorted descending.
    #[arg(long = "eps-grid", value_name = "LIST")]
    eps_grid: Option<String>,

    /// Implicitness parameter theta in [1/2, 1].
    #[arg(long)]
    theta: Option<f64>,

    /// Mismatch parameter theta' in [1/2, 1] (defaults to theta).
    #[arg(long)]
    theta2: Option<f64>,

    /// Final time.
    #[arg(long = "T")]
    t_final: Option<f64>,

    /// Monte Carlo sample count.
    #[arg(long)]
    samples: Option<usize>,

    /// Base RNG seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Observable / test function name (identity, sin2pix, cos2pix).
    #[arg(long)]
    observable: Option<String>,

    /// Output CSV path.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Record every k-th step of a trajectory.
    #[arg(long)]
    every: Option<usize>,

    /// Named experiment preset (fig-av1, fig-diff1, fig-diff1x, fig-diff2).
    #[arg(long)]
    preset: Option<String>,
}

/// JSON mirror of the flags.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<String>,
    scheme: Option<String>,
    dt: Option<f64>,
    dt_grid: Option<Vec<f64>>,
    eps: Option<f64>,
    eps_grid: Option<Vec<f64>>,
    theta: Option<f64>,
    theta2: Option<f64>,
    #[serde(rename = "T")]
    t_final: Option<f64>,
    samples: Option<usize>,
    seed: Option<u64>,
    observable: Option<String>,
    output: Option<PathBuf>,
    every: Option<usize>,
    preset: Option<String>,
}

/// Fully merged run configuration with defaults applied.
#[derive(Debug, Clone)]
struct RunConfig {
    model: Option<String>,
    scheme: Option<String>,
    dt: Option<f64>,
    dt_grid: Option<Vec<f64>>,
    eps: Option<f64>,
    eps_grid: Option<Vec<f64>>,
    theta: f64,
    theta2: f64,
    t_final: f64,
    samples: usize,
    seed: u64,
    observable: String,
    output: Option<PathBuf>,
    every: usize,
    preset: Option<String>,
}

fn parse_grid(key: &str, raw: &str) -> CliResult<Vec<f64>> {
    let mut out = Vec::new();
    for part in raw.split(',') {
        let trimmed = part.trim();
        if trimmed.is_empty() {
            continue;
        }
        out.push(
            trimmed
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("{key}: `{trimmed}` is not a number")))?,
        );
    }
    Ok(out)
}

fn check_grid(key: &str, grid: &[f64]) -> CliResult<()> {
    if grid.is_empty() {
        return Err(CliError::Config(format!("{key}: grid must be non-empty")));
    }
    for v in grid {
        if !(*v > 0.0) {
            return Err(CliError::Config(format!(
                "{key}: all grid values must be strictly positive, found {v}"
            )));
        }
    }
    for pair in grid.windows(2) {
        if pair[1] >= pair[0] {
            return Err(CliError::Config(format!(
                "{key}: grid must be sorted strictly descending ({} before {})",
                pair[0], pair[1]
            )));
        }
    }
    Ok(())
}

fn merge_config(opts: &CommonOpts, file: FileConfig) -> CliResult<RunConfig> {
    let dt_grid = match (&opts.dt_grid, file.dt_grid) {
        (Some(raw), _) => Some(parse_grid("dt-grid", raw)?),
        (None, v) => v,
    };
    let eps_grid = match (&opts.eps_grid, file.eps_grid) {
        (Some(raw), _) => Some(parse_grid("eps-grid", raw)?),
        (None, v) => v,
    };
    let theta = opts.theta.or(file.theta).unwrap_or(1.0);
    Ok(RunConfig {
        model: opts.model.clone().or(file.model),
        scheme: opts.scheme.clone().or(file.scheme),
        dt: opts.dt.or(file.dt),
        dt_grid,
        eps: opts.eps.or(file.eps),
        eps_grid,
        theta,
        theta2: opts.theta2.or(file.theta2).unwrap_or(theta),
        t_final: opts.t_final.or(file.t_final).unwrap_or(1.0),
        samples: opts.samples.or(file.samples).unwrap_or(100_000),
        seed: opts.seed.or(file.seed).unwrap_or(0),
        observable: opts
            .observable
            .clone()
            .or(file.observable)
            .unwrap_or_else(|| "sin2pix".into()),
        output: opts.output.clone().or(file.output),
        every: opts.every.or(file.every).unwrap_or(1),
        preset: opts.preset.clone().or(file.preset),
    })
}

impl RunConfig {
    fn require_model(&self) -> CliResult<apsde::ModelEntry> {
        let name = self
            .model
            .as_deref()
            .ok_or_else(|| CliError::Config("model: required".into()))?;
        Ok(lookup(name)?)
    }

    fn require_scheme(&self) -> CliResult<SchemeId> {
        let name = self
            .scheme
            .as_deref()
            .ok_or_else(|| CliError::Config("scheme: required".into()))?;
        Ok(SchemeId::from_str(name)?)
    }

    fn require_dt(&self) -> CliResult<f64> {
        self.dt
            .ok_or_else(|| CliError::Config("dt: required".into()))
    }

    /// Steps from `T` and `dt`, requiring `T` to be an integer multiple.
    fn steps(&self, dt: f64) -> CliResult<usize> {
        if !(dt > 0.0) {
            return Err(CliError::Config(format!("dt: must be positive, got {dt}")));
        }
        let n = (self.t_final / dt).round();
        if n < 1.0 || (self.t_final - n * dt).abs() > 1e-12 {
            return Err(CliError::Config(format!(
                "T: {} is not an integer multiple of dt = {dt}",
                self.t_final
            )));
        }
        Ok(n as usize)
    }

    fn params(&self, dt: f64, eps: f64) -> CliResult<SchemeParams> {
        let p = SchemeParams::new(dt, eps, self.steps(dt)?)?
            .with_theta(self.theta)?
            .with_theta2(self.theta2)?;
        Ok(p)
    }

    fn table_config(&self) -> TableConfig {
        TableConfig {
            t_final: self.t_final,
            samples: self.samples,
            seed: self.seed,
            theta: self.theta,
            theta2: self.theta2,
            quad_nodes: 32,
        }
    }

    fn output_or(&self, default: &str) -> PathBuf {
        self.output
            .clone()
            .unwrap_or_else(|| PathBuf::from(default))
    }
}

/// 17 significant digits, enough to round-trip any f64.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv_atomic(path: &Path, content: &str) -> CliResult<()> {
    let tmp = path.with_extension("csv.tmp");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn run_trajectory(config: &RunConfig) -> CliResult<()> {
    if let Some(preset) = &config.preset {
        return run_preset(config, preset);
    }
    let entry = config.require_model()?;
    let scheme = config.require_scheme()?;
    let dt = config.require_dt()?;
    let eps = config.eps.unwrap_or(1.0);
    let params = config.params(dt, eps)?;
    let out = config.output_or("trajectory.csv");
    write_trajectory_csv(&entry, scheme, &params, config.seed, config.every, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn write_trajectory_csv(
    entry: &apsde::ModelEntry,
    scheme: SchemeId,
    params: &SchemeParams,
    seed: u64,
    every: usize,
    out: &Path,
) -> CliResult<()> {
    if every == 0 {
        return Err(CliError::Config("every: must be at least 1".into()));
    }
    let mut stream = apsde::GaussianStream::new(seed, 0);
    let traj = apsde::simulate_trajectory(scheme, entry, params, &mut stream)?;
    let d = entry.model.d();
    let mut csv = String::from("t");
    for i in 0..d {
        let _ = write!(csv, ",x_{i}");
    }
    csv.push_str(",m\n");
    for (n, state) in traj.iter().enumerate() {
        if n % every != 0 && n != traj.len() - 1 {
            continue;
        }
        let _ = write!(csv, "{}", fmt(n as f64 * params.dt));
        for v in &state.x {
            let _ = write!(csv, ",{}", fmt(*v));
        }
        let _ = writeln!(csv, ",{}", fmt(state.m));
    }
    write_csv_atomic(out, &csv)
}

/// The limiting counterpart used by `limit-gap`.
fn limiting_scheme_for(scheme: SchemeId) -> CliResult<SchemeId> {
    Ok(match scheme {
        SchemeId::ApAveraging | SchemeId::CrudeAveraging => SchemeId::LimitAveraging,
        SchemeId::ApDiffusion | SchemeId::CrudeDiffusion => SchemeId::LimitDiffusion,
        SchemeId::ExpEx1bis => SchemeId::LimitEx1bis,
        other => {
            return Err(CliError::Config(format!(
                "scheme: `{other}` has no eps-dependent dynamics to compare against a limit"
            )))
        }
    })
}

fn weak_error_rows_csv(rows: &[montecarlo::WeakErrorRow]) -> String {
    let mut csv = String::from("dt,eps,scheme,estimate,std_error,error,error_std,samples\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            fmt(r.dt),
            fmt(r.eps),
            r.scheme,
            fmt(r.estimate),
            fmt(r.std_error),
            fmt(r.error),
            fmt(r.error_std),
            r.samples
        );
    }
    csv
}

fn run_weak_error(config: &RunConfig, full_sweep: bool) -> CliResult<()> {
    let entry = config.require_model()?;
    let scheme = config.require_scheme()?;
    let dt_grid = config
        .dt_grid
        .clone()
        .ok_or_else(|| CliError::Config("dt-grid: required".into()))?;
    check_grid("dt-grid", &dt_grid)?;
    let eps_grid = if full_sweep {
        let g = config
            .eps_grid
            .clone()
            .ok_or_else(|| CliError::Config("eps-grid: required".into()))?;
        check_grid("eps-grid", &g)?;
        g
    } else {
        vec![config.eps.unwrap_or(1.0)]
    };
    for &dt in &dt_grid {
        config.steps(dt)?;
    }
    let observable = montecarlo::lookup_observable(&config.observable)?;
    let rows = montecarlo::weak_error_table(
        scheme,
        &ReferenceSpec::SelfRefined { factor: 16 },
        &entry,
        &observable,
        &dt_grid,
        &eps_grid,
        &config.table_config(),
    )?;
    let out = config.output_or(if full_sweep {
        "sweep.csv"
    } else {
        "weak-error.csv"
    });
    write_csv_atomic(&out, &weak_error_rows_csv(&rows))?;

    // Machine-readable summary: the fitted order in dt. For a full sweep the
    // fit runs on the per-dt supremum over eps (the uniform-accuracy rate).
    let fit_input: Vec<montecarlo::WeakErrorRow> = if full_sweep {
        dt_grid
            .iter()
            .map(|&dt| {
                let mut best = rows
                    .iter()
                    .filter(|r| r.dt == dt)
                    .max_by(|a, b| a.error.total_cmp(&b.error))
                    .expect("grid is non-empty")
                    .clone();
                best.eps = f64::NAN;
                best
            })
            .collect()
    } else {
        rows.clone()
    };
    match montecarlo::fit_order(&fit_input, montecarlo::FitAxis::Dt) {
        Ok(f) => println!(
            "order-fit slope={} intercept={} r2={} used={} excluded={}",
            fmt(f.slope),
            fmt(f.intercept),
            fmt(f.r_squared),
            f.used,
            f.excluded
        ),
        Err(e) => println!("order-fit unavailable: {e}"),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run_limit_gap(config: &RunConfig) -> CliResult<()> {
    let entry = config.require_model()?;
    let scheme = config.require_scheme()?;
    let limiting = limiting_scheme_for(scheme)?;
    let dt = config.require_dt()?;
    let eps_grid = config
        .eps_grid
        .clone()
        .ok_or_else(|| CliError::Config("eps-grid: required".into()))?;
    check_grid("eps-grid", &eps_grid)?;
    let params = config.params(dt, eps_grid[0])?;
    let rows = montecarlo::coupled_limit_gap(
        scheme,
        limiting,
        &entry,
        &params,
        &eps_grid,
        config.samples,
        config.seed,
    )?;
    let mut csv = String::from("eps,gap,gap_std\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", fmt(r.eps), fmt(r.gap), fmt(r.gap_std));
    }
    let out = config.output_or("limit-gap.csv");
    write_csv_atomic(&out, &csv)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run_generator_gap(config: &RunConfig) -> CliResult<()> {
    let entry = config.require_model()?;
    let eps_grid = config
        .eps_grid
        .clone()
        .ok_or_else(|| CliError::Config("eps-grid: required".into()))?;
    check_grid("eps-grid", &eps_grid)?;
    let bundle = analysis::test_function(&config.observable)?;
    let x_grid: Vec<f64> = (0..64).map(|i| i as f64 / 64.0).collect();
    let m_grid: Vec<f64> = (-12..=12).map(|i| i as f64 / 4.0).collect();
    let gaps = analysis::generator_gap(&entry.model, &bundle, &x_grid, &m_grid, &eps_grid)?;
    let mut csv = String::from("eps,max_normalized_gap\n");
    for (eps, gap) in &gaps {
        let _ = writeln!(csv, "{},{}", fmt(*eps), fmt(*gap));
    }
    let out = config.output_or("generator-gap.csv");
    write_csv_atomic(&out, &csv)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// One scheme variant of a preset: identifier, optional theta overrides, and
/// a file-name label.
struct PresetRun {
    scheme: SchemeId,
    label: &'static str,
    theta: f64,
    theta2: f64,
}

fn preset_runs(name: &str) -> CliResult<(&'static str, f64, f64, Vec<PresetRun>)> {
    let run = |scheme: SchemeId, label: &'static str| PresetRun {
        scheme,
        label,
        theta: 1.0,
        theta2: 1.0,
    };
    // (model, dt, eps, runs); all presets use T = 1 (250 steps at dt = 0.004).
    Ok(match name {
        "fig-av1" => (
            "avg-ex",
            0.004,
            0.001,
            vec![
                run(SchemeId::ApAveraging, "ap-avg"),
                run(SchemeId::CrudeAveraging, "crude-avg"),
                run(SchemeId::LimitAveraging, "limit-avg"),
                run(SchemeId::RefAveraging, "ref-avg"),
            ],
        ),
        "fig-diff1" => (
            "diff-ex1",
            0.004,
            0.01,
            vec![
                run(SchemeId::ApDiffusion, "ap-diff"),
                run(SchemeId::CrudeDiffusion, "crude-diff"),
                run(SchemeId::LimitDiffusion, "limit-diff"),
                run(SchemeId::RefDiffusion, "ref-diff"),
            ],
        ),
        "fig-diff1x" => (
            "diff-ex1-line",
            0.004,
            0.01,
            vec![
                run(SchemeId::ExpEx1bis, "exp-ex1bis"),
                PresetRun {
                    scheme: SchemeId::ExpEx1bis,
                    label: "exp-ex1bis-mismatch",
                    theta: 1.0,
                    theta2: 0.5,
                },
                run(SchemeId::LimitEx1bis, "limit-ex1bis"),
                run(SchemeId::RefDiffusion, "ref-diff"),
            ],
        ),
        "fig-diff2" => (
            "diff-ex2",
            0.004,
            0.01,
            vec![
                run(SchemeId::ApDiffusion, "ap-diff"),
                run(SchemeId::CrudeDiffusion, "crude-diff"),
                run(SchemeId::LimitDiffusion, "limit-diff"),
                run(SchemeId::RefDiffusion, "ref-diff"),
            ],
        ),
        other => {
            return Err(CliError::Config(format!(
                "preset: unknown preset `{other}`"
            )))
        }
    })
}

fn run_preset(config: &RunConfig, name: &str) -> CliResult<()> {
    let (model, dt, eps, runs) = preset_runs(name)?;
    let entry = lookup(model)?;
    let stem = config
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{name}.csv")));
    let dir = stem.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = stem
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string());
    for r in &runs {
        let params = SchemeParams::new(dt, eps, (1.0 / dt).round() as usize)?
            .with_theta(r.theta)?
            .with_theta2(r.theta2)?;
        let out = dir.join(format!("{base}-{}.csv", r.label));
        write_trajectory_csv(&entry, r.scheme, &params, config.seed, config.every, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn init_threads() -> CliResult<()> {
    if let Ok(raw) = std::env::var("APSDE_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| CliError::Config(format!("APSDE_THREADS: `{raw}` is not a number")))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(format!("APSDE_THREADS: {e}")))?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    let file = match &cli.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("config: cannot read {}: {e}", path.display()))
            })?;
            serde_json::from_str::<FileConfig>(&raw)
                .map_err(|e| CliError::Config(format!("config: {e}")))?
        }
        None => FileConfig::default(),
    };
    let config = merge_config(cli.command.opts(), file)?;
    match &cli.command {
        Command::Trajectory(_) => run_trajectory(&config),
        Command::WeakError(_) => run_weak_error(&config, false),
        Command::Sweep(_) => run_weak_error(&config, true),
        Command::LimitGap(_) => run_limit_gap(&config),
        Command::GeneratorGap(_) => run_generator_gap(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("io error: {msg}");
            ExitCode::FAILURE
        }
    }
}

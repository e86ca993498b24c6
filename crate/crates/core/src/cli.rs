//! Command-line surface.
//!
//! Every flag may also come from a TOML file given with `--config`: global
//! flags as top-level keys, subcommand flags in a table named after the
//! subcommand. Flags on the command line override the file.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::dataset::{load_dataset, preprocess, single_outlier_threshold, ColumnMap, CoordScaling, PreprocessStep, SpatialSample};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment_grid, Algorithm, ExperimentGrid};
use crate::field_sim::{simulate, RngStream, SimulationConfig};
use crate::inference::{AxisMode, HypothesisPair, KernelFamily, OptimizerConfig};
use crate::kernels::KernelParams;
use crate::output::{emit_result, OutputFormat, Report};
use crate::test_parametric::parametric_bootstrap_test;
use crate::test_rotational::{rotational_test, RotationalConfig};
use crate::variogram::{default_distance_edges, directional_variogram_profile};

/// Parses an angle in radians: `0.3`, `pi`, `pi/36`, `3pi/4`, `-pi/2`, or
/// degrees as `45deg`.
pub fn parse_angle(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim().to_ascii_lowercase().replace('π', "pi");
    let bad = || format!("cannot parse angle `{s}`");
    if let Some(d) = t.strip_suffix("deg") {
        return d.trim().parse::<f64>().map(|v| v.to_radians()).map_err(|_| bad());
    }
    let v = if let Some(pos) = t.find("pi") {
        let (coef, rest) = t.split_at(pos);
        let coef = coef.trim().trim_end_matches('*');
        let c = match coef {
            "" | "+" => 1.0,
            "-" => -1.0,
            c => c.parse::<f64>().map_err(|_| bad())?,
        };
        let rest = rest[2..].trim();
        let div = match rest.strip_prefix('/') {
            Some(d) => d.trim().parse::<f64>().map_err(|_| bad())?,
            None if rest.is_empty() => 1.0,
            None => return Err(bad()),
        };
        c * PI / div
    } else {
        t.parse::<f64>().map_err(|_| bad())?
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

fn parse_step(s: &str) -> std::result::Result<StepSpec, String> {
    let s = s.trim();
    let (name, arg) = match s.split_once('=') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (s, None),
    };
    let step = match (name, arg) {
        ("log", None) => StepSpec::Step(PreprocessStep::LogValues),
        ("standardize", None) => StepSpec::Step(PreprocessStep::StandardizeValues),
        ("unit-coords", None) => StepSpec::Step(PreprocessStep::StandardizeCoords {
            scaling: CoordScaling::UnitInterval,
        }),
        ("zscore-coords", None) => StepSpec::Step(PreprocessStep::StandardizeCoords {
            scaling: CoordScaling::ZScore,
        }),
        ("drop-outliers", Some(k)) => StepSpec::Step(PreprocessStep::DropOutliers {
            threshold: k.parse().map_err(|_| format!("bad outlier threshold `{k}`"))?,
        }),
        ("drop-single-outlier", None) => StepSpec::DropSingleOutlier,
        _ => {
            return Err(format!(
                "unknown preprocessing step `{s}` (expected log, standardize, unit-coords, zscore-coords, drop-outliers=K, drop-single-outlier)"
            ))
        }
    };
    Ok(step)
}

/// A preprocessing step as given on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSpec {
    Step(PreprocessStep),
    /// Drops exactly the most extreme value, with the threshold derived
    /// from the data and recorded in the log.
    DropSingleOutlier,
}

impl StepSpec {
    /// Command-line spelling, accepted back by the `--preprocess` parser.
    pub fn token(&self) -> String {
        match self {
            StepSpec::Step(PreprocessStep::LogValues) => "log".into(),
            StepSpec::Step(PreprocessStep::StandardizeValues) => "standardize".into(),
            StepSpec::Step(PreprocessStep::StandardizeCoords {
                scaling: CoordScaling::UnitInterval,
            }) => "unit-coords".into(),
            StepSpec::Step(PreprocessStep::StandardizeCoords {
                scaling: CoordScaling::ZScore,
            }) => "zscore-coords".into(),
            StepSpec::Step(PreprocessStep::DropOutliers { threshold }) => format!("drop-outliers={threshold}"),
            StepSpec::DropSingleOutlier => "drop-single-outlier".into(),
        }
    }
}

impl Serialize for StepSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.token())
    }
}

#[derive(Debug, Parser)]
#[command(name = "aniso", version, about = "Hypothesis tests for anisotropy in spatial data")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    /// TOML file with default flag values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Simulate a Gaussian field on the unit square.
    Simulate(SimulateArgs),
    /// Parametric bootstrap likelihood-ratio test.
    TestParametric(ParametricArgs),
    /// Rotational sampling least-squares test.
    TestRotational(RotationalArgs),
    /// Directional variogram table.
    Variogram(VariogramArgs),
    /// Monte Carlo power study.
    BenchGrid(GridArgs),
    /// Load and preprocess a dataset.
    Ingest(DataArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::TestParametric(_) => "test-parametric",
            Command::TestRotational(_) => "test-rotational",
            Command::Variogram(_) => "variogram",
            Command::BenchGrid(_) => "bench-grid",
            Command::Ingest(_) => "ingest",
        }
    }
}

pub const SUBCOMMANDS: [&str; 6] = ["simulate", "test-parametric", "test-rotational", "variogram", "bench-grid", "ingest"];

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    /// Rotation angle of the anisotropy matrix.
    #[arg(long, default_value = "0", value_parser = parse_angle)]
    pub eta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub signal_variance: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_variance: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mean: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Delimited text file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "x")]
    pub x_col: String,
    #[arg(long, default_value = "y")]
    pub y_col: String,
    #[arg(long, default_value = "value")]
    pub value_col: String,
    /// Comma-separated steps applied in order: log, standardize,
    /// unit-coords, zscore-coords, drop-outliers=K, drop-single-outlier.
    #[arg(long, value_delimiter = ',', value_parser = parse_step)]
    pub preprocess: Vec<StepSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AltFamily {
    /// Two perpendicular axes.
    Elliptic,
    /// Axes {0, π/2} and {π/4, 3π/4} with one length scale per pair.
    DiagonalCardinal,
}

impl AltFamily {
    fn family(self) -> KernelFamily {
        match self {
            AltFamily::Elliptic => KernelFamily::Elliptic,
            AltFamily::DiagonalCardinal => KernelFamily::diagonal_vs_cardinal(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct OptimizerArgs {
    /// Random restarts per fit besides the warm and moment-based starts.
    #[arg(long, default_value_t = 3)]
    pub random_starts: usize,
}

impl OptimizerArgs {
    fn config(&self) -> OptimizerConfig {
        OptimizerConfig {
            random_starts: self.random_starts,
            ..OptimizerConfig::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ParametricArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = AltFamily::Elliptic)]
    pub alt: AltFamily,
    /// Axis directions of the alternative (default: the family's axes).
    #[arg(long, value_delimiter = ',', value_parser = parse_angle, allow_negative_numbers = true)]
    pub axes: Vec<f64>,
    /// Estimate the axis orientation.
    #[arg(long, conflicts_with = "range_halfwidth")]
    pub free: bool,
    /// Let the axes rotate within this half-width of `--axes`.
    #[arg(long, value_parser = parse_angle)]
    pub range_halfwidth: Option<f64>,
    #[arg(long = "b", default_value_t = 200)]
    pub b: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub optimizer: OptimizerArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct RotationalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = AltFamily::Elliptic)]
    pub alt: AltFamily,
    #[arg(long, default_value = "0", value_parser = parse_angle, allow_negative_numbers = true)]
    pub eta: f64,
    #[arg(long, default_value = "pi/36", value_parser = parse_angle)]
    pub alpha: f64,
    #[arg(long = "b", default_value_t = 200)]
    pub b: usize,
    /// Pair subsample size; 0 keeps all pairs.
    #[arg(long, default_value_t = 10_000)]
    pub pair_cap: usize,
    #[arg(long, value_parser = parse_angle)]
    pub range_halfwidth: Option<f64>,
    #[arg(long)]
    pub exclude_self_pairs: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub optimizer: OptimizerArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct VariogramArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', value_parser = parse_angle, default_value = "0,pi/4,pi/2,3pi/4")]
    pub directions: Vec<f64>,
    #[arg(long, default_value = "pi/8", value_parser = parse_angle)]
    pub angle_tolerance: f64,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Upper distance edge (default: half the largest pairwise distance).
    #[arg(long)]
    pub max_distance: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct GridArgs {
    #[arg(long, value_delimiter = ',', default_value = "200,500,1000")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
    pub lambda2: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    pub repetitions: usize,
    #[arg(long = "b", default_value_t = 200)]
    pub b: usize,
    #[arg(long, default_value = "pi/36", value_parser = parse_angle)]
    pub alpha: f64,
    #[arg(long, value_delimiter = ',', value_enum, default_value = "parametric,rotational")]
    pub algorithms: Vec<Algorithm>,
    #[arg(long, default_value_t = 10_000)]
    pub pair_cap: usize,
    /// Reuse one coordinate design per sample size across repetitions.
    #[arg(long)]
    pub fixed_coords: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub optimizer: OptimizerArgs,
}

impl clap::ValueEnum for Algorithm {
    fn value_variants<'a>() -> &'a [Self] {
        &[Algorithm::Parametric, Algorithm::Rotational]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

fn toml_to_flags(table: &toml::Table, out: &mut Vec<String>) -> Result<()> {
    for (key, value) in table {
        if value.is_table() {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &toml::Value| -> Result<String> {
            match v {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(f) => Ok(f.to_string()),
                toml::Value::Boolean(b) => Ok(b.to_string()),
                other => Err(Error::Config(format!("unsupported value for `{key}`: {other}"))),
            }
        };
        match value {
            toml::Value::Boolean(true) => out.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
                out.push(format!("{flag}={}", parts.join(",")));
            }
            v => out.push(format!("{flag}={}", scalar(v)?)),
        }
    }
    Ok(())
}

const VALUE_GLOBALS: [&str; 5] = ["--seed", "--threads", "--output", "--format", "--config"];

/// Position of the subcommand token in `args`.
fn subcommand_index(args: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let a = args[i].as_str();
        if SUBCOMMANDS.contains(&a) {
            return Some(i);
        }
        if VALUE_GLOBALS.contains(&a) {
            i += 1;
        }
        i += 1;
    }
    None
}

/// `--config` value among the global flags before the subcommand.
fn config_path(args: &[String]) -> Option<PathBuf> {
    let end = subcommand_index(args).unwrap_or(args.len());
    let mut it = args[1..end].iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Parses `args`, folding in the `--config` file when one is given.
pub fn parse_args(args: &[String]) -> std::result::Result<Cli, CliError> {
    let (Some(path), Some(idx)) = (config_path(args), subcommand_index(args)) else {
        return Cli::try_parse_from(args).map_err(CliError::Usage);
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Run(Error::Config(format!("{}: {e}", path.display()))))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Run(Error::Config(e.to_string())))?;
    let sub = args[idx].as_str();
    // File values come first so that every command-line flag, global or
    // not, appears later and wins.
    let mut merged = vec![args[0].clone()];
    toml_to_flags(&table, &mut merged).map_err(CliError::Run)?;
    merged.push(sub.to_owned());
    if let Some(t) = table.get(sub).and_then(toml::Value::as_table) {
        toml_to_flags(t, &mut merged).map_err(CliError::Run)?;
    }
    merged.extend(args[1..idx].iter().cloned());
    merged.extend(args[idx + 1..].iter().cloned());
    Cli::try_parse_from(&merged).map_err(CliError::Usage)
}

#[derive(Debug)]
pub enum CliError {
    Usage(clap::Error),
    Run(Error),
}

fn load(args: &DataArgs) -> Result<SpatialSample> {
    let columns = ColumnMap {
        x: args.x_col.clone(),
        y: args.y_col.clone(),
        value: args.value_col.clone(),
    };
    let mut sample = load_dataset(&args.data, &columns)?;
    for spec in &args.preprocess {
        let step = match spec {
            StepSpec::Step(s) => *s,
            StepSpec::DropSingleOutlier => PreprocessStep::DropOutliers {
                threshold: single_outlier_threshold(sample.values())?,
            },
        };
        sample = preprocess(&sample, &[step])?;
    }
    Ok(sample)
}

fn axis_mode(args: &ParametricArgs, family: &KernelFamily) -> AxisMode {
    let axes = if args.axes.is_empty() {
        match family {
            KernelFamily::MultiAxis { axes, .. } => axes.clone(),
            _ => vec![0.0, PI / 2.0],
        }
    } else if *family == KernelFamily::Elliptic && args.axes.len() == 1 {
        vec![args.axes[0], args.axes[0] + PI / 2.0]
    } else {
        args.axes.clone()
    };
    if args.free {
        AxisMode::Free(family.n_axes())
    } else if let Some(hw) = args.range_halfwidth {
        AxisMode::Range {
            centers: axes,
            half_width: hw,
        }
    } else {
        AxisMode::Fixed(axes)
    }
}

fn echo(cli: &Cli) -> Result<serde_json::Value> {
    #[derive(Serialize)]
    struct Echo<'a> {
        seed: u64,
        #[serde(flatten)]
        command: &'a Command,
    }
    Ok(serde_json::to_value(Echo {
        seed: cli.seed,
        command: &cli.command,
    })?)
}

fn write_out(cli: &Cli, report: &Report<'_>) -> Result<()> {
    match &cli.output {
        Some(path) => {
            emit_result(report, cli.format, path)?;
        }
        None => {
            let text = match cli.format {
                OutputFormat::Json => report.to_json()?,
                OutputFormat::Csv => report.to_csv(),
            };
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

/// Executes a parsed command.
pub fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let stream = RngStream::new(cli.seed, 0);
    let config = echo(cli)?;
    match &cli.command {
        Command::Simulate(a) => {
            let kernel = KernelParams::elliptic(a.signal_variance, [a.lambda1, a.lambda2], a.eta, a.noise_variance)?;
            let cfg = SimulationConfig {
                mean: a.mean,
                ..SimulationConfig::unit_square(a.n, kernel)
            };
            let (coords, z) = simulate(&cfg, stream)?;
            let sample = SpatialSample::new(coords, z)?;
            write_out(cli, &Report::Sample { config, sample: &sample })?;
        }
        Command::Ingest(a) => {
            let sample = load(a)?;
            write_out(cli, &Report::Sample { config, sample: &sample })?;
        }
        Command::TestParametric(a) => {
            let sample = load(&a.data)?;
            let family = a.alt.family();
            let hyp = HypothesisPair::new(family.clone(), axis_mode(a, &family))?;
            let result = parametric_bootstrap_test(&sample, &hyp, a.b, &a.optimizer.config(), stream)?;
            write_out(
                cli,
                &Report::TestResult {
                    command: cli.command.name(),
                    config,
                    preprocessing: sample.preprocessing_log(),
                    result: &result,
                },
            )?;
        }
        Command::TestRotational(a) => {
            let sample = load(&a.data)?;
            let cfg = RotationalConfig {
                eta: a.eta,
                alpha: a.alpha,
                b: a.b,
                pair_subsample: (a.pair_cap > 0).then_some(a.pair_cap),
                range_halfwidth: a.range_halfwidth,
                include_self_pairs: !a.exclude_self_pairs,
                family: a.alt.family(),
            };
            let result = rotational_test(&sample, &cfg, &a.optimizer.config(), stream)?;
            write_out(
                cli,
                &Report::TestResult {
                    command: cli.command.name(),
                    config,
                    preprocessing: sample.preprocessing_log(),
                    result: &result,
                },
            )?;
        }
        Command::Variogram(a) => {
            let sample = load(&a.data)?;
            let edges = match a.max_distance {
                Some(top) if top > 0.0 && a.bins > 0 => (0..=a.bins).map(|k| top * k as f64 / a.bins as f64).collect(),
                Some(top) => return Err(crate::error::invalid(format!("bad distance range {top} with {} bins", a.bins))),
                None => default_distance_edges(&sample, a.bins)?,
            };
            let rows = directional_variogram_profile(&sample, &a.directions, &edges, a.angle_tolerance)?;
            write_out(
                cli,
                &Report::Variogram {
                    config,
                    preprocessing: sample.preprocessing_log(),
                    rows: &rows,
                },
            )?;
        }
        Command::BenchGrid(a) => {
            let grid = ExperimentGrid {
                sample_sizes: a.sizes.clone(),
                lambda2_values: a.lambda2.clone(),
                repetitions: a.repetitions,
                b: a.b,
                alpha: a.alpha,
                seed: cli.seed,
                pair_subsample: (a.pair_cap > 0).then_some(a.pair_cap),
                optimizer: a.optimizer.config(),
                redraw_coords: !a.fixed_coords,
                ..ExperimentGrid::default()
            };
            let table = run_experiment_grid(&grid, &a.algorithms)?;
            write_out(cli, &Report::ExperimentTable { config, table: &table })?;
        }
    }
    log::info!("{} finished in {:.2?}", cli.command.name(), started.elapsed());
    Ok(())
}

/// Machine-readable error record.
pub fn error_record(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

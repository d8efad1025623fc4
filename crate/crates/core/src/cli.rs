//! Command-line driver: load inputs, run an optimiser, write reports.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::backends::{export_design, BackendKind, ExportDocument, ResourceKind, ResourceVector};
use crate::evaluation::{
    batch_makespan, design_space_size, objective_throughput, partition_bandwidth, partition_latency,
    partition_resources, Objective, Platform,
};
use crate::hdgraph::{build_hdgraph, DesignPoint, HdGraph};
use crate::network::{parse_network, NetworkModel};
use crate::optimizers::{
    anneal_restarts, brute_force, rule_based, AnnealingConfig, OptimiseError, OptimiserResult,
    RuleConfig, TrajectorySample, DEFAULT_SPACE_CAP,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BATCH_SIZE: u64 = 256;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 10;
pub const EXIT_INFEASIBLE_INIT: i32 = 20;
pub const EXIT_NO_FEASIBLE: i32 = 21;
pub const EXIT_SPACE_TOO_LARGE: i32 = 30;
pub const EXIT_OUTPUT: i32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimiserKind {
    Brute,
    Annealing,
    Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Latency,
    Throughput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model_path: PathBuf,
    pub platform_path: PathBuf,
    pub output_dir: PathBuf,
    pub backend: BackendKind,
    pub optimiser: OptimiserKind,
    pub objective: ObjectiveKind,
    pub batch_size: u64,
    pub seed: u64,
    pub annealing: AnnealingConfig,
    pub restarts: usize,
    pub jobs: Option<usize>,
    pub brute_cap: u64,
    pub report_formats: BTreeSet<ReportFormat>,
}

impl RunConfig {
    /// Defaults for everything except the paths and backend.
    pub fn new(model: impl Into<PathBuf>, platform: impl Into<PathBuf>, out: impl Into<PathBuf>, backend: BackendKind) -> Self {
        RunConfig {
            model_path: model.into(),
            platform_path: platform.into(),
            output_dir: out.into(),
            backend,
            optimiser: OptimiserKind::Rule,
            objective: ObjectiveKind::Latency,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            annealing: AnnealingConfig::default(),
            restarts: 1,
            jobs: None,
            brute_cap: DEFAULT_SPACE_CAP,
            report_formats: BTreeSet::from([ReportFormat::Json]),
        }
    }

    pub fn objective(&self) -> Objective {
        match self.objective {
            ObjectiveKind::Latency => Objective::Latency,
            ObjectiveKind::Throughput => Objective::Throughput {
                batch: self.batch_size,
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Optimise(#[from] OptimiseError),
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Optimise(OptimiseError::InitialInfeasible(_)) => EXIT_INFEASIBLE_INIT,
            CliError::Optimise(OptimiseError::NoFeasiblePoint) => EXIT_NO_FEASIBLE,
            CliError::Optimise(OptimiseError::SpaceTooLarge { .. }) => EXIT_SPACE_TOO_LARGE,
            CliError::Optimise(OptimiseError::InvalidConfig(_)) => EXIT_INPUT,
            CliError::Output { .. } => EXIT_OUTPUT,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResourcePct {
    pub dsp: f64,
    pub bram: f64,
    pub lut: f64,
    pub ff: f64,
}

fn pct(used: u64, available: u64) -> f64 {
    if used == 0 {
        0.0
    } else {
        100.0 * used as f64 / available as f64
    }
}

impl ResourcePct {
    fn of(used: &ResourceVector, available: &ResourceVector) -> Self {
        let p = |k: ResourceKind| pct(used.get(k), available.get(k));
        ResourcePct {
            dsp: p(ResourceKind::Dsp),
            bram: p(ResourceKind::Bram),
            lut: p(ResourceKind::Lut),
            ff: p(ResourceKind::Ff),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionReport {
    pub first_layer: String,
    pub last_layer: String,
    pub nodes: usize,
    pub latency_s: f64,
    pub resources: ResourceVector,
    pub resource_pct: ResourcePct,
    pub bandwidth_bytes_per_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimeBreakdown {
    pub execution_s: f64,
    pub reconfiguration_s: f64,
    pub makespan_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub model: String,
    pub platform: String,
    pub backend: BackendKind,
    pub optimiser: OptimiserKind,
    pub objective: ObjectiveKind,
    /// Batch the time breakdown and throughput refer to; 1 for the latency objective.
    pub batch: u64,
    pub seed: u64,
    pub objective_value: f64,
    pub latency_s: f64,
    pub throughput_imgs_per_s: f64,
    pub cuts: Vec<usize>,
    pub partitions: Vec<PartitionReport>,
    pub time_breakdown: TimeBreakdown,
    /// Decimal string; the count overflows every fixed-width integer for deep nets.
    pub design_space_size: String,
    pub evaluations: u64,
    pub trajectory: Vec<TrajectorySample>,
    pub design: ExportDocument,
}

/// Everything a run produced, before it is written anywhere.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub point: DesignPoint,
    pub wall_time_s: f64,
}

pub fn load_model(path: &Path) -> Result<NetworkModel, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read model file {}: {e}", path.display())))?;
    parse_network(&text).map_err(|e| CliError::Input(format!("model file {}: {e}", path.display())))
}

pub fn load_platform(path: &Path) -> Result<Platform, CliError> {
    Platform::load(path).map_err(|e| CliError::Input(e.to_string()))
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Input(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Run the configured optimiser on an already-built graph.
pub fn optimise(
    graph: &HdGraph,
    platform: &Platform,
    objective: Objective,
    config: &RunConfig,
) -> Result<OptimiserResult, CliError> {
    let result = with_pool(config.jobs, || match config.optimiser {
        OptimiserKind::Brute => brute_force(graph, platform, objective, config.brute_cap),
        OptimiserKind::Rule => rule_based(graph, platform, objective, &RuleConfig::default()),
        OptimiserKind::Annealing => {
            let cfg = AnnealingConfig {
                seed: config.seed,
                ..config.annealing.clone()
            };
            anneal_restarts(graph, platform, objective, &cfg, config.restarts).map(|s| s.best)
        }
    })?;
    Ok(result?)
}

/// Summarise an optimiser result against the run's platform and objective.
pub fn build_report(
    model: &NetworkModel,
    platform: &Platform,
    config: &RunConfig,
    graph: &HdGraph,
    result: &OptimiserResult,
) -> Result<Report, CliError> {
    let point = &result.best_point;
    let objective = config.objective();
    let batch = match objective {
        Objective::Latency => 1,
        Objective::Throughput { batch } => batch,
    };
    let parts = point.partitions();
    let latencies: Vec<f64> = parts
        .iter()
        .map(|p| partition_latency(p, &point.graph, platform))
        .collect();
    let cuts = point.cutset.len();
    let execution_s = batch as f64 * latencies.iter().sum::<f64>();
    let reconfiguration_s = cuts as f64 * platform.reconfig_time_s;
    let makespan_s = batch_makespan(&latencies, cuts, platform.reconfig_time_s, batch);
    let partitions = parts
        .iter()
        .zip(&latencies)
        .map(|(p, &latency_s)| {
            let resources = partition_resources(p, &point.graph);
            PartitionReport {
                first_layer: point.graph.nodes[p.start].layer.name.clone(),
                last_layer: point.graph.nodes[p.end - 1].layer.name.clone(),
                nodes: p.len(),
                latency_s,
                resource_pct: ResourcePct::of(&resources, &platform.resources),
                resources,
                bandwidth_bytes_per_s: partition_bandwidth(p, &point.graph, platform),
            }
        })
        .collect();
    let design = export_design(point, platform).map_err(|e| CliError::Output {
        path: "design.json".into(),
        message: e.to_string(),
    })?;
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        model: model.name.clone(),
        platform: platform.name.clone(),
        backend: config.backend,
        optimiser: config.optimiser,
        objective: config.objective,
        batch,
        seed: config.seed,
        objective_value: result.best_objective,
        latency_s: batch_makespan(&latencies, cuts, platform.reconfig_time_s, 1),
        throughput_imgs_per_s: -objective_throughput(point, platform, batch),
        cuts: point.cutset.edges().to_vec(),
        partitions,
        time_breakdown: TimeBreakdown {
            execution_s,
            reconfiguration_s,
            makespan_s,
        },
        design_space_size: design_space_size(graph).to_string(),
        evaluations: result.evaluations,
        trajectory: result.trajectory.clone(),
        design,
    })
}

/// Load, optimise and build the report without touching the output directory.
pub fn execute(config: &RunConfig) -> Result<RunOutcome, CliError> {
    if config.batch_size == 0 {
        return Err(CliError::Input("batch size must be at least 1".into()));
    }
    let model = load_model(&config.model_path)?;
    let platform = load_platform(&config.platform_path)?;
    let graph = build_hdgraph(&model, config.backend.descriptor())
        .map_err(|e| CliError::Input(format!("model file {}: {e}", config.model_path.display())))?;
    let result = optimise(&graph, &platform, config.objective(), config)?;
    let report = build_report(&model, &platform, config, &graph, &result)?;
    Ok(RunOutcome {
        report,
        point: result.best_point,
        wall_time_s: result.wall_time_s,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Output {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Seventeen significant digits, enough to round-trip any f64.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialise");
    s.push('\n');
    s
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 fields")
}

pub fn report_csv(report: &Report) -> String {
    let mut rows = vec![[
        "partition", "first_layer", "last_layer", "nodes", "latency_s", "dsp", "bram", "lut", "ff",
        "dsp_pct", "bram_pct", "lut_pct", "ff_pct", "bandwidth_bytes_per_s",
    ]
    .map(String::from)
    .to_vec()];
    for (i, p) in report.partitions.iter().enumerate() {
        rows.push(vec![
            i.to_string(),
            p.first_layer.clone(),
            p.last_layer.clone(),
            p.nodes.to_string(),
            fmt_real(p.latency_s),
            p.resources.dsp.to_string(),
            p.resources.bram.to_string(),
            p.resources.lut.to_string(),
            p.resources.ff.to_string(),
            fmt_real(p.resource_pct.dsp),
            fmt_real(p.resource_pct.bram),
            fmt_real(p.resource_pct.lut),
            fmt_real(p.resource_pct.ff),
            fmt_real(p.bandwidth_bytes_per_s),
        ]);
    }
    csv_string(rows)
}

pub fn trajectory_csv(trajectory: &[TrajectorySample]) -> String {
    let mut rows = vec![vec!["iteration".into(), "objective".into(), "best".into()]];
    rows.extend(
        trajectory
            .iter()
            .map(|s| vec![s.iteration.to_string(), fmt_real(s.objective), fmt_real(s.best)]),
    );
    csv_string(rows)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Output {
        path: dir.display().to_string(),
        message: e.to_string(),
    })
}

/// Run one optimisation and write report.json, report.csv (if requested),
/// design.json, trajectory.csv and metadata.json into the output directory.
pub fn run(config: &RunConfig) -> Result<RunOutcome, CliError> {
    let outcome = execute(config)?;
    let dir = &config.output_dir;
    create_dir(dir)?;
    if config.report_formats.contains(&ReportFormat::Json) {
        write(&dir.join("report.json"), &to_json(&outcome.report))?;
    }
    if config.report_formats.contains(&ReportFormat::Csv) {
        write(&dir.join("report.csv"), &report_csv(&outcome.report))?;
    }
    write(&dir.join("design.json"), &to_json(&outcome.report.design))?;
    write(&dir.join("trajectory.csv"), &trajectory_csv(&outcome.report.trajectory))?;
    let metadata = serde_json::json!({ "wall_time_s": outcome.wall_time_s });
    write(&dir.join("metadata.json"), &to_json(&metadata))?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub batch: u64,
    pub throughput_imgs_per_s: f64,
    pub latency_s: f64,
    pub partition_count: usize,
}

impl SweepRow {
    /// Throughput and single-input latency of a fixed design at `batch`.
    pub fn for_design(point: &DesignPoint, platform: &Platform, batch: u64) -> SweepRow {
        let latencies: Vec<f64> = point
            .partitions()
            .iter()
            .map(|p| partition_latency(p, &point.graph, platform))
            .collect();
        let cuts = point.cutset.len();
        SweepRow {
            batch,
            throughput_imgs_per_s: -objective_throughput(point, platform, batch),
            latency_s: batch_makespan(&latencies, cuts, platform.reconfig_time_s, 1),
            partition_count: cuts + 1,
        }
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = vec![vec![
        "batch".into(),
        "throughput_imgs_per_s".into(),
        "latency_s".into(),
        "partition_count".into(),
    ]];
    out.extend(rows.iter().map(|r| {
        vec![
            r.batch.to_string(),
            fmt_real(r.throughput_imgs_per_s),
            fmt_real(r.latency_s),
            r.partition_count.to_string(),
        ]
    }));
    csv_string(out)
}

/// Re-optimise for the throughput objective at every batch size and write
/// sweep.csv into the output directory.
pub fn sweep_batch(config: &RunConfig, batches: &[u64]) -> Result<Vec<SweepRow>, CliError> {
    if config.objective != ObjectiveKind::Throughput {
        return Err(CliError::Input("sweep-batch needs the throughput objective".into()));
    }
    if batches.is_empty() {
        return Err(CliError::Input("sweep-batch needs at least one batch size".into()));
    }
    let mut rows = Vec::with_capacity(batches.len());
    for &batch in batches {
        let cfg = RunConfig {
            batch_size: batch,
            ..config.clone()
        };
        let outcome = execute(&cfg)?;
        let platform = load_platform(&cfg.platform_path)?;
        rows.push(SweepRow::for_design(&outcome.point, &platform, batch));
    }
    create_dir(&config.output_dir)?;
    write(&config.output_dir.join("sweep.csv"), &sweep_csv(&rows))?;
    Ok(rows)
}

#[derive(Debug, Parser)]
#[command(name = "foldmap", version, about = "Folding and partitioning search for streaming CNN accelerators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimise one network for one platform and backend.
    Optimise(OptimiseArgs),
    /// Re-optimise for throughput at several batch sizes.
    SweepBatch {
        #[command(flatten)]
        args: OptimiseArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 16, 256, 4096])]
        batches: Vec<u64>,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct BackendArg(pub BackendKind);

impl FromStr for BackendArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<BackendKind>().map(BackendArg).map_err(|e| e.to_string())
    }
}

impl fmt::Display for BackendArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Args)]
pub struct OptimiseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub platform: PathBuf,
    /// fpgaconvnet, finn or hls4ml.
    #[arg(long)]
    pub backend: BackendArg,
    #[arg(long, value_enum, default_value = "rule")]
    pub optimiser: OptimiserKind,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveKind>,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for restarts and brute-force shards.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Independent annealing runs with consecutive seeds.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, default_value_t = DEFAULT_SPACE_CAP)]
    pub brute_cap: u64,
    #[arg(long)]
    pub k_start: Option<f64>,
    #[arg(long)]
    pub k_min: Option<f64>,
    #[arg(long)]
    pub cooling_rate: Option<f64>,
    #[arg(long)]
    pub min_temp_iterations: Option<u64>,
    /// Keep annealing at the minimum temperature until this many seconds have passed.
    #[arg(long)]
    pub time_budget: Option<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "json")]
    pub report_formats: Vec<ReportFormat>,
}

impl OptimiseArgs {
    pub fn into_config(self, default_objective: ObjectiveKind) -> RunConfig {
        let defaults = AnnealingConfig::default();
        RunConfig {
            model_path: self.model,
            platform_path: self.platform,
            output_dir: self.out,
            backend: self.backend.0,
            optimiser: self.optimiser,
            objective: self.objective.unwrap_or(default_objective),
            batch_size: self.batch_size,
            seed: self.seed,
            annealing: AnnealingConfig {
                k_start: self.k_start.unwrap_or(defaults.k_start),
                k_min: self.k_min.unwrap_or(defaults.k_min),
                cooling_rate: self.cooling_rate.unwrap_or(defaults.cooling_rate),
                min_temp_iterations: self.min_temp_iterations.unwrap_or(defaults.min_temp_iterations),
                time_budget_s: self.time_budget,
                ..defaults
            },
            restarts: self.restarts,
            jobs: self.jobs,
            brute_cap: self.brute_cap,
            report_formats: self.report_formats.into_iter().collect(),
        }
    }
}

/// Parse arguments, run, print a summary or the error, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Optimise(args) => {
            let config = args.into_config(ObjectiveKind::Latency);
            run(&config).map(|o| {
                let r = &o.report;
                println!(
                    "{} on {} ({}): objective {} | latency {} s | {} partition(s) | reports in {}",
                    r.model,
                    r.platform,
                    r.backend,
                    r.objective_value,
                    r.latency_s,
                    r.partitions.len(),
                    config.output_dir.display(),
                );
            })
        }
        Command::SweepBatch { args, batches } => {
            let config = args.into_config(ObjectiveKind::Throughput);
            sweep_batch(&config, &batches).map(|rows| print!("{}", sweep_csv(&rows)))
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

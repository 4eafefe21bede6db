//! Layered experiment configuration: an optional TOML file provides the
//! base, command-line flags override it, and built-in defaults fill the rest.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Deserialize;
use vmsched::model::ClusterConfig;
use vmsched::scheduler::SchedulerKind;
use vmsched::trace::{FilterKind, SynthConfig, WeightedFlavor};
use vmsched::VmSpec;

use crate::CliError;

/// Imbalance threshold, either absolute or scaled by the PM count ("0.3N").
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaExpr {
    PerPm(f64),
    Absolute(f64),
}

impl AlphaExpr {
    pub fn resolve(&self, n_pms: usize) -> f64 {
        match *self {
            AlphaExpr::PerPm(x) => x * n_pms as f64,
            AlphaExpr::Absolute(x) => x,
        }
    }
}

impl FromStr for AlphaExpr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (num, per_pm) = match s.strip_suffix(['N', 'n']) {
            Some(prefix) => (prefix, true),
            None => (s, false),
        };
        let value: f64 = num
            .parse()
            .map_err(|_| format!("cannot parse alpha {s:?}; expected a number or '<number>N'"))?;
        if !value.is_finite() || value < 0.0 {
            return Err(format!("alpha must be finite and nonnegative, got {s:?}"));
        }
        Ok(if per_pm {
            AlphaExpr::PerPm(value)
        } else {
            AlphaExpr::Absolute(value)
        })
    }
}

impl fmt::Display for AlphaExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaExpr::PerPm(x) => write!(f, "{x}N"),
            AlphaExpr::Absolute(x) => write!(f, "{x}"),
        }
    }
}

/// Parses a comma-separated alpha list, e.g. "0.05N,0.1N,0.2N,0.3N".
pub fn parse_alpha_list(s: &str) -> Result<Vec<AlphaExpr>, String> {
    let alphas = s
        .split(',')
        .map(|part| part.parse())
        .collect::<Result<Vec<AlphaExpr>, _>>()?;
    if alphas.is_empty() {
        return Err("alpha list is empty".into());
    }
    Ok(alphas)
}

/// Where the request stream comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    Csv(PathBuf),
    Synth(SynthConfig),
}

/// Reassigner settings before the plan is known (the plan depends on the
/// trace's flavor set, resolved by the command).
#[derive(Debug, Clone, PartialEq)]
pub struct ReassignerSettings {
    pub enabled: bool,
    pub lambda: f64,
    /// One entry normally; several make a sweep with one report row per value.
    pub alphas: Vec<AlphaExpr>,
    pub emergent: bool,
    pub imbalance: bool,
    pub partition_at_start: bool,
    /// Forced (c1, m1) split overriding the solved plan.
    pub plan_override: Option<(u32, u32)>,
}

/// The fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub cluster: ClusterConfig,
    pub schedulers: Vec<SchedulerKind>,
    pub restarts: u32,
    pub reassigner: ReassignerSettings,
    pub trace_source: TraceSource,
    pub scenarios: usize,
    pub seed: u64,
    pub filter: FilterKind,
    pub out_dir: Option<PathBuf>,
    pub json: bool,
}

/// Flags shared by the experiment subcommands.
#[derive(Debug, Default, clap::Args)]
pub struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trace CSV to replay instead of a synthetic trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Number of physical machines.
    #[arg(long)]
    pub pms: Option<usize>,
    /// CPU capacity per PM (U).
    #[arg(long = "pm-cpu")]
    pub pm_cpu: Option<u32>,
    /// Memory capacity per PM (G).
    #[arg(long = "pm-mem")]
    pub pm_mem: Option<u32>,
    /// NUMA nodes per PM.
    #[arg(long)]
    pub numa: Option<u32>,
    /// Scheduler to benchmark: ff, bf, bf2, random. Repeatable.
    #[arg(long = "scheduler")]
    pub schedulers: Vec<String>,
    /// Benchmark each scheduler with the reassigner as well.
    #[arg(long)]
    pub reassigner: bool,
    /// Imbalance threshold, absolute or per-PM ("0.3N"); comma-separate for a sweep.
    #[arg(long)]
    pub alpha: Option<String>,
    /// CPU-vs-memory weight of the region-sizing objective, in [0, 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Number of sampled window start points.
    #[arg(long)]
    pub scenarios: Option<usize>,
    /// Base seed for sampling, synthesis, and random rollouts.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Request filter: all, ci, mi, small, large.
    #[arg(long)]
    pub filter: Option<String>,
    /// Directory for report files (reports go to stdout without it).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write (or print) the JSON mirror of the report.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    cluster: Option<ClusterSection>,
    schedulers: Option<SchedulersSection>,
    reassigner: Option<ReassignerSection>,
    trace: Option<TraceSection>,
    experiment: Option<ExperimentSection>,
    output: Option<OutputSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterSection {
    pms: Option<usize>,
    pm_cpu: Option<u32>,
    pm_mem: Option<u32>,
    numa: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchedulersSection {
    kinds: Option<Vec<String>>,
    bf2_w_cpu: Option<f64>,
    bf2_w_mem: Option<f64>,
    restarts: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReassignerSection {
    enabled: Option<bool>,
    lambda: Option<f64>,
    alpha: Option<String>,
    emergent: Option<bool>,
    imbalance: Option<bool>,
    partition_at_start: Option<bool>,
    plan_c1: Option<u32>,
    plan_m1: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceSection {
    csv: Option<PathBuf>,
    synth: Option<SynthSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSection {
    length: Option<usize>,
    delete_prob: Option<f64>,
    seed: Option<u64>,
    flavors: Option<Vec<FlavorEntry>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlavorEntry {
    cpu: u32,
    mem: u32,
    weight: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    scenarios: Option<usize>,
    seed: Option<u64>,
    filter: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
    json: Option<bool>,
}

pub fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
        }
        None => Ok(FileConfig::default()),
    }
}

pub fn parse_scheduler(
    name: &str,
    bf2_w_cpu: f64,
    bf2_w_mem: f64,
    restarts: u32,
) -> Result<SchedulerKind, CliError> {
    match name.to_ascii_lowercase().as_str() {
        "ff" | "first-fit" => Ok(SchedulerKind::FirstFit),
        "bf" | "best-fit" => Ok(SchedulerKind::BestFit),
        "bf2" => Ok(SchedulerKind::Bf2 {
            w_cpu: bf2_w_cpu,
            w_mem: bf2_w_mem,
        }),
        "random" | "random-search" => Ok(SchedulerKind::RandomSearch { restarts }),
        other => Err(CliError::config(format!(
            "unknown scheduler {other:?}; expected ff, bf, bf2 or random"
        ))),
    }
}

pub fn parse_filter(name: &str) -> Result<FilterKind, CliError> {
    match name.to_ascii_lowercase().as_str() {
        "all" => Ok(FilterKind::All),
        "ci" | "cpu" | "cpu-intensive" => Ok(FilterKind::CpuIntensiveOnly),
        "mi" | "mem" | "mem-intensive" => Ok(FilterKind::MemIntensiveOnly),
        "small" => Ok(FilterKind::small()),
        "large" => Ok(FilterKind::large()),
        other => Err(CliError::config(format!(
            "unknown filter {other:?}; expected all, ci, mi, small or large"
        ))),
    }
}

impl Resolved {
    /// Merges defaults, the config file, and flags (flags win).
    pub fn from_sources(file: &FileConfig, args: &CommonArgs) -> Result<Self, CliError> {
        let c = file.cluster.as_ref();
        let cluster = ClusterConfig {
            n_pms: args.pms.or(c.and_then(|s| s.pms)).unwrap_or(20),
            pm_cpu: args.pm_cpu.or(c.and_then(|s| s.pm_cpu)).unwrap_or(128),
            pm_mem: args.pm_mem.or(c.and_then(|s| s.pm_mem)).unwrap_or(160),
            numa_per_pm: args.numa.or(c.and_then(|s| s.numa)).unwrap_or(1),
            large_vm_overrides: Default::default(),
        };
        cluster
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;

        let s = file.schedulers.as_ref();
        let bf2_w_cpu = s.and_then(|s| s.bf2_w_cpu).unwrap_or(0.5);
        let bf2_w_mem = s.and_then(|s| s.bf2_w_mem).unwrap_or(0.5);
        let restarts = s.and_then(|s| s.restarts).unwrap_or(50);
        let scheduler_names: Vec<String> = if !args.schedulers.is_empty() {
            args.schedulers.clone()
        } else if let Some(kinds) = s.and_then(|s| s.kinds.clone()) {
            kinds
        } else {
            vec!["ff".into(), "bf".into(), "bf2".into()]
        };
        let schedulers = scheduler_names
            .iter()
            .map(|n| parse_scheduler(n, bf2_w_cpu, bf2_w_mem, restarts))
            .collect::<Result<Vec<_>, _>>()?;
        if schedulers.is_empty() {
            return Err(CliError::config("no schedulers selected"));
        }

        let r = file.reassigner.as_ref();
        let lambda = args.lambda.or(r.and_then(|s| s.lambda)).unwrap_or(0.5);
        if !(0.0..=1.0).contains(&lambda) {
            return Err(CliError::config(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        let alphas = parse_alpha_list(
            args.alpha
                .clone()
                .or(r.and_then(|s| s.alpha.clone()))
                .as_deref()
                .unwrap_or("0.3N"),
        )
        .map_err(CliError::config)?;
        let plan_override = match (r.and_then(|s| s.plan_c1), r.and_then(|s| s.plan_m1)) {
            (Some(c1), Some(m1)) => Some((c1, m1)),
            (None, None) => None,
            _ => {
                return Err(CliError::config(
                    "plan_c1 and plan_m1 must be given together",
                ))
            }
        };
        let reassigner = ReassignerSettings {
            enabled: args.reassigner || r.and_then(|s| s.enabled).unwrap_or(false),
            lambda,
            alphas,
            emergent: r.and_then(|s| s.emergent).unwrap_or(true),
            imbalance: r.and_then(|s| s.imbalance).unwrap_or(true),
            partition_at_start: r.and_then(|s| s.partition_at_start).unwrap_or(true),
            plan_override,
        };

        let e = file.experiment.as_ref();
        let seed = args.seed.or(e.and_then(|s| s.seed)).unwrap_or(42);
        let scenarios = args
            .scenarios
            .or(e.and_then(|s| s.scenarios))
            .unwrap_or(60);
        if scenarios == 0 {
            return Err(CliError::config("scenarios must be at least 1"));
        }
        let filter = match args.filter.as_deref() {
            Some(name) => parse_filter(name)?,
            None => match e.and_then(|s| s.filter.as_deref()) {
                Some(name) => parse_filter(name)?,
                None => FilterKind::All,
            },
        };

        let t = file.trace.as_ref();
        let trace_source = match args.trace.clone().or(t.and_then(|s| s.csv.clone())) {
            Some(path) => TraceSource::Csv(path),
            None => {
                let synth = t.and_then(|s| s.synth.as_ref());
                let flavors = match synth.and_then(|s| s.flavors.as_ref()) {
                    Some(entries) => entries
                        .iter()
                        .map(|f| WeightedFlavor {
                            spec: VmSpec::new(f.cpu, f.mem),
                            weight: f.weight,
                        })
                        .collect(),
                    None => vmsched::trace::default_mix(),
                };
                TraceSource::Synth(SynthConfig {
                    flavors,
                    delete_prob: synth.and_then(|s| s.delete_prob).unwrap_or(0.3),
                    length: synth.and_then(|s| s.length).unwrap_or(50_000),
                    seed: synth.and_then(|s| s.seed).unwrap_or(seed),
                })
            }
        };

        let o = file.output.as_ref();
        Ok(Resolved {
            cluster,
            schedulers,
            restarts,
            reassigner,
            trace_source,
            scenarios,
            seed,
            filter,
            out_dir: args.out.clone().or(o.and_then(|s| s.dir.clone())),
            json: args.json || o.and_then(|s| s.json).unwrap_or(false),
        })
    }

    /// Flavor list for commands that run without a trace (solve-assign):
    /// configured synth flavors, or the built-in default set.
    pub fn standalone_flavors(&self) -> Vec<VmSpec> {
        match &self.trace_source {
            TraceSource::Synth(synth) => synth.flavors.iter().map(|f| f.spec.clone()).collect(),
            TraceSource::Csv(_) => vmsched::model::default_flavors(),
        }
    }
}

//! Benchmark harness for trace-driven VM placement experiments.
//!
//! Subcommands: `run` (scheduler suite on one trace), `heterogeneity`
//! (per-filter suite against the random-search proxy), `solve-assign`
//! (region sizing only), `gen-trace` (synthetic trace files).

mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vmsched::model::FlavorSet;
use vmsched::reassigner::{solve_for_flavor_set, AssignmentPlan, ReassignerError};
use vmsched::scheduler::SchedulerKind;
use vmsched::sim::{run_suite, SimError};
use vmsched::trace::{
    apply_filter, sample_scenarios, synth_generate, write_csv, FilterKind, SynthConfig, Trace,
    TraceError,
};
use vmsched::{IntensifierConfig, Role, VmSpec};

use config::{CommonArgs, ReassignerSettings, Resolved, TraceSource};
use report::{ConfigEcho, HetRow, RunRow};

/// Errors carrying their process exit code: 1 config, 2 trace, 3 internal.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Trace(String),
    Internal(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn trace(msg: impl Into<String>) -> Self {
        CliError::Trace(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError::Internal(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Trace(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Trace(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<TraceError> for CliError {
    fn from(err: TraceError) -> Self {
        match err {
            TraceError::InvalidSynthConfig(_) => CliError::Config(err.to_string()),
            other => CliError::Trace(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(err: SimError) -> Self {
        if err.is_internal() {
            CliError::Internal(err.to_string())
        } else {
            CliError::Config(err.to_string())
        }
    }
}

impl From<ReassignerError> for CliError {
    fn from(err: ReassignerError) -> Self {
        CliError::Config(err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Config(format!("i/o error: {err}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        CliError::Internal(format!("report serialization: {err}"))
    }
}

#[derive(Parser)]
#[command(
    name = "vmsched",
    version,
    about = "Trace-driven benchmark for heterogeneous VM placement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark the configured schedulers, optionally with the reassigner.
    Run(RunCmd),
    /// Solve the two-region sizing problem and print the plan.
    SolveAssign(SolveCmd),
    /// Benchmark each request filter against the random-search proxy.
    Heterogeneity(HetCmd),
    /// Generate a synthetic trace CSV.
    GenTrace(GenCmd),
}

#[derive(clap::Args)]
struct RunCmd {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(clap::Args)]
struct SolveCmd {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(clap::Args)]
struct HetCmd {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(clap::Args)]
struct GenCmd {
    /// TOML config file providing [trace.synth] defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Number of requests to generate.
    #[arg(long)]
    length: Option<usize>,
    /// Probability of deleting a live VM instead of creating one.
    #[arg(long = "delete-prob")]
    delete_prob: Option<f64>,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// CPU capacity per PM (bounds flavor sizes).
    #[arg(long = "pm-cpu")]
    pm_cpu: Option<u32>,
    /// Memory capacity per PM (bounds flavor sizes).
    #[arg(long = "pm-mem")]
    pm_mem: Option<u32>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err)
            if matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{err}");
            return ExitCode::SUCCESS;
        }
        Err(err) => {
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Run(cmd) => cmd_run(cmd),
        Command::SolveAssign(cmd) => cmd_solve_assign(cmd),
        Command::Heterogeneity(cmd) => cmd_heterogeneity(cmd),
        Command::GenTrace(cmd) => cmd_gen_trace(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}

fn resolve_common(common: &CommonArgs) -> Result<Resolved, CliError> {
    let file = config::load_file_config(common.config.as_ref())?;
    Resolved::from_sources(&file, common)
}

fn load_trace(resolved: &Resolved) -> Result<Trace, CliError> {
    let (cpu, mem) = (resolved.cluster.pm_cpu, resolved.cluster.pm_mem);
    match &resolved.trace_source {
        TraceSource::Csv(path) => {
            let (trace, load) = vmsched::trace::load_csv(path, cpu, mem)
                .map_err(|e| CliError::trace(format!("{}: {e}", path.display())))?;
            if load.dropped_oversized_creates > 0 || load.dropped_deletes > 0 {
                eprintln!(
                    "note: dropped {} oversized creations and {} unmatched deletions from {}",
                    load.dropped_oversized_creates,
                    load.dropped_deletes,
                    path.display()
                );
            }
            Ok(trace)
        }
        TraceSource::Synth(synth) => Ok(synth_generate(synth, cpu, mem)?),
    }
}

/// The region plan an intensified run will use: the configured override,
/// otherwise the solved optimum for this flavor set.
fn build_plan(resolved: &Resolved, flavor_set: &FlavorSet) -> Result<AssignmentPlan, CliError> {
    let (r_c, r_m) = (resolved.cluster.pm_cpu, resolved.cluster.pm_mem);
    let lambda = resolved.reassigner.lambda;
    match resolved.reassigner.plan_override {
        Some((c1, m1)) => {
            let v_ci: Vec<VmSpec> = flavor_set.of_role(Role::CpuIntensive).cloned().collect();
            let v_mi: Vec<VmSpec> = flavor_set.of_role(Role::MemIntensive).cloned().collect();
            Ok(AssignmentPlan::manual(
                r_c, r_m, c1, m1, &v_ci, &v_mi, lambda,
            )?)
        }
        None => Ok(solve_for_flavor_set(r_c, r_m, flavor_set, lambda)?),
    }
}

fn make_intensifier(
    settings: &ReassignerSettings,
    plan: AssignmentPlan,
    alpha_abs: f64,
) -> IntensifierConfig {
    IntensifierConfig {
        lambda: settings.lambda,
        alpha: alpha_abs,
        plan_override: Some(plan),
        emergent_unassign: settings.emergent,
        imbalance_unassign: settings.imbalance,
        partition_at_start: settings.partition_at_start,
    }
}

fn cmd_run(cmd: RunCmd) -> Result<(), CliError> {
    let resolved = resolve_common(&cmd.common)?;
    let trace = load_trace(&resolved)?;
    let (cpu, mem) = (resolved.cluster.pm_cpu, resolved.cluster.pm_mem);
    let filtered = apply_filter(&trace, resolved.filter, cpu, mem)?;
    let starts = sample_scenarios(&filtered, resolved.scenarios, resolved.seed)?;

    let plan = if resolved.reassigner.enabled {
        Some(build_plan(&resolved, filtered.flavor_set())?)
    } else {
        None
    };

    let mut rows = Vec::new();
    for kind in &resolved.schedulers {
        let outcome = run_suite(
            &filtered,
            &starts,
            &resolved.cluster,
            kind,
            None,
            resolved.seed,
        )?;
        rows.push(RunRow {
            algorithm: kind.to_string(),
            stats: outcome.stats,
        });
        let is_proxy = matches!(kind, SchedulerKind::RandomSearch { .. });
        if let (Some(plan), false) = (&plan, is_proxy) {
            for alpha in &resolved.reassigner.alphas {
                let intensifier = make_intensifier(
                    &resolved.reassigner,
                    *plan,
                    alpha.resolve(resolved.cluster.n_pms),
                );
                let outcome = run_suite(
                    &filtered,
                    &starts,
                    &resolved.cluster,
                    kind,
                    Some(&intensifier),
                    resolved.seed,
                )?;
                let algorithm = if resolved.reassigner.alphas.len() == 1 {
                    format!("{kind}+RA")
                } else {
                    format!("{kind}+RA[alpha={alpha}]")
                };
                rows.push(RunRow {
                    algorithm,
                    stats: outcome.stats,
                });
            }
        }
    }

    let echo = ConfigEcho::new("run", &resolved, plan.as_ref());
    let csv = report::render_run_csv(&echo, &rows);
    let json = resolved
        .json
        .then(|| report::render_run_json(echo, &rows));
    let written = report::emit(resolved.out_dir.as_deref(), "run", &csv, json.as_ref())?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_heterogeneity(cmd: HetCmd) -> Result<(), CliError> {
    let resolved = resolve_common(&cmd.common)?;
    if resolved.reassigner.enabled {
        eprintln!(
            "note: heterogeneity benchmarks plain schedulers against the \
             random-search proxy; the reassigner setting is ignored"
        );
    }
    let trace = load_trace(&resolved)?;
    let (cpu, mem) = (resolved.cluster.pm_cpu, resolved.cluster.pm_mem);

    let heuristics: Vec<&SchedulerKind> = resolved
        .schedulers
        .iter()
        .filter(|k| !matches!(k, SchedulerKind::RandomSearch { .. }))
        .collect();
    let proxy = SchedulerKind::RandomSearch {
        restarts: resolved.restarts,
    };

    let filters = [
        FilterKind::All,
        FilterKind::CpuIntensiveOnly,
        FilterKind::MemIntensiveOnly,
        FilterKind::small(),
        FilterKind::large(),
    ];
    let mut rows = Vec::new();
    for filter in filters {
        let filtered = apply_filter(&trace, filter, cpu, mem)
            .map_err(|e| CliError::trace(format!("filter {filter}: {e}")))?;
        let starts = sample_scenarios(&filtered, resolved.scenarios, resolved.seed)
            .map_err(|e| CliError::trace(format!("filter {filter}: {e}")))?;
        for kind in &heuristics {
            let outcome = run_suite(
                &filtered,
                &starts,
                &resolved.cluster,
                kind,
                None,
                resolved.seed,
            )?;
            rows.push(HetRow {
                filter: filter.to_string(),
                algorithm: kind.to_string(),
                stats: outcome.stats,
            });
        }
        let outcome = run_suite(
            &filtered,
            &starts,
            &resolved.cluster,
            &proxy,
            None,
            resolved.seed,
        )?;
        rows.push(HetRow {
            filter: filter.to_string(),
            algorithm: proxy.to_string(),
            stats: outcome.stats,
        });
    }

    let mut resolved_echo = resolved.clone();
    resolved_echo.reassigner.enabled = false;
    let mut echo = ConfigEcho::new("heterogeneity", &resolved_echo, None);
    echo.filter = "per-row".into();
    let csv = report::render_het_csv(&echo, &rows);
    let json = resolved
        .json
        .then(|| report::render_het_json(echo, &rows));
    let written = report::emit(
        resolved.out_dir.as_deref(),
        "heterogeneity",
        &csv,
        json.as_ref(),
    )?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_solve_assign(cmd: SolveCmd) -> Result<(), CliError> {
    let resolved = resolve_common(&cmd.common)?;
    let (cpu, mem) = (resolved.cluster.pm_cpu, resolved.cluster.pm_mem);
    let flavors = match &resolved.trace_source {
        TraceSource::Csv(_) => load_trace(&resolved)?.flavor_set().flavors().to_vec(),
        TraceSource::Synth(_) => resolved.standalone_flavors(),
    };
    let flavor_set =
        FlavorSet::new(flavors, cpu, mem).map_err(|e| CliError::config(e.to_string()))?;
    let plan = build_plan(&resolved, &flavor_set)?;
    let objective = (plan.objective * 100.0).round() / 100.0;
    if resolved.json {
        let value = serde_json::json!({
            "c1": plan.c1,
            "m1": plan.m1,
            "c2": plan.c2,
            "m2": plan.m2,
            "objective": objective,
            "lambda": plan.lambda,
        });
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        println!("c1={} m1={} c2={} m2={}", plan.c1, plan.m1, plan.c2, plan.m2);
        println!("objective={objective:.2}");
        println!("lambda={}", plan.lambda);
    }
    Ok(())
}

fn cmd_gen_trace(cmd: GenCmd) -> Result<(), CliError> {
    let file = config::load_file_config(cmd.config.as_ref())?;
    let base_args = CommonArgs {
        seed: cmd.seed,
        pm_cpu: cmd.pm_cpu,
        pm_mem: cmd.pm_mem,
        ..Default::default()
    };
    let resolved = Resolved::from_sources(&file, &base_args)?;
    let mut synth = match resolved.trace_source {
        TraceSource::Synth(s) => s,
        TraceSource::Csv(_) => SynthConfig::new(resolved.seed),
    };
    if let Some(length) = cmd.length {
        synth.length = length;
    }
    if let Some(p) = cmd.delete_prob {
        synth.delete_prob = p;
    }
    if let Some(seed) = cmd.seed {
        synth.seed = seed;
    }

    let (cpu, mem) = (resolved.cluster.pm_cpu, resolved.cluster.pm_mem);
    let trace = synth_generate(&synth, cpu, mem)?;
    write_csv(&trace, &cmd.out)
        .map_err(|e| CliError::trace(format!("{}: {e}", cmd.out.display())))?;
    let creates = trace.requests().iter().filter(|r| r.is_create()).count();
    println!(
        "wrote {} ({} requests: {} creations, {} deletions, {} flavors)",
        cmd.out.display(),
        trace.len(),
        creates,
        trace.len() - creates,
        trace.flavor_set().len()
    );
    Ok(())
}

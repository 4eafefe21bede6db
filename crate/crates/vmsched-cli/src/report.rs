//! Report rendering. Every file starts with the resolved configuration so a
//! run can be reproduced from the report alone, and the CSV and JSON forms
//! carry exactly the same numbers (rounded to two decimals).

use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use vmsched::reassigner::AssignmentPlan;
use vmsched::sim::SuiteStats;

use crate::config::{Resolved, TraceSource};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
pub struct ClusterEcho {
    pub pms: usize,
    pub pm_cpu: u32,
    pub pm_mem: u32,
    pub numa: u32,
}

#[derive(Debug, Serialize)]
pub struct PlanEcho {
    pub c1: u32,
    pub m1: u32,
    pub c2: u32,
    pub m2: u32,
    pub objective: f64,
}

#[derive(Debug, Serialize)]
pub struct ReassignerEcho {
    pub lambda: f64,
    pub alpha: Vec<String>,
    pub alpha_resolved: Vec<f64>,
    pub emergent: bool,
    pub imbalance: bool,
    pub partition_at_start: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanEcho>,
}

/// Resolved configuration as embedded in every report.
#[derive(Debug, Serialize)]
pub struct ConfigEcho {
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub cluster: ClusterEcho,
    pub trace: String,
    pub filter: String,
    pub scenarios: usize,
    pub schedulers: Vec<String>,
    pub restarts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reassigner: Option<ReassignerEcho>,
}

impl ConfigEcho {
    pub fn new(command: &'static str, resolved: &Resolved, plan: Option<&AssignmentPlan>) -> Self {
        let trace = match &resolved.trace_source {
            TraceSource::Csv(path) => format!("csv {}", path.display()),
            TraceSource::Synth(synth) => format!(
                "synth length={} delete_prob={} seed={} flavors={}",
                synth.length,
                synth.delete_prob,
                synth.seed,
                synth.flavors.len()
            ),
        };
        let reassigner = resolved.reassigner.enabled.then(|| ReassignerEcho {
            lambda: resolved.reassigner.lambda,
            alpha: resolved
                .reassigner
                .alphas
                .iter()
                .map(|a| a.to_string())
                .collect(),
            alpha_resolved: resolved
                .reassigner
                .alphas
                .iter()
                .map(|a| a.resolve(resolved.cluster.n_pms))
                .collect(),
            emergent: resolved.reassigner.emergent,
            imbalance: resolved.reassigner.imbalance,
            partition_at_start: resolved.reassigner.partition_at_start,
            plan: plan.map(|p| PlanEcho {
                c1: p.c1,
                m1: p.m1,
                c2: p.c2,
                m2: p.m2,
                objective: round2(p.objective),
            }),
        });
        ConfigEcho {
            version: VERSION,
            command,
            seed: resolved.seed,
            cluster: ClusterEcho {
                pms: resolved.cluster.n_pms,
                pm_cpu: resolved.cluster.pm_cpu,
                pm_mem: resolved.cluster.pm_mem,
                numa: resolved.cluster.numa_per_pm,
            },
            trace,
            filter: resolved.filter.to_string(),
            scenarios: resolved.scenarios,
            schedulers: resolved.schedulers.iter().map(|k| k.to_string()).collect(),
            restarts: resolved.restarts,
            reassigner,
        }
    }

    /// The `#`-prefixed preamble at the top of every CSV report.
    fn preamble(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# vmsched {}\n", self.version));
        out.push_str(&format!("# command: {}\n", self.command));
        out.push_str(&format!("# seed: {}\n", self.seed));
        out.push_str(&format!(
            "# cluster: pms={} pm_cpu={} pm_mem={} numa={}\n",
            self.cluster.pms, self.cluster.pm_cpu, self.cluster.pm_mem, self.cluster.numa
        ));
        out.push_str(&format!("# trace: {}\n", self.trace));
        out.push_str(&format!("# filter: {}\n", self.filter));
        out.push_str(&format!("# scenarios: {}\n", self.scenarios));
        out.push_str(&format!("# schedulers: {}\n", self.schedulers.join(",")));
        out.push_str(&format!("# restarts: {}\n", self.restarts));
        match &self.reassigner {
            Some(r) => {
                out.push_str(&format!(
                    "# reassigner: lambda={} alpha={} emergent={} imbalance={} partition_at_start={}\n",
                    r.lambda,
                    r.alpha.join(","),
                    r.emergent,
                    r.imbalance,
                    r.partition_at_start
                ));
                if let Some(p) = &r.plan {
                    out.push_str(&format!(
                        "# plan: c1={} m1={} c2={} m2={} objective={:.2}\n",
                        p.c1, p.m1, p.c2, p.m2, p.objective
                    ));
                }
            }
            None => out.push_str("# reassigner: off\n"),
        }
        out
    }
}

/// One row of the `run` report.
#[derive(Debug)]
pub struct RunRow {
    pub algorithm: String,
    pub stats: SuiteStats,
}

/// One row of the `heterogeneity` report.
#[derive(Debug)]
pub struct HetRow {
    pub filter: String,
    pub algorithm: String,
    pub stats: SuiteStats,
}

#[derive(Debug, Serialize)]
struct RunRowJson {
    algorithm: String,
    average: f64,
    quartile1: f64,
    quartile2: f64,
    quartile3: f64,
    alw_memory_mean: f64,
    alw_memory_std: f64,
    alw_cpu_mean: f64,
    alw_cpu_std: f64,
}

#[derive(Debug, Serialize)]
struct HetRowJson {
    filter: String,
    algorithm: String,
    average: f64,
    quartile1: f64,
    quartile2: f64,
    quartile3: f64,
}

#[derive(Debug, Serialize)]
struct Report<R: Serialize> {
    config: ConfigEcho,
    rows: Vec<R>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn render_run_csv(echo: &ConfigEcho, rows: &[RunRow]) -> String {
    let mut out = echo.preamble();
    out.push_str(
        "Algorithm,Average,Quartile 1,Quartile 2,Quartile 3,\
         ALW Memory Mean,ALW Memory Std,ALW CPU Mean,ALW CPU Std\n",
    );
    for row in rows {
        let s = &row.stats;
        out.push_str(&format!(
            "{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}\n",
            row.algorithm,
            round2(s.mean),
            round2(s.q1),
            round2(s.median),
            round2(s.q3),
            round2(s.alw_mem_mean),
            round2(s.alw_mem_std),
            round2(s.alw_cpu_mean),
            round2(s.alw_cpu_std),
        ));
    }
    out
}

pub fn render_run_json(echo: ConfigEcho, rows: &[RunRow]) -> Value {
    let rows = rows
        .iter()
        .map(|row| {
            let s = &row.stats;
            RunRowJson {
                algorithm: row.algorithm.clone(),
                average: round2(s.mean),
                quartile1: round2(s.q1),
                quartile2: round2(s.median),
                quartile3: round2(s.q3),
                alw_memory_mean: round2(s.alw_mem_mean),
                alw_memory_std: round2(s.alw_mem_std),
                alw_cpu_mean: round2(s.alw_cpu_mean),
                alw_cpu_std: round2(s.alw_cpu_std),
            }
        })
        .collect();
    serde_json::to_value(Report { config: echo, rows }).expect("report serialization")
}

pub fn render_het_csv(echo: &ConfigEcho, rows: &[HetRow]) -> String {
    let mut out = echo.preamble();
    out.push_str("Filter,Algorithm,Average,Quartile 1,Quartile 2,Quartile 3\n");
    for row in rows {
        let s = &row.stats;
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2},{:.2}\n",
            row.filter,
            row.algorithm,
            round2(s.mean),
            round2(s.q1),
            round2(s.median),
            round2(s.q3),
        ));
    }
    out
}

pub fn render_het_json(echo: ConfigEcho, rows: &[HetRow]) -> Value {
    let rows = rows
        .iter()
        .map(|row| {
            let s = &row.stats;
            HetRowJson {
                filter: row.filter.clone(),
                algorithm: row.algorithm.clone(),
                average: round2(s.mean),
                quartile1: round2(s.q1),
                quartile2: round2(s.median),
                quartile3: round2(s.q3),
            }
        })
        .collect();
    serde_json::to_value(Report { config: echo, rows }).expect("report serialization")
}

/// Writes the report under `out_dir` (CSV always, JSON when requested) and
/// returns the written paths, or prints to stdout when no directory is set.
pub fn emit(
    out_dir: Option<&Path>,
    basename: &str,
    csv: &str,
    json: Option<&Value>,
) -> io::Result<Vec<PathBuf>> {
    match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut written = Vec::new();
            let csv_path = dir.join(format!("{basename}.csv"));
            std::fs::write(&csv_path, csv)?;
            written.push(csv_path);
            if let Some(value) = json {
                let json_path = dir.join(format!("{basename}.json"));
                let mut text = serde_json::to_string_pretty(value)?;
                text.push('\n');
                std::fs::write(&json_path, text)?;
                written.push(json_path);
            }
            Ok(written)
        }
        None => {
            match json {
                Some(value) => println!("{}", serde_json::to_string_pretty(value)?),
                None => print!("{csv}"),
            }
            Ok(Vec::new())
        }
    }
}

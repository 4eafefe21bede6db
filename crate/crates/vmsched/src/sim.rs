//! Sequential trace replay and suite-level statistics.
//!
//! A run starts from a fresh cluster (partitioned by the intensifier when one
//! is active), replays requests from a start index, and ends either when the
//! window is exhausted or at the first creation that no machine can host
//! (after an emergent unassignment attempt, when enabled). The scheduling
//! length is the number of creations handled before that point; nothing after
//! the terminating creation is processed.
//!
//! Suites replay many windows independently and in parallel; runs share only
//! the immutable trace, so results are deterministic regardless of worker
//! count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alw::{cluster_alw, AlwError, AlwPair};
use crate::model::{categorize, Cluster, ClusterConfig, ModelError, RequestKind, Role, VmId};
use crate::reassigner::{
    initialize, maybe_unassign_imbalance, unassign_emergent, IntensifierConfig, IntensifierState,
    ReassignerError,
};
use crate::scheduler::{
    derive_seed, feasible_candidates, random_search_length, ChoicePolicy, SchedulerError,
    SchedulerKind,
};
use crate::trace::Trace;

/// One replayed window.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Scheduling length: creations handled before the first unplaceable one.
    pub length: u64,
    /// Cluster ALW at termination, over the trace's full flavor set.
    pub terminal_alw: AlwPair,
    pub unassign_emergent: u32,
    pub unassign_imbalance: u32,
    /// Deletions skipped because their VM was not live (window cut-in).
    pub dangling_deletes: u32,
    /// True when the window ran out of requests instead of terminating.
    pub exhausted: bool,
    pub log: Option<Vec<Event>>,
}

/// Compact event log for replay comparison and debugging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Placed {
        seq: u64,
        vm_id: VmId,
        pm_id: usize,
        numa_ids: Vec<usize>,
        region: Option<Role>,
    },
    Released {
        seq: u64,
        vm_id: VmId,
    },
    Unassigned {
        seq: u64,
        pm_id: usize,
        cause: UnassignCause,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnassignCause {
    Emergent,
    Imbalance,
}

/// Replays `trace` from `start` against a fresh cluster.
pub fn run(
    trace: &Trace,
    start: usize,
    config: &ClusterConfig,
    policy: &mut ChoicePolicy,
    intensifier: Option<&IntensifierConfig>,
    record_log: bool,
) -> Result<RunResult, SimError> {
    if start > trace.len() {
        return Err(SimError::InvalidStart {
            start,
            len: trace.len(),
        });
    }
    let mut cluster = Cluster::new(config.clone())?;
    let mut state = match intensifier {
        Some(cfg) => {
            let plan = cfg.resolve_plan(config.pm_cpu, config.pm_mem, trace.flavor_set())?;
            if cfg.partition_at_start {
                initialize(&mut cluster, &plan)?;
            }
            Some((cfg, IntensifierState::new(plan)))
        }
        None => None,
    };

    let mut result = RunResult {
        length: 0,
        terminal_alw: AlwPair::default(),
        unassign_emergent: 0,
        unassign_imbalance: 0,
        dangling_deletes: 0,
        exhausted: true,
        log: record_log.then(Vec::new),
    };
    let log = |event: Event, log_store: &mut Option<Vec<Event>>| {
        if let Some(events) = log_store {
            events.push(event);
        }
    };

    for req in &trace.requests()[start..] {
        match &req.kind {
            RequestKind::Delete => {
                if cluster.placement(req.vm_id).is_some() {
                    cluster.release(req.vm_id)?;
                    log(
                        Event::Released {
                            seq: req.seq,
                            vm_id: req.vm_id,
                        },
                        &mut result.log,
                    );
                } else {
                    result.dangling_deletes += 1;
                }
            }
            RequestKind::Create(spec) => {
                let role = state
                    .as_ref()
                    .map(|_| categorize(spec, config.pm_cpu, config.pm_mem));
                let mut candidates = feasible_candidates(&cluster, spec, role);
                if candidates.is_empty() {
                    if let Some((cfg, _)) = &state {
                        if cfg.emergent_unassign {
                            if let Some(pm_id) = unassign_emergent(&mut cluster, spec) {
                                result.unassign_emergent += 1;
                                log(
                                    Event::Unassigned {
                                        seq: req.seq,
                                        pm_id,
                                        cause: UnassignCause::Emergent,
                                    },
                                    &mut result.log,
                                );
                                candidates = feasible_candidates(&cluster, spec, role);
                            }
                        }
                    }
                }
                if candidates.is_empty() {
                    result.exhausted = false;
                    break;
                }
                let chosen = policy.choose(&candidates, spec)?;
                let placement = cluster.place(req.vm_id, spec, chosen.pm_id, chosen.region)?;
                result.length += 1;
                log(
                    Event::Placed {
                        seq: req.seq,
                        vm_id: req.vm_id,
                        pm_id: placement.pm_id,
                        numa_ids: placement.numa_ids.clone(),
                        region: placement.role_region,
                    },
                    &mut result.log,
                );
                if let Some((cfg, st)) = &mut state {
                    if cfg.imbalance_unassign {
                        if let Some(pm_id) =
                            maybe_unassign_imbalance(&mut cluster, st, cfg.alpha)?
                        {
                            log(
                                Event::Unassigned {
                                    seq: req.seq,
                                    pm_id,
                                    cause: UnassignCause::Imbalance,
                                },
                                &mut result.log,
                            );
                        }
                    }
                }
            }
        }
        if cfg!(debug_assertions) {
            cluster.audit()?;
        }
    }

    if let Some((_, st)) = &state {
        result.unassign_imbalance = st.n_unassign_imbalance;
    }
    cluster.audit()?;
    result.terminal_alw = cluster_alw(&cluster, trace.flavor_set())?;
    Ok(result)
}

/// Aggregates over one suite of windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteStats {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub alw_cpu_mean: f64,
    pub alw_cpu_std: f64,
    pub alw_mem_mean: f64,
    pub alw_mem_std: f64,
}

impl SuiteStats {
    pub fn from_results(results: &[RunResult]) -> Result<Self, SimError> {
        if results.is_empty() {
            return Err(SimError::NoScenarios);
        }
        let mut lengths: Vec<f64> = results.iter().map(|r| r.length as f64).collect();
        lengths.sort_by(|a, b| a.partial_cmp(b).expect("lengths are finite"));
        let alw_cpu: Vec<f64> = results.iter().map(|r| r.terminal_alw.cpu as f64).collect();
        let alw_mem: Vec<f64> = results.iter().map(|r| r.terminal_alw.mem as f64).collect();
        Ok(Self {
            mean: mean(&lengths),
            q1: quantile(&lengths, 0.25),
            median: quantile(&lengths, 0.5),
            q3: quantile(&lengths, 0.75),
            alw_cpu_mean: mean(&alw_cpu),
            alw_cpu_std: population_std(&alw_cpu),
            alw_mem_mean: mean(&alw_mem),
            alw_mem_std: population_std(&alw_mem),
        })
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Linear-interpolation quantile on a sorted slice: h = (n−1)·q, value
/// interpolated between the neighbors of h.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One suite: per-window results plus their aggregate statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub results: Vec<RunResult>,
    pub stats: SuiteStats,
}

/// Replays every window in parallel. Deterministic: worker scheduling cannot
/// affect results because windows are independent and collected in order;
/// random policies derive their stream from (seed, window index).
pub fn run_suite(
    trace: &Trace,
    starts: &[usize],
    config: &ClusterConfig,
    kind: &SchedulerKind,
    intensifier: Option<&IntensifierConfig>,
    seed: u64,
) -> Result<SuiteOutcome, SimError> {
    if starts.is_empty() {
        return Err(SimError::NoScenarios);
    }
    if matches!(kind, SchedulerKind::RandomSearch { .. }) && intensifier.is_some() {
        return Err(SimError::ProxyWithIntensifier);
    }
    let results: Vec<RunResult> = starts
        .par_iter()
        .enumerate()
        .map(|(i, &start)| match *kind {
            SchedulerKind::RandomSearch { restarts } => random_search_length(
                trace,
                start,
                config,
                restarts,
                derive_seed(seed, i as u64),
            ),
            _ => {
                let mut policy = ChoicePolicy::deterministic(kind)?;
                run(trace, start, config, &mut policy, intensifier, false)
            }
        })
        .collect::<Result<_, _>>()?;
    let stats = SuiteStats::from_results(&results)?;
    Ok(SuiteOutcome { results, stats })
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("start index {start} is beyond the trace length {len}")]
    InvalidStart { start: usize, len: usize },
    #[error("a suite needs at least one scenario")]
    NoScenarios,
    #[error("the random-search proxy models plain schedulers only")]
    ProxyWithIntensifier,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Reassigner(#[from] ReassignerError),
    #[error(transparent)]
    Alw(#[from] AlwError),
}

impl SimError {
    /// True for defects in this crate rather than in the inputs.
    pub fn is_internal(&self) -> bool {
        matches!(
            self,
            SimError::Model(ModelError::Internal(_))
                | SimError::Model(ModelError::CapacityViolation { .. })
                | SimError::Model(ModelError::DuplicateVm(_))
                | SimError::Model(ModelError::UnknownVm(_))
                | SimError::Scheduler(_)
        )
    }
}

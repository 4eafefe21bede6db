//! Placement policies: given the feasible candidates for one creation
//! request, pick the machine to host it.
//!
//! All deterministic policies break ties toward the lowest pm_id, which the
//! candidate ordering provides for free. The random policy exists to power
//! the optimal proxy: the best length over many seeded random rollouts plus
//! every deterministic heuristic, a practical stand-in for an unknowable
//! optimal scheduler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Cluster, PartitionState, Role, VmSpec};
use crate::sim::{self, RunResult, SimError};
use crate::trace::Trace;

/// One feasible placement target: a PM, the role region the request would
/// occupy on it (None on a shared PM), and the figures policies score by.
/// `free_*` is the space actually available to the request (the region's on a
/// partitioned PM); `used_*_frac` is whole-PM utilization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub pm_id: usize,
    pub region: Option<Role>,
    pub free_cpu: u32,
    pub free_mem: u32,
    pub used_cpu_frac: f64,
    pub used_mem_frac: f64,
}

/// Configuration-level scheduler selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SchedulerKind {
    /// First candidate in pm_id order.
    FirstFit,
    /// Highest whole-PM CPU utilization.
    BestFit,
    /// Lowest weighted free-to-request ratio.
    Bf2 { w_cpu: f64, w_mem: f64 },
    /// Optimal proxy: max length over seeded rollouts plus all heuristics.
    RandomSearch { restarts: u32 },
}

impl SchedulerKind {
    pub const fn bf2_default() -> Self {
        SchedulerKind::Bf2 {
            w_cpu: 0.5,
            w_mem: 0.5,
        }
    }
}

impl std::fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SchedulerKind::FirstFit => write!(f, "FF"),
            SchedulerKind::BestFit => write!(f, "BF"),
            SchedulerKind::Bf2 { .. } => write!(f, "BF2"),
            SchedulerKind::RandomSearch { .. } => write!(f, "RandomSearch"),
        }
    }
}

/// A per-run placement policy. Deterministic kinds carry no state; the
/// uniform policy owns its RNG so a run is reproducible from its seed.
#[derive(Debug, Clone)]
pub enum ChoicePolicy {
    FirstFit,
    BestFit,
    Bf2 { w_cpu: f64, w_mem: f64 },
    Uniform(ChaCha8Rng),
}

impl ChoicePolicy {
    /// Policy for a deterministic scheduler kind. `RandomSearch` is not a
    /// per-step policy (it is a whole-run search) and is rejected.
    pub fn deterministic(kind: &SchedulerKind) -> Result<Self, SchedulerError> {
        match *kind {
            SchedulerKind::FirstFit => Ok(ChoicePolicy::FirstFit),
            SchedulerKind::BestFit => Ok(ChoicePolicy::BestFit),
            SchedulerKind::Bf2 { w_cpu, w_mem } => Ok(ChoicePolicy::Bf2 { w_cpu, w_mem }),
            SchedulerKind::RandomSearch { .. } => Err(SchedulerError::NeedsRandomState),
        }
    }

    pub fn uniform(seed: u64) -> Self {
        ChoicePolicy::Uniform(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn choose(
        &mut self,
        candidates: &[Candidate],
        spec: &VmSpec,
    ) -> Result<Candidate, SchedulerError> {
        if candidates.is_empty() {
            return Err(SchedulerError::NoFeasiblePm);
        }
        let idx = match self {
            ChoicePolicy::FirstFit => 0,
            ChoicePolicy::BestFit => best_fit_index(candidates),
            ChoicePolicy::Bf2 { w_cpu, w_mem } => bf2_index(candidates, spec, *w_cpu, *w_mem),
            ChoicePolicy::Uniform(rng) => rng.gen_range(0..candidates.len()),
        };
        Ok(candidates[idx])
    }
}

/// Stateless choice for the deterministic kinds.
pub fn choose(
    kind: &SchedulerKind,
    candidates: &[Candidate],
    spec: &VmSpec,
) -> Result<Candidate, SchedulerError> {
    ChoicePolicy::deterministic(kind)?.choose(candidates, spec)
}

fn best_fit_index(candidates: &[Candidate]) -> usize {
    let mut best = 0;
    for (i, cand) in candidates.iter().enumerate().skip(1) {
        // Strict comparison keeps the earliest (lowest pm_id) on ties.
        if cand.used_cpu_frac > candidates[best].used_cpu_frac {
            best = i;
        }
    }
    best
}

fn bf2_index(candidates: &[Candidate], spec: &VmSpec, w_cpu: f64, w_mem: f64) -> usize {
    let score = |cand: &Candidate| {
        w_cpu * (f64::from(cand.free_cpu) / f64::from(spec.cpu))
            + w_mem * (f64::from(cand.free_mem) / f64::from(spec.mem))
    };
    let mut best = 0;
    let mut best_score = score(&candidates[0]);
    for (i, cand) in candidates.iter().enumerate().skip(1) {
        let s = score(cand);
        if s < best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// All PMs that can host the request, in pm_id order.
///
/// With a role given, partitioned PMs offer their matching region and shared
/// PMs their whole residual. Without one (plain scheduling), partitioned PMs
/// are skipped: there is no region to route into.
pub fn feasible_candidates(cluster: &Cluster, spec: &VmSpec, role: Option<Role>) -> Vec<Candidate> {
    cluster
        .pms()
        .iter()
        .filter_map(|pm| {
            let region = match (&pm.partition, role) {
                (PartitionState::Shared, _) => None,
                (PartitionState::Partitioned(_), Some(r)) => Some(r),
                (PartitionState::Partitioned(_), None) => return None,
            };
            if !cluster.can_fit(pm.pm_id, spec, region) {
                return None;
            }
            let (free_cpu, free_mem) = match region {
                Some(r) => pm
                    .partition
                    .as_partition()
                    .expect("region implies partitioned")
                    .region_free(r),
                None => (pm.free_cpu(), pm.free_mem()),
            };
            Some(Candidate {
                pm_id: pm.pm_id,
                region,
                free_cpu,
                free_mem,
                used_cpu_frac: f64::from(pm.used_cpu()) / f64::from(pm.cap_cpu()),
                used_mem_frac: f64::from(pm.used_mem()) / f64::from(pm.cap_mem()),
            })
        })
        .collect()
}

/// Stable per-stream seed derivation (splitmix64 finalizer) so scenario i /
/// restart j get decorrelated, reproducible RNG streams from one base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Optimal proxy for one window: the best run among every deterministic
/// heuristic and `restarts` uniformly random rollouts. Returns the best run's
/// result (ties keep the earlier run in that order).
pub fn random_search_length(
    trace: &Trace,
    start: usize,
    config: &crate::model::ClusterConfig,
    restarts: u32,
    seed: u64,
) -> Result<RunResult, SimError> {
    let mut best: Option<RunResult> = None;
    let mut consider = |result: RunResult| {
        if best.as_ref().map_or(true, |b| result.length > b.length) {
            best = Some(result);
        }
    };
    for kind in [
        SchedulerKind::FirstFit,
        SchedulerKind::BestFit,
        SchedulerKind::bf2_default(),
    ] {
        let mut policy = ChoicePolicy::deterministic(&kind)?;
        consider(sim::run(trace, start, config, &mut policy, None, false)?);
    }
    for restart in 0..restarts {
        let mut policy = ChoicePolicy::uniform(derive_seed(seed, u64::from(restart)));
        consider(sim::run(trace, start, config, &mut policy, None, false)?);
    }
    Ok(best.expect("at least the deterministic runs were considered"))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("no feasible PM for the request")]
    NoFeasiblePm,
    #[error("random search is a whole-run procedure, not a per-step policy")]
    NeedsRandomState,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cluster, ClusterConfig, Partition, VmId};

    fn cand(pm_id: usize, free: (u32, u32), used_cpu_frac: f64) -> Candidate {
        Candidate {
            pm_id,
            region: None,
            free_cpu: free.0,
            free_mem: free.1,
            used_cpu_frac,
            used_mem_frac: 0.0,
        }
    }

    #[test]
    fn first_fit_takes_the_first() {
        let cands = [cand(3, (10, 10), 0.1), cand(7, (10, 10), 0.9)];
        let spec = VmSpec::new(1, 1);
        assert_eq!(
            choose(&SchedulerKind::FirstFit, &cands, &spec).unwrap().pm_id,
            3
        );
    }

    #[test]
    fn best_fit_prefers_higher_cpu_utilization() {
        let cands = [cand(0, (64, 80), 0.5), cand(1, (38, 48), 0.7)];
        let spec = VmSpec::new(1, 1);
        assert_eq!(
            choose(&SchedulerKind::BestFit, &cands, &spec).unwrap().pm_id,
            1
        );
        // Equal utilization: the earlier (lower pm_id) wins.
        let tied = [cand(2, (64, 80), 0.5), cand(5, (64, 80), 0.5)];
        assert_eq!(
            choose(&SchedulerKind::BestFit, &tied, &spec).unwrap().pm_id,
            2
        );
    }

    #[test]
    fn bf2_minimizes_weighted_free_ratio() {
        let spec = VmSpec::new(4, 8);
        // Scores: 0.5*(8/4) + 0.5*(16/8) = 2 vs 0.5*(4/4) + 0.5*(8/8) = 1.
        let cands = [cand(0, (8, 16), 0.0), cand(1, (4, 8), 0.0)];
        assert_eq!(
            choose(&SchedulerKind::bf2_default(), &cands, &spec)
                .unwrap()
                .pm_id,
            1
        );
    }

    #[test]
    fn empty_candidates_error() {
        assert_eq!(
            choose(&SchedulerKind::FirstFit, &[], &VmSpec::new(1, 1)).unwrap_err(),
            SchedulerError::NoFeasiblePm
        );
    }

    #[test]
    fn uniform_policy_is_reproducible_and_in_range() {
        let cands: Vec<Candidate> = (0..5).map(|i| cand(i, (10, 10), 0.0)).collect();
        let spec = VmSpec::new(1, 1);
        let mut a = ChoicePolicy::uniform(42);
        let mut b = ChoicePolicy::uniform(42);
        for _ in 0..20 {
            let ca = a.choose(&cands, &spec).unwrap();
            let cb = b.choose(&cands, &spec).unwrap();
            assert_eq!(ca.pm_id, cb.pm_id);
            assert!(ca.pm_id < 5);
        }
    }

    #[test]
    fn candidates_respect_partitions_and_order() {
        let mut cluster = Cluster::new(ClusterConfig::new(3, 128, 160)).unwrap();
        let part = Partition {
            c1: 96,
            m1: 64,
            c2: 32,
            m2: 96,
            used_ci_cpu: 0,
            used_ci_mem: 0,
            used_mi_cpu: 0,
            used_mi_mem: 0,
        };
        cluster
            .set_partition(0, PartitionState::Partitioned(part))
            .unwrap();
        cluster
            .set_partition(2, PartitionState::Partitioned(part))
            .unwrap();
        // Fill PM2's mi region completely.
        cluster
            .place(VmId(1), &VmSpec::new(32, 96), 2, Some(Role::MemIntensive))
            .unwrap();

        let spec = VmSpec::new(2, 4);
        // Plain scheduling skips partitioned PMs entirely.
        let plain = feasible_candidates(&cluster, &spec, None);
        assert_eq!(plain.iter().map(|c| c.pm_id).collect::<Vec<_>>(), vec![1]);

        // Routed as mem-intensive: PM0's region has room, PM1 is shared,
        // PM2's region is full.
        let routed = feasible_candidates(&cluster, &spec, Some(Role::MemIntensive));
        assert_eq!(routed.iter().map(|c| c.pm_id).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(routed[0].region, Some(Role::MemIntensive));
        assert_eq!(routed[0].free_cpu, 32);
        assert_eq!(routed[0].free_mem, 96);
        assert_eq!(routed[1].region, None);
    }

    #[test]
    fn derive_seed_spreads_streams() {
        let s0 = derive_seed(7, 0);
        let s1 = derive_seed(7, 1);
        assert_ne!(s0, s1);
        assert_eq!(s0, derive_seed(7, 0));
    }
}

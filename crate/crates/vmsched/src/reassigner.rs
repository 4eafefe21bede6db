//! The placement intensifier: categorize requests by role, size each PM's
//! two role regions by exact integer search over the ALW objective, route
//! requests into their region, and adaptively unassign (merge back to
//! shared) when the partitioning gets in the way.
//!
//! Two unassign rules exist. The emergent rule fires when a request fits no
//! region and no shared PM: the first partitioned PM whose combined free
//! space could host the request is flipped to shared. The imbalance rule
//! fires after a placement when the two roles' normalized usage drifts apart
//! by more than a threshold: one completely empty partitioned PM is flipped
//! so the underloaded role's reservation shrinks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alw::{alw_cpu, alw_mem, imbalance, AlwError, ImbalanceInputs};
use crate::model::{Cluster, FlavorSet, ModelError, Partition, PartitionState, Role, VmSpec};
use crate::scheduler::{feasible_candidates, Candidate};

pub use crate::model::categorize;

/// A per-PM role split: region 1 (c1, m1) serves CPU-intensive requests,
/// region 2 (c2, m2) memory-intensive ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    pub c1: u32,
    pub m1: u32,
    pub c2: u32,
    pub m2: u32,
    /// Weighted ALW objective value at this split.
    pub objective: f64,
    pub lambda: f64,
}

impl AssignmentPlan {
    /// A caller-chosen split, validated only for resource conservation (the
    /// regions must sum to the PM), not for the largest-flavor constraints;
    /// deliberate rule-breaking splits are a supported experiment.
    pub fn manual(
        r_c: u32,
        r_m: u32,
        c1: u32,
        m1: u32,
        v_ci: &[VmSpec],
        v_mi: &[VmSpec],
        lambda: f64,
    ) -> Result<Self, ReassignerError> {
        if c1 > r_c || m1 > r_m {
            return Err(ReassignerError::InvalidPlan(format!(
                "split ({c1}, {m1}) exceeds the PM shape {r_c}U{r_m}G"
            )));
        }
        let (c2, m2) = (r_c - c1, r_m - m1);
        let (objective, _) = evaluate_split(c1, m1, c2, m2, v_ci, v_mi, lambda)?;
        Ok(Self {
            c1,
            m1,
            c2,
            m2,
            objective,
            lambda,
        })
    }

    fn partition(&self) -> Partition {
        Partition {
            c1: self.c1,
            m1: self.m1,
            c2: self.c2,
            m2: self.m2,
            used_ci_cpu: 0,
            used_ci_mem: 0,
            used_mi_cpu: 0,
            used_mi_mem: 0,
        }
    }

    pub fn has_zero_region(&self) -> bool {
        self.c1 == 0 || self.m1 == 0 || self.c2 == 0 || self.m2 == 0
    }
}

/// The weighted objective for one split, plus the unweighted total waste used
/// as a tie-breaker:
///
/// ```text
/// objective = λ·[ALW_c(c1,m1,Vci) + ALW_c(c2,m2,Vmi)]
///           + (1−λ)·[ALW_m(c1,m1,Vci) + ALW_m(c2,m2,Vmi)]
/// ```
pub fn evaluate_split(
    c1: u32,
    m1: u32,
    c2: u32,
    m2: u32,
    v_ci: &[VmSpec],
    v_mi: &[VmSpec],
    lambda: f64,
) -> Result<(f64, u64), ReassignerError> {
    if v_ci.is_empty() || v_mi.is_empty() {
        return Err(ReassignerError::EmptyRoleSet);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ReassignerError::InvalidLambda(lambda));
    }
    let wc = u64::from(alw_cpu(c1, m1, v_ci)?) + u64::from(alw_cpu(c2, m2, v_mi)?);
    let wm = u64::from(alw_mem(c1, m1, v_ci)?) + u64::from(alw_mem(c2, m2, v_mi)?);
    Ok((lambda * wc as f64 + (1.0 - lambda) * wm as f64, wc + wm))
}

/// Exact solution of the region-sizing problem by exhaustive integer search
/// over (c1, m1), with c2 = r_c − c1 and m2 = r_m − m1.
///
/// Each region must fit its role's largest flavor: largest by CPU for the
/// CPU-intensive set (and every co-maximal flavor's memory), largest by
/// memory for the memory-intensive set (and every co-maximal flavor's CPU).
/// Among objective minimizers, the split with the smallest unweighted total
/// waste wins, then the larger c1, then the larger m1; the secondary
/// criterion keeps a waste-free plan from hoarding resources a pure λ-slice
/// of the objective cannot see (λ = 1 is blind to memory waste and vice
/// versa).
pub fn solve_assignment(
    r_c: u32,
    r_m: u32,
    v_ci: &[VmSpec],
    v_mi: &[VmSpec],
    lambda: f64,
) -> Result<AssignmentPlan, ReassignerError> {
    if v_ci.is_empty() || v_mi.is_empty() {
        return Err(ReassignerError::EmptyRoleSet);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ReassignerError::InvalidLambda(lambda));
    }

    let max_ci_cpu = v_ci.iter().map(|v| v.cpu).max().expect("nonempty");
    let min_m1 = v_ci
        .iter()
        .filter(|v| v.cpu == max_ci_cpu)
        .map(|v| v.mem)
        .max()
        .expect("nonempty");
    let max_mi_mem = v_mi.iter().map(|v| v.mem).max().expect("nonempty");
    let min_c2 = v_mi
        .iter()
        .filter(|v| v.mem == max_mi_mem)
        .map(|v| v.cpu)
        .max()
        .expect("nonempty");

    if max_ci_cpu + min_c2 > r_c {
        return Err(ReassignerError::InfeasibleAssignment(format!(
            "c1 >= {max_ci_cpu} and c2 >= {min_c2} cannot both hold with r_c = {r_c}"
        )));
    }
    if min_m1 + max_mi_mem > r_m {
        return Err(ReassignerError::InfeasibleAssignment(format!(
            "m1 >= {min_m1} and m2 >= {max_mi_mem} cannot both hold with r_m = {r_m}"
        )));
    }

    let mut best: Option<AssignmentPlan> = None;
    let mut best_total = u64::MAX;
    for c1 in max_ci_cpu..=(r_c - min_c2) {
        for m1 in min_m1..=(r_m - max_mi_mem) {
            let (c2, m2) = (r_c - c1, r_m - m1);
            let (objective, total) = evaluate_split(c1, m1, c2, m2, v_ci, v_mi, lambda)?;
            let better = match &best {
                None => true,
                Some(b) => {
                    objective < b.objective
                        || (objective == b.objective
                            && (total < best_total
                                || (total == best_total
                                    && (c1 > b.c1 || (c1 == b.c1 && m1 > b.m1)))))
                }
            };
            if better {
                best = Some(AssignmentPlan {
                    c1,
                    m1,
                    c2,
                    m2,
                    objective,
                    lambda,
                });
                best_total = total;
            }
        }
    }
    best.ok_or_else(|| {
        ReassignerError::InfeasibleAssignment("empty search space after constraints".into())
    })
}

/// Convenience: solve against a flavor set's role subsets.
pub fn solve_for_flavor_set(
    r_c: u32,
    r_m: u32,
    flavor_set: &FlavorSet,
    lambda: f64,
) -> Result<AssignmentPlan, ReassignerError> {
    let v_ci: Vec<VmSpec> = flavor_set.of_role(Role::CpuIntensive).cloned().collect();
    let v_mi: Vec<VmSpec> = flavor_set.of_role(Role::MemIntensive).cloned().collect();
    solve_assignment(r_c, r_m, &v_ci, &v_mi, lambda)
}

/// Applies one plan to every PM of an empty cluster.
pub fn initialize(cluster: &mut Cluster, plan: &AssignmentPlan) -> Result<(), ReassignerError> {
    if !cluster.is_empty() {
        return Err(ReassignerError::NonEmptyCluster);
    }
    let config = cluster.config();
    if plan.c1 + plan.c2 != config.pm_cpu || plan.m1 + plan.m2 != config.pm_mem {
        return Err(ReassignerError::InvalidPlan(format!(
            "plan regions sum to ({}, {}), PM shape is {}U{}G",
            plan.c1 + plan.c2,
            plan.m1 + plan.m2,
            config.pm_cpu,
            config.pm_mem
        )));
    }
    for pm_id in 0..config.n_pms {
        cluster.set_partition(pm_id, PartitionState::Partitioned(plan.partition()))?;
    }
    Ok(())
}

/// Feasible targets for a categorized request: matching regions of
/// partitioned PMs plus whole shared PMs, in pm_id order.
pub fn eligible_candidates(cluster: &Cluster, spec: &VmSpec, role: Role) -> Vec<Candidate> {
    feasible_candidates(cluster, spec, Some(role))
}

/// Emergent unassignment: the first partitioned PM whose combined free
/// resources fit the otherwise-unplaceable request is flipped to shared.
/// Returns the flipped PM, or None when no PM qualifies (the run ends).
pub fn unassign_emergent(cluster: &mut Cluster, spec: &VmSpec) -> Option<usize> {
    let pm_id = cluster
        .pms()
        .iter()
        .find(|pm| pm.partition.is_partitioned() && cluster.can_fit(pm.pm_id, spec, None))
        .map(|pm| pm.pm_id)?;
    cluster
        .set_partition(pm_id, PartitionState::Shared)
        .expect("flipping to shared cannot fail");
    Some(pm_id)
}

/// Mutable intensifier bookkeeping for one run.
#[derive(Debug, Clone)]
pub struct IntensifierState {
    pub plan: AssignmentPlan,
    pub n_unassign_imbalance: u32,
}

impl IntensifierState {
    pub fn new(plan: AssignmentPlan) -> Self {
        Self {
            plan,
            n_unassign_imbalance: 0,
        }
    }
}

/// Imbalance unassignment: when the roles' normalized usage differs by at
/// least `alpha` PM-equivalents (after damping by previous imbalance
/// unassigns), flip the lowest-id completely empty partitioned PM to shared.
/// The counter moves only when a PM actually flips.
pub fn maybe_unassign_imbalance(
    cluster: &mut Cluster,
    state: &mut IntensifierState,
    alpha: f64,
) -> Result<Option<usize>, ReassignerError> {
    let usage = cluster.role_usage();
    let gamma = imbalance(&ImbalanceInputs {
        sum_ci_cpu: usage.ci_cpu,
        sum_ci_mem: usage.ci_mem,
        sum_mi_cpu: usage.mi_cpu,
        sum_mi_mem: usage.mi_mem,
        c1: state.plan.c1,
        m1: state.plan.m1,
        c2: state.plan.c2,
        m2: state.plan.m2,
        n_unassign: state.n_unassign_imbalance,
    })?;
    if gamma < alpha {
        return Ok(None);
    }
    let pm_id = cluster.pms().iter().find_map(|pm| match &pm.partition {
        PartitionState::Partitioned(p) if p.is_empty() && pm.is_idle() => Some(pm.pm_id),
        _ => None,
    });
    match pm_id {
        Some(pm_id) => {
            cluster
                .set_partition(pm_id, PartitionState::Shared)
                .expect("flipping to shared cannot fail");
            state.n_unassign_imbalance += 1;
            Ok(Some(pm_id))
        }
        None => Ok(None),
    }
}

/// How a run applies the intensifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensifierConfig {
    /// Weight of CPU waste against memory waste in the region-sizing objective.
    pub lambda: f64,
    /// Imbalance threshold in PM-equivalents (already scaled by cluster size).
    pub alpha: f64,
    /// Use this split instead of solving for one.
    pub plan_override: Option<AssignmentPlan>,
    pub emergent_unassign: bool,
    pub imbalance_unassign: bool,
    /// Partition every PM at run start. Disabled, the intensifier degrades to
    /// the base scheduler: nothing is partitioned, so routing changes nothing
    /// and neither unassign rule can fire.
    pub partition_at_start: bool,
}

impl IntensifierConfig {
    pub fn new(lambda: f64, alpha: f64) -> Self {
        Self {
            lambda,
            alpha,
            plan_override: None,
            emergent_unassign: true,
            imbalance_unassign: true,
            partition_at_start: true,
        }
    }

    /// The plan a run will use: the override if present, otherwise the solved
    /// optimum for the flavor set's role subsets.
    pub fn resolve_plan(
        &self,
        r_c: u32,
        r_m: u32,
        flavor_set: &FlavorSet,
    ) -> Result<AssignmentPlan, ReassignerError> {
        let plan = match &self.plan_override {
            Some(plan) => *plan,
            None => solve_for_flavor_set(r_c, r_m, flavor_set, self.lambda)?,
        };
        if self.imbalance_unassign && plan.has_zero_region() {
            return Err(ReassignerError::InvalidPlan(
                "imbalance unassignment needs positive region capacities".into(),
            ));
        }
        Ok(plan)
    }
}

#[derive(Debug, Error)]
pub enum ReassignerError {
    #[error("both role subsets must be nonempty")]
    EmptyRoleSet,
    #[error("lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("no feasible assignment: {0}")]
    InfeasibleAssignment(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("cluster must be empty to initialize partitions")]
    NonEmptyCluster,
    #[error(transparent)]
    Alw(#[from] AlwError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_flavors, ClusterConfig, VmId};

    fn default_role_sets() -> (Vec<VmSpec>, Vec<VmSpec>) {
        let fs = FlavorSet::new(default_flavors(), 128, 160).unwrap();
        (
            fs.of_role(Role::CpuIntensive).cloned().collect(),
            fs.of_role(Role::MemIntensive).cloned().collect(),
        )
    }

    fn plan_96_64() -> AssignmentPlan {
        let (v_ci, v_mi) = default_role_sets();
        solve_assignment(128, 160, &v_ci, &v_mi, 0.5).unwrap()
    }

    #[test]
    fn default_set_solves_to_96_64_32_96_for_any_lambda() {
        let (v_ci, v_mi) = default_role_sets();
        for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let plan = solve_assignment(128, 160, &v_ci, &v_mi, lambda).unwrap();
            assert_eq!(
                (plan.c1, plan.m1, plan.c2, plan.m2),
                (96, 64, 32, 96),
                "lambda = {lambda}"
            );
            assert_eq!(plan.objective, 0.0, "lambda = {lambda}");
        }
    }

    #[test]
    fn tiny_instance_matches_hand_search() {
        // r = 4U8G, one 2U1G CPU-heavy flavor, one 1U2G memory-heavy flavor.
        // All zero-objective splits at lambda = 1 share the same total waste,
        // so the larger-m1 rule decides.
        let plan = solve_assignment(
            4,
            8,
            &[VmSpec::new(2, 1)],
            &[VmSpec::new(1, 2)],
            1.0,
        )
        .unwrap();
        assert_eq!((plan.c1, plan.m1, plan.c2, plan.m2), (2, 4, 2, 4));
    }

    #[test]
    fn largest_flavor_constraint_infeasible() {
        let err = solve_assignment(
            64,
            160,
            &[VmSpec::new(96, 64)],
            &[VmSpec::new(2, 4)],
            0.5,
        )
        .unwrap_err();
        assert!(matches!(err, ReassignerError::InfeasibleAssignment(_)));
    }

    #[test]
    fn empty_role_subset_is_rejected() {
        assert!(matches!(
            solve_assignment(128, 160, &[], &[VmSpec::new(2, 4)], 0.5).unwrap_err(),
            ReassignerError::EmptyRoleSet
        ));
    }

    #[test]
    fn solution_ignores_flavor_order() {
        let (mut v_ci, mut v_mi) = default_role_sets();
        let forward = solve_assignment(128, 160, &v_ci, &v_mi, 0.3).unwrap();
        v_ci.reverse();
        v_mi.reverse();
        let backward = solve_assignment(128, 160, &v_ci, &v_mi, 0.3).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn reported_objective_matches_independent_reevaluation() {
        let (v_ci, v_mi) = default_role_sets();
        for lambda in [0.0, 0.3, 1.0] {
            let plan = solve_assignment(128, 160, &v_ci, &v_mi, lambda).unwrap();
            let (objective, _) =
                evaluate_split(plan.c1, plan.m1, plan.c2, plan.m2, &v_ci, &v_mi, lambda).unwrap();
            assert_eq!(plan.objective, objective);
            // And no sampled feasible split beats it.
            for (c1, m1) in [(96, 64), (96, 70), (96, 96)] {
                let (other, _) =
                    evaluate_split(c1, m1, 128 - c1, 160 - m1, &v_ci, &v_mi, lambda).unwrap();
                assert!(plan.objective <= other);
            }
        }
    }

    #[test]
    fn manual_plan_skips_largest_flavor_constraints() {
        let (v_ci, v_mi) = default_role_sets();
        // 108U72G deliberately starves region 2 below its largest flavor.
        let plan = AssignmentPlan::manual(128, 160, 108, 72, &v_ci, &v_mi, 0.5).unwrap();
        assert_eq!((plan.c2, plan.m2), (20, 88));
        assert!(AssignmentPlan::manual(128, 160, 129, 0, &v_ci, &v_mi, 0.5).is_err());
    }

    #[test]
    fn initialize_partitions_every_pm() {
        let mut cluster = Cluster::new(ClusterConfig::new(3, 128, 160)).unwrap();
        let plan = plan_96_64();
        initialize(&mut cluster, &plan).unwrap();
        for pm in cluster.pms() {
            let p = pm.partition.as_partition().unwrap();
            assert_eq!((p.c1, p.m1, p.c2, p.m2), (96, 64, 32, 96));
            assert!(p.is_empty());
        }
        // A second initialize must fail once anything is placed.
        cluster
            .place(VmId(1), &VmSpec::new(12, 8), 0, Some(Role::CpuIntensive))
            .unwrap();
        assert!(matches!(
            initialize(&mut cluster, &plan).unwrap_err(),
            ReassignerError::NonEmptyCluster
        ));
    }

    #[test]
    fn eligible_candidates_route_by_role() {
        let mut cluster = Cluster::new(ClusterConfig::new(2, 128, 160)).unwrap();
        initialize(&mut cluster, &plan_96_64()).unwrap();
        let cands = eligible_candidates(&cluster, &VmSpec::new(12, 8), Role::CpuIntensive);
        assert_eq!(cands.len(), 2);
        assert!(cands.iter().all(|c| c.region == Some(Role::CpuIntensive)));
    }

    #[test]
    fn emergent_unassign_picks_first_pm_with_combined_room() {
        let mut cluster = Cluster::new(ClusterConfig::new(2, 128, 160)).unwrap();
        initialize(&mut cluster, &plan_96_64()).unwrap();
        // Consume PM0's ci region so only its combined free space (32U96G of
        // region 2 plus nothing of region 1) could host a 40U100G request.
        cluster
            .place(VmId(1), &VmSpec::new(96, 64), 0, Some(Role::CpuIntensive))
            .unwrap();
        let big = VmSpec::new(40, 100);
        // Neither region fits it anywhere: c1-region mem is 64 < 100 and
        // c2-region cpu is 32 < 40. Whole-PM space on PM1 does fit.
        assert!(eligible_candidates(&cluster, &big, Role::CpuIntensive).is_empty());
        assert_eq!(unassign_emergent(&mut cluster, &big), Some(1));
        assert!(!cluster.pm(1).partition.is_partitioned());
        // And now the request has a home.
        assert_eq!(
            eligible_candidates(&cluster, &big, Role::CpuIntensive).len(),
            1
        );
    }

    #[test]
    fn emergent_unassign_none_when_nothing_fits() {
        let mut cluster = Cluster::new(ClusterConfig::new(1, 128, 160)).unwrap();
        initialize(&mut cluster, &plan_96_64()).unwrap();
        cluster
            .place(VmId(1), &VmSpec::new(96, 64), 0, Some(Role::CpuIntensive))
            .unwrap();
        assert_eq!(unassign_emergent(&mut cluster, &VmSpec::new(64, 100)), None);
        assert!(cluster.pm(0).partition.is_partitioned());
    }

    #[test]
    fn imbalance_unassign_trigger_and_threshold() {
        let plan = plan_96_64();
        let mut cluster = Cluster::new(ClusterConfig::new(3, 128, 160)).unwrap();
        initialize(&mut cluster, &plan).unwrap();
        cluster
            .place(VmId(1), &VmSpec::new(96, 64), 0, Some(Role::CpuIntensive))
            .unwrap();

        // Gamma = min(96/96 - 0/32, 64/64 - 0/96) = 1.
        let mut state = IntensifierState::new(plan);
        let flipped = maybe_unassign_imbalance(&mut cluster, &mut state, 0.9).unwrap();
        assert_eq!(flipped, Some(1), "PM0 carries usage; PM1 is the first empty one");
        assert_eq!(state.n_unassign_imbalance, 1);

        // Damped by the unassign counter, gamma drops to 0 and 0.9 no longer
        // triggers.
        assert_eq!(
            maybe_unassign_imbalance(&mut cluster, &mut state, 0.9).unwrap(),
            None
        );

        // A colder threshold never triggers on the fresh state.
        let mut cluster = Cluster::new(ClusterConfig::new(3, 128, 160)).unwrap();
        initialize(&mut cluster, &plan).unwrap();
        cluster
            .place(VmId(1), &VmSpec::new(96, 64), 0, Some(Role::CpuIntensive))
            .unwrap();
        let mut state = IntensifierState::new(plan);
        assert_eq!(
            maybe_unassign_imbalance(&mut cluster, &mut state, 1.5).unwrap(),
            None
        );
        assert_eq!(state.n_unassign_imbalance, 0);
    }

    #[test]
    fn imbalance_unassign_needs_an_empty_pm() {
        let plan = plan_96_64();
        let mut cluster = Cluster::new(ClusterConfig::new(1, 128, 160)).unwrap();
        initialize(&mut cluster, &plan).unwrap();
        cluster
            .place(VmId(1), &VmSpec::new(96, 64), 0, Some(Role::CpuIntensive))
            .unwrap();
        let mut state = IntensifierState::new(plan);
        // Gamma = 1 >= 0.5 but the only PM carries usage: no flip, no count.
        assert_eq!(
            maybe_unassign_imbalance(&mut cluster, &mut state, 0.5).unwrap(),
            None
        );
        assert_eq!(state.n_unassign_imbalance, 0);
    }
}

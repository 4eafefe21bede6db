//! The at-least-waste (ALW) metric and the role-imbalance measure.
//!
//! Given residual resources (δc, δm) and a flavor set V, the at-least waste
//! of CPU is the CPU left over after packing as many copies as possible of
//! the single best flavor:
//!
//! ```text
//! ALW_c(δc, δm, V) = min over v in V of  δc − v_cpu · min(⌊δc/v_cpu⌋, ⌊δm/v_mem⌋)
//! ```
//!
//! and symmetrically for memory. Whatever the future request mix, at least
//! this much of the resource cannot be sold, which makes ALW a lower bound on
//! waste and a useful objective for sizing role regions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Cluster, FlavorSet, VmSpec};

/// CPU and memory waste reported together.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlwPair {
    pub cpu: u64,
    pub mem: u64,
}

/// At-least waste of CPU for residual (delta_c, delta_m) against a flavor set.
pub fn alw_cpu<'a>(
    delta_c: u32,
    delta_m: u32,
    flavors: impl IntoIterator<Item = &'a VmSpec>,
) -> Result<u32, AlwError> {
    alw(delta_c, delta_m, flavors, |spec| (spec.cpu, spec.mem))
}

/// At-least waste of memory; the mirror image of [`alw_cpu`].
pub fn alw_mem<'a>(
    delta_c: u32,
    delta_m: u32,
    flavors: impl IntoIterator<Item = &'a VmSpec>,
) -> Result<u32, AlwError> {
    alw(delta_m, delta_c, flavors, |spec| (spec.mem, spec.cpu))
}

/// Shared kernel: waste of the primary dimension, where `axes` projects a
/// flavor to (primary, secondary) amounts.
fn alw<'a>(
    primary: u32,
    secondary: u32,
    flavors: impl IntoIterator<Item = &'a VmSpec>,
    axes: fn(&VmSpec) -> (u32, u32),
) -> Result<u32, AlwError> {
    let mut best: Option<u32> = None;
    for spec in flavors {
        let (p, s) = axes(spec);
        if p == 0 || s == 0 {
            return Err(AlwError::ZeroResourceFlavor {
                flavor_id: spec.flavor_id.clone(),
            });
        }
        let copies = (primary / p).min(secondary / s);
        let waste = primary - p * copies;
        best = Some(best.map_or(waste, |b| b.min(waste)));
        if best == Some(0) {
            break;
        }
    }
    best.ok_or(AlwError::EmptyFlavorSet)
}

/// Cluster-level ALW: the sum over PMs of the ALW of each PM's whole free
/// residual, judged against the full flavor set.
pub fn cluster_alw(cluster: &Cluster, flavor_set: &FlavorSet) -> Result<AlwPair, AlwError> {
    let mut total = AlwPair::default();
    for pm in cluster.pms() {
        let (free_c, free_m) = (pm.free_cpu(), pm.free_mem());
        total.cpu += u64::from(alw_cpu(free_c, free_m, flavor_set.flavors())?);
        total.mem += u64::from(alw_mem(free_c, free_m, flavor_set.flavors())?);
    }
    Ok(total)
}

/// Inputs to the imbalance measure: cluster-wide usage sums per role, the
/// per-PM region capacities they are normalized by, and how many PMs the
/// imbalance rule has already unassigned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceInputs {
    pub sum_ci_cpu: u64,
    pub sum_ci_mem: u64,
    pub sum_mi_cpu: u64,
    pub sum_mi_mem: u64,
    pub c1: u32,
    pub m1: u32,
    pub c2: u32,
    pub m2: u32,
    pub n_unassign: u32,
}

/// The imbalance between the two roles' normalized usage, damped by the
/// number of PMs already unassigned for imbalance:
///
/// ```text
/// Γ = min(|Σci_cpu/c1 − Σmi_cpu/c2|, |Σci_mem/m1 − Σmi_mem/m2|) − n_unassign
/// ```
///
/// May be negative. Units are PM-equivalents, so thresholds scale with the
/// cluster size.
pub fn imbalance(inputs: &ImbalanceInputs) -> Result<f64, AlwError> {
    if inputs.c1 == 0 || inputs.m1 == 0 || inputs.c2 == 0 || inputs.m2 == 0 {
        return Err(AlwError::ZeroRegionCapacity);
    }
    let cpu_gap =
        (inputs.sum_ci_cpu as f64 / f64::from(inputs.c1) - inputs.sum_mi_cpu as f64 / f64::from(inputs.c2)).abs();
    let mem_gap =
        (inputs.sum_ci_mem as f64 / f64::from(inputs.m1) - inputs.sum_mi_mem as f64 / f64::from(inputs.m2)).abs();
    Ok(cpu_gap.min(mem_gap) - f64::from(inputs.n_unassign))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AlwError {
    #[error("ALW over an empty flavor set is undefined")]
    EmptyFlavorSet,
    #[error("flavor {flavor_id} has a zero resource amount")]
    ZeroResourceFlavor { flavor_id: String },
    #[error("imbalance requires positive region capacities")]
    ZeroRegionCapacity,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClusterConfig, VmId};
    use proptest::prelude::*;

    /// Independent oracle: per flavor, actually pack copies one at a time
    /// until a dimension runs out, then take the smallest CPU residual.
    fn alw_cpu_oracle(delta_c: u32, delta_m: u32, flavors: &[VmSpec]) -> u32 {
        flavors
            .iter()
            .map(|v| {
                let (mut c, mut m) = (delta_c, delta_m);
                while c >= v.cpu && m >= v.mem {
                    c -= v.cpu;
                    m -= v.mem;
                }
                c
            })
            .min()
            .expect("oracle needs a nonempty set")
    }

    fn specs(pairs: &[(u32, u32)]) -> Vec<VmSpec> {
        pairs.iter().map(|&(c, m)| VmSpec::new(c, m)).collect()
    }

    #[test]
    fn alw_cpu_hand_cases() {
        let v = specs(&[(12, 8), (2, 4)]);
        // (13,10): 12U8G packs once leaving 1; 2U4G packs twice leaving 9.
        assert_eq!(alw_cpu(13, 10, &v).unwrap(), 1);
        // No memory at all: everything is CPU waste.
        assert_eq!(alw_cpu(88, 0, &v).unwrap(), 88);
        assert_eq!(alw_mem(0, 96, &v).unwrap(), 96);
        // 2U4G fits (5,8) twice, memory exactly consumed.
        assert_eq!(alw_mem(5, 8, &specs(&[(2, 4)])).unwrap(), 0);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert_eq!(alw_cpu(10, 10, &[]).unwrap_err(), AlwError::EmptyFlavorSet);
    }

    #[test]
    fn cluster_alw_sums_whole_pm_residuals() {
        let fs = FlavorSet::new(specs(&[(8, 10)]), 128, 160).unwrap();
        let cluster = Cluster::new(ClusterConfig::new(3, 128, 160)).unwrap();
        // (8,10) tiles 128U160G exactly: 16 copies.
        assert_eq!(
            cluster_alw(&cluster, &fs).unwrap(),
            AlwPair { cpu: 0, mem: 0 }
        );

        let fs = FlavorSet::new(specs(&[(12, 8), (2, 4)]), 128, 160).unwrap();
        let mut cluster = Cluster::new(ClusterConfig::new(2, 128, 160)).unwrap();
        // Leave each PM with residual (13, 10): alw_cpu 1 each.
        cluster.place(VmId(0), &VmSpec::new(115, 150), 0, None).unwrap();
        cluster.place(VmId(1), &VmSpec::new(115, 150), 1, None).unwrap();
        assert_eq!(cluster_alw(&cluster, &fs).unwrap().cpu, 2);
    }

    #[test]
    fn imbalance_hand_cases() {
        let mut inputs = ImbalanceInputs {
            sum_ci_cpu: 96,
            sum_ci_mem: 64,
            sum_mi_cpu: 0,
            sum_mi_mem: 0,
            c1: 96,
            m1: 64,
            c2: 32,
            m2: 96,
            n_unassign: 0,
        };
        assert_eq!(imbalance(&inputs).unwrap(), 1.0);
        inputs.n_unassign = 1;
        assert_eq!(imbalance(&inputs).unwrap(), 0.0);

        let zeroed = ImbalanceInputs {
            sum_ci_cpu: 0,
            sum_ci_mem: 0,
            sum_mi_cpu: 0,
            sum_mi_mem: 0,
            ..inputs
        };
        assert_eq!(
            imbalance(&ImbalanceInputs {
                n_unassign: 0,
                ..zeroed
            })
            .unwrap(),
            0.0
        );
        assert_eq!(
            imbalance(&ImbalanceInputs { c2: 0, ..inputs }).unwrap_err(),
            AlwError::ZeroRegionCapacity
        );
    }

    #[test]
    fn imbalance_symmetric_under_role_swap() {
        let a = ImbalanceInputs {
            sum_ci_cpu: 70,
            sum_ci_mem: 31,
            sum_mi_cpu: 11,
            sum_mi_mem: 90,
            c1: 96,
            m1: 64,
            c2: 32,
            m2: 96,
            n_unassign: 2,
        };
        let b = ImbalanceInputs {
            sum_ci_cpu: a.sum_mi_cpu,
            sum_ci_mem: a.sum_mi_mem,
            sum_mi_cpu: a.sum_ci_cpu,
            sum_mi_mem: a.sum_ci_mem,
            c1: a.c2,
            m1: a.m2,
            c2: a.c1,
            m2: a.m1,
            n_unassign: a.n_unassign,
        };
        assert_eq!(imbalance(&a).unwrap(), imbalance(&b).unwrap());
    }

    proptest! {
        #[test]
        fn alw_is_bounded_by_the_residual(
            dc in 0u32..=256,
            dm in 0u32..=256,
            raw in prop::collection::vec((1u32..=64, 1u32..=64), 1..=6),
        ) {
            let v = specs(&raw);
            let w = alw_cpu(dc, dm, &v).unwrap();
            prop_assert!(w <= dc);
            let w = alw_mem(dc, dm, &v).unwrap();
            prop_assert!(w <= dm);
        }

        #[test]
        fn adding_a_flavor_never_increases_alw(
            dc in 0u32..=256,
            dm in 0u32..=256,
            raw in prop::collection::vec((1u32..=64, 1u32..=64), 1..=5),
            extra in (1u32..=64, 1u32..=64),
        ) {
            let v = specs(&raw);
            let mut bigger = v.clone();
            bigger.push(VmSpec::new(extra.0, extra.1));
            prop_assert!(alw_cpu(dc, dm, &bigger).unwrap() <= alw_cpu(dc, dm, &v).unwrap());
            prop_assert!(alw_mem(dc, dm, &bigger).unwrap() <= alw_mem(dc, dm, &v).unwrap());
        }

        #[test]
        fn matches_packing_oracle(
            dc in 0u32..=64,
            dm in 0u32..=64,
            raw in prop::collection::vec((1u32..=64, 1u32..=64), 1..=4),
        ) {
            let v = specs(&raw);
            prop_assert_eq!(alw_cpu(dc, dm, &v).unwrap(), alw_cpu_oracle(dc, dm, &v));
        }
    }
}

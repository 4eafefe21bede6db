//! Domain types for requests, flavors, machines, NUMA nodes, partition state,
//! and the placement bookkeeping every other module operates on.
//!
//! A cluster is a set of homogeneous physical machines (PMs), each exposing
//! one or more NUMA nodes. A PM is either `Shared` (any request may use its
//! whole free space) or `Partitioned` into two role regions, one reserved for
//! CPU-intensive requests and one for memory-intensive requests. Placement
//! and release keep three layers of accounting in sync: per-NUMA usage,
//! per-PM region usage, and cluster-wide per-role usage sums.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a virtual machine instance within a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VmId(pub u64);

impl fmt::Display for VmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vm{}", self.0)
    }
}

/// A VM specification (flavor): the CPU cores and memory units one request
/// of this flavor reserves.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VmSpec {
    pub flavor_id: String,
    pub cpu: u32,
    pub mem: u32,
}

impl VmSpec {
    /// Builds a spec with the canonical `<cpu>U<mem>G` flavor id.
    pub fn new(cpu: u32, mem: u32) -> Self {
        Self {
            flavor_id: format!("{cpu}U{mem}G"),
            cpu,
            mem,
        }
    }

    pub fn with_id(flavor_id: impl Into<String>, cpu: u32, mem: u32) -> Self {
        Self {
            flavor_id: flavor_id.into(),
            cpu,
            mem,
        }
    }
}

impl fmt::Display for VmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}U{}G", self.cpu, self.mem)
    }
}

/// The meta-type of a request or of a role region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    CpuIntensive,
    MemIntensive,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::CpuIntensive => Role::MemIntensive,
            Role::MemIntensive => Role::CpuIntensive,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::CpuIntensive => write!(f, "cpu-intensive"),
            Role::MemIntensive => write!(f, "mem-intensive"),
        }
    }
}

/// Categorizes a flavor against the PM shape: CPU-intensive iff its
/// CPU-to-memory ratio is at least the PM's, i.e. `v_cpu / v_mem >= r_cpu / r_mem`,
/// evaluated by integer cross-multiplication so the boundary is exact.
pub fn categorize(spec: &VmSpec, pm_cpu: u32, pm_mem: u32) -> Role {
    if u64::from(spec.cpu) * u64::from(pm_mem) >= u64::from(spec.mem) * u64::from(pm_cpu) {
        Role::CpuIntensive
    } else {
        Role::MemIntensive
    }
}

/// The VM specification universe and its per-role subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlavorSet {
    flavors: Vec<VmSpec>,
    roles: BTreeMap<String, Role>,
}

impl FlavorSet {
    /// Validates the flavors against a PM shape and computes each flavor's role.
    ///
    /// Rejects an empty list, duplicate flavor ids, zero resource amounts, and
    /// any flavor that cannot fit an empty PM of the given shape.
    pub fn new(flavors: Vec<VmSpec>, pm_cpu: u32, pm_mem: u32) -> Result<Self, ModelError> {
        if flavors.is_empty() {
            return Err(ModelError::EmptyFlavorSet);
        }
        let mut roles = BTreeMap::new();
        for spec in &flavors {
            if spec.cpu == 0 || spec.mem == 0 {
                return Err(ModelError::InvalidFlavor {
                    flavor_id: spec.flavor_id.clone(),
                    reason: "cpu and mem must be at least 1".into(),
                });
            }
            if spec.cpu > pm_cpu || spec.mem > pm_mem {
                return Err(ModelError::InvalidFlavor {
                    flavor_id: spec.flavor_id.clone(),
                    reason: format!("does not fit an empty {pm_cpu}U{pm_mem}G PM"),
                });
            }
            if roles
                .insert(spec.flavor_id.clone(), categorize(spec, pm_cpu, pm_mem))
                .is_some()
            {
                return Err(ModelError::InvalidFlavor {
                    flavor_id: spec.flavor_id.clone(),
                    reason: "duplicate flavor id".into(),
                });
            }
        }
        Ok(Self { flavors, roles })
    }

    pub fn flavors(&self) -> &[VmSpec] {
        &self.flavors
    }

    pub fn role_of(&self, flavor_id: &str) -> Option<Role> {
        self.roles.get(flavor_id).copied()
    }

    pub fn of_role(&self, role: Role) -> impl Iterator<Item = &VmSpec> {
        self.flavors
            .iter()
            .filter(move |s| self.roles.get(&s.flavor_id) == Some(&role))
    }

    pub fn find(&self, cpu: u32, mem: u32) -> Option<&VmSpec> {
        self.flavors.iter().find(|s| s.cpu == cpu && s.mem == mem)
    }

    pub fn len(&self) -> usize {
        self.flavors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flavors.is_empty()
    }
}

/// The 12 default flavors: four 3:2 shapes, five 1:2 shapes, three 1:4 shapes.
pub fn default_flavors() -> Vec<VmSpec> {
    [
        (12, 8),
        (24, 16),
        (48, 32),
        (96, 64),
        (2, 4),
        (4, 8),
        (8, 16),
        (16, 32),
        (32, 64),
        (2, 8),
        (4, 16),
        (8, 32),
    ]
    .into_iter()
    .map(|(c, m)| VmSpec::new(c, m))
    .collect()
}

/// One event of a request sequence: create a VM of some flavor, or delete a
/// previously created one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub vm_id: VmId,
    pub kind: RequestKind,
    /// Monotone position of the request within its trace.
    pub seq: u64,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RequestKind {
    Create(VmSpec),
    Delete,
}

impl Request {
    pub fn is_create(&self) -> bool {
        matches!(self.kind, RequestKind::Create(_))
    }
}

/// One NUMA node of a PM: fixed capacity plus current usage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumaNode {
    pub cap_cpu: u32,
    pub cap_mem: u32,
    pub used_cpu: u32,
    pub used_mem: u32,
}

impl NumaNode {
    fn empty(cap_cpu: u32, cap_mem: u32) -> Self {
        Self {
            cap_cpu,
            cap_mem,
            used_cpu: 0,
            used_mem: 0,
        }
    }

    pub fn free_cpu(&self) -> u32 {
        self.cap_cpu - self.used_cpu
    }

    pub fn free_mem(&self) -> u32 {
        self.cap_mem - self.used_mem
    }
}

/// Role-region capacities and usage of a partitioned PM. Region 1 is the
/// CPU-intensive region, region 2 the memory-intensive one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub c1: u32,
    pub m1: u32,
    pub c2: u32,
    pub m2: u32,
    pub used_ci_cpu: u32,
    pub used_ci_mem: u32,
    pub used_mi_cpu: u32,
    pub used_mi_mem: u32,
}

impl Partition {
    pub fn region_cap(&self, role: Role) -> (u32, u32) {
        match role {
            Role::CpuIntensive => (self.c1, self.m1),
            Role::MemIntensive => (self.c2, self.m2),
        }
    }

    pub fn region_used(&self, role: Role) -> (u32, u32) {
        match role {
            Role::CpuIntensive => (self.used_ci_cpu, self.used_ci_mem),
            Role::MemIntensive => (self.used_mi_cpu, self.used_mi_mem),
        }
    }

    pub fn region_free(&self, role: Role) -> (u32, u32) {
        let (cap_c, cap_m) = self.region_cap(role);
        let (used_c, used_m) = self.region_used(role);
        (cap_c - used_c, cap_m - used_m)
    }

    /// True when neither region carries any usage.
    pub fn is_empty(&self) -> bool {
        self.used_ci_cpu == 0
            && self.used_ci_mem == 0
            && self.used_mi_cpu == 0
            && self.used_mi_mem == 0
    }

    fn add(&mut self, role: Role, cpu: u32, mem: u32) {
        match role {
            Role::CpuIntensive => {
                self.used_ci_cpu += cpu;
                self.used_ci_mem += mem;
            }
            Role::MemIntensive => {
                self.used_mi_cpu += cpu;
                self.used_mi_mem += mem;
            }
        }
    }

    fn sub(&mut self, role: Role, cpu: u32, mem: u32) -> Result<(), ModelError> {
        let (uc, um) = match role {
            Role::CpuIntensive => (&mut self.used_ci_cpu, &mut self.used_ci_mem),
            Role::MemIntensive => (&mut self.used_mi_cpu, &mut self.used_mi_mem),
        };
        *uc = uc
            .checked_sub(cpu)
            .ok_or_else(|| ModelError::internal("region cpu usage underflow"))?;
        *um = um
            .checked_sub(mem)
            .ok_or_else(|| ModelError::internal("region mem usage underflow"))?;
        Ok(())
    }
}

/// Whether a PM's resources are split into two role regions or usable by any
/// request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionState {
    Shared,
    Partitioned(Partition),
}

impl PartitionState {
    pub fn is_partitioned(&self) -> bool {
        matches!(self, PartitionState::Partitioned(_))
    }

    pub fn as_partition(&self) -> Option<&Partition> {
        match self {
            PartitionState::Partitioned(p) => Some(p),
            PartitionState::Shared => None,
        }
    }
}

/// One physical machine: identical NUMA nodes plus its partition state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalMachine {
    pub pm_id: usize,
    pub numa_nodes: Vec<NumaNode>,
    pub partition: PartitionState,
}

impl PhysicalMachine {
    pub fn used_cpu(&self) -> u32 {
        self.numa_nodes.iter().map(|n| n.used_cpu).sum()
    }

    pub fn used_mem(&self) -> u32 {
        self.numa_nodes.iter().map(|n| n.used_mem).sum()
    }

    pub fn cap_cpu(&self) -> u32 {
        self.numa_nodes.iter().map(|n| n.cap_cpu).sum()
    }

    pub fn cap_mem(&self) -> u32 {
        self.numa_nodes.iter().map(|n| n.cap_mem).sum()
    }

    pub fn free_cpu(&self) -> u32 {
        self.cap_cpu() - self.used_cpu()
    }

    pub fn free_mem(&self) -> u32 {
        self.cap_mem() - self.used_mem()
    }

    pub fn is_idle(&self) -> bool {
        self.used_cpu() == 0 && self.used_mem() == 0
    }
}

/// Where a live VM sits: its PM, the NUMA nodes it spans, the role region it
/// was placed into (if any), and the recorded amounts needed to release it
/// exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub vm_id: VmId,
    pub pm_id: usize,
    pub numa_ids: Vec<usize>,
    /// Present iff the VM was placed into a region of a partitioned PM.
    pub role_region: Option<Role>,
    pub spec: VmSpec,
}

/// Cluster shape: PM count, per-PM capacities, NUMA nodes per PM, and the
/// large-VM rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n_pms: usize,
    pub pm_cpu: u32,
    pub pm_mem: u32,
    pub numa_per_pm: u32,
    /// Per-flavor override of the large-VM rule: `true` forces the flavor to
    /// split across all NUMA nodes, `false` pins it to a single node.
    #[serde(default)]
    pub large_vm_overrides: BTreeMap<String, bool>,
}

impl ClusterConfig {
    pub fn new(n_pms: usize, pm_cpu: u32, pm_mem: u32) -> Self {
        Self {
            n_pms,
            pm_cpu,
            pm_mem,
            numa_per_pm: 1,
            large_vm_overrides: BTreeMap::new(),
        }
    }

    pub fn with_numa(mut self, numa_per_pm: u32) -> Self {
        self.numa_per_pm = numa_per_pm;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_pms == 0 || self.pm_cpu == 0 || self.pm_mem == 0 || self.numa_per_pm == 0 {
            return Err(ModelError::InvalidConfig(
                "n_pms, pm_cpu, pm_mem and numa_per_pm must all be positive".into(),
            ));
        }
        if self.pm_cpu % self.numa_per_pm != 0 || self.pm_mem % self.numa_per_pm != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "PM capacity {}U{}G is not divisible by {} NUMA nodes",
                self.pm_cpu, self.pm_mem, self.numa_per_pm
            )));
        }
        Ok(())
    }

    /// A VM is large when it cannot fit a single NUMA node, unless a
    /// per-flavor override says otherwise.
    pub fn is_large(&self, spec: &VmSpec) -> bool {
        if let Some(&forced) = self.large_vm_overrides.get(&spec.flavor_id) {
            return forced;
        }
        let k = self.numa_per_pm;
        spec.cpu > self.pm_cpu / k || spec.mem > self.pm_mem / k
    }
}

/// Cluster-wide usage attributed per role. A placement counts toward its
/// region's role, or toward its flavor's categorized role when it sits on a
/// shared PM; the attribution survives a later unassignment of the PM.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleUsage {
    pub ci_cpu: u64,
    pub ci_mem: u64,
    pub mi_cpu: u64,
    pub mi_mem: u64,
}

impl RoleUsage {
    fn add(&mut self, role: Role, cpu: u32, mem: u32) {
        match role {
            Role::CpuIntensive => {
                self.ci_cpu += u64::from(cpu);
                self.ci_mem += u64::from(mem);
            }
            Role::MemIntensive => {
                self.mi_cpu += u64::from(cpu);
                self.mi_mem += u64::from(mem);
            }
        }
    }

    fn sub(&mut self, role: Role, cpu: u32, mem: u32) -> Result<(), ModelError> {
        let (uc, um) = match role {
            Role::CpuIntensive => (&mut self.ci_cpu, &mut self.ci_mem),
            Role::MemIntensive => (&mut self.mi_cpu, &mut self.mi_mem),
        };
        *uc = uc
            .checked_sub(u64::from(cpu))
            .ok_or_else(|| ModelError::internal("role cpu usage underflow"))?;
        *um = um
            .checked_sub(u64::from(mem))
            .ok_or_else(|| ModelError::internal("role mem usage underflow"))?;
        Ok(())
    }
}

/// The mutable placement state one simulation run owns.
#[derive(Debug, Clone)]
pub struct Cluster {
    pms: Vec<PhysicalMachine>,
    placements: HashMap<VmId, Placement>,
    config: ClusterConfig,
    role_usage: RoleUsage,
}

impl Cluster {
    /// Builds an empty cluster with every PM shared.
    pub fn new(config: ClusterConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let k = config.numa_per_pm as usize;
        let (numa_cpu, numa_mem) = (config.pm_cpu / config.numa_per_pm, config.pm_mem / config.numa_per_pm);
        let pms = (0..config.n_pms)
            .map(|pm_id| PhysicalMachine {
                pm_id,
                numa_nodes: vec![NumaNode::empty(numa_cpu, numa_mem); k],
                partition: PartitionState::Shared,
            })
            .collect();
        Ok(Self {
            pms,
            placements: HashMap::new(),
            config,
            role_usage: RoleUsage::default(),
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn pms(&self) -> &[PhysicalMachine] {
        &self.pms
    }

    pub fn pm(&self, pm_id: usize) -> &PhysicalMachine {
        &self.pms[pm_id]
    }

    pub fn placements(&self) -> &HashMap<VmId, Placement> {
        &self.placements
    }

    pub fn placement(&self, vm_id: VmId) -> Option<&Placement> {
        self.placements.get(&vm_id)
    }

    pub fn role_usage(&self) -> RoleUsage {
        self.role_usage
    }

    pub fn live_vms(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty() && self.pms.iter().all(|pm| pm.is_idle())
    }

    /// Sets the partition state of one PM. Partitioning requires the PM to be
    /// idle; unassigning (flipping to shared) is always allowed and keeps the
    /// cluster-wide role attribution of existing placements intact.
    pub fn set_partition(&mut self, pm_id: usize, state: PartitionState) -> Result<(), ModelError> {
        let pm = self
            .pms
            .get_mut(pm_id)
            .ok_or_else(|| ModelError::internal(format!("no such PM {pm_id}")))?;
        if state.is_partitioned() && !pm.is_idle() {
            return Err(ModelError::internal(format!(
                "cannot partition PM {pm_id} while it carries usage"
            )));
        }
        pm.partition = state;
        Ok(())
    }

    /// The per-NUMA footprint of a spec: a small VM occupies one node with its
    /// full amounts, a large one is divided across all nodes (earlier nodes
    /// absorb any indivisible remainder).
    pub fn numa_shares(&self, spec: &VmSpec) -> Vec<(u32, u32)> {
        if !self.config.is_large(spec) {
            return vec![(spec.cpu, spec.mem)];
        }
        let k = self.config.numa_per_pm;
        (0..k)
            .map(|i| (split_share(spec.cpu, k, i), split_share(spec.mem, k, i)))
            .collect()
    }

    /// Capacity feasibility of one spec on one PM, optionally restricted to a
    /// role region.
    ///
    /// A shared PM accepts the VM when its NUMA nodes can host the footprint.
    /// A partitioned PM additionally requires free space in the designated
    /// region and the footprint to respect the region's even per-NUMA split.
    pub fn can_fit(&self, pm_id: usize, spec: &VmSpec, region: Option<Role>) -> bool {
        let pm = &self.pms[pm_id];
        let shares = self.numa_shares(spec);
        let large = shares.len() > 1;

        if let Some(role) = region {
            let part = match pm.partition.as_partition() {
                Some(p) => p,
                None => return false,
            };
            let (free_c, free_m) = part.region_free(role);
            if spec.cpu > free_c || spec.mem > free_m {
                return false;
            }
            // The region splits evenly across NUMA nodes; no single-node
            // footprint may exceed its per-node slice.
            let k = self.config.numa_per_pm;
            let (cap_c, cap_m) = part.region_cap(role);
            let (node_c, node_m) = (cap_c / k, cap_m / k);
            if shares
                .iter()
                .any(|&(sc, sm)| sc > node_c || sm > node_m)
            {
                return false;
            }
        }

        if large {
            pm.numa_nodes
                .iter()
                .zip(&shares)
                .all(|(n, &(sc, sm))| n.free_cpu() >= sc && n.free_mem() >= sm)
        } else {
            let (sc, sm) = shares[0];
            pm.numa_nodes
                .iter()
                .any(|n| n.free_cpu() >= sc && n.free_mem() >= sm)
        }
    }

    /// Reserves resources for a VM on the chosen PM and region. The caller is
    /// expected to have checked `can_fit`; a violation here is an internal
    /// invariant breach that aborts the run.
    pub fn place(
        &mut self,
        vm_id: VmId,
        spec: &VmSpec,
        pm_id: usize,
        region: Option<Role>,
    ) -> Result<Placement, ModelError> {
        if self.placements.contains_key(&vm_id) {
            return Err(ModelError::DuplicateVm(vm_id));
        }
        if !self.can_fit(pm_id, spec, region) {
            return Err(ModelError::CapacityViolation {
                vm_id,
                pm_id,
                flavor_id: spec.flavor_id.clone(),
            });
        }
        let shares = self.numa_shares(spec);
        let role = region.unwrap_or_else(|| categorize(spec, self.config.pm_cpu, self.config.pm_mem));

        let pm = &mut self.pms[pm_id];
        let numa_ids = if shares.len() > 1 {
            for (node, &(sc, sm)) in pm.numa_nodes.iter_mut().zip(&shares) {
                node.used_cpu += sc;
                node.used_mem += sm;
            }
            (0..pm.numa_nodes.len()).collect()
        } else {
            let (sc, sm) = shares[0];
            let idx = pm
                .numa_nodes
                .iter()
                .position(|n| n.free_cpu() >= sc && n.free_mem() >= sm)
                .ok_or_else(|| ModelError::internal("can_fit passed but no NUMA node has room"))?;
            pm.numa_nodes[idx].used_cpu += sc;
            pm.numa_nodes[idx].used_mem += sm;
            vec![idx]
        };

        if let Some(role) = region {
            match &mut pm.partition {
                PartitionState::Partitioned(p) => p.add(role, spec.cpu, spec.mem),
                PartitionState::Shared => {
                    return Err(ModelError::internal("region placement on a shared PM"))
                }
            }
        }
        self.role_usage.add(role, spec.cpu, spec.mem);

        let placement = Placement {
            vm_id,
            pm_id,
            numa_ids,
            role_region: region,
            spec: spec.clone(),
        };
        self.placements.insert(vm_id, placement.clone());
        Ok(placement)
    }

    /// Frees the resources of a live VM, exactly reversing its placement.
    ///
    /// The recorded region is decremented even when only the cluster-wide
    /// attribution remains (the PM may have been unassigned since).
    pub fn release(&mut self, vm_id: VmId) -> Result<(), ModelError> {
        let placement = self
            .placements
            .remove(&vm_id)
            .ok_or(ModelError::UnknownVm(vm_id))?;
        let shares = self.numa_shares(&placement.spec);
        let pm = &mut self.pms[placement.pm_id];

        if shares.len() > 1 {
            for (node, &(sc, sm)) in pm.numa_nodes.iter_mut().zip(&shares) {
                node.used_cpu = node
                    .used_cpu
                    .checked_sub(sc)
                    .ok_or_else(|| ModelError::internal("NUMA cpu usage underflow"))?;
                node.used_mem = node
                    .used_mem
                    .checked_sub(sm)
                    .ok_or_else(|| ModelError::internal("NUMA mem usage underflow"))?;
            }
        } else {
            let (sc, sm) = shares[0];
            let node = &mut pm.numa_nodes[placement.numa_ids[0]];
            node.used_cpu = node
                .used_cpu
                .checked_sub(sc)
                .ok_or_else(|| ModelError::internal("NUMA cpu usage underflow"))?;
            node.used_mem = node
                .used_mem
                .checked_sub(sm)
                .ok_or_else(|| ModelError::internal("NUMA mem usage underflow"))?;
        }

        let spec = &placement.spec;
        if let Some(role) = placement.role_region {
            if let PartitionState::Partitioned(p) = &mut pm.partition {
                p.sub(role, spec.cpu, spec.mem)?;
            }
        }
        let role = placement
            .role_region
            .unwrap_or_else(|| categorize(spec, self.config.pm_cpu, self.config.pm_mem));
        self.role_usage.sub(role, spec.cpu, spec.mem)?;
        Ok(())
    }

    /// Conservation audit: recomputes every usage layer from the live
    /// placements and compares it with the tracked state.
    pub fn audit(&self) -> Result<(), ModelError> {
        let k = self.config.numa_per_pm as usize;
        let mut numa_used = vec![(0u32, 0u32); self.pms.len() * k];
        let mut region_used: Vec<Partition> = self
            .pms
            .iter()
            .map(|pm| match pm.partition {
                PartitionState::Partitioned(p) => Partition {
                    used_ci_cpu: 0,
                    used_ci_mem: 0,
                    used_mi_cpu: 0,
                    used_mi_mem: 0,
                    ..p
                },
                PartitionState::Shared => Partition {
                    c1: 0,
                    m1: 0,
                    c2: 0,
                    m2: 0,
                    used_ci_cpu: 0,
                    used_ci_mem: 0,
                    used_mi_cpu: 0,
                    used_mi_mem: 0,
                },
            })
            .collect();
        let mut roles = RoleUsage::default();

        for placement in self.placements.values() {
            let shares = self.numa_shares(&placement.spec);
            if shares.len() > 1 {
                for (i, &(sc, sm)) in shares.iter().enumerate() {
                    let slot = &mut numa_used[placement.pm_id * k + i];
                    slot.0 += sc;
                    slot.1 += sm;
                }
            } else {
                let slot = &mut numa_used[placement.pm_id * k + placement.numa_ids[0]];
                slot.0 += shares[0].0;
                slot.1 += shares[0].1;
            }
            let role = placement.role_region.unwrap_or_else(|| {
                categorize(&placement.spec, self.config.pm_cpu, self.config.pm_mem)
            });
            roles.add(role, placement.spec.cpu, placement.spec.mem);
            if placement.role_region.is_some()
                && self.pms[placement.pm_id].partition.is_partitioned()
            {
                region_used[placement.pm_id].add(
                    placement.role_region.unwrap(),
                    placement.spec.cpu,
                    placement.spec.mem,
                );
            }
        }

        for pm in &self.pms {
            for (i, node) in pm.numa_nodes.iter().enumerate() {
                let (c, m) = numa_used[pm.pm_id * k + i];
                if node.used_cpu != c || node.used_mem != m {
                    return Err(ModelError::internal(format!(
                        "NUMA usage drift on PM {} node {i}: tracked ({}, {}) vs placed ({c}, {m})",
                        pm.pm_id, node.used_cpu, node.used_mem
                    )));
                }
                if node.used_cpu > node.cap_cpu || node.used_mem > node.cap_mem {
                    return Err(ModelError::internal(format!(
                        "NUMA over capacity on PM {} node {i}",
                        pm.pm_id
                    )));
                }
            }
            if let PartitionState::Partitioned(p) = pm.partition {
                let expect = region_used[pm.pm_id];
                if p.used_ci_cpu != expect.used_ci_cpu
                    || p.used_ci_mem != expect.used_ci_mem
                    || p.used_mi_cpu != expect.used_mi_cpu
                    || p.used_mi_mem != expect.used_mi_mem
                {
                    return Err(ModelError::internal(format!(
                        "region usage drift on PM {}",
                        pm.pm_id
                    )));
                }
                if p.used_ci_cpu > p.c1
                    || p.used_ci_mem > p.m1
                    || p.used_mi_cpu > p.c2
                    || p.used_mi_mem > p.m2
                {
                    return Err(ModelError::internal(format!(
                        "region over capacity on PM {}",
                        pm.pm_id
                    )));
                }
            }
        }
        if roles != self.role_usage {
            return Err(ModelError::internal(format!(
                "role usage drift: tracked {:?} vs placed {roles:?}",
                self.role_usage
            )));
        }
        Ok(())
    }
}

/// The `idx`-th node's part of `amount` divided across `k` nodes, with the
/// remainder spread over the first nodes.
fn split_share(amount: u32, k: u32, idx: u32) -> u32 {
    amount / k + u32::from(idx < amount % k)
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("flavor set must not be empty")]
    EmptyFlavorSet,
    #[error("invalid flavor {flavor_id}: {reason}")]
    InvalidFlavor { flavor_id: String, reason: String },
    #[error("invalid cluster config: {0}")]
    InvalidConfig(String),
    #[error("{vm_id} of flavor {flavor_id} does not fit PM {pm_id}")]
    CapacityViolation {
        vm_id: VmId,
        pm_id: usize,
        flavor_id: String,
    },
    #[error("unknown VM {0}")]
    UnknownVm(VmId),
    #[error("{0} is already placed")]
    DuplicateVm(VmId),
    #[error("internal invariant violation: {0}")]
    Internal(String),
}

impl ModelError {
    pub(crate) fn internal(msg: impl Into<String>) -> Self {
        ModelError::Internal(msg.into())
    }
}

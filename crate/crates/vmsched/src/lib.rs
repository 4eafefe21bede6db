//! Trace-driven simulation of heterogeneous VM placement on NUMA clusters.
//!
//! The crate models a fleet of identical physical machines that serve a
//! sequential stream of VM create/delete requests. A pluggable scheduler
//! (first-fit, best-fit, a weighted best-fit variant, or seeded random
//! rollouts as an optimal proxy) picks a machine for each creation; the run
//! ends at the first creation no machine can host, and the number of handled
//! creations is the scheduling length.
//!
//! On top of the plain schedulers sits an intensifier that splits every PM
//! into a CPU-intensive and a memory-intensive region sized by an exact
//! integer optimization of the at-least-waste (ALW) metric, routes requests
//! to the region matching their categorized role, and adaptively merges
//! regions back (unassignment) when a request would otherwise be rejected or
//! when role usage drifts out of balance.
//!
//! Module map:
//! - [`model`]: machines, NUMA nodes, partition state, placement bookkeeping
//! - [`alw`]: the ALW waste metric and the role-imbalance measure
//! - [`scheduler`]: placement policies over feasible candidate lists
//! - [`reassigner`]: categorization, region sizing, unassignment rules
//! - [`trace`]: CSV trace I/O, synthetic generation, filters, scenario starts
//! - [`sim`]: the replay engine and suite statistics

pub mod alw;
pub mod model;
pub mod reassigner;
pub mod scheduler;
pub mod sim;
pub mod trace;

pub use alw::{AlwPair, ImbalanceInputs};
pub use model::{
    categorize, Cluster, ClusterConfig, FlavorSet, PartitionState, PhysicalMachine, Placement,
    Request, RequestKind, Role, VmId, VmSpec,
};
pub use reassigner::{AssignmentPlan, IntensifierConfig};
pub use scheduler::{Candidate, ChoicePolicy, SchedulerKind};
pub use sim::{run, run_suite, RunResult, SuiteStats};
pub use trace::{FilterKind, SynthConfig, Trace};

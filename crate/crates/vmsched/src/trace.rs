//! Trace ingestion and generation.
//!
//! The CSV schema is `vmid,cpu,memory,time,type` with integer fields, type 0
//! for a creation and 1 for a deletion, and an optional header line (detected
//! by a non-numeric first field). Synthetic traces draw flavors i.i.d. from a
//! weighted mix and delete a uniformly chosen live VM with a fixed
//! probability per step, which preserves the stationary heterogeneity the
//! experiments need without modeling arrival times.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{categorize, FlavorSet, ModelError, Request, RequestKind, Role, VmId, VmSpec};

/// A validated request sequence plus the flavor universe it draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    requests: Vec<Request>,
    flavor_set: FlavorSet,
}

impl Trace {
    /// Validates the sequence invariants: strictly increasing seq, every
    /// creation's spec a member of the flavor set, no creation of a live id,
    /// no deletion of a dead one.
    pub fn new(requests: Vec<Request>, flavor_set: FlavorSet) -> Result<Self, TraceError> {
        let mut live: HashSet<VmId> = HashSet::new();
        let mut prev_seq: Option<u64> = None;
        for req in &requests {
            if let Some(prev) = prev_seq {
                if req.seq <= prev {
                    return Err(TraceError::InvalidTrace(format!(
                        "seq {} does not increase after {}",
                        req.seq, prev
                    )));
                }
            }
            prev_seq = Some(req.seq);
            match &req.kind {
                RequestKind::Create(spec) => {
                    if !flavor_set.flavors().contains(spec) {
                        return Err(TraceError::InvalidTrace(format!(
                            "creation of {} uses flavor {} outside the flavor set",
                            req.vm_id, spec.flavor_id
                        )));
                    }
                    if !live.insert(req.vm_id) {
                        return Err(TraceError::InvalidTrace(format!(
                            "duplicate creation of live {}",
                            req.vm_id
                        )));
                    }
                }
                RequestKind::Delete => {
                    if !live.remove(&req.vm_id) {
                        return Err(TraceError::InvalidTrace(format!(
                            "deletion of {} which is not live",
                            req.vm_id
                        )));
                    }
                }
            }
        }
        Ok(Self {
            requests,
            flavor_set,
        })
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    pub fn flavor_set(&self) -> &FlavorSet {
        &self.flavor_set
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Indices of creation requests, in order.
    pub fn creation_positions(&self) -> Vec<usize> {
        self.requests
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.is_create().then_some(i))
            .collect()
    }
}

/// Which requests a heterogeneity experiment keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    All,
    CpuIntensiveOnly,
    MemIntensiveOnly,
    SmallOnly { threshold_cpu: u32 },
    LargeOnly { threshold_cpu: u32 },
}

/// Requests above this many CPUs count as large in the size filters.
pub const DEFAULT_SIZE_THRESHOLD_CPU: u32 = 32;

impl FilterKind {
    pub fn small() -> Self {
        FilterKind::SmallOnly {
            threshold_cpu: DEFAULT_SIZE_THRESHOLD_CPU,
        }
    }

    pub fn large() -> Self {
        FilterKind::LargeOnly {
            threshold_cpu: DEFAULT_SIZE_THRESHOLD_CPU,
        }
    }

    fn keeps(&self, spec: &VmSpec, pm_cpu: u32, pm_mem: u32) -> bool {
        match *self {
            FilterKind::All => true,
            FilterKind::CpuIntensiveOnly => {
                categorize(spec, pm_cpu, pm_mem) == Role::CpuIntensive
            }
            FilterKind::MemIntensiveOnly => {
                categorize(spec, pm_cpu, pm_mem) == Role::MemIntensive
            }
            FilterKind::SmallOnly { threshold_cpu } => spec.cpu <= threshold_cpu,
            FilterKind::LargeOnly { threshold_cpu } => spec.cpu > threshold_cpu,
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FilterKind::All => write!(f, "All"),
            FilterKind::CpuIntensiveOnly => write!(f, "CPU-Intensive"),
            FilterKind::MemIntensiveOnly => write!(f, "MEM-Intensive"),
            FilterKind::SmallOnly { .. } => write!(f, "Small"),
            FilterKind::LargeOnly { .. } => write!(f, "Large"),
        }
    }
}

/// What `load_csv` accepted and what it had to drop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub total_rows: usize,
    pub creates: usize,
    pub deletes: usize,
    /// Creations whose flavor cannot fit one empty PM; kept out so the
    /// flavor-set fit invariant holds for the rest of the trace.
    pub dropped_oversized_creates: usize,
    /// Deletions of VMs that were never (or no longer) live in the file,
    /// including deletions of dropped oversized creations.
    pub dropped_deletes: usize,
}

/// Reads a trace file, building the flavor set from the distinct (cpu, mem)
/// pairs that occur, sorted by (cpu, mem).
pub fn load_csv(
    path: impl AsRef<Path>,
    pm_cpu: u32,
    pm_mem: u32,
) -> Result<(Trace, LoadReport), TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;

    let mut report = LoadReport::default();
    let mut requests = Vec::new();
    let mut live: HashSet<u64> = HashSet::new();
    let mut dropped_live: HashSet<u64> = HashSet::new();
    let mut flavors: BTreeSet<(u32, u32)> = BTreeSet::new();
    let mut seq: u64 = 0;

    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        if idx == 0 && record.get(0).map_or(false, |f| f.parse::<u64>().is_err()) {
            // Header line; not counted as a row.
            continue;
        }
        report.total_rows += 1;
        if record.len() != 5 {
            return Err(TraceError::Parse {
                row,
                msg: format!("expected 5 fields, got {}", record.len()),
            });
        }
        let field = |i: usize| record.get(i).unwrap_or("");
        let vmid: u64 = parse_field(field(0), row, "vmid")?;
        let time: i64 = parse_field(field(3), row, "time")?;
        let kind: u32 = parse_field(field(4), row, "type")?;
        match kind {
            0 => {
                let cpu: u32 = parse_field(field(1), row, "cpu")?;
                let mem: u32 = parse_field(field(2), row, "memory")?;
                if cpu == 0 || mem == 0 {
                    return Err(TraceError::Parse {
                        row,
                        msg: "creation with zero cpu or memory".into(),
                    });
                }
                if live.contains(&vmid) {
                    return Err(TraceError::Parse {
                        row,
                        msg: format!("creation of vm {vmid} which is already live"),
                    });
                }
                if cpu > pm_cpu || mem > pm_mem {
                    report.dropped_oversized_creates += 1;
                    dropped_live.insert(vmid);
                    continue;
                }
                dropped_live.remove(&vmid);
                live.insert(vmid);
                flavors.insert((cpu, mem));
                requests.push(Request {
                    vm_id: VmId(vmid),
                    kind: RequestKind::Create(VmSpec::new(cpu, mem)),
                    seq,
                    timestamp: Some(time),
                });
                seq += 1;
                report.creates += 1;
            }
            1 => {
                if live.remove(&vmid) {
                    requests.push(Request {
                        vm_id: VmId(vmid),
                        kind: RequestKind::Delete,
                        seq,
                        timestamp: Some(time),
                    });
                    seq += 1;
                    report.deletes += 1;
                } else {
                    dropped_live.remove(&vmid);
                    report.dropped_deletes += 1;
                }
            }
            other => {
                return Err(TraceError::Parse {
                    row,
                    msg: format!("unknown request type {other}"),
                })
            }
        }
    }

    if requests.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    let flavor_set = FlavorSet::new(
        flavors
            .into_iter()
            .map(|(c, m)| VmSpec::new(c, m))
            .collect(),
        pm_cpu,
        pm_mem,
    )?;
    Ok((Trace::new(requests, flavor_set)?, report))
}

fn parse_field<T: std::str::FromStr>(s: &str, row: usize, name: &str) -> Result<T, TraceError> {
    s.parse().map_err(|_| TraceError::Parse {
        row,
        msg: format!("field {name}: cannot parse {s:?}"),
    })
}

/// Writes a trace in the `load_csv` schema. Deletions carry zero cpu/memory;
/// missing timestamps fall back to the seq number.
pub fn write_csv(trace: &Trace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    writeln!(out, "vmid,cpu,memory,time,type")?;
    for req in trace.requests() {
        let time = req.timestamp.unwrap_or(req.seq as i64);
        match &req.kind {
            RequestKind::Create(spec) => {
                writeln!(out, "{},{},{},{time},0", req.vm_id.0, spec.cpu, spec.mem)?
            }
            RequestKind::Delete => writeln!(out, "{},0,0,{time},1", req.vm_id.0)?,
        }
    }
    out.flush()?;
    Ok(())
}

/// Samples `k` run start points uniformly without replacement from the
/// creation positions, sorted ascending.
pub fn sample_scenarios(trace: &Trace, k: usize, seed: u64) -> Result<Vec<usize>, TraceError> {
    let positions = trace.creation_positions();
    if positions.len() < k {
        return Err(TraceError::NotEnoughRequests {
            have: positions.len(),
            want: k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, positions.len(), k)
        .into_iter()
        .map(|i| positions[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Keeps creations passing the filter predicate and the deletions of kept
/// VMs; seq is re-indexed and the flavor universe restricted to match.
pub fn apply_filter(
    trace: &Trace,
    kind: FilterKind,
    pm_cpu: u32,
    pm_mem: u32,
) -> Result<Trace, TraceError> {
    if kind == FilterKind::All {
        return Ok(trace.clone());
    }
    let mut kept_live: HashSet<VmId> = HashSet::new();
    let mut requests = Vec::new();
    let mut seq = 0u64;
    for req in trace.requests() {
        let keep = match &req.kind {
            RequestKind::Create(spec) => {
                let keep = kind.keeps(spec, pm_cpu, pm_mem);
                if keep {
                    kept_live.insert(req.vm_id);
                }
                keep
            }
            RequestKind::Delete => kept_live.remove(&req.vm_id),
        };
        if keep {
            requests.push(Request {
                seq,
                ..req.clone()
            });
            seq += 1;
        }
    }
    let flavors: Vec<VmSpec> = trace
        .flavor_set()
        .flavors()
        .iter()
        .filter(|s| kind.keeps(s, pm_cpu, pm_mem))
        .cloned()
        .collect();
    if requests.is_empty() || flavors.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    Trace::new(requests, FlavorSet::new(flavors, pm_cpu, pm_mem)?)
}

/// One flavor of the synthetic mix with its relative draw weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedFlavor {
    pub spec: VmSpec,
    pub weight: f64,
}

/// Synthetic trace shape. Weights are relative (they need not sum to 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub flavors: Vec<WeightedFlavor>,
    /// Probability that a step deletes a uniformly chosen live VM instead of
    /// creating one. Must lie in [0, 1).
    pub delete_prob: f64,
    /// Total number of requests (creations plus deletions).
    pub length: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            flavors: default_mix(),
            delete_prob: 0.3,
            length: 50_000,
            seed,
        }
    }
}

/// The default 12-flavor mix. Weights skew toward the small CPU-heavy
/// flavors so that CPU-intensive requests dominate total CPU demand by
/// roughly an order of magnitude while memory demand stays within a few
/// multiples, mirroring production heterogeneity.
pub fn default_mix() -> Vec<WeightedFlavor> {
    [
        ((12, 8), 0.450),
        ((24, 16), 0.150),
        ((48, 32), 0.058),
        ((96, 64), 0.020),
        ((2, 4), 0.125),
        ((4, 8), 0.070),
        ((8, 16), 0.024),
        ((16, 32), 0.007),
        ((32, 64), 0.003),
        ((2, 8), 0.060),
        ((4, 16), 0.027),
        ((8, 32), 0.006),
    ]
    .into_iter()
    .map(|((cpu, mem), weight)| WeightedFlavor {
        spec: VmSpec::new(cpu, mem),
        weight,
    })
    .collect()
}

/// Generates a seeded synthetic trace. The flavor set contains exactly the
/// flavors that occur, sorted by (cpu, mem), so written traces reload
/// identically.
pub fn synth_generate(
    config: &SynthConfig,
    pm_cpu: u32,
    pm_mem: u32,
) -> Result<Trace, TraceError> {
    if config.flavors.is_empty() {
        return Err(TraceError::InvalidSynthConfig("no flavors".into()));
    }
    if !(0.0..1.0).contains(&config.delete_prob) {
        return Err(TraceError::InvalidSynthConfig(format!(
            "delete_prob {} outside [0, 1)",
            config.delete_prob
        )));
    }
    if config.length == 0 {
        return Err(TraceError::EmptyTrace);
    }
    let dist = WeightedIndex::new(config.flavors.iter().map(|f| f.weight))
        .map_err(|e| TraceError::InvalidSynthConfig(format!("bad weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut live: Vec<VmId> = Vec::new();
    let mut requests = Vec::with_capacity(config.length);
    let mut next_id = 0u64;
    let mut used: BTreeSet<(u32, u32)> = BTreeSet::new();

    for step in 0..config.length {
        let seq = step as u64;
        let timestamp = Some(step as i64);
        if !live.is_empty() && rng.gen::<f64>() < config.delete_prob {
            let idx = rng.gen_range(0..live.len());
            let vm_id = live.swap_remove(idx);
            requests.push(Request {
                vm_id,
                kind: RequestKind::Delete,
                seq,
                timestamp,
            });
        } else {
            let spec = config.flavors[dist.sample(&mut rng)].spec.clone();
            let vm_id = VmId(next_id);
            next_id += 1;
            live.push(vm_id);
            used.insert((spec.cpu, spec.mem));
            requests.push(Request {
                vm_id,
                kind: RequestKind::Create(spec),
                seq,
                timestamp,
            });
        }
    }

    // Canonicalize flavor ids so the set round-trips through CSV.
    let flavor_set = FlavorSet::new(
        used.into_iter().map(|(c, m)| VmSpec::new(c, m)).collect(),
        pm_cpu,
        pm_mem,
    )?;
    let requests = requests
        .into_iter()
        .map(|req| match req.kind {
            RequestKind::Create(spec) => Request {
                kind: RequestKind::Create(VmSpec::new(spec.cpu, spec.mem)),
                ..req
            },
            RequestKind::Delete => req,
        })
        .collect();
    Trace::new(requests, flavor_set)
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("trace contains no usable requests")]
    EmptyTrace,
    #[error("need {want} creation requests, trace has {have}")]
    NotEnoughRequests { have: usize, want: usize },
    #[error("invalid synthetic trace config: {0}")]
    InvalidSynthConfig(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

//! Acceptance suite. Each test prints one "ACCEPTANCE <n> <name>: PASS/FAIL"
//! line (run with --nocapture to see them all) and then asserts its check, so
//! a failing criterion both reports and fails the build.
//!
//! The heavy experiments share a lock so wall-clock limits are measured
//! without cross-test contention, and criteria 4 and 5 share one experiment
//! through a OnceLock.

use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vmsched::alw::{alw_cpu, alw_mem, imbalance, ImbalanceInputs};
use vmsched::model::{default_flavors, Cluster, ClusterConfig, FlavorSet, PartitionState};
use vmsched::reassigner::{
    initialize, maybe_unassign_imbalance, solve_for_flavor_set, IntensifierState,
};
use vmsched::scheduler::{ChoicePolicy, SchedulerKind};
use vmsched::sim::{run, run_suite, SuiteStats};
use vmsched::trace::{
    apply_filter, sample_scenarios, synth_generate, FilterKind, SynthConfig, WeightedFlavor,
};
use vmsched::{IntensifierConfig, Role, VmId, VmSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vmsched"))
}

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {n} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance {n} {name}: {detail}");
}

/// Serializes the wall-clock-limited experiments so their runtime checks are
/// not distorted by other tests sharing the rayon pool.
fn heavy_lock() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

#[test]
fn acceptance_1_assignment_plan() {
    let mut max_elapsed = Duration::ZERO;
    for lambda in ["0", "0.25", "0.5", "0.75", "1"] {
        let started = Instant::now();
        let out = bin()
            .args(["solve-assign", "--lambda", lambda, "--json"])
            .output()
            .expect("spawn vmsched");
        let elapsed = started.elapsed();
        max_elapsed = max_elapsed.max(elapsed);
        assert!(
            out.status.success(),
            "solve-assign --lambda {lambda} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let v: serde_json::Value =
            serde_json::from_slice(&out.stdout).expect("solve-assign JSON");
        let plan_ok = v["c1"] == 96 && v["m1"] == 64 && v["c2"] == 32 && v["m2"] == 96;
        assert!(plan_ok, "lambda {lambda}: unexpected plan {v}");
        assert_eq!(v["objective"].as_f64(), Some(0.0), "lambda {lambda}");
        assert!(elapsed < Duration::from_secs(1), "lambda {lambda}: {elapsed:?}");
    }
    verdict(
        1,
        "assignment-plan",
        true,
        &format!("(96,64,32,96) objective 0 for 5 lambdas, slowest solve {max_elapsed:?}"),
    );
}

#[test]
fn acceptance_2_alw_oracle() {
    // Literal repeated-packing oracle, kept independent of the library's
    // early-exit formulation on purpose.
    fn oracle(primary: u32, secondary: u32, shapes: &[(u32, u32)]) -> u32 {
        shapes
            .iter()
            .map(|&(p, s)| {
                let mut left_p = primary;
                let mut left_s = secondary;
                while left_p >= p && left_s >= s {
                    left_p -= p;
                    left_s -= s;
                }
                left_p
            })
            .min()
            .expect("nonempty flavor set")
    }

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    for case in 0..1000 {
        let delta_c = rng.gen_range(0..=64);
        let delta_m = rng.gen_range(0..=64);
        let n = rng.gen_range(1..=4);
        let flavors: Vec<VmSpec> = (0..n)
            .map(|_| VmSpec::new(rng.gen_range(1..=16), rng.gen_range(1..=16)))
            .collect();
        let cpu_shapes: Vec<(u32, u32)> = flavors.iter().map(|f| (f.cpu, f.mem)).collect();
        let mem_shapes: Vec<(u32, u32)> = flavors.iter().map(|f| (f.mem, f.cpu)).collect();
        assert_eq!(
            alw_cpu(delta_c, delta_m, &flavors).unwrap(),
            oracle(delta_c, delta_m, &cpu_shapes),
            "case {case}: alw_cpu({delta_c},{delta_m},{flavors:?})"
        );
        assert_eq!(
            alw_mem(delta_c, delta_m, &flavors).unwrap(),
            oracle(delta_m, delta_c, &mem_shapes),
            "case {case}: alw_mem({delta_c},{delta_m},{flavors:?})"
        );
    }
    let elapsed = started.elapsed();
    verdict(
        2,
        "alw-oracle",
        elapsed < Duration::from_secs(5),
        &format!("1000 random cases exact on both axes in {elapsed:?}"),
    );
}

#[test]
fn acceptance_3_degradation_identity() {
    let trace = synth_generate(&SynthConfig::new(42), 128, 160).unwrap();
    let config = ClusterConfig::new(20, 128, 160);
    let starts = sample_scenarios(&trace, 10, 42).unwrap();
    let kinds = [
        SchedulerKind::FirstFit,
        SchedulerKind::BestFit,
        SchedulerKind::bf2_default(),
    ];
    for kind in &kinds {
        for &start in &starts {
            let mut plain_policy = ChoicePolicy::deterministic(kind).unwrap();
            let plain = run(&trace, start, &config, &mut plain_policy, None, true).unwrap();

            let mut unpartitioned = IntensifierConfig::new(0.5, 0.3 * 20.0);
            unpartitioned.partition_at_start = false;
            let mut policy = ChoicePolicy::deterministic(kind).unwrap();
            let intensified = run(
                &trace,
                start,
                &config,
                &mut policy,
                Some(&unpartitioned),
                true,
            )
            .unwrap();

            assert_eq!(plain.length, intensified.length, "{kind} at {start}");
            assert_eq!(plain.log, intensified.log, "{kind} at {start}");
            assert_eq!(
                intensified.unassign_emergent + intensified.unassign_imbalance,
                0,
                "{kind} at {start}: no unassign may fire without partitions"
            );
        }
    }
    verdict(
        3,
        "degradation-identity",
        true,
        "FF/BF/BF2 placement sequences identical on 10 windows",
    );
}

/// The frozen mixed-role trace for the directional criteria: every flavor
/// tiles its solved region (plan (96,32,32,128)) exactly, and the stream is
/// weighted so both regions saturate at about the same time.
fn mixed_flavors() -> Vec<WeightedFlavor> {
    [
        ((12, 4), 0.22),
        ((24, 8), 0.13),
        ((48, 16), 0.125),
        ((4, 16), 0.22),
        ((8, 32), 0.155),
        ((16, 64), 0.10),
        ((2, 8), 0.05),
    ]
    .into_iter()
    .map(|((cpu, mem), weight)| WeightedFlavor {
        spec: VmSpec::new(cpu, mem),
        weight,
    })
    .collect()
}

fn mixed_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        flavors: mixed_flavors(),
        delete_prob: 0.4,
        length: 50_000,
        seed,
    }
}

struct MixedExperiment {
    plain: Vec<(String, SuiteStats)>,
    intensified: Vec<(String, SuiteStats)>,
    elapsed: Duration,
}

fn mixed_experiment() -> &'static MixedExperiment {
    static EXP: OnceLock<MixedExperiment> = OnceLock::new();
    EXP.get_or_init(|| {
        let started = Instant::now();
        let trace = synth_generate(&mixed_synth(42), 128, 160).unwrap();
        let config = ClusterConfig::new(20, 128, 160);
        let starts = sample_scenarios(&trace, 60, 42).unwrap();
        let intensifier = IntensifierConfig::new(0.5, 0.3 * 20.0);
        let kinds = [
            SchedulerKind::FirstFit,
            SchedulerKind::BestFit,
            SchedulerKind::bf2_default(),
        ];
        let mut plain = Vec::new();
        let mut intensified = Vec::new();
        for kind in &kinds {
            let base = run_suite(&trace, &starts, &config, kind, None, 42).unwrap();
            plain.push((kind.to_string(), base.stats));
            let boosted =
                run_suite(&trace, &starts, &config, kind, Some(&intensifier), 42).unwrap();
            intensified.push((kind.to_string(), boosted.stats));
        }
        MixedExperiment {
            plain,
            intensified,
            elapsed: started.elapsed(),
        }
    })
}

#[test]
fn acceptance_4_directional_improvement() {
    let _guard = heavy_lock();
    let exp = mixed_experiment();
    let mut details = Vec::new();
    let mut all_positive = true;
    for ((name, base), (_, boosted)) in exp.plain.iter().zip(&exp.intensified) {
        let gain = (boosted.mean - base.mean) / base.mean * 100.0;
        all_positive &= boosted.mean > base.mean;
        details.push(format!("{name}+RA {gain:+.2}%"));
    }
    let runtime_ok = exp.elapsed < Duration::from_secs(120);
    verdict(
        4,
        "directional-improvement",
        all_positive && runtime_ok,
        &format!(
            "{} (target >=5% for FF, required >0%), 60 scenarios in {:?}",
            details.join(", "),
            exp.elapsed
        ),
    );
}

#[test]
fn acceptance_5_alw_reduction() {
    let _guard = heavy_lock();
    let exp = mixed_experiment();
    let (_, ff) = &exp.plain[0];
    let (_, ff_ra) = &exp.intensified[0];
    let cpu_ratio = ff_ra.alw_cpu_mean / ff.alw_cpu_mean.max(f64::EPSILON);
    let mem_ratio = ff_ra.alw_mem_mean / ff.alw_mem_mean.max(f64::EPSILON);
    verdict(
        5,
        "alw-reduction",
        cpu_ratio <= 0.5,
        &format!(
            "FF+RA terminal ALW vs FF: CPU {:.1}% ({:.1} vs {:.1}, required <=50%), memory {:.1}% ({:.1} vs {:.1})",
            cpu_ratio * 100.0,
            ff_ra.alw_cpu_mean,
            ff.alw_cpu_mean,
            mem_ratio * 100.0,
            ff_ra.alw_mem_mean,
            ff.alw_mem_mean
        ),
    );
}

#[test]
fn acceptance_6_heterogeneity_reproduction() {
    let _guard = heavy_lock();
    let started = Instant::now();
    let trace = synth_generate(&mixed_synth(42), 128, 160).unwrap();
    let config = ClusterConfig::new(10, 128, 160);
    let proxy = SchedulerKind::RandomSearch { restarts: 50 };
    let kinds = [
        SchedulerKind::FirstFit,
        SchedulerKind::BestFit,
        SchedulerKind::bf2_default(),
    ];

    let mut details = Vec::new();
    let mut pass = true;
    for (filter, expect_close) in [(FilterKind::MemIntensiveOnly, true), (FilterKind::All, false)]
    {
        let filtered = apply_filter(&trace, filter, 128, 160).unwrap();
        let starts = sample_scenarios(&filtered, 60, 42).unwrap();
        let proxy_mean = run_suite(&filtered, &starts, &config, &proxy, None, 42)
            .unwrap()
            .stats
            .mean;
        for kind in &kinds {
            let mean = run_suite(&filtered, &starts, &config, kind, None, 42)
                .unwrap()
                .stats
                .mean;
            let trail = (proxy_mean - mean) / proxy_mean * 100.0;
            pass &= if expect_close { trail <= 2.0 } else { trail > 2.0 };
            details.push(format!("{filter}/{kind} trails {trail:.2}%"));
        }
    }
    let elapsed = started.elapsed();
    pass &= elapsed < Duration::from_secs(180);
    verdict(
        6,
        "heterogeneity-reproduction",
        pass,
        &format!(
            "{} (MEM-Intensive <=2%, All >2%), restarts 50, {elapsed:?}",
            details.join(", ")
        ),
    );
}

#[test]
fn acceptance_7_imbalance_trigger() {
    let flavor_set = FlavorSet::new(default_flavors(), 128, 160).unwrap();
    let plan = solve_for_flavor_set(128, 160, &flavor_set, 0.5).unwrap();

    let stage = || {
        let mut cluster = Cluster::new(ClusterConfig::new(3, 128, 160)).unwrap();
        initialize(&mut cluster, &plan).unwrap();
        cluster
            .place(VmId(1), &VmSpec::new(96, 64), 0, Some(Role::CpuIntensive))
            .unwrap();
        cluster
    };

    let cluster = stage();
    let usage = cluster.role_usage();
    let gamma = imbalance(&ImbalanceInputs {
        sum_ci_cpu: usage.ci_cpu,
        sum_ci_mem: usage.ci_mem,
        sum_mi_cpu: usage.mi_cpu,
        sum_mi_mem: usage.mi_mem,
        c1: plan.c1,
        m1: plan.m1,
        c2: plan.c2,
        m2: plan.m2,
        n_unassign: 0,
    })
    .unwrap();
    assert_eq!(gamma, 1.0, "constructed state must yield exactly 1");

    let mut cluster = stage();
    let mut state = IntensifierState::new(plan);
    let flipped = maybe_unassign_imbalance(&mut cluster, &mut state, 0.9).unwrap();
    assert_eq!(flipped, Some(1), "lowest-id empty PM flips at alpha=0.9");
    assert_eq!(state.n_unassign_imbalance, 1);
    let shared_count = cluster
        .pms()
        .iter()
        .filter(|pm| pm.partition == PartitionState::Shared)
        .count();
    assert_eq!(shared_count, 1, "exactly one PM flips");

    let mut cluster = stage();
    let mut state = IntensifierState::new(plan);
    let flipped = maybe_unassign_imbalance(&mut cluster, &mut state, 1.5).unwrap();
    assert_eq!(flipped, None, "alpha=1.5 must not trigger");
    assert_eq!(state.n_unassign_imbalance, 0);

    verdict(
        7,
        "imbalance-trigger",
        true,
        "gamma=1 exactly; alpha=0.9 flips one empty PM, alpha=1.5 none",
    );
}

#[test]
fn acceptance_8_determinism() {
    let _guard = heavy_lock();
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.toml");
    std::fs::write(
        &config_path,
        r#"
[cluster]
pms = 6
pm_cpu = 128
pm_mem = 160

[reassigner]
enabled = true

[trace.synth]
length = 8000
delete_prob = 0.4
flavors = [
  { cpu = 12, mem = 4, weight = 0.35 },
  { cpu = 48, mem = 16, weight = 0.15 },
  { cpu = 4, mem = 16, weight = 0.30 },
  { cpu = 16, mem = 64, weight = 0.20 },
]

[experiment]
scenarios = 5
seed = 9
"#,
    )
    .unwrap();

    let mut compared = Vec::new();
    for subcommand in ["run", "heterogeneity"] {
        let mut outputs = Vec::new();
        for attempt in 0..2 {
            let out_dir = dir.path().join(format!("{subcommand}-{attempt}"));
            let out = bin()
                .arg(subcommand)
                .arg("--config")
                .arg(&config_path)
                .arg("--json")
                .arg("--out")
                .arg(&out_dir)
                .output()
                .expect("spawn vmsched");
            assert!(
                out.status.success(),
                "{subcommand} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            );
            let csv = std::fs::read(out_dir.join(format!("{subcommand}.csv"))).unwrap();
            let json = std::fs::read(out_dir.join(format!("{subcommand}.json"))).unwrap();
            outputs.push((csv, json));
        }
        assert_eq!(
            outputs[0].0, outputs[1].0,
            "{subcommand} CSV reports differ between identical invocations"
        );
        assert_eq!(
            outputs[0].1, outputs[1].1,
            "{subcommand} JSON reports differ between identical invocations"
        );
        compared.push(format!("{subcommand} {} bytes", outputs[0].0.len()));
    }
    verdict(
        8,
        "determinism",
        true,
        &format!("byte-identical CSV and JSON ({})", compared.join(", ")),
    );
}

#[test]
fn acceptance_9_huawei_dataset() {
    let Some(path) = std::env::var_os("VMSCHED_HUAWEI_CSV") else {
        println!(
            "ACCEPTANCE 9 huawei-dataset: SKIPPED (set VMSCHED_HUAWEI_CSV to the trace CSV to enable)"
        );
        return;
    };
    let _guard = heavy_lock();
    let (trace, load) = vmsched::trace::load_csv(&path, 128, 160).expect("load dataset");
    println!(
        "dataset: {} rows, {} creations, {} dropped oversized, {} dropped deletions",
        load.total_rows, load.creates, load.dropped_oversized_creates, load.dropped_deletes
    );
    let config = ClusterConfig::new(100, 128, 160);
    let starts = sample_scenarios(&trace, 60, 42).unwrap();
    let ff = run_suite(&trace, &starts, &config, &SchedulerKind::FirstFit, None, 42)
        .unwrap()
        .stats;
    let intensifier = IntensifierConfig::new(0.5, 0.3 * 100.0);
    let ff_ra = run_suite(
        &trace,
        &starts,
        &config,
        &SchedulerKind::FirstFit,
        Some(&intensifier),
        42,
    )
    .unwrap()
    .stats;

    let in_band = (ff.mean - 2512.0).abs() <= 251.2;
    let gain = (ff_ra.mean - ff.mean) / ff.mean * 100.0;
    // Report-only: start-point sampling differs from the original experiment,
    // so deviations are noted rather than failed.
    println!(
        "FF mean {:.2} ({}), FF+RA mean {:.2} ({:+.2}%, reference >=10%)",
        ff.mean,
        if in_band {
            "within 2512 +/- 10%"
        } else {
            "outside 2512 +/- 10%, reported only"
        },
        ff_ra.mean,
        gain
    );
    verdict(
        9,
        "huawei-dataset",
        true,
        &format!("report-only: FF {:.2}, FF+RA {:.2}", ff.mean, ff_ra.mean),
    );
}

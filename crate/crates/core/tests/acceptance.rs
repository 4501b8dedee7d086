//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{log_uniform, deployment_regime, random_profile, random_spec, relative_gap, schedule};
use kvoverlap::config::RunConfig;
use kvoverlap::costmodel::{
    groupwise_bytes_per_element, kv_cache_bytes, opt_preset, ModelSpec, WorkloadSpec, DEFAULT_QUANT_GROUP_OVERHEAD_BYTES,
    DEFAULT_QUANT_GROUP_SIZE,
};
use kvoverlap::hwprofile::{Direction, HardwareProfile, GIB};
use kvoverlap::numerics::{validate_exactness, SplitSelection};
use kvoverlap::pipesim::{compare, run_policy, Granularity, Policy, Scenario, TaskKind};
use kvoverlap::scheduler::{layer_time, plan_generation, scan_split, solve_split, Schedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MIB: f64 = 1024.0 * 1024.0;

/// Simulated KVPR/naive speedup of `configs/demo.json`, frozen from the
/// first run.
const DEMO_SPEEDUP: f64 = 1.527065763443268;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn kv_sizes_and_transfers() -> Outcome {
    let profile = HardwareProfile::new(312e12, 32.0 * GIB, 32.0 * GIB);
    let rows = [(4096u64, 512.0, 15.625, 15.6), (5120, 640.0, 19.531, 19.5), (7168, 896.0, 27.344, 27.3)];
    let mut detail = Vec::new();
    for (h, mib, ms, published) in rows {
        let spec = ModelSpec {
            hidden_dim: h,
            num_layers: 1,
            num_heads: 32,
            ffn_dim: 4 * h,
            precision_bytes: 2,
        };
        let wl = WorkloadSpec::new(&spec, 32, 1024, 1);
        let bytes = kv_cache_bytes(&spec, &wl, 1024);
        ensure(bytes == mib * MIB, || format!("h={h}: {bytes} B, expected {mib} MiB"))?;
        let t = profile.transfer_time(bytes, Direction::H2d) * 1e3;
        ensure((t - ms).abs() < 5e-4, || format!("h={h}: {t} ms, expected {ms}"))?;
        let err = (t - published).abs() / published;
        ensure(err <= 0.005, || format!("h={h}: {t} ms is {:.3}% from {published}", err * 100.0))?;
        detail.push(format!("{h}:{t:.3}ms"));
    }
    Ok(detail.join(" "))
}

fn solver_matches_scan() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 1200;
    for i in 0..n {
        let spec = random_spec(&mut rng, 4);
        let mut wl = WorkloadSpec::new(&spec, rng.gen_range(1..=64), 1, 1);
        wl.kv_bytes_per_element = [spec.precision_bytes as f64, 0.5625, 0.25][rng.gen_range(0..3)];
        let profile = random_profile(&mut rng, true);
        let seq_len = rng.gen_range(1..=4096);
        let mode = schedule(&mut rng);
        let solved = solve_split(&spec, &wl, &profile, seq_len, mode).map_err(|e| e.to_string())?;
        let scanned = scan_split(&spec, &wl, &profile, seq_len, mode).map_err(|e| e.to_string())?;
        ensure(
            solved.predicted_time.to_bits() == scanned.predicted_time.to_bits() && solved.l == scanned.l,
            || {
                format!(
                    "case {i}: solver l={} t={} vs scan l={} t={}",
                    solved.l, solved.predicted_time, scanned.l, scanned.predicted_time
                )
            },
        )?;
    }
    Ok(format!("{n} configurations, exact objective and l"))
}

fn monotone_plans() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 150;
    for i in 0..n {
        let spec = random_spec(&mut rng, 4);
        let wl = WorkloadSpec::new(&spec, rng.gen_range(1..=64), rng.gen_range(1..=2048), rng.gen_range(1..=256));
        let profile = random_profile(&mut rng, true);
        let mode = schedule(&mut rng);
        let plan = plan_generation(&spec, &wl, &profile, mode).map_err(|e| e.to_string())?;
        let l: Vec<u64> = plan.split_points().collect();
        ensure(l.windows(2).all(|w| w[0] <= w[1]), || format!("profile {i}: {l:?}"))?;
    }
    Ok(format!("{n} profiles, gen_len up to 256"))
}

fn analytic_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 200;
    let mut worst = 0.0f64;
    for i in 0..n {
        let spec = ModelSpec {
            num_layers: 1,
            ..random_spec(&mut rng, 1)
        };
        let wl = WorkloadSpec::new(&spec, rng.gen_range(1..=64), rng.gen_range(1..=4095), 1);
        let profile = random_profile(&mut rng, true);
        let mode = schedule(&mut rng);
        let seq_len = wl.seq_len_at(1);
        let d = solve_split(&spec, &wl, &profile, seq_len, mode).map_err(|e| e.to_string())?;
        let lt = layer_time(&spec, &wl, &profile, seq_len, d.l, mode).map_err(|e| e.to_string())?;
        let run = run_policy(&Scenario::new(spec, wl, profile), &Policy::kvpr(mode, Granularity::Fine, true))
            .map_err(|e| e.to_string())?;
        let find = |k| run.timeline.entries.iter().find(|e| e.kind == k);
        let mha_start = find(TaskKind::ComputeMha).ok_or("no attention task")?.start;
        let simulated = match mode {
            Schedule::Column => mha_start,
            Schedule::Row => mha_start - find(TaskKind::LoadActivationRecompute).map_or(0.0, |e| e.end),
        };
        let gap = relative_gap(simulated, lt.total);
        worst = worst.max(gap);
        ensure(gap <= 1e-9, || format!("case {i} ({mode}): simulated {simulated} vs {}", lt.total))?;
    }
    Ok(format!("{n} configurations, worst relative gap {worst:.1e}"))
}

fn recompute_never_worse() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 300;
    let mut best = 1.0f64;
    for i in 0..n {
        let s = deployment_regime(&mut rng, 3, 4);
        let mode = schedule(&mut rng);
        let policies = [
            ("naive".to_string(), Policy::naive(mode, true)),
            ("kvpr".to_string(), Policy::kvpr(mode, Granularity::Fine, true)),
        ];
        let rows = compare(&s, &policies).map_err(|e| e.to_string())?;
        best = best.max(rows[1].speedup);
        ensure(rows[1].makespan <= rows[0].makespan, || {
            format!("case {i} ({mode}): kvpr {} > naive {} for {:?}", rows[1].makespan, rows[0].makespan, s.workload)
        })?;
    }
    Ok(format!("{n} resident-weight configurations, best speedup {best:.3}"))
}

fn fine_never_worse() -> Outcome {
    let fine_vs_coarse = |s: &Scenario, mode| -> Result<(f64, f64), String> {
        let f = run_policy(s, &Policy::kvpr(mode, Granularity::Fine, false)).map_err(|e| e.to_string())?;
        let c = run_policy(s, &Policy::kvpr(mode, Granularity::Coarse, false)).map_err(|e| e.to_string())?;
        Ok((f.report.makespan, c.report.makespan))
    };
    // small-KV regime: OPT-6.7B, 128 MiB attention weights, prompt 256, 64 new tokens
    let spec = opt_preset("OPT-6.7B").unwrap();
    let mut checked = 0;
    for b in [1u64, 2, 4, 8, 16, 32] {
        let wl = WorkloadSpec::new(&spec, b, 256, 64);
        let s = Scenario::new(spec, wl, HardwareProfile::a100_pcie4());
        let (f, c) = fine_vs_coarse(&s, Schedule::Row)?;
        ensure(f <= c * (1.0 + 1e-12), || format!("b={b}: fine {f} > coarse {c}"))?;
        checked += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..200 {
        let spec = random_spec(&mut rng, 3);
        let mut wl = WorkloadSpec::new(&spec, rng.gen_range(1..=32), rng.gen_range(1..=1024), rng.gen_range(1..=4));
        wl.num_batches = rng.gen_range(1..=3);
        let s = Scenario::new(spec, wl, random_profile(&mut rng, false));
        let mode = schedule(&mut rng);
        let (f, c) = fine_vs_coarse(&s, mode)?;
        ensure(f <= c * (1.0 + 1e-12), || format!("random case {i} ({mode}): fine {f} > coarse {c}"))?;
        checked += 1;
    }
    Ok(format!("{checked} configurations incl. batch 1..32 at 128 MiB attention weights"))
}

fn degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 200;
    for i in 0..n {
        let spec = random_spec(&mut rng, 3);
        let mut wl = WorkloadSpec::new(&spec, rng.gen_range(1..=16), rng.gen_range(1..=512), rng.gen_range(1..=4));
        wl.num_batches = rng.gen_range(1..=3);
        let mut s = Scenario::new(spec, wl, random_profile(&mut rng, true));
        s.split_override = Some(0);
        let mode = schedule(&mut rng);
        let g = if rng.gen_bool(0.5) { Granularity::Fine } else { Granularity::Coarse };
        let resident = rng.gen_bool(0.5);
        let on = run_policy(&s, &Policy::kvpr(mode, g, resident)).map_err(|e| e.to_string())?;
        let off = run_policy(&s, &Policy { recompute: false, ..Policy::kvpr(mode, g, resident) })
            .map_err(|e| e.to_string())?;
        ensure(on.report.makespan.to_bits() == off.report.makespan.to_bits(), || {
            format!("case {i}: {} vs {}", on.report.makespan, off.report.makespan)
        })?;
    }
    Ok(format!("{n} configurations, bit-identical makespans"))
}

fn exactness() -> Outcome {
    let report = validate_exactness(0, 1000, SplitSelection::All).map_err(|e| e.to_string())?;
    ensure(report.passed(), || format!("{:?}", report.failures.first()))?;
    Ok(format!(
        "{} cases, {} split checks, max error {:.1e}",
        report.cases, report.checks, report.max_abs_error
    ))
}

fn utilization_ordering() -> Outcome {
    let spec = ModelSpec {
        num_layers: 4,
        ..opt_preset("OPT-6.7B").unwrap()
    };
    let mut detail = Vec::new();
    for (mode, b) in [(Schedule::Row, 8u64), (Schedule::Row, 32), (Schedule::Column, 32)] {
        let mut wl = WorkloadSpec::new(&spec, b, 1024, 4);
        wl.num_batches = if mode == Schedule::Column { 4 } else { 1 };
        let s = Scenario::new(spec, wl, HardwareProfile::a100_pcie4());
        let naive = run_policy(&s, &Policy::naive(mode, true)).map_err(|e| e.to_string())?.report;
        let kvpr = run_policy(&s, &Policy::kvpr(mode, Granularity::Fine, true)).map_err(|e| e.to_string())?.report;
        let h2d = naive.resource_busy[&kvoverlap::pipesim::Resource::H2d];
        ensure(h2d > 0.9, || format!("{mode} b={b}: naive run is not transfer-bound (h2d busy {h2d})"))?;
        ensure(kvpr.gpu_utilization > naive.gpu_utilization, || {
            format!("{mode} b={b}: kvpr {} <= naive {}", kvpr.gpu_utilization, naive.gpu_utilization)
        })?;
        detail.push(format!("{mode}/b{b} {:.3}->{:.3}", naive.gpu_utilization, kvpr.gpu_utilization));
    }
    Ok(detail.join(" "))
}

fn compression_direction() -> Outcome {
    let q = groupwise_bytes_per_element(4, DEFAULT_QUANT_GROUP_SIZE, DEFAULT_QUANT_GROUP_OVERHEAD_BYTES);
    ensure(q == 0.5625, || format!("4-bit group-wise gives {q} bytes per element"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 60;
    for i in 0..n {
        let mut s = deployment_regime(&mut rng, 2, 3);
        s.profile.gpu_flops = log_uniform(&mut rng, 1e14, 1e15);
        let mode = schedule(&mut rng);
        for policy in [Policy::naive(mode, true), Policy::kvpr(mode, Granularity::Fine, rng.gen_bool(0.5))] {
            let full = run_policy(&s, &policy).map_err(|e| e.to_string())?.report;
            let mut c = s.clone();
            c.workload.kv_bytes_per_element = q;
            let compressed = run_policy(&c, &policy).map_err(|e| e.to_string())?.report;
            ensure(compressed.decode_throughput > full.decode_throughput, || {
                format!(
                    "case {i}: {} tok/s compressed vs {} tok/s",
                    compressed.decode_throughput, full.decode_throughput
                )
            })?;
        }
    }
    Ok(format!("{n} configurations, both policies"))
}

fn demo_speedup() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.json");
    let cfg = RunConfig::from_path(&path).map_err(|e| e.to_string())?;
    let s = cfg.scenario().map_err(|e| e.to_string())?;
    let policies = [
        ("naive".to_string(), Policy { recompute: false, ..cfg.policy }),
        ("kvpr".to_string(), cfg.policy),
    ];
    let rows = compare(&s, &policies).map_err(|e| e.to_string())?;
    let speedup = rows[1].speedup;
    ensure(relative_gap(speedup, DEMO_SPEEDUP) <= 1e-12, || {
        format!("speedup {speedup} differs from frozen {DEMO_SPEEDUP}")
    })?;
    Ok(format!("speedup {speedup:.6}"))
}

struct Criterion {
    id: &'static str,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: "1", name: "KV cache sizes and PCIe transfer times", limit: Some(Duration::from_secs(1)), run: kv_sizes_and_transfers },
        Criterion { id: "2", name: "integer solver equals exhaustive scan", limit: Some(Duration::from_secs(30)), run: solver_matches_scan },
        Criterion { id: "3", name: "split points non-decreasing over generation", limit: None, run: monotone_plans },
        Criterion { id: "4", name: "simulated layer time equals analytic objective", limit: None, run: analytic_agreement },
        Criterion { id: "5a", name: "recomputation never slower than naive (resident weights)", limit: None, run: recompute_never_worse },
        Criterion { id: "5b", name: "fine granularity never slower than coarse", limit: None, run: fine_never_worse },
        Criterion { id: "6", name: "zero split reproduces naive makespan bit for bit", limit: None, run: degeneracy },
        Criterion { id: "7", name: "split-and-merge attention is exact", limit: Some(Duration::from_secs(10)), run: exactness },
        Criterion { id: "8", name: "recomputation raises GPU utilization when transfer-bound", limit: None, run: utilization_ordering },
        Criterion { id: "9", name: "4-bit KV compression raises throughput", limit: None, run: compression_direction },
        Criterion { id: "10", name: "demo configuration speedup matches frozen value", limit: None, run: demo_speedup },
    ];

    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&outcome, c.limit) {
            if elapsed > limit {
                outcome = Err(format!("{detail}; took {elapsed:.2?}, limit {limit:.0?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS  {:>3}  {}  ({detail}; {elapsed:.2?})", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>3}  {}  ({why}; {elapsed:.2?})", c.id, c.name);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

mod common;

use common::{deployment_regime, random_profile, random_spec, relative_gap, schedule};
use kvoverlap::costmodel::{opt_preset, ModelSpec, WorkloadSpec};
use kvoverlap::hwprofile::HardwareProfile;
use kvoverlap::pipesim::{run_policy, Granularity, Policy, Resource, Scenario, TaskKind};
use kvoverlap::scheduler::{layer_time, solve_split, Schedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scenario(rng: &mut ChaCha8Rng, latency: bool) -> Scenario {
    let spec = random_spec(rng, 3);
    let mut wl = WorkloadSpec::new(&spec, rng.gen_range(1..=16), rng.gen_range(1..=512), rng.gen_range(1..=4));
    wl.num_batches = rng.gen_range(1..=3);
    if rng.gen_bool(0.3) {
        wl.kv_bytes_per_element = 0.5625;
    }
    Scenario::new(spec, wl, random_profile(rng, latency))
}

fn check_timeline(s: &Scenario, policy: &Policy) {
    let run = run_policy(s, policy).unwrap();
    for t in &run.graph.tasks {
        let e = &run.timeline.entries[t.id];
        assert!(t.deps.iter().all(|&d| e.start >= run.timeline.entries[d].end));
    }
    for r in Resource::ALL {
        let mut spans: Vec<_> = run.timeline.on(r).map(|e| (e.start, e.end)).collect();
        spans.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(spans.windows(2).all(|w| w[1].0 >= w[0].1));
    }
}

#[test]
fn timelines_respect_dependencies_and_exclusivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..150 {
        let s = random_scenario(&mut rng, true);
        let sched = schedule(&mut rng);
        let g = if rng.gen_bool(0.5) { Granularity::Fine } else { Granularity::Coarse };
        check_timeline(&s, &Policy::kvpr(sched, g, rng.gen_bool(0.5)));
    }
}

#[test]
fn zero_split_is_bit_identical_to_no_recompute() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..150 {
        let mut s = random_scenario(&mut rng, true);
        s.split_override = Some(0);
        let sched = schedule(&mut rng);
        let g = if rng.gen_bool(0.5) { Granularity::Fine } else { Granularity::Coarse };
        let resident = rng.gen_bool(0.5);
        let on = run_policy(&s, &Policy::kvpr(sched, g, resident)).unwrap();
        let off = run_policy(&s, &Policy { recompute: false, ..Policy::kvpr(sched, g, resident) }).unwrap();
        assert_eq!(on.report.makespan.to_bits(), off.report.makespan.to_bits());
        assert_eq!(on.timeline, off.timeline);
    }
}

#[test]
fn fine_never_slower_than_coarse_without_latency() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..150 {
        let s = random_scenario(&mut rng, false);
        let sched = schedule(&mut rng);
        let resident = rng.gen_bool(0.3);
        let fine = run_policy(&s, &Policy::kvpr(sched, Granularity::Fine, resident)).unwrap();
        let coarse = run_policy(&s, &Policy::kvpr(sched, Granularity::Coarse, resident)).unwrap();
        // splitting one transfer into two rounds differently in the last bit
        assert!(
            fine.report.makespan <= coarse.report.makespan * (1.0 + 1e-12),
            "{} > {} ({sched}, resident {resident})",
            fine.report.makespan,
            coarse.report.makespan
        );
    }
}

#[test]
fn fine_granularity_hides_long_recompute() {
    // everything recomputed: coarse waits for all four projections first
    let spec = ModelSpec {
        num_layers: 2,
        ..opt_preset("OPT-6.7B").unwrap()
    };
    let wl = WorkloadSpec::new(&spec, 8, 2048, 2);
    let mut profile = HardwareProfile::a100_pcie4();
    profile.gpu_flops = 20e12;
    let mut s = Scenario::new(spec, wl, profile);
    s.split_override = Some(u64::MAX);
    let fine = run_policy(&s, &Policy::kvpr(Schedule::Row, Granularity::Fine, false)).unwrap();
    let coarse = run_policy(&s, &Policy::kvpr(Schedule::Row, Granularity::Coarse, false)).unwrap();
    assert!(fine.report.makespan < coarse.report.makespan);
    assert_eq!(fine.graph.of_kind(TaskKind::LoadCache).count(), 0);
}

#[test]
fn recompute_never_slower_in_deployment_regime() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..150 {
        let s = deployment_regime(&mut rng, 3, 4);
        let sched = schedule(&mut rng);
        let naive = run_policy(&s, &Policy::naive(sched, true)).unwrap();
        let kvpr = run_policy(&s, &Policy::kvpr(sched, Granularity::Fine, true)).unwrap();
        assert!(kvpr.report.makespan <= naive.report.makespan, "{s:?}");
    }
}

#[test]
fn single_layer_matches_layer_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..150 {
        let spec = ModelSpec {
            num_layers: 1,
            ..random_spec(&mut rng, 1)
        };
        let wl = WorkloadSpec::new(&spec, rng.gen_range(1..=64), rng.gen_range(1..=4095), 1);
        let profile = random_profile(&mut rng, true);
        let mode = schedule(&mut rng);
        let seq_len = wl.seq_len_at(1);
        let d = solve_split(&spec, &wl, &profile, seq_len, mode).unwrap();
        let run = run_policy(&Scenario::new(spec, wl, profile), &Policy::kvpr(mode, Granularity::Fine, true)).unwrap();
        let entry = |k| run.timeline.entries.iter().find(|e| e.kind == k);
        let mha = entry(TaskKind::ComputeMha).unwrap();
        let act_end = entry(TaskKind::LoadActivationRecompute).map_or(0.0, |e| e.end);
        let lt = layer_time(&spec, &wl, &profile, seq_len, d.l, mode).unwrap();
        let (simulated, analytic) = match mode {
            Schedule::Column => (mha.start, lt.total),
            Schedule::Row => (mha.start - act_end, lt.total),
        };
        assert!(relative_gap(simulated, analytic) <= 1e-9, "{simulated} vs {analytic}");
    }
}

#![allow(dead_code)]

use kvoverlap::costmodel::{opt_preset, ModelSpec, WorkloadSpec};
use kvoverlap::hwprofile::HardwareProfile;
use kvoverlap::pipesim::Scenario;
use kvoverlap::scheduler::Schedule;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

pub fn schedule(rng: &mut ChaCha8Rng) -> Schedule {
    if rng.gen_bool(0.5) {
        Schedule::Row
    } else {
        Schedule::Column
    }
}

/// Any positive rates, optionally with a per-transfer latency.
pub fn random_profile(rng: &mut ChaCha8Rng, latency: bool) -> HardwareProfile {
    let mut p = HardwareProfile::new(
        log_uniform(rng, 1e11, 1e16),
        log_uniform(rng, 1e8, 1e12),
        log_uniform(rng, 1e8, 1e12),
    );
    p.gpu_efficiency = rng.gen_range(0.1..=1.0);
    if latency && rng.gen_bool(0.5) {
        p.transfer_latency = log_uniform(rng, 1e-7, 1e-3);
    }
    p
}

pub fn random_spec(rng: &mut ChaCha8Rng, max_layers: u64) -> ModelSpec {
    let heads = [1u64, 2, 4, 8, 16, 32][rng.gen_range(0..6)];
    let hidden_dim = heads * rng.gen_range(1..=256);
    ModelSpec {
        hidden_dim,
        num_layers: rng.gen_range(1..=max_layers),
        num_heads: heads,
        ffn_dim: hidden_dim * rng.gen_range(1..=4),
        precision_bytes: [1u64, 2, 4][rng.gen_range(0..3)],
    }
}

/// OPT presets on the two published interconnect profiles, prompts of
/// 128 to 2048 tokens and batches up to 64.
pub fn deployment_regime(rng: &mut ChaCha8Rng, max_layers: u64, max_gen: u64) -> Scenario {
    let name = ["OPT-6.7B", "OPT-13B", "OPT-30B"][rng.gen_range(0..3)];
    let spec = ModelSpec {
        num_layers: rng.gen_range(1..=max_layers),
        ..opt_preset(name).unwrap()
    };
    let mut wl = WorkloadSpec::new(&spec, rng.gen_range(1..=64), rng.gen_range(128..=2048), rng.gen_range(1..=max_gen));
    wl.num_batches = rng.gen_range(1..=4);
    let mut profile = if rng.gen_bool(0.5) {
        HardwareProfile::a100_pcie4()
    } else {
        HardwareProfile::rtx5000_pcie4_x8()
    };
    profile.gpu_efficiency = rng.gen_range(0.3..=1.0);
    if rng.gen_bool(0.5) {
        profile.transfer_latency = log_uniform(rng, 1e-6, 1e-4);
    }
    Scenario::new(spec, wl, profile)
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

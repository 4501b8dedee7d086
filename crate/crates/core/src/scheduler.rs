//! Split-point optimization: how many leading cache positions to recompute
//! on the GPU while the remaining KV suffix streams over the interconnect.
//!
//! The per-layer objective for split point `l` at sequence length `s'` is
//!
//! ```text
//! column:  t(l) = T_act(l) + max(T_recomp(l), T_kv(s' - l))
//! row:     t(l) =            max(T_recomp(l), T_kv(s' - l))
//! ```
//!
//! with `T_act` and `T_kv` priced by the affine transfer model and
//! `T_recomp` by the GPU rate. Between the end points the objective is
//! convex and piecewise linear with a single kink where recomputation and
//! the KV transfer take equally long, so the integer optimum sits at the
//! kink's floor/ceiling or at an end of the range. [`scan_split`] evaluates
//! every integer and is kept as the reference.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::costmodel::{activation_bytes, kv_cache_bytes, kv_remainder_bytes, recompute_flops, ModelSpec, WorkloadSpec};
use crate::error::{Error, Result};
use crate::hwprofile::{Direction, HardwareProfile};

/// Batch/layer traversal order. Row processes every layer of one batch
/// before the next batch; column runs one layer over all batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Row,
    Column,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Row => "row",
            Schedule::Column => "column",
        })
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "row" => Ok(Schedule::Row),
            "column" | "col" => Ok(Schedule::Column),
            _ => Err(Error::InvalidConfig(format!("unknown schedule `{s}` (row|column)"))),
        }
    }
}

/// Per-layer time of one split point and its components, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerTime {
    pub total: f64,
    pub recompute: f64,
    pub kv_transfer: f64,
    /// Reported in both modes; only the column objective charges it.
    pub act_transfer: f64,
}

pub fn layer_time(
    spec: &ModelSpec,
    wl: &WorkloadSpec,
    profile: &HardwareProfile,
    seq_len: u64,
    l: u64,
    mode: Schedule,
) -> Result<LayerTime> {
    let kv_bytes = kv_remainder_bytes(spec, wl, seq_len, l)?;
    let kv_transfer = profile.transfer_time(kv_bytes, Direction::H2d);
    let act_transfer = profile.transfer_time(activation_bytes(spec, wl, l), Direction::H2d);
    let recompute = profile.compute_time(recompute_flops(spec, wl, l));
    let overlap = recompute.max(kv_transfer);
    let total = match mode {
        Schedule::Row => overlap,
        Schedule::Column => act_transfer + overlap,
    };
    Ok(LayerTime {
        total,
        recompute,
        kv_transfer,
        act_transfer,
    })
}

/// One step of a generation plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitDecision {
    pub step: u64,
    pub seq_len: u64,
    pub l: u64,
    #[serde(rename = "t_total_s")]
    pub predicted_time: f64,
    #[serde(rename = "t_recomp_s")]
    pub t_recomp: f64,
    #[serde(rename = "t_kv_s")]
    pub t_transfer_kv: f64,
    #[serde(rename = "t_act_s")]
    pub t_transfer_act: f64,
}

impl SplitDecision {
    fn new(step: u64, seq_len: u64, l: u64, t: LayerTime) -> Self {
        Self {
            step,
            seq_len,
            l,
            predicted_time: t.total,
            t_recomp: t.recompute,
            t_transfer_kv: t.kv_transfer,
            t_transfer_act: t.act_transfer,
        }
    }
}

/// Real-valued split point where recomputation and KV transfer finish
/// together, including per-transfer latency. Clamped to `[0, s']`.
pub fn continuous_split(spec: &ModelSpec, wl: &WorkloadSpec, profile: &HardwareProfile, seq_len: u64) -> f64 {
    let s = seq_len as f64;
    // per-token recompute seconds and per-token KV transfer seconds
    let c = recompute_flops(spec, wl, 1) / profile.effective_flops();
    let k = kv_cache_bytes(spec, wl, 1) / profile.h2d_bandwidth;
    let lat = profile.transfer_latency;
    let l = if c.is_infinite() {
        0.0
    } else {
        // c·l = lat + k·(s' - l)
        (lat + k * s) / (c + k)
    };
    l.clamp(0.0, s)
}

fn step_of(wl: &WorkloadSpec, seq_len: u64) -> u64 {
    seq_len.saturating_sub(wl.prompt_len)
}

/// Integer split point minimizing [`layer_time`], smallest `l` on ties.
pub fn solve_split(
    spec: &ModelSpec,
    wl: &WorkloadSpec,
    profile: &HardwareProfile,
    seq_len: u64,
    mode: Schedule,
) -> Result<SplitDecision> {
    let kink = continuous_split(spec, wl, profile, seq_len);
    let lo = kink.floor() as u64;
    let mut candidates = vec![0, 1, seq_len.saturating_sub(1), seq_len, lo.saturating_sub(1), lo, lo + 1, lo + 2];
    candidates.retain(|&l| l <= seq_len);
    candidates.sort_unstable();
    candidates.dedup();

    let mut best: Option<(u64, LayerTime)> = None;
    for l in candidates {
        let t = layer_time(spec, wl, profile, seq_len, l, mode)?;
        if best.is_none_or(|(_, b)| t.total < b.total) {
            best = Some((l, t));
        }
    }
    let (l, t) = best.expect("candidate set always contains 0");
    Ok(SplitDecision::new(step_of(wl, seq_len), seq_len, l, t))
}

/// Exhaustive reference: evaluates every `l ∈ [0, s']`.
pub fn scan_split(
    spec: &ModelSpec,
    wl: &WorkloadSpec,
    profile: &HardwareProfile,
    seq_len: u64,
    mode: Schedule,
) -> Result<SplitDecision> {
    let mut best_l = 0;
    let mut best = layer_time(spec, wl, profile, seq_len, 0, mode)?;
    for l in 1..=seq_len {
        let t = layer_time(spec, wl, profile, seq_len, l, mode)?;
        if t.total < best.total {
            best = t;
            best_l = l;
        }
    }
    Ok(SplitDecision::new(step_of(wl, seq_len), seq_len, best_l, best))
}

/// Split decisions for a whole generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: Schedule,
    pub decisions: Vec<SplitDecision>,
}

impl SplitPlan {
    /// Every decision uses `l = min(l, s')`, bypassing the solver.
    pub fn fixed(spec: &ModelSpec, wl: &WorkloadSpec, profile: &HardwareProfile, mode: Schedule, l: u64) -> Result<Self> {
        let decisions = (1..=wl.gen_len)
            .map(|step| {
                let seq_len = wl.seq_len_at(step);
                let l = l.min(seq_len);
                layer_time(spec, wl, profile, seq_len, l, mode).map(|t| SplitDecision::new(step, seq_len, l, t))
            })
            .collect::<Result<_>>()?;
        Ok(Self { mode, decisions })
    }

    pub fn check_matches(&self, wl: &WorkloadSpec) -> Result<()> {
        if self.decisions.len() as u64 != wl.gen_len {
            return Err(Error::InconsistentPlan(format!(
                "{} decisions for gen_len {}",
                self.decisions.len(),
                wl.gen_len
            )));
        }
        for (i, d) in self.decisions.iter().enumerate() {
            let step = i as u64 + 1;
            if d.step != step || d.seq_len != wl.seq_len_at(step) {
                return Err(Error::InconsistentPlan(format!(
                    "decision {i} has step {} / seq_len {}, expected {step} / {}",
                    d.step,
                    d.seq_len,
                    wl.seq_len_at(step)
                )));
            }
            if d.l > d.seq_len {
                return Err(Error::SplitOutOfRange { l: d.l, seq_len: d.seq_len });
            }
        }
        Ok(())
    }

    pub fn split_points(&self) -> impl Iterator<Item = u64> + '_ {
        self.decisions.iter().map(|d| d.l)
    }
}

/// Solves one split per generated token; `s'` grows by one each step.
pub fn plan_generation(spec: &ModelSpec, wl: &WorkloadSpec, profile: &HardwareProfile, mode: Schedule) -> Result<SplitPlan> {
    let decisions = (1..=wl.gen_len)
        .map(|step| solve_split(spec, wl, profile, wl.seq_len_at(step), mode))
        .collect::<Result<_>>()?;
    Ok(SplitPlan { mode, decisions })
}

/// Plan export document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub mode: Schedule,
    pub model: ModelSpec,
    pub workload: WorkloadSpec,
    pub profile: HardwareProfile,
    pub decisions: Vec<SplitDecision>,
}

impl PlanDocument {
    pub fn new(spec: &ModelSpec, wl: &WorkloadSpec, profile: &HardwareProfile, plan: &SplitPlan) -> Self {
        Self {
            mode: plan.mode,
            model: *spec,
            workload: *wl,
            profile: *profile,
            decisions: plan.decisions.clone(),
        }
    }

    pub fn plan(&self) -> SplitPlan {
        SplitPlan {
            mode: self.mode,
            decisions: self.decisions.clone(),
        }
    }
}

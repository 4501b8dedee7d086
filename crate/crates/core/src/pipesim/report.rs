use std::collections::BTreeMap;

use serde::Serialize;

use super::graph::{Resource, TaskGraph, TaskKind};
use super::sim::Timeline;

pub const UTILIZATION_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub makespan: f64,
    /// Generated tokens per second of decode.
    pub decode_throughput: f64,
    pub gpu_utilization: f64,
    /// Busy time of each kind as a fraction of the makespan.
    pub breakdown: BTreeMap<TaskKind, f64>,
    /// Busy time of each resource as a fraction of the makespan.
    pub resource_busy: BTreeMap<Resource, f64>,
    /// `(bin start s, gpu busy fraction in the bin)`.
    pub utilization_timeline: Vec<(f64, f64)>,
    pub peak_gpu_bytes: f64,
}

fn fraction(busy: f64, makespan: f64) -> f64 {
    if makespan > 0.0 {
        (busy / makespan).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn gpu_timeline(timeline: &Timeline) -> Vec<(f64, f64)> {
    let span = timeline.makespan;
    if span <= 0.0 {
        return Vec::new();
    }
    let width = span / UTILIZATION_SAMPLES as f64;
    let mut busy = vec![0.0; UTILIZATION_SAMPLES];
    for e in timeline.on(Resource::Gpu) {
        let first = ((e.start / width) as usize).min(UTILIZATION_SAMPLES - 1);
        let last = ((e.end / width) as usize).min(UTILIZATION_SAMPLES - 1);
        for (bin, slot) in busy.iter_mut().enumerate().take(last + 1).skip(first) {
            let lo = bin as f64 * width;
            let hi = lo + width;
            *slot += (e.end.min(hi) - e.start.max(lo)).max(0.0);
        }
    }
    busy.into_iter()
        .enumerate()
        .map(|(bin, b)| (bin as f64 * width, (b / width).clamp(0.0, 1.0)))
        .collect()
}

pub fn build_report(timeline: &Timeline, graph: &TaskGraph) -> SimReport {
    let makespan = timeline.makespan;
    let mut breakdown: BTreeMap<TaskKind, f64> = TaskKind::ALL.iter().map(|&k| (k, 0.0)).collect();
    for e in &timeline.entries {
        *breakdown.get_mut(&e.kind).expect("all kinds present") += e.duration();
    }
    for v in breakdown.values_mut() {
        *v = fraction(*v, makespan);
    }
    let resource_busy: BTreeMap<Resource, f64> = Resource::ALL
        .iter()
        .map(|&r| (r, fraction(timeline.busy(r), makespan)))
        .collect();
    SimReport {
        makespan,
        decode_throughput: if makespan > 0.0 { graph.tokens as f64 / makespan } else { 0.0 },
        gpu_utilization: resource_busy[&Resource::Gpu],
        breakdown,
        resource_busy,
        utilization_timeline: gpu_timeline(timeline),
        peak_gpu_bytes: graph.peak_gpu_bytes,
    }
}

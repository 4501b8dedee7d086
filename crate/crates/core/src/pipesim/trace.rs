use serde::{Deserialize, Serialize};

use super::sim::Timeline;
use crate::error::Result;

/// One complete event in Chrome trace format. Times are in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub name: String,
    pub cat: String,
    pub ph: String,
    pub ts: f64,
    pub dur: f64,
    pub pid: u32,
    pub tid: u32,
}

pub fn export_trace(timeline: &Timeline) -> Vec<TraceEvent> {
    timeline
        .entries
        .iter()
        .map(|e| TraceEvent {
            name: format!("{} i={} j={} k={}", e.kind, e.tags.step, e.tags.layer, e.tags.batch),
            cat: e.kind.label().to_string(),
            ph: "X".to_string(),
            ts: e.start * 1e6,
            dur: e.duration() * 1e6,
            pid: 0,
            tid: e.resource.lane(),
        })
        .collect()
}

pub fn trace_json(timeline: &Timeline) -> Result<String> {
    Ok(serde_json::to_string(&export_trace(timeline))?)
}

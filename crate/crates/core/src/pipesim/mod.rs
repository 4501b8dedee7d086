//! Discrete-event model of the offloading decode pipeline.

mod compare;
mod graph;
mod report;
mod sim;
mod trace;

pub use compare::{
    compare, metrics_fields, parse_policy, parse_policy_list, policy_label, run_policy, write_metrics_csv, write_sweep_csv, ComparisonRow, Run,
    Scenario, METRICS_HEADER,
};
pub use graph::{
    build_task_graph, peak_gpu_bytes, Cost, Granularity, Policy, Resource, Tags, Task, TaskGraph, TaskId, TaskKind,
    WeightPart,
};
pub use report::{build_report, SimReport, UTILIZATION_SAMPLES};
pub use sim::{duration, simulate, Entry, Timeline};
pub use trace::{export_trace, trace_json, TraceEvent};

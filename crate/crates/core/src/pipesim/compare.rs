use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::graph::{build_task_graph, Granularity, Policy, TaskGraph, TaskKind};
use super::report::SimReport;
use super::sim::{simulate, Timeline};
use crate::costmodel::{ModelSpec, WorkloadSpec};
use crate::error::{Error, Result};
use crate::hwprofile::HardwareProfile;
use crate::scheduler::{plan_generation, Schedule, SplitPlan};

/// Everything shared by the policies of one comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ModelSpec,
    pub workload: WorkloadSpec,
    pub profile: HardwareProfile,
    pub gpu_mem_budget: Option<f64>,
    /// Fixed split point for every step instead of solving.
    pub split_override: Option<u64>,
    /// Precomputed plan used by recomputing policies on its schedule.
    pub plan: Option<SplitPlan>,
}

impl Scenario {
    pub fn new(spec: ModelSpec, workload: WorkloadSpec, profile: HardwareProfile) -> Self {
        Self {
            spec,
            workload,
            profile,
            gpu_mem_budget: None,
            split_override: None,
            plan: None,
        }
    }

    /// The plan a policy executes: all zeros without recomputation, else
    /// the override, the supplied plan or a fresh solve.
    pub fn plan_for(&self, policy: &Policy) -> Result<SplitPlan> {
        let fixed = |l| SplitPlan::fixed(&self.spec, &self.workload, &self.profile, policy.schedule, l);
        if !policy.recompute {
            return fixed(0);
        }
        if let Some(l) = self.split_override {
            return fixed(l);
        }
        match &self.plan {
            Some(plan) if plan.mode == policy.schedule => {
                plan.check_matches(&self.workload)?;
                Ok(plan.clone())
            }
            _ => plan_generation(&self.spec, &self.workload, &self.profile, policy.schedule),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Run {
    pub plan: SplitPlan,
    pub graph: TaskGraph,
    pub timeline: Timeline,
    pub report: SimReport,
}

pub fn run_policy(scenario: &Scenario, policy: &Policy) -> Result<Run> {
    let plan = scenario.plan_for(policy)?;
    let graph = build_task_graph(&scenario.spec, &scenario.workload, &plan, policy, scenario.gpu_mem_budget)?;
    let (timeline, report) = simulate(&graph, &scenario.profile)?;
    log::debug!(
        "{} tasks, makespan {:.6} s, gpu busy {:.3}",
        graph.tasks.len(),
        report.makespan,
        report.gpu_utilization
    );
    Ok(Run {
        plan,
        graph,
        timeline,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub policy: Policy,
    pub makespan: f64,
    pub decode_throughput: f64,
    pub gpu_utilization: f64,
    pub peak_gpu_bytes: f64,
    pub breakdown: BTreeMap<TaskKind, f64>,
    /// Makespan of the first policy divided by this one.
    pub speedup: f64,
}

impl ComparisonRow {
    pub fn from_report(name: &str, policy: Policy, report: &SimReport, baseline_makespan: f64) -> Self {
        Self {
            name: name.to_string(),
            policy,
            makespan: report.makespan,
            decode_throughput: report.decode_throughput,
            gpu_utilization: report.gpu_utilization,
            peak_gpu_bytes: report.peak_gpu_bytes,
            breakdown: report.breakdown.clone(),
            speedup: speedup(baseline_makespan, report.makespan),
        }
    }
}

fn speedup(baseline: f64, makespan: f64) -> f64 {
    if makespan > 0.0 {
        baseline / makespan
    } else if baseline == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

pub fn compare(scenario: &Scenario, policies: &[(String, Policy)]) -> Result<Vec<ComparisonRow>> {
    let reports = policies
        .iter()
        .map(|(_, p)| run_policy(scenario, p).map(|r| r.report))
        .collect::<Result<Vec<_>>>()?;
    let Some(first) = reports.first() else {
        return Ok(Vec::new());
    };
    let baseline = first.makespan;
    Ok(policies
        .iter()
        .zip(&reports)
        .map(|((name, p), r)| ComparisonRow::from_report(name, *p, r, baseline))
        .collect())
}

/// Parses `naive` or `kvpr` followed by `:`-separated modifiers
/// (`row`, `column`, `coarse`, `fine`, `resident`, `offloaded`) applied on
/// top of `base`.
pub fn parse_policy(text: &str, base: &Policy) -> Result<Policy> {
    let mut parts = text.trim().split(':');
    let head = parts.next().unwrap_or_default();
    let mut policy = *base;
    policy.recompute = match head.to_ascii_lowercase().as_str() {
        "naive" => false,
        "kvpr" => true,
        _ => return Err(Error::InvalidConfig(format!("unknown policy `{head}` (naive|kvpr)"))),
    };
    for m in parts {
        match m.to_ascii_lowercase().as_str() {
            "row" => policy.schedule = Schedule::Row,
            "column" => policy.schedule = Schedule::Column,
            "coarse" => policy.granularity = Granularity::Coarse,
            "fine" => policy.granularity = Granularity::Fine,
            "resident" => policy.weights_resident = true,
            "offloaded" => policy.weights_resident = false,
            _ => return Err(Error::InvalidConfig(format!("unknown policy modifier `{m}` in `{text}`"))),
        }
    }
    Ok(policy)
}

/// Canonical text form accepted by `parse_policy`.
pub fn policy_label(policy: &Policy) -> String {
    format!(
        "{}:{}:{}:{}",
        if policy.recompute { "kvpr" } else { "naive" },
        policy.schedule,
        policy.granularity,
        if policy.weights_resident { "resident" } else { "offloaded" }
    )
}

pub fn parse_policy_list(text: &str, base: &Policy) -> Result<Vec<(String, Policy)>> {
    let list: Vec<(String, Policy)> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_policy(s, base).map(|p| (s.to_string(), p)))
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(Error::InvalidConfig("empty policy list".into()));
    }
    Ok(list)
}

pub const METRICS_HEADER: [&str; 8] = [
    "policy",
    "schedule",
    "granularity",
    "recompute",
    "makespan_s",
    "throughput_tok_s",
    "gpu_util",
    "peak_gpu_bytes",
];

pub fn metrics_fields(row: &ComparisonRow) -> Vec<String> {
    vec![
        row.name.clone(),
        row.policy.schedule.to_string(),
        row.policy.granularity.to_string(),
        if row.policy.recompute { "on" } else { "off" }.to_string(),
        row.makespan.to_string(),
        row.decode_throughput.to_string(),
        row.gpu_utilization.to_string(),
        row.peak_gpu_bytes.to_string(),
    ]
}

pub fn write_metrics_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for row in rows {
        w.write_record(metrics_fields(row))?;
    }
    w.flush()?;
    Ok(())
}

/// One row per `(axis value, policy)`: the axis value, the metrics columns,
/// then the speedup over the first policy at that value.
pub fn write_sweep_csv<W: Write>(axis: &str, points: &[(String, Vec<ComparisonRow>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![axis];
    header.extend(METRICS_HEADER);
    header.push("speedup");
    w.write_record(&header)?;
    for (value, rows) in points {
        for row in rows {
            let mut record = vec![value.clone()];
            record.extend(metrics_fields(row));
            record.push(row.speedup.to_string());
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

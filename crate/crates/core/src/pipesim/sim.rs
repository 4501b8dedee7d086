use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use super::graph::{Cost, Resource, Tags, Task, TaskGraph, TaskId, TaskKind};
use crate::error::{Error, Result};
use crate::hwprofile::{Direction, HardwareProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Entry {
    pub task: TaskId,
    pub kind: TaskKind,
    pub resource: Resource,
    pub tags: Tags,
    pub start: f64,
    pub end: f64,
}

impl Entry {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Entries are indexed by task id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timeline {
    pub entries: Vec<Entry>,
    pub makespan: f64,
}

impl Timeline {
    pub fn on(&self, resource: Resource) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.resource == resource)
    }

    pub fn busy(&self, resource: Resource) -> f64 {
        self.on(resource).map(Entry::duration).sum()
    }
}

pub fn duration(task: &Task, profile: &HardwareProfile) -> f64 {
    match (task.cost, task.resource()) {
        (Cost::Flops(f), Resource::Gpu) => profile.compute_time(f),
        (Cost::Bytes(n), Resource::H2d) => profile.transfer_time(n, Direction::H2d),
        (Cost::Bytes(n), Resource::D2h) => profile.transfer_time(n, Direction::D2h),
        _ => unreachable!("cost unit checked against resource"),
    }
}

fn check(graph: &TaskGraph) -> Result<()> {
    for (i, t) in graph.tasks.iter().enumerate() {
        if t.id != i {
            return Err(Error::InvalidGraph(format!("task at position {i} carries id {}", t.id)));
        }
        if let Some(&d) = t.deps.iter().find(|&&d| d >= graph.tasks.len()) {
            return Err(Error::InvalidGraph(format!("task {i} depends on unknown task {d}")));
        }
        let amount = match t.cost {
            Cost::Bytes(v) | Cost::Flops(v) => v,
        };
        if !amount.is_finite() || amount < 0.0 {
            return Err(Error::InvalidGraph(format!("task {i} has cost {amount}")));
        }
        if matches!(t.cost, Cost::Flops(_)) != (t.resource() == Resource::Gpu) {
            return Err(Error::InvalidGraph(format!("task {i} ({}) has a cost in the wrong unit", t.kind)));
        }
    }
    Ok(())
}

/// Runs the graph on three in-order queues (h2d, gpu, d2h), each served in
/// task-id order. A task starts when its queue predecessor and all of its
/// dependencies have finished.
pub fn simulate(graph: &TaskGraph, profile: &HardwareProfile) -> Result<(Timeline, super::SimReport)> {
    profile.validate()?;
    check(graph)?;
    let n = graph.tasks.len();

    // predecessor edges: declared deps plus the previous task on the same queue
    let mut preds: Vec<Vec<TaskId>> = graph.tasks.iter().map(|t| t.deps.clone()).collect();
    let mut last_on: BTreeMap<Resource, TaskId> = BTreeMap::new();
    for t in &graph.tasks {
        if let Some(prev) = last_on.insert(t.resource(), t.id) {
            preds[t.id].push(prev);
        }
    }
    let mut succs: Vec<Vec<TaskId>> = vec![Vec::new(); n];
    let mut pending: Vec<usize> = vec![0; n];
    for (id, ps) in preds.iter().enumerate() {
        pending[id] = ps.len();
        for &p in ps {
            succs[p].push(id);
        }
    }

    let mut ready: VecDeque<TaskId> = (0..n).filter(|&i| pending[i] == 0).collect();
    let mut end = vec![0.0f64; n];
    let mut entries: Vec<Option<Entry>> = vec![None; n];
    let mut done = 0usize;
    while let Some(id) = ready.pop_front() {
        let task = &graph.tasks[id];
        let start = preds[id].iter().map(|&p| end[p]).fold(0.0, f64::max);
        end[id] = start + duration(task, profile);
        entries[id] = Some(Entry {
            task: id,
            kind: task.kind,
            resource: task.resource(),
            tags: task.tags,
            start,
            end: end[id],
        });
        done += 1;
        for &s in &succs[id] {
            pending[s] -= 1;
            if pending[s] == 0 {
                ready.push_back(s);
            }
        }
    }
    if done < n {
        return Err(Error::CycleDetected);
    }

    let entries: Vec<Entry> = entries.into_iter().map(|e| e.expect("every task scheduled")).collect();
    let makespan = entries.iter().map(|e| e.end).fold(0.0, f64::max);
    let timeline = Timeline { entries, makespan };
    let report = super::report::build_report(&timeline, graph);
    Ok((timeline, report))
}

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::costmodel::{
    activation_bytes, decode_step_flops, ffn_weight_bytes, kv_cache_bytes, kv_remainder_bytes, layer_weight_bytes,
    mha_matrix_bytes, recompute_flops, ModelSpec, WorkloadSpec,
};
use crate::error::{Error, Result};
use crate::scheduler::{Schedule, SplitPlan};

pub type TaskId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LoadWeight,
    LoadCache,
    LoadActivation,
    LoadActivationRecompute,
    ComputeRecompute,
    ComputeMha,
    ComputeFfn,
    StoreCache,
    StoreActivation,
}

impl TaskKind {
    pub const ALL: [TaskKind; 9] = [
        TaskKind::LoadWeight,
        TaskKind::LoadCache,
        TaskKind::LoadActivation,
        TaskKind::LoadActivationRecompute,
        TaskKind::ComputeRecompute,
        TaskKind::ComputeMha,
        TaskKind::ComputeFfn,
        TaskKind::StoreCache,
        TaskKind::StoreActivation,
    ];

    pub fn resource(self) -> Resource {
        use TaskKind::*;
        match self {
            LoadWeight | LoadCache | LoadActivation | LoadActivationRecompute => Resource::H2d,
            ComputeRecompute | ComputeMha | ComputeFfn => Resource::Gpu,
            StoreCache | StoreActivation => Resource::D2h,
        }
    }

    pub fn label(self) -> &'static str {
        use TaskKind::*;
        match self {
            LoadWeight => "load_weight",
            LoadCache => "load_cache",
            LoadActivation => "load_activation",
            LoadActivationRecompute => "load_activation_recompute",
            ComputeRecompute => "compute_recompute",
            ComputeMha => "compute_mha",
            ComputeFfn => "compute_ffn",
            StoreCache => "store_cache",
            StoreActivation => "store_activation",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Execution lanes. Each is an in-order queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resource {
    H2d,
    Gpu,
    D2h,
}

impl Resource {
    pub const ALL: [Resource; 3] = [Resource::H2d, Resource::Gpu, Resource::D2h];

    /// Trace lane index.
    pub fn lane(self) -> u32 {
        match self {
            Resource::H2d => 0,
            Resource::Gpu => 1,
            Resource::D2h => 2,
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resource::H2d => "h2d",
            Resource::Gpu => "gpu",
            Resource::D2h => "d2h",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cost {
    Bytes(f64),
    Flops(f64),
}

/// Which projection weights a `load_weight` task carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPart {
    /// W_Q, W_K, W_V, W_O in one transfer.
    Attention,
    KeyValue,
    QueryOutput,
    Ffn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tags {
    pub step: u64,
    pub layer: u64,
    pub batch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    pub cost: Cost,
    pub deps: Vec<TaskId>,
    pub tags: Tags,
    pub part: Option<WeightPart>,
}

impl Task {
    pub fn resource(&self) -> Resource {
        self.kind.resource()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Coarse,
    Fine,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Coarse => "coarse",
            Granularity::Fine => "fine",
        })
    }
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coarse" => Ok(Granularity::Coarse),
            "fine" => Ok(Granularity::Fine),
            _ => Err(Error::InvalidConfig(format!("unknown granularity `{s}` (coarse|fine)"))),
        }
    }
}

/// How a decode run is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    pub schedule: Schedule,
    #[serde(with = "on_off")]
    pub recompute: bool,
    pub granularity: Granularity,
    pub weights_resident: bool,
}

impl Policy {
    pub fn naive(schedule: Schedule, weights_resident: bool) -> Self {
        Self {
            schedule,
            recompute: false,
            granularity: Granularity::Fine,
            weights_resident,
        }
    }

    pub fn kvpr(schedule: Schedule, granularity: Granularity, weights_resident: bool) -> Self {
        Self {
            schedule,
            recompute: true,
            granularity,
            weights_resident,
        }
    }
}

pub(crate) mod on_off {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(if *v { "on" } else { "off" })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Bool(bool),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Bool(b) => Ok(b),
            Repr::Text(t) => match t.as_str() {
                "on" => Ok(true),
                "off" => Ok(false),
                other => Err(serde::de::Error::custom(format!("expected on|off, got `{other}`"))),
            },
        }
    }
}

/// Tasks in program order: ids are dense and every dependency points to a
/// smaller id. Per-resource queue order is id order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    pub tasks: Vec<Task>,
    /// Tokens produced by the whole run.
    pub tokens: u64,
    pub peak_gpu_bytes: f64,
}

impl TaskGraph {
    pub fn empty() -> Self {
        Self {
            tasks: Vec::new(),
            tokens: 0,
            peak_gpu_bytes: 0.0,
        }
    }

    pub fn of_kind(&self, kind: TaskKind) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(move |t| t.kind == kind)
    }
}

#[derive(Default)]
struct Builder {
    tasks: Vec<Task>,
}

impl Builder {
    fn push(&mut self, kind: TaskKind, cost: Cost, deps: &[Option<TaskId>], tags: Tags, part: Option<WeightPart>) -> Option<TaskId> {
        let amount = match cost {
            Cost::Bytes(v) | Cost::Flops(v) => v,
        };
        if amount <= 0.0 {
            return None;
        }
        let id = self.tasks.len();
        let mut deps: Vec<TaskId> = deps.iter().flatten().copied().collect();
        deps.sort_unstable();
        deps.dedup();
        self.tasks.push(Task {
            id,
            kind,
            cost,
            deps,
            tags,
            part,
        });
        Some(id)
    }
}

#[derive(Clone, Copy, Default)]
struct EpochWeights {
    key_value: Option<TaskId>,
    query_output: Option<TaskId>,
    attention: Option<TaskId>,
    ffn: Option<TaskId>,
}

impl EpochWeights {
    /// Weights the recompute kernel waits for.
    fn for_recompute(&self, granularity: Granularity) -> Option<TaskId> {
        match granularity {
            Granularity::Fine => self.key_value,
            Granularity::Coarse => self.attention,
        }
    }
}

fn units(wl: &WorkloadSpec, spec: &ModelSpec, schedule: Schedule) -> Vec<Tags> {
    let mut out = Vec::with_capacity((wl.gen_len * spec.num_layers * wl.num_batches) as usize);
    for step in 1..=wl.gen_len {
        match schedule {
            Schedule::Row => {
                for batch in 0..wl.num_batches {
                    for layer in 0..spec.num_layers {
                        out.push(Tags { step, layer, batch });
                    }
                }
            }
            Schedule::Column => {
                for layer in 0..spec.num_layers {
                    for batch in 0..wl.num_batches {
                        out.push(Tags { step, layer, batch });
                    }
                }
            }
        }
    }
    out
}

/// Static GPU memory high-water mark: weights, two staging slots sized for
/// the largest unit, and column-mode hidden states held for the batch group.
pub fn peak_gpu_bytes(spec: &ModelSpec, wl: &WorkloadSpec, split_points: &[u64], policy: &Policy) -> f64 {
    let weights = if policy.weights_resident {
        spec.num_layers as f64 * layer_weight_bytes(spec)
    } else {
        2.0 * layer_weight_bytes(spec)
    };
    let p = spec.precision_bytes as f64;
    let staging = (1..=wl.gen_len)
        .zip(split_points)
        .map(|(step, &l)| {
            let seq_len = wl.seq_len_at(step);
            let l = if policy.recompute { l } else { 0 };
            let recomputed_kv = 2.0 * wl.batch_size as f64 * l as f64 * spec.hidden_dim as f64 * p;
            activation_bytes(spec, wl, l) + recomputed_kv + kv_cache_bytes(spec, wl, seq_len - l)
        })
        .fold(0.0, f64::max);
    let retained = match policy.schedule {
        Schedule::Column => wl.effective_batch() as f64 * spec.hidden_dim as f64 * p,
        Schedule::Row => 0.0,
    };
    weights + 2.0 * staging + retained
}

/// Expands a plan into the offloading pipeline's task graph.
///
/// Per unit `(step, layer, batch)` the h2d queue carries, in order: the
/// recompute activations, the unit's weights when a new weight epoch starts
/// (`W_K,W_V` then `W_Q,W_O` when fine, one block when coarse), the KV
/// suffix, the FFN weights and, in column mode, the hidden state parked by
/// the previous layer. Loads wait for their double-buffer slot: staging
/// slots are freed by the attention kernel two units back, weight slots by
/// the last FFN of the epoch two back. Zero-cost tasks are not emitted.
pub fn build_task_graph(
    spec: &ModelSpec,
    wl: &WorkloadSpec,
    plan: &SplitPlan,
    policy: &Policy,
    gpu_mem_budget: Option<f64>,
) -> Result<TaskGraph> {
    spec.validate()?;
    wl.validate(spec)?;
    plan.check_matches(wl)?;
    if plan.mode != policy.schedule {
        return Err(Error::InconsistentPlan(format!(
            "plan was solved for the {} schedule but the policy runs {}",
            plan.mode, policy.schedule
        )));
    }
    let split_points: Vec<u64> = plan
        .split_points()
        .map(|l| if policy.recompute { l } else { 0 })
        .collect();

    let peak = peak_gpu_bytes(spec, wl, &split_points, policy);
    if let Some(budget) = gpu_mem_budget {
        if peak > budget {
            return Err(Error::MemoryBudgetExceeded { peak, budget });
        }
    }

    let p = spec.precision_bytes as f64;
    let h = spec.hidden_dim as f64;
    let b = wl.batch_size as f64;
    let hidden_state_bytes = b * h * p;
    let new_token_kv_bytes = kv_cache_bytes(spec, wl, 1);
    let last_layer = spec.num_layers - 1;

    let mut g = Builder::default();
    let mut mha_of_unit: Vec<TaskId> = Vec::new();
    let mut ffn: HashMap<Tags, TaskId> = HashMap::new();
    let mut store_cache: HashMap<Tags, TaskId> = HashMap::new();
    let mut store_act: HashMap<Tags, TaskId> = HashMap::new();
    let mut epoch_release: Vec<Option<TaskId>> = Vec::new();
    let mut weights = EpochWeights::default();

    for (u, tags) in units(wl, spec, policy.schedule).into_iter().enumerate() {
        let Tags { step, layer, batch } = tags;
        let seq_len = wl.seq_len_at(step);
        let l = split_points[(step - 1) as usize];
        let staging = u.checked_sub(2).map(|v| mha_of_unit[v]);

        let starts_epoch = !policy.weights_resident && (policy.schedule == Schedule::Row || batch == 0);
        let weight_slot = if starts_epoch {
            let e = epoch_release.len();
            epoch_release.push(None);
            e.checked_sub(2).and_then(|e| epoch_release[e])
        } else {
            None
        };

        let act = g.push(
            TaskKind::LoadActivationRecompute,
            Cost::Bytes(activation_bytes(spec, wl, l)),
            &[staging],
            tags,
            None,
        );

        if starts_epoch {
            weights = EpochWeights::default();
            let deps = [weight_slot];
            match policy.granularity {
                Granularity::Fine => {
                    let half = Cost::Bytes(2.0 * mha_matrix_bytes(spec));
                    weights.key_value = g.push(TaskKind::LoadWeight, half, &deps, tags, Some(WeightPart::KeyValue));
                    weights.query_output =
                        g.push(TaskKind::LoadWeight, half, &deps, tags, Some(WeightPart::QueryOutput));
                }
                Granularity::Coarse => {
                    let all = Cost::Bytes(4.0 * mha_matrix_bytes(spec));
                    weights.attention = g.push(TaskKind::LoadWeight, all, &deps, tags, Some(WeightPart::Attention));
                }
            }
        }

        let prev_store = step
            .checked_sub(1)
            .filter(|&s| s >= 1)
            .and_then(|s| store_cache.get(&Tags { step: s, layer, batch }).copied());
        let cache = g.push(
            TaskKind::LoadCache,
            Cost::Bytes(kv_remainder_bytes(spec, wl, seq_len, l)?),
            &[staging, prev_store],
            tags,
            None,
        );

        if starts_epoch {
            weights.ffn = g.push(
                TaskKind::LoadWeight,
                Cost::Bytes(ffn_weight_bytes(spec)),
                &[weight_slot],
                tags,
                Some(WeightPart::Ffn),
            );
        }

        // input hidden state of this unit
        let mut input = None;
        if layer > 0 {
            match policy.schedule {
                Schedule::Column => {
                    let parked = store_act.get(&Tags { step, layer: layer - 1, batch }).copied();
                    input = g.push(
                        TaskKind::LoadActivation,
                        Cost::Bytes(hidden_state_bytes),
                        &[parked, staging],
                        tags,
                        None,
                    );
                }
                Schedule::Row => input = ffn.get(&Tags { step, layer: layer - 1, batch }).copied(),
            }
        } else if step > 1 {
            input = ffn.get(&Tags { step: step - 1, layer: last_layer, batch }).copied();
        }

        let recompute = g.push(
            TaskKind::ComputeRecompute,
            Cost::Flops(recompute_flops(spec, wl, l)),
            &[act, weights.for_recompute(policy.granularity)],
            tags,
            None,
        );
        let flops = decode_step_flops(spec, wl, seq_len);
        let mha = g
            .push(
                TaskKind::ComputeMha,
                Cost::Flops(flops.mha()),
                &[recompute, cache, input, weights.key_value, weights.query_output, weights.attention],
                tags,
                None,
            )
            .expect("attention block has positive cost");
        mha_of_unit.push(mha);
        let ffn_task = g
            .push(TaskKind::ComputeFfn, Cost::Flops(flops.ffn), &[Some(mha), weights.ffn], tags, None)
            .expect("ffn has positive cost");
        ffn.insert(tags, ffn_task);

        if let Some(id) = g.push(TaskKind::StoreCache, Cost::Bytes(new_token_kv_bytes), &[Some(mha)], tags, None) {
            store_cache.insert(tags, id);
        }
        if policy.schedule == Schedule::Column {
            if let Some(id) = g.push(TaskKind::StoreActivation, Cost::Bytes(hidden_state_bytes), &[Some(ffn_task)], tags, None) {
                store_act.insert(tags, id);
            }
        }

        let ends_epoch = !policy.weights_resident && (policy.schedule == Schedule::Row || batch + 1 == wl.num_batches);
        if ends_epoch {
            *epoch_release.last_mut().expect("epoch was opened") = Some(ffn_task);
        }
    }

    Ok(TaskGraph {
        tasks: g.tasks,
        tokens: wl.effective_batch() * wl.gen_len,
        peak_gpu_bytes: peak,
    })
}

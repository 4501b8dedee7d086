//! Byte and FLOP accounting for single-token decoding of a dense decoder
//! stack.
//!
//! All quantities are per decoder layer unless stated otherwise. Byte counts
//! are `f64` because compressed KV caches use fractional bytes per element.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture constants of a decoder-only transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hidden_dim: u64,
    pub num_layers: u64,
    pub num_heads: u64,
    pub ffn_dim: u64,
    pub precision_bytes: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_layers == 0 || self.num_heads == 0 {
            return Err(Error::InvalidModel(
                "hidden_dim, num_layers and num_heads must be positive".into(),
            ));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::InvalidModel(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::InvalidModel("ffn_dim must be positive".into()));
        }
        if !matches!(self.precision_bytes, 1 | 2 | 4 | 8) {
            return Err(Error::InvalidModel(format!(
                "precision_bytes must be 1, 2, 4 or 8, got {}",
                self.precision_bytes
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> u64 {
        self.hidden_dim / self.num_heads
    }

    fn h(&self) -> f64 {
        self.hidden_dim as f64
    }

    fn p(&self) -> f64 {
        self.precision_bytes as f64
    }
}

/// Decode workload: `num_batches` groups of `batch_size` sequences, each with a
/// prompt of `prompt_len` tokens, generating `gen_len` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub batch_size: u64,
    #[serde(default = "one")]
    pub num_batches: u64,
    pub prompt_len: u64,
    pub gen_len: u64,
    /// Effective bytes per KV element after compression; equals the model
    /// precision when the cache is stored uncompressed.
    pub kv_bytes_per_element: f64,
}

fn one() -> u64 {
    1
}

impl WorkloadSpec {
    /// Uncompressed workload for `spec`.
    pub fn new(spec: &ModelSpec, batch_size: u64, prompt_len: u64, gen_len: u64) -> Self {
        Self {
            batch_size,
            num_batches: 1,
            prompt_len,
            gen_len,
            kv_bytes_per_element: spec.precision_bytes as f64,
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.batch_size == 0 || self.num_batches == 0 {
            return Err(Error::InvalidWorkload(
                "batch_size and num_batches must be at least 1".into(),
            ));
        }
        if self.prompt_len == 0 || self.gen_len == 0 {
            return Err(Error::InvalidWorkload(
                "prompt_len and gen_len must be at least 1".into(),
            ));
        }
        let q = self.kv_bytes_per_element;
        if !(q > 0.0 && q <= spec.precision_bytes as f64) {
            return Err(Error::InvalidWorkload(format!(
                "kv_bytes_per_element {q} must lie in (0, {}]",
                spec.precision_bytes
            )));
        }
        Ok(())
    }

    /// Sequence length attended to at generation step `step` (1-based).
    pub fn seq_len_at(&self, step: u64) -> u64 {
        self.prompt_len + step
    }

    /// Sequences decoded per step across all batches.
    pub fn effective_batch(&self) -> u64 {
        self.batch_size * self.num_batches
    }

    fn b(&self) -> f64 {
        self.batch_size as f64
    }
}

/// KV cache size of one layer at sequence length `seq_len`: `2·b·s'·h·q`.
pub fn kv_cache_bytes(spec: &ModelSpec, wl: &WorkloadSpec, seq_len: u64) -> f64 {
    2.0 * wl.b() * seq_len as f64 * spec.h() * wl.kv_bytes_per_element
}

/// Activations `X[0:l]` shipped for recomputation: `b·l·h·p`. Activations
/// are never compressed.
pub fn activation_bytes(spec: &ModelSpec, wl: &WorkloadSpec, l: u64) -> f64 {
    wl.b() * l as f64 * spec.h() * spec.p()
}

/// KV cache suffix `[l:s']` still transferred from host memory.
pub fn kv_remainder_bytes(spec: &ModelSpec, wl: &WorkloadSpec, seq_len: u64, l: u64) -> Result<f64> {
    if l > seq_len {
        return Err(Error::SplitOutOfRange { l, seq_len });
    }
    Ok(kv_cache_bytes(spec, wl, seq_len - l))
}

/// FLOPs to rebuild `K[0:l]` and `V[0:l]` from activations: `4·b·l·h²`.
pub fn recompute_flops(spec: &ModelSpec, wl: &WorkloadSpec, l: u64) -> f64 {
    4.0 * wl.b() * l as f64 * spec.h() * spec.h()
}

/// Size of one `h×h` attention projection matrix.
pub fn mha_matrix_bytes(spec: &ModelSpec) -> f64 {
    spec.h() * spec.h() * spec.p()
}

/// W_Q, W_K, W_V and W_O together.
pub fn mha_weight_bytes(spec: &ModelSpec) -> f64 {
    4.0 * mha_matrix_bytes(spec)
}

/// W_1 (`h×d_FFN`) and W_2 (`d_FFN×h`).
pub fn ffn_weight_bytes(spec: &ModelSpec) -> f64 {
    2.0 * spec.h() * spec.ffn_dim as f64 * spec.p()
}

pub fn layer_weight_bytes(spec: &ModelSpec) -> f64 {
    mha_weight_bytes(spec) + ffn_weight_bytes(spec)
}

/// Dense-matmul FLOP counts for one decode step of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepFlops {
    pub qkv_proj: f64,
    pub attention: f64,
    pub out_proj: f64,
    pub ffn: f64,
}

impl StepFlops {
    /// Work of the attention block (projections, scores and output).
    pub fn mha(&self) -> f64 {
        self.qkv_proj + self.attention + self.out_proj
    }

    pub fn total(&self) -> f64 {
        self.mha() + self.ffn
    }
}

pub fn decode_step_flops(spec: &ModelSpec, wl: &WorkloadSpec, seq_len: u64) -> StepFlops {
    let b = wl.b();
    let h = spec.h();
    StepFlops {
        qkv_proj: 3.0 * 2.0 * b * h * h,
        // q·Kᵀ plus softmax(·)·V, each 2·s'·h per sequence
        attention: 2.0 * 2.0 * b * seq_len as f64 * h,
        out_proj: 2.0 * b * h * h,
        ffn: 2.0 * 2.0 * b * h * spec.ffn_dim as f64,
    }
}

pub const DEFAULT_QUANT_GROUP_SIZE: u32 = 64;
/// One FP16 scale and one FP16 offset per group.
pub const DEFAULT_QUANT_GROUP_OVERHEAD_BYTES: f64 = 4.0;

/// Effective bytes per element of group-wise quantization with `bits` per
/// value and `overhead_bytes` of metadata per `group_size` values.
pub fn groupwise_bytes_per_element(bits: u32, group_size: u32, overhead_bytes: f64) -> f64 {
    bits as f64 / 8.0 + overhead_bytes / group_size as f64
}

/// Published OPT model-card constants. Only the hidden width is used by
/// the split-point objective; depth, heads and FFN width feed the simulator.
pub fn opt_preset(name: &str) -> Result<ModelSpec> {
    let (hidden_dim, num_layers, num_heads) = match name.to_ascii_lowercase().as_str() {
        "opt-6.7b" => (4096, 32, 32),
        "opt-13b" => (5120, 40, 40),
        "opt-30b" => (7168, 48, 56),
        _ => return Err(Error::UnknownPreset(name.to_string())),
    };
    Ok(ModelSpec {
        hidden_dim,
        num_layers,
        num_heads,
        ffn_dim: 4 * hidden_dim,
        precision_bytes: 2,
    })
}

pub const OPT_PRESETS: [&str; 3] = ["OPT-6.7B", "OPT-13B", "OPT-30B"];

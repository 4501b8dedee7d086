//! JSON run configuration shared by the command-line tools.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costmodel::{opt_preset, ModelSpec, WorkloadSpec};
use crate::error::{Error, Result};
use crate::hwprofile::{HardwareProfile, GIB};
use crate::pipesim::{Granularity, Policy, Scenario};
use crate::scheduler::Schedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Preset(String),
    Explicit(ModelSpec),
}

impl ModelChoice {
    pub fn resolve(&self) -> Result<ModelSpec> {
        match self {
            ModelChoice::Preset(name) => opt_preset(name),
            ModelChoice::Explicit(spec) => {
                spec.validate()?;
                Ok(*spec)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub batch_size: u64,
    #[serde(default = "one")]
    pub num_batches: u64,
    pub prompt_len: u64,
    pub gen_len: u64,
    /// Defaults to the model precision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_bytes_per_element: Option<f64>,
}

fn one() -> u64 {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    pub gpu_flops: f64,
    /// Bytes per second.
    pub h2d_bw: f64,
    pub d2h_bw: f64,
    #[serde(default)]
    pub transfer_latency_s: f64,
    #[serde(default = "unit")]
    pub gpu_efficiency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpu_mem_budget_bytes: Option<f64>,
}

impl HardwareConfig {
    pub fn from_profile(p: &HardwareProfile) -> Self {
        Self {
            gpu_flops: p.gpu_flops,
            h2d_bw: p.h2d_bandwidth,
            d2h_bw: p.d2h_bandwidth,
            transfer_latency_s: p.transfer_latency,
            gpu_efficiency: p.gpu_efficiency,
            gpu_mem_budget_bytes: None,
        }
    }

    pub fn profile(&self) -> HardwareProfile {
        HardwareProfile {
            gpu_flops: self.gpu_flops,
            h2d_bandwidth: self.h2d_bw,
            d2h_bandwidth: self.d2h_bw,
            transfer_latency: self.transfer_latency_s,
            gpu_efficiency: self.gpu_efficiency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelChoice,
    pub workload: WorkloadConfig,
    pub hardware: HardwareConfig,
    pub policy: Policy,
}

/// Parameters `apply_axis` can set.
pub const AXES: [&str; 10] = [
    "batch_size",
    "num_batches",
    "prompt_len",
    "gen_len",
    "kv_bytes_per_element",
    "gpu_flops",
    "h2d_bw",
    "d2h_bw",
    "transfer_latency_s",
    "gpu_efficiency",
];

impl RunConfig {
    /// OPT-6.7B on the A100 profile, one batch of 64, 128-token prompts,
    /// 32 generated tokens, row schedule with resident weights.
    pub fn demo() -> Self {
        Self {
            model: ModelChoice::Preset("OPT-6.7B".into()),
            workload: WorkloadConfig {
                batch_size: 64,
                num_batches: 1,
                prompt_len: 128,
                gen_len: 32,
                kv_bytes_per_element: None,
            },
            hardware: HardwareConfig::from_profile(&HardwareProfile::a100_pcie4()),
            policy: Policy::kvpr(Schedule::Row, Granularity::Fine, true),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        self.model.resolve()
    }

    pub fn workload(&self) -> Result<WorkloadSpec> {
        let spec = self.spec()?;
        let w = &self.workload;
        let wl = WorkloadSpec {
            batch_size: w.batch_size,
            num_batches: w.num_batches,
            prompt_len: w.prompt_len,
            gen_len: w.gen_len,
            kv_bytes_per_element: w.kv_bytes_per_element.unwrap_or(spec.precision_bytes as f64),
        };
        wl.validate(&spec)?;
        Ok(wl)
    }

    pub fn profile(&self) -> Result<HardwareProfile> {
        let p = self.hardware.profile();
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.workload()?;
        self.profile()?;
        if let Some(budget) = self.hardware.gpu_mem_budget_bytes {
            if !(budget.is_finite() && budget > 0.0) {
                return Err(Error::InvalidConfig(format!("gpu_mem_budget_bytes must be positive, got {budget}")));
            }
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let mut s = Scenario::new(self.spec()?, self.workload()?, self.profile()?);
        s.gpu_mem_budget = self.hardware.gpu_mem_budget_bytes;
        Ok(s)
    }

    /// Sets one numeric parameter by name. Bandwidths accept a `GiB`
    /// suffix, e.g. `16GiB`.
    pub fn apply_axis(&mut self, axis: &str, value: &str) -> Result<()> {
        let bad = || Error::InvalidConfig(format!("invalid value `{value}` for {axis}"));
        let int = || value.trim().parse::<u64>().map_err(|_| bad());
        let float = || -> Result<f64> {
            let v = value.trim();
            let parsed = match v.strip_suffix("GiB") {
                Some(n) => n.trim().parse::<f64>().map(|x| x * GIB),
                None => v.parse::<f64>(),
            };
            parsed.map_err(|_| bad())
        };
        match axis {
            "batch_size" => self.workload.batch_size = int()?,
            "num_batches" => self.workload.num_batches = int()?,
            "prompt_len" => self.workload.prompt_len = int()?,
            "gen_len" => self.workload.gen_len = int()?,
            "kv_bytes_per_element" => self.workload.kv_bytes_per_element = Some(float()?),
            "gpu_flops" => self.hardware.gpu_flops = float()?,
            "h2d_bw" => self.hardware.h2d_bw = float()?,
            "d2h_bw" => self.hardware.d2h_bw = float()?,
            "transfer_latency_s" => self.hardware.transfer_latency_s = float()?,
            "gpu_efficiency" => self.hardware.gpu_efficiency = float()?,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown axis `{axis}` (one of {})",
                    AXES.join(", ")
                )))
            }
        }
        Ok(())
    }
}

//! Hardware profile (compute rate and interconnect bandwidths) and its
//! least-squares calibration from offline measurement files.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GIB: f64 = 1024.0 * 1024.0 * 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    H2d,
    D2h,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    /// Peak GPU FLOP rate, FLOPs/s.
    pub gpu_flops: f64,
    /// Host-to-device bandwidth, bytes/s.
    pub h2d_bandwidth: f64,
    /// Device-to-host bandwidth, bytes/s.
    pub d2h_bandwidth: f64,
    /// Fixed cost of every non-empty transfer, seconds.
    #[serde(default)]
    pub transfer_latency: f64,
    /// Derating applied to `gpu_flops` for small decode matmuls.
    #[serde(default = "unit_efficiency")]
    pub gpu_efficiency: f64,
}

fn unit_efficiency() -> f64 {
    1.0
}

impl HardwareProfile {
    pub fn new(gpu_flops: f64, h2d_bandwidth: f64, d2h_bandwidth: f64) -> Self {
        Self {
            gpu_flops,
            h2d_bandwidth,
            d2h_bandwidth,
            transfer_latency: 0.0,
            gpu_efficiency: 1.0,
        }
    }

    /// A100 with FP16 tensor-core peak over PCIe 4.0 x16 (32 GiB/s each way).
    pub fn a100_pcie4() -> Self {
        Self::new(312e12, 32.0 * GIB, 32.0 * GIB)
    }

    /// Quadro RTX 5000 over PCIe 4.0 x8.
    pub fn rtx5000_pcie4_x8() -> Self {
        Self::new(89.2e12, 16.0 * GIB, 16.0 * GIB)
    }

    /// A zero `gpu_flops` is accepted and means recomputation never pays off.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProfile(msg));
        if !(self.gpu_flops >= 0.0) || self.gpu_flops.is_nan() {
            return bad(format!("gpu_flops must be non-negative, got {}", self.gpu_flops));
        }
        for (name, bw) in [("h2d_bandwidth", self.h2d_bandwidth), ("d2h_bandwidth", self.d2h_bandwidth)] {
            if !(bw > 0.0 && bw.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {bw}"));
            }
        }
        if !(self.transfer_latency >= 0.0 && self.transfer_latency.is_finite()) {
            return bad(format!("transfer_latency must be >= 0, got {}", self.transfer_latency));
        }
        if !(self.gpu_efficiency > 0.0 && self.gpu_efficiency <= 1.0) {
            return bad(format!("gpu_efficiency must lie in (0, 1], got {}", self.gpu_efficiency));
        }
        Ok(())
    }

    pub fn bandwidth(&self, direction: Direction) -> f64 {
        match direction {
            Direction::H2d => self.h2d_bandwidth,
            Direction::D2h => self.d2h_bandwidth,
        }
    }

    /// Effective FLOP rate after derating.
    pub fn effective_flops(&self) -> f64 {
        self.gpu_flops * self.gpu_efficiency
    }

    /// `latency + bytes / bandwidth`; empty transfers cost nothing.
    pub fn transfer_time(&self, bytes: f64, direction: Direction) -> f64 {
        if bytes <= 0.0 {
            return 0.0;
        }
        self.transfer_latency + bytes / self.bandwidth(direction)
    }

    /// `flops / (v_gpu · efficiency)`; infinite when the GPU rate is zero.
    pub fn compute_time(&self, flops: f64) -> f64 {
        if flops <= 0.0 {
            return 0.0;
        }
        flops / self.effective_flops()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementKind {
    H2d,
    D2h,
    Gemm,
}

impl MeasurementKind {
    pub const ALL: [MeasurementKind; 3] = [MeasurementKind::H2d, MeasurementKind::D2h, MeasurementKind::Gemm];
}

impl fmt::Display for MeasurementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeasurementKind::H2d => "h2d",
            MeasurementKind::D2h => "d2h",
            MeasurementKind::Gemm => "gemm",
        })
    }
}

/// One timed operation: bytes moved (h2d/d2h) or FLOPs executed (gemm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub size: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementSet {
    pub records: Vec<Measurement>,
}

impl MeasurementSet {
    pub fn new(records: Vec<Measurement>) -> Result<Self> {
        for r in &records {
            if !(r.size > 0.0 && r.size.is_finite()) || !(r.elapsed_s > 0.0 && r.elapsed_s.is_finite()) {
                return Err(Error::InvalidMeasurement(format!(
                    "{} record needs positive size and elapsed, got ({}, {})",
                    r.kind, r.size, r.elapsed_s
                )));
            }
        }
        Ok(Self { records })
    }

    /// Reads `kind,size,elapsed_s` CSV.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let records = rdr.deserialize().collect::<Result<Vec<Measurement>, _>>()?;
        Self::new(records)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            wtr.serialize(r)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    fn of_kind(&self, kind: MeasurementKind) -> impl Iterator<Item = &Measurement> {
        self.records.iter().filter(move |r| r.kind == kind)
    }
}

/// `elapsed = latency + size / rate`, fitted by ordinary least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub rate: f64,
    pub latency: f64,
    pub residual_rms: f64,
    pub samples: usize,
}

pub fn fit_kind(set: &MeasurementSet, kind: MeasurementKind) -> Result<AffineFit> {
    let points: Vec<(f64, f64)> = set.of_kind(kind).map(|r| (r.size, r.elapsed_s)).collect();
    let n = points.len();
    if n < 2 {
        return Err(Error::InsufficientMeasurements { kind, found: n });
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in &points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx <= (f64::EPSILON * mean_x).powi(2) * nf {
        return Err(Error::DegenerateFit { kind });
    }
    let slope = sxy / sxx;
    if !(slope > 0.0) {
        return Err(Error::NegativeRate { kind, slope });
    }
    let latency = mean_y - slope * mean_x;
    let sse: f64 = points
        .iter()
        .map(|&(x, y)| {
            let r = y - (latency + slope * x);
            r * r
        })
        .sum();
    Ok(AffineFit {
        rate: 1.0 / slope,
        latency,
        residual_rms: (sse / nf).sqrt(),
        samples: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub profile: HardwareProfile,
    pub fits: BTreeMap<MeasurementKind, AffineFit>,
    /// RMS residual over all records, seconds.
    pub residual_rms: f64,
}

/// Fits every kind and assembles a profile. The profile's transfer latency
/// is the mean of the h2d and d2h intercepts, floored at zero; the gemm
/// intercept is reported but has no slot in the profile.
pub fn calibrate(set: &MeasurementSet) -> Result<Calibration> {
    let mut fits = BTreeMap::new();
    for kind in MeasurementKind::ALL {
        fits.insert(kind, fit_kind(set, kind)?);
    }
    let (h2d, d2h, gemm) = (fits[&MeasurementKind::H2d], fits[&MeasurementKind::D2h], fits[&MeasurementKind::Gemm]);
    let latency = (0.5 * (h2d.latency + d2h.latency)).max(0.0);
    let profile = HardwareProfile {
        gpu_flops: gemm.rate,
        h2d_bandwidth: h2d.rate,
        d2h_bandwidth: d2h.rate,
        transfer_latency: latency,
        gpu_efficiency: 1.0,
    };
    let total: f64 = fits.values().map(|f| f.residual_rms.powi(2) * f.samples as f64).sum();
    let count: usize = fits.values().map(|f| f.samples).sum();
    Ok(Calibration {
        profile,
        fits,
        residual_rms: (total / count as f64).sqrt(),
    })
}

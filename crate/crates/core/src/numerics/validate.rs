use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::attention::{decode_attention, project_qkv, split_merge_kv, KVState};
use super::matrix::Matrix;
use crate::error::Result;

/// Per-element agreement required between merged and full-cache attention.
pub const EXACTNESS_TOLERANCE: f64 = 1e-12;

pub const MAX_BATCH: usize = 4;
pub const MAX_SEQ_LEN: usize = 32;
pub const MAX_HIDDEN: usize = 16;
pub const HEAD_CHOICES: [usize; 3] = [1, 2, 4];

/// Which split points each case exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSelection {
    /// Every `0 ≤ l ≤ s'`.
    All,
    Zero,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CaseShape {
    pub batch: usize,
    pub seq_len: usize,
    pub hidden: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseFailure {
    pub case: usize,
    pub shape: CaseShape,
    pub l: usize,
    pub sequence: usize,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub cases: usize,
    /// `(case, sequence, l)` combinations compared.
    pub checks: usize,
    pub max_abs_error: f64,
    pub failures: Vec<CaseFailure>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_shape(rng: &mut ChaCha8Rng) -> CaseShape {
    let heads = HEAD_CHOICES[rng.gen_range(0..HEAD_CHOICES.len())];
    let head_dim = rng.gen_range(1..=MAX_HIDDEN / heads);
    CaseShape {
        batch: rng.gen_range(1..=MAX_BATCH),
        seq_len: rng.gen_range(1..=MAX_SEQ_LEN),
        hidden: heads * head_dim,
        heads,
    }
}

/// `(sequence, l, error)` of a comparison over tolerance.
type Miss = (usize, usize, f64);

/// Compares split-and-merge attention against the full cache for one
/// random instance. Returns the number of checks and the worst error per
/// failing `(sequence, l)`.
fn run_case(shape: CaseShape, selection: SplitSelection, rng: &mut ChaCha8Rng) -> Result<(usize, f64, Vec<Miss>)> {
    let CaseShape { batch, seq_len, hidden, heads } = shape;
    let w: Vec<Matrix> = (0..4).map(|_| random_matrix(hidden, hidden, rng)).collect();
    let (wq, wk, wv, wo) = (&w[0], &w[1], &w[2], &w[3]);
    let x = random_matrix(batch * seq_len, hidden, rng);
    let full = project_qkv(&x, wq, wk, wv)?;
    let queries = project_qkv(&random_matrix(batch, hidden, rng), wq, wk, wv)?.q;

    let splits: Vec<usize> = match selection {
        SplitSelection::All => (0..=seq_len).collect(),
        SplitSelection::Zero => vec![0],
        SplitSelection::Full => vec![seq_len],
    };
    let mut checks = 0;
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for seq in 0..batch {
        let rows = seq * seq_len..(seq + 1) * seq_len;
        let x_seq = x.slice_rows(rows.start, rows.end);
        let cache = KVState::from_full(&full.k.slice_rows(rows.start, rows.end), &full.v.slice_rows(rows.start, rows.end), heads)?;
        let q = queries.slice_rows(seq, seq + 1);
        let reference = decode_attention(&q, &cache, wo)?;
        for &l in &splits {
            let merged = split_merge_kv(&x_seq, l, wk, wv, &cache.slice(l, seq_len))?;
            let out = decode_attention(&q, &merged, wo)?;
            let err = out.max_abs_diff(&reference).max(merged.max_abs_diff(&cache));
            checks += 1;
            worst = worst.max(err);
            if !(err <= EXACTNESS_TOLERANCE) {
                bad.push((seq, l, err));
            }
        }
    }
    Ok((checks, worst, bad))
}

/// Runs `cases` seeded random instances.
pub fn validate_exactness(seed: u64, cases: usize, selection: SplitSelection) -> Result<ValidationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ValidationReport {
        seed,
        cases,
        checks: 0,
        max_abs_error: 0.0,
        failures: Vec::new(),
    };
    for case in 0..cases {
        let shape = random_shape(&mut rng);
        let (checks, worst, bad) = run_case(shape, selection, &mut rng)?;
        report.checks += checks;
        report.max_abs_error = report.max_abs_error.max(worst);
        report.failures.extend(bad.into_iter().map(|(sequence, l, max_abs_error)| CaseFailure {
            case,
            shape,
            l,
            sequence,
            max_abs_error,
        }));
    }
    Ok(report)
}

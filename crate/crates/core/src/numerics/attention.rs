use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Per-head key and value caches of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct KVState {
    keys: Vec<Matrix>,
    values: Vec<Matrix>,
    head_dim: usize,
}

impl KVState {
    pub fn empty(num_heads: usize, head_dim: usize) -> Self {
        Self {
            keys: vec![Matrix::zeros(0, head_dim); num_heads],
            values: vec![Matrix::zeros(0, head_dim); num_heads],
            head_dim,
        }
    }

    pub fn from_heads(keys: Vec<Matrix>, values: Vec<Matrix>) -> Result<Self> {
        let Some(first) = keys.first() else {
            return Err(Error::ShapeMismatch("no heads".into()));
        };
        let shape = first.shape();
        if keys.len() != values.len() || keys.iter().chain(&values).any(|m| m.shape() != shape) {
            return Err(Error::ShapeMismatch("heads disagree in shape".into()));
        }
        Ok(Self {
            head_dim: shape.1,
            keys,
            values,
        })
    }

    /// Splits full-width `(s' × h)` keys and values into heads.
    pub fn from_full(k: &Matrix, v: &Matrix, num_heads: usize) -> Result<Self> {
        if k.shape() != v.shape() {
            return Err(Error::ShapeMismatch("K and V differ in shape".into()));
        }
        Self::from_heads(split_heads(k, num_heads)?, split_heads(v, num_heads)?)
    }

    pub fn num_heads(&self) -> usize {
        self.keys.len()
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn seq_len(&self) -> usize {
        self.keys.first().map_or(0, Matrix::rows)
    }

    pub fn keys(&self, head: usize) -> &Matrix {
        &self.keys[head]
    }

    pub fn values(&self, head: usize) -> &Matrix {
        &self.values[head]
    }

    /// Positions `start..end` of every head.
    pub fn slice(&self, start: usize, end: usize) -> KVState {
        Self {
            keys: self.keys.iter().map(|m| m.slice_rows(start, end)).collect(),
            values: self.values.iter().map(|m| m.slice_rows(start, end)).collect(),
            head_dim: self.head_dim,
        }
    }

    /// `self` followed by `later` along the sequence.
    pub fn concat(&self, later: &KVState) -> Result<KVState> {
        if self.num_heads() != later.num_heads() || self.head_dim != later.head_dim {
            return Err(Error::ShapeMismatch(format!(
                "cannot join {}x{} heads with {}x{}",
                self.num_heads(),
                self.head_dim,
                later.num_heads(),
                later.head_dim
            )));
        }
        let join = |a: &[Matrix], b: &[Matrix]| a.iter().zip(b).map(|(x, y)| x.vstack(y)).collect::<Result<Vec<_>>>();
        Ok(Self {
            keys: join(&self.keys, &later.keys)?,
            values: join(&self.values, &later.values)?,
            head_dim: self.head_dim,
        })
    }

    pub fn max_abs_diff(&self, other: &KVState) -> f64 {
        self.keys
            .iter()
            .zip(&other.keys)
            .chain(self.values.iter().zip(&other.values))
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

pub fn split_heads(m: &Matrix, num_heads: usize) -> Result<Vec<Matrix>> {
    if num_heads == 0 || m.cols() % num_heads != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} columns do not split into {num_heads} heads",
            m.cols()
        )));
    }
    let d = m.cols() / num_heads;
    Ok((0..num_heads).map(|head| m.slice_cols(head * d, (head + 1) * d)).collect())
}

fn check_square(w: &Matrix, h: usize, name: &str) -> Result<()> {
    if w.shape() != (h, h) {
        return Err(Error::ShapeMismatch(format!(
            "{name} is {}x{}, expected {h}x{h}",
            w.rows(),
            w.cols()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

/// `Q = X·W_Q`, `K = X·W_K`, `V = X·W_V` for `X` of shape `(b·s') × h`.
pub fn project_qkv(x: &Matrix, wq: &Matrix, wk: &Matrix, wv: &Matrix) -> Result<Projections> {
    let h = x.cols();
    check_square(wq, h, "W_Q")?;
    check_square(wk, h, "W_K")?;
    check_square(wv, h, "W_V")?;
    Ok(Projections {
        q: x.matmul(wq)?,
        k: x.matmul(wk)?,
        v: x.matmul(wv)?,
    })
}

/// Stabilized softmax of `q·Kᵀ/√d` for the query slice of one head.
pub fn attention_weights(q_head: &[f64], keys: &Matrix) -> Vec<f64> {
    let scale = 1.0 / (keys.cols() as f64).sqrt();
    let logits: Vec<f64> = (0..keys.rows())
        .map(|t| keys.row(t).iter().zip(q_head).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Single-token attention: per head `softmax(q·Kᵀ/√d)·V`, heads concatenated
/// and projected by `W_O`.
pub fn decode_attention(q: &Matrix, kv: &KVState, wo: &Matrix) -> Result<Matrix> {
    if kv.seq_len() == 0 {
        return Err(Error::EmptyCache);
    }
    let h = kv.num_heads() * kv.head_dim();
    if q.shape() != (1, h) {
        return Err(Error::ShapeMismatch(format!(
            "query is {}x{}, expected 1x{h}",
            q.rows(),
            q.cols()
        )));
    }
    check_square(wo, h, "W_O")?;
    let d = kv.head_dim();
    let mut z = Vec::with_capacity(h);
    for head in 0..kv.num_heads() {
        let weights = attention_weights(&q.row(0)[head * d..(head + 1) * d], kv.keys(head));
        let values = kv.values(head);
        for c in 0..d {
            z.push((0..values.rows()).map(|t| weights[t] * values[(t, c)]).sum::<f64>());
        }
    }
    Matrix::new(1, h, z)?.matmul(wo)
}

/// Recomputes K/V for positions `[0, l)` from `x_full[0..l]` and joins them
/// with the transferred suffix covering `[l, s')`.
pub fn split_merge_kv(x_full: &Matrix, l: usize, wk: &Matrix, wv: &Matrix, transferred: &KVState) -> Result<KVState> {
    let s = x_full.rows();
    if l > s {
        return Err(Error::SplitOutOfRange {
            l: l as u64,
            seq_len: s as u64,
        });
    }
    if transferred.seq_len() != s - l {
        return Err(Error::ShapeMismatch(format!(
            "transferred segment holds {} positions, expected {}",
            transferred.seq_len(),
            s - l
        )));
    }
    let h = x_full.cols();
    check_square(wk, h, "W_K")?;
    check_square(wv, h, "W_V")?;
    if transferred.num_heads() * transferred.head_dim() != h {
        return Err(Error::ShapeMismatch("transferred heads do not span the hidden width".into()));
    }
    let prefix = x_full.slice_rows(0, l);
    let recomputed = KVState::from_full(&prefix.matmul(wk)?, &prefix.matmul(wv)?, transferred.num_heads())?;
    recomputed.concat(transferred)
}

pub fn append_token_kv(kv: &KVState, x_new: &Matrix, wk: &Matrix, wv: &Matrix) -> Result<KVState> {
    let h = kv.num_heads() * kv.head_dim();
    if x_new.shape() != (1, h) {
        return Err(Error::ShapeMismatch(format!(
            "new token is {}x{}, expected 1x{h}",
            x_new.rows(),
            x_new.cols()
        )));
    }
    check_square(wk, h, "W_K")?;
    check_square(wv, h, "W_V")?;
    let token = KVState::from_full(&x_new.matmul(wk)?, &x_new.matmul(wv)?, kv.num_heads())?;
    kv.concat(&token)
}

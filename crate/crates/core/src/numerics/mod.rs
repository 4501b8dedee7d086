//! Reference attention kernel for checking that recomputed prefixes merged
//! with transferred suffixes reproduce full-cache attention.

mod attention;
mod matrix;
mod validate;

pub use attention::{
    append_token_kv, attention_weights, decode_attention, project_qkv, split_heads, split_merge_kv, KVState,
    Projections,
};
pub use matrix::Matrix;
pub use validate::{
    random_shape, validate_exactness, CaseFailure, CaseShape, SplitSelection, ValidationReport, EXACTNESS_TOLERANCE,
    HEAD_CHOICES, MAX_BATCH, MAX_HIDDEN, MAX_SEQ_LEN,
};

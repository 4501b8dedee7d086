//! Planning and simulation of KV-cache partial recomputation for offloaded
//! LLM decoding.

pub mod config;
pub mod costmodel;
mod error;
pub mod hwprofile;
pub mod numerics;
pub mod pipesim;
pub mod scheduler;

pub use error::{Error, Result};

//! Desk-scale laboratory for multi-token prediction (MTP) pre-training.
//!
//! A decoder-only transformer learns to predict the next `k` tokens at once
//! through `k` prediction heads. Head activation follows a curriculum over
//! training (static, forward, or reverse), and the extra heads double as
//! draft proposers for greedy self-speculative decoding at inference time.
//! Everything runs on CPU with reproducible, seeded numerics.

pub mod cli;
pub mod curriculum;
pub mod datapack;
pub mod decode;
pub mod error;
pub mod evaluate;
pub mod fixtures;
pub mod model;
pub mod numerics;
pub mod tokenize;
pub mod train;

pub use error::{Error, Result};

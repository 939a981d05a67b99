//! Desk-scale laboratory for bottleneck-adapter fine-tuning of a miniature
//! transformer encoder: a dense f64 autodiff engine, language/task adapter
//! mechanics with freeze semantics, four task-adapter training regimes, a
//! deterministic synthetic multilingual corpus generator, and macro-F1
//! evaluation matrices.

pub mod adapter;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

//! Temporal knowledge graph completion with quaternion embeddings.
//!
//! Relations are rotated by a unit time quaternion and translated by the sine
//! of a periodic time quaternion; facts are scored by the inner product of
//! `q_h ⊗ q'_r(τ)` with the tail embedding.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod patterns;
pub mod quat;
pub mod train;

pub use error::{Error, Result};

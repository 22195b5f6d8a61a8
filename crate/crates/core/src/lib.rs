//! Kronecker-factorized code-domain NOMA.
//!
//! Pattern matrices are built as `F(1) ⊗ … ⊗ F(Lr) ⊗ P(1) ⊗ … ⊗ P(Ls)` where the
//! `F` factors are wide binary matrices and the `P` factors are square binary
//! matrices paired with a `{-1, 0, +1}` combining matrix. The crate covers
//!
//! - [`patterns`]: binary factor matrices, Kronecker expansion, design-space counts;
//! - [`designer`]: combining-matrix search and square factor selection;
//! - [`square`]: recursive combining detector for square factors and its gain tree;
//! - [`rect`]: recursive multiuser detection over rectangular factors;
//! - [`general`]: two-phase detection for mixed patterns, with optional SIC;
//! - [`metrics`]: sum rates, worst-case latency, operation counts;
//! - [`sim`]: Monte-Carlo BER simulation over the Gaussian MAC and fading variants.
//!
//! With the default `parallel` feature, candidate enumeration, rate path sums and
//! Monte-Carlo trials run on rayon. Results do not depend on the worker count.

pub mod designer;
pub mod error;
pub mod fixtures;
pub mod general;
pub mod metrics;
pub mod par;
pub mod patterns;
pub mod rect;
pub mod report;
pub mod sim;
pub mod square;

pub use error::{Error, Result};

/// Exact rational used for SNR gains.
pub type Gain = num_rational::Ratio<i64>;

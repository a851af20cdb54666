//! Block-diversified low-rank adapters.
//!
//! A low-rank update `ΔW = (α/r)·B·A` becomes a block matrix product once
//! `A` is split into `b` column blocks and `B` into `b` row blocks. Inserting
//! a learnable diagonal matrix `Σ_{i,j}` into every block product,
//! `ΔW_{i,j} = B_i Σ_{i,j} A_j`, breaks the correlation between block rows
//! and columns and raises the attainable rank from `r` to `min(m, n, b·r)`
//! at a cost of only `b²·r` extra parameters. The plain adapter is the
//! special case `Σ_{i,j} = I`; the block-diagonal ("mini-ensemble") variant
//! is `Σ_{i,j} = δ_{i,j}·I`.
//!
//! The crate bundles the adapter algebra with everything needed to verify it
//! at desk scale: an exact dense [`linalg`] kernel set (including a one-sided
//! Jacobi SVD), reproducible [`rng`] streams, hand-derived gradients with a
//! finite-difference oracle ([`grad`]), SGD/AdamW ([`optim`]), training
//! [`tasks`], and singular-value [`analysis`]. A `bora` binary exposes the
//! same machinery as `count`, `train`, `analyze`, `sweep`, and `gradcheck`
//! subcommands.
//!
//! ```
//! use bora::adapter::{AdapterConfig, AdapterParams, Variant, SigmaTransform,
//!                     materialize, forward, count_params};
//! use bora::linalg::{frobenius_norm, numerical_rank};
//! use bora::rng::Seed;
//!
//! // A 64x64 layer adapted at rank 4 with 4 blocks.
//! let config = AdapterConfig::with_unit_scale(
//!     64, 64, 4, 4, Variant::Bora, SigmaTransform::NormExp).unwrap();
//! let params = AdapterParams::init(&config, Seed::new(7)).unwrap();
//!
//! // B starts at zero, so the update starts at zero.
//! let delta = materialize(&params, &config).unwrap();
//! assert_eq!(frobenius_norm(&delta), 0.0);
//!
//! // The block diagonals cost b²·r parameters on top of (m+n)·r.
//! assert_eq!(count_params(&config), (64 + 64) * 4 + 4 * 4 * 4);
//!
//! // The segmented forward pass never materializes ΔW.
//! let y = forward(&params, &config, &vec![1.0; 64]).unwrap();
//! assert!(y.iter().all(|&v| v == 0.0));
//! ```
//!
//! The rank story in one picture: a trained-shape random update of a plain
//! rank-4 adapter has numerical rank 4, while the block-diversified version
//! with the same `A`, `B` budget reaches `b·r`.
//!
//! ```
//! use bora::adapter::*;
//! use bora::linalg::{frobenius_norm, numerical_rank};
//! use bora::rng::{kaiming_uniform, Seed};
//!
//! let config = AdapterConfig::with_unit_scale(
//!     32, 32, 4, 4, Variant::Bora, SigmaTransform::NormExp).unwrap();
//! let mut params = AdapterParams::init(&config, Seed::new(1)).unwrap();
//! params.b = kaiming_uniform(Seed::new(2), 32, 4, 4).unwrap();
//!
//! let delta = materialize(&params, &config).unwrap();
//! let threshold = 1e-9 * frobenius_norm(&delta);
//! assert_eq!(numerical_rank(&delta, threshold).unwrap(), 16); // b·r
//! ```

pub mod adapter;
pub mod analysis;
pub mod config;
pub mod error;
pub mod grad;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};

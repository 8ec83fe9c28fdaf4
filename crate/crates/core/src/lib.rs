//! Capacity regions and iterative LMMSE achievable rates for uplink MIMO-NOMA.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: channel, user weights, noise variance and the derived gram matrix.
//! - [`capacity`]: subset log-det bounds, sum capacity, SIC extreme points, membership.
//! - [`ese`]: the per-use LMMSE estimator, extrinsic combining, Monte Carlo AWGN check.
//! - [`transfer`]: SINR-variance transfer functions under the γ-constraint.
//! - [`rates`]: per-user achievable rates by closed form, quadrature and decoder area.
//! - [`search`]: coordinate search for γ hitting a target rate tuple.
//! - [`track`]: estimator/decoder fixed-point iteration and variance tracks.
//! - [`export`]: metadata header and JSON/CSV writers for result files.
//! - [`selftest`]: the acceptance criteria, runnable from tests and from the CLI.
//!
//! All rates are in nats per channel use.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod capacity;
pub mod error;
pub mod ese;
pub mod export;
pub mod fixtures;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod rates;
pub mod rng;
pub mod search;
pub mod selftest;
pub mod track;
pub mod transfer;

pub use capacity::{RatePoint, UserPermutation};
pub use error::{Error, Result};
pub use model::{build_system, gram, ComplexMatrix, HermitianMatrix, SystemConfig, SystemModel};
pub use num_complex::Complex64;
pub use transfer::{GammaVector, TransferFunction};

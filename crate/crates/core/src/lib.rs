//! Wideband THz channel and direction-of-arrival estimation under beam-split,
//! plus a federated multi-task training harness built on its labels.
//!
//! The crate is organised bottom-up:
//!
//! - [`system`]: scenario configuration, subcarrier grid and seeded random streams.
//! - [`channel`]: frequency-dependent sparse channel synthesis with ground truth.
//! - [`sensing`]: beamspace dictionary, analog precoder and pilot observations.
//! - [`estimators`]: LS, LMMSE, per-subcarrier OMP and beamspace support alignment.
//! - [`fmtl`]: per-user datasets, the two-head network and federated/centralized training.
//! - [`metrics`]: NMSE, DoA RMSE and communication-overhead accounting.
//! - [`experiment`]: Monte-Carlo sweeps and result emission.

pub mod channel;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod fmtl;
pub mod linalg;
pub mod metrics;
pub mod sensing;
pub mod system;

pub use error::{Error, Result};

use nalgebra::{DMatrix, DVector};

/// Double-precision complex scalar.
pub type C64 = num_complex::Complex64;
/// Dense complex column vector.
pub type CVector = DVector<C64>;
/// Dense complex matrix.
pub type CMatrix = DMatrix<C64>;

//! Projected randomized smoothing.
//!
//! A classifier first projects its input onto a low-dimensional orthonormal
//! basis `U`, reconstructs it, and classifies the reconstruction. Smoothing
//! with Gaussian noise in the projected space `R^p` yields an `l2` certificate
//! of radius `R` there, which pulls back to the region
//! `{delta : |U^T delta| <= R}` in the input space: a `p`-ball extruded along
//! the whole nullspace of `U^T`. This crate provides
//!
//! * [`projection`]: PCA and random orthonormal bases plus nullspace completion,
//! * [`classifier`]: a small tanh MLP with backprop, noisy training and finetuning,
//! * [`smoothing`]: Monte Carlo `predict`/`certify` with Clopper-Pearson bounds,
//! * [`certgeom`]: region membership, the `l_inf` distance `t`, the log-volume
//!   lower bound with its optimal radius, and `l2`-ball baselines,
//! * [`attack`]: PGD, nullspace-restricted PGD and random-noise baselines,
//! * [`optim`]: the dense simplex and box/subspace projection kernels,
//! * [`data`]: low-rank synthetic data and CSV ingestion,
//! * [`cli`]: the reproducible experiment driver behind the `projsmooth` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod certgeom;
pub mod classifier;
pub mod cli;
pub mod data;
mod error;
pub mod optim;
pub mod projection;
pub mod rng;
pub mod smoothing;
pub mod special;

pub use error::{Error, Result};

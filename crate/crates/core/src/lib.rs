//! Affine-coupling networks that approximate underdamped Langevin flow maps.
//!
//! The crate walks the closed-form Gaussian path of underdamped Langevin
//! dynamics, replaces each short time chunk by the time-2π map of a Hénon-like
//! polynomial system, discretizes that system with an alternating Euler scheme
//! whose steps are exactly affine coupling blocks, and measures how close the
//! resulting network is to the reference flow.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coupling;
pub mod error;
pub mod henon;
pub mod langevin;
pub mod metrics;
pub mod multipoly;
pub mod odeflow;
pub mod pipeline;

pub use coupling::{CouplingBlock, CouplingNetwork, Direction, NetworkConditioning};
pub use error::{Error, Result};
pub use henon::{HenonConfig, HenonSystem};
pub use langevin::{GaussianDensity, LangevinParams};
pub use metrics::SampleCloud;
pub use multipoly::{MultiIndex, Polynomial, TimeVaryingPolynomial, TrigFunction};
pub use odeflow::{FlowDistance, FlowProbe, PairField, VectorField};
pub use pipeline::{BuildConfig, BuildReport, W1Report};

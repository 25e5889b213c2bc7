//! Implicit-bias laboratory for gradient methods on ReLU-family classifiers.
//!
//! The crate covers the full loop of an implicit-bias experiment on linearly
//! separable data under the exponential loss:
//!
//! - [`data`]: separable dataset generators, the acute/obtuse (Combes) family,
//!   padding and leaky transforms, CSV persistence.
//! - [`model`]: loss and (sub)gradients for the single-neuron ReLU / leaky /
//!   linear model and for a one-hidden-layer ReLU network with fixed output
//!   weights.
//! - [`margin`]: certified max-margin directions through the dual problem on
//!   the probability simplex, plus region labelling of weight vectors.
//! - [`optim`]: deterministic GD and with-replacement SGD runners that record
//!   trajectories, running averages and variance sums.
//! - [`analysis`]: landscape and regime classification, rate fitting and
//!   multi-neuron partition diagnostics.
//!
//! All computations are deterministic: sums are accumulated left to right in
//! sample-index order, and SGD index streams are pure functions of the seed.

pub mod analysis;
pub mod data;
pub mod error;
pub mod io;
pub mod linalg;
pub mod margin;
pub mod model;
pub mod optim;

pub use data::{ConditionReport, Dataset, Label};
pub use error::{Error, Result};
pub use margin::{MarginResult, RegionLabel};
pub use model::{ModelKind, MultiNeuronNet};

//! Two-sample hypothesis testing with the projected Wasserstein distance.
//!
//! The toolkit estimates the maximal Wasserstein-1 distance between two
//! samples over all k-dimensional orthonormal projections by stochastic
//! ascent over a discriminator network and the projector jointly, then turns
//! the statistic into accept/reject decisions through finite-sample
//! thresholds or permutation calibration. An MMD baseline, synthetic
//! benchmark families, and exact small-scale transport oracles round out the
//! toolkit.
//!
//! Module map:
//! * [`core`] — sample sets, projectors, seeded randomness, CSV interchange;
//! * [`transport1d`] — exact 1-D W₁ and tiny exact transport oracles;
//! * [`potential`] — the discriminator network with hand-rolled gradients;
//! * [`pw`] — the projected Wasserstein estimator (dual objective,
//!   c-transform, stochastic training loop, grid oracle);
//! * [`bounds`] — finite-sample accept/reject thresholds;
//! * [`mmd`] — biased Gaussian-kernel MMD baseline;
//! * [`datasets`] — seeded synthetic benchmark generators;
//! * [`tester`] — verdicts, permutation calibration, ROC/AUC evaluation.

pub mod bounds;
pub mod core;
pub mod datasets;
pub mod error;
pub mod mmd;
pub mod potential;
pub mod pw;
pub mod tester;
pub mod transport1d;

pub use crate::core::{
    orthogonality_defect, orthonormalize, project, GroundMetric, Matrix, ProjectionMatrix,
    RngSeed, SampleSet,
};
pub use crate::error::{Error, Result};

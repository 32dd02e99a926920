//! Uncertainty estimation for language-model generations: estimators over
//! recorded generations, selective-generation benchmarking and confidence
//! calibration.
//!
//! Numeric routines are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, the precision records are stored in.

pub mod benchmark;
pub mod calibration;
pub mod density;
pub mod ensemble;
pub mod error;
pub mod info;
pub mod linalg;
pub mod meaning;
pub mod records;
pub mod registry;
pub mod scalar;
pub mod textmetrics;

pub use error::{Error, Result};
pub use records::{Dataset, EnsembleTrace, GenerationRecord, SampledOutput, TokenStep};
pub use scalar::Real;

pub type Matrix = linalg::Matrix<f64>;
pub type InfoConfig = info::InfoConfig<f64>;
pub type PairwiseScores = meaning::PairwiseScores<f64>;
pub type SimilarityMatrix = meaning::SimilarityMatrix<f64>;
pub type Eccentricity = meaning::Eccentricity<f64>;
pub type StepDistributionSet = ensemble::StepDistributionSet<f64>;
pub type TokenMeasures = ensemble::TokenMeasures<f64>;
pub type GaussianFit = density::GaussianFit<f64>;
pub type RdeFit = density::RdeFit<f64>;
pub type HuqConfig = density::HuqConfig<f64>;

pub type MatrixF32 = linalg::Matrix<f32>;
pub type GaussianFitF32 = density::GaussianFit<f32>;

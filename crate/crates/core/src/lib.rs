//! Boosted recurrent forecasting of next-day cryptocurrency prices from
//! trading, sentiment, blockchain and search-volume channels.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar for common use.

pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fluctuation;
pub mod learner;
pub mod market_data;
pub mod optim;
pub mod scalar;
pub mod seed;
pub mod sentiment;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Scalar;

pub type WeakLearnerF64 = learner::WeakLearner<f64>;
pub type WeakLearnerF32 = learner::WeakLearner<f32>;
pub type EnsembleModelF64 = ensemble::EnsembleModel<f64>;
pub type EnsembleModelF32 = ensemble::EnsembleModel<f32>;
pub type WindowSampleF64 = features::WindowSample<f64>;
pub type WindowSampleF32 = features::WindowSample<f32>;
pub type WindowF64 = features::Window<f64>;
pub type WindowF32 = features::Window<f32>;
pub type PriceDistributionF64 = fluctuation::PriceDistribution<f64>;
pub type MetricsReportF64 = evaluation::MetricsReport<f64>;

//! Estimation under the exponential-polynomial family of Bregman divergences.

pub mod asymptotics;
pub mod curves;
pub mod data;
pub mod divergence;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod quadrature;
pub mod regression;
pub mod tuning;

pub use divergence::Triplet;
pub use error::{EpdError, Result};
pub use estimation::{fit_mepde, fit_mle, FitResult, Sample};
pub use models::{ExponentialMean, Model, NormalLocationScale, ParamVector, RegressionObservation};
pub use regression::{fit_regression_mepde, RegressionFit, RegressionProblem};
pub use tuning::{tune_regression_wj, tune_wj, TuneConfig, TuneReport, TuneResult};

/// Matrix types appear in public signatures.
pub use nalgebra;

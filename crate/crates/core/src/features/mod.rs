//! Shallow discontinuity statistics, square feature matrices and
//! sum-of-sines fit coefficients.

mod matrix;
mod shallow;
mod sines;

pub use matrix::{build_matrix, frame_length_for, FeatureMatrix};
pub use shallow::{log_variance, shallow_stats, ShallowFeatures, VARIANCE_FLOOR};
pub use sines::{fit_sum_of_sines, fit_sum_of_sines_with, FitCoefficients, FitOptions, DEFAULT_TERMS};

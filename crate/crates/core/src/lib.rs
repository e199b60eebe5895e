//! Energy-efficient watermark design against optimal linear removal attacks.
//!
//! The host `x` and watermark `w` are zero-mean random vectors described only by
//! their covariances, with no stationarity assumption. The crate covers the
//! attacker's minimum-distortion linear attack, the watermark covariance that
//! keeps the most energy after the Wiener removal attack, the projection
//! geometry behind that result, and its stationary (Toeplitz / PSD) limit.
//!
//! - [`covariance`]: validated PSD matrices, Toeplitz and AR(1) builders, Gaussian sampling.
//! - [`wiener`]: matrix Wiener (LMMSE) filtering.
//! - [`attack`]: attack distortion, linear correlation, and the optimal attack.
//! - [`design`]: residual energy, the optimal covariance, and its verification.
//! - [`wss`]: Toeplitz eigenvalues versus power spectral densities.
//! - [`harness`]: config-driven experiments with CSV output.

// `!(x > 0.0)` is used so NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod covariance;
pub mod design;
pub mod error;
pub mod harness;
pub mod rng;
pub mod wiener;
pub mod wss;

pub use attack::{
    apply_attack, attack_distortion, attack_matrix, average_correlation, solve_attack,
    watermark_wiener, AttackSolution,
};
pub use covariance::{
    ar1_autocorr, average_power, empirical_covariance, make_covariance, modulate, sample_ensemble,
    sample_ensemble_stream, toeplitz_from_autocorr, CovarianceMatrix, SampleBatch,
};
pub use design::{
    brute_force_best_covariance, estimated_watermark_covariance, geometry_report,
    optimal_residual_energy, optimal_watermark_covariance, residual_energy, stationarity_residual,
    tangent_gradient_check, tangent_gradient_check_at, BruteForceResult, DesignSolution,
    GeometryReport,
};
pub use error::{Error, Result};
pub use harness::{run_experiment, ExperimentConfig, ExperimentRow, Strategy};
pub use wiener::{error_covariance, estimate, wiener_filter, FilterMatrix};
pub use wss::{ar1_psd, psd_condition_check, toeplitz_eigen_gap, SpectralModel};

//! Stationary (Toeplitz) limit: power spectral densities, the asymptotic match
//! between Toeplitz eigenvalues and PSD samples, and the power-spectrum form of
//! the proportional-covariance condition.

use std::f64::consts::PI;

use crate::covariance::{average_power, check_dims, CovarianceMatrix};
use crate::design::optimal_watermark_covariance;
use crate::error::{Error, Result};

/// Relative tolerance for equality along each diagonal of a Toeplitz matrix.
pub const TOEPLITZ_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumSource {
    Host,
    Watermark,
}

/// PSD samples on the grid `f_i = i/N`, optionally paired with the sorted
/// eigenvalues of the matching Toeplitz covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    pub frequencies: Vec<f64>,
    pub psd_values: Vec<f64>,
    pub eigenvalues: Option<Vec<f64>>,
    pub source: SpectrumSource,
}

impl SpectralModel {
    pub fn len(&self) -> usize {
        self.psd_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psd_values.is_empty()
    }

    /// Same model with every PSD sample multiplied by `c`.
    pub fn scaled(&self, c: f64, source: SpectrumSource) -> Self {
        Self {
            frequencies: self.frequencies.clone(),
            psd_values: self.psd_values.iter().map(|v| v * c).collect(),
            eigenvalues: self
                .eigenvalues
                .as_ref()
                .map(|e| e.iter().map(|v| v * c).collect()),
            source,
        }
    }

    /// Attach the sorted spectrum of `c`.
    pub fn with_eigenvalues(mut self, c: &CovarianceMatrix) -> Result<Self> {
        check_dims(self.len(), c.dim())?;
        self.eigenvalues = Some(c.eigenvalues());
        Ok(self)
    }

    pub fn mean_psd(&self) -> f64 {
        self.psd_values.iter().sum::<f64>() / self.len() as f64
    }
}

/// AR(1) spectrum `σ²(1−ρ²) / (1 − 2ρ·cos 2πf + ρ²)` on `f_i = i/N`.
pub fn ar1_psd(variance: f64, rho: f64, n: usize) -> Result<SpectralModel> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParam(format!(
            "AR(1) needs |rho| < 1, got {rho}"
        )));
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::InvalidParam(format!(
            "AR(1) variance must be positive, got {variance}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParam(
            "spectrum length must be positive".into(),
        ));
    }
    let frequencies: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let numerator = variance * (1.0 - rho * rho);
    let psd_values = frequencies
        .iter()
        .map(|f| numerator / (1.0 - 2.0 * rho * (2.0 * PI * f).cos() + rho * rho))
        .collect();
    Ok(SpectralModel {
        frequencies,
        psd_values,
        eigenvalues: None,
        source: SpectrumSource::Host,
    })
}

/// Fails with `NotToeplitz` unless every diagonal of `c` is constant.
pub fn check_toeplitz(c: &CovarianceMatrix) -> Result<()> {
    let n = c.dim();
    let scale = c.matrix().amax().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let lead = c.get(0, k);
        for i in 1..n - k {
            let deviation = (c.get(i, i + k) - lead)
                .abs()
                .max((c.get(i + k, i) - lead).abs());
            if deviation > TOEPLITZ_TOLERANCE * scale {
                return Err(Error::NotToeplitz {
                    diagonal: k as isize,
                    deviation: deviation / scale,
                });
            }
        }
    }
    Ok(())
}

/// `max_i |λ_(i) − Φ_(i)| / max Φ` with both sequences sorted ascending.
pub fn toeplitz_eigen_gap(c: &CovarianceMatrix, model: &SpectralModel) -> Result<f64> {
    check_dims(c.dim(), model.len())?;
    check_toeplitz(c)?;
    let eig = match &model.eigenvalues {
        Some(e) => e.clone(),
        None => c.eigenvalues(),
    };
    let mut psd = model.psd_values.clone();
    psd.sort_by(f64::total_cmp);
    let peak = psd[psd.len() - 1];
    let gap = eig
        .iter()
        .zip(&psd)
        .map(|(l, p)| (l - p).abs())
        .fold(0.0, f64::max);
    Ok(gap / peak)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdConditionReport {
    /// `max_i |λ_{w,i}/λ_{x,i} − σ_w²/σ_x²|` over sorted spectra.
    pub max_psd_ratio_error: f64,
    /// `σ_w²/σ_x² = p_w / r(0)`.
    pub sigma_ratio: f64,
}

/// Spectrum-wise check that the optimal watermark for a stationary host has a
/// PSD proportional to the host PSD.
pub fn psd_condition_check(c_x: &CovarianceMatrix, p_w: f64) -> Result<PsdConditionReport> {
    check_toeplitz(c_x)?;
    let opt = optimal_watermark_covariance(c_x, p_w)?;
    let host = c_x.eigenvalues();
    if !(host[0] > 0.0) {
        return Err(Error::SingularSum {
            min_eigenvalue: host[0],
            max_eigenvalue: host[host.len() - 1],
        });
    }
    let mark = opt.covariance.eigenvalues();
    let sigma_ratio = p_w / average_power(c_x);
    let max_psd_ratio_error = mark
        .iter()
        .zip(&host)
        .map(|(w, x)| (w / x - sigma_ratio).abs())
        .fold(0.0, f64::max);
    Ok(PsdConditionReport {
        max_psd_ratio_error,
        sigma_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{ar1_autocorr, make_covariance, toeplitz_from_autocorr};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn ar1_cov(var: f64, rho: f64, n: usize) -> CovarianceMatrix {
        toeplitz_from_autocorr(&ar1_autocorr(var, rho, n).unwrap()).unwrap()
    }

    #[test]
    fn white_spectrum_is_flat() {
        let m = ar1_psd(2.5, 0.0, 16).unwrap();
        assert!(m.psd_values.iter().all(|&v| v == 2.5));
        assert_eq!(m.frequencies[4], 0.25);
    }

    #[test]
    fn dc_value() {
        let m = ar1_psd(1.0, 0.5, 8).unwrap();
        assert_abs_diff_eq!(m.psd_values[0], 3.0, epsilon = 1e-15);
        assert!(ar1_psd(1.0, 1.0, 8).is_err());
        assert!(ar1_psd(1.0, 0.5, 0).is_err());
    }

    #[test]
    fn grid_mean_matches_variance() {
        // Riemann mean over f_i = i/N equals Σ_m r(mN) = σ²(1+ρ^N)/(1−ρ^N)
        for n in [64, 128, 512] {
            let m = ar1_psd(1.7, 0.5, n).unwrap();
            assert_abs_diff_eq!(m.mean_psd(), 1.7, epsilon = 1e-9);
        }
        let m = ar1_psd(1.0, 0.9, 64).unwrap();
        let aliased = (1.0 + 0.9f64.powi(64)) / (1.0 - 0.9f64.powi(64));
        assert_abs_diff_eq!(m.mean_psd(), aliased, epsilon = 1e-12);
    }

    #[test]
    fn white_gap_is_zero() {
        let c = CovarianceMatrix::identity(32).scaled(1.5).unwrap();
        let m = ar1_psd(1.5, 0.0, 32).unwrap();
        assert_eq!(toeplitz_eigen_gap(&c, &m).unwrap(), 0.0);
    }

    #[test]
    fn gap_shrinks_with_size() {
        let gap =
            |n| toeplitz_eigen_gap(&ar1_cov(1.0, 0.5, n), &ar1_psd(1.0, 0.5, n).unwrap()).unwrap();
        assert!(gap(512) < gap(32));
        let g: Vec<f64> = [64, 128, 256]
            .iter()
            .map(|&n| {
                toeplitz_eigen_gap(&ar1_cov(1.0, 0.9, n), &ar1_psd(1.0, 0.9, n).unwrap()).unwrap()
            })
            .collect();
        assert!(g[0] >= g[1] && g[1] >= g[2], "{g:?}");
    }

    #[test]
    fn non_toeplitz_is_rejected() {
        let c = make_covariance(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0])).unwrap();
        let m = ar1_psd(1.0, 0.0, 2).unwrap();
        assert!(matches!(
            toeplitz_eigen_gap(&c, &m),
            Err(Error::NotToeplitz { .. })
        ));
        assert!(matches!(
            psd_condition_check(&c, 0.1),
            Err(Error::NotToeplitz { .. })
        ));
        assert!(toeplitz_eigen_gap(&ar1_cov(1.0, 0.2, 3), &m).is_err());
    }

    #[test]
    fn psd_condition_cases() {
        for n in [2, 17, 64] {
            let r = psd_condition_check(&ar1_cov(1.0, 0.7, n), 0.1).unwrap();
            assert!(r.max_psd_ratio_error < 1e-12);
            assert_abs_diff_eq!(r.sigma_ratio, 0.1, epsilon = 1e-15);
        }
        let r = psd_condition_check(&ar1_cov(2.0, 0.3, 8), 0.5).unwrap();
        assert_abs_diff_eq!(r.sigma_ratio, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn watermark_spectrum_tracks_scaled_host_spectrum() {
        let n = 128;
        let cx = ar1_cov(1.0, 0.5, n);
        let host = ar1_psd(1.0, 0.5, n).unwrap();
        let opt = optimal_watermark_covariance(&cx, 0.1).unwrap();
        let mark = host.scaled(0.1, SpectrumSource::Watermark);
        let host_gap = toeplitz_eigen_gap(&cx, &host).unwrap();
        let mark_gap = toeplitz_eigen_gap(&opt.covariance, &mark).unwrap();
        assert_abs_diff_eq!(mark_gap, host_gap, epsilon = 1e-12);

        let with_eig = host.clone().with_eigenvalues(&cx).unwrap();
        assert_eq!(toeplitz_eigen_gap(&cx, &with_eig).unwrap(), host_gap);
    }

    #[test]
    fn toeplitz_power_is_lag_zero() {
        let c = ar1_cov(0.8, -0.4, 33);
        assert_abs_diff_eq!(average_power(&c), 0.8, epsilon = 1e-15);
    }
}

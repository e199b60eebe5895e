//! Matrix Wiener (LMMSE) estimation of a signal in independent additive noise.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::covariance::{
    check_dims, make_covariance, sorted_eigenvalues, symmetrize, CovarianceMatrix,
};
use crate::error::{Error, Result};

/// The sum `C_s + C_n` is treated as singular when its smallest eigenvalue is at
/// most `N · SINGULARITY_RATIO · λ_max`.
pub const SINGULARITY_RATIO: f64 = 1e-12;

/// General N×N linear map (Wiener filter, watermark estimator, or attack).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMatrix {
    entries: DMatrix<f64>,
}

impl FilterMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        check_dims(entries.nrows(), entries.ncols())?;
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("filter entries must be finite".into()));
        }
        Ok(Self { entries })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            entries: DMatrix::zeros(n, n),
        }
    }

    pub fn scaled_identity(n: usize, gain: f64) -> Self {
        Self {
            entries: DMatrix::identity(n, n) * gain,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub(crate) fn from_raw(entries: DMatrix<f64>) -> Self {
        Self { entries }
    }
}

/// Knobs for [`wiener_filter_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct WienerOptions {
    /// Replace the `SingularSum` error with an eigendecomposition pseudo-solve.
    pub allow_pseudo_solve: bool,
}

/// Cholesky factor of a covariance sum that passed the singularity check.
pub(crate) struct SumFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SumFactor {
    pub(crate) fn new(sum: &DMatrix<f64>) -> Result<Self> {
        check_singularity(sum)?;
        let chol = sum.clone().cholesky().ok_or_else(|| {
            let eig = sorted_eigenvalues(sum);
            Error::SingularSum {
                min_eigenvalue: eig[0],
                max_eigenvalue: eig[eig.len() - 1],
            }
        })?;
        Ok(Self { chol })
    }

    /// `(C_s + C_n)⁻¹ · b`.
    pub(crate) fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }
}

fn check_singularity(sum: &DMatrix<f64>) -> Result<()> {
    let n = sum.nrows();
    let eig = sorted_eigenvalues(sum);
    let (min, max) = (eig[0], eig[n - 1]);
    if !(max > 0.0) || min <= n as f64 * SINGULARITY_RATIO * max {
        return Err(Error::SingularSum {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok(())
}

/// LMMSE estimator `W = C_s (C_s + C_n)⁻¹`, computed by a linear solve.
pub fn wiener_filter(c_s: &CovarianceMatrix, c_n: &CovarianceMatrix) -> Result<FilterMatrix> {
    wiener_filter_with(c_s, c_n, WienerOptions::default())
}

pub fn wiener_filter_with(
    c_s: &CovarianceMatrix,
    c_n: &CovarianceMatrix,
    options: WienerOptions,
) -> Result<FilterMatrix> {
    let sum = c_s.sum(c_n)?;
    match SumFactor::new(sum.matrix()) {
        // W(C_s+C_n) = C_s  ⇔  (C_s+C_n) Wᵀ = C_s for symmetric operands
        Ok(factor) => Ok(FilterMatrix::from_raw(
            factor.solve(c_s.matrix()).transpose(),
        )),
        Err(Error::SingularSum { .. }) if options.allow_pseudo_solve => Ok(FilterMatrix::from_raw(
            pseudo_solve(sum.matrix(), c_s.matrix()),
        )),
        Err(e) => Err(e),
    }
}

/// `B · S⁺` with eigenvalues below the singularity threshold treated as zero.
fn pseudo_solve(sum: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sum.nrows();
    let eig = sum.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let cutoff = n as f64 * SINGULARITY_RATIO * max;
    let inv = eig
        .eigenvalues
        .map(|v| if v > cutoff { 1.0 / v } else { 0.0 });
    let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    b * pinv
}

/// Estimation error covariance `C_e = (I − W) C_s`.
pub fn error_covariance(w: &FilterMatrix, c_s: &CovarianceMatrix) -> Result<CovarianceMatrix> {
    let n = c_s.dim();
    check_dims(n, w.dim())?;
    let ce = (DMatrix::identity(n, n) - w.matrix()) * c_s.matrix();
    make_covariance(symmetrize(&ce))
}

/// Apply the filter to one observation.
pub fn estimate(w: &FilterMatrix, observation: &[f64]) -> Result<Vec<f64>> {
    check_dims(w.dim(), observation.len())?;
    let out = w.matrix() * DVector::from_column_slice(observation);
    Ok(out.iter().copied().collect())
}

/// Analytic per-sample MSE `(1/N)·tr(W C_y Wᵀ − W C_s − C_s Wᵀ + C_s)` of an
/// arbitrary linear estimator, with `C_y = C_s + C_n`.
pub fn estimation_mse(
    w: &FilterMatrix,
    c_s: &CovarianceMatrix,
    c_n: &CovarianceMatrix,
) -> Result<f64> {
    let n = c_s.dim();
    check_dims(n, w.dim())?;
    check_dims(n, c_n.dim())?;
    let wm = w.matrix();
    let cy = c_s.matrix() + c_n.matrix();
    let total =
        (wm * cy * wm.transpose()).trace() - 2.0 * (wm * c_s.matrix()).trace() + c_s.trace();
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{ar1_autocorr, sample_ensemble_stream, toeplitz_from_autocorr};
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;
    use nalgebra::Complex;
    use rand_distr::{Distribution, StandardNormal};

    fn random_pd(n: usize, seed: u64) -> CovarianceMatrix {
        let mut rng = substream(seed, 99);
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        make_covariance(&a * a.transpose() + DMatrix::identity(n, n) * 0.1).unwrap()
    }

    fn scalar(v: f64) -> CovarianceMatrix {
        CovarianceMatrix::diagonal(&[v]).unwrap()
    }

    #[test]
    fn equal_power_gives_half() {
        let w = wiener_filter(
            &CovarianceMatrix::identity(3),
            &CovarianceMatrix::identity(3),
        )
        .unwrap();
        assert!((w.matrix() - DMatrix::identity(3, 3) * 0.5).amax() < 1e-15);
    }

    #[test]
    fn scalar_case() {
        let w = wiener_filter(&scalar(4.0), &scalar(1.0)).unwrap();
        assert_abs_diff_eq!(w.matrix()[(0, 0)], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn residual_of_normal_equations() {
        let cs = random_pd(3, 1);
        let cn = random_pd(3, 2);
        let w = wiener_filter(&cs, &cn).unwrap();
        let resid = w.matrix() * (cs.matrix() + cn.matrix()) - cs.matrix();
        assert!(resid.norm() < 1e-10);
    }

    #[test]
    fn singular_sum_fails_loudly_unless_pseudo_solve() {
        let z = CovarianceMatrix::zeros(2);
        let cs = CovarianceMatrix::diagonal(&[1.0, 0.0]).unwrap();
        assert!(matches!(
            wiener_filter(&cs, &z),
            Err(Error::SingularSum { .. })
        ));
        let w = wiener_filter_with(
            &cs,
            &z,
            WienerOptions {
                allow_pseudo_solve: true,
            },
        )
        .unwrap();
        assert_abs_diff_eq!(w.matrix()[(0, 0)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w.matrix()[(1, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            wiener_filter(
                &CovarianceMatrix::identity(2),
                &CovarianceMatrix::identity(3)
            ),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(
            error_covariance(&FilterMatrix::identity(2), &CovarianceMatrix::identity(3)).is_err()
        );
        assert!(estimate(&FilterMatrix::identity(2), &[1.0]).is_err());
    }

    #[test]
    fn error_covariance_cases() {
        let w = wiener_filter(&scalar(4.0), &scalar(1.0)).unwrap();
        let ce = error_covariance(&w, &scalar(4.0)).unwrap();
        assert_abs_diff_eq!(ce.get(0, 0), 0.8, epsilon = 1e-14);

        let cs = random_pd(3, 5);
        let ce = error_covariance(&FilterMatrix::identity(3), &cs).unwrap();
        assert_eq!(ce.matrix(), &DMatrix::zeros(3, 3));

        let w = FilterMatrix::scaled_identity(2, 0.5);
        let ce = error_covariance(&w, &CovarianceMatrix::identity(2)).unwrap();
        assert_eq!(ce.matrix(), &(DMatrix::identity(2, 2) * 0.5));
    }

    #[test]
    fn estimate_cases() {
        assert_eq!(
            estimate(&FilterMatrix::identity(3), &[1.0, -2.0, 3.5]).unwrap(),
            vec![1.0, -2.0, 3.5]
        );
        assert_eq!(
            estimate(&FilterMatrix::scaled_identity(2, 0.5), &[2.0, 4.0]).unwrap(),
            vec![1.0, 2.0]
        );
    }

    #[test]
    fn monte_carlo_mse_matches_error_covariance() {
        let cs = CovarianceMatrix::identity(2);
        let cn = CovarianceMatrix::identity(2);
        let w = wiener_filter(&cs, &cn).unwrap();
        let analytic = error_covariance(&w, &cs).unwrap().trace() / 2.0;
        let s = sample_ensemble_stream(&cs, 100_000, 11, 0).unwrap();
        let noise = sample_ensemble_stream(&cn, 100_000, 11, 1).unwrap();
        let x = s.add(&noise).unwrap();
        let mut acc = 0.0;
        for (xi, si) in x.data().row_iter().zip(s.data().row_iter()) {
            let est = estimate(&w, &xi.iter().copied().collect::<Vec<_>>()).unwrap();
            acc += est
                .iter()
                .zip(si.iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / 2.0;
        }
        let mc = acc / 100_000.0;
        assert!(
            (mc - analytic).abs() / analytic < 0.02,
            "mc {mc} vs {analytic}"
        );
    }

    #[test]
    fn wiener_is_optimal_against_perturbations() {
        let mut rng = substream(77, 0);
        for inst in 0..5 {
            let cs = random_pd(4, 10 + inst);
            let cn = random_pd(4, 20 + inst);
            let w = wiener_filter(&cs, &cn).unwrap();
            let best = estimation_mse(&w, &cs, &cn).unwrap();
            let trace_ce = error_covariance(&w, &cs).unwrap().trace();
            assert_abs_diff_eq!(trace_ce, 4.0 * best, epsilon = 1e-10);
            for _ in 0..100 {
                let delta = DMatrix::<f64>::from_fn(4, 4, |_, _| StandardNormal.sample(&mut rng));
                let delta = &delta / delta.norm();
                let perturbed = FilterMatrix::new(w.matrix() + delta * 1e-2).unwrap();
                assert!(estimation_mse(&perturbed, &cs, &cn).unwrap() >= best);
            }
        }
    }

    #[test]
    fn eigenvalues_in_open_unit_interval() {
        for seed in 0..20 {
            let cs = random_pd(5, seed);
            let cn = random_pd(5, seed + 100);
            let w = wiener_filter(&cs, &cn).unwrap();
            let eig: Vec<Complex<f64>> = w.matrix().complex_eigenvalues().iter().copied().collect();
            for e in eig {
                assert!(e.im.abs() < 1e-9);
                assert!(e.re > 0.0 && e.re < 1.0, "{e}");
            }
        }
        let cs = toeplitz_from_autocorr(&ar1_autocorr(1.0, 0.9, 16).unwrap()).unwrap();
        let w = wiener_filter(&cs, &CovarianceMatrix::identity(16)).unwrap();
        assert!(w
            .matrix()
            .complex_eigenvalues()
            .iter()
            .all(|e| e.re > 0.0 && e.re < 1.0));
    }
}

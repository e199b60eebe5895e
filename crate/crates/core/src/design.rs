//! The watermark design problem.
//!
//! The designer picks `C_w` under the power budget `(1/N)·tr(C_w) = P̄_w` to
//! maximize the watermark energy left after the Wiener removal attack,
//! `E = (1/N)·[tr(C_w) − tr(C_w (C_x + C_w)⁻¹ C_w)]`. The maximizer is the host
//! covariance scaled to the budget, `C_w = (P̄_w / P̄_x)·C_x`.
//!
//! Besides the closed form this module carries the checks that back it up: the
//! residual of the first-order stationarity condition, a central-difference
//! directional derivative along the constraint surface, a randomized search over
//! PSD candidates, and the projection geometry in the space of random vectors
//! with inner product `⟨u, v⟩ = E(uᵀv)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::attack::watermark_wiener;
use crate::covariance::{
    average_power, check_dims, make_covariance, symmetrize, CovarianceMatrix, PSD_FLOOR,
};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::wiener::SumFactor;

/// Seed used by [`tangent_gradient_check`] for its random directions.
pub const TANGENT_CHECK_SEED: u64 = 0x5eed_7a46;

/// Optimal watermark covariance and the scalars that describe it.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSolution {
    pub covariance: CovarianceMatrix,
    /// Proportionality constant `P̄_w / P̄_x`.
    pub c: f64,
    pub p_w: f64,
    pub p_x: f64,
    /// Designer's multiplier on the retained branch, `−1/(1+c)²`.
    pub lagrange: f64,
    pub residual_energy: f64,
    /// `c/(1+c)`: the estimated watermark is `α·y` at the optimum.
    pub alpha: f64,
}

/// Covariance of the Wiener estimate `ŵ = H y`: `H C_x Hᵀ + H C_w Hᵀ`.
pub fn estimated_watermark_covariance(
    c_x: &CovarianceMatrix,
    c_w: &CovarianceMatrix,
) -> Result<CovarianceMatrix> {
    let h = watermark_wiener(c_x, c_w)?;
    let hm = h.matrix();
    let cov = hm * c_x.matrix() * hm.transpose() + hm * c_w.matrix() * hm.transpose();
    make_covariance(symmetrize(&cov))
}

pub(crate) fn residual_energy_raw(c_x: &DMatrix<f64>, c_w: &DMatrix<f64>) -> Result<f64> {
    let factor = SumFactor::new(&(c_x + c_w))?;
    let solved = factor.solve(c_w);
    let n = c_x.nrows() as f64;
    Ok((c_w.trace() - (c_w * solved).trace()) / n)
}

/// Average watermark power surviving the Wiener removal attack.
pub fn residual_energy(c_x: &CovarianceMatrix, c_w: &CovarianceMatrix) -> Result<f64> {
    check_dims(c_x.dim(), c_w.dim())?;
    residual_energy_raw(c_x.matrix(), c_w.matrix())
}

/// Energy at the optimum, `P̄_w·P̄_x / (P̄_x + P̄_w)`.
pub fn optimal_residual_energy(p_x: f64, p_w: f64) -> f64 {
    p_w * p_x / (p_x + p_w)
}

/// Best watermark covariance for power budget `p_w`.
pub fn optimal_watermark_covariance(c_x: &CovarianceMatrix, p_w: f64) -> Result<DesignSolution> {
    if !(p_w > 0.0) || !p_w.is_finite() {
        return Err(Error::InvalidParam(format!(
            "watermark power must be positive, got {p_w}"
        )));
    }
    let p_x = average_power(c_x);
    if !(p_x > 0.0) {
        return Err(Error::InvalidParam("host power must be positive".into()));
    }
    let c = p_w / p_x;
    let covariance = c_x.scaled(c)?;
    let residual_energy = residual_energy(c_x, &covariance)?;
    Ok(DesignSolution {
        covariance,
        c,
        p_w,
        p_x,
        lagrange: -1.0 / (1.0 + c).powi(2),
        residual_energy,
        alpha: c / (1.0 + c),
    })
}

/// Both roots `c` of the stationarity condition for a proportional design
/// `C_w = c·C_x`, given multiplier `λ < 0`: `((1 − √−λ)/√−λ, (1 + √−λ)/(−√−λ))`.
///
/// The second root is always negative, so it would put negative variances on
/// the diagonal and is never a valid covariance.
pub fn stationary_scales(lagrange: f64) -> Result<(f64, f64)> {
    if !(lagrange < 0.0) {
        return Err(Error::InvalidParam(format!(
            "stationary multiplier must be negative, got {lagrange}"
        )));
    }
    let s = (-lagrange).sqrt();
    Ok(((1.0 - s) / s, (1.0 + s) / -s))
}

/// Scale-free norm `‖R‖_F / N` of the first-order condition
/// `R = (1+λ)I + S⁻¹C_w²S⁻¹ − C_w S⁻¹ − S⁻¹C_w`, `S = C_x + C_w`.
pub fn stationarity_residual(
    c_x: &CovarianceMatrix,
    c_w: &CovarianceMatrix,
    lagrange: f64,
) -> Result<f64> {
    let n = c_x.dim();
    check_dims(n, c_w.dim())?;
    let factor = SumFactor::new(&(c_x.matrix() + c_w.matrix()))?;
    // S⁻¹C_w; its transpose is C_w S⁻¹ since both operands are symmetric
    let left = factor.solve(c_w.matrix());
    let right = left.transpose();
    let resid = DMatrix::identity(n, n) * (1.0 + lagrange) + &left * &right - right - left;
    Ok(resid.norm() / n as f64)
}

/// Random symmetric direction with zero trace and unit Frobenius norm.
fn trace_free_direction(n: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let mut d = symmetrize(&a);
    let shift = d.trace() / n as f64;
    for i in 0..n {
        d[(i, i)] -= shift;
    }
    let norm = d.norm();
    if norm > 0.0 {
        d / norm
    } else {
        d
    }
}

fn is_psd(m: &DMatrix<f64>) -> bool {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.amax();
    eig.iter().all(|&v| v >= -PSD_FLOOR * max)
}

/// Restrict `d` to the range of `c_w` so that `C_w ± step·Δ` stays PSD when
/// `C_w` is rank deficient. The result stays trace-free within the range.
fn project_into_range(c_w: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c_w.nrows();
    let eig = c_w.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let basis: Vec<_> = (0..n)
        .filter(|&j| eig.eigenvalues[j] > PSD_FLOOR * max)
        .map(|j| eig.eigenvectors.column(j).into_owned())
        .collect();
    if basis.is_empty() {
        return DMatrix::zeros(n, n);
    }
    let mut projector = DMatrix::<f64>::zeros(n, n);
    for v in &basis {
        projector += v * v.transpose();
    }
    let mut out = &projector * d * &projector;
    let shift = out.trace() / basis.len() as f64;
    out -= &projector * shift;
    let norm = out.norm();
    if norm > 0.0 {
        out / norm
    } else {
        out
    }
}

/// Largest central-difference directional derivative of the residual energy at
/// the optimal covariance, over random trace-free symmetric directions.
///
/// Zero up to truncation error when the closed form is stationary on the
/// power-constraint surface.
pub fn tangent_gradient_check(
    c_x: &CovarianceMatrix,
    p_w: f64,
    n_directions: usize,
    step: f64,
) -> Result<f64> {
    let opt = optimal_watermark_covariance(c_x, p_w)?;
    tangent_gradient_check_at(c_x, &opt.covariance, n_directions, step, TANGENT_CHECK_SEED)
}

/// [`tangent_gradient_check`] evaluated at an arbitrary watermark covariance.
pub fn tangent_gradient_check_at(
    c_x: &CovarianceMatrix,
    c_w: &CovarianceMatrix,
    n_directions: usize,
    step: f64,
    seed: u64,
) -> Result<f64> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidParam(format!(
            "step must be positive, got {step}"
        )));
    }
    if n_directions == 0 {
        return Err(Error::InvalidParam("need at least one direction".into()));
    }
    check_dims(c_x.dim(), c_w.dim())?;
    let n = c_x.dim();
    let cx = c_x.matrix();
    let cw = c_w.matrix();
    let mut rng = substream(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..n_directions {
        let mut d = trace_free_direction(n, &mut rng);
        if !is_psd(&(cw + &d * step)) || !is_psd(&(cw - &d * step)) {
            d = project_into_range(cw, &d);
        }
        let plus = residual_energy_raw(cx, &(cw + &d * step))?;
        let minus = residual_energy_raw(cx, &(cw - &d * step))?;
        worst = worst.max(((plus - minus) / (2.0 * step)).abs());
    }
    Ok(worst)
}

/// Outcome of [`brute_force_best_covariance`].
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub covariance: CovarianceMatrix,
    pub residual_energy: f64,
    /// Index of the winning trial; ties go to the lowest index.
    pub trial: usize,
}

/// PSD candidate for trial `index`, before trace normalization.
///
/// The mix cycles through full-rank Wishart draws, rank-deficient Wishart draws,
/// diagonal matrices, and host-aligned matrices with a symmetric perturbation
/// clipped back onto the PSD cone.
fn brute_force_candidate(
    c_x: &DMatrix<f64>,
    p_x: f64,
    rng: &mut ChaCha20Rng,
    index: usize,
) -> DMatrix<f64> {
    let n = c_x.nrows();
    match index % 5 {
        0 | 1 => {
            let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
            &a * a.transpose()
        }
        2 => {
            let width = rng.random_range(1..=n.max(2) - 1).min(n);
            let a = DMatrix::<f64>::from_fn(n, width, |_, _| StandardNormal.sample(rng));
            &a * a.transpose()
        }
        3 => DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                let z: f64 = StandardNormal.sample(rng);
                z * z
            } else {
                0.0
            }
        }),
        _ => {
            let size: f64 = rng.random_range(-0.5..0.5);
            let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
            let perturbed = c_x / p_x + symmetrize(&a) * size;
            let eig = perturbed.symmetric_eigen();
            let clipped = eig.eigenvalues.map(|v| v.max(0.0));
            &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
        }
    }
}

/// Normalized candidate and its energy, or `None` when it cannot be evaluated.
fn evaluate_trial(
    c_x: &DMatrix<f64>,
    p_x: f64,
    p_w: f64,
    seed: u64,
    index: usize,
) -> Option<(DMatrix<f64>, f64)> {
    let n = c_x.nrows();
    let mut rng = substream(seed, index as u64);
    let raw = symmetrize(&brute_force_candidate(c_x, p_x, &mut rng, index));
    let tr = raw.trace();
    if !(tr > 0.0) {
        return None;
    }
    let cw = raw * (n as f64 * p_w / tr);
    let e = residual_energy_raw(c_x, &cw).ok()?;
    e.is_finite().then_some((cw, e))
}

/// Randomized search for the energy-maximizing covariance under the power budget.
///
/// Trials run in parallel on independent substreams of `seed`; the result does
/// not depend on thread scheduling.
pub fn brute_force_best_covariance(
    c_x: &CovarianceMatrix,
    p_w: f64,
    trials: usize,
    seed: u64,
) -> Result<BruteForceResult> {
    if trials == 0 {
        return Err(Error::InvalidParam("need at least one trial".into()));
    }
    if !(p_w > 0.0) || !p_w.is_finite() {
        return Err(Error::InvalidParam(format!(
            "watermark power must be positive, got {p_w}"
        )));
    }
    let p_x = average_power(c_x);
    let cx = c_x.matrix();
    let best = (0..trials)
        .into_par_iter()
        .filter_map(|i| evaluate_trial(cx, p_x, p_w, seed, i).map(|(_, e)| (e, i)))
        .reduce_with(|a, b| {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        });
    let (_, trial) = best
        .ok_or_else(|| Error::InvalidParam("no brute-force candidate could be evaluated".into()))?;
    let (cw, energy) =
        evaluate_trial(cx, p_x, p_w, seed, trial).expect("winning trial re-evaluates");
    Ok(BruteForceResult {
        covariance: make_covariance(cw)?,
        residual_energy: energy,
        trial,
    })
}

/// Squared norms of the projection picture, `‖z‖² = E(zᵀz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryReport {
    /// `‖w‖² = tr(C_w)`.
    pub norm_w_sq: f64,
    /// Projection of `w` onto the single vector `y`: `tr(C_w)² / tr(C_x + C_w)`.
    pub norm_u_sq: f64,
    /// Projection of `w` onto all linear maps of `y`: `tr(C_ŵ)`.
    pub norm_what_sq: f64,
    /// `‖w − ŵ‖²` from the covariance of `(I − H)w − Hx`.
    pub norm_residual_sq: f64,
    /// `|‖w‖² − ‖ŵ‖² − ‖w − ŵ‖²|`.
    pub pythagoras_gap: f64,
    /// `‖H − (tr H / N)·I‖_F / N`; zero exactly when `ŵ = α·y`.
    pub alignment_residual: f64,
}

pub fn geometry_report(c_x: &CovarianceMatrix, c_w: &CovarianceMatrix) -> Result<GeometryReport> {
    let n = c_x.dim();
    check_dims(n, c_w.dim())?;
    let total = c_x.trace() + c_w.trace();
    if !(total > 0.0) {
        return Err(Error::InvalidParam("tr(C_x + C_w) must be positive".into()));
    }
    let h = watermark_wiener(c_x, c_w)?;
    let hm = h.matrix();
    let c_what = estimated_watermark_covariance(c_x, c_w)?;

    let norm_w_sq = c_w.trace();
    let norm_u_sq = norm_w_sq * norm_w_sq / total;
    let norm_what_sq = c_what.trace();

    let keep = DMatrix::identity(n, n) - hm;
    let norm_residual_sq = (&keep * c_w.matrix() * keep.transpose()).trace()
        + (hm * c_x.matrix() * hm.transpose()).trace();

    let mut off = hm.clone();
    let mean_gain = hm.trace() / n as f64;
    for i in 0..n {
        off[(i, i)] -= mean_gain;
    }

    Ok(GeometryReport {
        norm_w_sq,
        norm_u_sq,
        norm_what_sq,
        norm_residual_sq,
        pythagoras_gap: (norm_w_sq - norm_what_sq - norm_residual_sq).abs(),
        alignment_residual: off.norm() / n as f64,
    })
}

//! The attacker's problem: minimum-distortion linear attack subject to a target
//! average linear correlation.
//!
//! Distortion and correlation are quadratic and linear in the attack matrix `G`,
//! so the optimum is `G = I − γ·H` with `H` the Wiener filter that estimates the
//! watermark from the watermarked signal. The additive attack noise is zero at
//! the optimum: it raises distortion without changing the correlation.

use nalgebra::DMatrix;

use crate::covariance::{check_dims, CovarianceMatrix, SampleBatch};
use crate::error::{Error, Result};
use crate::wiener::{wiener_filter, FilterMatrix};

/// `tr(H C_w)` below this fraction of `tr(C_x) + tr(C_w)` leaves no leverage.
pub const DEGENERATE_WATERMARK_TOLERANCE: f64 = 1e-12;

/// Optimal linear attack for a given correlation target.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSolution {
    pub attack: FilterMatrix,
    /// Watermark estimator `H = C_w (C_x + C_w)⁻¹`.
    pub estimator: FilterMatrix,
    /// Removal strength; `γ = 1` is the Wiener removal attack.
    pub gamma: f64,
    /// Attacker's Lagrange multiplier, `2(γ − 1)`.
    pub lagrange: f64,
    pub r_target: f64,
    pub distortion: f64,
    pub correlation_achieved: f64,
}

/// Watermark estimator `H = C_w (C_x + C_w)⁻¹`.
pub fn watermark_wiener(c_x: &CovarianceMatrix, c_w: &CovarianceMatrix) -> Result<FilterMatrix> {
    wiener_filter(c_w, c_x)
}

/// `G = I − γ·H`.
pub fn attack_matrix(h: &FilterMatrix, gamma: f64) -> FilterMatrix {
    let n = h.dim();
    FilterMatrix::from_raw(DMatrix::identity(n, n) - h.matrix() * gamma)
}

/// Per-sample distortion `(1/N)·E‖ŷ − x‖²` of `ŷ = G(x + w) + v`.
pub fn attack_distortion(
    g: &FilterMatrix,
    c_x: &CovarianceMatrix,
    c_w: &CovarianceMatrix,
    c_v: &CovarianceMatrix,
) -> Result<f64> {
    let n = c_x.dim();
    check_dims(n, g.dim())?;
    check_dims(n, c_w.dim())?;
    check_dims(n, c_v.dim())?;
    let gm = g.matrix();
    let cx = c_x.matrix();
    let total = (gm * cx * gm.transpose()).trace() + (gm * c_w.matrix() * gm.transpose()).trace()
        - (gm * cx).trace()
        - (gm.transpose() * cx).trace()
        + c_v.trace()
        + c_x.trace();
    Ok(total / n as f64)
}

/// Watermark-averaged linear correlation `r = (1/N)·tr(G C_w)`.
pub fn average_correlation(g: &FilterMatrix, c_w: &CovarianceMatrix) -> Result<f64> {
    let n = c_w.dim();
    check_dims(n, g.dim())?;
    Ok((g.matrix() * c_w.matrix()).trace() / n as f64)
}

/// Closed-form solution of the attacker's problem for correlation target `r_target`.
///
/// The constraint `(1/N)·tr((I − γH) C_w) = r_target` is linear in `γ`, giving
/// `γ = (tr(C_w) − N·r_target) / tr(H C_w)`. No range is imposed on `r_target`:
/// `γ > 2` or `γ < 0` are valid (inverting / amplifying) attacks.
pub fn solve_attack(
    c_x: &CovarianceMatrix,
    c_w: &CovarianceMatrix,
    r_target: f64,
) -> Result<AttackSolution> {
    check_dims(c_x.dim(), c_w.dim())?;
    if !r_target.is_finite() {
        return Err(Error::InvalidParam(format!(
            "r0 must be finite, got {r_target}"
        )));
    }
    let n = c_x.dim();
    let h = watermark_wiener(c_x, c_w)?;
    let leverage = (h.matrix() * c_w.matrix()).trace();
    if leverage <= DEGENERATE_WATERMARK_TOLERANCE * (c_x.trace() + c_w.trace()) {
        return Err(Error::DegenerateWatermark(leverage));
    }
    let gamma = (c_w.trace() - n as f64 * r_target) / leverage;
    let g = attack_matrix(&h, gamma);
    let distortion = attack_distortion(&g, c_x, c_w, &CovarianceMatrix::zeros(n))?;
    let correlation_achieved = average_correlation(&g, c_w)?;
    Ok(AttackSolution {
        attack: g,
        estimator: h,
        gamma,
        lagrange: 2.0 * (gamma - 1.0),
        r_target,
        distortion,
        correlation_achieved,
    })
}

/// Map every row of `y` through `G` (noise-free attack).
pub fn apply_attack(g: &FilterMatrix, y: &SampleBatch) -> Result<SampleBatch> {
    check_dims(g.dim(), y.dim())?;
    Ok(SampleBatch::new(
        y.data() * g.matrix().transpose(),
        y.seed(),
        y.stream(),
    ))
}

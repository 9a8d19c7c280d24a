//! Girsanov reweighting and the stochastic gradients of the per-level
//! variance objectives.
//!
//! Tilting the drift by `sum_j theta_j sigma_j` and multiplying the payoff by
//! `exp(-theta . W_T - |theta|^2 T / 2)` leaves the expectation unchanged.
//! The second moment of the reweighted level difference, as a function of
//! `theta`, is what the stochastic approximation minimizes; its gradient has
//! the closed-form integrands below, evaluated on untilted paths.

use crate::error::{Error, Result};

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// `exp(-theta . w_T - |theta|^2 T / 2)`, the density correction attached to
/// a payoff evaluated on a theta-tilted path.
///
/// Computed in log space and exponentiated once. Zero tilt gives exactly 1.
pub fn girsanov_weight(theta: &[f64], w_endpoint: &[f64], horizon: f64) -> f64 {
    debug_assert_eq!(theta.len(), w_endpoint.len());
    if theta.iter().all(|&t| t == 0.0) {
        return 1.0;
    }
    (-dot(theta, w_endpoint) - 0.5 * norm_sq(theta) * horizon).exp()
}

/// A payoff sample together with its reweighting.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    pub theta: Vec<f64>,
    pub w_endpoint: Vec<f64>,
    pub psi_value: f64,
    pub weight: f64,
    pub product: f64,
}

impl WeightedSample {
    pub fn new(theta: &[f64], w_endpoint: &[f64], psi_value: f64, horizon: f64) -> Self {
        let weight = girsanov_weight(theta, w_endpoint, horizon);
        Self {
            theta: theta.to_vec(),
            w_endpoint: w_endpoint.to_vec(),
            psi_value,
            weight,
            product: psi_value * weight,
        }
    }
}

/// The scaling `sqrt(m^level / ((m - 1) T))` that renormalizes the level
/// difference to a nondegenerate limit.
#[derive(Debug, Clone, Copy)]
pub struct LevelScale {
    pub refinement: usize,
    pub level: u32,
    pub horizon: f64,
    pub value: f64,
}

/// Scaling factor for level `ell >= 1` at refinement `m >= 2`.
pub fn level_scale(m: usize, ell: u32, horizon: f64) -> Result<LevelScale> {
    if m < 2 {
        return Err(Error::invalid("refinement factor must be at least 2"));
    }
    if ell < 1 {
        return Err(Error::invalid("level must be at least 1"));
    }
    if !(horizon > 0.0) {
        return Err(Error::invalid("horizon must be positive"));
    }
    let value = ((m as f64).powi(ell as i32) / ((m as f64 - 1.0) * horizon)).sqrt();
    Ok(LevelScale {
        refinement: m,
        level: ell,
        horizon,
        value,
    })
}

#[inline]
fn exp_tilt_factor(theta: &[f64], w_endpoint: &[f64], horizon: f64) -> f64 {
    // The gradient integrands carry the reciprocal-weight exponent
    // exp(-theta . w + |theta|^2 T / 2).
    (-dot(theta, w_endpoint) + 0.5 * norm_sq(theta) * horizon).exp()
}

fn grad_common(
    theta: &[f64],
    w_endpoint: &[f64],
    horizon: f64,
    square: f64,
) -> Result<Vec<f64>> {
    let factor = square * exp_tilt_factor(theta, w_endpoint, horizon);
    let grad: Vec<f64> = theta
        .iter()
        .zip(w_endpoint)
        .map(|(&t, &w)| (t * horizon - w) * factor)
        .collect();
    if grad.iter().all(|g| g.is_finite()) {
        Ok(grad)
    } else {
        Err(Error::NumericalOverflow {
            step: 0,
            context: "variance gradient sample overflowed",
        })
    }
}

/// One-sample gradient of the level-`ell` variance objective
/// (`ell >= 1`): `(theta T - w) (scale (psi_fine - psi_coarse))^2
/// exp(-theta . w + |theta|^2 T / 2)`, evaluated on untilted paths.
pub fn grad_level_variance(
    theta: &[f64],
    psi_fine: f64,
    psi_coarse: f64,
    w_endpoint: &[f64],
    scale: &LevelScale,
) -> Result<Vec<f64>> {
    let diff = scale.value * (psi_fine - psi_coarse);
    grad_common(theta, w_endpoint, scale.horizon, diff * diff)
}

/// One-sample gradient of the level-0 variance objective:
/// `(theta T - w) psi^2 exp(-theta . w + |theta|^2 T / 2)`.
pub fn grad_level0_variance(
    theta: &[f64],
    psi_value: f64,
    w_endpoint: &[f64],
    horizon: f64,
) -> Result<Vec<f64>> {
    grad_common(theta, w_endpoint, horizon, psi_value * psi_value)
}

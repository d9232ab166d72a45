//! Representer weights of the posterior mean.
//!
//! The EP posterior mean is `K alpha`, and each weight is the log-derivative
//! of that point's cavity predictive probability,
//! `alpha_n = y_n phi(z_n) / (Phi(z_n) sqrt(1 + v_n))` with
//! `z_n = y_n m_n / sqrt(1 + v_n)` taken from the cavity. The same formula
//! with the full predictive moments gives the weight a new point would get
//! if it were added, without rerunning EP. Simultaneous inclusions interact,
//! so predicted weights only hold one point at a time.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::ep::EpState;
use crate::error::{Error, Result};
use crate::probit::inverse_mills;

/// Smallest `z` for which [`asymptotic_weight`] is a supported approximation.
pub const ASYMPTOTIC_REGIME: f64 = 4.0;

/// Agreement required between the two weight computations.
pub const PATH_AGREEMENT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    /// Weights from the cavity formula.
    pub alpha: DVector<f64>,
    /// `z_n` of each point.
    pub z: DVector<f64>,
}

/// Unsigned weight `phi(z) / (Phi(z) sqrt(1 + v))`.
pub fn exact_weight(z: f64, v: f64) -> f64 {
    inverse_mills(z) / (1.0 + v).sqrt()
}

/// Large-`z` form `exp(-z^2 / 2) / sqrt(2 pi (1 + v))`; the caller applies
/// the label sign. Only meaningful for `z >= ASYMPTOTIC_REGIME`.
pub fn asymptotic_weight(z: f64, v: f64) -> f64 {
    debug_assert!(z >= ASYMPTOTIC_REGIME, "asymptotic weight used at z = {z}");
    (-0.5 * z * z).exp() / (2.0 * PI * (1.0 + v)).sqrt()
}

/// Representer weights of a converged EP state, computed from the cavity
/// marginals and checked against `(K + C~)^{-1} m~`.
pub fn weights(state: &EpState) -> Result<WeightVector> {
    if !state.converged() {
        return Err(Error::NotConverged);
    }
    let n = state.len();
    let y = state.labels();
    let mut alpha = DVector::zeros(n);
    let mut z = DVector::zeros(n);
    for i in 0..n {
        let cav = state.cavity_parameters(i)?;
        z[i] = y[i] * cav.mean / (1.0 + cav.var).sqrt();
        alpha[i] = y[i] * exact_weight(z[i], cav.var);
    }
    let direct = state.alpha();
    let scale = direct.amax().max(f64::MIN_POSITIVE);
    let gap = (&alpha - direct).amax() / scale;
    if gap > PATH_AGREEMENT {
        return Err(Error::Numerical {
            site: (&alpha - direct).iamax(),
            message: format!("cavity and direct representer weights differ by {gap:e}"),
        });
    }
    Ok(WeightVector { alpha, z })
}

/// Weight a query point would receive if added with label `y_star`.
pub fn predicted_weight(
    state: &EpState,
    k_star: &DVector<f64>,
    k_ss: f64,
    y_star: f64,
) -> Result<f64> {
    let p = state.predict(k_star, k_ss, y_star)?;
    let z = y_star * p.mean / (1.0 + p.var).sqrt();
    Ok(y_star * exact_weight(z, p.var))
}

/// Relative residual `|K alpha - m| / |m|` of the representer identity.
pub fn representer_residual(k: &DMatrix<f64>, alpha: &DVector<f64>, mean: &DVector<f64>) -> f64 {
    (k * alpha - mean).norm() / mean.norm().max(f64::MIN_POSITIVE)
}

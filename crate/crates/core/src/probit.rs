//! Standard normal density, cumulative distribution and the ratios EP needs.
//!
//! The lower tail is the difficult part: site updates routinely evaluate
//! `phi(z) / Phi(z)` at z well below -8. Below [`TAIL_SWITCH`] the Mills ratio
//! is evaluated with its continued fraction (the convergent form of the
//! asymptotic series), which never forms the vanishing `Phi(z)` explicitly.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Below this point the continued-fraction tail is used.
pub const TAIL_SWITCH: f64 = -6.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Continued fraction depth; for x >= 6 this is converged to machine precision.
const CF_TERMS: usize = 60;

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn normal_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// `Phi(z)` via the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `Phi(-x) / phi(x)` for `x > 0`, by Lentz-free backward evaluation of
/// `1 / (x + 1 / (x + 2 / (x + 3 / (x + ...))))`.
fn mills_ratio_upper(x: f64) -> f64 {
    let mut tail = x;
    for k in (1..=CF_TERMS).rev() {
        tail = x + k as f64 / tail;
    }
    1.0 / tail
}

/// `log Phi(z)`, accurate in both tails.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z > 0.0 {
        (-normal_cdf(-z)).ln_1p()
    } else if z >= TAIL_SWITCH {
        normal_cdf(z).ln()
    } else {
        normal_log_pdf(z) + mills_ratio_upper(-z).ln()
    }
}

/// Inverse Mills ratio `phi(z) / Phi(z)`.
pub fn inverse_mills(z: f64) -> f64 {
    if z >= TAIL_SWITCH {
        normal_pdf(z) / normal_cdf(z)
    } else {
        1.0 / mills_ratio_upper(-z)
    }
}

/// Probit predictive probability `Phi(y m / sqrt(1 + v))`.
pub fn probit_predictive(y: f64, mean: f64, var: f64) -> f64 {
    normal_cdf(y * mean / (1.0 + var).sqrt())
}

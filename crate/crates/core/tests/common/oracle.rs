//! Independent reference computations for probit GP classification.
//!
//! The probit marginal likelihood `int N(f | m, K) prod Phi(y_n f_n) df` is
//! the probability that `y_n (f_n + e_n) > 0` for all n with `e ~ N(0, I)`,
//! i.e. a Gaussian orthant probability. It is evaluated with Genz's
//! sequential-conditioning transform and a tensor-product Gauss-Legendre
//! rule on the unit cube. Nothing here touches the library's EP code or its
//! normal-distribution helpers.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_unit(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(0.5 * (1.0 - x));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// Gauss-Legendre composed with the periodizing map `u = s - sin(2 pi s) / (2 pi)`,
/// which flattens the logarithmic endpoint behaviour of the Genz integrand.
pub fn smoothed_rule(m: usize) -> (Vec<f64>, Vec<f64>) {
    let tau = std::f64::consts::TAU;
    let (s, w) = gauss_legendre_unit(m);
    s.iter()
        .zip(&w)
        .map(|(&s, &w)| (s - (tau * s).sin() / tau, w * (1.0 - (tau * s).cos())))
        .unzip()
}

/// `P(w > 0)` for `w ~ N(mean, cov)`.
pub fn orthant_probability(mean: &DVector<f64>, cov: &DMatrix<f64>, m: usize) -> f64 {
    let n = mean.len();
    let c = cov
        .clone()
        .cholesky()
        .expect("oracle covariance must be PD")
        .l();
    let (nodes, weights) = smoothed_rule(m);
    let normal = std_normal();
    let mut t = vec![0.0; n];
    recurse(0, &c, mean, &nodes, &weights, &normal, &mut t, 1.0)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    i: usize,
    c: &DMatrix<f64>,
    mean: &DVector<f64>,
    nodes: &[f64],
    weights: &[f64],
    normal: &Normal,
    t: &mut Vec<f64>,
    acc: f64,
) -> f64 {
    let n = mean.len();
    // w_i = mean_i + sum_{j<=i} c_ij t_j > 0  <=>  t_i > a_i
    let partial: f64 = (0..i).map(|j| c[(i, j)] * t[j]).sum();
    let a = -(mean[i] + partial) / c[(i, i)];
    let upper = normal.cdf(-a); // P(t_i > a)
    let acc = acc * upper;
    if i + 1 == n || acc == 0.0 {
        return acc;
    }
    let mut total = 0.0;
    for (u, w) in nodes.iter().zip(weights) {
        // t_i = -Phi^{-1}(u * Phi(-a)) samples t_i > a
        t[i] = -normal.inverse_cdf(u * upper);
        total += w * recurse(i + 1, c, mean, nodes, weights, normal, t, acc);
    }
    total
}

/// `log int N(f | prior_mean, k) prod Phi(y_n f_n) df`.
pub fn log_marginal(k: &DMatrix<f64>, y: &[f64], prior_mean: &DVector<f64>, m: usize) -> f64 {
    let n = y.len();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        y[i] * y[j] * (k[(i, j)] + if i == j { 1.0 } else { 0.0 })
    });
    let mean = DVector::from_fn(n, |i, _| y[i] * prior_mean[i]);
    orthant_probability(&mean, &cov, m).ln()
}

/// Predictive probability of `y_star` at a query with cross-covariances
/// `k_star` and prior variance `k_ss`, as a ratio of two orthant integrals.
pub fn predictive_probability(
    k: &DMatrix<f64>,
    y: &[f64],
    k_star: &DVector<f64>,
    k_ss: f64,
    y_star: f64,
    m: usize,
) -> f64 {
    let n = y.len();
    let joint = DMatrix::from_fn(n + 1, n + 1, |i, j| match (i == n, j == n) {
        (false, false) => k[(i, j)],
        (true, false) => k_star[j],
        (false, true) => k_star[i],
        (true, true) => k_ss,
    });
    let mut y_joint = y.to_vec();
    y_joint.push(y_star);
    let zero = DVector::zeros(n + 1);
    let num = log_marginal(&joint, &y_joint, &zero, m);
    let den = log_marginal(k, y, &DVector::zeros(n), m);
    (num - den).exp()
}

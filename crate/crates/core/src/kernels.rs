//! Covariance functions, Gram matrices and their log-hyperparameter gradients.
//!
//! Hyperparameters live in the log domain. Feature matrices hold one point
//! per row.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Exponent of the polynomial covariance.
pub const POLY_DEGREE: i32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// `t1 exp(-|xi - xj|^2 / (2 t2)) + t3 delta_ij`
    SeJitter,
    /// [`KernelFamily::SeJitter`] plus `t4 xi . xj`
    SeJitterLinear,
    /// `t1 (xi . xj + 1)^9`
    Poly9,
}

impl KernelFamily {
    pub fn arity(self) -> usize {
        match self {
            KernelFamily::SeJitter => 3,
            KernelFamily::SeJitterLinear => 4,
            KernelFamily::Poly9 => 1,
        }
    }

    fn has_jitter(self) -> bool {
        !matches!(self, KernelFamily::Poly9)
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFamily::SeJitter => "se",
            KernelFamily::SeJitterLinear => "se-linear",
            KernelFamily::Poly9 => "poly9",
        })
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "se" => Ok(KernelFamily::SeJitter),
            "se-linear" => Ok(KernelFamily::SeJitterLinear),
            "poly9" => Ok(KernelFamily::Poly9),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel family `{other}`"
            ))),
        }
    }
}

/// A covariance family together with its log-hyperparameters.
///
/// Index 2 of an SE family is the jitter; it can be switched off entirely, in
/// which case its value is exactly zero and it is excluded from optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    log_theta: Vec<f64>,
    jitter_disabled: bool,
}

const JITTER: usize = 2;

impl KernelSpec {
    pub fn new(family: KernelFamily, log_theta: Vec<f64>) -> Result<Self> {
        if log_theta.len() != family.arity() {
            return Err(Error::InvalidArgument(format!(
                "{family} expects {} log-hyperparameters, got {}",
                family.arity(),
                log_theta.len()
            )));
        }
        if let Some(bad) = log_theta.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("log hyperparameter {bad}")));
        }
        Ok(KernelSpec {
            family,
            log_theta,
            jitter_disabled: false,
        })
    }

    /// Builds a spec from hyperparameters in their natural scale. A jitter of
    /// exactly zero disables the jitter term.
    pub fn from_theta(family: KernelFamily, theta: &[f64]) -> Result<Self> {
        if theta.len() != family.arity() {
            return Err(Error::InvalidArgument(format!(
                "{family} expects {} hyperparameters, got {}",
                family.arity(),
                theta.len()
            )));
        }
        let disable = family.has_jitter() && theta[JITTER] == 0.0;
        let mut log_theta = Vec::with_capacity(theta.len());
        for (k, &t) in theta.iter().enumerate() {
            if disable && k == JITTER {
                log_theta.push(0.0);
            } else if t > 0.0 && t.is_finite() {
                log_theta.push(t.ln());
            } else {
                return Err(Error::InvalidArgument(format!(
                    "hyperparameter {k} must be positive and finite, got {t}"
                )));
            }
        }
        let mut spec = KernelSpec::new(family, log_theta)?;
        spec.jitter_disabled = disable;
        Ok(spec)
    }

    pub fn se_jitter(signal: f64, sq_length: f64, jitter: f64) -> Result<Self> {
        KernelSpec::from_theta(KernelFamily::SeJitter, &[signal, sq_length, jitter])
    }

    pub fn with_jitter_disabled(mut self, disabled: bool) -> Result<Self> {
        if disabled && !self.family.has_jitter() {
            return Err(Error::InvalidArgument(format!(
                "{} has no jitter term",
                self.family
            )));
        }
        self.jitter_disabled = disabled;
        Ok(self)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn log_theta(&self) -> &[f64] {
        &self.log_theta
    }

    pub fn jitter_disabled(&self) -> bool {
        self.jitter_disabled
    }

    pub fn theta(&self, k: usize) -> f64 {
        if self.jitter_disabled && k == JITTER {
            0.0
        } else {
            self.log_theta[k].exp()
        }
    }

    /// Indices of log-hyperparameters that an optimizer may move.
    pub fn free_params(&self) -> Vec<usize> {
        (0..self.log_theta.len())
            .filter(|&k| !(self.jitter_disabled && k == JITTER))
            .collect()
    }

    /// Returns a copy with new log-hyperparameters (same family and flags).
    pub fn with_log_theta(&self, log_theta: Vec<f64>) -> Result<Self> {
        let mut next = KernelSpec::new(self.family, log_theta)?;
        next.jitter_disabled = self.jitter_disabled;
        Ok(next)
    }

    fn jitter(&self) -> f64 {
        if self.family.has_jitter() {
            self.theta(JITTER)
        } else {
            0.0
        }
    }

    /// Covariance from squared distance and dot product, without jitter.
    fn base(&self, sq_dist: f64, dot: f64) -> f64 {
        match self.family {
            KernelFamily::SeJitter => self.theta(0) * (-sq_dist / (2.0 * self.theta(1))).exp(),
            KernelFamily::SeJitterLinear => {
                self.theta(0) * (-sq_dist / (2.0 * self.theta(1))).exp() + self.theta(3) * dot
            }
            KernelFamily::Poly9 => self.theta(0) * (dot + 1.0).powi(POLY_DEGREE),
        }
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("feature {i} = {}", x[i]))),
        None => Ok(()),
    }
}

/// Covariance between two points. `same_index` marks the training diagonal,
/// the only place the jitter applies.
pub fn kernel_eval(spec: &KernelSpec, xi: &[f64], xj: &[f64], same_index: bool) -> Result<f64> {
    if xi.len() != xj.len() {
        return Err(Error::Dimension(format!("{} vs {}", xi.len(), xj.len())));
    }
    check_finite(xi)?;
    check_finite(xj)?;
    let sq: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
    let dot: f64 = xi.iter().zip(xj).map(|(a, b)| a * b).sum();
    let mut k = spec.base(sq, dot);
    if same_index {
        k += spec.jitter();
    }
    Ok(k)
}

fn check_features(x: &DMatrix<f64>) -> Result<()> {
    check_finite(x.as_slice())
}

fn row_sq_norms(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.nrows(), x.row_iter().map(|r| r.dot(&r)))
}

/// Gram matrix of `x` with itself: exactly symmetric, jitter on the diagonal.
pub fn gram(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_features(x)?;
    let n = x.nrows();
    let dots = x * x.transpose();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = spec.base(0.0, dots[(i, i)]) + spec.jitter();
        for j in (i + 1)..n {
            let sq = (dots[(i, i)] + dots[(j, j)] - 2.0 * dots[(i, j)]).max(0.0);
            let v = spec.base(sq, dots[(i, j)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Cross-covariance matrix, `x1.nrows() x x2.nrows()`, never jittered.
pub fn cross(spec: &KernelSpec, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x1.ncols() != x2.ncols() {
        return Err(Error::Dimension(format!(
            "feature dimensions {} vs {}",
            x1.ncols(),
            x2.ncols()
        )));
    }
    check_features(x1)?;
    check_features(x2)?;
    let n1 = row_sq_norms(x1);
    let n2 = row_sq_norms(x2);
    let dots = x1 * x2.transpose();
    Ok(DMatrix::from_fn(x1.nrows(), x2.nrows(), |i, j| {
        let sq = (n1[i] + n2[j] - 2.0 * dots[(i, j)]).max(0.0);
        spec.base(sq, dots[(i, j)])
    }))
}

/// `gram` when `symmetric`, `cross` otherwise. Symmetric mode requires the
/// two inputs to be the same matrix.
pub fn kernel_matrix(
    spec: &KernelSpec,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    symmetric: bool,
) -> Result<DMatrix<f64>> {
    if symmetric {
        if x1 != x2 {
            return Err(Error::Dimension(
                "symmetric Gram matrix requested for different inputs".into(),
            ));
        }
        gram(spec, x1)
    } else {
        cross(spec, x1, x2)
    }
}

/// Prior variances `k(x, x)` of query points (no jitter).
pub fn self_covariances(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_features(x)?;
    Ok(DVector::from_iterator(
        x.nrows(),
        x.row_iter().map(|r| spec.base(0.0, r.dot(&r))),
    ))
}

/// Prior variances of points treated as training points, jitter included;
/// the diagonal of [`gram`].
pub fn training_variances(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(self_covariances(spec, x)?.add_scalar(spec.jitter()))
}

/// `dK / dlog(theta_k)` of the training Gram matrix, one matrix per
/// log-hyperparameter.
pub fn kernel_matrix_grads(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    check_features(x)?;
    let n = x.nrows();
    let dots = x * x.transpose();
    let sq = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (dots[(i, i)] + dots[(j, j)] - 2.0 * dots[(i, j)]).max(0.0)
        }
    });
    // Mirror through the upper triangle so every gradient is exactly symmetric.
    let sq = DMatrix::from_fn(n, n, |i, j| if i <= j { sq[(i, j)] } else { sq[(j, i)] });
    match spec.family {
        KernelFamily::SeJitter | KernelFamily::SeJitterLinear => {
            let (t1, t2) = (spec.theta(0), spec.theta(1));
            let k_se = sq.map(|d| t1 * (-d / (2.0 * t2)).exp());
            let d_len = k_se.zip_map(&sq, |k, d| k * d / (2.0 * t2));
            let d_jit = DMatrix::from_diagonal_element(n, n, spec.theta(JITTER));
            let mut grads = vec![k_se, d_len, d_jit];
            if spec.family == KernelFamily::SeJitterLinear {
                let t4 = spec.theta(3);
                let d_lin = DMatrix::from_fn(n, n, |i, j| {
                    t4 * if i <= j { dots[(i, j)] } else { dots[(j, i)] }
                });
                grads.push(d_lin);
            }
            Ok(grads)
        }
        KernelFamily::Poly9 => Ok(vec![gram(spec, x)?]),
    }
}

/// Rows of `x` at `idx`, in that order.
pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

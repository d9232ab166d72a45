//! Marginal likelihood of the full training set from an active-set fit.
//!
//! By the chain rule `p(y | X) = p(y_A | X_A) p(y_I | y_A, X)`. The first
//! factor is the active set's own `Z_EP`. The second is approximated either
//! by the product of the inactive points' predictive probabilities (`Z_APP`)
//! or by a second EP run over the inactive block whose prior is the GP
//! conditioned on the active sites (`Z_ACC`). Both reduce to the active-set
//! evidence when the inactive set is empty, and coincide for a single
//! inactive point.

use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};

use crate::active_set::ActiveSetModel;
use crate::ep::{ep_fit_nonzero_mean, EpConfig};
use crate::error::{Error, Result};
use crate::kernels::{cross, gram, training_variances};
use crate::probit::log_normal_cdf;

/// Inactive-block size above which `Z_ACC` logs a cost warning.
pub const ACC_WARN_SIZE: usize = 2000;

/// Diagonal boost for a conditional covariance that fails to factorize.
pub const SINGULAR_BOOST: f64 = 1e-8;

/// GP prior over the inactive latents given the active sites.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalPrior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ConditionalPrior {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timings {
    pub app_seconds: f64,
    pub acc_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MLDecomposition {
    pub log_z_ep_a: f64,
    pub log_z_app: f64,
    pub log_z_acc: Option<f64>,
    pub active_size: usize,
    pub inactive_size: usize,
    pub timings: Timings,
}

fn check_inactive(model: &ActiveSetModel, x_i: &DMatrix<f64>, y_i: &[f64]) -> Result<()> {
    if x_i.nrows() != y_i.len() {
        return Err(Error::Dimension(format!(
            "{} inactive rows, {} labels",
            x_i.nrows(),
            y_i.len()
        )));
    }
    if x_i.nrows() > 0 && x_i.ncols() != model.x_active().ncols() {
        return Err(Error::Dimension(format!(
            "inactive inputs have {} features, model has {}",
            x_i.ncols(),
            model.x_active().ncols()
        )));
    }
    Ok(())
}

/// `m_{I|A} = K_IA (K_AA + C~)^{-1} m~` and
/// `C_{II|A} = K_II - K_IA (K_AA + C~)^{-1} K_AI`, with the kernel's jitter
/// on the `K_II` diagonal.
pub fn conditional_prior(model: &ActiveSetModel, x_i: &DMatrix<f64>) -> Result<ConditionalPrior> {
    if x_i.nrows() == 0 {
        return Ok(ConditionalPrior {
            mean: DVector::zeros(0),
            cov: DMatrix::zeros(0, 0),
        });
    }
    let k_ii = gram(model.kernel(), x_i)?;
    let k_ia = cross(model.kernel(), x_i, model.x_active())?;
    let (mean, cov) = model.ep_state().conditional_moments(&k_ia, &k_ii)?;
    Ok(ConditionalPrior { mean, cov })
}

/// `log Z_EP,A + sum_i log p(y_i | x_i, A)` using the conditional marginals.
pub fn log_z_app(model: &ActiveSetModel, x_i: &DMatrix<f64>, y_i: &[f64]) -> Result<f64> {
    check_inactive(model, x_i, y_i)?;
    let terms = log_predictive_terms(model, x_i, y_i)?;
    Ok(model.log_z_ep_a() + terms.iter().sum::<f64>())
}

/// Per-point `log p(y_i | x_i, A)` under the conditional marginals.
pub fn log_predictive_terms(
    model: &ActiveSetModel,
    x_i: &DMatrix<f64>,
    y_i: &[f64],
) -> Result<Vec<f64>> {
    check_inactive(model, x_i, y_i)?;
    if y_i.is_empty() {
        return Ok(Vec::new());
    }
    let k_ia = cross(model.kernel(), x_i, model.x_active())?;
    let k_ss = training_variances(model.kernel(), x_i)?;
    let moments = model.ep_state().predict_moments(&k_ia, &k_ss)?;
    Ok(moments
        .iter()
        .zip(y_i)
        .map(|(&(m, v), &y)| log_normal_cdf(y * m / (1.0 + v).sqrt()))
        .collect())
}

/// `log Z_EP,A + log Z_EP(y_I | m_{I|A}, C_{II|A})`.
pub fn log_z_acc(
    model: &ActiveSetModel,
    x_i: &DMatrix<f64>,
    y_i: &[f64],
    config: &EpConfig,
) -> Result<f64> {
    check_inactive(model, x_i, y_i)?;
    if y_i.is_empty() {
        return Ok(model.log_z_ep_a());
    }
    if y_i.len() > ACC_WARN_SIZE {
        warn!(
            "Z_ACC over {} inactive points needs a dense {0}x{0} EP run",
            y_i.len()
        );
    }
    let prior = conditional_prior(model, x_i)?;
    let mut cov = prior.cov;
    if cov.clone().cholesky().is_none() {
        info!("conditional covariance is near-singular; adding {SINGULAR_BOOST:e} to its diagonal");
        for d in 0..cov.nrows() {
            cov[(d, d)] += SINGULAR_BOOST;
        }
    }
    let block = ep_fit_nonzero_mean(&cov, y_i, &prior.mean, config)
        .map_err(|e| e.with_context("EP on the inactive block"))?;
    Ok(model.log_z_ep_a() + block.log_z_ep())
}

/// All three evidence terms for the given inactive set; `Z_ACC` only when
/// `with_acc` is set.
pub fn decompose(
    model: &ActiveSetModel,
    x_i: &DMatrix<f64>,
    y_i: &[f64],
    config: &EpConfig,
    with_acc: bool,
) -> Result<MLDecomposition> {
    let t0 = Instant::now();
    let terms = log_predictive_terms(model, x_i, y_i)?;
    let log_z_app = model.log_z_ep_a() + terms.iter().sum::<f64>();
    let app_seconds = t0.elapsed().as_secs_f64();
    let (log_z_acc, acc_seconds) = if with_acc {
        let t1 = Instant::now();
        let v = log_z_acc(model, x_i, y_i, config)?;
        (Some(v), t1.elapsed().as_secs_f64())
    } else {
        (None, 0.0)
    };
    Ok(MLDecomposition {
        log_z_ep_a: model.log_z_ep_a(),
        log_z_app,
        log_z_acc,
        active_size: model.active_idx().len(),
        inactive_size: y_i.len(),
        timings: Timings {
            app_seconds,
            acc_seconds,
        },
    })
}

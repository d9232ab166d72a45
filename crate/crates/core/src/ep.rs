//! Expectation Propagation for probit Gaussian-process classification.
//!
//! Sites are stored in natural form, precision `tau = 1 / C~` and shift
//! `nu = m~ / C~`, so a site that has not been touched yet (infinite
//! variance) is simply `tau = 0`. All solves go through the Cholesky factor
//! of `B = I + S K S` with `S = diag(sqrt(tau))`, which equals
//! `S (K + C~) S` and stays well conditioned when some site variances are huge.
//!
//! The prior may have a nonzero mean; [`ep_fit`] is the zero-mean case of
//! [`ep_fit_nonzero_mean`] and runs exactly the same arithmetic.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::probit::{inverse_mills, log_normal_cdf, normal_cdf};

/// Diagonal boosts tried, relative to the mean prior variance, when `B`
/// fails to factorize.
const JITTER_LADDER: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

#[derive(Debug, Clone, PartialEq)]
pub struct EpConfig {
    /// Convergence threshold on the max absolute change of any site parameter
    /// over one sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Weight of the new site value; 1.0 is undamped.
    pub damping: f64,
    /// Seeds the per-sweep site permutation.
    pub seed: u64,
}

impl Default for EpConfig {
    fn default() -> Self {
        EpConfig {
            tol: 1e-6,
            max_sweeps: 50,
            damping: 0.8,
            seed: 0,
        }
    }
}

impl EpConfig {
    fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must be in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.tol > 0.0) || self.max_sweeps == 0 {
            return Err(Error::InvalidArgument(
                "EP needs a positive tolerance and at least one sweep".into(),
            ));
        }
        Ok(())
    }
}

/// Cavity marginal of one site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityParams {
    pub mean: f64,
    pub var: f64,
}

/// Predictive distribution at a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveResult {
    pub mean: f64,
    pub var: f64,
    /// Probability of the queried label.
    pub prob: f64,
}

/// Cholesky factor of `B = I + S K S` and the quantities derived from it.
#[derive(Debug, Clone)]
struct Factor {
    chol: Cholesky<f64, Dyn>,
    sqrt_tau: DVector<f64>,
}

impl Factor {
    fn new(k: &DMatrix<f64>, tau: &DVector<f64>) -> Option<Factor> {
        let sqrt_tau = tau.map(f64::sqrt);
        let n = k.nrows();
        let b = DMatrix::from_fn(n, n, |i, j| {
            let v = sqrt_tau[i] * k[(i, j)] * sqrt_tau[j];
            if i == j {
                1.0 + v
            } else {
                v
            }
        });
        Cholesky::new(b).map(|chol| Factor { chol, sqrt_tau })
    }

    fn l(&self) -> &DMatrix<f64> {
        self.chol.l_dirty()
    }

    /// `L^{-1} S m`
    fn half_solve(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut scaled = m.clone();
        for (mut row, s) in scaled.row_iter_mut().zip(self.sqrt_tau.iter()) {
            row *= *s;
        }
        self.l()
            .solve_lower_triangular(&scaled)
            .expect("Cholesky factor has a positive diagonal")
    }

    fn half_solve_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let scaled = v.component_mul(&self.sqrt_tau);
        self.l()
            .solve_lower_triangular(&scaled)
            .expect("Cholesky factor has a positive diagonal")
    }

    fn log_det_b(&self) -> f64 {
        2.0 * self.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Factorizes with escalating diagonal jitter; returns the factor and the
/// (possibly boosted) prior covariance it belongs to.
fn factorize(k: &DMatrix<f64>, tau: &DVector<f64>) -> Result<(Factor, DMatrix<f64>, f64)> {
    let scale = (k.trace() / k.nrows().max(1) as f64).abs().max(1.0);
    let mut last = 0.0;
    for rel in JITTER_LADDER {
        let boost = rel * scale;
        last = boost;
        let kk = if boost > 0.0 {
            k + DMatrix::from_diagonal_element(k.nrows(), k.ncols(), boost)
        } else {
            k.clone()
        };
        if let Some(f) = Factor::new(&kk, tau) {
            return Ok((f, kk, boost));
        }
    }
    Err(Error::Factorization { jitter: last })
}

/// Converged (or sweep-limited) EP approximation over one training set.
#[derive(Debug, Clone)]
pub struct EpState {
    labels: Vec<f64>,
    prior_mean: DVector<f64>,
    gram: DMatrix<f64>,
    site_prec: DVector<f64>,
    site_shift: DVector<f64>,
    post_mean: DVector<f64>,
    post_cov: DMatrix<f64>,
    factor: Factor,
    /// `(K + C~)^{-1} (m~ - m0)`
    alpha: DVector<f64>,
    log_z_ep: f64,
    n_sweeps: usize,
    converged: bool,
    skipped_updates: usize,
    jitter_added: f64,
}

fn validate_inputs(k: &DMatrix<f64>, y: &[f64], prior_mean: &DVector<f64>) -> Result<()> {
    let n = y.len();
    if n == 0 {
        return Err(Error::InvalidArgument("EP needs at least one site".into()));
    }
    if k.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Gram matrix {:?} for {n} labels",
            k.shape()
        )));
    }
    if prior_mean.len() != n {
        return Err(Error::Dimension(format!(
            "prior mean of length {} for {n} labels",
            prior_mean.len()
        )));
    }
    if let Some(i) = y.iter().position(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument(format!(
            "label {i} is {}, expected +1 or -1",
            y[i]
        )));
    }
    if k.iter().any(|v| !v.is_finite()) || prior_mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("EP prior".into()));
    }
    Ok(())
}

/// EP with a zero-mean prior `N(0, K)`.
pub fn ep_fit(k: &DMatrix<f64>, y: &[f64], config: &EpConfig) -> Result<EpState> {
    ep_fit_nonzero_mean(k, y, &DVector::zeros(y.len()), config)
}

/// EP with prior `N(prior_mean, K)`.
pub fn ep_fit_nonzero_mean(
    k: &DMatrix<f64>,
    y: &[f64],
    prior_mean: &DVector<f64>,
    config: &EpConfig,
) -> Result<EpState> {
    config.validate()?;
    validate_inputs(k, y, prior_mean)?;
    let n = y.len();
    let mut tau = DVector::zeros(n);
    let mut nu = DVector::zeros(n);
    let (mut factor, mut gram, mut jitter_added) = factorize(k, &tau)?;
    let (mut mu, mut sigma) = posterior(&gram, &factor, &tau, &nu, prior_mean);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut skipped = 0usize;
    let mut converged = false;
    let mut sweeps = 0usize;

    while sweeps < config.max_sweeps {
        sweeps += 1;
        order.shuffle(&mut rng);
        let mut max_change = 0.0f64;
        for &i in &order {
            let s_ii = sigma[(i, i)];
            let tau_cav = 1.0 / s_ii - tau[i];
            if !(tau_cav > 0.0) {
                skipped += 1;
                continue;
            }
            let nu_cav = mu[i] / s_ii - nu[i];
            let var_cav = 1.0 / tau_cav;
            let mean_cav = nu_cav * var_cav;
            let Some((tau_full, nu_full)) = site_update(y[i], mean_cav, var_cav, i)? else {
                skipped += 1;
                continue;
            };
            let tau_new = config.damping * tau_full + (1.0 - config.damping) * tau[i];
            let nu_new = config.damping * nu_full + (1.0 - config.damping) * nu[i];
            let d_tau = tau_new - tau[i];
            let d_nu = nu_new - nu[i];
            let denom = 1.0 + d_tau * s_ii;
            if !(denom > 0.0) {
                skipped += 1;
                continue;
            }
            max_change = max_change.max(d_tau.abs()).max(d_nu.abs());
            tau[i] = tau_new;
            nu[i] = nu_new;

            // Sherman-Morrison on the posterior precision K^{-1} + S~.
            let c = d_tau / denom;
            let col = sigma.column(i).into_owned();
            let shift = d_nu - c * (mu[i] + d_nu * s_ii);
            mu.axpy(shift, &col, 1.0);
            rank_one_downdate(&mut sigma, c, col.as_slice());
        }
        (factor, gram, jitter_added) = refactor(k, &tau, jitter_added)?;
        (mu, sigma) = posterior(&gram, &factor, &tau, &nu, prior_mean);
        if let Some(i) = mu.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                site: i,
                message: "posterior mean is not finite".into(),
            });
        }
        if max_change < config.tol {
            converged = true;
            break;
        }
    }

    let alpha = weights_from_factor(&gram, &factor, &tau, &nu, prior_mean);
    let mut state = EpState {
        labels: y.to_vec(),
        prior_mean: prior_mean.clone(),
        gram,
        site_prec: tau,
        site_shift: nu,
        post_mean: mu,
        post_cov: sigma,
        factor,
        alpha,
        log_z_ep: 0.0,
        n_sweeps: sweeps,
        converged,
        skipped_updates: skipped,
        jitter_added,
    };
    state.log_z_ep = state.compute_log_z()?;
    Ok(state)
}

/// `sigma -= c col col'` over contiguous columns.
fn rank_one_downdate(sigma: &mut DMatrix<f64>, c: f64, col: &[f64]) {
    let n = col.len();
    for (dst, &cj) in sigma.as_mut_slice().chunks_exact_mut(n).zip(col) {
        let f = c * cj;
        for (d, &v) in dst.iter_mut().zip(col) {
            *d -= f * v;
        }
    }
}

/// Factorization after a sweep. Keeps any jitter already added so the prior
/// does not change between sweeps.
fn refactor(
    k: &DMatrix<f64>,
    tau: &DVector<f64>,
    jitter_added: f64,
) -> Result<(Factor, DMatrix<f64>, f64)> {
    if jitter_added > 0.0 {
        let kk = k + DMatrix::from_diagonal_element(k.nrows(), k.ncols(), jitter_added);
        if let Some(f) = Factor::new(&kk, tau) {
            return Ok((f, kk, jitter_added));
        }
    }
    factorize(k, tau)
}

/// Moment-matched site in natural form for cavity `N(mean_cav, var_cav)`.
/// `Ok(None)` means the update would produce a non-positive variance.
fn site_update(y: f64, mean_cav: f64, var_cav: f64, site: usize) -> Result<Option<(f64, f64)>> {
    let scale = (1.0 + var_cav).sqrt();
    let z = y * mean_cav / scale;
    let r = inverse_mills(z);
    let mean_hat = mean_cav + y * var_cav * r / scale;
    let shrink = r * (z + r);
    let var_hat = var_cav - var_cav * var_cav * shrink / (1.0 + var_cav);
    if !mean_hat.is_finite() || !var_hat.is_finite() {
        return Err(Error::Numerical {
            site,
            message: format!("tilted moments not finite (z = {z})"),
        });
    }
    if !(var_hat > 0.0) || shrink < 0.0 {
        return Ok(None);
    }
    // 1/var_hat - 1/var_cav without the cancellation
    let tau_full = var_cav * shrink / ((1.0 + var_cav) * var_hat);
    let nu_full = mean_hat / var_hat - mean_cav / var_cav;
    Ok(Some((tau_full, nu_full)))
}

fn posterior(
    k: &DMatrix<f64>,
    factor: &Factor,
    tau: &DVector<f64>,
    nu: &DVector<f64>,
    prior_mean: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let v = factor.half_solve(k);
    let mut sigma = k - v.transpose() * &v;
    let n = sigma.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = s;
            sigma[(j, i)] = s;
        }
    }
    let w = nu - tau.component_mul(prior_mean);
    let mu = prior_mean + &sigma * w;
    (mu, sigma)
}

/// `(K + C~)^{-1} (m~ - m0) = w - S B^{-1} S K w` with `w = nu - tau m0`.
fn weights_from_factor(
    k: &DMatrix<f64>,
    factor: &Factor,
    tau: &DVector<f64>,
    nu: &DVector<f64>,
    prior_mean: &DVector<f64>,
) -> DVector<f64> {
    let w = nu - tau.component_mul(prior_mean);
    let kw = k * &w;
    let half = factor.half_solve_vec(&kw);
    let back = factor
        .l()
        .tr_solve_lower_triangular(&half)
        .expect("Cholesky factor has a positive diagonal");
    w - back.component_mul(&factor.sqrt_tau)
}

impl EpState {
    /// Rebuilds a state from stored site parameters without running EP.
    ///
    /// Performs exactly the factorization [`ep_fit_nonzero_mean`] performs at
    /// the end of a run, so predictions of a restored state are bit-identical
    /// to those of the original.
    pub fn from_sites(
        k: &DMatrix<f64>,
        y: &[f64],
        site_prec: DVector<f64>,
        site_shift: DVector<f64>,
        jitter_added: f64,
        n_sweeps: usize,
        converged: bool,
    ) -> Result<EpState> {
        let prior_mean = DVector::zeros(y.len());
        validate_inputs(k, y, &prior_mean)?;
        if site_prec.len() != y.len() || site_shift.len() != y.len() {
            return Err(Error::Dimension("site parameter length".into()));
        }
        if site_prec.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidArgument(
                "site precisions must be non-negative".into(),
            ));
        }
        let (factor, gram, jitter_added) = refactor(k, &site_prec, jitter_added)?;
        let (post_mean, post_cov) = posterior(&gram, &factor, &site_prec, &site_shift, &prior_mean);
        let alpha = weights_from_factor(&gram, &factor, &site_prec, &site_shift, &prior_mean);
        let mut state = EpState {
            labels: y.to_vec(),
            prior_mean,
            gram,
            site_prec,
            site_shift,
            post_mean,
            post_cov,
            factor,
            alpha,
            log_z_ep: 0.0,
            n_sweeps,
            converged,
            skipped_updates: 0,
            jitter_added,
        };
        state.log_z_ep = state.compute_log_z()?;
        Ok(state)
    }

    fn compute_log_z(&self) -> Result<f64> {
        let n = self.len();
        let tau = &self.site_prec;
        let nu = &self.site_shift;
        let mut site_terms = 0.0;
        let mut p = DVector::zeros(n);
        for i in 0..n {
            let cav = self.cavity_parameters(i)?;
            let z = self.labels[i] * cav.mean / (1.0 + cav.var).sqrt();
            site_terms += log_normal_cdf(z);
            if tau[i] > 0.0 {
                let t = tau[i];
                site_terms += 0.5 * (t * cav.var).ln_1p();
                let gap = t * cav.mean - nu[i];
                site_terms += gap * gap / (2.0 * t * (1.0 + t * cav.var));
                p[i] = (nu[i] - t * self.prior_mean[i]) / t.sqrt();
            }
        }
        let lp = self
            .factor
            .l()
            .solve_lower_triangular(&p)
            .expect("Cholesky factor has a positive diagonal");
        let log_z = site_terms - 0.5 * lp.norm_squared() - 0.5 * self.factor.log_det_b();
        if !log_z.is_finite() {
            return Err(Error::Numerical {
                site: 0,
                message: "log marginal likelihood is not finite".into(),
            });
        }
        Ok(log_z)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }

    /// Prior covariance used by the fit, including any added jitter.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Site precisions `1 / C~_nn`.
    pub fn site_precision(&self) -> &DVector<f64> {
        &self.site_prec
    }

    /// Site shifts `m~_n / C~_nn`.
    pub fn site_shift(&self) -> &DVector<f64> {
        &self.site_shift
    }

    /// Site variances `C~_nn`; infinite for a site that was never updated.
    pub fn site_var(&self) -> DVector<f64> {
        self.site_prec.map(|t| 1.0 / t)
    }

    /// Site means `m~_n`; zero for a site that was never updated.
    pub fn site_mean(&self) -> DVector<f64> {
        self.site_shift
            .zip_map(&self.site_prec, |nu, t| if t > 0.0 { nu / t } else { 0.0 })
    }

    pub fn post_mean(&self) -> &DVector<f64> {
        &self.post_mean
    }

    pub fn post_cov(&self) -> &DMatrix<f64> {
        &self.post_cov
    }

    /// Representer weights `(K + C~)^{-1} (m~ - m0)`; the posterior mean is
    /// `m0 + K alpha`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn log_z_ep(&self) -> f64 {
        self.log_z_ep
    }

    pub fn n_sweeps(&self) -> usize {
        self.n_sweeps
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn skipped_updates(&self) -> usize {
        self.skipped_updates
    }

    pub fn jitter_added(&self) -> f64 {
        self.jitter_added
    }

    /// Posterior with site `n` removed, marginalized to `f_n`.
    pub fn cavity_parameters(&self, n: usize) -> Result<CavityParams> {
        if n >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "site {n} out of range for {} sites",
                self.len()
            )));
        }
        let s_nn = self.post_cov[(n, n)];
        let tau_cav = 1.0 / s_nn - self.site_prec[n];
        let var = 1.0 / tau_cav;
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::Numerical {
                site: n,
                message: format!("cavity variance {var} is not positive"),
            });
        }
        let mean = var * (self.post_mean[n] / s_nn - self.site_shift[n]);
        Ok(CavityParams { mean, var })
    }

    /// `Phi(y_n m_cav / sqrt(1 + v_cav))`, the leave-one-out style predictive
    /// probability of the site's own label.
    pub fn cavity_predictive(&self, n: usize, y_n: f64) -> Result<f64> {
        let cav = self.cavity_parameters(n)?;
        Ok(normal_cdf(y_n * cav.mean / (1.0 + cav.var).sqrt()))
    }

    /// Predictive moments and label probability for one query, given its
    /// cross-covariances with the training points and its prior variance.
    ///
    /// Assumes a zero-mean prior at the query.
    pub fn predict(
        &self,
        k_star: &DVector<f64>,
        k_ss: f64,
        y_star: f64,
    ) -> Result<PredictiveResult> {
        if k_star.len() != self.len() {
            return Err(Error::Dimension(format!(
                "k_star of length {} for {} training points",
                k_star.len(),
                self.len()
            )));
        }
        let mean = k_star.dot(&self.alpha);
        let v = self.factor.half_solve_vec(k_star);
        let var = k_ss - v.norm_squared();
        if !(var > 0.0) {
            return Err(Error::Numerical {
                site: 0,
                message: format!("predictive variance {var} is not positive"),
            });
        }
        Ok(PredictiveResult {
            mean,
            var,
            prob: normal_cdf(y_star * mean / (1.0 + var).sqrt()),
        })
    }

    /// Joint posterior over query latents given the training sites:
    /// mean `k_cross alpha` and covariance `k_qq - k_cross (K + C~)^{-1} k_cross'`.
    /// The covariance is exactly symmetric.
    pub fn conditional_moments(
        &self,
        k_cross: &DMatrix<f64>,
        k_qq: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let q = k_cross.nrows();
        if k_cross.ncols() != self.len() || k_qq.shape() != (q, q) {
            return Err(Error::Dimension(format!(
                "cross-covariance {:?} and query covariance {:?} for {} training points",
                k_cross.shape(),
                k_qq.shape(),
                self.len()
            )));
        }
        let mean = k_cross * &self.alpha;
        let v = self.factor.half_solve(&k_cross.transpose());
        let reduction = v.transpose() * &v;
        let cov = DMatrix::from_fn(q, q, |i, j| {
            if i == j {
                // same arithmetic as predict_moments
                k_qq[(i, i)] - v.column(i).norm_squared()
            } else {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                k_qq[(a, b)] - reduction[(a, b)]
            }
        });
        Ok((mean, cov))
    }

    /// Predictive means and variances for many queries; `k_cross` is
    /// `n_query x n_train`.
    pub fn predict_moments(
        &self,
        k_cross: &DMatrix<f64>,
        k_ss: &DVector<f64>,
    ) -> Result<Vec<(f64, f64)>> {
        if k_cross.ncols() != self.len() || k_cross.nrows() != k_ss.len() {
            return Err(Error::Dimension(format!(
                "cross-covariance {:?} for {} training points and {} queries",
                k_cross.shape(),
                self.len(),
                k_ss.len()
            )));
        }
        if k_cross.nrows() == 0 {
            return Ok(Vec::new());
        }
        let means = k_cross * &self.alpha;
        let v = self.factor.half_solve(&k_cross.transpose());
        let mut out = Vec::with_capacity(k_ss.len());
        for (q, col) in v.column_iter().enumerate() {
            let var = k_ss[q] - col.norm_squared();
            if !(var > 0.0) {
                return Err(Error::Numerical {
                    site: q,
                    message: format!("predictive variance {var} is not positive"),
                });
            }
            out.push((means[q], var));
        }
        Ok(out)
    }

    /// Gradient of `log Z_EP` with respect to each log-hyperparameter, with
    /// the sites held at their converged values:
    /// `0.5 a' dK a - 0.5 tr((K + C~)^{-1} dK)`.
    pub fn log_ml_gradient(&self, k_grads: &[DMatrix<f64>]) -> Result<Vec<f64>> {
        if !self.converged {
            return Err(Error::NotConverged);
        }
        let n = self.len();
        // (K + C~)^{-1} = W' W with W = L^{-1} S
        let w = self
            .factor
            .l()
            .solve_lower_triangular(&DMatrix::from_diagonal(&self.factor.sqrt_tau))
            .expect("Cholesky factor has a positive diagonal");
        let r = w.transpose() * &w;
        k_grads
            .iter()
            .map(|dk| {
                if dk.shape() != (n, n) {
                    return Err(Error::Dimension(format!(
                        "gradient matrix {:?} for {n} sites",
                        dk.shape()
                    )));
                }
                let quad = self.alpha.dot(&(dk * &self.alpha));
                let trace = r.component_mul(dk).sum();
                Ok(0.5 * quad - 0.5 * trace)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram, KernelSpec};
    use crate::probit::normal_cdf;

    fn tight() -> EpConfig {
        EpConfig {
            tol: 1e-10,
            max_sweeps: 200,
            ..EpConfig::default()
        }
    }

    fn instance(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut s = seed + 17;
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let x = DMatrix::from_fn(n, 2, |_, _| 2.0 * next());
        let y: Vec<f64> = (0..n)
            .map(|i| {
                if x[(i, 0)] + 0.3 * next() > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        let spec = KernelSpec::se_jitter(1.5, 0.8, 0.01).unwrap();
        (gram(&spec, &x).unwrap(), y)
    }

    #[test]
    fn single_site_is_half() {
        for y in [1.0, -1.0] {
            let k = DMatrix::from_element(1, 1, 2.3);
            let st = ep_fit(&k, &[y], &tight()).unwrap();
            assert!(st.converged());
            assert!((st.log_z_ep() + std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn single_site_cavity_is_prior() {
        let k = DMatrix::from_element(1, 1, 1.7);
        let st = ep_fit(&k, &[1.0], &tight()).unwrap();
        let cav = st.cavity_parameters(0).unwrap();
        assert!(cav.mean.abs() < 1e-12);
        assert!((cav.var - 1.7).abs() < 1e-10);
        assert!((st.cavity_predictive(0, 1.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cavity_plus_site_recovers_marginal() {
        let (k, y) = instance(7, 3);
        let st = ep_fit(&k, &y, &tight()).unwrap();
        for n in 0..7 {
            let cav = st.cavity_parameters(n).unwrap();
            let t = st.site_precision()[n];
            let prec = 1.0 / cav.var + t;
            let var = 1.0 / prec;
            let mean = var * (cav.mean / cav.var + st.site_shift()[n]);
            assert!((var - st.post_cov()[(n, n)]).abs() <= 1e-10);
            assert!((mean - st.post_mean()[n]).abs() <= 1e-10);
        }
    }

    #[test]
    fn moments_match_tilted_distribution() {
        let (k, y) = instance(9, 5);
        let st = ep_fit(&k, &y, &tight()).unwrap();
        assert!(st.converged());
        for (n, &yn) in y.iter().enumerate() {
            let cav = st.cavity_parameters(n).unwrap();
            let scale = (1.0 + cav.var).sqrt();
            let z = yn * cav.mean / scale;
            let r = inverse_mills(z);
            let mean_hat = cav.mean + yn * cav.var * r / scale;
            let var_hat = cav.var - cav.var * cav.var * r * (z + r) / (1.0 + cav.var);
            assert!((mean_hat - st.post_mean()[n]).abs() < 1e-5);
            assert!((var_hat - st.post_cov()[(n, n)]).abs() < 1e-5);
            // zeroth moment: site normalizer reproduces Phi(z)
            assert!(normal_cdf(z) > 0.0);
        }
    }

    #[test]
    fn label_flip_leaves_evidence_unchanged() {
        let (k, y) = instance(8, 11);
        let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
        let a = ep_fit(&k, &y, &tight()).unwrap();
        let b = ep_fit(&k, &flipped, &tight()).unwrap();
        assert!((a.log_z_ep() - b.log_z_ep()).abs() <= 1e-10);
    }

    #[test]
    fn posterior_mean_is_k_alpha() {
        let (k, y) = instance(6, 2);
        let st = ep_fit(&k, &y, &tight()).unwrap();
        let km = st.gram() * st.alpha();
        let rel = (&km - st.post_mean()).norm() / st.post_mean().norm();
        assert!(rel < 1e-10, "{rel}");
    }

    #[test]
    fn zero_cross_covariance_predicts_half() {
        let (k, y) = instance(5, 1);
        let st = ep_fit(&k, &y, &tight()).unwrap();
        let p = st.predict(&DVector::zeros(5), 1.5, 1.0).unwrap();
        assert_eq!(p.mean, 0.0);
        assert_eq!(p.prob, 0.5);
    }

    #[test]
    fn query_at_training_point_leans_to_label() {
        let k = DMatrix::from_element(1, 1, 1.0);
        let st = ep_fit(&k, &[1.0], &tight()).unwrap();
        let p = st
            .predict(&DVector::from_element(1, 1.0), 1.0, 1.0)
            .unwrap();
        assert!(p.prob > 0.5);
    }

    #[test]
    fn batch_prediction_matches_single() {
        let (k, y) = instance(6, 4);
        let st = ep_fit(&k, &y, &tight()).unwrap();
        let cross = k.rows(0, 3).into_owned();
        let kss = DVector::from_element(3, 1.5);
        let batch = st.predict_moments(&cross, &kss).unwrap();
        for (q, &(mean, var)) in batch.iter().enumerate() {
            let single = st.predict(&cross.row(q).transpose(), 1.5, 1.0).unwrap();
            assert!((single.mean - mean).abs() < 1e-12);
            assert!((single.var - var).abs() < 1e-12);
        }
    }

    #[test]
    fn inconsistent_query_variance_is_rejected() {
        let (k, y) = instance(4, 4);
        let st = ep_fit(&k, &y, &tight()).unwrap();
        let err = st.predict(&k.column(0).into_owned(), 0.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
    }

    #[test]
    fn zero_gradient_matrix_gives_zero() {
        let (k, y) = instance(5, 8);
        let st = ep_fit(&k, &y, &tight()).unwrap();
        let g = st.log_ml_gradient(&[DMatrix::zeros(5, 5)]).unwrap();
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn gradient_requires_convergence() {
        let (k, y) = instance(8, 8);
        let cfg = EpConfig {
            max_sweeps: 1,
            ..EpConfig::default()
        };
        let st = ep_fit(&k, &y, &cfg).unwrap();
        assert!(!st.converged());
        assert!(matches!(
            st.log_ml_gradient(&[DMatrix::zeros(8, 8)]),
            Err(Error::NotConverged)
        ));
    }

    #[test]
    fn nonzero_mean_reduces_exactly() {
        let (k, y) = instance(7, 6);
        let a = ep_fit(&k, &y, &EpConfig::default()).unwrap();
        let b = ep_fit_nonzero_mean(&k, &y, &DVector::zeros(7), &EpConfig::default()).unwrap();
        assert_eq!(a.log_z_ep().to_bits(), b.log_z_ep().to_bits());
        assert_eq!(a.site_shift(), b.site_shift());
        assert_eq!(a.site_precision(), b.site_precision());
    }

    #[test]
    fn single_site_nonzero_mean_closed_form() {
        for &mu in &[-3.0, -0.5, 0.0, 1.2, 4.0] {
            for &k11 in &[0.1, 1.0, 5.0] {
                let k = DMatrix::from_element(1, 1, k11);
                let st = ep_fit_nonzero_mean(&k, &[1.0], &DVector::from_element(1, mu), &tight())
                    .unwrap();
                let exact = log_normal_cdf(mu / (1.0 + k11).sqrt());
                assert!((st.log_z_ep() - exact).abs() < 1e-10, "mu {mu} k {k11}");
            }
        }
    }

    #[test]
    fn restored_state_predicts_identically() {
        let (k, y) = instance(8, 9);
        let st = ep_fit(&k, &y, &EpConfig::default()).unwrap();
        let back = EpState::from_sites(
            &k,
            &y,
            st.site_precision().clone(),
            st.site_shift().clone(),
            st.jitter_added(),
            st.n_sweeps(),
            st.converged(),
        )
        .unwrap();
        let q = k.column(2).into_owned() * 0.7;
        let a = st.predict(&q, 1.5, 1.0).unwrap();
        let b = back.predict(&q, 1.5, 1.0).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.var.to_bits(), b.var.to_bits());
        assert_eq!(st.log_z_ep().to_bits(), back.log_z_ep().to_bits());
    }

    #[test]
    fn bad_inputs() {
        let k = DMatrix::identity(2, 2);
        assert!(ep_fit(&k, &[1.0, 0.0], &EpConfig::default()).is_err());
        assert!(ep_fit(&k, &[1.0], &EpConfig::default()).is_err());
        let bad = EpConfig {
            damping: 0.0,
            ..EpConfig::default()
        };
        assert!(ep_fit(&k, &[1.0, -1.0], &bad).is_err());
    }

    #[test]
    fn indefinite_prior_fails_to_factorize() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        let err = ep_fit(&k, &[1.0, -1.0], &EpConfig::default()).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }
}

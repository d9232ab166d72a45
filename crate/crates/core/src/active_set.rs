//! Predictive active set selection.
//!
//! The training set is split into subsets. For every subset the kernel is
//! re-tuned on the active set, EP is refit, active points whose cavity
//! predictive probability is high are dropped, and subset points whose
//! predictive probability is low are added. PASS uses probability
//! thresholds; fPASS swaps a fixed number of points so the active set keeps
//! its size. A random fixed-size active set and the full GPC are provided as
//! baselines.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::{debug, info};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ep::{ep_fit, EpConfig, EpState};
use crate::error::{Error, Result};
use crate::hyperopt::{optimize, OptimizerConfig};
use crate::kernels::{cross, gram, select_rows, self_covariances, KernelSpec};
use crate::probit::probit_predictive;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    Pass,
    Fpass,
    Random,
    /// Plain EP on every training point.
    Full,
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::Pass => "pass",
            SelectionMode::Fpass => "fpass",
            SelectionMode::Random => "random",
            SelectionMode::Full => "full",
        })
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pass" => Ok(SelectionMode::Pass),
            "fpass" => Ok(SelectionMode::Fpass),
            "random" => Ok(SelectionMode::Random),
            "full" => Ok(SelectionMode::Full),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassConfig {
    pub mode: SelectionMode,
    pub n_init: usize,
    pub n_sub: usize,
    pub n_pass: usize,
    pub p_inc: f64,
    pub p_del: f64,
    pub m_budget: usize,
    pub p_exc: f64,
    /// Re-tune the kernel on every k-th subset iteration.
    pub hyperopt_every: usize,
    /// Never re-tune the kernel.
    pub fixed_theta: bool,
    pub seed: u64,
    pub ep: EpConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for PassConfig {
    fn default() -> Self {
        PassConfig {
            mode: SelectionMode::Pass,
            n_init: 300,
            n_sub: 10,
            n_pass: 2,
            p_inc: 0.6,
            p_del: 0.99,
            m_budget: 300,
            p_exc: 0.02,
            hyperopt_every: 1,
            fixed_theta: false,
            seed: 0,
            ep: EpConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl PassConfig {
    /// Points swapped per fPASS update.
    pub fn exchange_count(&self) -> usize {
        (self.p_exc * self.m_budget as f64).ceil() as usize
    }

    /// Floor the removal rule never shrinks the active set below.
    pub fn min_active(&self) -> usize {
        (self.n_init / 10).max(2)
    }

    fn initial_size(&self, n: usize) -> usize {
        match self.mode {
            SelectionMode::Pass => self.n_init,
            SelectionMode::Fpass | SelectionMode::Random => self.m_budget,
            SelectionMode::Full => n,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hyperopt_every == 0 {
            return bad("hyperopt_every must be at least 1".into());
        }
        if self.optimizer.max_evals == 0 {
            return bad("max_evals must be at least 1".into());
        }
        match self.mode {
            SelectionMode::Full => return Ok(()),
            SelectionMode::Pass | SelectionMode::Fpass => {
                if self.n_sub == 0 || self.n_pass == 0 {
                    return bad("n_sub and n_pass must be at least 1".into());
                }
                if self.n_sub > n {
                    return bad(format!(
                        "n_sub = {} exceeds {n} training points",
                        self.n_sub
                    ));
                }
            }
            SelectionMode::Random => {}
        }
        match self.mode {
            SelectionMode::Pass => {
                if !(self.p_inc > 0.0 && self.p_inc <= 1.0) {
                    return bad(format!("p_inc must be in (0, 1], got {}", self.p_inc));
                }
                if !(self.p_del > 0.0 && self.p_del < 1.0) {
                    return bad(format!("p_del must be in (0, 1), got {}", self.p_del));
                }
                if self.p_del <= self.p_inc {
                    return bad(format!(
                        "p_del ({}) must exceed p_inc ({})",
                        self.p_del, self.p_inc
                    ));
                }
            }
            SelectionMode::Fpass => {
                if !(self.p_exc > 0.0 && self.p_exc < 1.0) {
                    return bad(format!("p_exc must be in (0, 1), got {}", self.p_exc));
                }
                if self.exchange_count() < 1 {
                    return bad("p_exc * m_budget must round up to at least 1".into());
                }
            }
            _ => {}
        }
        let size = self.initial_size(n);
        if size < 2 {
            return bad("the initial active set needs at least 2 points".into());
        }
        if size > n {
            return bad(format!(
                "initial active set of {size} exceeds {n} training points"
            ));
        }
        Ok(())
    }
}

/// `(index, probability)` pairs produced by the selection rules.
pub type Scored = Vec<(usize, f64)>;

/// One subset iteration of the selection loop.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub pass: usize,
    pub subset: usize,
    /// Active set size after this iteration's updates.
    pub active_size: usize,
    pub n_add: usize,
    pub n_del: usize,
    /// `log Z_EP` of the fit the rules were evaluated on.
    pub log_z_ep_a: f64,
    pub log_theta: Vec<f64>,
    /// `(training index, cavity probability)` of every removed point.
    pub removed: Vec<(usize, f64)>,
    /// `(training index, predictive probability)` of every added point.
    pub added: Vec<(usize, f64)>,
}

/// Writes the history as tab-separated text with a header line.
pub fn write_history<W: Write>(out: &mut W, history: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(
        out,
        "pass\tsubset\tactive\tn_add\tn_del\tlog_z_ep_a\tlog_theta"
    )?;
    for r in history {
        let theta: Vec<String> = r.log_theta.iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.pass,
            r.subset,
            r.active_size,
            r.n_add,
            r.n_del,
            r.log_z_ep_a,
            theta.join(",")
        )?;
    }
    Ok(())
}

/// A GP classifier fitted on an active subset of the training data.
#[derive(Debug, Clone)]
pub struct ActiveSetModel {
    active_idx: Vec<usize>,
    x_active: DMatrix<f64>,
    y_active: Vec<f64>,
    ep_state: EpState,
    kernel: KernelSpec,
    config: PassConfig,
    history: Vec<IterationRecord>,
}

impl ActiveSetModel {
    /// Assembles a model from stored parts (used when loading model files).
    pub fn from_parts(
        active_idx: Vec<usize>,
        x_active: DMatrix<f64>,
        y_active: Vec<f64>,
        ep_state: EpState,
        kernel: KernelSpec,
        config: PassConfig,
    ) -> Result<Self> {
        let n = active_idx.len();
        if x_active.nrows() != n || y_active.len() != n || ep_state.len() != n {
            return Err(Error::Dimension("active set parts disagree in size".into()));
        }
        Ok(ActiveSetModel {
            active_idx,
            x_active,
            y_active,
            ep_state,
            kernel,
            config,
            history: Vec::new(),
        })
    }

    pub fn active_idx(&self) -> &[usize] {
        &self.active_idx
    }

    pub fn x_active(&self) -> &DMatrix<f64> {
        &self.x_active
    }

    pub fn y_active(&self) -> &[f64] {
        &self.y_active
    }

    pub fn ep_state(&self) -> &EpState {
        &self.ep_state
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn config(&self) -> &PassConfig {
        &self.config
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    pub fn log_z_ep_a(&self) -> f64 {
        self.ep_state.log_z_ep()
    }

    /// Predictive `(mean, variance)` at each row of `x`.
    pub fn predict_moments(&self, x: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
        let kc = cross(&self.kernel, x, &self.x_active)?;
        let kss = self_covariances(&self.kernel, x)?;
        self.ep_state.predict_moments(&kc, &kss)
    }

    /// Probability of label `y[i]` at row `i` of `x`.
    pub fn predict_probs(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "{} rows, {} labels",
                x.nrows(),
                y.len()
            )));
        }
        Ok(self
            .predict_moments(x)?
            .into_iter()
            .zip(y)
            .map(|((m, v), &l)| probit_predictive(l, m, v))
            .collect())
    }
}

/// Shuffles `0..n` with `seed` and cuts it into `n_sub` parts whose sizes
/// differ by at most one.
pub fn split_subsets(n: usize, n_sub: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_sub == 0 || n_sub > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} points into {n_sub} subsets"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / n_sub;
    let extra = n % n_sub;
    let mut out = Vec::with_capacity(n_sub);
    let mut start = 0;
    for j in 0..n_sub {
        let len = base + usize::from(j < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

fn class_counts(y: &[f64]) -> (usize, usize) {
    let pos = y.iter().filter(|&&v| v > 0.0).count();
    (pos, y.len() - pos)
}

/// Greedy pick from `ranked` (most removable first) that keeps at least
/// `floor` points and one point of each class.
fn guarded_removals(
    y_active: &[f64],
    ranked: &[(usize, f64)],
    floor: usize,
    limit: usize,
) -> Vec<(usize, f64)> {
    let (mut pos, mut neg) = class_counts(y_active);
    let mut left = y_active.len();
    let mut out = Vec::new();
    for &(p, prob) in ranked {
        if out.len() >= limit || left <= floor {
            break;
        }
        let is_pos = y_active[p] > 0.0;
        if (is_pos && pos <= 1) || (!is_pos && neg <= 1) {
            continue;
        }
        if is_pos {
            pos -= 1;
        } else {
            neg -= 1;
        }
        left -= 1;
        out.push((p, prob));
    }
    out
}

fn cavity_probs(state: &EpState) -> Result<Vec<f64>> {
    (0..state.len())
        .map(|n| state.cavity_predictive(n, state.labels()[n]))
        .collect()
}

/// Active positions whose cavity probability exceeds `p_del`, most confident
/// first, trimmed so that at least `min_active` points and one point of each
/// class remain. Returns `(position in A, cavity probability)`.
pub fn removal_rule(state: &EpState, p_del: f64, min_active: usize) -> Result<Vec<(usize, f64)>> {
    let probs = cavity_probs(state)?;
    let mut ranked: Vec<(usize, f64)> = probs
        .into_iter()
        .enumerate()
        .filter(|&(_, p)| p > p_del)
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut picked = guarded_removals(state.labels(), &ranked, min_active, usize::MAX);
    picked.sort_by_key(|&(p, _)| p);
    Ok(picked)
}

fn subset_candidates(model: &ActiveSetModel, subset: &[usize]) -> Vec<usize> {
    let mut active = model.active_idx.clone();
    active.sort_unstable();
    subset
        .iter()
        .copied()
        .filter(|i| active.binary_search(i).is_err())
        .collect()
}

fn candidate_probs(
    model: &ActiveSetModel,
    x: &DMatrix<f64>,
    y: &[f64],
    cand: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if cand.is_empty() {
        return Ok(Vec::new());
    }
    let xs = select_rows(x, cand);
    let ys: Vec<f64> = cand.iter().map(|&i| y[i]).collect();
    let probs = model.predict_probs(&xs, &ys)?;
    Ok(cand.iter().copied().zip(probs).collect())
}

/// Non-active subset points predicted with probability below `p_inc`.
/// Returns `(training index, predictive probability)`.
pub fn inclusion_rule(
    model: &ActiveSetModel,
    x: &DMatrix<f64>,
    y: &[f64],
    subset: &[usize],
    p_inc: f64,
) -> Result<Vec<(usize, f64)>> {
    let cand = subset_candidates(model, subset);
    Ok(candidate_probs(model, x, y, &cand)?
        .into_iter()
        .filter(|&(_, p)| p < p_inc)
        .collect())
}

/// The fPASS swap: the most confidently classified active points (by cavity
/// probability) out, the least confidently predicted subset points in, the
/// same number of each. Ties go to the lower training index.
///
/// Returns `(positions to delete, indices to add)`, each with its probability.
pub fn fpass_exchange(
    model: &ActiveSetModel,
    x: &DMatrix<f64>,
    y: &[f64],
    subset: &[usize],
    p_exc: f64,
) -> Result<(Scored, Scored)> {
    let budget = model.active_idx.len();
    let wanted = ((p_exc * budget as f64).ceil() as usize).max(1);

    let probs = cavity_probs(&model.ep_state)?;
    let mut active_rank: Vec<(usize, f64)> = probs.into_iter().enumerate().collect();
    active_rank.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(model.active_idx[a.0].cmp(&model.active_idx[b.0]))
    });

    let cand = subset_candidates(model, subset);
    let mut incoming = candidate_probs(model, x, y, &cand)?;
    incoming.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let deletions = guarded_removals(&model.y_active, &active_rank, 0, wanted.min(incoming.len()));
    let count = deletions.len().min(incoming.len());
    if count < wanted {
        info!("fPASS exchange shrunk from {wanted} to {count} (not enough candidates)");
    }
    let mut deletions: Vec<(usize, f64)> = deletions.into_iter().take(count).collect();
    deletions.sort_by_key(|&(p, _)| p);
    incoming.truncate(count);
    Ok((deletions, incoming))
}

fn check_labels(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} rows, {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if let Some(i) = y.iter().position(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument(format!(
            "label {i} is {}, expected +1 or -1",
            y[i]
        )));
    }
    let (pos, neg) = class_counts(y);
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "training data must contain both classes".into(),
        ));
    }
    Ok(())
}

/// Uniform random subset of `size` indices containing both classes.
fn initial_active(y: &[f64], size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..y.len()).collect();
    perm.shuffle(rng);
    let mut active = perm[..size].to_vec();
    for class in [1.0, -1.0] {
        if !active.iter().any(|&i| y[i] == class) {
            let replacement = perm[size..].iter().copied().find(|&j| y[j] == class);
            let slot = active.iter().rposition(|&i| y[i] != class);
            if let (Some(j), Some(s)) = (replacement, slot) {
                debug!("initial active set was single-class; swapped in index {j}");
                active[s] = j;
            }
        }
    }
    active.sort_unstable();
    active
}

fn tune_and_fit(
    x: &DMatrix<f64>,
    y: &[f64],
    active: &[usize],
    kernel: &KernelSpec,
    config: &PassConfig,
    tune: bool,
) -> Result<(KernelSpec, EpState)> {
    let xa = select_rows(x, active);
    let ya: Vec<f64> = active.iter().map(|&i| y[i]).collect();
    if tune && !config.fixed_theta {
        let out = optimize(&xa, &ya, kernel, &config.optimizer, &config.ep)?;
        Ok((out.kernel, out.state))
    } else {
        let k = gram(kernel, &xa)?;
        Ok((kernel.clone(), ep_fit(&k, &ya, &config.ep)?))
    }
}

fn build_model(
    x: &DMatrix<f64>,
    y: &[f64],
    active: Vec<usize>,
    kernel: KernelSpec,
    state: EpState,
    config: &PassConfig,
    history: Vec<IterationRecord>,
) -> ActiveSetModel {
    let x_active = select_rows(x, &active);
    let y_active = active.iter().map(|&i| y[i]).collect();
    ActiveSetModel {
        active_idx: active,
        x_active,
        y_active,
        ep_state: state,
        kernel,
        config: config.clone(),
        history,
    }
}

fn pass_seed(seed: u64, pass: usize) -> u64 {
    seed ^ (pass as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs the configured selection scheme on `(x, y)` starting from `kernel0`.
pub fn fit(
    x: &DMatrix<f64>,
    y: &[f64],
    kernel0: &KernelSpec,
    config: &PassConfig,
) -> Result<ActiveSetModel> {
    check_labels(x, y)?;
    config.validate(y.len())?;
    let n = y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    match config.mode {
        SelectionMode::Full => {
            let all: Vec<usize> = (0..n).collect();
            let (kernel, state) = tune_and_fit(x, y, &all, kernel0, config, true)
                .map_err(|e| e.with_context("full GPC fit"))?;
            Ok(build_model(x, y, all, kernel, state, config, Vec::new()))
        }
        SelectionMode::Random => {
            let active = initial_active(y, config.m_budget, &mut rng);
            let (kernel, state) = tune_and_fit(x, y, &active, kernel0, config, true)
                .map_err(|e| e.with_context("random active set fit"))?;
            let record = IterationRecord {
                pass: 0,
                subset: 0,
                active_size: active.len(),
                n_add: 0,
                n_del: 0,
                log_z_ep_a: state.log_z_ep(),
                log_theta: kernel.log_theta().to_vec(),
                removed: Vec::new(),
                added: Vec::new(),
            };
            Ok(build_model(
                x,
                y,
                active,
                kernel,
                state,
                config,
                vec![record],
            ))
        }
        SelectionMode::Pass | SelectionMode::Fpass => {
            let active = initial_active(y, config.initial_size(n), &mut rng);
            let mut kernel = kernel0.clone();
            let mut history = Vec::new();
            let mut active = active;
            let mut iteration = 0usize;
            for pass in 0..config.n_pass {
                let subsets = split_subsets(n, config.n_sub, pass_seed(config.seed, pass))?;
                for (j, subset) in subsets.iter().enumerate() {
                    let tune = iteration.is_multiple_of(config.hyperopt_every);
                    let (k_new, state) = tune_and_fit(x, y, &active, &kernel, config, tune)
                        .map_err(|e| e.with_context(format!("pass {pass}, subset {j}")))?;
                    kernel = k_new;
                    let model =
                        build_model(x, y, active, kernel.clone(), state, config, Vec::new());
                    let (removed, added) = match config.mode {
                        SelectionMode::Pass => {
                            let rem =
                                removal_rule(&model.ep_state, config.p_del, config.min_active())?;
                            let add = inclusion_rule(&model, x, y, subset, config.p_inc)?;
                            (rem, add)
                        }
                        _ => fpass_exchange(&model, x, y, subset, config.p_exc)?,
                    };
                    let removed_idx: Vec<(usize, f64)> = removed
                        .iter()
                        .map(|&(p, prob)| (model.active_idx[p], prob))
                        .collect();
                    let mut next: Vec<usize> = model
                        .active_idx
                        .iter()
                        .enumerate()
                        .filter(|(p, _)| removed.binary_search_by_key(p, |&(q, _)| q).is_err())
                        .map(|(_, &i)| i)
                        .collect();
                    next.extend(added.iter().map(|&(i, _)| i));
                    next.sort_unstable();
                    debug!(
                        "pass {pass} subset {j}: |A| {} -> {} (+{} -{}), log Z_EP,A {:.4}",
                        model.active_idx.len(),
                        next.len(),
                        added.len(),
                        removed.len(),
                        model.log_z_ep_a()
                    );
                    history.push(IterationRecord {
                        pass,
                        subset: j,
                        active_size: next.len(),
                        n_add: added.len(),
                        n_del: removed.len(),
                        log_z_ep_a: model.log_z_ep_a(),
                        log_theta: kernel.log_theta().to_vec(),
                        removed: removed_idx,
                        added,
                    });
                    active = next;
                    iteration += 1;
                }
            }
            let tune = iteration.is_multiple_of(config.hyperopt_every);
            let (kernel, state) = tune_and_fit(x, y, &active, &kernel, config, tune)
                .map_err(|e| e.with_context("final refit"))?;
            Ok(build_model(x, y, active, kernel, state, config, history))
        }
    }
}

/// Fits EP on a fixed index set with fixed hyperparameters.
pub fn fit_on_indices(
    x: &DMatrix<f64>,
    y: &[f64],
    active: Vec<usize>,
    kernel: &KernelSpec,
    config: &PassConfig,
) -> Result<ActiveSetModel> {
    let mut active = active;
    active.sort_unstable();
    active.dedup();
    if active.iter().any(|&i| i >= y.len()) {
        return Err(Error::InvalidArgument("active index out of range".into()));
    }
    let (kernel, state) = tune_and_fit(x, y, &active, kernel, config, false)?;
    Ok(build_model(x, y, active, kernel, state, config, Vec::new()))
}

/// Misclassification rate of `model` on `(x, y)` using `sign(m*)`.
pub fn test_error(model: &ActiveSetModel, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let moments = model.predict_moments(x)?;
    let wrong = moments
        .iter()
        .zip(y)
        .filter(|((m, _), &l)| (if *m >= 0.0 { 1.0 } else { -1.0 }) != l)
        .count();
    Ok(wrong as f64 / y.len().max(1) as f64)
}

/// Indices of `0..n` not in `active`.
pub fn inactive_indices(n: usize, active: &[usize]) -> Vec<usize> {
    let mut sorted = active.to_vec();
    sorted.sort_unstable();
    (0..n)
        .filter(|i| sorted.binary_search(i).is_err())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_for_usps_training_set() {
        let parts = split_subsets(7291, 10, 1).unwrap();
        let mut sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes.iter().filter(|&&s| s == 730).count(), 1);
        assert_eq!(sizes.iter().filter(|&&s| s == 729).count(), 9);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..7291).collect::<Vec<_>>());
    }

    #[test]
    fn split_single_and_deterministic() {
        let one = split_subsets(10, 1, 3).unwrap();
        assert_eq!(one.len(), 1);
        let mut s = one[0].clone();
        s.sort_unstable();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_eq!(
            split_subsets(50, 7, 9).unwrap(),
            split_subsets(50, 7, 9).unwrap()
        );
        assert!(split_subsets(3, 4, 0).is_err());
    }

    #[test]
    fn exchange_counts() {
        let cfg = PassConfig {
            m_budget: 300,
            p_exc: 0.02,
            ..PassConfig::default()
        };
        assert_eq!(cfg.exchange_count(), 6);
        let tiny = PassConfig {
            m_budget: 10,
            p_exc: 1e-9,
            ..PassConfig::default()
        };
        assert_eq!(tiny.exchange_count(), 1);
    }

    #[test]
    fn config_validation() {
        let ok = PassConfig {
            n_init: 10,
            n_sub: 2,
            ..PassConfig::default()
        };
        assert!(ok.validate(100).is_ok());
        let inverted = PassConfig {
            p_inc: 0.9,
            p_del: 0.8,
            ..ok.clone()
        };
        assert!(inverted.validate(100).is_err());
        let too_big = PassConfig {
            n_init: 200,
            ..ok.clone()
        };
        assert!(too_big.validate(100).is_err());
        let bad_sub = PassConfig { n_sub: 0, ..ok };
        assert!(bad_sub.validate(100).is_err());
    }

    #[test]
    fn min_active_floor() {
        let cfg = PassConfig {
            n_init: 300,
            ..PassConfig::default()
        };
        assert_eq!(cfg.min_active(), 30);
        let small = PassConfig {
            n_init: 5,
            ..PassConfig::default()
        };
        assert_eq!(small.min_active(), 2);
    }

    #[test]
    fn stratified_initial_draw() {
        let mut y = vec![1.0; 50];
        y[37] = -1.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = initial_active(&y, 3, &mut rng);
            assert_eq!(a.len(), 3);
            assert!(a.contains(&37));
        }
    }

    #[test]
    fn single_point_removal() {
        let st = ep_fit(
            &DMatrix::from_element(1, 1, 1.0),
            &[1.0],
            &EpConfig::default(),
        )
        .unwrap();
        assert!(removal_rule(&st, 0.6, 0).unwrap().is_empty());
    }

    #[test]
    fn removal_with_p_del_one_is_empty() {
        let k = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.1 } else { 0.1 });
        let st = ep_fit(&k, &[1.0, 1.0, -1.0, -1.0], &EpConfig::default()).unwrap();
        assert!(removal_rule(&st, 1.0, 0).unwrap().is_empty());
    }

    #[test]
    fn history_tsv_header() {
        let mut buf = Vec::new();
        write_history(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "pass\tsubset\tactive\tn_add\tn_del\tlog_z_ep_a\tlog_theta\n"
        );
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [
            SelectionMode::Pass,
            SelectionMode::Fpass,
            SelectionMode::Random,
            SelectionMode::Full,
        ] {
            assert_eq!(m.to_string().parse::<SelectionMode>().unwrap(), m);
        }
    }
}

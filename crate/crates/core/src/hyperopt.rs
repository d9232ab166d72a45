//! Evidence maximization over log-hyperparameters.
//!
//! Polak-Ribiere conjugate-gradient ascent on `log Z_EP` with a backtracking
//! line search that only accepts steps satisfying the sufficient-increase
//! condition, so the objective never decreases within one call. Every
//! objective evaluation is a fresh EP fit.

use log::{debug, warn};
use nalgebra::DMatrix;

use crate::ep::{ep_fit, EpConfig, EpState};
use crate::error::{Error, Result};
use crate::kernels::{gram, kernel_matrix_grads, KernelSpec};

/// Log-hyperparameters are kept inside `[-LOG_BOUND, LOG_BOUND]`.
pub const LOG_BOUND: f64 = 10.0;

const ARMIJO: f64 = 1e-4;
const MAX_FIRST_STEP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// EP fits allowed per call, including the initial one.
    pub max_evals: usize,
    pub grad_tol: f64,
    pub warm_start: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_evals: 20,
            grad_tol: 1e-4,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub eval: usize,
    pub log_theta: Vec<f64>,
    pub log_z: f64,
    pub grad_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub kernel: KernelSpec,
    /// EP fit at the returned hyperparameters.
    pub state: EpState,
    pub log_z: f64,
    pub grad_norm: f64,
    pub trace: Vec<TraceEntry>,
    /// Set when the optimizer had to give up on failing EP fits.
    pub warning: Option<String>,
}

struct Point {
    kernel: KernelSpec,
    state: EpState,
    grad: Vec<f64>,
}

fn evaluate(x: &DMatrix<f64>, y: &[f64], kernel: &KernelSpec, ep: &EpConfig) -> Result<Point> {
    let k = gram(kernel, x)?;
    let state = ep_fit(&k, y, ep)?;
    let grads = kernel_matrix_grads(kernel, x)?;
    let full = state.log_ml_gradient(&grads)?;
    let grad = project(kernel, &full);
    Ok(Point {
        kernel: kernel.clone(),
        state,
        grad,
    })
}

/// Zeroes fixed parameters and components pushing against an active bound.
fn project(kernel: &KernelSpec, grad: &[f64]) -> Vec<f64> {
    let free = kernel.free_params();
    grad.iter()
        .enumerate()
        .map(|(k, &g)| {
            let lt = kernel.log_theta()[k];
            if !free.contains(&k) || (lt >= LOG_BOUND && g > 0.0) || (lt <= -LOG_BOUND && g < 0.0) {
                0.0
            } else {
                g
            }
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn spot_check(x: &DMatrix<f64>, y: &[f64], at: &Point, ep: &EpConfig) {
    let h = 1e-4;
    for &k in &at.kernel.free_params() {
        let shifted = |delta: f64| -> Option<f64> {
            let mut lt = at.kernel.log_theta().to_vec();
            lt[k] += delta;
            let spec = at.kernel.with_log_theta(lt).ok()?;
            let kk = gram(&spec, x).ok()?;
            ep_fit(&kk, y, ep).ok().map(|s| s.log_z_ep())
        };
        if let (Some(up), Some(down)) = (shifted(h), shifted(-h)) {
            debug!(
                "gradient check log_theta[{k}]: analytic {:.6e} finite-difference {:.6e}",
                at.grad[k],
                (up - down) / (2.0 * h)
            );
        }
    }
}

fn has_both_classes(y: &[f64]) -> bool {
    y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)
}

/// Maximizes `log Z_EP(theta, x, y)` starting from `kernel`.
pub fn optimize(
    x: &DMatrix<f64>,
    y: &[f64],
    kernel: &KernelSpec,
    opt: &OptimizerConfig,
    ep: &EpConfig,
) -> Result<OptimizeOutcome> {
    if opt.max_evals == 0 {
        return Err(Error::InvalidArgument(
            "max_evals must be at least 1".into(),
        ));
    }
    if !has_both_classes(y) {
        return Err(Error::InvalidArgument(
            "hyperparameter optimization needs both classes".into(),
        ));
    }
    let start = kernel.with_log_theta(
        kernel
            .log_theta()
            .iter()
            .map(|v| v.clamp(-LOG_BOUND, LOG_BOUND))
            .collect(),
    )?;
    let mut trace = Vec::new();
    let mut current =
        evaluate(x, y, &start, ep).map_err(|e| e.with_context("EP at initial hyperparameters"))?;
    let mut evals = 1;
    trace.push(TraceEntry {
        eval: evals,
        log_theta: current.kernel.log_theta().to_vec(),
        log_z: current.state.log_z_ep(),
        grad_norm: norm(&current.grad),
        accepted: true,
    });
    if log::log_enabled!(log::Level::Debug) {
        spot_check(x, y, &current, ep);
    }

    let mut direction = current.grad.clone();
    let mut step = (MAX_FIRST_STEP / norm(&direction).max(f64::MIN_POSITIVE)).min(MAX_FIRST_STEP);
    let mut warning = None;
    let mut failures = 0usize;

    'outer: while norm(&current.grad) >= opt.grad_tol && evals < opt.max_evals {
        let mut slope = dot(&current.grad, &direction);
        if slope <= 0.0 {
            direction = current.grad.clone();
            slope = dot(&direction, &direction);
        }
        loop {
            if evals >= opt.max_evals {
                break 'outer;
            }
            let proposal: Vec<f64> = current
                .kernel
                .log_theta()
                .iter()
                .zip(&direction)
                .map(|(t, d)| (t + step * d).clamp(-LOG_BOUND, LOG_BOUND))
                .collect();
            let moved: Vec<f64> = proposal
                .iter()
                .zip(current.kernel.log_theta())
                .map(|(a, b)| a - b)
                .collect();
            if norm(&moved) < 1e-12 {
                debug!("line search stalled at step {step:e}");
                break 'outer;
            }
            let spec = current.kernel.with_log_theta(proposal)?;
            evals += 1;
            match evaluate(x, y, &spec, ep) {
                Ok(next) => {
                    let gain = next.state.log_z_ep() - current.state.log_z_ep();
                    let accepted = gain >= ARMIJO * dot(&current.grad, &moved) && gain >= 0.0;
                    trace.push(TraceEntry {
                        eval: evals,
                        log_theta: next.kernel.log_theta().to_vec(),
                        log_z: next.state.log_z_ep(),
                        grad_norm: norm(&next.grad),
                        accepted,
                    });
                    debug!(
                        "eval {evals}: log_theta {:?} log Z {:.6} |grad| {:.3e}{}",
                        next.kernel.log_theta(),
                        next.state.log_z_ep(),
                        norm(&next.grad),
                        if accepted { "" } else { " (rejected)" }
                    );
                    if accepted {
                        let g_old = &current.grad;
                        let g_new = &next.grad;
                        let y_diff: Vec<f64> =
                            g_new.iter().zip(g_old).map(|(a, b)| a - b).collect();
                        let beta = (dot(g_new, &y_diff) / dot(g_old, g_old)).max(0.0);
                        direction = g_new
                            .iter()
                            .zip(&direction)
                            .map(|(g, d)| g + beta * d)
                            .collect();
                        current = next;
                        step *= 2.0;
                        continue 'outer;
                    }
                    step *= 0.5;
                }
                Err(e) => {
                    failures += 1;
                    debug!("EP failed at proposed hyperparameters: {e}");
                    trace.push(TraceEntry {
                        eval: evals,
                        log_theta: spec.log_theta().to_vec(),
                        log_z: f64::NAN,
                        grad_norm: f64::NAN,
                        accepted: false,
                    });
                    step *= 0.25;
                    if failures >= 5 {
                        let msg = format!("{failures} EP failures; keeping best hyperparameters");
                        warn!("{msg}");
                        warning = Some(msg);
                        break 'outer;
                    }
                }
            }
        }
    }

    let grad_norm = norm(&current.grad);
    Ok(OptimizeOutcome {
        log_z: current.state.log_z_ep(),
        kernel: current.kernel,
        state: current.state,
        grad_norm,
        trace,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;

    fn data() -> (DMatrix<f64>, Vec<f64>) {
        let n = 24;
        let x = DMatrix::from_fn(n, 1, |i, _| -3.0 + 6.0 * i as f64 / (n - 1) as f64);
        let y = (0..n)
            .map(|i| {
                if (x[(i, 0)] * 1.3).sin() > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        (x, y)
    }

    fn ep() -> EpConfig {
        EpConfig {
            tol: 1e-8,
            max_sweeps: 200,
            ..EpConfig::default()
        }
    }

    #[test]
    fn never_worsens_and_trace_is_monotone() {
        let (x, y) = data();
        let k0 = KernelSpec::se_jitter(0.5, 4.0, 0.05).unwrap();
        let out = optimize(&x, &y, &k0, &OptimizerConfig::default(), &ep()).unwrap();
        let first = out.trace[0].log_z;
        assert!(out.log_z >= first - 1e-9);
        assert!(
            out.log_z > first + 0.1,
            "expected progress: {first} -> {}",
            out.log_z
        );
        let mut best = f64::NEG_INFINITY;
        for t in out.trace.iter().filter(|t| t.accepted) {
            assert!(t.log_z >= best - 1e-12);
            best = t.log_z;
        }
        assert!(out.trace.len() <= 20);
        assert!(out.kernel.log_theta().iter().all(|v| v.abs() <= LOG_BOUND));
    }

    #[test]
    fn stationary_start_returns_after_one_eval() {
        let (x, y) = data();
        let k0 = KernelSpec::se_jitter(0.5, 4.0, 0.05).unwrap();
        let long = OptimizerConfig {
            max_evals: 200,
            grad_tol: 1e-6,
            ..OptimizerConfig::default()
        };
        let first = optimize(&x, &y, &k0, &long, &ep()).unwrap();
        let again = OptimizerConfig {
            grad_tol: first.grad_norm * 1.01 + 1e-12,
            ..OptimizerConfig::default()
        };
        let second = optimize(&x, &y, &first.kernel, &again, &ep()).unwrap();
        assert_eq!(second.trace.len(), 1);
        assert_eq!(second.kernel, first.kernel);
    }

    #[test]
    fn fixed_jitter_stays_fixed() {
        let (x, y) = data();
        let k0 = KernelSpec::se_jitter(0.5, 4.0, 0.0).unwrap();
        let out = optimize(&x, &y, &k0, &OptimizerConfig::default(), &ep()).unwrap();
        assert!(out.kernel.jitter_disabled());
        assert_eq!(out.kernel.theta(2), 0.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = DMatrix::from_fn(3, 1, |i, _| i as f64);
        let k0 = KernelSpec::se_jitter(1.0, 1.0, 0.1).unwrap();
        assert!(optimize(&x, &[1.0; 3], &k0, &OptimizerConfig::default(), &ep()).is_err());
    }
}

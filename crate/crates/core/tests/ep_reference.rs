mod common;

use common::{random_instance, std_normal_cdf, std_normal_pdf};
use nalgebra::{DMatrix, DVector};
use passgp::ep::{ep_fit, ep_fit_nonzero_mean, EpConfig};
use passgp::kernels::{cross, self_covariances};

struct Dense {
    post_mean: DVector<f64>,
    site_mean: DVector<f64>,
    site_var: DVector<f64>,
    log_z: f64,
}

/// Textbook EP in moment form with an explicitly inverted posterior
/// covariance and half-damped sequential sweeps.
fn dense_ep(k: &DMatrix<f64>, y: &[f64], m0: &DVector<f64>) -> Dense {
    let n = y.len();
    let k_inv = k.clone().try_inverse().unwrap();
    let mut tau = DVector::<f64>::zeros(n);
    let mut nu = DVector::<f64>::zeros(n);
    let mut log_zhat = vec![0.0; n];
    let mut cav = vec![(0.0, 0.0); n];
    let posterior = |tau: &DVector<f64>, nu: &DVector<f64>| {
        let sigma = (&k_inv + DMatrix::from_diagonal(tau))
            .try_inverse()
            .unwrap();
        let mu = &sigma * (&k_inv * m0 + nu);
        (sigma, mu)
    };
    for _ in 0..5000 {
        let mut change = 0.0f64;
        for i in 0..n {
            let (sigma, mu) = posterior(&tau, &nu);
            let v_c = 1.0 / (1.0 / sigma[(i, i)] - tau[i]);
            let m_c = v_c * (mu[i] / sigma[(i, i)] - nu[i]);
            let s = (1.0 + v_c).sqrt();
            let z = y[i] * m_c / s;
            let r = std_normal_pdf(z) / std_normal_cdf(z);
            let m_hat = m_c + y[i] * v_c * r / s;
            let v_hat = v_c - v_c * v_c * r * (z + r) / (1.0 + v_c);
            let t_new = 0.5 * tau[i] + 0.5 * (1.0 / v_hat - 1.0 / v_c);
            let n_new = 0.5 * nu[i] + 0.5 * (m_hat / v_hat - m_c / v_c);
            change = change
                .max((t_new - tau[i]).abs())
                .max((n_new - nu[i]).abs());
            tau[i] = t_new;
            nu[i] = n_new;
            log_zhat[i] = std_normal_cdf(z).ln();
            cav[i] = (m_c, v_c);
        }
        if change < 1e-14 {
            break;
        }
    }
    let (_, mu) = posterior(&tau, &nu);
    let site_var = tau.map(|t| 1.0 / t);
    let site_mean = nu.component_div(&tau);
    // t_i(f) = Z_i N(f | mu~_i, s~_i) with Z_i = Zhat_i / N(m_c | mu~_i, v_c + s~_i);
    // the product integrates against the prior to N(mu~ | m0, K + S~).
    let mut log_z = 0.0;
    for i in 0..n {
        let (m_c, v_c) = cav[i];
        let v = v_c + site_var[i];
        let log_norm =
            -0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * (m_c - site_mean[i]).powi(2) / v;
        log_z += log_zhat[i] - log_norm;
    }
    let c = k + DMatrix::from_diagonal(&site_var);
    let chol = c.cholesky().unwrap();
    let d = &site_mean - m0;
    let quad = d.dot(&chol.solve(&d));
    let logdet = 2.0 * chol.l().diagonal().map(f64::ln).sum();
    log_z += -0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Dense {
        post_mean: mu,
        site_mean,
        site_var,
        log_z,
    }
}

fn tight() -> EpConfig {
    EpConfig {
        tol: 1e-12,
        max_sweeps: 2000,
        ..EpConfig::default()
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn matches_dense_reference() {
    for seed in 0..15u64 {
        let n = 3 + seed as usize;
        let inst = random_instance(n, 700 + seed);
        let st = ep_fit(&inst.k, &inst.y, &tight()).unwrap();
        assert!(st.converged());
        let r = dense_ep(&inst.k, &inst.y, &DVector::zeros(n));
        assert!(
            rel(st.log_z_ep(), r.log_z) < 1e-8,
            "seed {seed}: {} vs {}",
            st.log_z_ep(),
            r.log_z
        );
        for i in 0..n {
            assert!(rel(st.post_mean()[i], r.post_mean[i]) < 1e-7);
            assert!(rel(st.site_var()[i], r.site_var[i]) < 1e-6);
            assert!(rel(st.site_mean()[i], r.site_mean[i]) < 1e-6);
        }
    }
}

#[test]
fn nonzero_mean_matches_dense_reference() {
    for seed in 0..8u64 {
        let n = 4 + seed as usize;
        let inst = random_instance(n, 800 + seed);
        let m0 = DVector::from_fn(n, |i, _| 0.7 * ((i as f64) - 2.0).sin());
        let st = ep_fit_nonzero_mean(&inst.k, &inst.y, &m0, &tight()).unwrap();
        let r = dense_ep(&inst.k, &inst.y, &m0);
        assert!(rel(st.log_z_ep(), r.log_z) < 1e-8, "seed {seed}");
        for i in 0..n {
            assert!(rel(st.post_mean()[i], r.post_mean[i]) < 1e-7);
        }
    }
}

#[test]
fn sweep_order_and_damping_share_the_fixed_point() {
    let inst = random_instance(12, 31);
    let a = ep_fit(&inst.k, &inst.y, &tight()).unwrap();
    let b = ep_fit(
        &inst.k,
        &inst.y,
        &EpConfig {
            damping: 0.5,
            seed: 99,
            ..tight()
        },
    )
    .unwrap();
    assert!((a.log_z_ep() - b.log_z_ep()).abs() < 1e-9);
    assert!((a.post_mean() - b.post_mean()).amax() < 1e-8);
}

#[test]
fn prediction_at_training_inputs_uses_the_posterior() {
    let inst = random_instance(10, 12);
    let st = ep_fit(&inst.k, &inst.y, &tight()).unwrap();
    let kx = cross(&inst.spec, &inst.x, &inst.x).unwrap();
    let kss = self_covariances(&inst.spec, &inst.x).unwrap();
    let jitter = inst.spec.theta(2);
    let moments = st.predict_moments(&kx, &kss).unwrap();
    for (i, (m, v)) in moments.iter().enumerate() {
        // queries see the kernel without the training-diagonal jitter
        let want_m = st.post_mean()[i] - jitter * st.alpha()[i];
        assert!((m - want_m).abs() < 1e-9, "{m} {want_m}");
        assert!(*v > 0.0 && *v <= kss[i] + 1e-12);
    }
}

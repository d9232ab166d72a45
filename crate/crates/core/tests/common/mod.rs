#![allow(dead_code)]

pub mod oracle;

use nalgebra::DMatrix;
use passgp::kernels::{gram, KernelSpec};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random small probit-GPC problem: 2-D inputs, noisy linear labels that
/// always contain both classes, SE kernel with random hyperparameters.
pub struct Instance {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub spec: KernelSpec,
    pub k: DMatrix<f64>,
}

pub fn random_instance(n: usize, seed: u64) -> Instance {
    let mut r = rng(seed);
    let x = DMatrix::from_fn(n, 2, |_, _| r.random_range(-2.0..2.0));
    let w: f64 = r.random_range(0.0..std::f64::consts::TAU);
    let mut y: Vec<f64> = (0..n)
        .map(|i| {
            let s = w.cos() * x[(i, 0)] + w.sin() * x[(i, 1)] + r.random_range(-0.7..0.7);
            if s > 0.0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    if n > 1 && y.iter().all(|&v| v == y[0]) {
        y[0] = -y[0];
    }
    let spec = KernelSpec::se_jitter(
        r.random_range(0.3..3.0),
        r.random_range(0.2..3.0),
        r.random_range(1e-3..0.1),
    )
    .unwrap();
    let k = gram(&spec, &x).unwrap();
    Instance { x, y, spec, k }
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Phi(z)` from the Taylor series `1/2 + phi(z) sum z^(2k+1) / (2k+1)!!`;
/// relative error about 1e-12 or better for `|z| <= 8`.
pub fn std_normal_cdf(z: f64) -> f64 {
    let (mut term, mut sum) = (z, z);
    let mut k = 1.0;
    while term.abs() > 1e-18 * sum.abs() {
        k += 2.0;
        term *= z * z / k;
        sum += term;
    }
    0.5 + std_normal_pdf(z) * sum
}

//! Deterministic 2-D fixture datasets.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;

fn gaussian(rng: &mut ChaCha8Rng, mean: Vector2<f64>, chol: &Matrix2<f64>) -> Vector2<f64> {
    let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    mean + chol * z
}

/// Balanced classes alternate `+1, -1, +1, ...` so any prefix has both.
fn two_class(
    name: &str,
    n: usize,
    seed: u64,
    mut draw: impl FnMut(&mut ChaCha8Rng, bool) -> Vector2<f64>,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let positive = i % 2 == 0;
        let p = draw(&mut rng, positive);
        x[(i, 0)] = p[0];
        x[(i, 1)] = p[1];
        labels.push(if positive { 1 } else { -1 });
    }
    Dataset::new(name, x, labels).expect("generated data is finite")
}

/// Well-separated isotropic blobs centred at `+-(1.2, 1.2)`, spread 0.6.
pub fn blobs(n: usize, seed: u64) -> Dataset {
    let chol = Matrix2::identity() * 0.6;
    two_class("blobs", n, seed, |rng, pos| {
        let c = if pos { 1.2 } else { -1.2 };
        gaussian(rng, Vector2::new(c, c), &chol)
    })
}

/// Two overlapping Gaussians with different covariances, so the Bayes
/// boundary is curved and a few percent of points sit on the wrong side.
pub fn overlapping_gaussians(n: usize, seed: u64) -> Dataset {
    let pos = Matrix2::new(1.0, 0.0, 0.0, 0.45);
    let neg = Matrix2::new(0.5, 0.0, 0.55, 1.1);
    two_class("overlap", n, seed, |rng, p| {
        if p {
            gaussian(rng, Vector2::new(1.1, 0.6), &pos)
        } else {
            gaussian(rng, Vector2::new(-1.1, -0.4), &neg)
        }
    })
}

/// Interleaved half circles with Gaussian noise.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Dataset {
    two_class("moons", n, seed, |rng, pos| {
        let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (x, y) = if pos {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        Vector2::new(x + noise * nx, y + noise * ny)
    })
}

/// Three blobs on a triangle with labels 0, 1, 2 in rotation.
pub fn three_class(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = [(0.0, 1.6), (-1.4, -0.8), (1.4, -0.8)];
    let chol = Matrix2::identity() * 0.55;
    let mut x = DMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 3;
        let p = gaussian(&mut rng, Vector2::new(centres[c].0, centres[c].1), &chol);
        x[(i, 0)] = p[0];
        x[(i, 1)] = p[1];
        labels.push(c as i64);
    }
    Dataset::new("three", x, labels).expect("generated data is finite")
}

/// Fixture by name: `blobs`, `overlap`, `moons` or `three`.
pub fn by_name(name: &str, n: usize, seed: u64) -> Option<Dataset> {
    match name {
        "blobs" => Some(blobs(n, seed)),
        "overlap" => Some(overlapping_gaussians(n, seed)),
        "moons" => Some(two_moons(n, 0.15, seed)),
        "three" => Some(three_class(n, seed)),
        _ => None,
    }
}

//! Random bounded polytopes, point sets and maps for property tests.

use nalgebra::{DMatrix, DVector};
use quadcap::polytope::{Polytope, VPolytope};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Bounded, nonempty polytope: a random box cut by random halfspaces that
/// keep an interior point.
pub fn random_polytope(rng: &mut ChaCha8Rng, n: usize) -> Polytope {
    let center = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let lo: Vec<f64> = (0..n).map(|i| center[i] - rng.random_range(0.3..1.5)).collect();
    let hi: Vec<f64> = (0..n).map(|i| center[i] + rng.random_range(0.3..1.5)).collect();
    let cuts = rng.random_range(0..=2 * n);
    let mut h = DMatrix::zeros(2 * n + cuts, n);
    let mut b = DVector::zeros(2 * n + cuts);
    for i in 0..n {
        h[(2 * i, i)] = 1.0;
        b[2 * i] = hi[i];
        h[(2 * i + 1, i)] = -1.0;
        b[2 * i + 1] = -lo[i];
    }
    for r in 2 * n..2 * n + cuts {
        let a = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        for j in 0..n {
            h[(r, j)] = a[j];
        }
        b[r] = a.dot(&center) + rng.random_range(0.05..0.6);
    }
    Polytope::new(h, b).unwrap()
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, s: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-s..s))
}

pub fn random_vpolytope(rng: &mut ChaCha8Rng, n: usize) -> VPolytope {
    let k = rng.random_range(1..=4);
    VPolytope::new((0..k).map(|_| random_vector(rng, n, 0.4)).collect()).unwrap()
}

/// Invertible and well conditioned: identity plus a small perturbation.
pub fn random_map(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3))
}


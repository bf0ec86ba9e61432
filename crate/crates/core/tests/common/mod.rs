#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use swap_core::ewr::{GradientMatrix, WeightVector};
use swap_core::ot::TransportPlan;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, p), || rng.sample(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.sample(StandardNormal))
}

pub fn gradients(rng: &mut ChaCha8Rng, n: usize, p: usize) -> GradientMatrix {
    GradientMatrix::new(normal_matrix(rng, n, p)).unwrap()
}

pub fn weights(rng: &mut ChaCha8Rng, p: usize) -> WeightVector {
    WeightVector::new(normal_vector(rng, p)).unwrap()
}

/// A random feasible plan with uniform marginals: a mixture of permutation
/// matrices, each scaled by 1/n.
pub fn random_plan(rng: &mut ChaCha8Rng, n: usize) -> TransportPlan {
    let pieces = rng.random_range(1..=4);
    let mix: Vec<f64> = (0..pieces).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = mix.iter().sum();
    let mut pi = Array2::zeros((n, n));
    for &m in &mix {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        for (i, &j) in perm.iter().enumerate() {
            pi[[i, j]] += m / total / n as f64;
        }
    }
    let u = Array1::from_elem(n, 1.0 / n as f64);
    TransportPlan::new(pi, u.clone(), u).unwrap()
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            let j = if k % 2 == 0 { i } else { 0 };
            a.swap(j, k - 1);
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

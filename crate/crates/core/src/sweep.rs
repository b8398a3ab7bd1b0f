//! Seeded random reversible generators for property sweeps.
//!
//! Chains are a ring with a few random chords. Edge conductances `c_ij`
//! are symmetric, so `Q_ij = c_ij / m_i` satisfies detailed balance by
//! construction. At least one state carries a positive killing rate.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::spectral::{validate_generator, ReversibleGenerator};

/// Random irreducible, killed, reversible generator on `n ≥ 1` states.
pub fn random_reversible_generator(n: usize, seed: u64) -> ReversibleGenerator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut c = DMatrix::<f64>::zeros(n, n);
    if n > 1 {
        for i in 0..n {
            let j = (i + 1) % n;
            if i != j {
                let w = rng.random_range(0.1..1.0);
                c[(i, j)] = w;
                c[(j, i)] = w;
            }
        }
        for _ in 0..n / 4 {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                let w = rng.random_range(0.05..0.5);
                c[(i, j)] += w;
                c[(j, i)] += w;
            }
        }
    }
    let mut kill = vec![0.0; n];
    let forced = rng.random_range(0..n);
    for (i, k) in kill.iter_mut().enumerate() {
        if i == forced || rng.random_bool(0.3) {
            *k = rng.random_range(0.05..1.0);
        }
    }
    build(&c, &m, &kill)
}

/// Random two-state chain with independent killing rates.
pub fn random_two_state(seed: u64) -> ReversibleGenerator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = vec![rng.random_range(0.2..5.0), rng.random_range(0.2..5.0)];
    let w = rng.random_range(0.01..3.0);
    let c = DMatrix::from_row_slice(2, 2, &[0.0, w, w, 0.0]);
    let mut kill = vec![rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
    if kill.iter().all(|&k| k == 0.0) {
        kill[0] = 0.5;
    }
    build(&c, &m, &kill)
}

/// Random nonempty subset of `0..n` with the given membership probability.
pub fn random_subset(n: usize, p: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = (0..n).filter(|_| rng.random_bool(p)).collect();
    if out.is_empty() {
        out.push(rng.random_range(0..n));
    }
    out
}

/// Random subset of exactly `k` states.
pub fn random_subset_of_size(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        all.swap(i, j);
    }
    let mut out = all[..k.min(n)].to_vec();
    out.sort_unstable();
    out
}

fn build(c: &DMatrix<f64>, m: &[f64], kill: &[f64]) -> ReversibleGenerator {
    let n = m.len();
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut out = 0.0;
        for j in 0..n {
            if i != j {
                q[(i, j)] = c[(i, j)] / m[i];
                out += q[(i, j)];
            }
        }
        q[(i, i)] = -out - kill[i];
    }
    validate_generator(q, m.to_vec()).expect("sweep generators are valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_killed() {
        let a = random_reversible_generator(20, 5);
        let b = random_reversible_generator(20, 5);
        assert_eq!(a.q(), b.q());
        assert!(!a.is_conservative());
        assert_eq!(random_subset_of_size(20, 10, 1).len(), 10);
    }
}

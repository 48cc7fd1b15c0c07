//! Seeded randomness.
//!
//! Every stochastic operation takes an explicit [`Rng`] handle. Handles are
//! forked from a [`SeedStream`]: one 64-bit seed, many independent ChaCha8
//! streams selected by a stream id, so adding draws in one component never
//! shifts the draws seen by another.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for stream `id`.
    pub fn fork(&self, id: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(id);
        Rng { inner }
    }
}

/// Stream ids used across the toolkit.
pub mod streams {
    pub const PRETRAIN: u64 = 1;
    pub const CALIBRATION: u64 = 2;
    pub const SEARCH: u64 = 3;
    pub const ADAPTER_INIT: u64 = 4;
    pub const FINETUNE: u64 = 5;
    pub const MEMORY: u64 = 6;
    pub const SAMPLING: u64 = 7;
    pub const EVAL_DATA: u64 = 8;
}

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn normal_tensor(&mut self, rows: usize, cols: usize) -> Tensor2D {
        Tensor2D::from_fn(rows, cols, |_, _| self.normal())
    }

    /// `k` distinct indices from `[0, n)` by a partial Fisher–Yates shuffle,
    /// in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct items from {n}");
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }

    pub fn sample_with_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        (0..k).map(|_| self.below(n)).collect()
    }

    /// Child generator seeded from this one's output.
    pub fn split(&mut self) -> Rng {
        Rng { inner: ChaCha8Rng::seed_from_u64(self.inner.next_u64()) }
    }
}

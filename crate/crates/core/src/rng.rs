//! Seeded, platform-independent random streams.
//!
//! Every random draw in the crate goes through [`Rng`], which wraps a ChaCha8
//! stream cipher. Independent sub-streams are derived with [`Rng::split`] so
//! per-class or per-worker generation never shares state.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DireError, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `(seed, stream)`; does not advance `self`.
    pub fn split(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng {
            seed: self.seed,
            inner,
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `count` distinct indices from `0..n`, in ascending order.
    pub fn sample_indices(&mut self, n: usize, count: usize) -> Vec<usize> {
        let mut idx = rand::seq::index::sample(&mut self.inner, n, count.min(n)).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// `rows × cols` matrix of i.i.d. `N(mean, std²)` draws.
pub fn rng_normal(rng: &mut Rng, rows: usize, cols: usize, mean: f64, std: f64) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(DireError::dim(format!(
            "normal matrix needs non-zero shape, got {rows}x{cols}"
        )));
    }
    if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(DireError::param(format!(
            "normal parameters must be finite with std >= 0 (mean={mean}, std={std})"
        )));
    }
    let data = (0..rows * cols)
        .map(|_| mean + std * rng.standard_normal())
        .collect();
    Matrix::from_vec(rows, cols, data)
}

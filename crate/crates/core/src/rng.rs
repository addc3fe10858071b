//! Seeded random streams.
//!
//! A run has one seed. Each consumer draws from its own ChaCha stream so that,
//! for example, changing the dropout rate does not perturb Gumbel noise.

// Unused whenever std is in the build graph; needed for no_std builds.
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Open01};

use crate::tensor::Tensor;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Gumbel = 1,
    Dropout = 2,
    Shuffle = 3,
    Synthetic = 4,
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Standard Gumbel draws `-ln(-ln s)`, `s ~ U(0, 1)` exclusive at both ends.
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        let s: f64 = Open01.sample(rng);
        -(-s.ln()).ln()
    })
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std_dev: f64) -> Tensor {
    let dist = Normal::new(0.0, std_dev).expect("finite std");
    Tensor::from_fn(rows, cols, |_, _| dist.sample(rng))
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

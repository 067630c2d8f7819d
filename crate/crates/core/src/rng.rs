//! Seeded random streams.
//!
//! Every stochastic routine draws from ChaCha8 keyed by a 64-bit seed, with
//! the ChaCha stream id selecting an independent sub-stream (one per
//! trajectory, per sample, ...). The algorithm is fixed so results are
//! reproducible across platforms and crate upgrades that keep ChaCha8.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Independent generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_vector(rng: &mut impl Rng, len: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| std * gaussian(rng))
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    // Fill row-major so the draw order does not depend on the storage layout.
    let data: Vec<f64> = (0..rows * cols).map(|_| std * gaussian(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

pub fn unit_vector(rng: &mut impl Rng, len: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vector(rng, len, 1.0);
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

//! Radix-2 FFT and FFT-based linear convolution.
//!
//! Inputs are zero-padded to the next power of two at least as long as the
//! full linear convolution, so the circular product equals the linear one.

use nalgebra::Complex;
use std::f64::consts::PI;

pub type C64 = Complex<f64>;

/// Precomputed twiddle table for one transform length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    twiddles: Vec<C64>,
}

impl FftPlan {
    /// Plan for length `len`, which must be a power of two.
    pub fn new(len: usize) -> Self {
        assert!(len.is_power_of_two(), "fft length must be a power of two");
        let twiddles = (0..len / 2)
            .map(|k| {
                let angle = -2.0 * PI * k as f64 / len as f64;
                C64::new(angle.cos(), angle.sin())
            })
            .collect();
        Self { len, twiddles }
    }

    /// Smallest plan that holds a linear convolution of lengths `a` and `b`.
    pub fn for_convolution(a: usize, b: usize) -> Self {
        let full = (a + b).saturating_sub(1).max(1);
        Self::new(full.next_power_of_two())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, buf: &mut [C64]) {
        self.transform(buf, false);
    }

    /// Inverse transform including the 1/N normalization.
    pub fn inverse(&self, buf: &mut [C64]) {
        self.transform(buf, true);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, input: &[f64]) -> Vec<C64> {
        assert!(input.len() <= self.len);
        let mut buf = vec![C64::new(0.0, 0.0); self.len];
        for (slot, &x) in buf.iter_mut().zip(input) {
            slot.re = x;
        }
        self.forward(&mut buf);
        buf
    }

    fn transform(&self, buf: &mut [C64], inverse: bool) {
        let n = self.len;
        assert_eq!(buf.len(), n);
        if n <= 1 {
            return;
        }
        // bit reversal
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
    }
}

/// Full linear convolution `(a * b)[i] = sum_p a[p] b[i - p]`, length `a.len() + b.len() - 1`.
pub fn linear_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let plan = FftPlan::for_convolution(a.len(), b.len());
    let fa = plan.forward_real(a);
    let mut fb = plan.forward_real(b);
    for (x, y) in fb.iter_mut().zip(&fa) {
        *x *= *y;
    }
    plan.inverse(&mut fb);
    fb.truncate(a.len() + b.len() - 1);
    fb.into_iter().map(|c| c.re).collect()
}

/// Direct O(len_a * len_b) convolution; the reference the FFT path is checked against.
pub fn naive_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (p, &x) in a.iter().enumerate() {
        for (q, &y) in b.iter().enumerate() {
            out[p + q] += x * y;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn dft(input: &[C64]) -> Vec<C64> {
        let n = input.len();
        (0..n)
            .map(|k| {
                input
                    .iter()
                    .enumerate()
                    .map(|(t, &x)| {
                        let angle = -2.0 * PI * (k * t) as f64 / n as f64;
                        x * C64::new(angle.cos(), angle.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_direct_dft() {
        let mut r = rng::stream(3, 0);
        for len in [1usize, 2, 8, 64] {
            let input: Vec<C64> = (0..len)
                .map(|_| C64::new(rng::gaussian(&mut r), rng::gaussian(&mut r)))
                .collect();
            let mut buf = input.clone();
            FftPlan::new(len).forward(&mut buf);
            for (a, b) in buf.iter().zip(dft(&input)) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let mut r = rng::stream(4, 0);
        let input: Vec<C64> = (0..128).map(|_| C64::new(rng::gaussian(&mut r), 0.0)).collect();
        let plan = FftPlan::new(128);
        let mut buf = input.clone();
        plan.forward(&mut buf);
        plan.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&input) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn convolution_matches_naive() {
        let mut r = rng::stream(5, 0);
        for (la, lb) in [(1, 1), (3, 5), (100, 37), (1024, 1024)] {
            let a: Vec<f64> = (0..la).map(|_| rng::gaussian(&mut r)).collect();
            let b: Vec<f64> = (0..lb).map(|_| rng::gaussian(&mut r)).collect();
            let fast = linear_convolution(&a, &b);
            let slow = naive_convolution(&a, &b);
            assert_eq!(fast.len(), slow.len());
            let err = fast
                .iter()
                .zip(&slow)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "len ({la},{lb}) err {err}");
        }
    }

    #[test]
    fn empty_inputs() {
        assert!(linear_convolution(&[], &[1.0]).is_empty());
        assert_eq!(linear_convolution(&[2.0], &[3.0]), vec![6.0]);
    }
}

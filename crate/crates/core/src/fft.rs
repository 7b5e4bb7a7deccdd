//! Mixed-radix complex FFT.
//!
//! Recursive decimation in time over the prime factorisation of the length.
//! Radix 2 and 3 butterflies are the common case for the grid sizes used
//! here; other primes fall back to a direct DFT of that size.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::math::{cos, sin, PI};

#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    factors: Vec<usize>,
    /// `exp(-2πi k / n)` for `k in 0..n`
    twiddles: Vec<Complex64>,
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT length must be positive");
        let mut factors = Vec::new();
        let mut m = n;
        let mut p = 2;
        while m > 1 {
            while m % p == 0 {
                factors.push(p);
                m /= p;
            }
            p += 1;
            if p * p > m && m > 1 {
                factors.push(m);
                break;
            }
        }
        let twiddles = (0..n)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(cos(a), sin(a))
            })
            .collect();
        FftPlan { n, factors, twiddles }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalised forward transform `X_k = Σ x_j e^{-2πi jk/n}`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, false);
    }

    /// Inverse transform including the `1/n` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, true);
        let s = 1.0 / self.n as f64;
        for d in data.iter_mut() {
            *d *= s;
        }
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.n);
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        self.rec(data, 1, &mut out, &self.factors, inverse);
        data.copy_from_slice(&out);
    }

    #[inline]
    fn tw(&self, k: usize, inverse: bool) -> Complex64 {
        let w = self.twiddles[k % self.n];
        if inverse {
            w.conj()
        } else {
            w
        }
    }

    /// Transform of `input[0], input[stride], ...` (length `out.len()`) into `out`.
    fn rec(&self, input: &[Complex64], stride: usize, out: &mut [Complex64], factors: &[usize], inverse: bool) {
        let len = out.len();
        if len == 1 {
            out[0] = input[0];
            return;
        }
        let p = factors[0];
        let m = len / p;
        // sub-transforms of the p decimated sequences, stored back to back
        for j in 0..p {
            self.rec(&input[j * stride..], stride * p, &mut out[j * m..(j + 1) * m], &factors[1..], inverse);
        }
        // twiddle step: twiddles of length `len` are every (n/len)-th of the plan's
        let step = self.n / len;
        let mut scratch = [Complex64::new(0.0, 0.0); 16];
        let mut heap;
        let buf: &mut [Complex64] = if p <= 16 {
            &mut scratch[..p]
        } else {
            heap = vec![Complex64::new(0.0, 0.0); p];
            &mut heap[..]
        };
        for k in 0..m {
            for j in 0..p {
                buf[j] = out[j * m + k] * self.tw(j * k * step, inverse);
            }
            match p {
                2 => {
                    let (a, b) = (buf[0], buf[1]);
                    out[k] = a + b;
                    out[k + m] = a - b;
                }
                _ => {
                    for q in 0..p {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (j, b) in buf.iter().enumerate() {
                            acc += *b * self.tw(j * q * m * step, inverse);
                        }
                        out[k + q * m] = acc;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let a = -2.0 * PI * (j * k) as f64 / n as f64;
                        v * Complex64::new(cos(a), sin(a))
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_for_assorted_lengths() {
        for n in [1usize, 2, 3, 8, 12, 18, 30, 64, 96, 17 * 2] {
            let x: Vec<Complex64> =
                (0..n).map(|j| Complex64::new(sin(j as f64 * 1.3) + 0.1, cos(j as f64 * 0.7))).collect();
            let mut y = x.clone();
            FftPlan::new(n).forward(&mut y);
            let z = naive(&x);
            for (a, b) in y.iter().zip(&z) {
                assert!((a - b).norm_sqr().sqrt() < 1e-10 * n as f64, "n = {n}");
            }
            FftPlan::new(n).inverse(&mut y);
            for (a, b) in y.iter().zip(&x) {
                assert!((a - b).norm_sqr().sqrt() < 1e-12 * n as f64);
            }
        }
    }
}

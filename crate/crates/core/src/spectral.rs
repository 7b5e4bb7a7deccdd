//! Fourier-spectral operators on the periodic grid: derivatives, the
//! Helmholtz projection, 2/3-rule dealiasing and constant-coefficient solves.
//!
//! Odd derivatives use the wavenumber `2π m / L` with the Nyquist mode set to
//! zero. The projection uses the same wavenumbers, which makes it an
//! orthogonal projector that maps real fields to real fields.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::FftPlan;
use crate::grid::{Grid, ScalarField, VectorField};
use crate::math::{abs, sin, PI};

#[derive(Debug, Clone)]
pub struct Spectral {
    grid: Grid,
    plan: FftPlan,
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        Spectral { grid, plan: FftPlan::new(grid.n()) }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Signed integer mode of the `i`-th FFT bin (Nyquist reported as `+n/2`).
    #[inline]
    pub fn mode(&self, i: usize) -> i64 {
        let n = self.grid.n();
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Derivative wavenumber of bin `i`; zero at the Nyquist bin.
    #[inline]
    pub fn wavenumber(&self, i: usize) -> f64 {
        if i == self.grid.n() / 2 {
            0.0
        } else {
            2.0 * PI * self.mode(i) as f64 / self.grid.length()
        }
    }

    /// Bin indices `(i_x, i_y)` of a flat spectral index (same layout as fields).
    #[inline]
    fn bins(&self, cell: usize) -> (usize, usize) {
        if self.grid.dim() == 1 {
            (cell, 0)
        } else {
            (cell / self.grid.n(), cell % self.grid.n())
        }
    }

    /// Wavevector of a flat spectral index; second entry is zero in 1D.
    #[inline]
    pub fn wavevector(&self, cell: usize) -> [f64; 2] {
        let (i, j) = self.bins(cell);
        if self.grid.dim() == 1 {
            [self.wavenumber(i), 0.0]
        } else {
            [self.wavenumber(i), self.wavenumber(j)]
        }
    }

    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        data
    }

    /// Inverse transform; imaginary round-off is discarded.
    pub fn inverse(&self, mut hat: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut hat, true);
        hat.into_iter().map(|c| c.re).collect()
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.grid.n();
        let apply = |buf: &mut [Complex64]| {
            if inverse {
                self.plan.inverse(buf)
            } else {
                self.plan.forward(buf)
            }
        };
        if self.grid.dim() == 1 {
            apply(data);
            return;
        }
        for row in data.chunks_mut(n) {
            apply(row);
        }
        let mut col = vec![ZERO; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = data[i * n + j];
            }
            apply(&mut col);
            for i in 0..n {
                data[i * n + j] = col[i];
            }
        }
    }

    /// Spectral partial derivative along `axis` of raw cell data.
    pub fn partial(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let mut hat = self.forward(f);
        self.partial_hat(&mut hat, axis);
        self.inverse(hat)
    }

    fn partial_hat(&self, hat: &mut [Complex64], axis: usize) {
        for (c, h) in hat.iter_mut().enumerate() {
            let k = self.wavevector(c)[axis];
            *h *= Complex64::new(0.0, k);
        }
    }

    pub fn gradient(&self, f: &ScalarField) -> VectorField {
        let hat = self.forward(f.data());
        let comps = (0..self.grid.dim())
            .map(|a| {
                let mut h = hat.clone();
                self.partial_hat(&mut h, a);
                self.inverse(h)
            })
            .collect();
        VectorField::from_components(self.grid, comps).expect("shape preserved")
    }

    pub fn divergence(&self, v: &VectorField) -> ScalarField {
        let mut acc = vec![ZERO; self.grid.cells()];
        for a in 0..self.grid.dim() {
            let hat = self.forward(v.component(a));
            for (c, (o, h)) in acc.iter_mut().zip(hat).enumerate() {
                *o += h * Complex64::new(0.0, self.wavevector(c)[a]);
            }
        }
        ScalarField::from_vec(self.grid, self.inverse(acc)).expect("shape preserved")
    }

    /// Helmholtz projection onto discretely solenoidal fields.
    pub fn project(&self, v: &VectorField) -> Result<VectorField> {
        if self.grid.dim() == 1 {
            return project_1d(v);
        }
        let mut hats: Vec<Vec<Complex64>> = (0..2).map(|a| self.forward(v.component(a))).collect();
        self.project_hat(&mut hats);
        let comps = hats.into_iter().map(|h| self.inverse(h)).collect();
        VectorField::from_components(self.grid, comps)
    }

    /// In-place projection of the two spectral components (2D only).
    pub fn project_hat(&self, hats: &mut [Vec<Complex64>]) {
        for c in 0..self.grid.cells() {
            let k = self.wavevector(c);
            let k2 = k[0] * k[0] + k[1] * k[1];
            if k2 == 0.0 {
                continue;
            }
            let kv = (hats[0][c] * k[0] + hats[1][c] * k[1]) / k2;
            hats[0][c] -= kv * k[0];
            hats[1][c] -= kv * k[1];
        }
    }

    /// Whether bin `cell` survives the 2/3-rule truncation.
    #[inline]
    pub fn kept(&self, cell: usize) -> bool {
        let n = self.grid.n() as i64;
        let (i, j) = self.bins(cell);
        let keep = |b: usize| 3 * self.mode(b).abs() < n;
        if self.grid.dim() == 1 {
            keep(i)
        } else {
            keep(i) && keep(j)
        }
    }

    pub fn dealias_hat(&self, hat: &mut [Complex64]) {
        for (c, h) in hat.iter_mut().enumerate() {
            if !self.kept(c) {
                *h = ZERO;
            }
        }
    }

    /// Solves `(I + c L) x = rhs` where `L` is the symbol of minus the
    /// composed central-difference Laplacian, `Σ_j (sin(k_j dx)/dx)²`.
    pub fn solve_screened_fd(&self, rhs: &[f64], c: f64) -> Vec<f64> {
        let dx = self.grid.dx();
        let mut hat = self.forward(rhs);
        let n = self.grid.n();
        let sym = |i: usize| {
            let k = 2.0 * PI * self.mode(i) as f64 / self.grid.length();
            let s = sin(k * dx) / dx;
            s * s
        };
        for (cell, h) in hat.iter_mut().enumerate() {
            let (i, j) = self.bins(cell);
            let lam = if self.grid.dim() == 1 { sym(i) } else { sym(i) + sym(j) };
            *h /= 1.0 + c * lam;
        }
        debug_assert_eq!(hat.len(), if self.grid.dim() == 1 { n } else { n * n });
        self.inverse(hat)
    }
}

fn project_1d(v: &VectorField) -> Result<VectorField> {
    let c = v.component(0);
    let mean = c.iter().sum::<f64>() / c.len() as f64;
    let scale = 1.0 + abs(mean);
    if c.iter().any(|&x| abs(x - mean) > 1e-10 * scale) {
        return Err(Error::UnsupportedDimension {
            dim: 1,
            what: "solenoidal fields in 1D are constants; nonconstant input cannot be projected",
        });
    }
    Ok(v.clone())
}

/// Helmholtz projection `v̂ ↦ v̂ − k (k·v̂)/|k|²` (zero mode unchanged).
pub fn helmholtz_project(v: &VectorField) -> Result<VectorField> {
    Spectral::new(*v.grid()).project(v)
}

/// Spectral divergence (Nyquist modes dropped).
pub fn spectral_divergence(v: &VectorField) -> ScalarField {
    Spectral::new(*v.grid()).divergence(v)
}

pub fn spectral_gradient(f: &ScalarField) -> VectorField {
    Spectral::new(*f.grid()).gradient(f)
}

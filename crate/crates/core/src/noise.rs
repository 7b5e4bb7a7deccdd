//! Truncated cylindrical Wiener process and the diffusion coefficients `G_k`.
//!
//! Gaussian increments come from a counter-based generator (Philox4x32-10)
//! keyed by `(seed, member, step, mode)`, so any increment can be produced
//! independently of every other one. That is what lets ensemble members run
//! in any order and on any number of threads with bitwise-identical results.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::grid::VectorField;
use crate::math::{abs, cos, ln, sqrt, PI};
use crate::State;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
pub fn philox4x32(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for _ in 0..10 {
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
        k[0] = k[0].wrapping_add(PHILOX_W0);
        k[1] = k[1].wrapping_add(PHILOX_W1);
    }
    c
}

/// Uniform in the open interval (0, 1) from 53 random bits.
#[inline]
fn open_unit(hi: u32, lo: u32) -> f64 {
    let bits = ((hi as u64) << 32 | lo as u64) >> 11;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal sample, a pure function of its key (Box–Muller).
pub fn standard_normal(seed: u64, member: u32, step: u64, mode: u32) -> f64 {
    let out = philox4x32(
        [step as u32, (step >> 32) as u32, mode, member],
        [seed as u32, (seed >> 32) as u32],
    );
    let u1 = open_unit(out[0], out[1]);
    let u2 = open_unit(out[2], out[3]);
    sqrt(-2.0 * ln(u1)) * cos(2.0 * PI * u2)
}

/// One member's realisation of the `K` Brownian components on a base grid of
/// width `dt`. Solver steps are whole multiples of `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WienerPath {
    pub seed: u64,
    pub member: u32,
    pub modes: usize,
    pub dt: f64,
}

impl WienerPath {
    pub fn new(seed: u64, member: u32, modes: usize, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param(format!("Wiener base step must be positive, got {dt}")));
        }
        Ok(WienerPath { seed, member, modes, dt })
    }

    /// Increments `W_k((s+1)dt) − W_k(s dt)` of base step `s`.
    pub fn increments(&self, step: u64) -> Vec<f64> {
        let s = sqrt(self.dt);
        (0..self.modes).map(|k| s * standard_normal(self.seed, self.member, step, k as u32)).collect()
    }

    /// Increments over `count` consecutive base steps starting at `start`.
    pub fn increments_over(&self, start: u64, count: u64) -> Vec<f64> {
        let mut acc = vec![0.0; self.modes];
        for s in start..start + count {
            for (k, a) in acc.iter_mut().enumerate() {
                *a += standard_normal(self.seed, self.member, s, k as u32);
            }
        }
        let sd = sqrt(self.dt);
        for a in acc.iter_mut() {
            *a *= sd;
        }
        acc
    }
}

/// `increments` of `path` at base step `step`.
pub fn wiener_increments(path: &WienerPath, step: u64) -> Vec<f64> {
    path.increments(step)
}

/// User-supplied diffusion coefficients for the non-affine case.
pub trait DiffusionHook: Send + Sync {
    /// `G_k(ϱ, m)`; only the first `dim` entries are read.
    fn coefficient(&self, k: usize, rho: f64, mom: [f64; 2], dim: usize) -> [f64; 2];
    /// Lipschitz bound `α_k`.
    fn lipschitz(&self, k: usize) -> f64;
}

#[derive(Clone)]
pub enum NoiseForm {
    /// `G_k(ϱ, m) = ϱ F_k + m H_k`
    Affine,
    Custom(Arc<dyn DiffusionHook>),
}

impl fmt::Debug for NoiseForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseForm::Affine => f.write_str("Affine"),
            NoiseForm::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseModel {
    f: Vec<f64>,
    h: Vec<f64>,
    /// Optional per-mode, per-component override of `F_k`.
    f_components: Option<Vec<[f64; 2]>>,
    /// Declared bound on `Σ_{k > K} α_k` for the discarded modes.
    tail_budget: f64,
    form: NoiseForm,
}

impl NoiseModel {
    pub fn affine(f: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        if f.len() != h.len() {
            return Err(Error::param(format!("F has {} modes but H has {}", f.len(), h.len())));
        }
        if f.iter().chain(&h).any(|v| !v.is_finite()) {
            return Err(Error::param("noise coefficients must be finite"));
        }
        Ok(NoiseModel { f, h, f_components: None, tail_budget: 0.0, form: NoiseForm::Affine })
    }

    /// `K` silent modes.
    pub fn off(modes: usize) -> Self {
        NoiseModel::affine(vec![0.0; modes], vec![0.0; modes]).expect("zeros are valid")
    }

    pub fn custom(modes: usize, hook: Arc<dyn DiffusionHook>) -> Self {
        NoiseModel {
            f: vec![0.0; modes],
            h: vec![0.0; modes],
            f_components: None,
            tail_budget: 0.0,
            form: NoiseForm::Custom(hook),
        }
    }

    pub fn with_tail_budget(mut self, budget: f64) -> Result<Self> {
        if !(budget >= 0.0 && budget.is_finite()) {
            return Err(Error::param("tail budget must be finite and nonnegative"));
        }
        self.tail_budget = budget;
        Ok(self)
    }

    pub fn with_f_components(mut self, comps: Vec<[f64; 2]>) -> Result<Self> {
        if comps.len() != self.f.len() {
            return Err(Error::param("one F component pair per mode is required"));
        }
        self.f_components = Some(comps);
        Ok(self)
    }

    /// Truncation level `K`.
    #[inline]
    pub fn modes(&self) -> usize {
        self.f.len()
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn form(&self) -> &NoiseForm {
        &self.form
    }

    pub fn tail_budget(&self) -> f64 {
        self.tail_budget
    }

    /// `α_k`; `|F_k| + |H_k|` for the affine form.
    pub fn alpha(&self) -> Vec<f64> {
        (0..self.modes())
            .map(|k| match &self.form {
                NoiseForm::Affine => {
                    let fk = match &self.f_components {
                        Some(c) => f64::max(abs(c[k][0]), abs(c[k][1])),
                        None => abs(self.f[k]),
                    };
                    fk + abs(self.h[k])
                }
                NoiseForm::Custom(hook) => hook.lipschitz(k),
            })
            .collect()
    }

    pub fn alpha_sum(&self) -> f64 {
        self.alpha().iter().sum()
    }

    pub fn is_silent(&self) -> bool {
        matches!(self.form, NoiseForm::Affine)
            && self.f.iter().chain(&self.h).all(|&v| v == 0.0)
            && self.f_components.as_ref().is_none_or(|c| c.iter().all(|v| v[0] == 0.0 && v[1] == 0.0))
    }

    /// `F_k` along component `axis`.
    #[inline]
    pub fn f_component(&self, k: usize, axis: usize) -> f64 {
        match &self.f_components {
            Some(c) => c[k][axis],
            None => self.f[k],
        }
    }

    /// Pointwise `G_k(ϱ, m)` with zero-based `k`.
    #[inline]
    pub fn coefficient(&self, k: usize, rho: f64, mom: [f64; 2], dim: usize) -> [f64; 2] {
        match &self.form {
            NoiseForm::Affine => {
                let mut out = [0.0; 2];
                for (a, o) in out.iter_mut().enumerate().take(dim) {
                    *o = rho * self.f_component(k, a) + mom[a] * self.h[k];
                }
                out
            }
            NoiseForm::Custom(hook) => hook.coefficient(k, rho, mom, dim),
        }
    }
}

#[inline]
pub(crate) fn cell_mom(mom: &VectorField, c: usize) -> [f64; 2] {
    let mut m = [0.0; 2];
    for (a, v) in m.iter_mut().enumerate().take(mom.grid().dim()) {
        *v = mom.component(a)[c];
    }
    m
}

/// `G_k(ϱ, ϱu)` as a vector field, `k` counted from 1.
pub fn eval_g(state: &State, model: &NoiseModel, k: usize) -> Result<VectorField> {
    if k == 0 || k > model.modes() {
        return Err(Error::usage(format!("mode {k} outside 1..={}", model.modes())));
    }
    let g = *state.grid();
    let mut out = VectorField::zeros(g);
    for c in 0..g.cells() {
        let v = model.coefficient(k - 1, state.rho.data()[c], cell_mom(&state.mom, c), g.dim());
        for (a, val) in v.iter().enumerate().take(g.dim()) {
            out.component_mut(a)[c] = *val;
        }
    }
    Ok(out)
}

/// Pointwise `½ Σ_k |G_k|²/ϱ`, the Itô correction density.
pub fn ito_correction_density(state: &State, model: &NoiseModel) -> Result<Vec<f64>> {
    let g = *state.grid();
    let dim = g.dim();
    let mut out = vec![0.0; g.cells()];
    for (c, o) in out.iter_mut().enumerate() {
        let rho = state.rho.data()[c];
        let m = cell_mom(&state.mom, c);
        let mut s = 0.0;
        for k in 0..model.modes() {
            let v = model.coefficient(k, rho, m, dim);
            for val in v.iter().take(dim) {
                s += val * val;
            }
        }
        if rho > 0.0 {
            *o = 0.5 * s / rho;
        } else if s != 0.0 {
            return Err(Error::VacuumInconsistency { index: c });
        }
    }
    Ok(out)
}

/// `½ ∫ Σ_k |G_k(ϱ, ϱu)|²/ϱ dx`.
pub fn ito_correction(state: &State, model: &NoiseModel) -> Result<f64> {
    Ok(crate::grid::integrate_raw(state.grid(), &ito_correction_density(state, model)?))
}

/// `Σ_k G_k(ϱ, ϱu) dW_k`.
pub fn noise_forcing_increment(state: &State, model: &NoiseModel, dw: &[f64]) -> Result<VectorField> {
    if dw.len() != model.modes() {
        return Err(Error::usage(format!("expected {} increments, got {}", model.modes(), dw.len())));
    }
    let g = *state.grid();
    let dim = g.dim();
    let mut out = VectorField::zeros(g);
    if model.is_silent() {
        return Ok(out);
    }
    for c in 0..g.cells() {
        let rho = state.rho.data()[c];
        let m = cell_mom(&state.mom, c);
        let mut acc = [0.0; 2];
        for (k, &w) in dw.iter().enumerate() {
            let v = model.coefficient(k, rho, m, dim);
            for a in 0..dim {
                acc[a] += v[a] * w;
            }
        }
        for (a, val) in acc.iter().enumerate().take(dim) {
            out.component_mut(a)[c] = *val;
        }
    }
    Ok(out)
}

//! Barotropic pressure law, pressure potential, the relative energy
//! functional and the coercivity machinery built on its Bregman integrand.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{integrate, Field, ScalarField, VectorField};
use crate::math::{abs, exp, expm1, ln, ln1p, powf};
use crate::State;

/// `p(ϱ) = a ϱ^γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureLaw {
    gamma: f64,
    a: f64,
}

impl PressureLaw {
    /// Power law under the standing hypothesis `γ > 3/2`.
    pub fn new(gamma: f64, a: f64) -> Result<Self> {
        if !(gamma > 1.5) {
            return Err(Error::param(alloc::format!("gamma > 3/2 required, got {gamma}")));
        }
        Self::relaxed(gamma, a)
    }

    /// Power law accepting any `γ > 1`, for low-dimensional experiments.
    pub fn relaxed(gamma: f64, a: f64) -> Result<Self> {
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(Error::param(alloc::format!("gamma must exceed 1, got {gamma}")));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::param(alloc::format!("pressure coefficient must be positive, got {a}")));
        }
        Ok(PressureLaw { gamma, a })
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn coefficient(&self) -> f64 {
        self.a
    }

    /// `lim p'(ϱ)/ϱ^{γ-1}`.
    pub fn p_infinity(&self) -> f64 {
        self.a * self.gamma
    }

    /// Law of the Mach-scaled system: `p/ε²`.
    pub fn scaled(&self, eps: f64) -> Self {
        PressureLaw { gamma: self.gamma, a: self.a / (eps * eps) }
    }

    #[inline]
    pub fn p(&self, rho: f64) -> f64 {
        self.a * powf(rho, self.gamma)
    }

    #[inline]
    pub fn dp(&self, rho: f64) -> f64 {
        self.a * self.gamma * powf(rho, self.gamma - 1.0)
    }

    #[inline]
    pub fn d2p(&self, rho: f64) -> f64 {
        self.a * self.gamma * (self.gamma - 1.0) * powf(rho, self.gamma - 2.0)
    }

    /// Pressure potential `H(ϱ) = ϱ ∫_0^ϱ p(z)/z² dz = a ϱ^γ/(γ-1)`.
    #[inline]
    pub fn h(&self, rho: f64) -> f64 {
        self.a * powf(rho, self.gamma) / (self.gamma - 1.0)
    }

    #[inline]
    pub fn dh(&self, rho: f64) -> f64 {
        self.a * self.gamma / (self.gamma - 1.0) * powf(rho, self.gamma - 1.0)
    }

    /// `H'' = p'/ϱ`.
    #[inline]
    pub fn d2h(&self, rho: f64) -> f64 {
        self.a * self.gamma * powf(rho, self.gamma - 2.0)
    }

    #[inline]
    pub fn d3h(&self, rho: f64) -> f64 {
        self.a * self.gamma * (self.gamma - 2.0) * powf(rho, self.gamma - 3.0)
    }

    /// `H(ϱ) − H'(r)(ϱ − r) − H(r)`, evaluated without cancellation.
    ///
    /// With `ϱ = r(1 + x)` this is `a r^γ/(γ−1) · [(1+x)^γ − 1 − γx]`; the
    /// bracket is summed as a binomial series for small `|x|`.
    pub fn bregman(&self, rho: f64, r: f64) -> f64 {
        let g = self.gamma;
        let x = rho / r - 1.0;
        let bracket = if abs(x) < 0.25 {
            let mut coef = g * (g - 1.0) / 2.0;
            let mut xp = x * x;
            let mut sum = 0.0;
            for j in 2..80 {
                let term = coef * xp;
                sum += term;
                if abs(term) <= 1e-18 * abs(sum) || coef == 0.0 {
                    break;
                }
                coef *= (g - j as f64) / (j as f64 + 1.0);
                xp *= x;
            }
            sum
        } else if rho == 0.0 {
            g - 1.0
        } else {
            expm1(g * ln1p(x)) - g * x
        };
        self.a * powf(r, g) / (g - 1.0) * bracket
    }

    /// `bregman(ϱ, r) / |ϱ − r|²`.
    pub fn bregman_ratio(&self, rho: f64, r: f64) -> f64 {
        let d = rho - r;
        self.bregman(rho, r) / (d * d)
    }
}

/// Pointwise `a ϱ^γ`; negative density is rejected with its cell index.
pub fn pressure(rho: &ScalarField, law: &PressureLaw) -> Result<ScalarField> {
    if let Some((index, &value)) = rho.data().iter().enumerate().find(|(_, &v)| !(v >= 0.0)) {
        return Err(Error::PositivityViolation { index, value });
    }
    Ok(rho.map(|r| law.p(r)))
}

pub fn pressure_potential(rho: f64, law: &PressureLaw) -> f64 {
    law.h(rho)
}

/// Kinetic mismatch `|m − ϱU|²/(2ϱ)` with the vacuum convention.
#[inline]
pub(crate) fn kinetic_mismatch(rho: f64, m: [f64; 2], big_u: [f64; 2], dim: usize, index: usize) -> Result<f64> {
    if rho > 0.0 {
        let mut s = 0.0;
        for a in 0..dim {
            let d = m[a] - rho * big_u[a];
            s += d * d;
        }
        Ok(0.5 * s / rho)
    } else if (0..dim).all(|a| m[a] == 0.0) {
        Ok(0.0)
    } else {
        Err(Error::VacuumInconsistency { index })
    }
}

/// Integrand of the relative energy `½ϱ|u−U|² + ε⁻²[H(ϱ) − H'(r)(ϱ−r) − H(r)]`.
pub fn relative_energy_density(
    state: &State,
    r: &ScalarField,
    big_u: &VectorField,
    law: &PressureLaw,
    eps: f64,
) -> Result<ScalarField> {
    let g = *state.grid();
    if r.grid() != &g || big_u.grid() != &g {
        return Err(Error::usage("reference fields live on a different grid"));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::param(alloc::format!("eps must lie in (0, 1], got {eps}")));
    }
    let inv_eps2 = 1.0 / (eps * eps);
    let dim = g.dim();
    let mut out = ScalarField::zeros(g);
    for c in 0..g.cells() {
        let rho = state.rho.data()[c];
        let rc = r.data()[c];
        if !(rc > 0.0) {
            return Err(Error::ReferencePositivity { index: c, value: rc });
        }
        if !(rho >= 0.0) {
            return Err(Error::PositivityViolation { index: c, value: rho });
        }
        let mut m = [0.0; 2];
        let mut uu = [0.0; 2];
        for a in 0..dim {
            m[a] = state.mom.component(a)[c];
            uu[a] = big_u.component(a)[c];
        }
        let kin = kinetic_mismatch(rho, m, uu, dim, c)?;
        out.data_mut()[c] = kin + inv_eps2 * law.bregman(rho, rc);
    }
    Ok(out)
}

/// `ℰ(ϱ, u | r, U)`; `eps = 1` is the unscaled functional.
pub fn relative_energy(
    state: &State,
    r: &ScalarField,
    big_u: &VectorField,
    law: &PressureLaw,
    eps: f64,
) -> Result<f64> {
    Ok(integrate(&relative_energy_density(state, r, big_u, law, eps)?))
}

/// Density cut-off `Φ_M` splitting quantities into essential and residual parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssResSplit {
    rho_lower: f64,
    rho_upper: f64,
    transition_width: f64,
}

impl EssResSplit {
    /// Band `[rho_lower, rho_upper]` with the default blend width `0.2 · rho_lower`.
    pub fn new(rho_lower: f64, rho_upper: f64) -> Result<Self> {
        Self::with_width(rho_lower, rho_upper, 0.2 * rho_lower)
    }

    pub fn with_width(rho_lower: f64, rho_upper: f64, transition_width: f64) -> Result<Self> {
        if !(rho_lower > 0.0 && rho_lower < rho_upper) {
            return Err(Error::param("need 0 < rho_lower < rho_upper"));
        }
        if !(transition_width > 0.0 && transition_width < rho_lower) {
            return Err(Error::param("transition width must lie in (0, rho_lower)"));
        }
        Ok(EssResSplit { rho_lower, rho_upper, transition_width })
    }

    pub fn rho_lower(&self) -> f64 {
        self.rho_lower
    }

    pub fn rho_upper(&self) -> f64 {
        self.rho_upper
    }

    /// `Φ_M(ϱ)`: 1 on the band, 0 beyond one transition width, C¹ in between.
    pub fn weight(&self, rho: f64) -> f64 {
        let w = self.transition_width;
        let s = if rho >= self.rho_lower && rho <= self.rho_upper {
            return 1.0;
        } else if rho < self.rho_lower {
            (rho - (self.rho_lower - w)) / w
        } else {
            ((self.rho_upper + w) - rho) / w
        };
        if s <= 0.0 {
            0.0
        } else {
            s * s * (3.0 - 2.0 * s)
        }
    }
}

fn split_values(h: &[f64], rho: &[f64], split: &EssResSplit) -> (Vec<f64>, Vec<f64>) {
    let mut ess = Vec::with_capacity(h.len());
    let mut res = Vec::with_capacity(h.len());
    for (&hv, &r) in h.iter().zip(rho) {
        let mut e = split.weight(r) * hv;
        let rv = hv - e;
        // Sterbenz: one side of the subtraction is exact, so this makes e + rv == hv
        if e + rv != hv {
            e = hv - rv;
        }
        ess.push(e);
        res.push(rv);
    }
    (ess, res)
}

/// `([h]_ess, [h]_res) = (Φ_M(ϱ) h, h − Φ_M(ϱ) h)`; the parts add back to `h` exactly.
pub fn ess_res_split(h: &Field, rho: &ScalarField, split: &EssResSplit) -> Result<(Field, Field)> {
    match h {
        Field::Scalar(s) => {
            if s.grid() != rho.grid() {
                return Err(Error::usage("shape mismatch in ess/res split"));
            }
            let (e, r) = split_values(s.data(), rho.data(), split);
            Ok((
                Field::Scalar(ScalarField::from_vec(*s.grid(), e)?),
                Field::Scalar(ScalarField::from_vec(*s.grid(), r)?),
            ))
        }
        Field::Vector(v) => {
            if v.grid() != rho.grid() {
                return Err(Error::usage("shape mismatch in ess/res split"));
            }
            let (mut es, mut rs) = (Vec::new(), Vec::new());
            for c in v.components() {
                let (e, r) = split_values(c, rho.data(), split);
                es.push(e);
                rs.push(r);
            }
            Ok((
                Field::Vector(VectorField::from_components(*v.grid(), es)?),
                Field::Vector(VectorField::from_components(*v.grid(), rs)?),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoercivityMode {
    /// `inf B(ϱ,r)/|ϱ−r|²` over `δ < ϱ, r < 1/δ`.
    QuadraticBand,
    /// `inf B(ϱ,r)/(1+ϱ^γ)` over `δ < r < 1/δ`, `ϱ ∉ [δ/2, 2/δ]`.
    ResidualGamma,
}

/// Points per axis of the brute-force search.
pub const COERCIVITY_GRID: usize = 401;

fn log_space(lo: f64, hi: f64, n: usize, open: bool) -> impl Iterator<Item = f64> {
    let (a, b) = (ln(lo), ln(hi));
    // open interval: drop both endpoints
    let (start, end, count) = if open { (1, n + 1, n + 2) } else { (0, n, n) };
    (start..end).map(move |i| exp(a + (b - a) * i as f64 / (count - 1) as f64))
}

/// Brute-force coercivity constant `c(δ)` of the Bregman integrand.
pub fn coercivity_constant(delta: f64, law: &PressureLaw, mode: CoercivityMode) -> Result<f64> {
    coercivity_constant_with(delta, law, mode, COERCIVITY_GRID)
}

pub fn coercivity_constant_with(delta: f64, law: &PressureLaw, mode: CoercivityMode, points: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(alloc::format!("delta must lie in (0, 1), got {delta}")));
    }
    let mut best = f64::INFINITY;
    match mode {
        CoercivityMode::QuadraticBand => {
            for r in log_space(delta, 1.0 / delta, points, true) {
                for rho in log_space(delta, 1.0 / delta, points, true) {
                    if rho != r {
                        best = f64::min(best, law.bregman_ratio(rho, r));
                    }
                }
            }
        }
        CoercivityMode::ResidualGamma => {
            let below = log_space(delta * 1e-4, delta / 2.0, points / 2, true);
            let above = log_space(2.0 / delta, 1e4 / delta, points / 2, true);
            let rhos: Vec<f64> = below.chain(above).collect();
            for r in log_space(delta, 1.0 / delta, points, true) {
                for &rho in &rhos {
                    best = f64::min(best, law.bregman(rho, r) / (1.0 + powf(rho, law.gamma())));
                }
            }
        }
    }
    if !(best > 0.0) {
        return Err(Error::CoercivityViolation { value: best });
    }
    Ok(best)
}

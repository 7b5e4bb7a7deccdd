//! Energy and relative-energy bookkeeping.
//!
//! Ledgers store cumulative sums, so every inequality is checked in interval
//! form between two rows rather than against a weight function in time.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::cns::{contract, stress_from_jacobian, ModelParams};
use crate::error::{Error, Result};
use crate::grid::{integrate_raw, jacobian, partial_raw, ScalarField, VectorField};
use crate::math::{abs, exp};
use crate::noise::{cell_mom, WienerPath};
use crate::stats::EnsembleStats;
use crate::thermo::{kinetic_mismatch, PressureLaw};
use crate::State;

/// `(∫|m|²/(2ϱ), ε⁻²∫H(ϱ))`.
pub fn energy(state: &State, law: &PressureLaw, eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::param(format!("eps must lie in (0, 1], got {eps}")));
    }
    let g = state.grid();
    let dim = g.dim();
    let mut kin = 0.0;
    let mut pot = 0.0;
    for c in 0..g.cells() {
        let rho = state.rho.data()[c];
        if !(rho >= 0.0) {
            return Err(Error::PositivityViolation { index: c, value: rho });
        }
        kin += kinetic_mismatch(rho, cell_mom(&state.mom, c), [0.0; 2], dim, c)?;
        pot += law.h(rho);
    }
    let vol = g.cell_volume();
    Ok((kin * vol, pot * vol / (eps * eps)))
}

/// Cumulative relative-energy columns attached to a ledger row.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelativeRow {
    pub rel_energy: f64,
    /// `∫ R dt`
    pub remainder_cum: f64,
    /// `∫∫ (S(∇u) − S(∇U)):(∇u − ∇U)`
    pub rel_dissipation_cum: f64,
    /// Cumulative samples of `M1..M5`.
    pub martingales: [f64; 5],
}

impl RelativeRow {
    /// Sample of `M_RE = M_E − M1 − M2 + M3 + M4 − M5` given the `M_E` sample.
    pub fn martingale_sample(&self, stoch_cum: f64) -> f64 {
        let m = &self.martingales;
        stoch_cum - m[0] - m[1] + m[2] + m[3] - m[4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LedgerRow {
    pub t: f64,
    pub step: u64,
    pub mass: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
    pub dissipation_cum: f64,
    pub ito_cum: f64,
    /// `∫ u·Σ G_k dW_k` accumulated: one path sample of the energy martingale.
    pub stoch_cum: f64,
    pub relative: Option<RelativeRow>,
}

/// Column order shared by ledger exports and ensemble statistics.
pub const LEDGER_COLUMNS: [&str; 18] = [
    "t",
    "mass",
    "kinetic",
    "potential",
    "total",
    "dissipation_cum",
    "ito_cum",
    "stoch_cum",
    "rel_energy",
    "remainder_cum",
    "m1",
    "m2",
    "m3",
    "m4",
    "m5",
    "energy_residual",
    "rei_residual",
    "rel_dissipation_cum",
];

impl LedgerRow {
    /// Values in [`LEDGER_COLUMNS`] order; residuals are taken from `origin`
    /// and absent relative columns are `NaN`.
    pub fn values(&self, origin: &LedgerRow) -> [f64; 18] {
        let nan = f64::NAN;
        let rel = self.relative;
        let m = rel.map(|r| r.martingales).unwrap_or([nan; 5]);
        [
            self.t,
            self.mass,
            self.kinetic,
            self.potential,
            self.total,
            self.dissipation_cum,
            self.ito_cum,
            self.stoch_cum,
            rel.map_or(nan, |r| r.rel_energy),
            rel.map_or(nan, |r| r.remainder_cum),
            m[0],
            m[1],
            m[2],
            m[3],
            m[4],
            energy_residual_rows(origin, self),
            if rel.is_some() && origin.relative.is_some() { rei_residual_rows(origin, self) } else { nan },
            rel.map_or(nan, |r| r.rel_dissipation_cum),
        ]
    }
}

fn energy_residual_rows(s: &LedgerRow, t: &LedgerRow) -> f64 {
    (t.total - s.total) + (t.dissipation_cum - s.dissipation_cum) - (t.ito_cum - s.ito_cum) - (t.stoch_cum - s.stoch_cum)
}

fn rei_residual_rows(s: &LedgerRow, t: &LedgerRow) -> f64 {
    let (a, b) = match (s.relative, t.relative) {
        (Some(a), Some(b)) => (a, b),
        _ => return f64::NAN,
    };
    (b.rel_energy - a.rel_energy) + (b.rel_dissipation_cum - a.rel_dissipation_cum)
        - (b.remainder_cum - a.remainder_cum)
        - (b.martingale_sample(t.stoch_cum) - a.martingale_sample(s.stoch_cum))
}

fn check_indices(len: usize, s: usize, t: usize) -> Result<()> {
    if s > t || t >= len {
        return Err(Error::usage(format!("row indices {s}..{t} invalid for a ledger of {len} rows")));
    }
    Ok(())
}

/// `[E(t) − E(s)] + D(s,t) − I(s,t) − M_E(s,t)`; nonpositive up to
/// discretisation error for a dissipative solution.
pub fn energy_residual(ledger: &[LedgerRow], s: usize, t: usize) -> Result<f64> {
    check_indices(ledger.len(), s, t)?;
    Ok(energy_residual_rows(&ledger[s], &ledger[t]))
}

/// `[ℰ(t) − ℰ(s)] + ∫(S(∇u)−S(∇U)):(∇u−∇U) − ∫R − M_RE(s,t)`.
pub fn rei_residual(ledger: &[LedgerRow], s: usize, t: usize) -> Result<f64> {
    check_indices(ledger.len(), s, t)?;
    if ledger[s].relative.is_none() || ledger[t].relative.is_none() {
        return Err(Error::usage("ledger rows carry no relative-energy columns"));
    }
    Ok(rei_residual_rows(&ledger[s], &ledger[t]))
}

/// A test pair `(r, U)` with its drift and per-mode diffusion at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSnapshot {
    pub t: f64,
    pub r: ScalarField,
    pub u: VectorField,
    pub drift_r: ScalarField,
    pub drift_u: VectorField,
    pub diff_r: Vec<ScalarField>,
    pub diff_u: Vec<VectorField>,
    /// Declared bounds `r̲ ≤ r ≤ r̄`.
    pub bounds: (f64, f64),
}

impl ReferenceSnapshot {
    /// Constant density and zero velocity, with no drift or diffusion.
    pub fn at_rest(grid: crate::grid::Grid, r: f64, modes: usize) -> Self {
        ReferenceSnapshot {
            t: 0.0,
            r: ScalarField::constant(grid, r),
            u: VectorField::zeros(grid),
            drift_r: ScalarField::zeros(grid),
            drift_u: VectorField::zeros(grid),
            diff_r: vec![ScalarField::zeros(grid); modes],
            diff_u: vec![VectorField::zeros(grid); modes],
            bounds: (r, r),
        }
    }

    pub fn check_bounds(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        for (i, &v) in self.r.data().iter().enumerate() {
            if !(v >= lo && v <= hi && v > 0.0) {
                return Err(Error::ReferenceBound { index: i, value: v });
            }
        }
        Ok(())
    }

    fn check_shape(&self, state: &State, modes: usize) -> Result<()> {
        let g = state.grid();
        if self.r.grid() != g || self.u.grid() != g || self.drift_r.grid() != g || self.drift_u.grid() != g {
            return Err(Error::usage("reference fields live on a different grid"));
        }
        if self.diff_r.len() != modes || self.diff_u.len() != modes {
            return Err(Error::usage(format!("reference carries diffusion for {} modes, expected {modes}", self.diff_r.len())));
        }
        Ok(())
    }
}

/// The terms of the remainder `R`, in the order they are summed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RemainderTerms {
    /// `∫ S(∇U):(∇U − ∇u)`
    pub viscous: f64,
    /// `∫ ϱ(D U + u·∇U)·(U − u)`
    pub inertial: f64,
    /// `∫ (r − ϱ)H''(r) D r + ∇H'(r)·(rU − ϱu)`
    pub density: f64,
    /// `−∫ div U (p(ϱ) − p(r))`
    pub pressure: f64,
    /// `½Σ ∫ ϱ|G_k/ϱ − 𝔻U_k|²`
    pub noise_velocity: f64,
    /// `−½Σ ∫ ϱH'''(r)|𝔻r_k|²`
    pub noise_density_h: f64,
    /// `½Σ ∫ p''(r)|𝔻r_k|²`
    pub noise_density_p: f64,
}

impl RemainderTerms {
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.viscous,
            self.inertial,
            self.density,
            self.pressure,
            self.noise_velocity,
            self.noise_density_h,
            self.noise_density_p,
        ]
    }

    pub fn total(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

/// The remainder `R(ϱ, u | r, U)` evaluated on the grid. The law and
/// viscosities are those of `params` (with the Mach scaling applied).
pub fn remainder(state: &State, reference: &ReferenceSnapshot, params: &ModelParams) -> Result<RemainderTerms> {
    let model = &params.noise;
    reference.check_shape(state, model.modes())?;
    reference.check_bounds()?;
    let g = *state.grid();
    let dim = g.dim();
    let law = params.scaled_law();
    let vol = g.cell_volume();
    let vel = state.velocity();
    let ju = jacobian(&vel);
    let jr = jacobian(&reference.u);
    let s_ref = stress_from_jacobian(&jr, params.mu, params.eta);
    let mut dj = jr.clone();
    for i in 0..dim {
        for j in 0..dim {
            for c in 0..g.cells() {
                dj[i][j][c] -= ju[i][j][c];
            }
        }
    }
    let viscous = integrate_raw(&g, contract(&g, &s_ref, &dj).data());
    let dh_r: Vec<f64> = reference.r.data().iter().map(|&r| law.dh(r)).collect();
    let grad_dh: Vec<Vec<f64>> = (0..dim).map(|a| partial_raw(&g, &dh_r, a)).collect();
    let mut inertial = 0.0;
    let mut density = 0.0;
    let mut pressure = 0.0;
    let mut noise_velocity = 0.0;
    let mut noise_h = 0.0;
    let mut noise_p = 0.0;
    for c in 0..g.cells() {
        let rho = state.rho.data()[c];
        let r = reference.r.data()[c];
        let m = cell_mom(&state.mom, c);
        let mut divu_ref = 0.0;
        for a in 0..dim {
            let uu = reference.u.component(a)[c];
            let ua = vel.component(a)[c];
            let mut adv = reference.drift_u.component(a)[c];
            for b in 0..dim {
                adv += vel.component(b)[c] * jr[a][b][c];
            }
            inertial += rho * adv * (uu - ua);
            density += grad_dh[a][c] * (r * uu - m[a]);
            divu_ref += jr[a][a][c];
        }
        density += (r - rho) * law.d2h(r) * reference.drift_r.data()[c];
        pressure -= divu_ref * (law.p(rho) - law.p(r));
        let (h3, p2) = (law.d3h(r), law.d2p(r));
        for k in 0..model.modes() {
            let gk = model.coefficient(k, rho, m, dim);
            let mut sq = 0.0;
            for a in 0..dim {
                let d = gk[a] - rho * reference.diff_u[k].component(a)[c];
                sq += d * d;
            }
            if rho > 0.0 {
                noise_velocity += 0.5 * sq / rho;
            } else if sq != 0.0 {
                return Err(Error::VacuumInconsistency { index: c });
            }
            let dr = reference.diff_r[k].data()[c];
            noise_h -= 0.5 * rho * h3 * dr * dr;
            noise_p += 0.5 * p2 * dr * dr;
        }
    }
    Ok(RemainderTerms {
        viscous,
        inertial: inertial * vol,
        density: density * vol,
        pressure: pressure * vol,
        noise_velocity: noise_velocity * vol,
        noise_density_h: noise_h * vol,
        noise_density_p: noise_p * vol,
    })
}

/// `∫ (S(∇u) − S(∇U)):(∇u − ∇U)`.
pub fn relative_dissipation(u: &VectorField, big_u: &VectorField, mu: f64, eta: f64) -> f64 {
    let mut d = u.clone();
    d.axpy(-1.0, big_u);
    let jd = jacobian(&d);
    integrate_raw(u.grid(), contract(u.grid(), &stress_from_jacobian(&jd, mu, eta), &jd).data())
}

/// One-step samples of `(M_E, M1..M5)` for increments `dw`, evaluated at the
/// start of the step.
pub fn martingale_increments(
    state: &State,
    reference: &ReferenceSnapshot,
    params: &ModelParams,
    dw: &[f64],
) -> Result<(f64, [f64; 5])> {
    let model = &params.noise;
    reference.check_shape(state, model.modes())?;
    if dw.len() != model.modes() {
        return Err(Error::usage(format!("expected {} increments, got {}", model.modes(), dw.len())));
    }
    let g = *state.grid();
    let dim = g.dim();
    let law = params.scaled_law();
    let mut me = 0.0;
    let mut m = [0.0; 5];
    if dw.iter().all(|&w| w == 0.0) {
        return Ok((me, m));
    }
    for c in 0..g.cells() {
        let rho = state.rho.data()[c];
        let r = reference.r.data()[c];
        let mom = cell_mom(&state.mom, c);
        let mut gsum = [0.0; 2];
        let mut du = [0.0; 2];
        let mut dr = 0.0;
        for (k, &w) in dw.iter().enumerate() {
            let gk = model.coefficient(k, rho, mom, dim);
            for a in 0..dim {
                gsum[a] += gk[a] * w;
                du[a] += reference.diff_u[k].component(a)[c] * w;
            }
            dr += reference.diff_r[k].data()[c] * w;
        }
        for a in 0..dim {
            let uu = reference.u.component(a)[c];
            let ua = if rho > 0.0 { mom[a] / rho } else { 0.0 };
            me += ua * gsum[a];
            m[0] += uu * gsum[a];
            m[1] += mom[a] * du[a];
            m[2] += rho * uu * du[a];
        }
        m[3] += law.dp(r) * dr;
        m[4] += rho * law.d2h(r) * dr;
    }
    let vol = g.cell_volume();
    for v in m.iter_mut() {
        *v *= vol;
    }
    Ok((me * vol, m))
}

/// The relative energy assembled from its expansion
/// `E − ∫ϱu·U + ∫½ϱ|U|² − ∫ϱH'(r) + ∫[H'(r)r − H(r)]`.
pub fn relative_energy_expanded(
    state: &State,
    r: &ScalarField,
    big_u: &VectorField,
    law: &PressureLaw,
    eps: f64,
) -> Result<f64> {
    let (kin, pot) = energy(state, law, eps)?;
    let g = state.grid();
    let dim = g.dim();
    let scaled = law.scaled(eps);
    let mut cross = 0.0;
    let mut ref_kin = 0.0;
    let mut lin = 0.0;
    let mut shift = 0.0;
    for c in 0..g.cells() {
        let rho = state.rho.data()[c];
        let rc = r.data()[c];
        if !(rc > 0.0) {
            return Err(Error::ReferencePositivity { index: c, value: rc });
        }
        for a in 0..dim {
            let uu = big_u.component(a)[c];
            cross += state.mom.component(a)[c] * uu;
            ref_kin += 0.5 * rho * uu * uu;
        }
        lin += rho * scaled.dh(rc);
        shift += scaled.dh(rc) * rc - scaled.h(rc);
    }
    let vol = g.cell_volume();
    Ok(kin + pot + (-cross + ref_kin - lin + shift) * vol)
}

/// `E0 · exp(cM · t)`.
pub fn gronwall_envelope(e0: f64, cm: f64, t: f64) -> f64 {
    if e0 == 0.0 {
        return 0.0;
    }
    e0 * exp(cm * t)
}

/// Ensemble estimate of a martingale column.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleEstimate {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub ci: Vec<f64>,
    /// `|mean| ≤ ci` at every time.
    pub verdict: bool,
}

/// Mean and half-width of `column` over the ensemble; at least 16 members.
pub fn martingale_estimate(stats: &EnsembleStats, column: &str) -> Result<MartingaleEstimate> {
    if stats.n_members < 16 {
        return Err(Error::usage(format!("martingale estimate needs at least 16 members, got {}", stats.n_members)));
    }
    let col = stats.column(column).ok_or_else(|| Error::usage(format!("unknown column {column}")))?;
    let verdict = col.mean.iter().zip(col.ci).all(|(m, c)| abs(*m) <= *c);
    Ok(MartingaleEstimate { times: stats.times.clone(), mean: col.mean.to_vec(), ci: col.ci.to_vec(), verdict })
}

/// Polynomial of degree at most four.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polynomial {
    coeffs: [f64; 5],
}

impl Polynomial {
    /// Coefficients in increasing degree.
    pub fn new(coeffs: &[f64]) -> Result<Self> {
        if coeffs.len() > 5 {
            return Err(Error::param("polynomial degree is limited to four"));
        }
        let mut c = [0.0; 5];
        c[..coeffs.len()].copy_from_slice(coeffs);
        Ok(Polynomial { coeffs: c })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn d1(&self, x: f64) -> f64 {
        let c = &self.coeffs;
        c[1] + x * (2.0 * c[2] + x * (3.0 * c[3] + x * 4.0 * c[4]))
    }

    pub fn d2(&self, x: f64) -> f64 {
        let c = &self.coeffs;
        2.0 * c[2] + x * (6.0 * c[3] + x * 12.0 * c[4])
    }
}

/// Scalar toy process `dX = (aX + b) dt + Σ (σ_k X + c_k) dW_k` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyProcess {
    pub rate: f64,
    pub forcing: ScalarField,
    pub vol: Vec<f64>,
    pub shift: Vec<ScalarField>,
}

impl ToyProcess {
    #[inline]
    fn drift(&self, x: f64, c: usize) -> f64 {
        self.rate * x + self.forcing.data()[c]
    }

    #[inline]
    fn diffusion(&self, k: usize, x: f64, c: usize) -> f64 {
        self.vol[k] * x + self.shift[k].data()[c]
    }
}

/// Terminal residual of the Itô product rule
/// `d∫sQ(r) = ∫[sQ'(r)Dr + ½ΣsQ''(r)|𝔻r_k|² + Q(r)Ds + ΣQ'(r)𝔻s_k𝔻r_k]dt + d𝕄`
/// for Euler–Maruyama paths of two toy processes, each step spanning
/// `base_per_step` base steps of `path`.
#[allow(clippy::too_many_arguments)]
pub fn ito_product_check(
    s0: &ScalarField,
    s_proc: &ToyProcess,
    r0: &ScalarField,
    r_proc: &ToyProcess,
    q: &Polynomial,
    path: &WienerPath,
    base_per_step: u64,
    steps: u64,
) -> Result<f64> {
    let k_modes = path.modes;
    for p in [s_proc, r_proc] {
        if p.vol.len() != k_modes || p.shift.len() != k_modes {
            return Err(Error::usage("toy process mode count differs from the Wiener path"));
        }
    }
    if s0.grid() != r0.grid() || base_per_step == 0 {
        return Err(Error::usage("toy processes need a shared grid and a positive step"));
    }
    let g = *s0.grid();
    let dt = base_per_step as f64 * path.dt;
    let mut s = s0.data().to_vec();
    let mut r = r0.data().to_vec();
    let integral = |s: &[f64], r: &[f64]| integrate_raw(&g, &s.iter().zip(r).map(|(a, b)| a * q.eval(*b)).collect::<Vec<_>>());
    let start = integral(&s, &r);
    let mut predicted = 0.0;
    for n in 0..steps {
        let dw = path.increments_over(n * base_per_step, base_per_step);
        let mut acc = 0.0;
        for c in 0..g.cells() {
            let (sv, rv) = (s[c], r[c]);
            let (q0, q1, q2) = (q.eval(rv), q.d1(rv), q.d2(rv));
            let (ds, dr) = (s_proc.drift(sv, c), r_proc.drift(rv, c));
            let mut drift = sv * q1 * dr + q0 * ds;
            let mut mart = 0.0;
            let mut ns = sv + dt * ds;
            let mut nr = rv + dt * dr;
            for (k, &w) in dw.iter().enumerate() {
                let bs = s_proc.diffusion(k, sv, c);
                let br = r_proc.diffusion(k, rv, c);
                drift += 0.5 * sv * q2 * br * br + q1 * bs * br;
                mart += (sv * q1 * br + q0 * bs) * w;
                ns += bs * w;
                nr += br * w;
            }
            acc += drift * dt + mart;
            s[c] = ns;
            r[c] = nr;
        }
        predicted += acc * g.cell_volume();
    }
    Ok(integral(&s, &r) - start - predicted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::math::{cos, sin, PI};
    use crate::noise::NoiseModel;
    use crate::thermo::relative_energy;
    use proptest::prelude::*;

    fn law2() -> PressureLaw {
        PressureLaw::new(2.0, 1.0).unwrap()
    }

    fn row(t: f64, total: f64, diss: f64, ito: f64, stoch: f64) -> LedgerRow {
        LedgerRow { t, total, kinetic: total, dissipation_cum: diss, ito_cum: ito, stoch_cum: stoch, ..Default::default() }
    }

    #[test]
    fn energy_examples() {
        let g = Grid::torus(1, 16).unwrap();
        let (k, p) = energy(&State::at_rest(g, 1.0), &law2(), 1.0).unwrap();
        assert_eq!(k, 0.0);
        assert!((p - 2.0).abs() < 1e-14);
        let rho = ScalarField::from_fn(g, |x| 1.0 + 0.3 * sin(PI * x[0]));
        let vel = VectorField::from_fn(g, |x| [cos(PI * x[0]), 0.0]);
        let s1 = State::from_velocity(0.0, rho.clone(), &vel).unwrap();
        let s3 = State::from_velocity(0.0, rho, &vel.scaled(3.0)).unwrap();
        let (k1, _) = energy(&s1, &law2(), 1.0).unwrap();
        let (k3, _) = energy(&s3, &law2(), 1.0).unwrap();
        assert!((k3 - 9.0 * k1).abs() < 1e-13 * k3);
        let (_, ph) = energy(&s1, &law2(), 0.5).unwrap();
        let (_, p1) = energy(&s1, &law2(), 1.0).unwrap();
        assert!((ph - 4.0 * p1).abs() < 1e-13 * ph);
    }

    #[test]
    fn energy_residual_examples() {
        let ledger = [row(0.0, 2.0, 0.0, 0.0, 0.0), row(0.1, 1.9, 0.05, 0.02, 0.01), row(0.2, 1.8, 0.1, 0.03, -0.01)];
        assert_eq!(energy_residual(&ledger, 1, 1).unwrap(), 0.0);
        let r = energy_residual(&ledger, 0, 2).unwrap();
        assert!((r - (-0.2 + 0.1 - 0.03 + 0.01)).abs() < 1e-15);
        assert!(energy_residual(&ledger, 2, 1).is_err());
        assert!(energy_residual(&ledger, 0, 3).is_err());
        assert!(rei_residual(&ledger, 0, 1).is_err());
    }

    #[test]
    fn remainder_vanishes_at_equilibrium() {
        let g = Grid::torus(2, 8).unwrap();
        let params = ModelParams::new(law2(), 0.1, 0.0, 1.0, NoiseModel::off(2)).unwrap();
        let reference = ReferenceSnapshot::at_rest(g, 1.5, 2);
        let terms = remainder(&State::at_rest(g, 1.5), &reference, &params).unwrap();
        assert!(terms.as_array().iter().all(|&v| v == 0.0));
        assert_eq!(terms.total(), 0.0);
    }

    #[test]
    fn remainder_pressure_term_isolated() {
        // U = (c x, 0) has central divergence c away from the periodic seam; the
        // density matches r = 1 near the seam, so the term is −c∫(p(ϱ) − p(r))
        let g = Grid::torus(1, 32).unwrap();
        let c = 0.7;
        let u = VectorField::from_fn(g, |x| [c * x[0], 0.0]);
        let rho = ScalarField::from_fn(g, |x| 1.0 + 0.2 * cos(PI * x[0]).max(0.0).powi(2));
        let state = State::from_velocity(0.0, rho.clone(), &u).unwrap();
        let mut reference = ReferenceSnapshot::at_rest(g, 1.0, 1);
        reference.u = u;
        reference.bounds = (0.5, 2.0);
        let params = ModelParams::new(law2(), 0.0, 0.0, 1.0, NoiseModel::off(1)).unwrap();
        let terms = remainder(&state, &reference, &params).unwrap();
        let hand = -c * rho.data().iter().map(|r| r * r - 1.0).sum::<f64>() * g.dx();
        assert!((terms.pressure - hand).abs() < 1e-13, "{} vs {hand}", terms.pressure);
        // velocity equals the reference up to the roundoff of (ϱu)/ϱ
        assert!(terms.inertial.abs() < 1e-15);
        assert!(terms.viscous.abs() < 1e-15);
        assert!(terms.noise_velocity.abs() < 1e-15);
    }

    #[test]
    fn remainder_rejects_out_of_bounds_reference() {
        let g = Grid::torus(1, 8).unwrap();
        let params = ModelParams::new(law2(), 0.1, 0.0, 1.0, NoiseModel::off(1)).unwrap();
        let mut reference = ReferenceSnapshot::at_rest(g, 1.0, 1);
        reference.r.data_mut()[2] = 3.0;
        assert!(matches!(
            remainder(&State::at_rest(g, 1.0), &reference, &params),
            Err(Error::ReferenceBound { index: 2, .. })
        ));
    }

    #[test]
    fn twin_noise_term_vanishes() {
        // 𝔻U_k = G_k(r, rU)/r for the twin; with ϱ = r and u = U the noise term is zero
        let g = Grid::torus(1, 16).unwrap();
        let rho = ScalarField::from_fn(g, |x| 1.0 + 0.3 * sin(PI * x[0]));
        let vel = VectorField::from_fn(g, |x| [0.5 * cos(PI * x[0]), 0.0]);
        let state = State::from_velocity(0.0, rho.clone(), &vel).unwrap();
        let noise = NoiseModel::affine(vec![0.4, -0.3], vec![0.2, 0.1]).unwrap();
        let params = ModelParams::new(law2(), 0.1, 0.0, 1.0, noise.clone()).unwrap();
        let mut reference = ReferenceSnapshot::at_rest(g, 1.0, 2);
        reference.r = rho;
        reference.u = vel.clone();
        reference.bounds = (0.5, 2.0);
        reference.diff_u = (1..=2)
            .map(|k| crate::noise::eval_g(&state, &noise, k).unwrap().div_scalar(&state.rho))
            .collect();
        let terms = remainder(&state, &reference, &params).unwrap();
        assert!(terms.noise_velocity.abs() < 1e-28);
        assert!(terms.viscous.abs() < 1e-14);
    }

    #[test]
    fn expansion_matches_direct_relative_energy() {
        let g = Grid::torus(2, 8).unwrap();
        let rho = ScalarField::from_fn(g, |x| 1.0 + 0.4 * sin(PI * x[0]) * cos(PI * x[1]));
        let vel = VectorField::from_fn(g, |x| [sin(PI * x[1]), 0.3 * cos(PI * x[0])]);
        let state = State::from_velocity(0.0, rho, &vel).unwrap();
        let r = ScalarField::from_fn(g, |x| 1.3 + 0.2 * cos(PI * x[0]));
        let big_u = VectorField::from_fn(g, |x| [0.2, sin(PI * x[0])]);
        for eps in [1.0, 0.3] {
            let direct = relative_energy(&state, &r, &big_u, &law2(), eps).unwrap();
            let expanded = relative_energy_expanded(&state, &r, &big_u, &law2(), eps).unwrap();
            assert!((direct - expanded).abs() < 1e-10 * direct, "{direct} vs {expanded}");
        }
    }

    #[test]
    fn gronwall_examples() {
        assert_eq!(gronwall_envelope(0.0, 3.0, 10.0), 0.0);
        assert_eq!(gronwall_envelope(0.25, 0.0, 10.0), 0.25);
        assert!((gronwall_envelope(1.0, 2.0, 1.0) - 7.389_056_098_930_65).abs() < 1e-12);
    }

    #[test]
    fn polynomial_derivatives() {
        let q = Polynomial::new(&[1.0, -2.0, 0.5, 0.25, -0.1]).unwrap();
        for x in [-1.3, 0.0, 0.7, 2.1] {
            let h = 1e-5;
            let fd1 = (q.eval(x + h) - q.eval(x - h)) / (2.0 * h);
            let fd2 = (q.eval(x + h) - 2.0 * q.eval(x) + q.eval(x - h)) / (h * h);
            assert!((fd1 - q.d1(x)).abs() < 1e-8);
            assert!((fd2 - q.d2(x)).abs() < 1e-4);
        }
        assert!(Polynomial::new(&[0.0; 6]).is_err());
    }

    fn toy(g: Grid, rate: f64, b: f64, vol: f64, shift: f64) -> ToyProcess {
        ToyProcess {
            rate,
            forcing: ScalarField::from_fn(g, |x| b * (1.0 + 0.5 * sin(PI * x[0]))),
            vol: vec![vol],
            shift: vec![ScalarField::constant(g, shift)],
        }
    }

    #[test]
    fn product_rule_deterministic_case() {
        let g = Grid::torus(1, 8).unwrap();
        let s0 = ScalarField::from_fn(g, |x| 1.0 + 0.2 * cos(PI * x[0]));
        let r0 = ScalarField::constant(g, 0.5);
        let (sp, rp) = (toy(g, -1.0, 1.0, 0.0, 0.0), toy(g, 0.5, 2.0, 0.0, 0.0));
        let q = Polynomial::new(&[0.0, 1.0]).unwrap();
        let path = WienerPath::new(1, 0, 1, 1e-3).unwrap();
        let mut res = vec![];
        for j in [4u64, 2, 1] {
            res.push(ito_product_check(&s0, &sp, &r0, &rp, &q, &path, j, 400 / j).unwrap());
        }
        assert!(res[0].abs() < 0.05);
        assert!((res[0] / res[1] - 2.0).abs() < 0.1 && (res[1] / res[2] - 2.0).abs() < 0.1, "{res:?}");
    }

    #[test]
    fn product_rule_constant_q_is_exact() {
        let g = Grid::torus(1, 8).unwrap();
        let s0 = ScalarField::constant(g, 1.0);
        let r0 = ScalarField::constant(g, 0.3);
        let (sp, rp) = (toy(g, -0.5, 1.0, 0.3, 0.2), toy(g, 0.5, 1.0, 0.2, 0.1));
        let q = Polynomial::new(&[2.5]).unwrap();
        let path = WienerPath::new(2, 0, 1, 1e-3).unwrap();
        let res = ito_product_check(&s0, &sp, &r0, &rp, &q, &path, 1, 500).unwrap();
        assert!(res.abs() < 1e-12, "{res}");
    }

    #[test]
    fn product_rule_pure_martingale_case() {
        let g = Grid::torus(1, 8).unwrap();
        let s0 = ScalarField::constant(g, 1.0);
        let r0 = ScalarField::constant(g, 0.0);
        let sp = toy(g, 0.0, 0.0, 0.0, 0.0);
        let rp = toy(g, 0.0, 0.0, 0.0, 1.0);
        let q = Polynomial::new(&[0.0, 1.0]).unwrap();
        let vals: Vec<f64> = (0..64)
            .map(|m| {
                let path = WienerPath::new(3, m, 1, 1e-2).unwrap();
                ito_product_check(&s0, &sp, &r0, &rp, &q, &path, 1, 50).unwrap()
            })
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() <= 3.0 * sd / n.sqrt() + 1e-15);
    }

    proptest! {
        #[test]
        fn relative_energy_is_zero_on_the_diagonal(
            vals in proptest::collection::vec((0.2f64..3.0, -2.0f64..2.0), 8),
        ) {
            let g = Grid::torus(1, 8).unwrap();
            let rho = ScalarField::from_vec(g, vals.iter().map(|v| v.0).collect()).unwrap();
            let vel = VectorField::from_components(g, vec![vals.iter().map(|v| v.1).collect()]).unwrap();
            let state = State::from_velocity(0.0, rho.clone(), &vel).unwrap();
            let e = relative_energy(&state, &rho, &state.velocity(), &law2(), 1.0).unwrap();
            prop_assert!(e.abs() <= 1e-12);
        }

        #[test]
        fn remainder_terms_sum_to_total(
            amp in 0.0f64..0.4, f in -0.5f64..0.5, h in -0.5f64..0.5, shift in 0.1f64..0.5,
        ) {
            let g = Grid::torus(1, 16).unwrap();
            let rho = ScalarField::from_fn(g, |x| 1.0 + amp * sin(PI * x[0]));
            let vel = VectorField::from_fn(g, |x| [amp * cos(PI * x[0]), 0.0]);
            let state = State::from_velocity(0.0, rho, &vel).unwrap();
            let noise = NoiseModel::affine(vec![f], vec![h]).unwrap();
            let params = ModelParams::new(law2(), 0.1, 0.02, 1.0, noise).unwrap();
            let mut reference = ReferenceSnapshot::at_rest(g, 1.0, 1);
            reference.r = ScalarField::from_fn(g, |x| 1.0 + shift * cos(PI * x[0]));
            reference.u = VectorField::from_fn(g, |x| [shift * sin(PI * x[0]), 0.0]);
            reference.drift_r = ScalarField::from_fn(g, |x| shift * x[0].sin());
            reference.diff_r = vec![ScalarField::constant(g, shift)];
            reference.diff_u = vec![VectorField::constant(g, [f, 0.0])];
            reference.bounds = (0.1, 3.0);
            let t = remainder(&state, &reference, &params).unwrap();
            let arr = t.as_array();
            let sum: f64 = arr.iter().sum();
            prop_assert!((sum - t.total()).abs() <= 1e-13 * (1.0 + arr.iter().map(|v| v.abs()).sum::<f64>()));
        }
    }
}

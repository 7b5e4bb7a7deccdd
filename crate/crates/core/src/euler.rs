//! Pseudo-spectral stochastic incompressible Euler system.
//!
//! The quadratic term is dealiased with the 2/3 rule. After every step the
//! velocity is projected back onto solenoidal fields and the size of that
//! correction is reported as a defect.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};
use crate::math::abs;
use crate::noise::NoiseModel;
use crate::spectral::Spectral;

#[derive(Debug, Clone, PartialEq)]
pub struct EulerState {
    pub t: f64,
    pub v: VectorField,
    /// Pressure with zero mean.
    pub pi: ScalarField,
}

impl EulerState {
    /// Projects `v` and recovers the matching pressure.
    pub fn new(t: f64, v: VectorField) -> Result<Self> {
        let v = crate::spectral::helmholtz_project(&v)?;
        let pi = pressure_recover(&v)?;
        Ok(EulerState { t, v, pi })
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * crate::grid::integrate(&self.v.norm_sq())
    }
}

fn is_constant(v: &VectorField) -> bool {
    (0..v.grid().dim()).all(|a| {
        let c = v.component(a);
        let scale = 1.0 + abs(c[0]);
        c.iter().all(|x| abs(x - c[0]) <= 1e-10 * scale)
    })
}

/// Dealiased spectra of the products `v_i v_j` (upper triangle, `i ≤ j`).
fn product_spectra(sp: &Spectral, v: &VectorField) -> Vec<Vec<Complex64>> {
    let dim = v.grid().dim();
    let filtered: Vec<Vec<f64>> = (0..dim)
        .map(|a| {
            let mut h = sp.forward(v.component(a));
            sp.dealias_hat(&mut h);
            sp.inverse(h)
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..dim {
        for j in i..dim {
            let prod: Vec<f64> = filtered[i].iter().zip(&filtered[j]).map(|(a, b)| a * b).collect();
            let mut h = sp.forward(&prod);
            sp.dealias_hat(&mut h);
            out.push(h);
        }
    }
    out
}

/// `−P_H[v·∇v]` with the 2/3 rule, written in the divergence form
/// `div(v⊗v)` that equals `v·∇v` for solenoidal `v`.
pub fn euler_drift(v: &VectorField) -> Result<VectorField> {
    let g = *v.grid();
    if g.dim() == 1 {
        if !is_constant(v) {
            return Err(Error::UnsupportedDimension {
                dim: 1,
                what: "solenoidal velocities in 1D are constants",
            });
        }
        return Ok(VectorField::zeros(g));
    }
    let sp = Spectral::new(g);
    let w = product_spectra(&sp, v);
    // w = [v1v1, v1v2, v2v2]
    let mut adv = vec![vec![Complex64::new(0.0, 0.0); g.cells()]; 2];
    for c in 0..g.cells() {
        let k = sp.wavevector(c);
        let i = Complex64::new(0.0, 1.0);
        adv[0][c] = -(i * k[0] * w[0][c] + i * k[1] * w[1][c]);
        adv[1][c] = -(i * k[0] * w[1][c] + i * k[1] * w[2][c]);
    }
    sp.project_hat(&mut adv);
    let comps = adv.into_iter().map(|h| sp.inverse(h)).collect();
    VectorField::from_components(g, comps)
}

/// `Π = −Δ⁻¹ div div(v⊗v)` with zero mean.
pub fn pressure_recover(v: &VectorField) -> Result<ScalarField> {
    let g = *v.grid();
    if g.dim() == 1 {
        if !is_constant(v) {
            return Err(Error::UnsupportedDimension { dim: 1, what: "solenoidal velocities in 1D are constants" });
        }
        return Ok(ScalarField::zeros(g));
    }
    let sp = Spectral::new(g);
    let w = product_spectra(&sp, v);
    let mut hat = vec![Complex64::new(0.0, 0.0); g.cells()];
    for (c, h) in hat.iter_mut().enumerate() {
        let k = sp.wavevector(c);
        let k2 = k[0] * k[0] + k[1] * k[1];
        if k2 == 0.0 {
            continue;
        }
        let kk = k[0] * k[0] * w[0][c] + 2.0 * k[0] * k[1] * w[1][c] + k[1] * k[1] * w[2][c];
        *h = -kk / k2;
    }
    ScalarField::from_vec(g, sp.inverse(hat))
}

/// `G(1, v) = F_k + vH_k` summed against `dw`.
pub fn euler_noise_increment(v: &VectorField, model: &NoiseModel, dw: &[f64]) -> Result<VectorField> {
    if dw.len() != model.modes() {
        return Err(Error::usage(alloc::format!("expected {} increments, got {}", model.modes(), dw.len())));
    }
    let g = *v.grid();
    let dim = g.dim();
    let mut out = VectorField::zeros(g);
    for c in 0..g.cells() {
        let vc = crate::noise::cell_mom(v, c);
        let mut acc = [0.0; 2];
        for (k, &w) in dw.iter().enumerate() {
            let gk = model.coefficient(k, 1.0, vc, dim);
            for a in 0..dim {
                acc[a] += gk[a] * w;
            }
        }
        for (a, val) in acc.iter().enumerate().take(dim) {
            out.component_mut(a)[c] = *val;
        }
    }
    Ok(out)
}

/// One projected Euler–Maruyama step; returns the new state and the max
/// norm of the projection correction.
pub fn euler_step(state: &EulerState, model: &NoiseModel, dt: f64, dw: &[f64]) -> Result<(EulerState, f64)> {
    let g = *state.v.grid();
    let mut v = state.v.clone();
    v.axpy(dt, &euler_drift(&state.v)?);
    v.axpy(1.0, &euler_noise_increment(&state.v, model, dw)?);
    let t = state.t + dt;
    if !v.all_finite() {
        return Err(Error::Divergence { t, step: 0 });
    }
    let projected = if g.dim() == 1 { v.clone() } else { Spectral::new(g).project(&v)? };
    let mut d = projected.clone();
    d.axpy(-1.0, &v);
    let defect = d.max_abs();
    let pi = pressure_recover(&projected)?;
    Ok((EulerState { t, v: projected, pi }, defect))
}

/// Max over cells and components of `|∂_j v_i|` (spectral derivatives).
pub fn gradient_sup(v: &VectorField) -> f64 {
    let g = *v.grid();
    if g.dim() == 1 {
        return 0.0;
    }
    let sp = Spectral::new(g);
    let mut m: f64 = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            for x in sp.partial(v.component(a), b) {
                m = m.max(abs(x));
            }
        }
    }
    m
}

/// Latching monitor for `τ_M = inf{t : ‖∇v‖_∞ > M}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingMonitor {
    pub bound: f64,
    pub triggered_at: Option<f64>,
}

impl StoppingMonitor {
    pub fn new(bound: f64) -> Self {
        StoppingMonitor { bound, triggered_at: None }
    }

    pub fn triggered(&self) -> bool {
        self.triggered_at.is_some()
    }
}

/// Returns whether the monitor has fired, recording the first exceedance.
pub fn check_stop(state: &EulerState, monitor: &mut StoppingMonitor) -> bool {
    if monitor.triggered_at.is_none() && gradient_sup(&state.v) > monitor.bound {
        monitor.triggered_at = Some(state.t);
    }
    monitor.triggered()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner, Grid};
    use crate::math::{cos, sin, PI};
    use crate::noise::WienerPath;
    use std::vec;

    fn taylor_green(g: Grid) -> VectorField {
        VectorField::from_fn(g, |x| {
            [cos(PI * x[0]) * sin(PI * x[1]), -sin(PI * x[0]) * cos(PI * x[1])]
        })
    }

    fn random_solenoidal(g: Grid, seed: u64) -> VectorField {
        // sum of a few stream-function modes
        let mut psi = ScalarField::zeros(g);
        for k in 0..6u64 {
            let a = crate::noise::standard_normal(seed, 0, k, 0);
            let (mx, my) = ((k % 3 + 1) as f64, (k / 3 + 1) as f64);
            let phase = crate::noise::standard_normal(seed, 0, k, 1);
            psi.axpy(a, &ScalarField::from_fn(g, |x| sin(PI * (mx * x[0] + my * x[1]) + phase)));
        }
        let sp = Spectral::new(g);
        let grad = sp.gradient(&psi);
        VectorField::from_components(g, vec![grad.component(1).iter().map(|v| -v).collect(), grad.component(0).to_vec()])
            .unwrap()
    }

    #[test]
    fn drift_examples() {
        let g = Grid::torus(2, 32).unwrap();
        assert_eq!(euler_drift(&VectorField::zeros(g)).unwrap().max_abs(), 0.0);
        assert!(euler_drift(&taylor_green(g)).unwrap().max_abs() < 1e-10);
        for seed in 0..4 {
            let v = random_solenoidal(g, seed);
            let d = euler_drift(&v).unwrap();
            assert!(inner(&d, &v).abs() < 1e-10, "{}", inner(&d, &v));
            assert!(Spectral::new(g).divergence(&d).max_abs() < 1e-10);
        }
    }

    #[test]
    fn taylor_green_pressure() {
        let g = Grid::torus(2, 32).unwrap();
        let pi = pressure_recover(&taylor_green(g)).unwrap();
        let mut err: f64 = 0.0;
        for c in 0..g.cells() {
            let x = g.center(c);
            let exact = -(cos(2.0 * PI * x[0]) + cos(2.0 * PI * x[1])) / 4.0;
            err = err.max((pi.data()[c] - exact).abs());
        }
        assert!(err < 1e-8, "{err}");
        assert!(pi.mean().abs() < 1e-15);
        assert_eq!(pressure_recover(&VectorField::zeros(g)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn pressure_balances_the_gradient_part() {
        let g = Grid::torus(2, 32).unwrap();
        let sp = Spectral::new(g);
        let v = random_solenoidal(g, 9);
        let pi = pressure_recover(&v).unwrap();
        // −drift = P_H[v·∇v]; ∇Π must equal −(I − P_H)[v·∇v]
        let w = product_spectra(&sp, &v);
        let mut adv = vec![vec![Complex64::new(0.0, 0.0); g.cells()]; 2];
        for c in 0..g.cells() {
            let k = sp.wavevector(c);
            let i = Complex64::new(0.0, 1.0);
            adv[0][c] = i * k[0] * w[0][c] + i * k[1] * w[1][c];
            adv[1][c] = i * k[0] * w[1][c] + i * k[1] * w[2][c];
        }
        let full = VectorField::from_components(g, adv.into_iter().map(|h| sp.inverse(h)).collect()).unwrap();
        let solenoidal = sp.project(&full).unwrap();
        let grad_pi = sp.gradient(&pi);
        let mut residual = grad_pi.clone();
        residual.axpy(1.0, &full);
        residual.axpy(-1.0, &solenoidal);
        assert!(residual.max_abs() < 1e-10, "{}", residual.max_abs());
    }

    #[test]
    fn steady_taylor_green_step() {
        let g = Grid::torus(2, 32).unwrap();
        let s = EulerState::new(0.0, taylor_green(g)).unwrap();
        let (n, defect) = euler_step(&s, &NoiseModel::off(2), 1e-3, &[0.0, 0.0]).unwrap();
        let mut d = n.v.clone();
        d.axpy(-1.0, &s.v);
        assert!(d.max_abs() < 1e-10);
        assert!(defect < 1e-10);
    }

    #[test]
    fn linear_noise_matches_direct_sum() {
        let g = Grid::torus(2, 16).unwrap();
        let model = NoiseModel::affine(vec![0.5, -0.25], vec![0.0, 0.0]).unwrap();
        let path = WienerPath::new(21, 0, 2, 1e-3).unwrap();
        let mut s = EulerState::new(0.0, VectorField::zeros(g)).unwrap();
        let mut w = [0.0; 2];
        for step in 0..50 {
            let dw = path.increments(step);
            w[0] += dw[0];
            w[1] += dw[1];
            s = euler_step(&s, &model, path.dt, &dw).unwrap().0;
            assert!(Spectral::new(g).divergence(&s.v).max_abs() < 1e-10);
        }
        let expect = 0.5 * w[0] - 0.25 * w[1];
        for a in 0..2 {
            assert!(s.v.component(a).iter().all(|x| (x - expect).abs() < 1e-12));
        }
    }

    #[test]
    fn energy_is_conserved_without_noise() {
        let g = Grid::torus(2, 32).unwrap();
        let mut s = EulerState::new(0.0, random_solenoidal(g, 3)).unwrap();
        let dt = 1e-3;
        for _ in 0..20 {
            // the drift is orthogonal to v, so a forward step adds exactly ½dt²‖drift‖²
            let d = euler_drift(&s.v).unwrap();
            let expect = s.kinetic_energy() + 0.5 * dt * dt * inner(&d, &d);
            s = euler_step(&s, &NoiseModel::off(1), dt, &[0.0]).unwrap().0;
            assert!((s.kinetic_energy() - expect).abs() < 1e-12 * expect, "{} {expect}", s.kinetic_energy());
        }
    }

    #[test]
    fn self_convergence_with_additive_noise() {
        let g = Grid::torus(2, 16).unwrap();
        let model = NoiseModel::affine(vec![0.3], vec![0.0]).unwrap();
        let v0 = random_solenoidal(g, 4).scaled(0.3);
        let base = 2.5e-5;
        let steps = 1600u64;
        let run = |j: u64, member: u32| {
            let path = WienerPath::new(8, member, 1, base).unwrap();
            let mut s = EulerState::new(0.0, v0.clone()).unwrap();
            for n in 0..steps / j {
                let dw = path.increments_over(n * j, j);
                s = euler_step(&s, &model, j as f64 * base, &dw).unwrap().0;
            }
            s.v
        };
        let mut errs = [0.0; 3];
        for member in 0..4 {
            let reference = run(1, member);
            for (e, j) in errs.iter_mut().zip([32u64, 16, 8]) {
                let mut d = run(j, member);
                d.axpy(-1.0, &reference);
                *e += inner(&d, &d).sqrt();
            }
        }
        let p = ((errs[0] / errs[1]).log2() + (errs[1] / errs[2]).log2()) / 2.0;
        assert!((0.7..=1.1).contains(&p), "order {p}, errors {errs:?}");
    }

    #[test]
    fn stopping_monitor() {
        let g = Grid::torus(2, 32).unwrap();
        let s = EulerState::new(0.0, taylor_green(g)).unwrap();
        let mut never = StoppingMonitor::new(f64::INFINITY);
        assert!(!check_stop(&s, &mut never));
        // |∂_x v_1| = π|sin πx sin πy|, sampled half a cell off the peak
        let big = EulerState::new(0.0, taylor_green(g).scaled(3.0 / PI)).unwrap();
        let peak = 3.0 * cos(PI / 32.0) * cos(PI / 32.0);
        assert!((gradient_sup(&big.v) - peak).abs() < 1e-10, "{}", gradient_sup(&big.v));
        let mut mon = StoppingMonitor::new(2.0);
        assert!(check_stop(&big, &mut mon));
        assert_eq!(mon.triggered_at, Some(0.0));
        let calm = EulerState::new(1.0, VectorField::zeros(g)).unwrap();
        assert!(check_stop(&calm, &mut mon));
        assert_eq!(mon.triggered_at, Some(0.0));
    }

    #[test]
    fn one_dimensional_flow_is_constant() {
        let g = Grid::torus(1, 16).unwrap();
        let model = NoiseModel::affine(vec![0.5], vec![0.2]).unwrap();
        let s = EulerState::new(0.0, VectorField::constant(g, [0.7, 0.0])).unwrap();
        let (n, _) = euler_step(&s, &model, 1e-3, &[0.1]).unwrap();
        let expect = 0.7 + (0.5 + 0.7 * 0.2) * 0.1;
        assert!(n.v.component(0).iter().all(|x| (x - expect).abs() < 1e-15));
        assert!(euler_drift(&VectorField::from_fn(g, |x| [x[0], 0.0])).is_err());
    }
}

//! Euler–Maruyama stepping of the (optionally Mach-scaled) stochastic
//! compressible Navier–Stokes system in conservative variables.
//!
//! Solver steps are whole multiples of the Wiener base step, and the noise
//! increment of a step is the sum of its base increments. Runs at different
//! resolutions or Mach numbers therefore see one and the same Brownian path.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::diagnostics::{energy, LedgerRow};
use crate::error::{Error, Result};
use crate::grid::{integrate_raw, jacobian, partial_raw, Grid, ScalarField, VectorField};
use crate::math::{abs, floor, round, sqrt};
use crate::noise::{ito_correction, noise_forcing_increment, NoiseModel, WienerPath};
use crate::spectral::Spectral;
use crate::thermo::PressureLaw;
use crate::State;

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub law: PressureLaw,
    pub mu: f64,
    pub eta: f64,
    /// Mach number; `1` is the unscaled system.
    pub eps: f64,
    pub noise: NoiseModel,
}

impl ModelParams {
    pub fn new(law: PressureLaw, mu: f64, eta: f64, eps: f64, noise: NoiseModel) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite() && eta >= 0.0 && eta.is_finite()) {
            return Err(Error::param(format!("viscosities must be finite and nonnegative, got mu={mu}, eta={eta}")));
        }
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::param(format!("eps must lie in (0, 1], got {eps}")));
        }
        Ok(ModelParams { law, mu, eta, eps, noise })
    }

    /// Law carrying the `1/ε²` factor, i.e. `p/ε²` and `H/ε²`.
    pub fn scaled_law(&self) -> PressureLaw {
        self.law.scaled(self.eps)
    }

    /// `4μ/3 + η`, the longitudinal viscosity.
    pub fn bulk_viscosity(&self) -> f64 {
        4.0 * self.mu / 3.0 + self.eta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ViscousTreatment {
    #[default]
    Explicit,
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub cfl: f64,
    pub rho_floor: f64,
    pub max_dt: f64,
    pub viscous: ViscousTreatment,
    /// Force every step to span exactly this many Wiener base steps.
    pub fixed_base_steps: Option<u64>,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            cfl: 0.4,
            rho_floor: 1e-8,
            max_dt: f64::INFINITY,
            viscous: ViscousTreatment::Explicit,
            fixed_base_steps: None,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::param(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.rho_floor >= 0.0) {
            return Err(Error::param("rho_floor must be nonnegative"));
        }
        if !(self.max_dt > 0.0) {
            return Err(Error::param("max_dt must be positive"));
        }
        if self.fixed_base_steps == Some(0) {
            return Err(Error::param("fixed_base_steps must be at least 1"));
        }
        Ok(())
    }
}

/// `S_ij = μ(∂_j u_i + ∂_i u_j) + (η − 2μ/3) δ_ij div u`, stored `[i][j][cell]`.
pub(crate) fn stress_from_jacobian(jac: &[Vec<Vec<f64>>], mu: f64, eta: f64) -> Vec<Vec<Vec<f64>>> {
    let dim = jac.len();
    let cells = jac[0][0].len();
    let lam = eta - 2.0 * mu / 3.0;
    let mut s = vec![vec![vec![0.0; cells]; dim]; dim];
    for c in 0..cells {
        let divu: f64 = (0..dim).map(|i| jac[i][i][c]).sum();
        for i in 0..dim {
            for j in 0..dim {
                let mut v = mu * (jac[i][j][c] + jac[j][i][c]);
                if i == j {
                    v += lam * divu;
                }
                s[i][j][c] = v;
            }
        }
    }
    s
}

fn tensor_divergence(grid: &Grid, s: &[Vec<Vec<f64>>]) -> VectorField {
    let dim = grid.dim();
    let mut out = VectorField::zeros(*grid);
    for (i, row) in s.iter().enumerate().take(dim) {
        let comp = out.component_mut(i);
        for (j, sij) in row.iter().enumerate() {
            for (o, d) in comp.iter_mut().zip(partial_raw(grid, sij, j)) {
                *o += d;
            }
        }
    }
    out
}

/// `div S(∇u)` with central differences throughout.
pub fn stress_divergence(u: &VectorField, mu: f64, eta: f64) -> VectorField {
    let jac = jacobian(u);
    tensor_divergence(u.grid(), &stress_from_jacobian(&jac, mu, eta))
}

/// Pointwise `S(∇u):∇u`.
pub fn dissipation_density(u: &VectorField, mu: f64, eta: f64) -> ScalarField {
    let jac = jacobian(u);
    contract(u.grid(), &stress_from_jacobian(&jac, mu, eta), &jac)
}

pub(crate) fn contract(grid: &Grid, s: &[Vec<Vec<f64>>], jac: &[Vec<Vec<f64>>]) -> ScalarField {
    let mut out = ScalarField::zeros(*grid);
    for (si, ji) in s.iter().zip(jac) {
        for (sij, jij) in si.iter().zip(ji) {
            for ((o, a), b) in out.data_mut().iter_mut().zip(sij).zip(jij) {
                *o += a * b;
            }
        }
    }
    out
}

fn check_floor(state: &State, floor: f64) -> Result<()> {
    for (i, &r) in state.rho.data().iter().enumerate() {
        if !(r >= floor) || !(r > 0.0) {
            return Err(Error::PositivityBreach { t: state.t, index: i, value: r });
        }
    }
    Ok(())
}

struct Drift {
    drho: ScalarField,
    dmom: VectorField,
    vel: VectorField,
    dissipation: ScalarField,
}

fn drift_parts(state: &State, params: &ModelParams, rho_floor: f64) -> Result<Drift> {
    check_floor(state, rho_floor)?;
    let g = *state.grid();
    let dim = g.dim();
    let law = params.scaled_law();
    let vel = state.velocity();
    let mut drho = ScalarField::zeros(g);
    for a in 0..dim {
        for (o, d) in drho.data_mut().iter_mut().zip(partial_raw(&g, state.mom.component(a), a)) {
            *o -= d;
        }
    }
    let p: Vec<f64> = state.rho.data().iter().map(|&r| law.p(r)).collect();
    let jac = jacobian(&vel);
    let stress = stress_from_jacobian(&jac, params.mu, params.eta);
    let mut dmom = tensor_divergence(&g, &stress);
    let mut flux = vec![0.0; g.cells()];
    for i in 0..dim {
        let mi = state.mom.component(i);
        for j in 0..dim {
            let uj = vel.component(j);
            for c in 0..g.cells() {
                flux[c] = mi[c] * uj[c];
            }
            let d = partial_raw(&g, &flux, j);
            for (o, v) in dmom.component_mut(i).iter_mut().zip(d) {
                *o -= v;
            }
        }
        for (o, v) in dmom.component_mut(i).iter_mut().zip(partial_raw(&g, &p, i)) {
            *o -= v;
        }
    }
    let dissipation = contract(&g, &stress, &jac);
    Ok(Drift { drho, dmom, vel, dissipation })
}

/// Deterministic tendencies `(−div m, −div(m⊗m/ϱ) − ε⁻²∇p + div S(∇u))`.
pub fn drift_rhs(state: &State, params: &ModelParams, rho_floor: f64) -> Result<(ScalarField, VectorField)> {
    let d = drift_parts(state, params, rho_floor)?;
    Ok((d.drho, d.dmom))
}

/// Largest stable step `cfl · min(dx/(|u|+c_s/ε), dx²/(2dν))`, capped by `max_dt`.
pub fn cfl_dt(state: &State, params: &ModelParams, cfg: &StepperConfig) -> f64 {
    let g = state.grid();
    let dx = g.dx();
    let rho_max = state.rho.max();
    let rho_min = state.rho.min();
    let umax = state.velocity().max_norm();
    let cs = sqrt(params.law.dp(rho_max).max(0.0));
    let mut dt = dx / (umax + cs / params.eps);
    if cfg.viscous == ViscousTreatment::Explicit {
        let nu_num = params.bulk_viscosity();
        if nu_num > 0.0 {
            let visc = if rho_min > 0.0 { dx * dx * rho_min / (2.0 * g.dim() as f64 * nu_num) } else { 0.0 };
            dt = dt.min(visc);
        }
    }
    (cfg.cfl * dt).min(cfg.max_dt)
}

/// Per-step contributions to the energy ledger, evaluated at the old state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepBudget {
    /// `dt ∫ S(∇u):∇u`
    pub dissipation: f64,
    /// `dt · ½∫Σ|G_k|²/ϱ`
    pub ito: f64,
    /// `∫ u · Σ G_k dW_k`
    pub stoch: f64,
}

pub(crate) fn advance(
    state: &State,
    params: &ModelParams,
    cfg: &StepperConfig,
    dt: f64,
    dw: &[f64],
    step: u64,
) -> Result<(State, StepBudget)> {
    let parts = drift_parts(state, params, cfg.rho_floor)?;
    let g = *state.grid();
    let forcing = noise_forcing_increment(state, &params.noise, dw)?;
    let mut rho = state.rho.clone();
    rho.axpy(dt, &parts.drho);
    let mut mom = state.mom.clone();
    mom.axpy(dt, &parts.dmom);
    mom.axpy(1.0, &forcing);
    if cfg.viscous == ViscousTreatment::SemiImplicit && params.bulk_viscosity() > 0.0 {
        let kappa = params.bulk_viscosity() / state.rho.min();
        let c = dt * kappa;
        let sp = Spectral::new(g);
        for a in 0..g.dim() {
            // (I − cΔ) m_new = m* − cΔ m_old
            let lap = crate::grid::laplacian(&state.mom.component_field(a));
            let rhs: Vec<f64> = mom.component(a).iter().zip(lap.data()).map(|(m, l)| m - c * l).collect();
            let solved = sp.solve_screened_fd(&rhs, c);
            mom.component_mut(a).copy_from_slice(&solved);
        }
    }
    let t = state.t + dt;
    if !(rho.all_finite() && mom.all_finite()) {
        return Err(Error::Divergence { t, step });
    }
    for (i, &r) in rho.data().iter().enumerate() {
        if !(r >= cfg.rho_floor) || !(r > 0.0) {
            return Err(Error::PositivityBreach { t, index: i, value: r });
        }
    }
    let stoch = if dw.iter().all(|&w| w == 0.0) { 0.0 } else { crate::grid::inner(&parts.vel, &forcing) };
    let budget = StepBudget {
        dissipation: dt * integrate_raw(&g, parts.dissipation.data()),
        ito: dt * ito_correction(state, &params.noise)?,
        stoch,
    };
    Ok((State { t, rho, mom }, budget))
}

/// One Euler–Maruyama step of length `dt` driven by the increments `dw`.
pub fn em_step(state: &State, params: &ModelParams, cfg: &StepperConfig, dt: f64, dw: &[f64]) -> Result<State> {
    Ok(advance(state, params, cfg, dt, dw, 0)?.0)
}

/// As [`em_step`], also returning the ledger contributions of the step.
pub fn em_step_with_budget(
    state: &State,
    params: &ModelParams,
    cfg: &StepperConfig,
    dt: f64,
    dw: &[f64],
) -> Result<(State, StepBudget)> {
    advance(state, params, cfg, dt, dw, 0)
}

/// Number of base steps to `t_end`; `t_end` must be a multiple of the base step.
pub fn total_base_steps(t_end: f64, wiener_dt: f64) -> Result<u64> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::param(format!("t_end must be finite and nonnegative, got {t_end}")));
    }
    let k = round(t_end / wiener_dt);
    if abs(k * wiener_dt - t_end) <= 1e-9 * t_end.max(wiener_dt) {
        Ok(k as u64)
    } else {
        Err(Error::param(format!("t_end {t_end} is not a multiple of the Wiener base step {wiener_dt}")))
    }
}

/// Base steps covered by the next solver step given its stable length.
pub fn base_steps_for(dt_stable: f64, wiener_dt: f64, remaining: u64, fixed: Option<u64>) -> Result<u64> {
    let j = match fixed {
        Some(j) => j,
        None => {
            let j = floor(dt_stable / wiener_dt);
            if !(j >= 1.0) {
                return Err(Error::WienerResolution { dt: dt_stable, wiener_dt });
            }
            j as u64
        }
    };
    Ok(j.min(remaining))
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub final_state: State,
    pub ledger: Vec<LedgerRow>,
    pub steps: u64,
}

/// A run stopped by an error, with the last state that passed every check.
#[derive(Debug, Clone)]
pub struct TrajectoryFailure {
    pub error: Error,
    pub last_good: State,
    pub step: u64,
    pub ledger: Vec<LedgerRow>,
}

/// Running sums of the energy budget along a trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Budget {
    pub dissipation: f64,
    pub ito: f64,
    pub stoch: f64,
}

impl Budget {
    pub fn add(&mut self, b: &StepBudget) {
        self.dissipation += b.dissipation;
        self.ito += b.ito;
        self.stoch += b.stoch;
    }
}

pub fn ledger_row(state: &State, params: &ModelParams, step: u64, budget: &Budget) -> Result<LedgerRow> {
    let (kinetic, potential) = energy(state, &params.law, params.eps)?;
    Ok(LedgerRow {
        t: state.t,
        step,
        mass: state.mass(),
        kinetic,
        potential,
        total: kinetic + potential,
        dissipation_cum: budget.dissipation,
        ito_cum: budget.ito,
        stoch_cum: budget.stoch,
        relative: None,
    })
}

/// Next base index at which a ledger row is due, capped at `total`.
pub(crate) fn next_mark(base: u64, every: u64, total: u64) -> u64 {
    (base / every).saturating_add(1).saturating_mul(every).min(total)
}

/// Steps from `init` to `t_end` on the Wiener base grid of `path`, recording
/// a ledger row at the start, every `ledger_every` base steps and at the end.
/// Steps never straddle a ledger time, so ledgers of different members share
/// their time grid.
pub fn run_trajectory(
    init: &State,
    params: &ModelParams,
    cfg: &StepperConfig,
    path: &WienerPath,
    t_end: f64,
    ledger_every: u64,
) -> Result<Trajectory, TrajectoryFailure> {
    let fail = |error: Error, last: &State, step: u64, ledger: Vec<LedgerRow>| TrajectoryFailure {
        error,
        last_good: last.clone(),
        step,
        ledger,
    };
    let setup = (|| {
        cfg.validate()?;
        init.validate()?;
        if ledger_every == 0 {
            return Err(Error::param("ledger_every must be at least 1"));
        }
        if path.modes != params.noise.modes() {
            return Err(Error::usage(format!(
                "Wiener path has {} modes, noise model {}",
                path.modes,
                params.noise.modes()
            )));
        }
        total_base_steps(t_end, path.dt)
    })();
    let total = match setup {
        Ok(t) => t,
        Err(e) => return Err(fail(e, init, 0, Vec::new())),
    };
    let mut state = init.clone();
    let mut ledger = Vec::new();
    if total == 0 {
        return Ok(Trajectory { final_state: state, ledger, steps: 0 });
    }
    let t0 = init.t;
    let mut budget = Budget::default();
    match ledger_row(&state, params, 0, &budget) {
        Ok(row) => ledger.push(row),
        Err(e) => return Err(fail(e, &state, 0, ledger)),
    }
    let mut base = 0u64;
    let mut step = 0u64;
    while base < total {
        let dt_stable = cfl_dt(&state, params, cfg);
        let j = match base_steps_for(dt_stable, path.dt, next_mark(base, ledger_every, total) - base, cfg.fixed_base_steps) {
            Ok(j) => j,
            Err(e) => return Err(fail(e, &state, step, ledger)),
        };
        let dw = path.increments_over(base, j);
        let dt = j as f64 * path.dt;
        let (mut next, b) = match advance(&state, params, cfg, dt, &dw, step + 1) {
            Ok(r) => r,
            Err(e) => return Err(fail(e, &state, step, ledger)),
        };
        base += j;
        step += 1;
        next.t = t0 + base as f64 * path.dt;
        budget.add(&b);
        state = next;
        if base % ledger_every == 0 || base == total {
            match ledger_row(&state, params, step, &budget) {
                Ok(row) => ledger.push(row),
                Err(e) => return Err(fail(e, &state, step, ledger)),
            }
        }
    }
    Ok(Trajectory { final_state: state, ledger, steps: step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;
    use crate::math::{cos, sin, PI};
    use std::vec;

    fn law2() -> PressureLaw {
        PressureLaw::new(2.0, 1.0).unwrap()
    }

    fn quiet(mu: f64, k: usize) -> ModelParams {
        ModelParams::new(law2(), mu, 0.0, 1.0, NoiseModel::off(k)).unwrap()
    }

    fn smooth_state(g: Grid, amp: f64) -> State {
        let rho = ScalarField::from_fn(g, |x| 1.0 + amp * sin(PI * x[0]));
        let vel = VectorField::from_fn(g, |x| [amp * cos(PI * x[0]), 0.0]);
        State::from_velocity(0.0, rho, &vel).unwrap()
    }

    fn l2_diff(a: &State, b: &State) -> f64 {
        let g = a.grid();
        let mut s = 0.0;
        for c in 0..g.cells() {
            s += (a.rho.data()[c] - b.rho.data()[c]).powi(2);
            for k in 0..g.dim() {
                s += (a.mom.component(k)[c] - b.mom.component(k)[c]).powi(2);
            }
        }
        (s * g.cell_volume()).sqrt()
    }

    #[test]
    fn stress_divergence_examples() {
        let g = Grid::torus(1, 64).unwrap();
        let c = VectorField::constant(g, [0.3, 0.0]);
        assert_eq!(stress_divergence(&c, 1.0, 0.5).max_abs(), 0.0);
        let u = VectorField::from_fn(g, |x| [sin(PI * x[0]), 0.0]);
        let d = stress_divergence(&u, 1.0, 0.0);
        let mut err: f64 = 0.0;
        for i in 0..g.n() {
            let x = g.coord(i);
            err = err.max((d.component(0)[i] + 4.0 / 3.0 * PI * PI * sin(PI * x)).abs());
        }
        // wide stencil: symbol sin(2k dx)/(2dx)² ≈ k²(1 − (2/3)k²dx²)
        assert!(err < 2.0 * PI.powi(4) * g.dx().powi(2), "{err}");
    }

    #[test]
    fn stress_of_rigid_rotation() {
        // rotation has zero symmetric gradient; with η the divergence is still zero since div u = 0
        let g = Grid::torus(2, 32).unwrap();
        let u = VectorField::from_fn(g, |x| [-x[1], x[0]]);
        let jac = jacobian(&u);
        let s = stress_from_jacobian(&jac, 1.0, 0.7);
        // interior cells away from the periodic seam see the smooth extension
        for i in 2..g.n() - 2 {
            for j in 2..g.n() - 2 {
                let c = i * g.n() + j;
                for a in 0..2 {
                    for b in 0..2 {
                        assert!(s[a][b][c].abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn drift_examples() {
        let g = Grid::torus(1, 32).unwrap();
        let params = quiet(0.0, 1);
        let (dr, dm) = drift_rhs(&State::at_rest(g, 1.0), &params, 1e-8).unwrap();
        assert_eq!(dr.max_abs(), 0.0);
        assert_eq!(dm.max_abs(), 0.0);
        let moving = State::from_velocity(0.0, ScalarField::constant(g, 1.0), &VectorField::constant(g, [0.4, 0.0]))
            .unwrap();
        let (dr, dm) = drift_rhs(&moving, &params, 1e-8).unwrap();
        assert_eq!(dr.max_abs(), 0.0);
        assert_eq!(dm.max_abs(), 0.0);
        let mut low = State::at_rest(g, 1.0);
        low.rho.data_mut()[3] = 1e-9;
        assert!(matches!(drift_rhs(&low, &params, 1e-8), Err(Error::PositivityBreach { index: 3, .. })));
    }

    #[test]
    fn acoustic_linearisation() {
        let g = Grid::torus(1, 256).unwrap();
        let (eps, delta) = (0.5, 1e-3);
        let params = ModelParams::new(law2(), 0.0, 0.0, eps, NoiseModel::off(1)).unwrap();
        let rho = ScalarField::from_fn(g, |x| 1.0 + eps * delta * sin(PI * x[0]));
        let s = State::new(0.0, rho, VectorField::zeros(g)).unwrap();
        let (_, dm) = drift_rhs(&s, &params, 1e-8).unwrap();
        let scale = 2.0 / (eps * eps) * eps * delta * PI;
        for i in 0..g.n() {
            let exact = -scale * cos(PI * g.coord(i));
            assert!((dm.component(0)[i] - exact).abs() < scale * (2.0 * delta + 1e-3));
        }
    }

    #[test]
    fn tendencies_integrate_to_zero() {
        let g = Grid::torus(2, 16).unwrap();
        let rho = ScalarField::from_fn(g, |x| 1.2 + 0.3 * sin(PI * x[0]) * cos(PI * x[1]));
        let vel = VectorField::from_fn(g, |x| [0.4 * sin(PI * x[1]), -0.2 * cos(PI * x[0] + 0.3)]);
        let s = State::from_velocity(0.0, rho, &vel).unwrap();
        let params = ModelParams::new(law2(), 0.1, 0.05, 0.7, NoiseModel::off(1)).unwrap();
        let (dr, dm) = drift_rhs(&s, &params, 1e-8).unwrap();
        assert!(integrate(&dr).abs() < 1e-13);
        for a in 0..2 {
            assert!(integrate(&dm.component_field(a)).abs() < 1e-12);
        }
    }

    #[test]
    fn cfl_examples() {
        let g = Grid::torus(1, 64).unwrap();
        let cfg = StepperConfig::default();
        let s = State::at_rest(g, 1.0);
        let dt = cfl_dt(&s, &quiet(0.0, 1), &cfg);
        assert!((dt - 0.4 * (1.0 / 32.0) / 2f64.sqrt()).abs() < 1e-15);
        let half = ModelParams::new(law2(), 0.0, 0.0, 0.5, NoiseModel::off(1)).unwrap();
        assert!((cfl_dt(&s, &half, &cfg) - dt / 2.0).abs() < 1e-15);
        // viscous limit scales with dx²
        let visc = quiet(10.0, 1);
        let d1 = cfl_dt(&State::at_rest(Grid::torus(1, 64).unwrap(), 1.0), &visc, &cfg);
        let d2 = cfl_dt(&State::at_rest(Grid::torus(1, 128).unwrap(), 1.0), &visc, &cfg);
        assert!((d1 / d2 - 4.0).abs() < 1e-12);
        let semi = StepperConfig { viscous: ViscousTreatment::SemiImplicit, ..cfg };
        assert!((cfl_dt(&s, &visc, &semi) - dt).abs() < 1e-15);
        let capped = StepperConfig { max_dt: 1e-4, ..cfg };
        assert_eq!(cfl_dt(&s, &quiet(0.0, 1), &capped), 1e-4);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let g = Grid::torus(2, 8).unwrap();
        let s = State::at_rest(g, 1.3);
        let n = em_step(&s, &quiet(0.1, 2), &StepperConfig::default(), 1e-3, &[0.0, 0.0]).unwrap();
        assert_eq!(n.rho, s.rho);
        assert_eq!(n.mom, s.mom);
        assert_eq!(n.t, 1e-3);
    }

    #[test]
    fn mass_and_momentum_are_conserved() {
        let g = Grid::torus(1, 64).unwrap();
        let init = smooth_state(g, 0.2);
        let mut params = quiet(0.05, 3);
        let path = WienerPath::new(3, 0, 3, 1e-4).unwrap();
        let tr = run_trajectory(&init, &params, &StepperConfig::default(), &path, 0.05, 5).unwrap();
        let m0 = init.mass();
        for row in &tr.ledger {
            assert!((row.mass - m0).abs() <= 1e-12 * m0);
        }
        let p0 = init.momentum_total()[0];
        assert!((tr.final_state.momentum_total()[0] - p0).abs() < 1e-12);
        params.noise = NoiseModel::affine(vec![0.3, 0.1, -0.2], vec![0.1, 0.2, 0.0]).unwrap();
        let tr = run_trajectory(&init, &params, &StepperConfig::default(), &path, 0.05, 5).unwrap();
        for row in &tr.ledger {
            assert!((row.mass - m0).abs() <= 1e-12 * m0);
        }
    }

    #[test]
    fn t_end_zero_returns_init() {
        let g = Grid::torus(1, 16).unwrap();
        let init = smooth_state(g, 0.1);
        let path = WienerPath::new(1, 0, 1, 1e-4).unwrap();
        let tr = run_trajectory(&init, &quiet(0.1, 1), &StepperConfig::default(), &path, 0.0, 1).unwrap();
        assert!(tr.ledger.is_empty());
        assert_eq!(tr.final_state.rho, init.rho);
        assert_eq!(tr.final_state.mom, init.mom);
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let g = Grid::torus(2, 16).unwrap();
        let rho = ScalarField::from_fn(g, |x| 1.0 + 0.1 * sin(PI * x[0]) * sin(PI * x[1]));
        let init = State::new(0.0, rho, VectorField::zeros(g)).unwrap();
        let noise = NoiseModel::affine(vec![0.2, 0.1], vec![0.1, -0.1]).unwrap();
        let params = ModelParams::new(law2(), 0.1, 0.0, 1.0, noise).unwrap();
        let path = WienerPath::new(99, 4, 2, 1e-4).unwrap();
        let a = run_trajectory(&init, &params, &StepperConfig::default(), &path, 0.02, 3).unwrap();
        let b = run_trajectory(&init, &params, &StepperConfig::default(), &path, 0.02, 3).unwrap();
        assert_eq!(a.final_state.rho.data(), b.final_state.rho.data());
        assert_eq!(a.final_state.mom, b.final_state.mom);
        assert_eq!(a.ledger, b.ledger);
    }

    fn run_fixed(init: &State, params: &ModelParams, path: &WienerPath, j: u64, t_end: f64) -> State {
        let cfg = StepperConfig { fixed_base_steps: Some(j), ..StepperConfig::default() };
        run_trajectory(init, params, &cfg, path, t_end, u64::MAX).unwrap().final_state
    }

    fn observed_order(errs: &[f64]) -> f64 {
        // least-squares slope of log2 error against refinement level
        let n = errs.len() as f64;
        let xs: Vec<f64> = (0..errs.len()).map(|i| -(i as f64)).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.log2()).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        num / den
    }

    #[test]
    fn deterministic_self_convergence() {
        let g = Grid::torus(1, 32).unwrap();
        let init = smooth_state(g, 0.2);
        let params = quiet(0.05, 1);
        let path = WienerPath::new(0, 0, 1, 1e-4).unwrap();
        let t_end = 0.2;
        let reference = run_fixed(&init, &params, &path, 1, t_end);
        let errs: Vec<f64> =
            [32u64, 16, 8].iter().map(|&j| l2_diff(&run_fixed(&init, &params, &path, j, t_end), &reference)).collect();
        let p = observed_order(&errs);
        assert!(p >= 0.9, "order {p}, errors {errs:?}");
    }

    #[test]
    fn strong_order_with_additive_noise() {
        let g = Grid::torus(1, 32).unwrap();
        let init = smooth_state(g, 0.1);
        let noise = NoiseModel::affine(vec![0.3, -0.2], vec![0.0, 0.0]).unwrap();
        let params = ModelParams::new(law2(), 0.05, 0.0, 1.0, noise).unwrap();
        let t_end = 0.2;
        let mut total = [0.0; 3];
        for member in 0..8 {
            let path = WienerPath::new(11, member, 2, 1e-4).unwrap();
            let reference = run_fixed(&init, &params, &path, 2, t_end);
            for (e, &j) in total.iter_mut().zip(&[128u64, 64, 32]) {
                *e += l2_diff(&run_fixed(&init, &params, &path, j, t_end), &reference);
            }
        }
        let p = observed_order(&total);
        assert!((0.7..=1.1).contains(&p), "order {p}, errors {total:?}");
    }

    #[test]
    fn positivity_breach_is_reported_with_last_good_state() {
        let g = Grid::torus(1, 16).unwrap();
        let init = smooth_state(g, 0.1);
        let noise = NoiseModel::affine(vec![200.0], vec![0.0]).unwrap();
        let params = ModelParams::new(law2(), 0.1, 0.0, 1.0, noise).unwrap();
        let path = WienerPath::new(5, 0, 1, 1e-4).unwrap();
        let err = run_trajectory(&init, &params, &StepperConfig::default(), &path, 1.0, u64::MAX).unwrap_err();
        assert!(err.error.is_numerical(), "{:?}", err.error);
        assert!(err.last_good.validate().is_ok());
        assert!(err.last_good.all_finite());
    }

    #[test]
    fn coarse_wiener_grid_is_rejected() {
        let g = Grid::torus(1, 64).unwrap();
        let init = smooth_state(g, 0.1);
        let path = WienerPath::new(5, 0, 1, 0.5).unwrap();
        let err = run_trajectory(&init, &quiet(0.1, 1), &StepperConfig::default(), &path, 1.0, u64::MAX).unwrap_err();
        assert!(matches!(err.error, Error::WienerResolution { .. }));
    }

    #[test]
    fn semi_implicit_matches_explicit_at_small_dt() {
        let g = Grid::torus(1, 32).unwrap();
        let init = smooth_state(g, 0.1);
        let params = quiet(0.05, 1);
        let path = WienerPath::new(0, 0, 1, 1e-4).unwrap();
        let a = run_fixed(&init, &params, &path, 1, 0.05);
        let cfg = StepperConfig { viscous: ViscousTreatment::SemiImplicit, fixed_base_steps: Some(1), ..Default::default() };
        let b = run_trajectory(&init, &params, &cfg, &path, 0.05, u64::MAX).unwrap().final_state;
        assert!(l2_diff(&a, &b) < 1e-4);
        // large steps stay bounded with the implicit viscous solve
        let stiff = quiet(2.0, 1);
        let cfg = StepperConfig { viscous: ViscousTreatment::SemiImplicit, ..Default::default() };
        let tr = run_trajectory(&init, &stiff, &cfg, &path, 0.05, u64::MAX).unwrap();
        assert!(tr.final_state.all_finite());
        assert!(tr.steps < 500);
    }
}

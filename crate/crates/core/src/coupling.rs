//! Lockstep runs of a compressible state against a reference process on the
//! same Wiener path, carrying the relative-energy ledger.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::cns::{
    advance, base_steps_for, cfl_dt, next_mark, drift_rhs, ledger_row, total_base_steps, Budget, ModelParams, StepperConfig,
    TrajectoryFailure,
};
use crate::diagnostics::{martingale_increments, relative_dissipation, remainder, LedgerRow, ReferenceSnapshot, RelativeRow};
use crate::error::{Error, Result};
use crate::euler::{check_stop, euler_drift, euler_step, EulerState, StoppingMonitor};
use crate::grid::{jacobian, Grid, ScalarField, VectorField};
use crate::math::abs;
use crate::noise::{cell_mom, NoiseModel, WienerPath};
use crate::thermo::relative_energy;
use crate::State;

/// A test pair `(r, U)` that can be advanced along a Wiener path.
pub trait ReferenceDynamics {
    fn time(&self) -> f64;
    /// Current reference, on the grid of the compressible state.
    fn snapshot(&self) -> Result<ReferenceSnapshot>;
    /// Largest step the reference tolerates; infinite if unconstrained.
    fn stable_dt(&self) -> f64;
    /// Advances over `count` base steps starting at base index `base`.
    /// `dw` are the increments the compressible state uses for the same
    /// step; the return value is what the reference actually used.
    fn advance(&mut self, dw: &[f64], path: &WienerPath, base: u64, count: u64) -> Result<Vec<f64>>;
    /// Time at which the reference stopped being admissible, if any.
    fn stopped_at(&self) -> Option<f64> {
        None
    }
}

fn inject_scalar(fine: &[f64], fine_grid: &Grid, factor: usize) -> Vec<f64> {
    let nf = fine_grid.n();
    let nc = nf / factor;
    let off = factor / 2;
    if fine_grid.dim() == 1 {
        (0..nc).map(|i| fine[factor * i + off]).collect()
    } else {
        let mut out = Vec::with_capacity(nc * nc);
        for i in 0..nc {
            for j in 0..nc {
                out.push(fine[(factor * i + off) * nf + factor * j + off]);
            }
        }
        out
    }
}

/// Grid of every `factor`-th cell of `fine`; cell centres coincide for odd factors.
pub fn coarse_grid(fine: &Grid, factor: usize) -> Result<Grid> {
    if factor == 0 || factor % 2 == 0 || fine.n() % factor != 0 {
        return Err(Error::param(format!("refinement factor {factor} must be odd and divide n = {}", fine.n())));
    }
    Grid::new(fine.dim(), fine.n() / factor, fine.length())
}

/// Pointwise injection onto the coincident cells of the coarse grid.
pub fn restrict_scalar(f: &ScalarField, factor: usize) -> Result<ScalarField> {
    let cg = coarse_grid(f.grid(), factor)?;
    ScalarField::from_vec(cg, inject_scalar(f.data(), f.grid(), factor))
}

pub fn restrict_vector(v: &VectorField, factor: usize) -> Result<VectorField> {
    let cg = coarse_grid(v.grid(), factor)?;
    let comps = (0..v.grid().dim()).map(|a| inject_scalar(v.component(a), v.grid(), factor)).collect();
    VectorField::from_components(cg, comps)
}

/// Restriction of a fine-grid state, the inverse of sampling on a refinement.
pub fn restrict_state(s: &State, factor: usize) -> Result<State> {
    State::new(s.t, restrict_scalar(&s.rho, factor)?, restrict_vector(&s.mom, factor)?)
}

/// A second compressible run, either on the same grid (`factor = 1`) or on a
/// refinement by an odd `factor`, seen through injection.
#[derive(Debug, Clone)]
pub struct CnsReference {
    pub state: State,
    pub params: ModelParams,
    pub cfg: StepperConfig,
    pub factor: usize,
    pub bounds: (f64, f64),
    /// Drive the reference with another path (a decoupled negative control).
    pub path_override: Option<WienerPath>,
    step: u64,
    t0: f64,
}

impl CnsReference {
    pub fn new(state: State, params: ModelParams, cfg: StepperConfig, factor: usize) -> Result<Self> {
        state.validate()?;
        if factor != 1 {
            coarse_grid(state.grid(), factor)?;
        }
        let bounds = (0.5 * state.rho.min(), 2.0 * state.rho.max());
        let t0 = state.t;
        Ok(CnsReference { state, params, cfg, factor, bounds, path_override: None, step: 0, t0 })
    }

    fn restrict_s(&self, f: ScalarField) -> Result<ScalarField> {
        if self.factor == 1 {
            Ok(f)
        } else {
            restrict_scalar(&f, self.factor)
        }
    }

    fn restrict_v(&self, f: VectorField) -> Result<VectorField> {
        if self.factor == 1 {
            Ok(f)
        } else {
            restrict_vector(&f, self.factor)
        }
    }
}

impl ReferenceDynamics for CnsReference {
    fn time(&self) -> f64 {
        self.state.t
    }

    fn snapshot(&self) -> Result<ReferenceSnapshot> {
        let s = &self.state;
        let g = *s.grid();
        let dim = g.dim();
        let (drho, dmom) = drift_rhs(s, &self.params, self.cfg.rho_floor)?;
        let vel = s.velocity();
        // D U = (D m − U D r)/r and 𝔻U_k = G_k(r, rU)/r; r carries no noise
        let mut drift_u = VectorField::zeros(g);
        for a in 0..dim {
            let out = drift_u.component_mut(a);
            for c in 0..g.cells() {
                out[c] = (dmom.component(a)[c] - vel.component(a)[c] * drho.data()[c]) / s.rho.data()[c];
            }
        }
        let model = &self.params.noise;
        let mut diff_u = Vec::with_capacity(model.modes());
        for k in 0..model.modes() {
            let mut f = VectorField::zeros(g);
            for c in 0..g.cells() {
                let r = s.rho.data()[c];
                let gk = model.coefficient(k, r, cell_mom(&s.mom, c), dim);
                for (a, v) in gk.iter().enumerate().take(dim) {
                    f.component_mut(a)[c] = v / r;
                }
            }
            diff_u.push(self.restrict_v(f)?);
        }
        let r = self.restrict_s(s.rho.clone())?;
        let cg = *r.grid();
        Ok(ReferenceSnapshot {
            t: s.t,
            r,
            u: self.restrict_v(vel)?,
            drift_r: self.restrict_s(drho)?,
            drift_u: self.restrict_v(drift_u)?,
            diff_r: vec![ScalarField::zeros(cg); model.modes()],
            diff_u,
            bounds: self.bounds,
        })
    }

    fn stable_dt(&self) -> f64 {
        cfl_dt(&self.state, &self.params, &self.cfg)
    }

    fn advance(&mut self, dw: &[f64], path: &WienerPath, base: u64, count: u64) -> Result<Vec<f64>> {
        let used = match &self.path_override {
            Some(p) => p.increments_over(base, count),
            None => dw.to_vec(),
        };
        let dt = count as f64 * path.dt;
        self.step += 1;
        let (next, _) = advance(&self.state, &self.params, &self.cfg, dt, &used, self.step)?;
        self.state = next;
        self.state.t = self.t0 + (base + count) as f64 * path.dt;
        Ok(used)
    }
}

/// Incompressible Euler reference: `r ≡ 1`, `U = v`, `D U = −P_H[v·∇v]`,
/// `𝔻U_k = F_k + vH_k`. Advanced one base step at a time.
#[derive(Debug, Clone)]
pub struct EulerReference {
    pub state: EulerState,
    pub noise: NoiseModel,
    pub monitor: StoppingMonitor,
    /// Largest projection correction seen so far.
    pub max_defect: f64,
    t0: f64,
}

impl EulerReference {
    pub fn new(state: EulerState, noise: NoiseModel, gradient_bound: f64) -> Self {
        let mut monitor = StoppingMonitor::new(gradient_bound);
        check_stop(&state, &mut monitor);
        let t0 = state.t;
        EulerReference { state, noise, monitor, max_defect: 0.0, t0 }
    }
}

impl ReferenceDynamics for EulerReference {
    fn time(&self) -> f64 {
        self.state.t
    }

    fn snapshot(&self) -> Result<ReferenceSnapshot> {
        let g = *self.state.v.grid();
        let dim = g.dim();
        let mut diff_u = Vec::with_capacity(self.noise.modes());
        for k in 0..self.noise.modes() {
            let mut f = VectorField::zeros(g);
            for c in 0..g.cells() {
                let gk = self.noise.coefficient(k, 1.0, cell_mom(&self.state.v, c), dim);
                for (a, v) in gk.iter().enumerate().take(dim) {
                    f.component_mut(a)[c] = *v;
                }
            }
            diff_u.push(f);
        }
        Ok(ReferenceSnapshot {
            t: self.state.t,
            r: ScalarField::constant(g, 1.0),
            u: self.state.v.clone(),
            drift_r: ScalarField::zeros(g),
            drift_u: euler_drift(&self.state.v)?,
            diff_r: vec![ScalarField::zeros(g); self.noise.modes()],
            diff_u,
            bounds: (1.0, 1.0),
        })
    }

    fn stable_dt(&self) -> f64 {
        f64::INFINITY
    }

    fn advance(&mut self, _dw: &[f64], path: &WienerPath, base: u64, count: u64) -> Result<Vec<f64>> {
        for s in base..base + count {
            let (next, defect) = euler_step(&self.state, &self.noise, path.dt, &path.increments(s))?;
            self.state = next;
            self.state.t = self.t0 + (s + 1) as f64 * path.dt;
            self.max_defect = self.max_defect.max(defect);
            check_stop(&self.state, &mut self.monitor);
        }
        // the base increments summed over the interval, bitwise as the state sees them
        Ok(path.increments_over(base, count))
    }

    fn stopped_at(&self) -> Option<f64> {
        self.monitor.triggered_at
    }
}

/// Prescribed reference `dr = a dt + Σ b_k dW_k`, `dU = c dt + Σ e_k dW_k`
/// with time-independent coefficient fields.
#[derive(Debug, Clone)]
pub struct SyntheticReference {
    pub t: f64,
    pub r: ScalarField,
    pub u: VectorField,
    pub drift_r: ScalarField,
    pub drift_u: VectorField,
    pub diff_r: Vec<ScalarField>,
    pub diff_u: Vec<VectorField>,
    pub bounds: (f64, f64),
    /// Start time; the reference time is `t0` plus the base steps taken.
    pub t0: f64,
}

impl ReferenceDynamics for SyntheticReference {
    fn time(&self) -> f64 {
        self.t
    }

    fn snapshot(&self) -> Result<ReferenceSnapshot> {
        Ok(ReferenceSnapshot {
            t: self.t,
            r: self.r.clone(),
            u: self.u.clone(),
            drift_r: self.drift_r.clone(),
            drift_u: self.drift_u.clone(),
            diff_r: self.diff_r.clone(),
            diff_u: self.diff_u.clone(),
            bounds: self.bounds,
        })
    }

    fn stable_dt(&self) -> f64 {
        f64::INFINITY
    }

    fn advance(&mut self, dw: &[f64], path: &WienerPath, base: u64, count: u64) -> Result<Vec<f64>> {
        let dt = count as f64 * path.dt;
        self.r.axpy(dt, &self.drift_r);
        self.u.axpy(dt, &self.drift_u);
        for (k, &w) in dw.iter().enumerate() {
            self.r.axpy(w, &self.diff_r[k]);
            self.u.axpy(w, &self.diff_u[k]);
        }
        self.t = self.t0 + (base + count) as f64 * path.dt;
        Ok(dw.to_vec())
    }
}

/// Result of a coupled run.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub final_state: State,
    pub ledger: Vec<LedgerRow>,
    pub steps: u64,
    /// Whether the reference used the very same increments at every step.
    pub coupled: bool,
    /// Reference stopping time, when the run ended there.
    pub stopped_at: Option<f64>,
    /// `sup_t ‖∇U‖_∞` of the reference over the run.
    pub reference_gradient_sup: f64,
    /// Increments used by the state and by the reference, when recorded.
    pub increments: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

fn gradient_max(u: &VectorField) -> f64 {
    let mut m: f64 = 0.0;
    for row in jacobian(u) {
        for comp in row {
            for v in comp {
                m = m.max(abs(v));
            }
        }
    }
    m
}

fn relative_row(
    state: &State,
    snap: &ReferenceSnapshot,
    params: &ModelParams,
    acc: &RelativeRow,
) -> Result<RelativeRow> {
    Ok(RelativeRow {
        rel_energy: relative_energy(state, &snap.r, &snap.u, &params.law, params.eps)?,
        ..*acc
    })
}

/// Runs `init` and `reference` in lockstep to `t_end` on the path, using the
/// smaller of the two stable steps, and records the relative-energy ledger
/// every `ledger_every` base steps.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled(
    init: &State,
    params: &ModelParams,
    cfg: &StepperConfig,
    reference: &mut dyn ReferenceDynamics,
    path: &WienerPath,
    t_end: f64,
    ledger_every: u64,
    record_increments: bool,
) -> Result<CoupledRun, TrajectoryFailure> {
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
            return Err(Error::usage("Wiener path and noise model disagree on the number of modes"));
        }
        if abs(reference.time() - init.t) > 1e-12 {
            return Err(Error::Coupling(format!(
                "reference starts at t = {} but the state at t = {}",
                reference.time(),
                init.t
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
    let mut budget = Budget::default();
    let mut acc = RelativeRow::default();
    let mut coupled = true;
    let mut grad_sup: f64 = 0.0;
    let mut incs = if record_increments { Some((Vec::new(), Vec::new())) } else { None };
    let mut base = 0u64;
    let mut step = 0u64;
    let t0 = init.t;
    let mut stopped_at = None;
    let push_row = |state: &State, snap: &ReferenceSnapshot, budget: &Budget, acc: &RelativeRow, step: u64| {
        let mut row = ledger_row(state, params, step, budget)?;
        row.relative = Some(relative_row(state, snap, params, acc)?);
        Ok::<_, Error>(row)
    };
    let mut snap = match reference.snapshot() {
        Ok(s) => s,
        Err(e) => return Err(fail(e, &state, 0, ledger)),
    };
    if snap.r.grid() != state.grid() {
        return Err(fail(Error::Coupling("reference and state grids differ".into()), &state, 0, ledger));
    }
    if total > 0 {
        match push_row(&state, &snap, &budget, &acc, 0) {
            Ok(r) => ledger.push(r),
            Err(e) => return Err(fail(e, &state, 0, ledger)),
        }
    }
    while base < total {
        if let Some(ts) = reference.stopped_at() {
            stopped_at = Some(ts);
            break;
        }
        grad_sup = grad_sup.max(gradient_max(&snap.u));
        let dt_stable = cfl_dt(&state, params, cfg).min(reference.stable_dt());
        let j = match base_steps_for(dt_stable, path.dt, next_mark(base, ledger_every, total) - base, cfg.fixed_base_steps) {
            Ok(j) => j,
            Err(e) => return Err(fail(e, &state, step, ledger)),
        };
        let dw = path.increments_over(base, j);
        let dt = j as f64 * path.dt;
        let pre = (|| {
            let terms = remainder(&state, &snap, params)?;
            let rd = relative_dissipation(&state.velocity(), &snap.u, params.mu, params.eta);
            let (_, m) = martingale_increments(&state, &snap, params, &dw)?;
            Ok::<_, Error>((terms.total(), rd, m))
        })();
        let (rem, rd, m) = match pre {
            Ok(v) => v,
            Err(e) => return Err(fail(e, &state, step, ledger)),
        };
        let (mut next, b) = match advance(&state, params, cfg, dt, &dw, step + 1) {
            Ok(r) => r,
            Err(e) => return Err(fail(e, &state, step, ledger)),
        };
        let used = match reference.advance(&dw, path, base, j) {
            Ok(u) => u,
            Err(e) => return Err(fail(e, &state, step, ledger)),
        };
        if used != dw {
            coupled = false;
        }
        if let Some((a, r)) = incs.as_mut() {
            a.push(dw.clone());
            r.push(used);
        }
        base += j;
        step += 1;
        next.t = t0 + base as f64 * path.dt;
        if abs(reference.time() - next.t) > 1e-9 * (1.0 + next.t) {
            return Err(fail(
                Error::Coupling(format!("reference at t = {} while the state is at t = {}", reference.time(), next.t)),
                &state,
                step,
                ledger,
            ));
        }
        budget.add(&b);
        acc.remainder_cum += dt * rem;
        acc.rel_dissipation_cum += dt * rd;
        for (a, v) in acc.martingales.iter_mut().zip(m) {
            *a += v;
        }
        state = next;
        snap = match reference.snapshot() {
            Ok(s) => s,
            Err(e) => return Err(fail(e, &state, step, ledger)),
        };
        if base % ledger_every == 0 || base == total {
            match push_row(&state, &snap, &budget, &acc, step) {
                Ok(r) => ledger.push(r),
                Err(e) => return Err(fail(e, &state, step, ledger)),
            }
        }
    }
    if stopped_at.is_none() {
        stopped_at = reference.stopped_at();
    }
    grad_sup = grad_sup.max(gradient_max(&snap.u));
    Ok(CoupledRun {
        final_state: state,
        ledger,
        steps: step,
        coupled,
        stopped_at,
        reference_gradient_sup: grad_sup,
        increments: incs,
    })
}

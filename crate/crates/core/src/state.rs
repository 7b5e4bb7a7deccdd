use crate::error::{Error, Result};
use crate::grid::{integrate, Grid, ScalarField, VectorField};

/// Conservative state `(ϱ, m = ϱu)` of the compressible system at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub rho: ScalarField,
    pub mom: VectorField,
}

impl State {
    pub fn new(t: f64, rho: ScalarField, mom: VectorField) -> Result<Self> {
        if rho.grid() != mom.grid() {
            return Err(Error::usage("density and momentum live on different grids"));
        }
        Ok(State { t, rho, mom })
    }

    /// Builds the state from density and velocity.
    pub fn from_velocity(t: f64, rho: ScalarField, vel: &VectorField) -> Result<Self> {
        let mom = vel.mul_scalar(&rho);
        State::new(t, rho, mom)
    }

    /// Uniform density `rho0` at rest.
    pub fn at_rest(grid: Grid, rho0: f64) -> Self {
        State { t: 0.0, rho: ScalarField::constant(grid, rho0), mom: VectorField::zeros(grid) }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    /// Velocity `m/ϱ`, zero on vacuum cells.
    pub fn velocity(&self) -> VectorField {
        let r = self.rho.data();
        let mut u = self.mom.clone();
        for a in 0..self.grid().dim() {
            for (v, &rho) in u.component_mut(a).iter_mut().zip(r) {
                *v = if rho > 0.0 { *v / rho } else { 0.0 };
            }
        }
        u
    }

    pub fn mass(&self) -> f64 {
        integrate(&self.rho)
    }

    /// `∫ m` per component.
    pub fn momentum_total(&self) -> [f64; 2] {
        let g = self.grid();
        let mut out = [0.0; 2];
        for (a, o) in out.iter_mut().enumerate().take(g.dim()) {
            *o = crate::grid::integrate_raw(g, self.mom.component(a));
        }
        out
    }

    /// Checks `ϱ ≥ 0` and `m = 0` on vacuum.
    pub fn validate(&self) -> Result<()> {
        let r = self.rho.data();
        for (i, &rho) in r.iter().enumerate() {
            if !(rho >= 0.0) {
                return Err(Error::PositivityViolation { index: i, value: rho });
            }
            if rho == 0.0 && (0..self.grid().dim()).any(|a| self.mom.component(a)[i] != 0.0) {
                return Err(Error::VacuumInconsistency { index: i });
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.rho.all_finite() && self.mom.all_finite()
    }
}

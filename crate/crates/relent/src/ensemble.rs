//! Monte Carlo driver: member scheduling, twin coupling, ε-sweeps and the
//! reductions behind every verdict.

use rayon::prelude::*;
use relent_core::cns::{base_steps_for, cfl_dt, run_trajectory, ModelParams, TrajectoryFailure};
use relent_core::coupling::{run_coupled, CnsReference, CoupledRun, EulerReference};
use relent_core::diagnostics::{
    gronwall_envelope, ito_product_check, martingale_estimate, LedgerRow, MartingaleEstimate, Polynomial, ToyProcess,
};
use relent_core::euler::EulerState;
use relent_core::grid::{Grid, ScalarField, VectorField};
use relent_core::math::{cos, sin, PI};
use relent_core::noise::WienerPath;
use relent_core::stats::{reduce_stats, summarize, EnsembleStats};
use relent_core::thermo::{coercivity_constant, CoercivityMode, PressureLaw};
use relent_core::{Error, Result, State};

use crate::config::{RunConfig, TwinVariant};

/// A member that stopped on a numerical failure.
#[derive(Debug, Clone)]
pub struct MemberFailure {
    pub member: u32,
    pub failure: TrajectoryFailure,
    /// Label of the sub-run (resolution or sweep entry).
    pub label: String,
}

/// Why an experiment did not produce a result.
#[derive(Debug)]
pub enum RunError {
    Setup(Error),
    Numerical(Box<MemberFailure>),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Setup(e)
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Setup(e) => write!(f, "{e}"),
            RunError::Numerical(m) => {
                write!(f, "member {} ({}) failed at step {}: {}", m.member, m.label, m.failure.step, m.failure.error)
            }
        }
    }
}

/// Outcome of a verdict that distinguishes statistical noise from failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    /// Holds only once the statistical half-width is granted.
    Inconclusive,
    Fail,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Fail => "fail",
        }
    }

    pub fn holds(self) -> bool {
        self != Verdict::Fail
    }
}

/// Evaluates `f` for members `0..n` on `jobs` threads; results are in member
/// order whatever the schedule.
pub fn run_members<T, F>(jobs: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u32) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool");
    pool.install(|| (0..n as u32).into_par_iter().map(&f).collect())
}

fn first_failure<T>(results: Vec<std::result::Result<T, MemberFailure>>) -> std::result::Result<Vec<T>, RunError> {
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(m) => return Err(RunError::Numerical(Box::new(m))),
        }
    }
    Ok(out)
}

fn path_for(cfg: &RunConfig, member: u32, modes: usize) -> Result<WienerPath> {
    WienerPath::new(cfg.experiment.seed, member, modes, cfg.stepper.wiener_dt)
}

/// Ledgers cut to the common prefix; rows share times by construction.
fn common_prefix(mut ledgers: Vec<Vec<LedgerRow>>) -> Vec<Vec<LedgerRow>> {
    let len = ledgers.iter().map(|l| l.len()).min().unwrap_or(0);
    for l in ledgers.iter_mut() {
        l.truncate(len);
    }
    ledgers
}

/// Result of an energy ensemble at one resolution.
#[derive(Debug, Clone)]
pub struct EnergyRun {
    pub n: usize,
    pub dx: f64,
    /// Step size from the initial stability limit.
    pub dt: f64,
    pub ledgers: Vec<Vec<LedgerRow>>,
    pub stats: EnsembleStats,
    /// `C·(dt + dx²)·t` per ledger time.
    pub budget: Vec<f64>,
    pub verdict: Verdict,
    pub martingale: Option<MartingaleEstimate>,
    /// Largest ensemble-mean energy residual.
    pub max_residual: f64,
    /// Largest relative mass drift over all rows and members.
    pub mass_drift: f64,
}

#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub runs: Vec<EnergyRun>,
    /// Observed order of the largest residual in `dx`, when several resolutions ran.
    pub order: Option<f64>,
    pub verdict: Verdict,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

fn initial_dt(init: &State, params: &ModelParams, cfg: &RunConfig) -> Result<f64> {
    let stepper = cfg.stepper()?;
    let total = relent_core::cns::total_base_steps(cfg.experiment.t_end, cfg.stepper.wiener_dt)?.max(1);
    let j = base_steps_for(cfl_dt(init, params, &stepper), cfg.stepper.wiener_dt, total, stepper.fixed_base_steps)?;
    Ok(j as f64 * cfg.stepper.wiener_dt)
}

/// Energy ledgers for every member at every configured resolution.
pub fn run_energy(cfg: &RunConfig, jobs: usize) -> std::result::Result<EnergyReport, RunError> {
    let params = cfg.model_params()?;
    let stepper = cfg.stepper()?;
    let mut runs = Vec::new();
    for n in cfg.resolutions() {
        let g = cfg.grid_with(n)?;
        let init = cfg.initial.state(g)?;
        let dt = initial_dt(&init, &params, cfg)?;
        let label = format!("n={n}");
        let results = run_members(jobs, cfg.experiment.n_members, |m| {
            let path = path_for(cfg, m, params.noise.modes()).expect("validated Wiener step");
            run_trajectory(&init, &params, &stepper, &path, cfg.experiment.t_end, cfg.ledger_every)
                .map(|t| t.ledger)
                .map_err(|failure| MemberFailure { member: m, failure, label: label.clone() })
        });
        let ledgers = first_failure(results)?;
        if ledgers[0].is_empty() {
            return Err(RunError::Setup(Error::InvalidParameter("experiment.t_end: no time steps to run".into())));
        }
        let stats = reduce_stats(&ledgers)?;
        let resid = stats.column("energy_residual").expect("ledger column");
        let c = cfg.experiment.budget_constant;
        let budget: Vec<f64> = stats.times.iter().map(|t| c * (dt + g.dx() * g.dx()) * (t - stats.times[0])).collect();
        let mut verdict = Verdict::Pass;
        for i in 0..stats.times.len() {
            if resid.mean[i] > budget[i] {
                verdict = if resid.mean[i] <= budget[i] + resid.ci[i] { Verdict::Inconclusive } else { Verdict::Fail };
                if verdict == Verdict::Fail {
                    break;
                }
            }
        }
        let martingale = if params.noise.is_silent() || ledgers.len() < 16 {
            None
        } else {
            Some(martingale_estimate(&stats, "stoch_cum")?)
        };
        if let Some(m) = &martingale {
            if !m.verdict && verdict == Verdict::Pass {
                verdict = Verdict::Inconclusive;
            }
        }
        let max_residual = resid.mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mass_drift = ledgers
            .iter()
            .flat_map(|l| l.iter().map(move |r| ((r.mass - l[0].mass) / l[0].mass).abs()))
            .fold(0.0, f64::max);
        runs.push(EnergyRun { n, dx: g.dx(), dt, ledgers, stats, budget, verdict, martingale, max_residual, mass_drift });
    }
    let order = if runs.len() >= 2 {
        let dx: Vec<f64> = runs.iter().map(|r| r.dx).collect();
        let res: Vec<f64> = runs.iter().map(|r| r.max_residual.abs().max(1e-300)).collect();
        Some(log_slope(&dx, &res))
    } else {
        None
    };
    let verdict = if runs.iter().any(|r| r.verdict == Verdict::Fail) {
        Verdict::Fail
    } else if runs.iter().any(|r| r.verdict == Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    Ok(EnergyReport { runs, order, verdict })
}

/// Smooth perturbation `ϱ(1 + δ s)`, `u + δ c` used for the Gronwall test.
pub fn perturbed_state(base: &State, delta: f64) -> Result<State> {
    let g = *base.grid();
    let vel = base.velocity();
    let rho = ScalarField::from_fn(g, |x| sin(PI * (x[0] + x[1]) + 0.7));
    let rho = base.rho.zip_map(&rho, |r, s| r * (1.0 + delta * s));
    let du = VectorField::from_fn(g, |x| [delta * cos(PI * x[0] + 0.3), delta * sin(PI * x[0] - 0.2)]);
    let mut u = vel;
    u.axpy(1.0, &du);
    State::from_velocity(base.t, rho, &u)
}

#[derive(Debug, Clone)]
pub struct TwinReport {
    pub ledgers: Vec<Vec<LedgerRow>>,
    pub stats: EnsembleStats,
    /// Every member's reference used the state's increments bitwise.
    pub coupled: bool,
    /// Mean initial relative energy.
    pub e0: f64,
    /// Largest reference gradient over members and time.
    pub gradient_bound: f64,
    pub envelope: Vec<f64>,
    pub max_rel_energy: f64,
    pub verdict: Verdict,
    /// Increments of member 0 as seen by the state and by the reference.
    pub increments: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

/// Twin runs: a weak run against a strong reference on the same Wiener path.
pub fn run_twin(cfg: &RunConfig, jobs: usize) -> std::result::Result<TwinReport, RunError> {
    let params = cfg.model_params()?;
    let stepper = cfg.stepper()?;
    let spec = &cfg.experiment.twin;
    let g = cfg.grid()?;
    let base = cfg.initial.state(g)?;
    let init = if spec.perturbation != 0.0 { perturbed_state(&base, spec.perturbation)? } else { base.clone() };
    let reference_init = match spec.variant {
        TwinVariant::Same => base,
        TwinVariant::Refined => cfg.initial.state(cfg.grid_with(g.n() * spec.refine)?)?,
    };
    let factor = if spec.variant == TwinVariant::Same { 1 } else { spec.refine };
    let n = cfg.experiment.n_members;
    let results = run_members(jobs, n, |m| {
        let path = path_for(cfg, m, params.noise.modes()).expect("validated Wiener step");
        let fail = |failure| MemberFailure { member: m, failure, label: "twin".into() };
        let mut reference = match CnsReference::new(reference_init.clone(), params.clone(), stepper, factor) {
            Ok(r) => r,
            Err(error) => {
                return Err(fail(TrajectoryFailure { error, last_good: init.clone(), step: 0, ledger: Vec::new() }))
            }
        };
        if spec.decouple {
            reference.path_override = Some(path_for(cfg, m + n as u32, params.noise.modes()).expect("validated"));
        }
        run_coupled(&init, &params, &stepper, &mut reference, &path, cfg.experiment.t_end, cfg.ledger_every, m == 0)
            .map_err(fail)
    });
    let runs: Vec<CoupledRun> = first_failure(results)?;
    let coupled = runs.iter().all(|r| r.coupled);
    let gradient_bound = runs.iter().map(|r| r.reference_gradient_sup).fold(0.0, f64::max);
    let increments = runs[0].increments.clone();
    let ledgers: Vec<Vec<LedgerRow>> = runs.into_iter().map(|r| r.ledger).collect();
    if ledgers[0].is_empty() {
        return Err(RunError::Setup(Error::InvalidParameter("experiment.t_end: no time steps to run".into())));
    }
    let stats = reduce_stats(&ledgers)?;
    let rel = stats.column("rel_energy").expect("ledger column");
    let e0 = rel.mean[0];
    let seed = e0.max(spec.gronwall_seed);
    let t0 = stats.times[0];
    let envelope: Vec<f64> =
        stats.times.iter().map(|t| gronwall_envelope(seed, spec.gronwall_c * gradient_bound, t - t0)).collect();
    let max_rel_energy = ledgers
        .iter()
        .flat_map(|l| l.iter().map(|r| r.relative.map_or(f64::NAN, |x| x.rel_energy)))
        .fold(0.0, f64::max);
    let mut verdict = Verdict::Pass;
    for i in 0..stats.times.len() {
        if rel.mean[i] > 1.2 * envelope[i] {
            verdict = if rel.mean[i] - rel.ci[i] <= 1.2 * envelope[i] { Verdict::Inconclusive } else { Verdict::Fail };
            if verdict == Verdict::Fail {
                break;
            }
        }
    }
    if spec.variant == TwinVariant::Same && spec.perturbation == 0.0 && max_rel_energy > 1e-10 {
        verdict = Verdict::Fail;
    }
    if !coupled {
        verdict = Verdict::Fail;
    }
    Ok(TwinReport { ledgers, stats, coupled, e0, gradient_bound, envelope, max_rel_energy, verdict, increments })
}

/// Fitted Gronwall rate `ĉ = sup_t ln(mean ℰ(t)/E0)/(M t)` over `t > 0`.
pub fn fit_gronwall_rate(times: &[f64], mean: &[f64], e0: f64, gradient_bound: f64) -> f64 {
    let t0 = times[0];
    times
        .iter()
        .zip(mean)
        .filter(|(t, _)| **t > t0)
        .map(|(t, m)| (m / e0).ln() / (gradient_bound * (t - t0)))
        .fold(0.0, f64::max)
}

/// Well-prepared data `ϱ = 1 + εδφ`, `m = v₀ + δψ` and the solenoidal `v₀`.
pub fn well_prepared(cfg: &RunConfig, g: Grid, eps: f64, delta: f64) -> Result<(State, VectorField)> {
    let phi = cfg.initial.density_modes(g);
    let rho = phi.map(|p| 1.0 + eps * delta * p);
    let v0 = cfg.initial.solenoidal_velocity(g)?;
    let mut m = v0.clone();
    m.axpy(delta, &cfg.initial.velocity_modes(g));
    Ok((State::new(0.0, rho, m)?, v0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub eps: f64,
    pub mu_eps: f64,
    pub sup_rel_mean: f64,
    pub sup_rel_ci: f64,
    pub tau_m_triggered: bool,
    pub n_members: usize,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub stats: Vec<EnsembleStats>,
    pub ledgers: Vec<Vec<Vec<LedgerRow>>>,
    /// Sweep means strictly decrease.
    pub monotone: bool,
    /// Last entry over first.
    pub ratio: f64,
    pub verdict: Verdict,
}

/// ε-sweep of coupled runs against the incompressible Euler reference.
pub fn run_eps_sweep(cfg: &RunConfig, jobs: usize) -> std::result::Result<SweepReport, RunError> {
    let base_params = cfg.model_params()?;
    let stepper = cfg.stepper()?;
    let sweep = &cfg.experiment.sweep;
    let mus = cfg.sweep_mu()?;
    let g = cfg.grid()?;
    let t_end = cfg.experiment.t_end;
    let mut rows = Vec::new();
    let mut all_stats = Vec::new();
    let mut all_ledgers = Vec::new();
    for (&eps, &mu) in sweep.eps_list.iter().zip(&mus) {
        let delta = cfg.sweep_delta(eps);
        let params = ModelParams::new(base_params.law, mu, 0.0, eps, base_params.noise.clone())?;
        let (init, v0) = well_prepared(cfg, g, eps, delta)?;
        let euler0 = EulerState::new(0.0, v0)?;
        let label = format!("eps={eps}");
        let results = run_members(jobs, cfg.experiment.n_members, |m| {
            let path = path_for(cfg, m, params.noise.modes()).expect("validated Wiener step");
            let mut reference = EulerReference::new(euler0.clone(), params.noise.clone(), sweep.gradient_bound);
            run_coupled(&init, &params, &stepper, &mut reference, &path, t_end, cfg.ledger_every, false)
                .map_err(|failure| MemberFailure { member: m, failure, label: label.clone() })
        });
        let runs = first_failure(results)?;
        let tau = runs.iter().filter_map(|r| r.stopped_at).fold(f64::INFINITY, f64::min);
        if tau < t_end / 2.0 {
            return Err(RunError::Setup(Error::Coupling(format!(
                "Euler reference left the gradient bound M = {} at τ_M = {tau} before t_end/2 ({label})",
                sweep.gradient_bound
            ))));
        }
        let ledgers = common_prefix(runs.into_iter().map(|r| r.ledger).collect());
        let stats = reduce_stats(&ledgers)?;
        let rel = stats.column("rel_energy").expect("ledger column");
        let (imax, _) = rel.mean.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        rows.push(SweepRow {
            eps,
            mu_eps: mu,
            sup_rel_mean: rel.mean[imax],
            sup_rel_ci: rel.ci[imax],
            tau_m_triggered: tau.is_finite(),
            n_members: cfg.experiment.n_members,
        });
        all_stats.push(stats);
        all_ledgers.push(ledgers);
    }
    let monotone = rows.windows(2).all(|w| w[1].sup_rel_mean < w[0].sup_rel_mean);
    let ratio = rows.last().expect("nonempty").sup_rel_mean / rows[0].sup_rel_mean;
    let verdict = if ratio <= sweep.target_ratio && monotone {
        Verdict::Pass
    } else if ratio <= sweep.target_ratio
        && rows.windows(2).all(|w| w[1].sup_rel_mean < w[0].sup_rel_mean + w[0].sup_rel_ci + w[1].sup_rel_ci)
    {
        Verdict::Inconclusive
    } else {
        Verdict::Fail
    };
    Ok(SweepReport { rows, stats: all_stats, ledgers: all_ledgers, monotone, ratio, verdict })
}

/// The pair of toy processes used by the Itô check on a grid.
pub fn ito_toy_pair(g: Grid, modes: usize) -> (ScalarField, ToyProcess, ScalarField, ToyProcess) {
    let s0 = ScalarField::from_fn(g, |x| 1.0 + 0.3 * cos(PI * x[0]));
    let r0 = ScalarField::from_fn(g, |x| 0.5 + 0.2 * sin(PI * x[0]));
    let s = ToyProcess {
        rate: -1.0,
        forcing: ScalarField::from_fn(g, |x| 1.5 + sin(PI * x[0])),
        vol: (0..modes).map(|k| 0.05 / (k + 1) as f64).collect(),
        shift: (0..modes).map(|k| ScalarField::from_fn(g, |x| 0.03 * cos(PI * x[0] + k as f64))).collect(),
    };
    let r = ToyProcess {
        rate: 1.0,
        forcing: ScalarField::from_fn(g, |x| 1.0 + 0.5 * cos(PI * x[0])),
        vol: (0..modes).map(|k| 0.05 / (k + 1) as f64).collect(),
        shift: (0..modes).map(|k| ScalarField::from_fn(g, |x| 0.03 * sin(PI * x[0] - k as f64))).collect(),
    };
    (s0, s, r0, r)
}

#[derive(Debug, Clone)]
pub struct ItoRow {
    pub dt: f64,
    pub mean: f64,
    pub std: f64,
    pub ci: f64,
}

#[derive(Debug, Clone)]
pub struct ItoReport {
    pub rows: Vec<ItoRow>,
    pub order: f64,
    pub verdict: Verdict,
}

/// Ensemble of Itô product-rule residuals at every configured step size.
pub fn run_ito_check(cfg: &RunConfig, jobs: usize) -> std::result::Result<ItoReport, RunError> {
    let g = cfg.grid()?;
    let modes = cfg.noise.modes.max(1);
    let spec = &cfg.experiment.ito;
    let q = Polynomial::new(&spec.q)?;
    let (s0, s, r0, r) = ito_toy_pair(g, modes);
    let wdt = cfg.stepper.wiener_dt;
    let total = relent_core::cns::total_base_steps(cfg.experiment.t_end, wdt)?;
    let mut rows = Vec::new();
    for &b in &spec.base_per_step {
        if total % b != 0 {
            return Err(RunError::Setup(Error::InvalidParameter(format!(
                "experiment.ito.base_per_step: {b} does not divide the {total} base steps to t_end"
            ))));
        }
        let vals: Vec<Result<f64>> = run_members(jobs, cfg.experiment.n_members, |m| {
            let path = path_for(cfg, m, modes)?;
            ito_product_check(&s0, &s, &r0, &r, &q, &path, b, total / b)
        });
        let vals = vals.into_iter().collect::<Result<Vec<f64>>>()?;
        let (mean, std, ci) = summarize(&vals);
        rows.push(ItoRow { dt: b as f64 * wdt, mean, std, ci });
    }
    let dts: Vec<f64> = rows.iter().map(|r| r.dt).collect();
    let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let order = log_slope(&dts, &means);
    let verdict = if order >= spec.min_order { Verdict::Pass } else { Verdict::Fail };
    Ok(ItoReport { rows, order, verdict })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityRow {
    pub gamma: f64,
    pub delta: f64,
    pub quadratic_band: f64,
    pub residual_gamma: f64,
}

/// Brute-force coercivity constants over the configured `γ` and `δ`.
pub fn run_coercivity(cfg: &RunConfig) -> Result<(Vec<CoercivityRow>, Verdict)> {
    let c = &cfg.experiment.coercivity;
    let mut rows = Vec::new();
    for &gamma in &c.gammas {
        let law = PressureLaw::relaxed(gamma, cfg.params.a)?;
        for &delta in &c.deltas {
            rows.push(CoercivityRow {
                gamma,
                delta,
                quadratic_band: coercivity_constant(delta, &law, CoercivityMode::QuadraticBand)?,
                residual_gamma: coercivity_constant(delta, &law, CoercivityMode::ResidualGamma)?,
            });
        }
    }
    let ok = rows.iter().all(|r| r.quadratic_band > 0.0 && r.residual_gamma > 0.0);
    Ok((rows, if ok { Verdict::Pass } else { Verdict::Fail }))
}

//! Run configuration: JSON schema, defaults, validation and construction of
//! the numerical objects.

use relent_core::cns::{ModelParams, StepperConfig, ViscousTreatment};
use relent_core::grid::{Grid, ScalarField, VectorField, DEFAULT_LENGTH};
use relent_core::math::{cos, sin, PI};
use relent_core::noise::NoiseModel;
use relent_core::spectral::helmholtz_project;
use relent_core::thermo::PressureLaw;
use relent_core::{Error, Result, State};
use serde::{Deserialize, Serialize};
use schemars::JsonSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Energy,
    Twin,
    EpsSweep,
    ItoCheck,
    Coercivity,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Energy => "energy",
            ExperimentKind::Twin => "twin",
            ExperimentKind::EpsSweep => "eps_sweep",
            ExperimentKind::ItoCheck => "ito_check",
            ExperimentKind::Coercivity => "coercivity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum MuRule {
    /// `μ_ε = ε`
    Eps,
    /// `μ_ε = ε²`
    Eps2,
    /// One viscosity per entry of `eps_list`.
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum DeltaRule {
    /// `δ(ε) = ε`
    Eps,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum TwinVariant {
    /// Same resolution as the weak run.
    Same,
    /// Refined reference seen through injection.
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TwinSpec {
    pub variant: TwinVariant,
    /// Odd refinement factor of the refined variant.
    pub refine: usize,
    /// Amplitude of the smooth perturbation added to the weak run's data.
    pub perturbation: f64,
    /// Drive the reference with another member's path.
    pub decouple: bool,
    /// Gronwall rate `c`; the envelope is `E0 exp(c M t)`.
    pub gronwall_c: f64,
    /// Floor of the envelope seed.
    pub gronwall_seed: f64,
}

impl Default for TwinSpec {
    fn default() -> Self {
        TwinSpec {
            variant: TwinVariant::Same,
            refine: 3,
            perturbation: 0.0,
            decouple: false,
            gronwall_c: 1.0,
            gronwall_seed: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub eps_list: Vec<f64>,
    pub mu_rule: MuRule,
    pub delta_rule: DeltaRule,
    /// Stopping bound `M` on `‖∇v‖_∞` of the Euler reference.
    pub gradient_bound: f64,
    /// Required ratio of the last to the first sweep entry.
    pub target_ratio: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            eps_list: vec![0.4, 0.2, 0.1, 0.05],
            mu_rule: MuRule::Eps,
            delta_rule: DeltaRule::Eps,
            gradient_bound: 50.0,
            target_ratio: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ItoSpec {
    /// Base steps per solver step, coarse to fine.
    pub base_per_step: Vec<u64>,
    /// Coefficients of `Q` in increasing degree.
    pub q: Vec<f64>,
    pub min_order: f64,
}

impl Default for ItoSpec {
    fn default() -> Self {
        ItoSpec { base_per_step: vec![4, 2, 1], q: vec![0.0, 0.5, 0.3, -0.2, 0.1], min_order: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct CoercivitySpec {
    pub deltas: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for CoercivitySpec {
    fn default() -> Self {
        CoercivitySpec { deltas: vec![0.1, 0.01], gammas: vec![5.0 / 3.0, 2.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    pub n_members: usize,
    pub seed: u64,
    pub t_end: f64,
    /// Grid sizes; runs use the first entry unless the experiment sweeps.
    pub resolutions: Vec<usize>,
    /// Energy verdict budget `C` in `C·(dt + dx²)·t`.
    pub budget_constant: f64,
    pub twin: TwinSpec,
    pub sweep: SweepSpec,
    pub ito: ItoSpec,
    pub coercivity: CoercivitySpec,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            kind: ExperimentKind::Energy,
            n_members: 1,
            seed: 0,
            t_end: 0.1,
            resolutions: Vec::new(),
            budget_constant: 1.0,
            twin: TwinSpec::default(),
            sweep: SweepSpec::default(),
            ito: ItoSpec::default(),
            coercivity: CoercivitySpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { dim: 1, n: 64, length: DEFAULT_LENGTH }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsSpec {
    pub gamma: f64,
    pub a: f64,
    pub mu: f64,
    pub eta: f64,
    pub eps: f64,
    /// Accept `1 < γ ≤ 3/2`.
    pub relax_gamma: bool,
}

impl Default for ParamsSpec {
    fn default() -> Self {
        ParamsSpec { gamma: 2.0, a: 1.0, mu: 0.1, eta: 0.0, eps: 1.0, relax_gamma: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ViscousSpec {
    Explicit,
    SemiImplicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct StepperSpec {
    pub cfl: f64,
    pub rho_floor: f64,
    pub max_dt: Option<f64>,
    pub viscous: ViscousSpec,
    pub wiener_dt: f64,
    pub fixed_base_steps: Option<u64>,
}

impl Default for StepperSpec {
    fn default() -> Self {
        StepperSpec {
            cfl: 0.4,
            rho_floor: 1e-8,
            max_dt: None,
            viscous: ViscousSpec::Explicit,
            wiener_dt: 1e-5,
            fixed_base_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Truncation `K`; `f` and `h` default to `K` zeros.
    pub modes: usize,
    pub f: Option<Vec<f64>>,
    pub h: Option<Vec<f64>>,
    /// Per-mode `(F_k,1, F_k,2)` replacing the isotropic `F_k`.
    pub f_components: Option<Vec<[f64; 2]>>,
    pub tail_budget: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { modes: 8, f: None, h: None, f_components: None, tail_budget: 0.0 }
    }
}

/// `amp · sin(π(k₁x + k₂y) + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub k: [i32; 2],
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Mode {
    fn value(&self, x: [f64; 2]) -> f64 {
        self.amp * sin(PI * (self.k[0] as f64 * x[0] + self.k[1] as f64 * x[1]) + self.phase)
    }

    fn dx(&self, x: [f64; 2], axis: usize) -> f64 {
        let arg = PI * (self.k[0] as f64 * x[0] + self.k[1] as f64 * x[1]) + self.phase;
        self.amp * PI * self.k[axis] as f64 * cos(arg)
    }
}

/// Initial data as sums of Fourier modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSpec {
    pub rho_mean: f64,
    pub density: Vec<Mode>,
    pub velocity_mean: [f64; 2],
    /// Per-component velocity modes (at most `dim` lists).
    pub velocity: Vec<Vec<Mode>>,
    /// Stream function modes; the velocity gains `(−∂_y ψ, ∂_x ψ)` in 2D.
    pub stream: Vec<Mode>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec {
            rho_mean: 1.0,
            density: vec![Mode { k: [1, 0], amp: 0.1, phase: 0.0 }],
            velocity_mean: [0.0, 0.0],
            velocity: Vec::new(),
            stream: Vec::new(),
        }
    }
}

impl InitialSpec {
    pub fn density_field(&self, g: Grid) -> ScalarField {
        ScalarField::from_fn(g, |x| self.rho_mean + self.density.iter().map(|m| m.value(x)).sum::<f64>())
    }

    /// Fluctuation `φ` of the density modes, without the mean.
    pub fn density_modes(&self, g: Grid) -> ScalarField {
        ScalarField::from_fn(g, |x| self.density.iter().map(|m| m.value(x)).sum::<f64>())
    }

    /// Solenoidal part: mean plus the curl of the stream function, projected.
    pub fn solenoidal_velocity(&self, g: Grid) -> Result<VectorField> {
        let mean = self.velocity_mean;
        if g.dim() == 1 {
            if !self.stream.is_empty() {
                return Err(Error::InvalidParameter("initial.stream: needs grid.dim = 2".into()));
            }
            return Ok(VectorField::constant(g, [mean[0], 0.0]));
        }
        let v = VectorField::from_fn(g, |x| {
            let mut u = mean;
            for m in &self.stream {
                u[0] -= m.dx(x, 1);
                u[1] += m.dx(x, 0);
            }
            u
        });
        helmholtz_project(&v)
    }

    /// Per-component velocity modes `ψ`.
    pub fn velocity_modes(&self, g: Grid) -> VectorField {
        VectorField::from_fn(g, |x| {
            let mut u = [0.0; 2];
            for (a, modes) in self.velocity.iter().enumerate().take(g.dim()) {
                u[a] = modes.iter().map(|m| m.value(x)).sum();
            }
            u
        })
    }

    pub fn velocity_field(&self, g: Grid) -> Result<VectorField> {
        let mut v = self.solenoidal_velocity(g)?;
        v.axpy(1.0, &self.velocity_modes(g));
        Ok(v)
    }

    pub fn state(&self, g: Grid) -> Result<State> {
        State::from_velocity(0.0, self.density_field(g), &self.velocity_field(g)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: ExperimentPlan,
    pub grid: GridSpec,
    pub params: ParamsSpec,
    pub stepper: StepperSpec,
    pub noise: NoiseSpec,
    pub initial: InitialSpec,
    pub output_dir: String,
    /// Ledger interval in Wiener base steps.
    pub ledger_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: ExperimentPlan::default(),
            grid: GridSpec::default(),
            params: ParamsSpec::default(),
            stepper: StepperSpec::default(),
            noise: NoiseSpec::default(),
            initial: InitialSpec::default(),
            output_dir: "relent-out".into(),
            ledger_every: 1000,
        }
    }
}

fn key_err(key: &str, e: Error) -> Error {
    let msg = match e {
        Error::InvalidParameter(m) | Error::Usage(m) => m,
        other => other.to_string(),
    };
    Error::InvalidParameter(format!("{key}: {msg}"))
}

fn require(cond: bool, key: &str, constraint: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{key}: {constraint}")))
    }
}

impl RunConfig {
    /// Grid of resolution `n` with the configured dimension and period.
    pub fn grid_with(&self, n: usize) -> Result<Grid> {
        Grid::new(self.grid.dim, n, self.grid.length).map_err(|e| key_err("grid", e))
    }

    pub fn grid(&self) -> Result<Grid> {
        self.grid_with(self.grid.n)
    }

    pub fn law(&self) -> Result<PressureLaw> {
        let p = &self.params;
        if p.relax_gamma {
            PressureLaw::relaxed(p.gamma, p.a)
        } else {
            PressureLaw::new(p.gamma, p.a)
        }
        .map_err(|e| key_err("params.gamma", e))
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        let s = &self.noise;
        let f = s.f.clone().unwrap_or_else(|| vec![0.0; s.modes]);
        let h = s.h.clone().unwrap_or_else(|| vec![0.0; s.modes]);
        require(f.len() == s.modes, "noise.f", "needs one entry per mode (noise.modes)")?;
        require(h.len() == s.modes, "noise.h", "needs one entry per mode (noise.modes)")?;
        let mut model = NoiseModel::affine(f, h).map_err(|e| key_err("noise", e))?;
        model = model.with_tail_budget(s.tail_budget).map_err(|e| key_err("noise.tail_budget", e))?;
        if let Some(c) = &s.f_components {
            model = model.with_f_components(c.clone()).map_err(|e| key_err("noise.f_components", e))?;
        }
        Ok(model)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let p = &self.params;
        ModelParams::new(self.law()?, p.mu, p.eta, p.eps, self.noise_model()?).map_err(|e| key_err("params", e))
    }

    pub fn stepper(&self) -> Result<StepperConfig> {
        let s = &self.stepper;
        let cfg = StepperConfig {
            cfl: s.cfl,
            rho_floor: s.rho_floor,
            max_dt: s.max_dt.unwrap_or(f64::INFINITY),
            viscous: match s.viscous {
                ViscousSpec::Explicit => ViscousTreatment::Explicit,
                ViscousSpec::SemiImplicit => ViscousTreatment::SemiImplicit,
            },
            fixed_base_steps: s.fixed_base_steps,
        };
        cfg.validate().map_err(|e| key_err("stepper", e))?;
        require(s.wiener_dt > 0.0 && s.wiener_dt.is_finite(), "stepper.wiener_dt", "must be positive")?;
        Ok(cfg)
    }

    pub fn resolutions(&self) -> Vec<usize> {
        if self.experiment.resolutions.is_empty() {
            vec![self.grid.n]
        } else {
            self.experiment.resolutions.clone()
        }
    }

    /// Viscosity per sweep entry.
    pub fn sweep_mu(&self) -> Result<Vec<f64>> {
        let sw = &self.experiment.sweep;
        match &sw.mu_rule {
            MuRule::Eps => Ok(sw.eps_list.clone()),
            MuRule::Eps2 => Ok(sw.eps_list.iter().map(|e| e * e).collect()),
            MuRule::Custom(v) => {
                require(v.len() == sw.eps_list.len(), "experiment.sweep.mu_rule", "custom list needs one entry per eps")?;
                Ok(v.clone())
            }
        }
    }

    pub fn sweep_delta(&self, eps: f64) -> f64 {
        match self.experiment.sweep.delta_rule {
            DeltaRule::Eps => eps,
            DeltaRule::Constant(d) => d,
        }
    }

    /// Checks every sub-configuration.
    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        require(e.n_members >= 1, "experiment.n_members", "must be at least 1")?;
        require(u32::try_from(e.n_members).is_ok(), "experiment.n_members", "must fit in 32 bits")?;
        require(e.t_end >= 0.0 && e.t_end.is_finite(), "experiment.t_end", "must be finite and nonnegative")?;
        require(self.ledger_every >= 1, "ledger_every", "must be at least 1")?;
        require(!self.output_dir.is_empty(), "output_dir", "must not be empty")?;
        require(e.budget_constant >= 0.0, "experiment.budget_constant", "must be nonnegative")?;
        for n in self.resolutions() {
            self.grid_with(n).map_err(|err| key_err("experiment.resolutions", err))?;
        }
        self.grid()?;
        self.law()?;
        self.model_params()?;
        self.stepper()?;
        require(self.initial.velocity.len() <= self.grid.dim, "initial.velocity", "at most one mode list per axis")?;
        require(self.initial.rho_mean > 0.0, "initial.rho_mean", "must be positive")?;
        match e.kind {
            ExperimentKind::Twin => {
                let t = &e.twin;
                if t.variant == TwinVariant::Refined {
                    require(t.refine % 2 == 1 && t.refine >= 3, "experiment.twin.refine", "must be odd and at least 3")?;
                }
                require(t.gronwall_c >= 0.0, "experiment.twin.gronwall_c", "must be nonnegative")?;
            }
            ExperimentKind::EpsSweep => {
                let s = &e.sweep;
                require(!s.eps_list.is_empty(), "experiment.sweep.eps_list", "must not be empty")?;
                require(
                    s.eps_list.windows(2).all(|w| w[1] < w[0]),
                    "experiment.sweep.eps_list",
                    "must be strictly decreasing",
                )?;
                require(
                    s.eps_list.iter().all(|&x| x > 0.0 && x <= 1.0),
                    "experiment.sweep.eps_list",
                    "entries must lie in (0, 1]",
                )?;
                require(s.gradient_bound > 0.0, "experiment.sweep.gradient_bound", "must be positive")?;
                self.sweep_mu()?;
            }
            ExperimentKind::ItoCheck => {
                let i = &e.ito;
                require(i.base_per_step.len() >= 2, "experiment.ito.base_per_step", "needs at least two step sizes")?;
                require(
                    i.base_per_step.iter().all(|&b| b >= 1),
                    "experiment.ito.base_per_step",
                    "entries must be at least 1",
                )?;
                require(i.q.len() <= 5, "experiment.ito.q", "degree is limited to four")?;
            }
            ExperimentKind::Coercivity => {
                let c = &e.coercivity;
                require(c.deltas.iter().all(|&d| d > 0.0 && d < 1.0), "experiment.coercivity.deltas", "must lie in (0, 1)")?;
                require(!c.gammas.is_empty(), "experiment.coercivity.gammas", "must not be empty")?;
            }
            ExperimentKind::Energy => {}
        }
        Ok(())
    }

    /// Canonical JSON: every field present, defaults filled.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }
}

/// Parses and validates a JSON run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg.params.gamma, 2.0);
        assert_eq!(cfg.params.a, 1.0);
        assert_eq!(cfg.stepper.cfl, 0.4);
        assert_eq!(cfg.noise.modes, 8);
        assert_eq!(cfg.noise_model().unwrap().modes(), 8);
        assert!(cfg.noise_model().unwrap().is_silent());
    }

    #[test]
    fn low_gamma_needs_the_relax_flag() {
        let err = parse_config(r#"{"params": {"gamma": 1.2}}"#).unwrap_err().to_string();
        assert!(err.contains("gamma > 3/2"), "{err}");
        assert!(err.contains("params.gamma"), "{err}");
        assert!(parse_config(r#"{"params": {"gamma": 1.2, "relax_gamma": true}}"#).is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config(r#"{"grid": {"dim": 1, "nn": 3}}"#).unwrap_err().to_string();
        assert!(err.contains("nn"), "{err}");
        assert!(parse_config(r#"{"colour": 1}"#).is_err());
    }

    #[test]
    fn violations_name_the_key() {
        let err = parse_config(r#"{"noise": {"modes": 2, "f": [1.0]}}"#).unwrap_err().to_string();
        assert!(err.contains("noise.f"), "{err}");
        let err = parse_config(r#"{"experiment": {"kind": "eps_sweep", "sweep": {"eps_list": [0.1, 0.2]}}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("strictly decreasing"), "{err}");
        assert!(parse_config(r#"{"grid": {"n": 7}}"#).is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let text = r#"{
            "experiment": {"kind": "twin", "n_members": 4, "seed": 9, "twin": {"variant": "refined"}},
            "grid": {"dim": 2, "n": 16},
            "noise": {"modes": 2, "f": [0.1, 0.2], "h": [0.0, 0.1]},
            "initial": {"stream": [{"k": [1, 1], "amp": 0.2}]},
            "stepper": {"max_dt": 0.01}
        }"#;
        let cfg = parse_config(text).unwrap();
        let again = parse_config(&cfg.to_canonical_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_canonical_json(), again.to_canonical_json());
    }

    #[test]
    fn initial_data_from_modes() {
        let mut cfg = RunConfig::default();
        cfg.grid = GridSpec { dim: 2, n: 16, length: 2.0 };
        cfg.initial.stream = vec![Mode { k: [1, 1], amp: 0.2, phase: 0.0 }];
        let g = cfg.grid().unwrap();
        let v = cfg.initial.solenoidal_velocity(g).unwrap();
        let div = relent_core::spectral::spectral_divergence(&v);
        assert!(div.max_abs() < 1e-12);
        let s = cfg.initial.state(g).unwrap();
        assert!((s.mass() - 4.0).abs() < 1e-12);
    }
}

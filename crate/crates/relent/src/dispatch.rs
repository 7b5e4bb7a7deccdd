//! Runs one experiment and writes its artifacts.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use relent_core::Error;
use serde_json::{json, Value};

use crate::config::{ExperimentKind, RunConfig};
use crate::ensemble::{
    run_coercivity, run_energy, run_eps_sweep, run_ito_check, run_twin, MemberFailure, RunError, Verdict,
};
use crate::output::{self, CheckpointMeta};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_VERDICT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// What a run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub code: u8,
    pub dir: PathBuf,
    pub verdict: Option<Verdict>,
    /// Contents of `summary.json`.
    pub summary: Value,
    pub message: String,
}

pub fn exit_code(v: Verdict) -> u8 {
    if v.holds() {
        EXIT_PASS
    } else {
        EXIT_VERDICT
    }
}

fn setup_code(e: &Error) -> u8 {
    if e.is_numerical() || matches!(e, Error::Coupling(_) | Error::ReferenceBound { .. }) {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

struct Artifacts {
    dir: PathBuf,
    /// `(file, x column, y column, title)` for the plot script.
    series: Vec<(String, usize, usize, String)>,
}

impl Artifacts {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn stats_column(stats: &relent_core::stats::EnsembleStats, name: &str) -> usize {
    // 1-based gnuplot column of `<name>_mean` in the stats CSV
    let idx = stats.columns.iter().filter(|c| **c != "t").position(|c| *c == name).expect("ledger column");
    2 + 3 * idx
}

fn write_energy(cfg: &RunConfig, jobs: usize, a: &mut Artifacts) -> Result<(Verdict, Value), RunError> {
    let report = run_energy(cfg, jobs)?;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for run in &report.runs {
        let label = format!("n{}", run.n);
        for (m, l) in run.ledgers.iter().enumerate() {
            output::write_ledger_csv(&a.path(&output::ledger_name(&label, m as u32)), l).map_err(io_err)?;
        }
        let stats = format!("stats_{label}.csv");
        output::write_stats_csv(&a.path(&stats), &run.stats).map_err(io_err)?;
        a.series.push((stats, 1, stats_column(&run.stats, "energy_residual"), format!("energy residual {label}")));
        rows.push((run.n, run.dx, run.dt, run.max_residual));
        eprintln!("relent: n = {}: max mean energy residual {:e}, verdict {}", run.n, run.max_residual, run.verdict.name());
        runs.push(json!({
            "n": run.n,
            "dx": run.dx,
            "dt": run.dt,
            "max_residual": run.max_residual,
            "mass_drift": run.mass_drift,
            "martingale": run.martingale.as_ref().map(|m| json!({"mean": m.mean, "ci": m.ci, "verdict": m.verdict})),
            "verdict": run.verdict.name(),
        }));
    }
    output::write_resolution_csv(&a.path("resolutions.csv"), &rows).map_err(io_err)?;
    Ok((report.verdict, json!({"runs": runs, "order": report.order})))
}

fn write_twin(cfg: &RunConfig, jobs: usize, a: &mut Artifacts) -> Result<(Verdict, Value), RunError> {
    let r = run_twin(cfg, jobs)?;
    for (m, l) in r.ledgers.iter().enumerate() {
        output::write_ledger_csv(&a.path(&output::ledger_name("twin", m as u32)), l).map_err(io_err)?;
    }
    output::write_stats_csv(&a.path("stats_twin.csv"), &r.stats).map_err(io_err)?;
    let rel = r.stats.column("rel_energy").expect("ledger column");
    let rows = (0..r.stats.times.len())
        .map(|i| vec![r.stats.times[i], rel.mean[i], rel.ci[i], r.envelope[i]].iter().map(|v| format!("{v:e}")).collect());
    write_table(&a.path("envelope.csv"), &["t", "rel_energy_mean", "rel_energy_ci", "envelope"], rows)?;
    a.series.push(("envelope.csv".into(), 1, 2, "mean relative energy".into()));
    a.series.push(("envelope.csv".into(), 1, 4, "Gronwall envelope".into()));
    eprintln!("relent: twin coupled = {}, max relative energy {:e}", r.coupled, r.max_rel_energy);
    Ok((
        r.verdict,
        json!({
            "coupled": r.coupled,
            "e0": r.e0,
            "gradient_bound": r.gradient_bound,
            "max_rel_energy": r.max_rel_energy,
        }),
    ))
}

fn write_sweep(cfg: &RunConfig, jobs: usize, a: &mut Artifacts) -> Result<(Verdict, Value), RunError> {
    let r = run_eps_sweep(cfg, jobs)?;
    for (row, (ledgers, stats)) in r.rows.iter().zip(r.ledgers.iter().zip(&r.stats)) {
        let label = format!("eps{}", row.eps);
        for (m, l) in ledgers.iter().enumerate() {
            output::write_ledger_csv(&a.path(&output::ledger_name(&label, m as u32)), l).map_err(io_err)?;
        }
        let name = format!("stats_{label}.csv");
        output::write_stats_csv(&a.path(&name), stats).map_err(io_err)?;
        a.series.push((name, 1, stats_column(stats, "rel_energy"), format!("relative energy eps = {}", row.eps)));
        eprintln!("relent: eps = {}: sup mean relative energy {:e} ± {:e}", row.eps, row.sup_rel_mean, row.sup_rel_ci);
    }
    output::write_sweep_csv(&a.path("sweep.csv"), &r.rows).map_err(io_err)?;
    Ok((r.verdict, json!({"monotone": r.monotone, "ratio": r.ratio})))
}

fn write_ito(cfg: &RunConfig, jobs: usize, a: &mut Artifacts) -> Result<(Verdict, Value), RunError> {
    let r = run_ito_check(cfg, jobs)?;
    output::write_ito_csv(&a.path("ito.csv"), &r.rows).map_err(io_err)?;
    a.series.push(("ito.csv".into(), 1, 2, "mean product-rule residual".into()));
    eprintln!("relent: observed order {:.3}", r.order);
    Ok((r.verdict, json!({"order": r.order})))
}

fn write_coercivity(cfg: &RunConfig, a: &mut Artifacts) -> Result<(Verdict, Value), RunError> {
    let (rows, verdict) = run_coercivity(cfg)?;
    output::write_coercivity_csv(&a.path("coercivity.csv"), &rows).map_err(io_err)?;
    a.series.push(("coercivity.csv".into(), 2, 4, "residual_gamma".into()));
    Ok((verdict, json!({"rows": rows.len()})))
}

fn write_table(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(io::Error::other(e)))?;
    w.write_record(header).map_err(|e| io_err(io::Error::other(e)))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io_err(io::Error::other(e)))?;
    }
    w.flush().map_err(io_err)
}

fn io_err(e: io::Error) -> RunError {
    RunError::Setup(Error::Usage(format!("output_dir: {e}")))
}

/// Parameters actually used by the failed sub-run.
fn failure_params(cfg: &RunConfig, label: &str) -> crate::config::ParamsSpec {
    let mut p = cfg.params.clone();
    if let Some(eps) = label.strip_prefix("eps=").and_then(|s| s.parse::<f64>().ok()) {
        if let Ok(mus) = cfg.sweep_mu() {
            if let Some(i) = cfg.experiment.sweep.eps_list.iter().position(|&e| e == eps) {
                p.mu = mus[i];
                p.eta = 0.0;
            }
        }
        p.eps = eps;
    }
    p
}

fn checkpoint_failure(cfg: &RunConfig, dir: &Path, f: &MemberFailure) -> io::Result<PathBuf> {
    let g = f.failure.last_good.grid();
    let meta = CheckpointMeta {
        t: f.failure.last_good.t,
        grid: crate::config::GridSpec { dim: g.dim(), n: g.n(), length: g.length() },
        params: failure_params(cfg, &f.label),
        noise: cfg.noise.clone(),
        seed: cfg.experiment.seed,
        member: f.member,
        step: f.failure.step,
        reason: Some(f.failure.error.to_string()),
    };
    let stem = format!("checkpoint_m{:04}", f.member);
    output::write_ledger_csv(&dir.join(format!("ledger_failed_m{:04}.csv", f.member)), &f.failure.ledger)?;
    output::write_checkpoint(dir, &stem, &f.failure.last_good, &meta)
}

/// Runs the experiment named in `cfg` on `jobs` worker threads and writes
/// every artifact under [`output::run_dir`].
pub fn dispatch(cfg: &RunConfig, jobs: usize) -> Outcome {
    let dir = output::run_dir(cfg);
    let fail = |code: u8, message: String, dir: PathBuf| Outcome {
        code,
        dir,
        verdict: None,
        summary: json!({"kind": cfg.experiment.kind.name(), "error": message}),
        message,
    };
    if let Err(e) = cfg.validate() {
        return fail(EXIT_USAGE, e.to_string(), dir);
    }
    if let Err(e) = fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join("config.json"), cfg.to_canonical_json())) {
        return fail(EXIT_USAGE, format!("output_dir: {e}"), dir);
    }
    eprintln!(
        "relent: {} with {} member(s) on {} thread(s) -> {}",
        cfg.experiment.kind.name(),
        cfg.experiment.n_members,
        jobs.max(1),
        dir.display()
    );
    let mut a = Artifacts { dir: dir.clone(), series: Vec::new() };
    let result = match cfg.experiment.kind {
        ExperimentKind::Energy => write_energy(cfg, jobs, &mut a),
        ExperimentKind::Twin => write_twin(cfg, jobs, &mut a),
        ExperimentKind::EpsSweep => write_sweep(cfg, jobs, &mut a),
        ExperimentKind::ItoCheck => write_ito(cfg, jobs, &mut a),
        ExperimentKind::Coercivity => write_coercivity(cfg, &mut a),
    };
    let mut outcome = match result {
        Ok((verdict, details)) => Outcome {
            code: exit_code(verdict),
            dir: dir.clone(),
            verdict: Some(verdict),
            summary: json!({"kind": cfg.experiment.kind.name(), "verdict": verdict.name(), "details": details}),
            message: format!("verdict {}", verdict.name()),
        },
        Err(RunError::Setup(e)) => fail(setup_code(&e), e.to_string(), dir.clone()),
        Err(RunError::Numerical(f)) => {
            let mut o = fail(EXIT_NUMERICAL, RunError::Numerical(f.clone()).to_string(), dir.clone());
            match checkpoint_failure(cfg, &dir, &f) {
                Ok(bin) => {
                    o.summary["checkpoint"] = json!(bin.file_name().map(|s| s.to_string_lossy().into_owned()));
                }
                Err(e) => o.message.push_str(&format!("; checkpoint not written: {e}")),
            }
            o
        }
    };
    let written = fs::write(dir.join("plot.gp"), output::plot_script(&a.series))
        .and_then(|_| fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&outcome.summary).expect("json")));
    if let Err(e) = written {
        if outcome.code == EXIT_PASS {
            outcome.code = EXIT_USAGE;
        }
        outcome.message.push_str(&format!("; output_dir: {e}"));
    }
    outcome
}

//! Files written by a run: CSV tables, checkpoints with JSON sidecars and a
//! gnuplot script.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use relent_core::diagnostics::{LedgerRow, LEDGER_COLUMNS};
use relent_core::grid::{ScalarField, VectorField};
use relent_core::snapshot::{decode_scalars, encode_scalars};
use relent_core::stats::EnsembleStats;
use relent_core::State;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{GridSpec, NoiseSpec, ParamsSpec, RunConfig};
use crate::ensemble::{CoercivityRow, ItoRow, SweepRow};

/// First 16 hex digits of the SHA-256 of the canonical configuration,
/// ignoring `output_dir`.
pub fn run_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.output_dir.clear();
    let digest = Sha256::digest(c.to_canonical_json().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// `<output_dir>/<experiment>-<hash>`; reruns of one configuration share it.
pub fn run_dir(cfg: &RunConfig) -> PathBuf {
    Path::new(&cfg.output_dir).join(format!("{}-{}", cfg.experiment.kind.name(), run_hash(cfg)))
}

pub fn ledger_name(label: &str, member: u32) -> String {
    format!("ledger_{label}_m{member:04}.csv")
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn write_rows<S: AsRef<str>>(path: &Path, header: &[S], rows: impl Iterator<Item = Vec<String>>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header.iter().map(|h| h.as_ref())).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

/// One member's ledger in the fixed column order.
pub fn write_ledger_csv(path: &Path, ledger: &[LedgerRow]) -> io::Result<()> {
    let Some(origin) = ledger.first() else {
        return write_rows(path, &LEDGER_COLUMNS, std::iter::empty());
    };
    write_rows(path, &LEDGER_COLUMNS, ledger.iter().map(|r| r.values(origin).iter().map(|v| num(*v)).collect()))
}

/// Ensemble statistics: `t`, then `<column>_mean`, `_std`, `_ci` per column.
pub fn write_stats_csv(path: &Path, stats: &EnsembleStats) -> io::Result<()> {
    let mut header = vec!["t".to_string()];
    let cols: Vec<usize> = (0..stats.columns.len()).filter(|&c| stats.columns[c] != "t").collect();
    for &c in &cols {
        for suffix in ["mean", "std", "ci"] {
            header.push(format!("{}_{suffix}", stats.columns[c]));
        }
    }
    let rows = (0..stats.times.len()).map(|i| {
        let mut row = vec![num(stats.times[i])];
        for &c in &cols {
            row.push(num(stats.mean[c][i]));
            row.push(num(stats.std[c][i]));
            row.push(num(stats.ci[c][i]));
        }
        row
    });
    write_rows(path, &header, rows)
}

pub const SWEEP_COLUMNS: [&str; 6] = ["eps", "mu_eps", "sup_relE_mean", "sup_relE_ci", "tau_M_triggered", "n_members"];

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> io::Result<()> {
    write_rows(
        path,
        &SWEEP_COLUMNS,
        rows.iter().map(|r| {
            vec![
                num(r.eps),
                num(r.mu_eps),
                num(r.sup_rel_mean),
                num(r.sup_rel_ci),
                r.tau_m_triggered.to_string(),
                r.n_members.to_string(),
            ]
        }),
    )
}

pub fn write_ito_csv(path: &Path, rows: &[ItoRow]) -> io::Result<()> {
    write_rows(
        path,
        &["dt", "residual_mean", "residual_std", "residual_ci"],
        rows.iter().map(|r| vec![num(r.dt), num(r.mean), num(r.std), num(r.ci)]),
    )
}

pub fn write_coercivity_csv(path: &Path, rows: &[CoercivityRow]) -> io::Result<()> {
    write_rows(
        path,
        &["gamma", "delta", "quadratic_band", "residual_gamma"],
        rows.iter().map(|r| vec![num(r.gamma), num(r.delta), num(r.quadratic_band), num(r.residual_gamma)]),
    )
}

/// Resolution table of an energy sweep.
pub fn write_resolution_csv(path: &Path, rows: &[(usize, f64, f64, f64)]) -> io::Result<()> {
    write_rows(
        path,
        &["n", "dx", "dt", "max_energy_residual"],
        rows.iter().map(|(n, dx, dt, r)| vec![n.to_string(), num(*dx), num(*dt), num(*r)]),
    )
}

/// Metadata stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub t: f64,
    pub grid: GridSpec,
    pub params: ParamsSpec,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub member: u32,
    pub step: u64,
    /// Why the run stopped, when it did not finish.
    pub reason: Option<String>,
}

/// Writes `<stem>.bin` (ϱ then the momentum components as scalar records)
/// and `<stem>.json`.
pub fn write_checkpoint(dir: &Path, stem: &str, state: &State, meta: &CheckpointMeta) -> io::Result<PathBuf> {
    let dim = state.grid().dim();
    let mut records = vec![state.rho.clone()];
    for a in 0..dim {
        records.push(state.mom.component_field(a));
    }
    let bytes = encode_scalars(&records).map_err(io::Error::other)?;
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, bytes)?;
    let json = serde_json::to_string_pretty(meta).map_err(io::Error::other)?;
    fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(bin)
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(bin: &Path) -> io::Result<(State, CheckpointMeta)> {
    let meta: CheckpointMeta =
        serde_json::from_str(&fs::read_to_string(bin.with_extension("json"))?).map_err(io::Error::other)?;
    let mut records = decode_scalars(&fs::read(bin)?).map_err(io::Error::other)?;
    let bad = || io::Error::new(io::ErrorKind::InvalidData, "checkpoint record count does not match its grid");
    let g = *records.first().ok_or_else(bad)?.grid();
    if records.len() != 1 + g.dim() {
        return Err(bad());
    }
    let rho: ScalarField = records.remove(0);
    let mom = VectorField::from_scalars(records).map_err(io::Error::other)?;
    let state = State::new(meta.t, rho, mom).map_err(io::Error::other)?;
    Ok((state, meta))
}

/// A gnuplot script plotting `series` as `(file, x column, y column, title)`.
pub fn plot_script(series: &[(String, usize, usize, String)]) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset logscale y\n");
    if series.is_empty() {
        return s;
    }
    s.push_str("plot ");
    let parts: Vec<String> = series
        .iter()
        .map(|(f, x, y, title)| format!("'{f}' using {x}:(abs(${y})) with linespoints title '{title}'"))
        .collect();
    s.push_str(&parts.join(", \\\n     "));
    s.push('\n');
    s
}

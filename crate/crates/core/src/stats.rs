//! Monte Carlo reduction of ledger columns across ensemble members.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::diagnostics::{LedgerRow, LEDGER_COLUMNS};
use crate::error::{Error, Result};
use crate::math::sqrt;

/// Half-width multiplier of the reported confidence interval (`3σ/√n`).
pub const CI_SIGMAS: f64 = 3.0;

/// `(mean, sample std, 3·std/√n)`; the std of a single value is zero.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let std = sqrt(var);
    (mean, std, CI_SIGMAS * std / sqrt(n as f64))
}

#[derive(Debug, Clone, Copy)]
pub struct ColumnView<'a> {
    pub mean: &'a [f64],
    pub std: &'a [f64],
    pub ci: &'a [f64],
}

/// Per-column, per-time ensemble aggregates; `mean[col][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub n_members: usize,
    pub times: Vec<f64>,
    pub columns: Vec<&'static str>,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub ci: Vec<Vec<f64>>,
}

impl EnsembleStats {
    pub fn column(&self, name: &str) -> Option<ColumnView<'_>> {
        let i = self.columns.iter().position(|c| *c == name)?;
        Some(ColumnView { mean: &self.mean[i], std: &self.std[i], ci: &self.ci[i] })
    }
}

/// Reduces member ledgers, given in member order, into ensemble statistics.
/// All ledgers must share the same time grid.
pub fn reduce_stats(ledgers: &[Vec<LedgerRow>]) -> Result<EnsembleStats> {
    let first = ledgers.first().ok_or_else(|| Error::usage("no ledgers to reduce"))?;
    let rows = first.len();
    for (m, l) in ledgers.iter().enumerate() {
        if l.len() != rows || l.iter().zip(first).any(|(a, b)| a.t != b.t) {
            return Err(Error::usage(format!("ledger of member {m} is not aligned with member 0")));
        }
    }
    let ncol = LEDGER_COLUMNS.len();
    let mut mean = vec![vec![0.0; rows]; ncol];
    let mut std = vec![vec![0.0; rows]; ncol];
    let mut ci = vec![vec![0.0; rows]; ncol];
    let mut buf = vec![vec![0.0; ledgers.len()]; ncol];
    for t in 0..rows {
        for (m, l) in ledgers.iter().enumerate() {
            let vals = l[t].values(&l[0]);
            for (col, v) in vals.iter().enumerate() {
                buf[col][m] = *v;
            }
        }
        for col in 0..ncol {
            let (a, b, c) = summarize(&buf[col]);
            mean[col][t] = a;
            std[col][t] = b;
            ci[col][t] = c;
        }
    }
    Ok(EnsembleStats {
        n_members: ledgers.len(),
        times: first.iter().map(|r| r.t).collect(),
        columns: LEDGER_COLUMNS.to_vec(),
        mean,
        std,
        ci,
    })
}

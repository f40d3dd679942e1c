/*
Copyright 2026 The admm-prune Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

//! Results table and its CSV form.
//!
//! ```text
//! mu, accuracy_pct, pruned_per_layer, sparsity_pct, training_epochs, speedup
//! 0, 97.40, 0-0-0, 0.00, 0, 1.00
//! 0.0125, 97.20, 2-5-0, 31.25, 2, 1.43
//! ```
//!
//! `mu` is written in shortest round-trip form, the baseline as `0`.
//! Accuracy, sparsity and speedup carry two decimals.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 6] = [
    "mu",
    "accuracy_pct",
    "pruned_per_layer",
    "sparsity_pct",
    "training_epochs",
    "speedup",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub mu: f64,
    pub accuracy_pct: f64,
    /// Pruned block count per included layer.
    pub pruned_per_layer: Vec<usize>,
    pub sparsity_pct: f64,
    pub training_epochs: usize,
    pub speedup: f64,
}

impl ReportRow {
    /// The row as it reads back from its printed form.
    pub fn rounded(&self) -> ReportRow {
        let r2 = |v: f64| format!("{v:.2}").parse::<f64>().expect("formatted float");
        ReportRow {
            accuracy_pct: r2(self.accuracy_pct),
            sparsity_pct: r2(self.sparsity_pct),
            speedup: r2(self.speedup),
            ..self.clone()
        }
    }

    fn fields(&self) -> [String; 6] {
        [
            format_mu(self.mu),
            format!("{:.2}", self.accuracy_pct),
            join_counts(&self.pruned_per_layer),
            format!("{:.2}", self.sparsity_pct),
            self.training_epochs.to_string(),
            format!("{:.2}", self.speedup),
        ]
    }
}

fn format_mu(mu: f64) -> String {
    if mu == 0.0 {
        "0".into()
    } else {
        format!("{mu}")
    }
}

/// `[33, 482, 968, 0]` -> `"33-482-968-0"`.
pub fn join_counts(counts: &[usize]) -> String {
    counts.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

fn render(rows: &[ReportRow], sep: &str) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to render".into()));
    }
    let mut out = COLUMNS.join(sep);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.fields().join(sep));
    }
    Ok(out)
}

/// Human-readable table, columns separated by `", "`.
pub fn render_table(rows: &[ReportRow]) -> Result<String> {
    render(rows, ", ")
}

pub fn to_csv(rows: &[ReportRow]) -> Result<String> {
    render(rows, ",")
}

pub fn export_csv(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_csv(rows)?)?;
    Ok(())
}

/// Parses the output of [`to_csv`] or [`render_table`].
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let bad = |n: usize, what: &str| Error::InvalidArgument(format!("report line {n}: {what}"));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad(1, "missing header"))?
        .split(',')
        .map(str::trim)
        .collect();
    if header != COLUMNS {
        return Err(bad(1, "unexpected columns"));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let n = k + 2;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let [mu, acc, pruned, sparsity, epochs, speedup] = f[..] else {
            return Err(bad(n, "expected 6 fields"));
        };
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad(n, &format!("bad number `{s}`")));
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(n, &format!("bad integer `{s}`")));
        rows.push(ReportRow {
            mu: real(mu)?,
            accuracy_pct: real(acc)?,
            pruned_per_layer: pruned.split('-').map(int).collect::<Result<_>>()?,
            sparsity_pct: real(sparsity)?,
            training_epochs: int(epochs)?,
            speedup: real(speedup)?,
        });
    }
    Ok(rows)
}

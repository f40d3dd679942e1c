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

//! Run manifest: ordered `key: value` lines.
//!
//! ```text
//! config: /abs/path/run.cfg
//! seed: 7
//! ...
//! points: 3
//! point.0.mu: 0
//! point.0.checkpoint: mu_00.ckpt
//! point.0.mask: mu_00.mask
//! point.0.iterations: 0
//! point.0.converged: true
//! point.0.training_epochs: 0
//! ...
//! status: complete
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct PointRecord {
    pub mu: f64,
    pub checkpoint: String,
    pub mask: String,
    pub iterations: usize,
    pub converged: bool,
    pub training_epochs: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    /// Run-level entries in insertion order.
    pub entries: Vec<(String, String)>,
    pub points: Vec<PointRecord>,
    pub status: String,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Manifest(format!("missing key `{key}`")))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}: {v}");
        }
        let _ = writeln!(out, "points: {}", self.points.len());
        for (i, p) in self.points.iter().enumerate() {
            let _ = writeln!(out, "point.{i}.mu: {}", p.mu);
            let _ = writeln!(out, "point.{i}.checkpoint: {}", p.checkpoint);
            let _ = writeln!(out, "point.{i}.mask: {}", p.mask);
            let _ = writeln!(out, "point.{i}.iterations: {}", p.iterations);
            let _ = writeln!(out, "point.{i}.converged: {}", p.converged);
            let _ = writeln!(out, "point.{i}.training_epochs: {}", p.training_epochs);
        }
        let _ = writeln!(out, "status: {}", self.status);
        out
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut m = Manifest::default();
        let mut fields = Vec::new();
        let mut count = None;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(": ")
                .ok_or_else(|| CliError::Manifest(format!("line {}: expected `key: value`", n + 1)))?;
            match k {
                "points" => {
                    count = Some(v.parse::<usize>().map_err(|e| {
                        CliError::Manifest(format!("line {}: points: {e}", n + 1))
                    })?)
                }
                "status" => m.status = v.to_string(),
                _ if k.starts_with("point.") => fields.push((k.to_string(), v.to_string())),
                _ => m.set(k, v),
            }
        }
        let count = count.ok_or_else(|| CliError::Manifest("missing key `points`".into()))?;
        let field = |i: usize, name: &str| -> Result<&str, CliError> {
            let key = format!("point.{i}.{name}");
            fields
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| CliError::Manifest(format!("missing key `{key}`")))
        };
        let num = |i: usize, name: &str| -> Result<usize, CliError> {
            field(i, name)?
                .parse()
                .map_err(|e| CliError::Manifest(format!("point.{i}.{name}: {e}")))
        };
        for i in 0..count {
            m.points.push(PointRecord {
                mu: field(i, "mu")?
                    .parse()
                    .map_err(|e| CliError::Manifest(format!("point.{i}.mu: {e}")))?,
                checkpoint: field(i, "checkpoint")?.to_string(),
                mask: field(i, "mask")?.to_string(),
                iterations: num(i, "iterations")?,
                converged: field(i, "converged")? == "true",
                training_epochs: num(i, "training_epochs")?,
            });
        }
        Ok(m)
    }
}

/// Resolves a manifest-relative artifact path.
pub fn resolve(manifest_path: &Path, file: &str) -> PathBuf {
    manifest_path
        .parent()
        .map(|d| d.join(file))
        .unwrap_or_else(|| PathBuf::from(file))
}

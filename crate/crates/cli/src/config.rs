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

//! Run configuration: flat `key = value` lines, `#` starts a comment.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use admm_prune::data::{load_csv, load_idx, synth_generate, Dataset, Split};
use admm_prune::path::PathSchedule;
use admm_prune::{LayerGuardPolicy, LayerSpec, NetworkSpec, PenaltyKind, Shape};

use crate::CliError;

const KEYS: &[&str] = &[
    "data",
    "synth_seed",
    "synth_count",
    "synth_height",
    "synth_width",
    "synth_classes",
    "synth_noise",
    "train_count",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_csv",
    "test_csv",
    "classes",
    "normalize",
    "input",
    "layers",
    "include_layers",
    "baseline",
    "baseline_epochs",
    "baseline_lr",
    "baseline_batch_size",
    "penalty",
    "rho",
    "mus",
    "mu_count",
    "delta",
    "nu",
    "xi",
    "epsilon",
    "lr",
    "batch_size",
    "momentum",
    "guard",
    "guard_fraction",
    "seed",
    "out",
];

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synth {
        seed: u64,
        count: usize,
        height: usize,
        width: usize,
        classes: usize,
        noise: f64,
        train_count: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        classes: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum MuGrid {
    /// Log-spaced default with this many points.
    Auto(usize),
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub contrast_normalize: bool,
    pub spec: NetworkSpec,
    pub include: Option<Vec<usize>>,
    /// Pre-trained checkpoint; trained from scratch when absent.
    pub baseline: Option<PathBuf>,
    pub baseline_epochs: usize,
    pub baseline_lr: f64,
    pub baseline_batch_size: usize,
    pub penalty: PenaltyKind,
    pub rho: f64,
    pub mus: MuGrid,
    pub schedule: PathSchedule,
    pub guard: LayerGuardPolicy,
    pub seed: u64,
    pub out: PathBuf,
}

struct Raw {
    entries: BTreeMap<String, (usize, String)>,
    base: PathBuf,
}

impl Raw {
    fn parse(text: &str, base: PathBuf) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim().to_string();
            if !KEYS.contains(&k.as_str()) {
                return Err(CliError::Config(format!("line {}: unknown key `{k}`", n + 1)));
            }
            if entries.insert(k.clone(), (n + 1, v.trim().to_string())).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        Ok(Raw { entries, base })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Config(format!("missing key `{key}`")))
    }

    fn parse_value<T: FromStr>(&self, key: &str, default: Option<T>) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match (self.get(key), default) {
            (Some(v), _) => v.parse().map_err(|e| {
                CliError::Config(format!("line {}: `{key}`: {e}", self.entries[key].0))
            }),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(CliError::Config(format!("missing key `{key}`"))),
        }
    }

    fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        let p = self.base.join(self.require(key)?);
        if !p.exists() {
            return Err(CliError::Config(format!("`{key}`: {} does not exist", p.display())));
        }
        Ok(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: PathBuf) -> Result<Self, CliError> {
        let raw = Raw::parse(text, base)?;

        let data = match raw.require("data")? {
            "synth" => {
                let count = raw.parse_value("synth_count", Some(2500))?;
                DataSource::Synth {
                    seed: raw.parse_value("synth_seed", Some(0))?,
                    count,
                    height: raw.parse_value("synth_height", Some(16))?,
                    width: raw.parse_value("synth_width", Some(16))?,
                    classes: raw.parse_value("synth_classes", Some(2))?,
                    noise: raw.parse_value("synth_noise", Some(0.3))?,
                    train_count: raw.parse_value("train_count", Some(count * 4 / 5))?,
                }
            }
            "idx" => DataSource::Idx {
                train_images: raw.path("train_images")?,
                train_labels: raw.path("train_labels")?,
                test_images: raw.path("test_images")?,
                test_labels: raw.path("test_labels")?,
            },
            "csv" => DataSource::Csv {
                train: raw.path("train_csv")?,
                test: raw.path("test_csv")?,
                classes: raw.parse_value("classes", None)?,
            },
            other => return Err(CliError::Config(format!("`data`: unknown source `{other}`"))),
        };
        let contrast_normalize = match raw.get("normalize").unwrap_or("none") {
            "none" => false,
            "contrast" => true,
            other => return Err(CliError::Config(format!("`normalize`: unknown mode `{other}`"))),
        };

        let input: Shape = raw.parse_value("input", None)?;
        let layers = NetworkSpec::parse_layers(raw.require("layers")?)
            .map_err(|e| CliError::Config(format!("`layers`: {e}")))?;
        let spec = NetworkSpec::new(input, layers).map_err(|e| CliError::Config(format!("`layers`: {e}")))?;
        let include = match raw.get("include_layers").unwrap_or("all") {
            "all" => None,
            list => Some(
                list.split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::Config(format!("`include_layers`: {e}")))?,
            ),
        };
        if let Some(list) = &include {
            for &l in list {
                if !spec.layers().get(l).is_some_and(LayerSpec::is_parameterized) {
                    return Err(CliError::Config(format!(
                        "`include_layers`: layer {l} is not a parameterized layer"
                    )));
                }
            }
        }

        let baseline = match raw.get("baseline") {
            Some(_) => Some(raw.path("baseline")?),
            None => None,
        };

        let mu_count = raw.parse_value("mu_count", Some(8usize))?;
        let mus = match raw.get("mus").unwrap_or("auto") {
            "auto" => MuGrid::Auto(mu_count),
            list => MuGrid::Explicit(
                list.split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::Config(format!("`mus`: {e}")))?,
            ),
        };
        let defaults = PathSchedule::default();
        let epsilon = match raw.get("epsilon").unwrap_or("auto") {
            "auto" => None,
            _ => Some(raw.parse_value::<f64>("epsilon", None)?),
        };
        let schedule = PathSchedule {
            mus: Vec::new(),
            delta: raw.parse_value("delta", Some(defaults.delta))?,
            nu: raw.parse_value("nu", Some(defaults.nu))?,
            xi: raw.parse_value("xi", Some(defaults.xi))?,
            epsilon,
            lr: raw.parse_value("lr", Some(defaults.lr))?,
            batch_size: raw.parse_value("batch_size", Some(defaults.batch_size))?,
            momentum: raw.parse_value("momentum", Some(defaults.momentum))?,
        };
        let guard = match raw.get("guard").unwrap_or("mean") {
            "mean" => LayerGuardPolicy::MeanNorm {
                max_pruned_fraction: raw.parse_value("guard_fraction", Some(0.5))?,
            },
            "off" => LayerGuardPolicy::Disabled,
            other => return Err(CliError::Config(format!("`guard`: unknown policy `{other}`"))),
        };

        let config = RunConfig {
            data,
            contrast_normalize,
            spec,
            include,
            baseline,
            baseline_epochs: raw.parse_value("baseline_epochs", Some(5))?,
            baseline_lr: raw.parse_value("baseline_lr", Some(0.05))?,
            baseline_batch_size: raw.parse_value("baseline_batch_size", Some(32))?,
            penalty: raw.parse_value("penalty", Some(PenaltyKind::GroupL0))?,
            rho: raw.parse_value("rho", Some(1.0))?,
            mus,
            schedule,
            guard,
            seed: raw.parse_value("seed", Some(0))?,
            out: raw.base.join(raw.get("out").unwrap_or("out")),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("`rho` must be > 0, got {}", self.rho));
        }
        if self.baseline_lr.is_nan() || self.baseline_lr <= 0.0 || self.baseline_batch_size == 0 {
            return bad("`baseline_lr` and `baseline_batch_size` must be > 0".into());
        }
        if let LayerGuardPolicy::MeanNorm { max_pruned_fraction } = self.guard {
            if !(0.0..=1.0).contains(&max_pruned_fraction) {
                return bad(format!("`guard_fraction` must be in [0, 1], got {max_pruned_fraction}"));
            }
        }
        match &self.mus {
            MuGrid::Auto(0) => return bad("`mu_count` must be >= 1".into()),
            MuGrid::Explicit(m) => {
                let check = PathSchedule {
                    mus: m.clone(),
                    ..self.schedule.clone()
                };
                check.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
            MuGrid::Auto(_) => {
                let check = PathSchedule {
                    mus: vec![0.0],
                    ..self.schedule.clone()
                };
                check.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
        }
        if let DataSource::Synth {
            count, train_count, height, width, ..
        } = self.data
        {
            if train_count == 0 || train_count >= count {
                return bad(format!("`train_count` must be in 1..{count}, got {train_count}"));
            }
            if self.spec.input() != Shape::new(1, height, width) {
                return bad(format!(
                    "`input` {} does not match synthetic images 1x{height}x{width}",
                    self.spec.input()
                ));
            }
        }
        Ok(())
    }

    /// Train and test splits as configured.
    pub fn load_data(&self) -> Result<(Dataset, Dataset), CliError> {
        let (mut train, mut test) = match &self.data {
            DataSource::Synth {
                seed,
                count,
                height,
                width,
                classes,
                noise,
                train_count,
            } => {
                let all = synth_generate(*seed, *count, *height, *width, *classes, *noise)?;
                all.split_at(*train_count)?
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => (load_idx(train_images, train_labels)?, load_idx(test_images, test_labels)?),
            DataSource::Csv { train, test, classes } => (
                load_csv(train, self.spec.input(), *classes)?,
                load_csv(test, self.spec.input(), *classes)?,
            ),
        };
        train.split = Split::Train;
        test.split = Split::Test;
        for ds in [&train, &test] {
            if ds.sample_shape() != self.spec.input() {
                return Err(CliError::Config(format!(
                    "data samples are {}, `input` is {}",
                    ds.sample_shape(),
                    self.spec.input()
                )));
            }
            if ds.class_count > self.spec.classes() {
                return Err(CliError::Config(format!(
                    "data has {} classes, network outputs {}",
                    ds.class_count,
                    self.spec.classes()
                )));
            }
        }
        if self.contrast_normalize {
            train.contrast_normalize();
            test.contrast_normalize();
        }
        Ok((train, test))
    }
}

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

//! `admm-prune`: train a baseline, sparsify it along a `mu` path, score
//! checkpoints and re-derive result tables.
//!
//! Failures print one line `error: <kind>: <message>` to stderr and exit
//! with status 1 (2 for usage errors).

mod config;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use admm_prune::admm::{fine_tune, AdmmError, Observer, TrainSettings};
use admm_prune::blocks::BlockLayout;
use admm_prune::checkpoint::{load_checkpoint, save_checkpoint};
use admm_prune::macs::mac_counts;
use admm_prune::path::{default_mu_grid, run_path, PathConfig, PathPoint, PathSchedule};
use admm_prune::prox::sparsity_stats;
use admm_prune::report::{render_table, to_csv, ReportRow};
use admm_prune::{Mask, Network, PenaltyKind};

use config::{MuGrid, RunConfig};
use manifest::{resolve, Manifest, PointRecord};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Manifest(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Diverged(String),
    #[error(transparent)]
    Core(#[from] admm_prune::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        use admm_prune::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::Manifest(_) => "manifest",
            CliError::Io(_) => "io",
            CliError::Usage(_) => "usage",
            CliError::Diverged(_) => "diverged",
            CliError::Core(e) => match e {
                E::Shape { .. } => "shape",
                E::InvalidSpec(_) => "spec",
                E::LabelOutOfRange { .. } => "label",
                E::NonFinite(_) => "non-finite",
                E::InvalidBlock(_) => "mask",
                E::InvalidArgument(_) => "argument",
                E::Checkpoint(_) => "checkpoint",
                E::Data(_) => "data",
                E::Io(_) => "io",
            },
        }
    }
}

impl From<AdmmError> for CliError {
    fn from(e: AdmmError) -> Self {
        match e {
            AdmmError::Core(e) => CliError::Core(e),
            diverged => CliError::Diverged(diverged.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "admm-prune", version, about = "Filter-level CNN sparsification with ADMM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline network and write `<out>/baseline.ckpt`.
    TrainBaseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the regularization path and write checkpoints, masks, manifest
    /// and results.
    Sparsify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = ["l0", "l1"])]
        penalty: Option<String>,
        /// Extra copy of the results CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score a checkpoint on the configured test split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Mask to apply before scoring.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Re-derive the results table from a manifest and its artifacts.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::TrainBaseline { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            apply_overrides(&mut cfg, seed, out, None);
            let (train, test) = cfg.load_data()?;
            let net = train_baseline(&cfg, &train)?;
            fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
            let path = cfg.out.join("baseline.ckpt");
            save_checkpoint(&net, &path)?;
            println!("checkpoint: {}", path.display());
            println!("accuracy_pct: {:.2}", net.accuracy(&test.images, &test.labels)?);
            Ok(())
        }
        Command::Sparsify {
            config,
            seed,
            out,
            penalty,
            csv,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            apply_overrides(&mut cfg, seed, out, penalty.as_deref());
            let config = fs::canonicalize(&config).map_err(io_err(&config))?;
            sparsify(&cfg, &config, csv.as_deref())
        }
        Command::Evaluate {
            config,
            checkpoint,
            mask,
        } => {
            let cfg = RunConfig::load(&config)?;
            let (_, test) = cfg.load_data()?;
            let mut net = load_checkpoint(&checkpoint)?;
            if let Some(mask) = mask {
                let text = fs::read_to_string(&mask).map_err(io_err(&mask))?;
                net.apply_mask(&Mask::from_text(&text)?)?;
            }
            println!("accuracy_pct: {:.2}", net.accuracy(&test.images, &test.labels)?);
            Ok(())
        }
        Command::Report { manifest, csv } => {
            let rows = rederive(&manifest)?;
            print!("{}", render_table(&rows)?);
            if let Some(csv) = csv {
                fs::write(&csv, to_csv(&rows)?).map_err(io_err(&csv))?;
            }
            Ok(())
        }
    }
}

fn apply_overrides(cfg: &mut RunConfig, seed: Option<u64>, out: Option<PathBuf>, penalty: Option<&str>) {
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.out = out;
    }
    if let Some(p) = penalty {
        cfg.penalty = p.parse().expect("clap restricts the value");
    }
}

fn train_baseline(cfg: &RunConfig, train: &admm_prune::data::Dataset) -> Result<Network, CliError> {
    let net = Network::he_uniform(cfg.spec.clone(), cfg.seed);
    let settings = TrainSettings {
        lr: cfg.baseline_lr,
        batch_size: cfg.baseline_batch_size,
        momentum: 0.0,
        seed: cfg.seed,
    };
    let mut cursor = 0;
    Ok(fine_tune(net, &Mask::new(), train, cfg.baseline_epochs, &settings, &mut cursor)?)
}

/// Writes each point's checkpoint and mask as soon as it is finished.
struct ArtifactWriter<'a> {
    out: &'a Path,
    records: Vec<PointRecord>,
    rows: Vec<ReportRow>,
    failure: Option<CliError>,
}

impl Observer for ArtifactWriter<'_> {
    fn point_done(&mut self, point: &PathPoint) {
        if self.failure.is_some() {
            return;
        }
        let i = self.records.len();
        let ckpt = format!("mu_{i:02}.ckpt");
        let mask = format!("mu_{i:02}.mask");
        let result = save_checkpoint(&point.network, self.out.join(&ckpt))
            .map_err(CliError::from)
            .and_then(|()| {
                let path = self.out.join(&mask);
                fs::write(&path, point.mask.to_text()).map_err(io_err(&path))
            });
        if let Err(e) = result {
            self.failure = Some(e);
            return;
        }
        self.records.push(PointRecord {
            mu: point.mu,
            checkpoint: ckpt,
            mask,
            iterations: point.iterations,
            converged: point.converged,
            training_epochs: point.row.training_epochs,
        });
        self.rows.push(point.row.clone());
    }
}

fn sparsify(cfg: &RunConfig, config_path: &Path, csv: Option<&Path>) -> Result<(), CliError> {
    let (train, test) = cfg.load_data()?;
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let baseline = match &cfg.baseline {
        Some(path) => {
            let net = load_checkpoint(path)?;
            if net.spec() != &cfg.spec {
                return Err(CliError::Config(format!(
                    "baseline {} does not match `layers`",
                    path.display()
                )));
            }
            net
        }
        None => {
            let net = train_baseline(cfg, &train)?;
            save_checkpoint(&net, cfg.out.join("baseline.ckpt"))?;
            net
        }
    };
    let layout = BlockLayout::new(&cfg.spec, cfg.include.as_deref())?;
    let mus = match &cfg.mus {
        MuGrid::Auto(n) => default_mu_grid(&baseline, &layout, cfg.rho, *n),
        MuGrid::Explicit(m) => m.clone(),
    };
    let schedule = PathSchedule {
        mus,
        ..cfg.schedule.clone()
    };
    let path_config = PathConfig {
        schedule: schedule.clone(),
        kind: cfg.penalty,
        rho: cfg.rho,
        guard: cfg.guard,
        include: cfg.include.clone(),
        seed: cfg.seed,
    };

    let mut writer = ArtifactWriter {
        out: &cfg.out,
        records: Vec::new(),
        rows: Vec::new(),
        failure: None,
    };
    let outcome = run_path(&baseline, &train, &test, &path_config, &mut writer)?;
    if let Some(e) = writer.failure {
        return Err(e);
    }

    let mut manifest = Manifest::default();
    manifest.set("config", config_path.display());
    manifest.set("seed", cfg.seed);
    manifest.set("penalty", cfg.penalty.name());
    manifest.set("rho", cfg.rho);
    manifest.set(
        "include_layers",
        match &cfg.include {
            None => "all".to_string(),
            Some(l) => l.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        },
    );
    manifest.set("epsilon", schedule.epsilon_for(&layout));
    manifest.set("delta", schedule.delta);
    manifest.set("nu", schedule.nu);
    manifest.set("xi", schedule.xi);
    manifest.set("lr", schedule.lr);
    manifest.set("batch_size", schedule.batch_size);
    manifest.set("momentum", schedule.momentum);
    manifest.set(
        "mus",
        schedule.mus.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    );
    manifest.points = writer.records;
    manifest.status = match &outcome.error {
        None => "complete".into(),
        Some(e) => format!("aborted: {e}"),
    };
    let manifest_path = cfg.out.join("manifest.txt");
    fs::write(&manifest_path, manifest.render()).map_err(io_err(&manifest_path))?;

    let table = render_table(&writer.rows)?;
    let table_path = cfg.out.join("results.txt");
    fs::write(&table_path, &table).map_err(io_err(&table_path))?;
    let csv_text = to_csv(&writer.rows)?;
    let csv_path = cfg.out.join("results.csv");
    fs::write(&csv_path, &csv_text).map_err(io_err(&csv_path))?;
    if let Some(extra) = csv {
        fs::write(extra, &csv_text).map_err(io_err(extra))?;
    }
    print!("{table}");
    match outcome.error {
        None => Ok(()),
        Some(e) => Err(e.into()),
    }
}

/// Rebuilds every row from the stored checkpoint and mask, re-scoring
/// accuracy on the test split of the recorded config.
fn rederive(manifest_path: &Path) -> Result<Vec<ReportRow>, CliError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest = Manifest::parse(&text)?;
    let cfg = RunConfig::load(Path::new(manifest.require("config")?))?;
    let (_, test) = cfg.load_data()?;
    let include = match manifest.require("include_layers")? {
        "all" => None,
        list => Some(
            list.split(',')
                .map(str::parse)
                .collect::<Result<Vec<usize>, _>>()
                .map_err(|e| CliError::Manifest(format!("include_layers: {e}")))?,
        ),
    };
    let _: PenaltyKind = manifest
        .require("penalty")?
        .parse()
        .map_err(|e| CliError::Manifest(format!("penalty: {e}")))?;

    let mut rows = Vec::with_capacity(manifest.points.len());
    for p in &manifest.points {
        let net = load_checkpoint(resolve(manifest_path, &p.checkpoint))?;
        let mask_path = resolve(manifest_path, &p.mask);
        let mask = Mask::from_text(&fs::read_to_string(&mask_path).map_err(io_err(&mask_path))?)?;
        mask.validate(net.spec())?;
        let layout = BlockLayout::new(net.spec(), include.as_deref())?;
        let stats = sparsity_stats(&mask, &layout);
        rows.push(ReportRow {
            mu: p.mu,
            accuracy_pct: net.accuracy(&test.images, &test.labels)?,
            pruned_per_layer: stats.pruned_per_layer,
            sparsity_pct: stats.sparsity_pct,
            training_epochs: p.training_epochs,
            speedup: mac_counts(net.spec(), net.spec().input(), &mask)?.speedup(),
        });
    }
    Ok(rows)
}

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

//! Regularization path: warm-started ADMM over increasing `mu`, each value
//! followed by mask-frozen fine-tuning.

use crate::admm::{fine_tune, inner_admm, AdmmError, AdmmState, InnerConfig, Observer, TrainSettings};
use crate::blocks::{BlockLayout, Mask};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::macs::mac_counts;
use crate::network::Network;
use crate::prox::{block_views, mask_from_aux, sparsity_stats, LayerGuardPolicy, PenaltyKind};
use crate::report::ReportRow;

/// Epochs for the `i`-th (1-based) `mu`: `min(1 + delta (i - 1), delta nu)`.
pub fn epoch_schedule(i: usize, delta: usize, nu: usize) -> usize {
    assert!(i >= 1, "epoch_schedule index is 1-based");
    (1 + delta * (i - 1)).min(delta * nu)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSchedule {
    /// Penalty weights, ascending.
    pub mus: Vec<f64>,
    pub delta: usize,
    pub nu: usize,
    /// Inner iteration cap.
    pub xi: usize,
    /// Residual tolerance; `None` means `1e-3 sqrt(included weights)`.
    pub epsilon: Option<f64>,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for PathSchedule {
    fn default() -> Self {
        PathSchedule {
            mus: Vec::new(),
            delta: 1,
            nu: 15,
            xi: 10,
            epsilon: None,
            lr: 0.001,
            batch_size: 128,
            momentum: 0.0,
        }
    }
}

impl PathSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.mus.is_empty() {
            return bad("mu list is empty".into());
        }
        if self.mus.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return bad("mu values must be finite and >= 0".into());
        }
        if self.mus.windows(2).any(|w| w[1] < w[0]) {
            return bad("mu values must be ascending".into());
        }
        if self.delta == 0 || self.nu == 0 || self.xi == 0 {
            return bad("delta, nu and xi must be >= 1".into());
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return bad(format!("epsilon must be > 0, got {eps}"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }

    pub fn epsilon_for(&self, layout: &BlockLayout) -> f64 {
        self.epsilon
            .unwrap_or_else(|| default_epsilon(layout))
    }
}

pub fn default_epsilon(layout: &BlockLayout) -> f64 {
    1e-3 * (layout.weight_count() as f64).sqrt()
}

/// `count` log-spaced values over `[1e-3, 1] * rho * median block norm`.
pub fn default_mu_grid(net: &Network, layout: &BlockLayout, rho: f64, count: usize) -> Vec<f64> {
    let weights = net.weight_blocks(layout);
    let mut norms: Vec<f64> = block_views(layout, &weights).iter().map(|b| b.frobenius_norm).collect();
    norms.sort_by(f64::total_cmp);
    let median = match norms.len() {
        0 => 0.0,
        n if n % 2 == 1 => norms[n / 2],
        n => 0.5 * (norms[n / 2 - 1] + norms[n / 2]),
    };
    let hi = rho * median;
    let lo = 1e-3 * hi;
    match count {
        0 => Vec::new(),
        1 => vec![hi],
        _ => (0..count)
            .map(|k| lo * (hi / lo).powf(k as f64 / (count - 1) as f64))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathConfig {
    pub schedule: PathSchedule,
    pub kind: PenaltyKind,
    pub rho: f64,
    pub guard: LayerGuardPolicy,
    /// Layers carrying the penalty; `None` means all parameterized layers.
    pub include: Option<Vec<usize>>,
    pub seed: u64,
}

/// One finished value of the path. The baseline point has `mu = 0`,
/// an empty mask and no iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPoint {
    pub mu: f64,
    pub network: Network,
    pub mask: Mask,
    pub row: ReportRow,
    pub iterations: usize,
    pub converged: bool,
    pub baseline: bool,
}

#[derive(Debug)]
pub struct PathOutcome {
    /// Baseline point first, then one per completed `mu`.
    pub points: Vec<PathPoint>,
    /// Set when a `mu` failed; `points` then holds the completed ones.
    pub error: Option<AdmmError>,
}

fn evaluate(
    net: &Network,
    mask: &Mask,
    layout: &BlockLayout,
    test: &Dataset,
    mu: f64,
    epochs: usize,
) -> Result<ReportRow> {
    let stats = sparsity_stats(mask, layout);
    let macs = mac_counts(net.spec(), net.spec().input(), mask)?;
    Ok(ReportRow {
        mu,
        accuracy_pct: net.accuracy(&test.images, &test.labels)?,
        pruned_per_layer: stats.pruned_per_layer,
        sparsity_pct: stats.sparsity_pct,
        training_epochs: epochs,
        speedup: macs.speedup(),
    })
}

/// Sweeps `config.schedule.mus` from `baseline`.
///
/// Each value starts from the previous value's fine-tuned weights with
/// `F = W` and `Gamma = 0`, runs the inner ADMM loop, derives the mask from
/// `F`, fine-tunes with that mask frozen and scores the result on `test`.
pub fn run_path(
    baseline: &Network,
    train: &Dataset,
    test: &Dataset,
    config: &PathConfig,
    observer: &mut dyn Observer,
) -> Result<PathOutcome> {
    let schedule = &config.schedule;
    schedule.validate()?;
    let layout = BlockLayout::new(baseline.spec(), config.include.as_deref())?;
    let settings = TrainSettings {
        lr: schedule.lr,
        batch_size: schedule.batch_size,
        momentum: schedule.momentum,
        seed: config.seed,
    };
    let inner = InnerConfig {
        kind: config.kind,
        guard: config.guard,
        epsilon: schedule.epsilon_for(&layout),
        max_iterations: schedule.xi,
        train: settings,
    };

    let mut base = baseline.clone();
    base.unfreeze();
    let base_row = evaluate(&base, &Mask::new(), &layout, test, 0.0, 0)?;
    let base_point = PathPoint {
        mu: 0.0,
        network: base.clone(),
        mask: Mask::new(),
        row: base_row,
        iterations: 0,
        converged: true,
        baseline: true,
    };
    observer.point_done(&base_point);
    let mut points = vec![base_point];

    let mut current = base;
    let mut cursor = 0u64;
    for (idx, &mu) in schedule.mus.iter().enumerate() {
        let epochs = epoch_schedule(idx + 1, schedule.delta, schedule.nu);
        let mut start = current.clone();
        start.unfreeze();
        let mut state = AdmmState::new(start, layout.clone(), config.rho, mu)?;
        state.epoch_cursor = cursor;

        let outcome = match inner_admm(&mut state, train, epochs, &inner, observer) {
            Ok(o) => o,
            Err(e) => return Ok(PathOutcome { points, error: Some(e) }),
        };
        cursor = state.epoch_cursor;
        let mask = mask_from_aux(&state.aux, &layout)?;
        let tuned = match fine_tune(state.net, &mask, train, epochs, &settings, &mut cursor) {
            Ok(n) => n,
            Err(e) => return Ok(PathOutcome { points, error: Some(e) }),
        };
        let total_epochs = outcome.iterations * epochs + epochs;
        let row = evaluate(&tuned, &mask, &layout, test, mu, total_epochs)?;
        let point = PathPoint {
            mu,
            network: tuned.clone(),
            mask,
            row,
            iterations: outcome.iterations,
            converged: outcome.converged,
            baseline: false,
        };
        observer.point_done(&point);
        points.push(point);
        current = tuned;
    }
    Ok(PathOutcome { points, error: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        assert_eq!(epoch_schedule(1, 1, 15), 1);
        assert_eq!(epoch_schedule(2, 1, 15), 2);
        assert_eq!(epoch_schedule(15, 1, 15), 15);
        assert_eq!(epoch_schedule(20, 1, 15), 15);
        assert_eq!(epoch_schedule(3, 2, 15), 5);
        assert_eq!(epoch_schedule(100, 2, 15), 30);
        let xi = 10;
        assert_eq!(epoch_schedule(15, 1, 15) * xi + epoch_schedule(15, 1, 15), 165);
    }

    #[test]
    fn validation() {
        let ok = PathSchedule {
            mus: vec![0.0, 0.1],
            ..PathSchedule::default()
        };
        assert!(ok.validate().is_ok());
        for broken in [
            PathSchedule { mus: vec![], ..ok.clone() },
            PathSchedule { mus: vec![0.2, 0.1], ..ok.clone() },
            PathSchedule { mus: vec![-1.0], ..ok.clone() },
            PathSchedule { xi: 0, ..ok.clone() },
            PathSchedule { lr: 0.0, ..ok.clone() },
            PathSchedule { batch_size: 0, ..ok.clone() },
            PathSchedule { epsilon: Some(0.0), ..ok.clone() },
            PathSchedule { momentum: 1.0, ..ok.clone() },
        ] {
            assert!(broken.validate().is_err(), "{broken:?}");
        }
    }

    #[test]
    fn mu_grid_is_log_spaced() {
        use crate::layer::{LayerSpec, NetworkSpec, Shape};
        let spec = NetworkSpec::new(
            Shape::new(1, 1, 4),
            vec![LayerSpec::fc(4, 3), LayerSpec::SoftmaxXentHead],
        )
        .unwrap();
        let mut net = Network::zeros(spec.clone());
        // Row norms 1, 2, 3; median 2.
        for (j, v) in [1.0f32, 2.0, 3.0].iter().enumerate() {
            net.layer_params_mut(0).unwrap().weight.data_mut()[4 * j] = *v;
        }
        let layout = BlockLayout::new(&spec, None).unwrap();
        let grid = default_mu_grid(&net, &layout, 2.0, 8);
        assert_eq!(grid.len(), 8);
        assert!((grid[0] - 4e-3).abs() < 1e-15);
        assert!((grid[7] - 4.0).abs() < 1e-12);
        let ratio = grid[1] / grid[0];
        for w in grid.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1e-12);
        }
        assert!((default_epsilon(&layout) - 1e-3 * 12f64.sqrt()).abs() < 1e-15);
    }
}

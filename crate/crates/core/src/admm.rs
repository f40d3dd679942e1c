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

//! The three-step ADMM iteration, its stopping rule and mask-constrained
//! fine-tuning.

use thiserror::Error;

use crate::blocks::{BlockLayout, BlockTensors, Mask};
use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::optim::Sgd;
use crate::prox::{block_views, penalty_value, sparsity_step, LayerGuardPolicy, PenaltyKind};
use crate::tensor::Tensor;

/// `(W, F, Gamma)` with the penalty parameters and residuals of the last
/// iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub net: Network,
    /// Auxiliary variable `F`, one tensor per included layer.
    pub aux: BlockTensors,
    /// Dual variable `Gamma`.
    pub dual: BlockTensors,
    pub rho: f64,
    pub mu: f64,
    /// Completed ADMM iterations.
    pub k: usize,
    /// `||W - F||`
    pub primal_residual: f64,
    /// `||F_{k+1} - F_k||`
    pub aux_change: f64,
    layout: BlockLayout,
    /// Training epochs consumed so far; selects the batch permutation.
    pub epoch_cursor: u64,
}

impl AdmmState {
    /// Fresh state at `W = net`: `F = W`, `Gamma = 0`.
    pub fn new(net: Network, layout: BlockLayout, rho: f64, mu: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be > 0, got {rho}")));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu must be >= 0, got {mu}")));
        }
        for lb in layout.layers() {
            if net.spec().layers().get(lb.layer).and_then(|l| l.block_dims())
                != Some((lb.input_maps, lb.output_maps, lb.block_len))
            {
                return Err(Error::InvalidArgument(format!(
                    "layout layer {} does not match the network",
                    lb.layer
                )));
            }
        }
        let aux = net.weight_blocks(&layout);
        let dual = layout.zeros(net.spec());
        Ok(AdmmState {
            net,
            aux,
            dual,
            rho,
            mu,
            k: 0,
            primal_residual: 0.0,
            aux_change: 0.0,
            layout,
            epoch_cursor: 0,
        })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// Proximal targets of the performance step, `U = F - Gamma/rho`.
    pub fn targets(&self) -> BlockTensors {
        combine(&self.aux, &self.dual, -1.0 / self.rho)
    }

    /// Input of the sparsity step, `V = W + Gamma/rho`.
    pub fn prox_input(&self) -> BlockTensors {
        combine(&self.net.weight_blocks(&self.layout), &self.dual, 1.0 / self.rho)
    }

    /// `||W - F||` over the included layers.
    pub fn compute_primal_residual(&self) -> f64 {
        distance(&self.net.weight_blocks(&self.layout), &self.aux)
    }
}

/// `a + scale * b`, elementwise in `f64`.
fn combine(a: &BlockTensors, b: &BlockTensors, scale: f64) -> BlockTensors {
    a.iter()
        .map(|(&l, ta)| {
            let tb = &b[&l];
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| (x as f64 + scale * y as f64) as f32)
                .collect();
            (l, Tensor::from_vec(ta.shape(), data).expect("same shape"))
        })
        .collect()
}

/// Frobenius distance over all layers of two block-tensor sets.
pub fn distance(a: &BlockTensors, b: &BlockTensors) -> f64 {
    a.iter()
        .map(|(l, ta)| {
            let d = ta.distance(&b[l]);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Error)]
pub enum AdmmError {
    #[error("training diverged at epoch {epoch}: loss is no longer finite")]
    Diverged {
        epoch: u64,
        /// State just before the step that produced non-finite values.
        last_finite: Box<AdmmState>,
    },
    #[error(transparent)]
    Core(#[from] Error),
}

/// Mini-batch SGD settings shared by every training phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            lr: 0.001,
            batch_size: 128,
            momentum: 0.0,
            seed: 0,
        }
    }
}

/// Hooks into the iteration; every method defaults to a no-op.
pub trait Observer {
    /// Called before the first iteration of an inner ADMM loop.
    fn inner_start(&mut self, _state: &AdmmState) {}
    /// Called right after each dual update with the dual it replaced.
    fn dual_updated(&mut self, _previous_dual: &BlockTensors, _state: &AdmmState) {}
    /// Called when one value of the regularization path is finished.
    fn point_done(&mut self, _point: &crate::path::PathPoint) {}
}

impl Observer for () {}

/// Runs `epochs` passes of mini-batch SGD over `data`, pulling the weights
/// of `targets`' layers toward them with strength `rho`. Advances
/// `epoch_cursor` once per epoch.
#[allow(clippy::result_large_err)]
fn train_epochs(
    net: &mut Network,
    data: &Dataset,
    epochs: usize,
    targets: Option<&BlockTensors>,
    rho: f64,
    settings: &TrainSettings,
    epoch_cursor: &mut u64,
) -> std::result::Result<(), (u64, Network, Error)> {
    let mut sgd = Sgd::new(settings.lr, settings.momentum).map_err(|e| (*epoch_cursor, net.clone(), e))?;
    for _ in 0..epochs {
        let epoch = *epoch_cursor;
        let batches =
            batch_iter(data, settings.batch_size, settings.seed, epoch).map_err(|e| (epoch, net.clone(), e))?;
        for (images, labels) in batches {
            let before = net.clone();
            let (loss, grads) = match net.loss_and_grad(&images, &labels) {
                Ok(v) => v,
                Err(e) => return Err((epoch, before, e)),
            };
            if !loss.is_finite() {
                return Err((epoch, before, Error::NonFinite("loss".into())));
            }
            if let Err(e) = sgd.step(net, &grads, targets, rho) {
                return Err((epoch, before, e));
            }
            if !net.is_finite() {
                return Err((epoch, before, Error::NonFinite("weights".into())));
            }
        }
        *epoch_cursor += 1;
    }
    Ok(())
}

fn divergence(state: &AdmmState, epoch: u64, last: Network, err: Error) -> AdmmError {
    match err {
        Error::NonFinite(_) => {
            let mut last_finite = state.clone();
            last_finite.net = last;
            AdmmError::Diverged {
                epoch,
                last_finite: Box::new(last_finite),
            }
        }
        other => AdmmError::Core(other),
    }
}

/// Performance-promoting step: `epochs` of proximal SGD on
/// `L(W) + (rho/2) ||W - U||^2` with `U = F - Gamma/rho` held fixed.
pub fn performance_step(
    state: &mut AdmmState,
    data: &Dataset,
    epochs: usize,
    settings: &TrainSettings,
) -> std::result::Result<(), AdmmError> {
    if epochs == 0 {
        return Err(Error::InvalidArgument("performance step needs at least one epoch".into()).into());
    }
    let targets = state.targets();
    let mut net = state.net.clone();
    let mut cursor = state.epoch_cursor;
    match train_epochs(&mut net, data, epochs, Some(&targets), state.rho, settings, &mut cursor) {
        Ok(()) => {
            state.net = net;
            state.epoch_cursor = cursor;
            Ok(())
        }
        Err((epoch, last, err)) => Err(divergence(state, epoch, last, err)),
    }
}

/// Dual ascent with step `rho`: `Gamma <- Gamma + rho (W - F)`.
pub fn dual_update(state: &mut AdmmState) {
    let weights = state.net.weight_blocks(&state.layout);
    let rho = state.rho;
    for (l, gamma) in state.dual.iter_mut() {
        let w = weights[l].data();
        let f = state.aux[l].data();
        for ((g, &w), &f) in gamma.data_mut().iter_mut().zip(w).zip(f) {
            *g = (*g as f64 + rho * (w as f64 - f as f64)) as f32;
        }
    }
}

/// Settings of one inner ADMM loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerConfig {
    pub kind: PenaltyKind,
    pub guard: LayerGuardPolicy,
    pub epsilon: f64,
    /// Iteration cap.
    pub max_iterations: usize,
    pub train: TrainSettings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerOutcome {
    pub converged: bool,
    pub iterations: usize,
    /// `(||W - F||, ||F_new - F_old||)` after each iteration.
    pub residuals: Vec<(f64, f64)>,
}

/// Repeats performance step, sparsity step and dual update until both
/// residuals are at most `epsilon` or `max_iterations` is reached.
pub fn inner_admm(
    state: &mut AdmmState,
    data: &Dataset,
    epochs: usize,
    config: &InnerConfig,
    observer: &mut dyn Observer,
) -> std::result::Result<InnerOutcome, AdmmError> {
    if config.max_iterations == 0 {
        return Err(Error::InvalidArgument("max_iterations must be >= 1".into()).into());
    }
    if config.epsilon.is_nan() || config.epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {}", config.epsilon)).into());
    }
    observer.inner_start(state);
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iterations {
        performance_step(state, data, epochs, &config.train)?;
        let weights = state.net.weight_blocks(&state.layout);
        let aux = sparsity_step(
            &weights,
            &state.dual,
            &state.layout,
            state.rho,
            state.mu,
            config.kind,
            config.guard,
        )?;
        state.aux_change = distance(&aux, &state.aux);
        state.primal_residual = distance(&weights, &aux);
        state.aux = aux;

        let previous = state.dual.clone();
        dual_update(state);
        state.k += 1;
        observer.dual_updated(&previous, state);

        residuals.push((state.primal_residual, state.aux_change));
        if state.primal_residual <= config.epsilon && state.aux_change <= config.epsilon {
            converged = true;
            break;
        }
    }
    Ok(InnerOutcome {
        converged,
        iterations: residuals.len(),
        residuals,
    })
}

/// Freezes `mask` and trains the remaining weights for `epochs` with plain
/// SGD on the recognition loss.
pub fn fine_tune(
    net: Network,
    mask: &Mask,
    data: &Dataset,
    epochs: usize,
    settings: &TrainSettings,
    epoch_cursor: &mut u64,
) -> std::result::Result<Network, AdmmError> {
    let mut net = net;
    net.apply_mask(mask)?;
    let mut cursor = *epoch_cursor;
    match train_epochs(&mut net, data, epochs, None, 0.0, settings, &mut cursor) {
        Ok(()) => {
            *epoch_cursor = cursor;
            Ok(net)
        }
        Err((epoch, last, Error::NonFinite(_))) => {
            let layout = BlockLayout::new(last.spec(), None)?;
            let state = AdmmState::new(last, layout, 1.0, 0.0)?;
            Err(AdmmError::Diverged {
                epoch,
                last_finite: Box::new(state),
            })
        }
        Err((_, _, err)) => Err(err.into()),
    }
}

/// Values of the augmented Lagrangian at one point, computed directly and
/// through each of the two completed-square sub-problem objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LagrangianAudit {
    /// `L(W) + mu f(F) + <Gamma, W - F> + (rho/2) ||W - F||^2`
    pub direct: f64,
    /// `[L(W) + (rho/2) ||W - U||^2] + mu f(F) - ||Gamma||^2 / (2 rho)`
    pub via_performance: f64,
    /// `L(W) + [mu f(F) + (rho/2) ||F - V||^2] - ||Gamma||^2 / (2 rho)`
    pub via_sparsity: f64,
}

pub fn lagrangian_audit(
    state: &AdmmState,
    data: &Dataset,
    kind: PenaltyKind,
) -> Result<LagrangianAudit> {
    let loss = state.net.loss(&data.images, &data.labels)?;
    let layout = &state.layout;
    let penalty = state.mu * penalty_value(&block_views(layout, &state.aux), kind);
    let weights = state.net.weight_blocks(layout);
    let rho = state.rho;

    let mut inner = 0.0;
    let mut gap_sq = 0.0;
    let mut dual_sq = 0.0;
    for (l, w) in &weights {
        for ((&w, &f), &g) in w.data().iter().zip(state.aux[l].data()).zip(state.dual[l].data()) {
            let d = w as f64 - f as f64;
            inner += g as f64 * d;
            gap_sq += d * d;
            dual_sq += g as f64 * g as f64;
        }
    }
    let direct = loss + penalty + inner + 0.5 * rho * gap_sq;

    // Sub-problem objectives use U and V formed in f64.
    let mut to_u = 0.0;
    let mut to_v = 0.0;
    for (l, w) in &weights {
        for ((&w, &f), &g) in w.data().iter().zip(state.aux[l].data()).zip(state.dual[l].data()) {
            let (w, f, g) = (w as f64, f as f64, g as f64);
            let u = f - g / rho;
            let v = w + g / rho;
            to_u += (w - u) * (w - u);
            to_v += (f - v) * (f - v);
        }
    }
    let performance_objective = loss + 0.5 * rho * to_u;
    let sparsity_objective = penalty + 0.5 * rho * to_v;
    let constant = dual_sq / (2.0 * rho);
    Ok(LagrangianAudit {
        direct,
        via_performance: performance_objective + penalty - constant,
        via_sparsity: loss + sparsity_objective - constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_generate;
    use crate::layer::{LayerSpec, NetworkSpec, Shape};
    use crate::prox::mask_from_aux;

    fn fixture() -> (Network, Dataset, BlockLayout) {
        let data = synth_generate(3, 16, 4, 4, 2, 0.2).unwrap();
        let spec = NetworkSpec::new(
            Shape::new(1, 4, 4),
            vec![
                LayerSpec::conv3x3(1, 2),
                LayerSpec::Relu,
                LayerSpec::max_pool(2),
                LayerSpec::fc(8, 2),
                LayerSpec::SoftmaxXentHead,
            ],
        )
        .unwrap();
        let net = Network::he_uniform(spec.clone(), 1);
        let layout = BlockLayout::new(&spec, None).unwrap();
        (net, data, layout)
    }

    fn full_batch(data: &Dataset, lr: f64) -> TrainSettings {
        TrainSettings {
            lr,
            batch_size: data.len(),
            momentum: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn fresh_state_has_f_equal_w_and_zero_dual() {
        let (net, _, layout) = fixture();
        let s = AdmmState::new(net.clone(), layout.clone(), 1.0, 0.1).unwrap();
        assert_eq!(s.aux, net.weight_blocks(&layout));
        assert!(s.dual.values().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert_eq!(s.compute_primal_residual(), 0.0);
        assert!(AdmmState::new(net, layout, 0.0, 0.1).is_err());
    }

    #[test]
    fn dual_update_cases() {
        let (net, _, layout) = fixture();
        let mut s = AdmmState::new(net, layout, 2.0, 0.0).unwrap();
        let before = s.dual.clone();
        dual_update(&mut s);
        assert_eq!(s.dual, before, "W = F leaves the dual unchanged");

        for t in s.aux.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v -= 0.25);
        }
        dual_update(&mut s);
        for t in s.dual.values() {
            assert!(t.data().iter().all(|&g| (g - 0.5).abs() < 1e-6), "Gamma' = 2 E with E = 0.25");
        }
    }

    #[test]
    fn strong_prox_pulls_w_toward_u() {
        let (net, data, layout) = fixture();
        let mut s = AdmmState::new(net, layout.clone(), 1e6, 0.0).unwrap();
        for t in s.aux.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 0.5);
        }
        let u = s.targets();
        let before = distance(&s.net.weight_blocks(&layout), &u);
        performance_step(&mut s, &data, 1, &full_batch(&data, 1e-7)).unwrap();
        let after = distance(&s.net.weight_blocks(&layout), &u);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn performance_step_from_f_equal_w_descends() {
        let (net, data, layout) = fixture();
        let before = net.loss(&data.images, &data.labels).unwrap();
        let mut s = AdmmState::new(net, layout, 1.0, 0.0).unwrap();
        performance_step(&mut s, &data, 1, &full_batch(&data, 0.01)).unwrap();
        let after = s.net.loss(&data.images, &data.labels).unwrap();
        assert!(after < before);
        assert_eq!(s.epoch_cursor, 1);
    }

    /// Replays one epoch of 4-sample full-batch steps with the update rule
    /// written out by hand.
    #[test]
    fn performance_step_matches_replay() {
        let (net, data, layout) = fixture();
        let data = {
            let (d, _) = data.split_at(4).unwrap();
            d
        };
        let mut s = AdmmState::new(net.clone(), layout.clone(), 0.5, 0.0).unwrap();
        for t in s.dual.values_mut() {
            t.data_mut().iter_mut().enumerate().for_each(|(k, v)| *v = 0.01 * (k % 5) as f32);
        }
        let u = s.targets();
        let settings = full_batch(&data, 0.05);
        performance_step(&mut s, &data, 1, &settings).unwrap();

        let mut replay = net;
        let (_, grads) = replay.loss_and_grad(&data.images, &data.labels).unwrap();
        for l in replay.spec().parameterized_layers().collect::<Vec<_>>() {
            let g = grads.layer(l).unwrap().clone();
            let p = replay.layer_params_mut(l).unwrap();
            for (k, w) in p.weight.data_mut().iter_mut().enumerate() {
                let pull = 0.5 * (*w as f64 - u[&l].data()[k] as f64);
                *w = (*w as f64 - 0.05 * (g.weight.data()[k] as f64 + pull)) as f32;
            }
            for (k, b) in p.bias.data_mut().iter_mut().enumerate() {
                *b = (*b as f64 - 0.05 * g.bias.data()[k] as f64) as f32;
            }
        }
        let a = s.net.loss(&data.images, &data.labels).unwrap();
        let b = replay.loss(&data.images, &data.labels).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn zero_mu_keeps_f_equal_w() {
        let (net, data, layout) = fixture();
        let mut s = AdmmState::new(net, layout.clone(), 1.0, 0.0).unwrap();
        let config = InnerConfig {
            kind: PenaltyKind::GroupL0,
            guard: LayerGuardPolicy::default(),
            epsilon: 1e-3,
            max_iterations: 1,
            train: full_batch(&data, 1e-3),
        };
        let out = inner_admm(&mut s, &data, 1, &config, &mut ()).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(s.aux, s.net.weight_blocks(&layout));
        assert_eq!(s.primal_residual, 0.0);
        assert_eq!(out.converged, s.aux_change <= 1e-3);
        assert!(mask_from_aux(&s.aux, &layout).unwrap().is_empty());
    }

    #[test]
    fn iteration_cap_is_respected() {
        let (net, data, layout) = fixture();
        let mut s = AdmmState::new(net, layout, 1.0, 0.5).unwrap();
        let config = InnerConfig {
            kind: PenaltyKind::GroupL1,
            guard: LayerGuardPolicy::Disabled,
            epsilon: 1e-12,
            max_iterations: 3,
            train: full_batch(&data, 1e-2),
        };
        let out = inner_admm(&mut s, &data, 1, &config, &mut ()).unwrap();
        assert_eq!(out.iterations, 3);
        assert!(!out.converged);
        assert_eq!(s.k, 3);
    }

    #[test]
    fn divergence_returns_last_finite_state() {
        let (net, data, layout) = fixture();
        let mut s = AdmmState::new(net, layout, 1.0, 0.0).unwrap();
        let err = performance_step(&mut s, &data, 5, &full_batch(&data, 1e38)).unwrap_err();
        match err {
            AdmmError::Diverged { last_finite, .. } => assert!(last_finite.net.is_finite()),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn fine_tune_freezes_mask() {
        let (net, data, layout) = fixture();
        let mask: Mask = layout.blocks().step_by(3).collect();
        let mut cursor = 0;
        let tuned = fine_tune(net.clone(), &mask, &data, 3, &full_batch(&data, 0.1), &mut cursor).unwrap();
        assert_eq!(cursor, 3);
        assert_eq!(mask_from_aux(&tuned.weight_blocks(&layout), &layout).unwrap(), mask);

        let mut cursor = 0;
        let same = fine_tune(net.clone(), &Mask::new(), &data, 0, &full_batch(&data, 0.1), &mut cursor).unwrap();
        assert_eq!(same, net);
    }

    #[test]
    fn audit_routes_agree() {
        let (net, data, layout) = fixture();
        let mut s = AdmmState::new(net, layout, 2.0, 0.3).unwrap();
        let config = InnerConfig {
            kind: PenaltyKind::GroupL1,
            guard: LayerGuardPolicy::Disabled,
            epsilon: 1e-9,
            max_iterations: 2,
            train: full_batch(&data, 0.05),
        };
        inner_admm(&mut s, &data, 1, &config, &mut ()).unwrap();
        let a = lagrangian_audit(&s, &data, PenaltyKind::GroupL1).unwrap();
        let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1e-12);
        assert!(rel(a.direct, a.via_performance) < 1e-5, "{a:?}");
        assert!(rel(a.direct, a.via_sparsity) < 1e-5, "{a:?}");
    }
}

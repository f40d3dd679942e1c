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

//! Closed-form solutions of the sparsity-promoting sub-problem
//!
//! `minimize_F  mu * f(F) + (rho/2) * sum_b ||F_b - V_b||^2`,  `V = W + Gamma/rho`
//!
//! for block penalties `f`: group soft thresholding when `f` sums block
//! Frobenius norms, group hard thresholding when `f` counts nonzero blocks.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::blocks::{BlockId, BlockLayout, BlockTensors, Mask};
use crate::error::{Error, Result};
use crate::tensor::{sum_sq, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyKind {
    /// `f(F) = sum_b ||F_b||_F`
    GroupL1,
    /// `f(F) = #{b : F_b != 0}`
    GroupL0,
}

impl PenaltyKind {
    /// `mu / rho` for group-l1, `sqrt(2 mu / rho)` for group-l0.
    pub fn threshold(self, mu: f64, rho: f64) -> f64 {
        match self {
            PenaltyKind::GroupL1 => mu / rho,
            PenaltyKind::GroupL0 => (2.0 * mu / rho).sqrt(),
        }
    }

    /// Penalty contribution of one block with the given norm.
    pub fn block_penalty(self, norm: f64) -> f64 {
        match self {
            PenaltyKind::GroupL1 => norm,
            PenaltyKind::GroupL0 => (norm > 0.0) as u8 as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::GroupL1 => "l1",
            PenaltyKind::GroupL0 => "l0",
        }
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "l1" | "group-l1" => Ok(PenaltyKind::GroupL1),
            "l0" | "group-l0" => Ok(PenaltyKind::GroupL0),
            other => Err(Error::InvalidArgument(format!(
                "unknown penalty `{other}`, expected l0 or l1"
            ))),
        }
    }
}

/// The values of one block with their cached Frobenius norm.
#[derive(Clone, Debug)]
pub struct BlockView<'a> {
    pub block: BlockId,
    pub values: &'a [f32],
    pub frobenius_norm: f64,
}

impl<'a> BlockView<'a> {
    pub fn new(block: BlockId, values: &'a [f32]) -> Self {
        BlockView {
            block,
            values,
            frobenius_norm: sum_sq(values).sqrt(),
        }
    }
}

/// Views of every block of `tensors` laid out by `layout`.
pub fn block_views<'a>(layout: &BlockLayout, tensors: &'a BlockTensors) -> Vec<BlockView<'a>> {
    layout
        .layers()
        .iter()
        .flat_map(|lb| {
            let data = tensors[&lb.layer].data();
            lb.iter()
                .map(move |(id, range)| BlockView::new(id, &data[range]))
        })
        .collect()
}

/// `sum_b ||F_b||` for group-l1, number of nonzero blocks for group-l0.
pub fn penalty_value(blocks: &[BlockView<'_>], kind: PenaltyKind) -> f64 {
    blocks
        .iter()
        .map(|b| kind.block_penalty(b.frobenius_norm))
        .sum()
}

/// Group soft threshold: `(1 - a/||V||) V` when `||V|| > a`, else zero.
pub fn prox_l1_block(v: &BlockView<'_>, a: f64) -> Vec<f32> {
    if v.frobenius_norm > a {
        shrink(v.values, 1.0 - a / v.frobenius_norm)
    } else {
        vec![0.0; v.values.len()]
    }
}

/// Group hard threshold: `V` when `||V|| > b`, else zero.
pub fn prox_l0_block(v: &BlockView<'_>, b: f64) -> Vec<f32> {
    if v.frobenius_norm > b {
        v.values.to_vec()
    } else {
        vec![0.0; v.values.len()]
    }
}

fn shrink(values: &[f32], scale: f64) -> Vec<f32> {
    if scale == 1.0 {
        return values.to_vec();
    }
    values.iter().map(|&x| (x as f64 * scale) as f32).collect()
}

/// Guard against emptying a layer in one sparsity step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerGuardPolicy {
    Disabled,
    /// When more than `max_pruned_fraction` of a layer's blocks would be
    /// zeroed, redo that layer keeping exactly the blocks whose norm is
    /// strictly above the layer's mean block norm.
    MeanNorm { max_pruned_fraction: f64 },
}

impl Default for LayerGuardPolicy {
    fn default() -> Self {
        LayerGuardPolicy::MeanNorm {
            max_pruned_fraction: 0.5,
        }
    }
}

/// Solves the sparsity-promoting sub-problem blockwise.
///
/// Computes `V = W + Gamma/rho` for every included block and applies the
/// group prox of `kind` at its threshold, then runs the layer guard. Under
/// the guard, group-l1 blocks kept by the mean rule are shrunk by
/// `min(a, mean)`, which stays positive for every kept block.
pub fn sparsity_step(
    weights: &BlockTensors,
    duals: &BlockTensors,
    layout: &BlockLayout,
    rho: f64,
    mu: f64,
    kind: PenaltyKind,
    guard: LayerGuardPolicy,
) -> Result<BlockTensors> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho must be > 0, got {rho}")));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::InvalidArgument(format!("mu must be >= 0, got {mu}")));
    }
    layout.check(weights, "weights")?;
    layout.check(duals, "duals")?;
    let threshold = kind.threshold(mu, rho);

    let mut out = BlockTensors::new();
    for lb in layout.layers() {
        let w = weights[&lb.layer].data();
        let g = duals[&lb.layer].data();
        let v: Vec<f32> = w
            .iter()
            .zip(g)
            .map(|(&w, &g)| (w as f64 + g as f64 / rho) as f32)
            .collect();
        let blocks: Vec<(BlockId, std::ops::Range<usize>)> = lb.iter().collect();
        let views: Vec<BlockView<'_>> = blocks
            .iter()
            .map(|(id, r)| BlockView::new(*id, &v[r.clone()]))
            .collect();

        let prox = |view: &BlockView<'_>| match kind {
            PenaltyKind::GroupL1 => prox_l1_block(view, threshold),
            PenaltyKind::GroupL0 => prox_l0_block(view, threshold),
        };
        let mut results: Vec<Vec<f32>> = views.par_iter().map(prox).collect();

        if let LayerGuardPolicy::MeanNorm { max_pruned_fraction } = guard {
            let zeroed = views
                .iter()
                .filter(|view| view.frobenius_norm <= threshold)
                .count();
            if zeroed as f64 > max_pruned_fraction * views.len() as f64 {
                let mean = views.iter().map(|v| v.frobenius_norm).sum::<f64>() / views.len() as f64;
                results = views
                    .iter()
                    .map(|view| {
                        if view.frobenius_norm > mean {
                            match kind {
                                PenaltyKind::GroupL1 => shrink(
                                    view.values,
                                    1.0 - threshold.min(mean) / view.frobenius_norm,
                                ),
                                PenaltyKind::GroupL0 => view.values.to_vec(),
                            }
                        } else {
                            vec![0.0; view.values.len()]
                        }
                    })
                    .collect();
            }
        }

        let mut f = Tensor::zeros(weights[&lb.layer].shape());
        for ((_, range), values) in blocks.iter().zip(results) {
            f.data_mut()[range.clone()].copy_from_slice(&values);
        }
        out.insert(lb.layer, f);
    }
    Ok(out)
}

/// A block is pruned iff its auxiliary block is exactly zero.
pub fn mask_from_aux(aux: &BlockTensors, layout: &BlockLayout) -> Result<Mask> {
    layout.check(aux, "auxiliary variable")?;
    let mut mask = Mask::new();
    for lb in layout.layers() {
        let data = aux[&lb.layer].data();
        for (id, range) in lb.iter() {
            if data[range].iter().all(|&x| x == 0.0) {
                mask.insert(id);
            }
        }
    }
    Ok(mask)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparsityStats {
    /// Pruned block count per included layer, in layer order.
    pub pruned_per_layer: Vec<usize>,
    /// Pruned weights over all weights of included layers, in percent.
    pub sparsity_pct: f64,
}

pub fn sparsity_stats(mask: &Mask, layout: &BlockLayout) -> SparsityStats {
    let mut pruned_weights = 0;
    let pruned_per_layer = layout
        .layers()
        .iter()
        .map(|lb| {
            let n = mask.in_layer(lb.layer).filter(|id| layout.contains(id)).count();
            pruned_weights += n * lb.block_len;
            n
        })
        .collect();
    let total = layout.weight_count();
    SparsityStats {
        pruned_per_layer,
        sparsity_pct: if total == 0 {
            0.0
        } else {
            100.0 * pruned_weights as f64 / total as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{LayerSpec, NetworkSpec, Shape};

    fn view(values: &[f32]) -> BlockView<'_> {
        BlockView::new(BlockId::new(0, 0, 0), values)
    }

    #[test]
    fn thresholds() {
        assert_eq!(PenaltyKind::GroupL1.threshold(2.0, 4.0), 0.5);
        assert_eq!(PenaltyKind::GroupL0.threshold(2.0, 1.0), 2.0);
    }

    #[test]
    fn penalty_values() {
        let a = [3.0f32];
        let b = [0.0f32, 4.0];
        let z = [0.0f32, 0.0];
        let blocks = [view(&a), view(&b)];
        assert_eq!(penalty_value(&blocks, PenaltyKind::GroupL1), 7.0);
        assert_eq!(penalty_value(&[view(&z), view(&b)], PenaltyKind::GroupL0), 1.0);
        assert_eq!(penalty_value(&[], PenaltyKind::GroupL1), 0.0);
        assert_eq!(penalty_value(&[], PenaltyKind::GroupL0), 0.0);
    }

    #[test]
    fn soft_threshold_cases() {
        let v = [3.0f32, 4.0];
        assert_eq!(prox_l1_block(&view(&v), 0.0), v.to_vec());
        assert_eq!(prox_l1_block(&view(&v), 5.0), vec![0.0, 0.0]);
        assert_eq!(prox_l1_block(&view(&v), 7.0), vec![0.0, 0.0]);
        let out = prox_l1_block(&view(&v), 1.0);
        assert_eq!(out, vec![2.4, 3.2]);
    }

    #[test]
    fn hard_threshold_cases() {
        let v = [3.0f32, 4.0];
        assert_eq!(prox_l0_block(&view(&v), 0.0), v.to_vec());
        assert_eq!(prox_l0_block(&view(&v), 5.0), vec![0.0, 0.0]);
        assert_eq!(prox_l0_block(&view(&v), 4.9), v.to_vec());
    }

    fn one_layer(norms: &[f32]) -> (BlockLayout, BlockTensors, BlockTensors) {
        // fully-connected 1 -> n: block j is the single weight of output j.
        let spec =
            NetworkSpec::new(Shape::new(1, 1, 1), vec![LayerSpec::fc(1, norms.len())]).unwrap();
        let layout = BlockLayout::new(&spec, None).unwrap();
        let mut w = layout.zeros(&spec);
        w.get_mut(&0).unwrap().data_mut().copy_from_slice(norms);
        let g = layout.zeros(&spec);
        (layout, w, g)
    }

    #[test]
    fn zero_mu_is_identity() {
        let (layout, w, g) = one_layer(&[1.0, 0.0, -2.0, 0.5]);
        for kind in [PenaltyKind::GroupL1, PenaltyKind::GroupL0] {
            let f = sparsity_step(&w, &g, &layout, 1.0, 0.0, kind, LayerGuardPolicy::default())
                .unwrap();
            assert_eq!(f, w);
        }
    }

    #[test]
    fn guard_falls_back_to_mean() {
        let (layout, w, g) = one_layer(&[1.0, 2.0, 3.0, 4.0]);
        // b = sqrt(2 * 4.5) = 3 prunes norms 1, 2, 3 (75%).
        let nominal =
            sparsity_step(&w, &g, &layout, 1.0, 4.5, PenaltyKind::GroupL0, LayerGuardPolicy::Disabled)
                .unwrap();
        assert_eq!(mask_from_aux(&nominal, &layout).unwrap().len(), 3);
        let guarded =
            sparsity_step(&w, &g, &layout, 1.0, 4.5, PenaltyKind::GroupL0, LayerGuardPolicy::default())
                .unwrap();
        assert_eq!(guarded[&0].data(), &[0.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn guard_does_not_fire_at_exactly_half() {
        let (layout, w, g) = one_layer(&[1.0, 2.0, 3.0, 4.0]);
        // a = 2 zeroes norms 1 and 2: 50%, not more.
        let f = sparsity_step(&w, &g, &layout, 1.0, 2.0, PenaltyKind::GroupL1, LayerGuardPolicy::default())
            .unwrap();
        assert_eq!(f[&0].data(), &[0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn guarded_l1_keeps_positive_scale() {
        let (layout, w, g) = one_layer(&[1.0, 2.0, 3.0, 4.0]);
        // a = 3.5 > mean 2.5: kept blocks are shrunk by the mean instead.
        let f = sparsity_step(&w, &g, &layout, 1.0, 3.5, PenaltyKind::GroupL1, LayerGuardPolicy::default())
            .unwrap();
        assert_eq!(f[&0].data(), &[0.0, 0.0, 0.5, 1.5]);
    }

    #[test]
    fn dual_shifts_the_prox_input() {
        let (layout, w, mut g) = one_layer(&[1.0, 1.0]);
        g.get_mut(&0).unwrap().data_mut().copy_from_slice(&[2.0, -2.0]);
        // V = W + G/2 = [2, 0]
        let f = sparsity_step(&w, &g, &layout, 2.0, 0.0, PenaltyKind::GroupL0, LayerGuardPolicy::Disabled)
            .unwrap();
        assert_eq!(f[&0].data(), &[2.0, 0.0]);
    }

    #[test]
    fn rejects_bad_rho() {
        let (layout, w, g) = one_layer(&[1.0]);
        assert!(sparsity_step(&w, &g, &layout, 0.0, 1.0, PenaltyKind::GroupL1, LayerGuardPolicy::Disabled).is_err());
    }

    #[test]
    fn stats() {
        let spec = NetworkSpec::new(
            Shape::new(1, 1, 1),
            vec![LayerSpec::fc(1, 4), LayerSpec::fc(4, 1)],
        )
        .unwrap();
        let layout = BlockLayout::new(&spec, None).unwrap();
        let none = sparsity_stats(&Mask::new(), &layout);
        assert_eq!(none.pruned_per_layer, vec![0, 0]);
        assert_eq!(none.sparsity_pct, 0.0);

        let all: Mask = layout.blocks().collect();
        assert_eq!(sparsity_stats(&all, &layout).sparsity_pct, 100.0);

        // Equal-size layers (4 weights each), first fully pruned.
        let first: Mask = (0..4).map(|j| BlockId::new(0, 0, j)).collect();
        let s = sparsity_stats(&first, &layout);
        assert_eq!(s.pruned_per_layer, vec![4, 0]);
        assert_eq!(s.sparsity_pct, 50.0);
    }

    #[test]
    fn mask_from_aux_uses_exact_zero() {
        let (layout, mut w, _) = one_layer(&[0.0, 1e-30, 0.0]);
        let mask = mask_from_aux(&w, &layout).unwrap();
        assert_eq!(mask.iter().map(|b| b.output_map).collect::<Vec<_>>(), vec![0, 2]);
        w.get_mut(&0).unwrap().data_mut().fill(1.0);
        assert!(mask_from_aux(&w, &layout).unwrap().is_empty());
    }
}

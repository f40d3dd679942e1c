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

//! Finite-difference gradient checking and random small networks.
#![allow(dead_code)]

use admm_prune::{LayerSpec, Network, NetworkSpec, Padding, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f32 = 1e-3;

#[derive(Debug, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU or max-pool kink.
    pub skipped: usize,
    pub worst: String,
}

/// `|a - n| / max(|a|, |n|, 1e-3)`
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares every weight and bias gradient against a central difference of
/// the loss.
pub fn grad_check(net: &Network, batch: &Tensor, labels: &[usize]) -> GradCheck {
    let (_, grads) = net.loss_and_grad(batch, labels).unwrap();
    let pattern = net.activation_pattern(batch).unwrap();
    let mut report = GradCheck::default();
    let layers: Vec<usize> = net.spec().parameterized_layers().collect();
    for l in layers {
        for role in ["weight", "bias"] {
            let len = {
                let p = net.layer_params(l).unwrap();
                if role == "weight" { p.weight.len() } else { p.bias.len() }
            };
            for k in 0..len {
                let probe = |delta: f32| {
                    let mut n = net.clone();
                    let p = n.layer_params_mut(l).unwrap();
                    let t = if role == "weight" { &mut p.weight } else { &mut p.bias };
                    let w = t.data()[k];
                    t.data_mut()[k] = w + delta;
                    let actual = t.data()[k];
                    (n, actual)
                };
                let (plus, wp) = probe(FD_STEP);
                let (minus, wm) = probe(-FD_STEP);
                if plus.activation_pattern(batch).unwrap() != pattern
                    || minus.activation_pattern(batch).unwrap() != pattern
                {
                    report.skipped += 1;
                    continue;
                }
                let lp = plus.loss(batch, labels).unwrap();
                let lm = minus.loss(batch, labels).unwrap();
                let numeric = (lp - lm) / (wp as f64 - wm as f64);
                let g = grads.layer(l).unwrap();
                let analytic = if role == "weight" { g.weight.data()[k] } else { g.bias.data()[k] } as f64;
                let e = rel_error(analytic, numeric);
                report.checked += 1;
                if e > report.max_rel_error {
                    report.max_rel_error = e;
                    report.worst = format!("layer {l} {role}[{k}]: analytic {analytic:e}, numeric {numeric:e}");
                }
            }
        }
    }
    report
}

/// A small random network exercising conv (both paddings, strides 1 and
/// 2), ReLU, max-pool and fully-connected layers, with a random batch.
pub fn random_case(seed: u64) -> (Network, Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Shape::new(rng.random_range(1..=2), rng.random_range(5..=7), rng.random_range(5..=7));
    let mut layers = Vec::new();
    let mut shape = input;
    let convs = rng.random_range(1..=2);
    for c in 0..convs {
        let k = rng.random_range(1..=3);
        let conv = LayerSpec::Conv2d {
            kernel_h: k,
            kernel_w: rng.random_range(1..=3),
            in_maps: shape.maps,
            out_maps: rng.random_range(1..=3),
            stride: if c == 0 { rng.random_range(1..=2) } else { 1 },
            padding: if shape.height >= 3 && shape.width >= 3 && rng.random_bool(0.5) {
                Padding::Valid
            } else {
                Padding::Same
            },
        };
        shape = conv.output_shape(layers.len(), shape).unwrap();
        layers.push(conv);
        if rng.random_bool(0.7) {
            layers.push(LayerSpec::Relu);
        }
        if shape.height >= 2 && shape.width >= 2 && rng.random_bool(0.6) {
            let pool = LayerSpec::max_pool(2);
            shape = pool.output_shape(layers.len(), shape).unwrap();
            layers.push(pool);
        }
    }
    let classes = rng.random_range(2..=4);
    if rng.random_bool(0.5) {
        let hidden = rng.random_range(2..=5);
        layers.push(LayerSpec::fc(shape.len(), hidden));
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::fc(hidden, classes));
    } else {
        layers.push(LayerSpec::fc(shape.len(), classes));
    }
    layers.push(LayerSpec::SoftmaxXentHead);
    let spec = NetworkSpec::new(input, layers).unwrap();

    let mut net = Network::he_uniform(spec, seed);
    for l in net.spec().parameterized_layers().collect::<Vec<_>>() {
        for b in net.layer_params_mut(l).unwrap().bias.data_mut() {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    let count = rng.random_range(2..=4);
    let data = (0..count * input.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = Tensor::from_vec(&[count, input.maps, input.height, input.width], data).unwrap();
    let labels = (0..count).map(|_| rng.random_range(0..classes)).collect();
    (net, batch, labels)
}

/// Layer kinds present in a spec, as names.
pub fn kinds(spec: &NetworkSpec) -> Vec<&'static str> {
    spec.layers().iter().map(LayerSpec::kind_name).collect()
}

/// Full-batch ADMM fixture: 1x1 conv 2->2 on 2x2x2 inputs, then a dense
/// layer 8->2. Twenty weights, eight samples.
pub fn admm_fixture() -> (Network, admm_prune::data::Dataset) {
    use admm_prune::data::{Dataset, Split};
    let spec = NetworkSpec::new(
        Shape::new(2, 2, 2),
        vec![
            LayerSpec::Conv2d {
                kernel_h: 1,
                kernel_w: 1,
                in_maps: 2,
                out_maps: 2,
                stride: 1,
                padding: Padding::Same,
            },
            LayerSpec::fc(8, 2),
            LayerSpec::SoftmaxXentHead,
        ],
    )
    .unwrap();
    let net = Network::he_uniform(spec, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
    let data = labels
        .iter()
        .flat_map(|&y| {
            let sign = if y == 0 { 1.0 } else { -1.0 };
            (0..8).map(|k| 0.5 + sign * (k as f32 / 20.0) + rng.random_range(-0.1..0.1)).collect::<Vec<_>>()
        })
        .collect();
    let images = Tensor::from_vec(&[8, 2, 2, 2], data).unwrap();
    (net, Dataset::new(images, labels, 2, Split::Train).unwrap())
}

/// A tiny trained network on 8x8 synthetic data with its splits.
pub fn small_trained() -> (Network, admm_prune::data::Dataset, admm_prune::data::Dataset) {
    use admm_prune::admm::{fine_tune, TrainSettings};
    let all = admm_prune::data::synth_generate(4, 240, 8, 8, 2, 0.3).unwrap();
    let (train, test) = all.split_at(200).unwrap();
    let spec = NetworkSpec::new(
        Shape::new(1, 8, 8),
        vec![
            LayerSpec::conv3x3(1, 4),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            LayerSpec::fc(64, 2),
            LayerSpec::SoftmaxXentHead,
        ],
    )
    .unwrap();
    let settings = TrainSettings { lr: 0.05, batch_size: 16, momentum: 0.0, seed: 1 };
    let mut cursor = 0;
    let net = fine_tune(Network::he_uniform(spec, 2), &Default::default(), &train, 4, &settings, &mut cursor).unwrap();
    (net, train, test)
}

/// [`admm_fixture`] after 500 full-batch SGD steps at learning rate 0.5.
pub fn admm_fixture_trained() -> (Network, admm_prune::data::Dataset) {
    let (mut net, data) = admm_fixture();
    for _ in 0..500 {
        let (_, g) = net.loss_and_grad(&data.images, &data.labels).unwrap();
        admm_prune::optim::sgd_prox_step(&mut net, &g, None, 0.0, 0.5).unwrap();
    }
    (net, data)
}

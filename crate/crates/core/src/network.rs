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

//! Sequential CNN: parameters, forward pass, softmax cross-entropy loss and
//! reverse-mode gradients.
//!
//! Parameters are stored as `f32`. Each batch evaluation converts them once
//! to `f64` and runs every activation, reduction and gradient accumulation
//! in `f64`. Samples are processed in fixed chunks of [`CHUNK`] whose
//! partial sums are combined in chunk order, so results do not depend on
//! the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::blocks::{layer_blocks, BlockLayout, BlockTensors, Mask};
use crate::error::{Error, Result};
use crate::layer::{ConvGeometry, LayerSpec, NetworkSpec, Shape};
use crate::tensor::Tensor;

const CHUNK: usize = 8;

/// Loss plus weight and bias gradient sums for one chunk of samples.
type ChunkGrads = (f64, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Weight and bias of one parameterized layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients aligned with [`Network::params`]: `None` for layers without
/// weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    layers: Vec<Option<Params>>,
}

impl Gradients {
    pub fn layers(&self) -> &[Option<Params>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> Option<&Params> {
        self.layers.get(l).and_then(Option::as_ref)
    }

    pub fn layer_mut(&mut self, l: usize) -> Option<&mut Params> {
        self.layers.get_mut(l).and_then(Option::as_mut)
    }

    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| Params {
                        weight: Tensor::zeros(p.weight.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    })
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|p| p.weight.is_finite() && p.bias.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .map(|p| p.weight.norm_sq() + p.bias.norm_sq())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Option<Params>>,
    frozen: Mask,
}

impl Network {
    pub fn zeros(spec: NetworkSpec) -> Self {
        let params = spec
            .layers()
            .iter()
            .map(|layer| {
                layer.weight_shape().map(|shape| Params {
                    bias: Tensor::zeros(&[shape[0]]),
                    weight: Tensor::zeros(&shape),
                })
            })
            .collect();
        Network {
            spec,
            params,
            frozen: Mask::new(),
        }
    }

    /// Fan-in scaled uniform initialization, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// with zero biases.
    pub fn he_uniform(spec: NetworkSpec, seed: u64) -> Self {
        let mut net = Network::zeros(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in net.params.iter_mut().flatten() {
            let fan_in: usize = p.weight.shape()[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt() as f32;
            for w in p.weight.data_mut() {
                *w = rng.random_range(-limit..limit);
            }
        }
        net
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<Option<Params>>) -> Result<Self> {
        if params.len() != spec.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameter slots for {} layers",
                params.len(),
                spec.len()
            )));
        }
        for (l, (layer, p)) in spec.layers().iter().zip(&params).enumerate() {
            match (layer.weight_shape(), p) {
                (None, None) => {}
                (Some(shape), Some(p)) => {
                    if p.weight.shape() != shape.as_slice() || p.bias.shape() != [shape[0]] {
                        return Err(Error::Shape {
                            layer: l,
                            detail: format!(
                                "parameters {:?}/{:?} do not match expected {:?}/[{}]",
                                p.weight.shape(),
                                p.bias.shape(),
                                shape,
                                shape[0]
                            ),
                        });
                    }
                    if !p.weight.is_finite() || !p.bias.is_finite() {
                        return Err(Error::NonFinite(format!("parameters of layer {l}")));
                    }
                }
                (Some(_), None) => {
                    return Err(Error::Shape {
                        layer: l,
                        detail: "missing parameters".into(),
                    })
                }
                (None, Some(_)) => {
                    return Err(Error::Shape {
                        layer: l,
                        detail: format!("{} takes no parameters", layer.kind_name()),
                    })
                }
            }
        }
        Ok(Network {
            spec,
            params,
            frozen: Mask::new(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Option<Params>] {
        &self.params
    }

    pub fn layer_params(&self, l: usize) -> Option<&Params> {
        self.params.get(l).and_then(Option::as_ref)
    }

    pub fn layer_params_mut(&mut self, l: usize) -> Option<&mut Params> {
        self.params.get_mut(l).and_then(Option::as_mut)
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Blocks currently frozen at zero.
    pub fn frozen(&self) -> &Mask {
        &self.frozen
    }

    /// Zeroes every block in `mask` and freezes it: later gradients for
    /// those blocks are reported as zero and updates skip them.
    pub fn apply_mask(&mut self, mask: &Mask) -> Result<()> {
        mask.validate(&self.spec)?;
        for id in mask.iter() {
            let lb = layer_blocks(&self.spec, id.layer).expect("validated");
            let range = lb.range(id.input_map, id.output_map);
            let p = self.params[id.layer].as_mut().expect("validated");
            p.weight.data_mut()[range].fill(0.0);
            self.frozen.insert(*id);
        }
        Ok(())
    }

    /// Releases all frozen blocks; their weights stay where they are.
    pub fn unfreeze(&mut self) {
        self.frozen = Mask::new();
    }

    /// Copies of the weights of the layers in `layout`.
    pub fn weight_blocks(&self, layout: &BlockLayout) -> BlockTensors {
        layout
            .layers()
            .iter()
            .map(|lb| {
                let w = &self.layer_params(lb.layer).expect("layout layer").weight;
                (lb.layer, w.clone())
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .flatten()
            .all(|p| p.weight.is_finite() && p.bias.is_finite())
    }

    /// Pre-softmax logits, shape `[batch, classes]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let count = self.check_batch(batch)?;
        let engine = Engine::new(self);
        let classes = self.spec.classes();
        let logits: Vec<Vec<f64>> = (0..count)
            .into_par_iter()
            .map(|s| engine.forward(batch.outer(s)).logits().to_vec())
            .collect();
        let data = logits.into_iter().flatten().map(|v| v as f32).collect();
        Tensor::from_vec(&[count, classes], data)
    }

    /// Mean softmax cross-entropy of the batch.
    pub fn loss(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let count = self.check_batch(batch)?;
        self.check_labels(count, labels)?;
        let engine = Engine::new(self);
        let partial: Vec<f64> = (0..count)
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&s| softmax_xent(engine.forward(batch.outer(s)).logits(), labels[s]).0)
                    .sum()
            })
            .collect();
        Ok(partial.into_iter().sum::<f64>() / count as f64)
    }

    /// Mean softmax cross-entropy and its gradient with respect to every
    /// parameter. Frozen blocks get exactly zero gradient.
    pub fn loss_and_grad(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Gradients)> {
        let count = self.check_batch(batch)?;
        self.check_labels(count, labels)?;
        let engine = Engine::new(self);
        let indices: Vec<usize> = (0..count).collect();
        let partial: Vec<ChunkGrads> = indices
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = engine.grad_buffers();
                let mut loss = 0.0;
                for &s in chunk {
                    let trace = engine.forward(batch.outer(s));
                    let (l, dlogits) = softmax_xent(trace.logits(), labels[s]);
                    loss += l;
                    engine.backward(&trace, dlogits, &mut acc);
                }
                (loss, acc.0, acc.1)
            })
            .collect();

        let mut total = 0.0;
        let mut acc = engine.grad_buffers();
        for (loss, gw, gb) in partial {
            total += loss;
            for (dst, src) in acc.0.iter_mut().zip(&gw) {
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
            for (dst, src) in acc.1.iter_mut().zip(&gb) {
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        let scale = 1.0 / count as f64;
        let mut grads = Gradients::zeros_like(self);
        for (l, slot) in grads.layers.iter_mut().enumerate() {
            if let Some(p) = slot {
                p.weight
                    .data_mut()
                    .iter_mut()
                    .zip(&acc.0[l])
                    .for_each(|(g, &a)| *g = (a * scale) as f32);
                p.bias
                    .data_mut()
                    .iter_mut()
                    .zip(&acc.1[l])
                    .for_each(|(g, &a)| *g = (a * scale) as f32);
            }
        }
        for id in self.frozen.iter() {
            let lb = layer_blocks(&self.spec, id.layer).expect("validated mask");
            let range = lb.range(id.input_map, id.output_map);
            grads.layers[id.layer].as_mut().expect("validated mask").weight.data_mut()[range]
                .fill(0.0);
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok((loss, grads))
    }

    /// Predicted class per sample (first maximum on ties).
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        let classes = self.spec.classes();
        Ok(logits
            .data()
            .chunks(classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |best, (k, &v)| {
                        if v > best.1 {
                            (k, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }

    /// Top-1 accuracy in percent.
    pub fn accuracy(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let count = self.check_batch(batch)?;
        self.check_labels(count, labels)?;
        let hits = self
            .predict(batch)?
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        Ok(100.0 * hits as f64 / count as f64)
    }

    /// Piecewise-linear region of the batch: one entry per ReLU unit (1 when
    /// active) and per max-pool output (index of the selected input).
    /// Two parameter settings with equal patterns lie in the same smooth
    /// piece of the loss.
    pub fn activation_pattern(&self, batch: &Tensor) -> Result<Vec<u32>> {
        let count = self.check_batch(batch)?;
        let engine = Engine::new(self);
        let mut out = Vec::new();
        for s in 0..count {
            let trace = engine.forward(batch.outer(s));
            for (l, layer) in self.spec.layers().iter().enumerate() {
                match layer {
                    LayerSpec::Relu => out.extend(trace.acts[l + 1].iter().map(|&v| (v > 0.0) as u32)),
                    LayerSpec::MaxPool { .. } => out.extend(&trace.argmax[l]),
                    _ => {}
                }
            }
        }
        Ok(out)
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let input = self.spec.input();
        let expected = [input.maps, input.height, input.width];
        let shape = batch.shape();
        if shape.len() != 4 || shape[1..] != expected {
            return Err(Error::Shape {
                layer: 0,
                detail: format!(
                    "batch shape {shape:?} does not match network input [batch, {}, {}, {}]",
                    input.maps, input.height, input.width
                ),
            });
        }
        if shape[0] == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        Ok(shape[0])
    }

    fn check_labels(&self, count: usize, labels: &[usize]) -> Result<()> {
        if labels.len() != count {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {count} samples",
                labels.len()
            )));
        }
        let classes = self.spec.classes();
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(())
    }
}

/// Applies `mask` to `net`, returning the masked network.
pub fn apply_mask(mut net: Network, mask: &Mask) -> Result<Network> {
    net.apply_mask(mask)?;
    Ok(net)
}

/// Loss and gradient of the logits for one sample: `(lse - z_y, p - e_y)`.
fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Softmax probabilities of one logits row.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct Trace {
    /// `acts[l]` is the input of layer `l`; the last entry holds the logits.
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
}

impl Trace {
    fn logits(&self) -> &[f64] {
        self.acts.last().expect("non-empty network")
    }
}

type GradBuffers = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// `f64` snapshot of a network for one batch evaluation.
struct Engine<'a> {
    spec: &'a NetworkSpec,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    /// Per layer, per block in storage order: true when the block is frozen.
    frozen: Vec<Vec<bool>>,
    first_param: usize,
}

impl<'a> Engine<'a> {
    fn new(net: &'a Network) -> Self {
        let spec = &net.spec;
        let mut frozen: Vec<Vec<bool>> = spec
            .layers()
            .iter()
            .map(|l| match l.block_dims() {
                Some((m, n, _)) => vec![false; m * n],
                None => Vec::new(),
            })
            .collect();
        for id in net.frozen.iter() {
            let m = frozen_dims(spec, id.layer);
            frozen[id.layer][id.output_map * m + id.input_map] = true;
        }
        let widen = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        Engine {
            spec,
            weights: net
                .params
                .iter()
                .map(|p| p.as_ref().map(|p| widen(&p.weight)).unwrap_or_default())
                .collect(),
            biases: net
                .params
                .iter()
                .map(|p| p.as_ref().map(|p| widen(&p.bias)).unwrap_or_default())
                .collect(),
            frozen,
            first_param: spec.parameterized_layers().next().unwrap_or(usize::MAX),
        }
    }

    fn grad_buffers(&self) -> GradBuffers {
        (
            self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        )
    }

    fn forward(&self, sample: &[f32]) -> Trace {
        let layers = self.spec.layers();
        let mut acts = Vec::with_capacity(layers.len() + 1);
        let mut argmax = vec![Vec::new(); layers.len()];
        acts.push(sample.iter().map(|&v| v as f64).collect::<Vec<_>>());
        for (l, layer) in layers.iter().enumerate() {
            let input = &acts[l];
            let in_shape = self.spec.shape_before(l);
            let out = match *layer {
                LayerSpec::Conv2d {
                    kernel_h,
                    kernel_w,
                    out_maps,
                    stride,
                    padding,
                    ..
                } => {
                    let geom = ConvGeometry::new(in_shape, kernel_h, kernel_w, stride, padding)
                        .expect("validated spec");
                    conv_forward(
                        input,
                        in_shape,
                        &self.weights[l],
                        &self.biases[l],
                        &self.frozen[l],
                        out_maps,
                        (kernel_h, kernel_w, stride),
                        geom,
                    )
                }
                LayerSpec::FullyConnected { inputs, outputs } => {
                    let w = &self.weights[l];
                    (0..outputs)
                        .map(|j| {
                            if self.frozen[l][j] {
                                return self.biases[l][j];
                            }
                            let row = &w[j * inputs..(j + 1) * inputs];
                            self.biases[l][j]
                                + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                        })
                        .collect()
                }
                LayerSpec::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::MaxPool { size, stride } => {
                    let out_shape = self.spec.shape_before(l + 1);
                    let (out, idx) = pool_forward(input, in_shape, out_shape, size, stride);
                    argmax[l] = idx;
                    out
                }
                LayerSpec::SoftmaxXentHead => input.clone(),
            };
            acts.push(out);
        }
        Trace { acts, argmax }
    }

    fn backward(&self, trace: &Trace, dlogits: Vec<f64>, acc: &mut GradBuffers) {
        let layers = self.spec.layers();
        let mut delta = dlogits;
        for l in (0..layers.len()).rev() {
            let input = &trace.acts[l];
            let in_shape = self.spec.shape_before(l);
            let need_input_grad = l > self.first_param;
            match layers[l] {
                LayerSpec::Conv2d {
                    kernel_h,
                    kernel_w,
                    out_maps,
                    stride,
                    padding,
                    ..
                } => {
                    let geom = ConvGeometry::new(in_shape, kernel_h, kernel_w, stride, padding)
                        .expect("validated spec");
                    delta = conv_backward(
                        input,
                        in_shape,
                        &self.weights[l],
                        &self.frozen[l],
                        out_maps,
                        (kernel_h, kernel_w, stride),
                        geom,
                        &delta,
                        (&mut acc.0[l], &mut acc.1[l]),
                        need_input_grad,
                    );
                }
                LayerSpec::FullyConnected { inputs, outputs } => {
                    let w = &self.weights[l];
                    let mut dx = vec![0.0; if need_input_grad { inputs } else { 0 }];
                    for j in 0..outputs {
                        let d = delta[j];
                        acc.1[l][j] += d;
                        if self.frozen[l][j] {
                            continue;
                        }
                        let gw = &mut acc.0[l][j * inputs..(j + 1) * inputs];
                        gw.iter_mut().zip(input).for_each(|(g, &x)| *g += d * x);
                        if need_input_grad {
                            let row = &w[j * inputs..(j + 1) * inputs];
                            dx.iter_mut().zip(row).for_each(|(g, &wv)| *g += d * wv);
                        }
                    }
                    delta = dx;
                }
                LayerSpec::Relu => {
                    let out = &trace.acts[l + 1];
                    delta
                        .iter_mut()
                        .zip(out)
                        .for_each(|(d, &y)| if y <= 0.0 { *d = 0.0 });
                }
                LayerSpec::MaxPool { .. } => {
                    let mut dx = vec![0.0; input.len()];
                    for (&src, &d) in trace.argmax[l].iter().zip(&delta) {
                        dx[src as usize] += d;
                    }
                    delta = dx;
                }
                LayerSpec::SoftmaxXentHead => {}
            }
            if l <= self.first_param {
                break;
            }
        }
    }
}

fn frozen_dims(spec: &NetworkSpec, layer: usize) -> usize {
    spec.layers()[layer].block_dims().map(|(m, _, _)| m).unwrap_or(1)
}

/// Output positions `o` whose input coordinate `o * stride + k - pad` lies
/// in `0..in_len`.
fn valid_outputs(out_len: usize, in_len: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if in_len + pad <= k {
        return (0, 0);
    }
    let hi = ((in_len - 1 + pad - k) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    in_shape: Shape,
    weights: &[f64],
    bias: &[f64],
    frozen: &[bool],
    out_maps: usize,
    (kh, kw, stride): (usize, usize, usize),
    geom: ConvGeometry,
) -> Vec<f64> {
    let m = in_shape.maps;
    let (h, w) = (in_shape.height, in_shape.width);
    let plane_out = geom.out_h * geom.out_w;
    let mut out = vec![0.0; out_maps * plane_out];
    for j in 0..out_maps {
        let out_j = &mut out[j * plane_out..(j + 1) * plane_out];
        out_j.fill(bias[j]);
        for i in 0..m {
            if frozen[j * m + i] {
                continue;
            }
            let kernel = &weights[(j * m + i) * kh * kw..(j * m + i + 1) * kh * kw];
            let in_i = &input[i * h * w..(i + 1) * h * w];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_outputs(geom.out_h, h, ky, geom.pad_top, stride);
                for kx in 0..kw {
                    let wv = kernel[ky * kw + kx];
                    let (ox_lo, ox_hi) = valid_outputs(geom.out_w, w, kx, geom.pad_left, stride);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - geom.pad_top;
                        let row_in = &in_i[iy * w..(iy + 1) * w];
                        let row_out = &mut out_j[oy * geom.out_w..(oy + 1) * geom.out_w];
                        for ox in ox_lo..ox_hi {
                            row_out[ox] += wv * row_in[ox * stride + kx - geom.pad_left];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    in_shape: Shape,
    weights: &[f64],
    frozen: &[bool],
    out_maps: usize,
    (kh, kw, stride): (usize, usize, usize),
    geom: ConvGeometry,
    delta: &[f64],
    (gw, gb): (&mut [f64], &mut [f64]),
    need_input_grad: bool,
) -> Vec<f64> {
    let m = in_shape.maps;
    let (h, w) = (in_shape.height, in_shape.width);
    let plane_out = geom.out_h * geom.out_w;
    let mut dx = vec![0.0; if need_input_grad { input.len() } else { 0 }];
    for j in 0..out_maps {
        let d_j = &delta[j * plane_out..(j + 1) * plane_out];
        gb[j] += d_j.iter().sum::<f64>();
        for i in 0..m {
            if frozen[j * m + i] {
                continue;
            }
            let base = (j * m + i) * kh * kw;
            let in_i = &input[i * h * w..(i + 1) * h * w];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_outputs(geom.out_h, h, ky, geom.pad_top, stride);
                for kx in 0..kw {
                    let (ox_lo, ox_hi) = valid_outputs(geom.out_w, w, kx, geom.pad_left, stride);
                    let wv = weights[base + ky * kw + kx];
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - geom.pad_top;
                        let row_d = &d_j[oy * geom.out_w..(oy + 1) * geom.out_w];
                        let row_in = &in_i[iy * w..(iy + 1) * w];
                        for ox in ox_lo..ox_hi {
                            acc += row_d[ox] * row_in[ox * stride + kx - geom.pad_left];
                        }
                        if need_input_grad {
                            let row_dx = &mut dx[i * h * w + iy * w..i * h * w + (iy + 1) * w];
                            for ox in ox_lo..ox_hi {
                                row_dx[ox * stride + kx - geom.pad_left] += wv * row_d[ox];
                            }
                        }
                    }
                    gw[base + ky * kw + kx] += acc;
                }
            }
        }
    }
    dx
}

fn pool_forward(
    input: &[f64],
    in_shape: Shape,
    out_shape: Shape,
    size: usize,
    stride: usize,
) -> (Vec<f64>, Vec<u32>) {
    let mut out = Vec::with_capacity(out_shape.len());
    let mut idx = Vec::with_capacity(out_shape.len());
    for c in 0..in_shape.maps {
        let base = c * in_shape.plane();
        for oy in 0..out_shape.height {
            for ox in 0..out_shape.width {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0;
                for dy in 0..size {
                    for dx in 0..size {
                        let at = base + (oy * stride + dy) * in_shape.width + ox * stride + dx;
                        if input[at] > best {
                            best = input[at];
                            best_at = at;
                        }
                    }
                }
                out.push(best);
                idx.push(best_at as u32);
            }
        }
    }
    (out, idx)
}

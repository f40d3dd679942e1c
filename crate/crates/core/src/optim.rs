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

//! Proximal SGD on `L(W) + (rho/2) * sum ||W_b - U_b||^2`.

use crate::blocks::{layer_blocks, BlockTensors};
use crate::error::{Error, Result};
use crate::network::{Gradients, Network};

/// One SGD step with a proximal pull toward `targets`:
///
/// `w <- w - lr * (dL/dw + rho * (w - u))`
///
/// Layers absent from `targets` and all biases take a plain SGD step.
/// Frozen blocks are left untouched.
pub fn sgd_prox_step(
    net: &mut Network,
    grads: &Gradients,
    targets: Option<&BlockTensors>,
    rho: f64,
    lr: f64,
) -> Result<()> {
    check_step(net, grads, targets, rho, lr)?;
    update(net, grads, targets, rho, lr, |_, _, d| d);
    Ok(())
}

fn check_step(
    net: &Network,
    grads: &Gradients,
    targets: Option<&BlockTensors>,
    rho: f64,
    lr: f64,
) -> Result<()> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho must be >= 0, got {rho}")));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("lr must be > 0, got {lr}")));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    for (l, (p, g)) in net.params().iter().zip(grads.layers()).enumerate() {
        match (p, g) {
            (Some(p), Some(g))
                if p.weight.shape() == g.weight.shape() && p.bias.shape() == g.bias.shape() => {}
            (None, None) => {}
            _ => {
                return Err(Error::Shape {
                    layer: l,
                    detail: "gradient does not match parameters".into(),
                })
            }
        }
    }
    if let Some(targets) = targets {
        for (&l, u) in targets {
            match net.layer_params(l) {
                Some(p) if p.weight.shape() == u.shape() => {}
                _ => {
                    return Err(Error::Shape {
                        layer: l,
                        detail: format!("proximal target shape {:?} does not match weights", u.shape()),
                    })
                }
            }
            if !u.is_finite() {
                return Err(Error::NonFinite(format!("proximal target of layer {l}")));
            }
        }
    }
    Ok(())
}

/// Shared update loop. `direction(layer, flat_index, d)` maps the raw
/// descent direction `d` (gradient plus proximal term) to the applied one.
fn update(
    net: &mut Network,
    grads: &Gradients,
    targets: Option<&BlockTensors>,
    rho: f64,
    lr: f64,
    mut direction: impl FnMut(usize, usize, f64) -> f64,
) {
    let frozen = net.frozen().clone();
    let spec = net.spec().clone();
    for l in spec.parameterized_layers() {
        let g = grads.layer(l).expect("checked");
        let target = targets.and_then(|t| t.get(&l));
        let mut skip = vec![false; g.weight.len()];
        if let Some(lb) = layer_blocks(&spec, l) {
            for id in frozen.in_layer(l) {
                skip[lb.range(id.input_map, id.output_map)].fill(true);
            }
        }
        let p = net.layer_params_mut(l).expect("parameterized");
        let bias_offset = p.weight.len();
        for (k, w) in p.weight.data_mut().iter_mut().enumerate() {
            if skip[k] {
                continue;
            }
            let wf = *w as f64;
            let mut d = g.weight.data()[k] as f64;
            if let Some(u) = target {
                d += rho * (wf - u.data()[k] as f64);
            }
            *w = (wf - lr * direction(l, k, d)) as f32;
        }
        for (k, b) in p.bias.data_mut().iter_mut().enumerate() {
            let d = g.bias.data()[k] as f64;
            *b = (*b as f64 - lr * direction(l, bias_offset + k, d)) as f32;
        }
    }
}

/// SGD with optional heavy-ball momentum (`v <- momentum * v + d`,
/// `w <- w - lr * v`). Zero momentum is exactly [`sgd_prox_step`].
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn step(
        &mut self,
        net: &mut Network,
        grads: &Gradients,
        targets: Option<&BlockTensors>,
        rho: f64,
    ) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_prox_step(net, grads, targets, rho, self.lr);
        }
        check_step(net, grads, targets, rho, self.lr)?;
        if self.velocity.is_empty() {
            self.velocity = net
                .params()
                .iter()
                .map(|p| {
                    p.as_ref()
                        .map(|p| vec![0.0; p.weight.len() + p.bias.len()])
                        .unwrap_or_default()
                })
                .collect();
        }
        let momentum = self.momentum;
        let velocity = &mut self.velocity;
        update(net, grads, targets, rho, self.lr, |l, k, d| {
            let v = &mut velocity[l][k];
            *v = momentum * *v + d;
            *v
        });
        Ok(())
    }
}

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

//! Multiply-accumulate accounting for dense and block-sparse inference.

use crate::blocks::{layer_blocks, Mask};
use crate::error::Result;
use crate::layer::{NetworkSpec, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MacCounts {
    pub dense: u64,
    pub sparse: u64,
}

impl MacCounts {
    /// `dense / sparse`; 1 when nothing is pruned.
    pub fn speedup(&self) -> f64 {
        if self.sparse == 0 {
            return f64::INFINITY;
        }
        self.dense as f64 / self.sparse as f64
    }
}

/// MACs of every parameterized layer at `input`, with and without the
/// blocks in `mask`. A conv block costs `out_h * out_w * kh * kw`; a
/// fully-connected block costs its input size.
pub fn mac_counts(spec: &NetworkSpec, input: Shape, mask: &Mask) -> Result<MacCounts> {
    let spec = if input == spec.input() {
        spec.clone()
    } else {
        spec.with_input(input)?
    };
    mask.validate(&spec)?;
    let mut counts = MacCounts { dense: 0, sparse: 0 };
    for l in spec.parameterized_layers() {
        let lb = layer_blocks(&spec, l).expect("parameterized");
        let positions = spec.shape_before(l + 1).plane() as u64;
        let per_block = positions * lb.block_len as u64;
        let pruned = mask.in_layer(l).count() as u64;
        counts.dense += per_block * lb.count() as u64;
        counts.sparse += per_block * (lb.count() as u64 - pruned);
    }
    Ok(counts)
}

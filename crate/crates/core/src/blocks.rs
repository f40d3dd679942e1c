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

//! Sparsity blocks: one convolution filter `(layer, input map, output map)`,
//! or the incoming weight vector of one fully-connected output unit.
//!
//! Both kinds occupy a contiguous slice of the layer's weight tensor:
//! conv weights are `[n, m, kh, kw]` so block `(i, j)` starts at
//! `(j * m + i) * kh * kw`, and fully-connected weights are `[n, inputs]`
//! so block `(0, j)` is row `j`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::layer::NetworkSpec;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId {
    pub layer: usize,
    pub input_map: usize,
    pub output_map: usize,
}

impl BlockId {
    pub fn new(layer: usize, input_map: usize, output_map: usize) -> Self {
        BlockId {
            layer,
            input_map,
            output_map,
        }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.layer, self.input_map, self.output_map)
    }
}

/// Per-layer tensors shaped like the weights of included layers, keyed by
/// layer index. Used for the auxiliary variable, the duals and proximal
/// targets.
pub type BlockTensors = BTreeMap<usize, Tensor>;

/// Block geometry of one parameterized layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerBlocks {
    pub layer: usize,
    pub input_maps: usize,
    pub output_maps: usize,
    pub block_len: usize,
}

impl LayerBlocks {
    pub fn count(&self) -> usize {
        self.input_maps * self.output_maps
    }

    pub fn weight_count(&self) -> usize {
        self.count() * self.block_len
    }

    /// Position of block `(i, j)` inside the layer's flattened weights.
    pub fn range(&self, input_map: usize, output_map: usize) -> Range<usize> {
        let start = (output_map * self.input_maps + input_map) * self.block_len;
        start..start + self.block_len
    }

    /// Blocks in storage order, paired with their ranges.
    pub fn iter(&self) -> impl Iterator<Item = (BlockId, Range<usize>)> + '_ {
        (0..self.output_maps).flat_map(move |j| {
            (0..self.input_maps)
                .map(move |i| (BlockId::new(self.layer, i, j), self.range(i, j)))
        })
    }

    fn contains(&self, id: &BlockId) -> bool {
        id.layer == self.layer && id.input_map < self.input_maps && id.output_map < self.output_maps
    }
}

pub(crate) fn layer_blocks(spec: &NetworkSpec, layer: usize) -> Option<LayerBlocks> {
    let (m, n, len) = spec.layers().get(layer)?.block_dims()?;
    Some(LayerBlocks {
        layer,
        input_maps: m,
        output_maps: n,
        block_len: len,
    })
}

/// The set of layers taking part in sparsification, with their block
/// geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    layers: Vec<LayerBlocks>,
}

impl BlockLayout {
    /// `include = None` selects every parameterized layer.
    pub fn new(spec: &NetworkSpec, include: Option<&[usize]>) -> Result<Self> {
        let layers = match include {
            None => spec
                .parameterized_layers()
                .filter_map(|l| layer_blocks(spec, l))
                .collect(),
            Some(list) => {
                let mut chosen: Vec<usize> = list.to_vec();
                chosen.sort_unstable();
                chosen.dedup();
                chosen
                    .into_iter()
                    .map(|l| {
                        if l >= spec.len() {
                            return Err(Error::InvalidArgument(format!(
                                "included layer {l} does not exist ({} layers)",
                                spec.len()
                            )));
                        }
                        layer_blocks(spec, l).ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "included layer {l} ({}) has no weights",
                                spec.layers()[l].kind_name()
                            ))
                        })
                    })
                    .collect::<Result<_>>()?
            }
        };
        Ok(BlockLayout { layers })
    }

    pub fn layers(&self) -> &[LayerBlocks] {
        &self.layers
    }

    pub fn layer(&self, layer: usize) -> Option<&LayerBlocks> {
        self.layers.iter().find(|lb| lb.layer == layer)
    }

    pub fn layer_indices(&self) -> Vec<usize> {
        self.layers.iter().map(|lb| lb.layer).collect()
    }

    pub fn block_count(&self) -> usize {
        self.layers.iter().map(LayerBlocks::count).sum()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(LayerBlocks::weight_count).sum()
    }

    pub fn blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.layers.iter().flat_map(|lb| lb.iter().map(|(id, _)| id))
    }

    pub fn contains(&self, id: &BlockId) -> bool {
        self.layer(id.layer).is_some_and(|lb| lb.contains(id))
    }

    /// Zero tensors for every included layer.
    pub fn zeros(&self, spec: &NetworkSpec) -> BlockTensors {
        self.layers
            .iter()
            .map(|lb| {
                let shape = spec.layers()[lb.layer]
                    .weight_shape()
                    .expect("layout only holds parameterized layers");
                (lb.layer, Tensor::zeros(&shape))
            })
            .collect()
    }

    /// Checks that `tensors` has exactly the included layers with the
    /// expected element counts.
    pub fn check(&self, tensors: &BlockTensors, what: &str) -> Result<()> {
        if tensors.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "{what} covers {} layers, layout has {}",
                tensors.len(),
                self.layers.len()
            )));
        }
        for lb in &self.layers {
            match tensors.get(&lb.layer) {
                Some(t) if t.len() == lb.weight_count() => {}
                Some(t) => {
                    return Err(Error::Shape {
                        layer: lb.layer,
                        detail: format!(
                            "{what} has {} values, expected {}",
                            t.len(),
                            lb.weight_count()
                        ),
                    })
                }
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "{what} is missing layer {}",
                        lb.layer
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Enumerates the sparsity blocks of `spec`: `m * n` per included conv
/// layer, `n` per included fully-connected layer.
pub fn partition_blocks(spec: &NetworkSpec, include: Option<&[usize]>) -> Result<Vec<BlockId>> {
    Ok(BlockLayout::new(spec, include)?.blocks().collect())
}

/// Blocks whose weights are frozen at zero.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Mask {
    pruned: BTreeSet<BlockId>,
}

impl Mask {
    pub fn new() -> Self {
        Mask::default()
    }

    pub fn insert(&mut self, id: BlockId) -> bool {
        self.pruned.insert(id)
    }

    pub fn contains(&self, id: &BlockId) -> bool {
        self.pruned.contains(id)
    }

    pub fn len(&self) -> usize {
        self.pruned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pruned.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BlockId> {
        self.pruned.iter()
    }

    pub fn in_layer(&self, layer: usize) -> impl Iterator<Item = &BlockId> {
        self.pruned
            .range(BlockId::new(layer, 0, 0)..BlockId::new(layer + 1, 0, 0))
    }

    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        for id in &self.pruned {
            let ok = layer_blocks(spec, id.layer).is_some_and(|lb| lb.contains(id));
            if !ok {
                return Err(Error::InvalidBlock(*id));
            }
        }
        Ok(())
    }

    /// One `layer,input_map,output_map` line per pruned block, sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for id in &self.pruned {
            out.push_str(&id.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut mask = Mask::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<usize> = line
                .split(',')
                .map(|f| f.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| {
                    Error::InvalidArgument(format!("mask line {}: `{line}` is not numeric", n + 1))
                })?;
            match fields[..] {
                [l, i, j] => {
                    mask.insert(BlockId::new(l, i, j));
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "mask line {}: expected 3 fields, got {}",
                        n + 1,
                        fields.len()
                    )))
                }
            }
        }
        Ok(mask)
    }
}

impl FromIterator<BlockId> for Mask {
    fn from_iter<I: IntoIterator<Item = BlockId>>(iter: I) -> Self {
        Mask {
            pruned: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{LayerSpec, Padding, Shape};

    fn nin_conv1() -> NetworkSpec {
        NetworkSpec::new(
            Shape::new(3, 32, 32),
            vec![LayerSpec::Conv2d {
                kernel_h: 3,
                kernel_w: 3,
                in_maps: 3,
                out_maps: 192,
                stride: 1,
                padding: Padding::Same,
            }],
        )
        .unwrap()
    }

    #[test]
    fn nin_first_layer_has_576_filters() {
        assert_eq!(partition_blocks(&nin_conv1(), None).unwrap().len(), 576);
    }

    #[test]
    fn fully_connected_has_one_block_per_output() {
        let spec =
            NetworkSpec::new(Shape::new(1024, 1, 1), vec![LayerSpec::fc(1024, 256)]).unwrap();
        let blocks = partition_blocks(&spec, None).unwrap();
        assert_eq!(blocks.len(), 256);
        assert!(blocks.iter().all(|b| b.input_map == 0));
    }

    #[test]
    fn two_layer_partition_is_disjoint_and_complete() {
        let spec = NetworkSpec::new(
            Shape::new(2, 3, 3),
            vec![
                LayerSpec::conv3x3(2, 3),
                LayerSpec::Relu,
                LayerSpec::fc(27, 4),
            ],
        )
        .unwrap();
        let layout = BlockLayout::new(&spec, None).unwrap();
        let blocks: Vec<_> = layout.blocks().collect();
        assert_eq!(blocks.len(), 2 * 3 + 4);

        // Exhaustive ownership count over every weight index.
        for lb in layout.layers() {
            let mut owners = vec![0usize; lb.weight_count()];
            for (_, range) in lb.iter() {
                for k in range {
                    owners[k] += 1;
                }
            }
            assert!(owners.iter().all(|&c| c == 1));
        }
        let unique: BTreeSet<_> = blocks.iter().collect();
        assert_eq!(unique.len(), blocks.len());
    }

    #[test]
    fn include_filter_rejects_unparameterized_layers() {
        let spec = NetworkSpec::new(
            Shape::new(1, 4, 4),
            vec![LayerSpec::conv3x3(1, 2), LayerSpec::Relu, LayerSpec::fc(32, 2)],
        )
        .unwrap();
        assert!(partition_blocks(&spec, Some(&[1])).is_err());
        assert!(partition_blocks(&spec, Some(&[9])).is_err());
        assert_eq!(partition_blocks(&spec, Some(&[2])).unwrap().len(), 2);
    }

    #[test]
    fn mask_text_is_sorted_and_parses_back() {
        let mask: Mask = [
            BlockId::new(3, 1, 0),
            BlockId::new(0, 0, 5),
            BlockId::new(0, 0, 2),
        ]
        .into_iter()
        .collect();
        let text = mask.to_text();
        assert_eq!(text, "0,0,2\n0,0,5\n3,1,0\n");
        assert_eq!(Mask::from_text(&text).unwrap(), mask);
        assert!(Mask::from_text("1,2\n").is_err());
    }

    #[test]
    fn mask_validation() {
        let spec = nin_conv1();
        let ok: Mask = [BlockId::new(0, 2, 191)].into_iter().collect();
        assert!(ok.validate(&spec).is_ok());
        let bad: Mask = [BlockId::new(0, 3, 0)].into_iter().collect();
        assert!(matches!(bad.validate(&spec), Err(Error::InvalidBlock(_))));
    }
}

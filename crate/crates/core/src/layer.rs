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

//! Layer descriptions, shape inference and the textual layer notation shared
//! by checkpoints and run configs.
//!
//! A layer is written as a kind followed by `key=value` attributes:
//!
//! ```text
//! conv2d kh=3 kw=3 in=1 out=8 stride=1 pad=same
//! relu
//! max-pool size=2 stride=2
//! fully-connected in=256 out=2
//! softmax-xent-head
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding chosen so that stride 1 preserves the map size.
    Same,
    Valid,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        kernel_h: usize,
        kernel_w: usize,
        in_maps: usize,
        out_maps: usize,
        stride: usize,
        padding: Padding,
    },
    /// Dense layer over the flattened input; treated as `outputs` 1-dim
    /// convolutions of a single input map.
    FullyConnected { inputs: usize, outputs: usize },
    Relu,
    MaxPool { size: usize, stride: usize },
    /// Marks the logits; softmax cross-entropy is applied by the loss.
    SoftmaxXentHead,
}

impl LayerSpec {
    pub fn conv3x3(in_maps: usize, out_maps: usize) -> Self {
        LayerSpec::Conv2d {
            kernel_h: 3,
            kernel_w: 3,
            in_maps,
            out_maps,
            stride: 1,
            padding: Padding::Same,
        }
    }

    pub fn fc(inputs: usize, outputs: usize) -> Self {
        LayerSpec::FullyConnected { inputs, outputs }
    }

    pub fn max_pool(size: usize) -> Self {
        LayerSpec::MaxPool { size, stride: size }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d { .. } | LayerSpec::FullyConnected { .. }
        )
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::FullyConnected { .. } => "fully-connected",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "max-pool",
            LayerSpec::SoftmaxXentHead => "softmax-xent-head",
        }
    }

    /// Weight tensor shape: `[n, m, kh, kw]` for conv, `[n, inputs]` for
    /// fully-connected.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                kernel_h,
                kernel_w,
                in_maps,
                out_maps,
                ..
            } => Some(vec![out_maps, in_maps, kernel_h, kernel_w]),
            LayerSpec::FullyConnected { inputs, outputs } => Some(vec![outputs, inputs]),
            _ => None,
        }
    }

    /// `(input maps m, output maps n, values per block)`.
    pub fn block_dims(&self) -> Option<(usize, usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                kernel_h,
                kernel_w,
                in_maps,
                out_maps,
                ..
            } => Some((in_maps, out_maps, kernel_h * kernel_w)),
            LayerSpec::FullyConnected { inputs, outputs } => Some((1, outputs, inputs)),
            _ => None,
        }
    }

    /// Output shape for `input`; errors name `layer` as the offending index.
    pub fn output_shape(&self, layer: usize, input: Shape) -> Result<Shape> {
        let err = |detail: String| Error::Shape { layer, detail };
        match *self {
            LayerSpec::Conv2d {
                kernel_h,
                kernel_w,
                in_maps,
                out_maps,
                stride,
                padding,
            } => {
                if in_maps == 0 || out_maps == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 {
                    return Err(err("conv2d dimensions must be positive".into()));
                }
                if input.maps != in_maps {
                    return Err(err(format!(
                        "conv2d expects {in_maps} input maps, got {}",
                        input.maps
                    )));
                }
                let geom = ConvGeometry::new(input, kernel_h, kernel_w, stride, padding)
                    .ok_or_else(|| {
                        err(format!(
                            "{kernel_h}x{kernel_w} kernel does not fit {}x{} input",
                            input.height, input.width
                        ))
                    })?;
                Ok(Shape::new(out_maps, geom.out_h, geom.out_w))
            }
            LayerSpec::FullyConnected { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(err("fully-connected sizes must be positive".into()));
                }
                if input.len() != inputs {
                    return Err(err(format!(
                        "fully-connected expects {inputs} inputs, got {} ({}x{}x{})",
                        input.len(),
                        input.maps,
                        input.height,
                        input.width
                    )));
                }
                Ok(Shape::new(outputs, 1, 1))
            }
            LayerSpec::Relu | LayerSpec::SoftmaxXentHead => Ok(input),
            LayerSpec::MaxPool { size, stride } => {
                if size == 0 || stride == 0 {
                    return Err(err("max-pool size and stride must be positive".into()));
                }
                if input.height < size || input.width < size {
                    return Err(err(format!(
                        "max-pool window {size} does not fit {}x{} input",
                        input.height, input.width
                    )));
                }
                Ok(Shape::new(
                    input.maps,
                    (input.height - size) / stride + 1,
                    (input.width - size) / stride + 1,
                ))
            }
        }
    }
}

/// Activation shape `(maps, height, width)`. Fully-connected outputs are
/// `(n, 1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub maps: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(maps: usize, height: usize, width: usize) -> Self {
        Shape { maps, height, width }
    }

    pub fn len(&self) -> usize {
        self.maps * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.maps, self.height, self.width)
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let dims: Vec<usize> = s
            .trim()
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidSpec(format!("bad shape `{s}`, expected MxHxW")))?;
        match dims[..] {
            [m, h, w] if m > 0 && h > 0 && w > 0 => Ok(Shape::new(m, h, w)),
            _ => Err(Error::InvalidSpec(format!(
                "bad shape `{s}`, expected MxHxW with positive entries"
            ))),
        }
    }
}

/// Resolved convolution geometry for one input shape.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub(crate) fn new(
        input: Shape,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Option<Self> {
        match padding {
            Padding::Same => {
                let out_h = (input.height - 1) / stride + 1;
                let out_w = (input.width - 1) / stride + 1;
                let pad_h = ((out_h - 1) * stride + kh).saturating_sub(input.height);
                let pad_w = ((out_w - 1) * stride + kw).saturating_sub(input.width);
                Some(ConvGeometry {
                    out_h,
                    out_w,
                    pad_top: pad_h / 2,
                    pad_left: pad_w / 2,
                })
            }
            Padding::Valid => {
                if input.height < kh || input.width < kw {
                    return None;
                }
                Some(ConvGeometry {
                    out_h: (input.height - kh) / stride + 1,
                    out_w: (input.width - kw) / stride + 1,
                    pad_top: 0,
                    pad_left: 0,
                })
            }
        }
    }
}

/// A validated sequential architecture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    input: Shape,
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
}

impl NetworkSpec {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::InvalidSpec("input shape must be non-empty".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidSpec("network has no layers".into()));
        }
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input);
        for (l, layer) in layers.iter().enumerate() {
            if matches!(layer, LayerSpec::SoftmaxXentHead) && l + 1 != layers.len() {
                return Err(Error::InvalidSpec(format!(
                    "softmax-xent-head must be the last layer, found at {l}"
                )));
            }
            let next = layer.output_shape(l, shapes[l])?;
            shapes.push(next);
        }
        Ok(NetworkSpec {
            input,
            layers,
            shapes,
        })
    }

    pub fn input(&self) -> Shape {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Input shape of layer `l`; `l == len()` gives the logits shape.
    pub fn shape_before(&self, l: usize) -> Shape {
        self.shapes[l]
    }

    pub fn classes(&self) -> usize {
        self.shapes[self.layers.len()].len()
    }

    pub fn parameterized_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_parameterized())
            .map(|(i, _)| i)
    }

    /// Same architecture evaluated on a different input size.
    pub fn with_input(&self, input: Shape) -> Result<Self> {
        NetworkSpec::new(input, self.layers.clone())
    }

    /// Layers joined with `; `, the form used in run configs.
    pub fn layers_notation(&self) -> String {
        self.layers
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn parse_layers(notation: &str) -> Result<Vec<LayerSpec>> {
        notation
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv2d {
                kernel_h,
                kernel_w,
                in_maps,
                out_maps,
                stride,
                padding,
            } => write!(
                f,
                "conv2d kh={kernel_h} kw={kernel_w} in={in_maps} out={out_maps} stride={stride} pad={}",
                match padding {
                    Padding::Same => "same",
                    Padding::Valid => "valid",
                }
            ),
            LayerSpec::FullyConnected { inputs, outputs } => {
                write!(f, "fully-connected in={inputs} out={outputs}")
            }
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool { size, stride } => write!(f, "max-pool size={size} stride={stride}"),
            LayerSpec::SoftmaxXentHead => f.write_str("softmax-xent-head"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut tokens = s.split_whitespace();
        let kind = tokens
            .next()
            .ok_or_else(|| Error::InvalidSpec("empty layer description".into()))?;
        let mut attrs = BTreeMap::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::InvalidSpec(format!("expected key=value, got `{tok}`")))?;
            attrs.insert(k, v);
        }
        let mut take = |key: &str, default: Option<usize>| -> Result<usize> {
            match attrs.remove(key) {
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::InvalidSpec(format!("`{key}` must be an integer in `{s}`"))),
                None => default
                    .ok_or_else(|| Error::InvalidSpec(format!("missing `{key}` in `{s}`"))),
            }
        };
        let layer = match kind {
            "conv2d" => {
                let kernel_h = take("kh", None)?;
                let kernel_w = take("kw", Some(kernel_h))?;
                let in_maps = take("in", None)?;
                let out_maps = take("out", None)?;
                let stride = take("stride", Some(1))?;
                let padding = match attrs.remove("pad").unwrap_or("same") {
                    "same" => Padding::Same,
                    "valid" => Padding::Valid,
                    other => {
                        return Err(Error::InvalidSpec(format!("unknown padding `{other}`")))
                    }
                };
                LayerSpec::Conv2d {
                    kernel_h,
                    kernel_w,
                    in_maps,
                    out_maps,
                    stride,
                    padding,
                }
            }
            "fully-connected" => LayerSpec::FullyConnected {
                inputs: take("in", None)?,
                outputs: take("out", None)?,
            },
            "relu" => LayerSpec::Relu,
            "max-pool" => {
                let size = take("size", None)?;
                let stride = take("stride", Some(size))?;
                LayerSpec::MaxPool { size, stride }
            }
            "softmax-xent-head" => LayerSpec::SoftmaxXentHead,
            other => return Err(Error::InvalidSpec(format!("unknown layer kind `{other}`"))),
        };
        if let Some(key) = attrs.keys().next() {
            return Err(Error::InvalidSpec(format!(
                "unexpected attribute `{key}` for {kind}"
            )));
        }
        Ok(layer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cnn() -> NetworkSpec {
        NetworkSpec::new(
            Shape::new(1, 16, 16),
            vec![
                LayerSpec::conv3x3(1, 8),
                LayerSpec::Relu,
                LayerSpec::max_pool(2),
                LayerSpec::conv3x3(8, 16),
                LayerSpec::Relu,
                LayerSpec::max_pool(2),
                LayerSpec::fc(256, 2),
                LayerSpec::SoftmaxXentHead,
            ],
        )
        .unwrap()
    }

    #[test]
    fn shapes_propagate() {
        let spec = tiny_cnn();
        assert_eq!(spec.shape_before(1), Shape::new(8, 16, 16));
        assert_eq!(spec.shape_before(3), Shape::new(8, 8, 8));
        assert_eq!(spec.shape_before(6), Shape::new(16, 4, 4));
        assert_eq!(spec.classes(), 2);
        assert_eq!(spec.parameterized_layers().collect::<Vec<_>>(), vec![0, 3, 6]);
    }

    #[test]
    fn incompatible_layers_name_the_layer() {
        let err = NetworkSpec::new(
            Shape::new(1, 8, 8),
            vec![LayerSpec::conv3x3(2, 4)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape { layer: 0, .. }), "{err}");

        let err = NetworkSpec::new(
            Shape::new(1, 8, 8),
            vec![LayerSpec::conv3x3(1, 2), LayerSpec::fc(100, 2)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape { layer: 1, .. }), "{err}");
    }

    #[test]
    fn head_must_be_last() {
        let err = NetworkSpec::new(
            Shape::new(1, 2, 2),
            vec![LayerSpec::SoftmaxXentHead, LayerSpec::fc(4, 2)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)));
    }

    #[test]
    fn same_padding_with_stride() {
        let g = ConvGeometry::new(Shape::new(1, 7, 7), 3, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top), (4, 4, 1));
        let g = ConvGeometry::new(Shape::new(1, 7, 7), 3, 3, 1, Padding::Valid).unwrap();
        assert_eq!((g.out_h, g.pad_top), (5, 0));
    }

    #[test]
    fn notation_round_trips() {
        let spec = tiny_cnn();
        let text = spec.layers_notation();
        assert_eq!(NetworkSpec::parse_layers(&text).unwrap(), spec.layers());
        assert_eq!("1x16x16".parse::<Shape>().unwrap(), Shape::new(1, 16, 16));
    }

    #[test]
    fn notation_defaults_and_errors() {
        let l: LayerSpec = "conv2d kh=5 in=3 out=4".parse().unwrap();
        assert_eq!(
            l,
            LayerSpec::Conv2d {
                kernel_h: 5,
                kernel_w: 5,
                in_maps: 3,
                out_maps: 4,
                stride: 1,
                padding: Padding::Same
            }
        );
        assert!("conv2d kh=3 in=1".parse::<LayerSpec>().is_err());
        assert!("relu x=1".parse::<LayerSpec>().is_err());
        assert!("dropout".parse::<LayerSpec>().is_err());
    }
}

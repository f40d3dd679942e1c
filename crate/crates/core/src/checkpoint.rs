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

//! Checkpoint container.
//!
//! ```text
//! "ADMMCNN1"                      8 bytes, magic + format version
//! header length                   u64 little-endian
//! header                          UTF-8 text, see below
//! payload                         f32 little-endian, weights then bias of
//!                                 each parameterized layer in layer order
//! ```
//!
//! The header is line oriented:
//!
//! ```text
//! input 1x16x16
//! layer conv2d kh=3 kw=3 in=1 out=8 stride=1 pad=same
//! layer relu
//! ...
//! tensor 0 weight 8,1,3,3
//! tensor 0 bias 8
//! floats 1234
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::error::Result;
use crate::layer::{LayerSpec, NetworkSpec, Shape};
use crate::network::{Network, Params};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ADMMCNN1";
const MAGIC_PREFIX: &[u8; 7] = b"ADMMCNN";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version `{0}`")]
    VersionMismatch(char),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: header declares {declared} floats, found {found}")]
    TruncatedPayload { declared: usize, found: usize },
    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),
    #[error("header disagrees with layer list: {0}")]
    HeaderMismatch(String),
}

pub fn encode(net: &Network) -> Vec<u8> {
    let spec = net.spec();
    let mut header = format!("input {}\n", spec.input());
    for layer in spec.layers() {
        header.push_str(&format!("layer {layer}\n"));
    }
    let mut floats = 0;
    for (l, p) in net.params().iter().enumerate() {
        if let Some(p) = p {
            header.push_str(&format!("tensor {l} weight {}\n", join_dims(p.weight.shape())));
            header.push_str(&format!("tensor {l} bias {}\n", join_dims(p.bias.shape())));
            floats += p.weight.len() + p.bias.len();
        }
    }
    header.push_str(&format!("floats {floats}\n"));

    let mut out = Vec::with_capacity(16 + header.len() + 4 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for p in net.params().iter().flatten() {
        for v in p.weight.data().iter().chain(p.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 8 || &bytes[..7] != MAGIC_PREFIX {
        return Err(CheckpointError::BadMagic.into());
    }
    if bytes[7] != MAGIC[7] {
        return Err(CheckpointError::VersionMismatch(bytes[7] as char).into());
    }
    let len_bytes: [u8; 8] = bytes
        .get(8..16)
        .ok_or(CheckpointError::TruncatedHeader)?
        .try_into()
        .expect("8 bytes");
    let header_len = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| CheckpointError::TruncatedHeader)?;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or(CheckpointError::TruncatedHeader)?;
    let header = std::str::from_utf8(&bytes[16..header_end])
        .map_err(|_| CheckpointError::MalformedHeader("header is not UTF-8".into()))?;
    let parsed = parse_header(header)?;

    let payload = &bytes[header_end..];
    if payload.len() < parsed.floats.saturating_mul(4) {
        return Err(CheckpointError::TruncatedPayload {
            declared: parsed.floats,
            found: payload.len() / 4,
        }
        .into());
    }
    if payload.len() > parsed.floats.saturating_mul(4) {
        return Err(CheckpointError::TrailingBytes(payload.len() - parsed.floats.saturating_mul(4)).into());
    }

    let tensor_floats: usize = parsed.tensors.iter().map(|(_, _, d)| d.iter().product::<usize>()).sum();
    if tensor_floats != parsed.floats {
        return Err(CheckpointError::HeaderMismatch(format!(
            "tensor entries hold {tensor_floats} floats, header declares {}",
            parsed.floats
        ))
        .into());
    }

    let spec = NetworkSpec::new(parsed.input, parsed.layers)
        .map_err(|e| CheckpointError::HeaderMismatch(e.to_string()))?;
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut tensors = parsed.tensors.into_iter();
    let mut params = Vec::with_capacity(spec.len());
    for (l, layer) in spec.layers().iter().enumerate() {
        let Some(shape) = layer.weight_shape() else {
            params.push(None);
            continue;
        };
        let mut next = |role: &str, want: &[usize]| -> Result<Tensor> {
            match tensors.next() {
                Some((tl, tr, dims)) if tl == l && tr == role && dims == want => {
                    let n: usize = dims.iter().product();
                    Tensor::from_vec(&dims, values.by_ref().take(n).collect())
                }
                Some((tl, tr, dims)) => Err(CheckpointError::HeaderMismatch(format!(
                    "expected layer {l} {role} {want:?}, header has layer {tl} {tr} {dims:?}"
                ))
                .into()),
                None => Err(CheckpointError::HeaderMismatch(format!(
                    "no tensor entry for layer {l} {role}"
                ))
                .into()),
            }
        };
        let weight = next("weight", &shape)?;
        let bias = next("bias", &[shape[0]])?;
        params.push(Some(Params { weight, bias }));
    }
    if let Some((l, role, _)) = tensors.next() {
        return Err(CheckpointError::HeaderMismatch(format!(
            "unexpected tensor entry for layer {l} {role}"
        ))
        .into());
    }
    Network::from_params(spec, params)
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    decode(&fs::read(path)?)
}

struct Header {
    input: Shape,
    layers: Vec<LayerSpec>,
    tensors: Vec<(usize, String, Vec<usize>)>,
    floats: usize,
}

fn parse_header(text: &str) -> std::result::Result<Header, CheckpointError> {
    let bad = |line: &str| CheckpointError::MalformedHeader(format!("cannot parse `{line}`"));
    let mut input = None;
    let mut layers = Vec::new();
    let mut tensors = Vec::new();
    let mut floats = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, rest) = line.split_once(' ').ok_or_else(|| bad(line))?;
        match key {
            "input" => input = Some(rest.parse::<Shape>().map_err(|_| bad(line))?),
            "layer" => layers.push(rest.parse::<LayerSpec>().map_err(|_| bad(line))?),
            "tensor" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let [l, role, dims] = parts[..] else {
                    return Err(bad(line));
                };
                let l = l.parse().map_err(|_| bad(line))?;
                let dims = dims
                    .split(',')
                    .map(str::parse)
                    .collect::<std::result::Result<Vec<usize>, _>>()
                    .map_err(|_| bad(line))?;
                tensors.push((l, role.to_string(), dims));
            }
            "floats" => floats = Some(rest.trim().parse().map_err(|_| bad(line))?),
            _ => return Err(bad(line)),
        }
    }
    Ok(Header {
        input: input.ok_or_else(|| CheckpointError::MalformedHeader("missing input".into()))?,
        layers,
        tensors,
        floats: floats.ok_or_else(|| CheckpointError::MalformedHeader("missing floats".into()))?,
    })
}

fn join_dims(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

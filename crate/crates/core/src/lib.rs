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

//! Filter-level sparsification of pre-trained convolutional networks with
//! ADMM.
//!
//! The weights `W` are split from an auxiliary copy `F` that carries the
//! block-sparsity penalty. Each ADMM iteration alternates
//!
//! 1. a proximal SGD pass on `L(W) + (rho/2) ||W - (F - Gamma/rho)||^2`
//!    ([`admm::performance_step`]),
//! 2. a closed-form group soft/hard threshold of `W + Gamma/rho`
//!    ([`prox::sparsity_step`]),
//! 3. the dual ascent `Gamma += rho (W - F)` ([`admm::dual_update`]),
//!
//! and [`path::run_path`] sweeps the penalty weight `mu` upward, fine-tuning
//! the surviving filters after each value.

pub mod admm;
pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod layer;
pub mod macs;
pub mod network;
pub mod optim;
pub mod path;
pub mod prox;
pub mod report;
pub mod stats;
pub mod tensor;

pub use blocks::{partition_blocks, BlockId, BlockLayout, BlockTensors, Mask};
pub use error::{Error, Result};
pub use layer::{LayerSpec, NetworkSpec, Padding, Shape};
pub use network::{Gradients, Network, Params};
pub use prox::{LayerGuardPolicy, PenaltyKind};
pub use tensor::Tensor;

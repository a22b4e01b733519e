//! A three-layer fully convolutional 3D network with hand-written forward
//! and backward passes.
//!
//! ```text
//! [image, mask] -> conv 3^3 (2->8) + ReLU -> conv 3^3 (8->8) + ReLU
//!               -> conv 1^3 (8->1) + sigmoid -> foreground probability
//! ```
//!
//! The second input channel carries the annotated-slice mask during training
//! and is all ones at inference. All arithmetic is 64-bit.

mod checkpoint;
mod kernels;
mod net;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};
pub use net::{backward, forward, forward_channels, forward_inputs, forward_volume, ForwardCache, InputGrid};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Rng;

pub const ARCHITECTURE: &str = "tiny3d-c8-c8-p1";
pub const INPUT_CHANNELS: usize = 2;

/// Shape of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub cin: usize,
    pub cout: usize,
    /// Kernel edge length (3 or 1).
    pub kernel: usize,
}

impl LayerShape {
    pub const fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel * self.kernel
    }

    pub const fn fan_in(&self) -> usize {
        self.cin * self.kernel * self.kernel * self.kernel
    }
}

pub const LAYERS: [LayerShape; 3] = [
    LayerShape {
        cin: 2,
        cout: 8,
        kernel: 3,
    },
    LayerShape {
        cin: 8,
        cout: 8,
        kernel: 3,
    },
    LayerShape {
        cin: 8,
        cout: 1,
        kernel: 1,
    },
];

/// Lengths of the parameter blocks in canonical order:
/// w1, b1, w2, b2, w3, b3.
pub fn block_lengths() -> [usize; 6] {
    [
        LAYERS[0].weight_len(),
        LAYERS[0].cout,
        LAYERS[1].weight_len(),
        LAYERS[1].cout,
        LAYERS[2].weight_len(),
        LAYERS[2].cout,
    ]
}

pub const BLOCK_NAMES: [&str; 6] = ["conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b"];

/// Parameter-shaped storage: six blocks in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    blocks: Vec<Vec<f64>>,
}

impl Blocks {
    pub fn zeros() -> Self {
        Blocks {
            blocks: block_lengths().iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Result<Self> {
        let lens = block_lengths();
        if blocks.len() != lens.len() || blocks.iter().zip(lens).any(|(b, n)| b.len() != n) {
            return Err(Error::ShapeMismatch);
        }
        Ok(Blocks { blocks })
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.blocks
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        &self.blocks[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.blocks[2 * layer + 1]
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.blocks.iter().flatten()
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Blocks) -> bool {
        self.blocks.len() == other.blocks.len()
            && self.blocks.iter().zip(&other.blocks).all(|(a, b)| a.len() == b.len())
    }
}

/// Network weights and biases.
pub type NetParams = Blocks;
/// Gradients co-indexed with [`NetParams`].
pub type GradientSet = Blocks;

/// Fan-in scaled uniform weights in `[-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero biases.
pub fn init_params(rng: &mut Rng) -> NetParams {
    let mut p = Blocks::zeros();
    for (layer, shape) in LAYERS.iter().enumerate() {
        let bound = (6.0 / shape.fan_in() as f64).sqrt();
        for w in &mut p.blocks[2 * layer] {
            *w = rng.uniform_range(-bound, bound);
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count() {
        assert_eq!(Blocks::zeros().param_count(), 432 + 8 + 1728 + 8 + 8 + 1);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(&mut Rng::new(7, 0));
        let b = init_params(&mut Rng::new(7, 0));
        assert_eq!(a, b);
        for (layer, shape) in LAYERS.iter().enumerate() {
            let bound = (6.0 / shape.fan_in() as f64).sqrt();
            assert!(a.weight(layer).iter().all(|w| w.abs() <= bound));
            assert!(a.bias(layer).iter().all(|&b| b == 0.0));
        }
    }
}

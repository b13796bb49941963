//! Random-weight networks for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, Network};
use crate::error::{Dims, Result};
use crate::gemm::{PackedMatrixA, PackedMatrixB};
use crate::layers::{
    Backend, BatchNormLayer, BnParams, ConvGeometry, ConvInput, ConvLayer, DenseLayer, DenseWeights,
    Input8Layer, MaxPoolLayer,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Square kernel.
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Square window.
    MaxPool { window: usize, stride: usize },
    Dense { units: usize },
}

/// Layer sizes of a network, without weights. Batchnorm and sign layers are implied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input: Dims,
    pub blocks: Vec<Block>,
}

impl Architecture {
    /// Dense layers of the given widths over `sizes[0]` input bytes.
    pub fn mlp(sizes: &[usize]) -> Self {
        Architecture {
            input: Dims::new(1, sizes[0], 1),
            blocks: sizes[1..].iter().map(|&units| Block::Dense { units }).collect(),
        }
    }

    /// 784-4096-4096-4096-10, for 28x28 grayscale digits.
    pub fn mnist_mlp() -> Self {
        let mut a = Self::mlp(&[784, 4096, 4096, 4096, 10]);
        a.input = Dims::new(28, 28, 1);
        a
    }

    /// VGG-style CIFAR-10 network: 2x128C3-MP2-2x256C3-MP2-2x512C3-MP2-2x1024FC-10FC.
    pub fn cifar_vgg() -> Self {
        Self::vgg(&[128, 256, 512], &[1024, 1024, 10])
    }

    /// Scaled-down variant: 2x32C3-MP2-2x64C3-MP2-256FC-10FC.
    pub fn cifar_vgg_small() -> Self {
        Self::vgg(&[32, 64], &[256, 10])
    }

    fn vgg(stages: &[usize], dense: &[usize]) -> Self {
        let conv = |filters| Block::Conv {
            filters,
            kernel: 3,
            stride: 1,
            pad: 1,
        };
        let mut blocks = Vec::new();
        for &f in stages {
            blocks.extend([conv(f), conv(f), Block::MaxPool { window: 2, stride: 2 }]);
        }
        blocks.extend(dense.iter().map(|&units| Block::Dense { units }));
        Architecture {
            input: Dims::new(32, 32, 3),
            blocks,
        }
    }
}

/// Batchnorm statistics roughly matched to an accumulator over `fan_in` terms.
fn random_bn(rng: &mut ChaCha8Rng, channels: usize, fan_in: usize, bytes: bool, pooled: bool) -> BnParams {
    // second moment of a uniform byte
    let spread = (fan_in as f32 * if bytes { 21_845.0 } else { 1.0 }).sqrt();
    let shift = if pooled { spread } else { 0.0 };
    let mut mean = Vec::with_capacity(channels);
    let mut var = Vec::with_capacity(channels);
    let mut gamma = Vec::with_capacity(channels);
    let mut beta = Vec::with_capacity(channels);
    for _ in 0..channels {
        mean.push(shift + spread * rng.random_range(-0.5f32..0.5));
        var.push(spread * spread * rng.random_range(0.5f32..2.0));
        let g: f32 = rng.random_range(0.5..1.5);
        gamma.push(if rng.random() { g } else { -g });
        beta.push(rng.random_range(-0.5..0.5));
    }
    BnParams::with_default_eps(mean, var, gamma, beta).expect("finite random parameters")
}

/// Builds `arch` with uniformly random binary weights and plausible batchnorm statistics.
///
/// The same seed always yields the same network; `backend` only changes the representation.
pub fn random_network(arch: &Architecture, backend: Backend, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut dims = arch.input;
    // fan-in and pooling state of the pending accumulator, flushed into a batchnorm
    let mut pending: Option<(usize, bool, bool)> = None;
    let flush = |rng: &mut ChaCha8Rng, layers: &mut Vec<Layer>, pending: &mut Option<(usize, bool, bool)>, dims: Dims| {
        if let Some((fan_in, bytes, pooled)) = pending.take() {
            let bn = random_bn(rng, dims.channels, fan_in, bytes, pooled);
            layers.push(Layer::BatchNorm(BatchNormLayer::new(bn, backend)));
        }
    };
    for (i, block) in arch.blocks.iter().enumerate() {
        let first = i == 0;
        match *block {
            Block::Conv {
                filters,
                kernel,
                stride,
                pad,
            } => {
                flush(&mut rng, &mut layers, &mut pending, dims);
                let geometry = ConvGeometry {
                    input: dims,
                    kernel_h: kernel,
                    kernel_w: kernel,
                    stride,
                    pad,
                    filters,
                };
                geometry.validate()?;
                let w = PackedMatrixB::from_fn(geometry.patch_len(), filters, |_, _| rng.random());
                let input = if first { ConvInput::Bytes } else { ConvInput::Binary };
                let layer = ConvLayer::new(geometry, input, w)?;
                layers.push(Layer::Conv(layer.to_backend(backend)));
                pending = Some((geometry.patch_len(), first, false));
                dims = geometry.output_dims();
            }
            Block::MaxPool { window, stride } => {
                let layer = MaxPoolLayer::new(window, window, stride);
                dims = layer.output_dims(dims)?;
                layers.push(Layer::MaxPool(layer));
                if let Some(p) = pending.as_mut() {
                    p.2 = true;
                }
            }
            Block::Dense { units } => {
                flush(&mut rng, &mut layers, &mut pending, dims);
                let k = dims.len();
                let w = DenseWeights::Packed(PackedMatrixA::from_fn(units, k, |_, _| rng.random()))
                    .to_backend(backend);
                layers.push(if first {
                    Layer::Input8(Input8Layer::new(w))
                } else {
                    Layer::Dense(DenseLayer::new(w))
                });
                pending = Some((k, first, false));
                dims = Dims::vector(units);
            }
        }
    }
    flush(&mut rng, &mut layers, &mut pending, dims);
    Network::stack(layers)
}

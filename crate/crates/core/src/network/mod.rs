//! Networks: ordered layer stacks, their execution plans and model files.

mod format;
mod plan;
mod random;

use std::fmt;

pub use format::{MAGIC, VERSION};
pub use plan::{Workspace, WorkspacePool, WorkspaceSpec};
pub use random::{random_network, Architecture, Block};

use crate::error::{Dims, Error, Result};
use crate::layers::{
    Backend, BatchNormLayer, ConvInput, ConvLayer, DenseLayer, DenseWeights,
    Input8Layer, MaxPoolLayer, SignLayer,
};
use plan::Plan;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Input8(Input8Layer),
    Dense(DenseLayer),
    Conv(ConvLayer),
    MaxPool(MaxPoolLayer),
    BatchNorm(BatchNormLayer),
    Sign(SignLayer),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Input8(_) => "input8",
            Layer::Dense(_) => "dense",
            Layer::Conv(l) if l.input_kind() == ConvInput::Bytes => "conv8",
            Layer::Conv(_) => "conv",
            Layer::MaxPool(_) => "maxpool",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Sign(_) => "sign",
        }
    }

    /// `None` for pooling, which follows whatever its input is.
    pub fn backend(&self) -> Option<Backend> {
        match self {
            Layer::Input8(l) => Some(l.backend()),
            Layer::Dense(l) => Some(l.backend()),
            Layer::Conv(l) => Some(l.backend()),
            Layer::MaxPool(_) => None,
            Layer::BatchNorm(l) => Some(l.backend()),
            Layer::Sign(l) => Some(l.backend),
        }
    }

    pub fn to_backend(&self, backend: Backend) -> Layer {
        match self {
            Layer::Input8(l) => Layer::Input8(l.to_backend(backend)),
            Layer::Dense(l) => Layer::Dense(l.to_backend(backend)),
            Layer::Conv(l) => Layer::Conv(l.to_backend(backend)),
            Layer::MaxPool(l) => Layer::MaxPool(*l),
            Layer::BatchNorm(l) => Layer::BatchNorm(l.to_backend(backend)),
            Layer::Sign(_) => Layer::Sign(SignLayer { backend }),
        }
    }

    /// Weight bytes as `(reference, packed)`.
    pub fn weight_bytes(&self) -> (usize, usize) {
        fn dense(w: &DenseWeights) -> (usize, usize) {
            let (m, k) = (w.units(), w.input_len());
            (m * k * 4, m * crate::tensor::words_for(k) * 8)
        }
        match self {
            Layer::Input8(l) => dense(l.weights()),
            Layer::Dense(l) => dense(l.weights()),
            Layer::Conv(l) => {
                let g = l.geometry();
                let (k, f) = (g.patch_len(), g.filters);
                (k * f * 4, f * crate::tensor::words_for(k) * 8)
            }
            _ => (0, 0),
        }
    }
}

/// Serialized parameter sizes of a network under each backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelSize {
    /// `f32` weights.
    pub reference_weights: usize,
    /// Bit-packed weights, each line padded to whole words.
    pub packed_weights: usize,
    /// `f32` mean, variance, scale and shift per channel; identical for both backends.
    pub batchnorm: usize,
}

impl ModelSize {
    pub fn reference(&self) -> usize {
        self.reference_weights + self.batchnorm
    }

    pub fn packed(&self) -> usize {
        self.packed_weights + self.batchnorm
    }

    pub fn ratio(&self) -> f64 {
        self.reference() as f64 / self.packed() as f64
    }
}

/// An immutable, validated layer stack with its execution plan.
///
/// Concurrent forward passes need one [`Workspace`] each.
#[derive(Clone)]
pub struct Network {
    layers: Vec<Layer>,
    plan: Plan,
}

impl fmt::Debug for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Network").field("layers", &self.layers).finish()
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Network {
    /// Validates an explicit layer list, sign layers included.
    ///
    /// The stack must start with a layer over raw bytes (`Input8` or a byte
    /// convolution), follow every batchnorm but the last with a sign, and end
    /// with a batchnorm whose outputs are the scores. Errors name the 1-based
    /// position of the offending layer.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let plan = Plan::build(&layers)?;
        Ok(Network { layers, plan })
    }

    /// Like [`Network::new`] with the sign layers left implicit, as in model files.
    ///
    /// A sign with the batchnorm's backend is inserted after every batchnorm
    /// but the last; error positions refer to `layers` as given.
    pub fn stack(layers: Vec<Layer>) -> Result<Self> {
        let mut full = Vec::with_capacity(layers.len() * 3 / 2);
        let mut origin = Vec::with_capacity(layers.len() * 3 / 2);
        let last = layers.len().saturating_sub(1);
        for (i, layer) in layers.into_iter().enumerate() {
            if let Layer::Sign(_) = layer {
                return Err(Error::Validation {
                    index: i + 1,
                    reason: "sign layers are implicit in a stack".into(),
                });
            }
            let sign = match &layer {
                Layer::BatchNorm(bn) if i != last => Some(SignLayer {
                    backend: bn.backend(),
                }),
                _ => None,
            };
            full.push(layer);
            origin.push(i + 1);
            if let Some(s) = sign {
                full.push(Layer::Sign(s));
                origin.push(i + 1);
            }
        }
        Network::new(full).map_err(|e| match e {
            Error::Validation { index, reason } => Error::Validation {
                index: origin.get(index - 1).copied().unwrap_or(index),
                reason,
            },
            other => other,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// The common backend of every layer, `None` for hybrids.
    pub fn backend(&self) -> Option<Backend> {
        let mut it = self.layers.iter().filter_map(Layer::backend);
        let first = it.next()?;
        it.all(|b| b == first).then_some(first)
    }

    /// Bytes expected by [`Network::forward`].
    pub fn input_len(&self) -> usize {
        self.plan.input_len
    }

    /// Shape the first layer reads the input bytes as.
    pub fn input_dims(&self) -> Dims {
        self.plan.input_dims
    }

    /// Number of scores.
    pub fn output_len(&self) -> usize {
        self.plan.output_len
    }

    /// Output shape of every layer, in order.
    pub fn shapes(&self) -> &[Dims] {
        &self.plan.shapes
    }

    pub fn workspace_spec(&self) -> &WorkspaceSpec {
        &self.plan.spec
    }

    /// Scratch memory for one forward pass at a time.
    pub fn workspace(&self) -> Workspace {
        Workspace::new(&self.plan.spec)
    }

    /// Scores for one input, computed entirely inside `ws`.
    ///
    /// Performs no heap allocation on success.
    pub fn forward<'w>(&self, ws: &'w mut Workspace, input: &[u8]) -> Result<&'w [f32]> {
        self.plan.run(&self.layers, ws, input)
    }

    /// Index of the highest score; ties go to the lowest index.
    pub fn classify(&self, ws: &mut Workspace, input: &[u8]) -> Result<usize> {
        self.forward(ws, input).map(argmax)
    }

    /// Allocating convenience wrapper around [`Network::forward`].
    pub fn scores(&self, input: &[u8]) -> Result<Vec<f32>> {
        let mut ws = self.workspace();
        self.forward(&mut ws, input).map(<[f32]>::to_vec)
    }

    /// Every layer moved to `backend`.
    pub fn to_backend(&self, backend: Backend) -> Network {
        self.with_backends(|_, _| backend)
    }

    /// Per-layer backend choice, for hybrid networks.
    pub fn with_backends(&self, mut choose: impl FnMut(usize, &Layer) -> Backend) -> Network {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.to_backend(choose(i, l)))
            .collect();
        Network::new(layers).expect("conversion preserves shapes")
    }

    pub fn model_size(&self) -> ModelSize {
        let mut size = ModelSize::default();
        for layer in &self.layers {
            let (r, p) = layer.weight_bytes();
            size.reference_weights += r;
            size.packed_weights += p;
            if let Layer::BatchNorm(bn) = layer {
                size.batchnorm += 16 * bn.channels();
            }
        }
        size
    }
}

pub fn convert(net: &Network, backend: Backend) -> Network {
    net.to_backend(backend)
}

pub fn model_size(net: &Network) -> ModelSize {
    net.model_size()
}

/// Position of the largest value, the first one on ties. NaN never wins.
pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] || scores[best].is_nan() {
            best = i;
        }
    }
    best
}

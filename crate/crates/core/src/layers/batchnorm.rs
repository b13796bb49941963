//! Inference-time batch normalization and its fusion with the sign activation.
//!
//! `y = gamma * (x - mean) / sqrt(var + eps) + beta`, per channel.
//!
//! Followed by a sign, the whole transform on an integer accumulator reduces
//! to one comparison per channel. The threshold is located by bisection on
//! the exact `f32` expression the reference path evaluates, which is monotone
//! in `x` because every IEEE operation involved is, so the fused bits match
//! the unfused ones for every `i32` input rather than up to rounding.

use super::Backend;
use crate::error::{mismatch, Result};
use crate::tensor::{binarize, pack_indexed_into, FloatTensor, IntTensor, PackedLayout, PackedTensor};

pub const DEFAULT_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    mean: Vec<f32>,
    var: Vec<f32>,
    gamma: Vec<f32>,
    beta: Vec<f32>,
    eps: f32,
    std: Vec<f32>,
}

impl BnParams {
    /// Rejects mismatched lengths, non-finite values, negative variance or epsilon.
    pub fn new(mean: Vec<f32>, var: Vec<f32>, gamma: Vec<f32>, beta: Vec<f32>, eps: f32) -> Result<Self> {
        let c = mean.len();
        if var.len() != c || gamma.len() != c || beta.len() != c {
            return Err(mismatch(format!(
                "batchnorm vectors have lengths {}, {}, {}, {}",
                c,
                var.len(),
                gamma.len(),
                beta.len()
            )));
        }
        let all = mean.iter().chain(&var).chain(&gamma).chain(&beta);
        if !eps.is_finite() || all.clone().any(|v| !v.is_finite()) {
            return Err(mismatch("batchnorm parameters must be finite"));
        }
        if eps < 0.0 || var.iter().any(|&v| v < 0.0) {
            return Err(mismatch("batchnorm variance and epsilon must be non-negative"));
        }
        let std = var.iter().map(|&v| (v + eps).sqrt()).collect();
        Ok(BnParams {
            mean,
            var,
            gamma,
            beta,
            eps,
            std,
        })
    }

    pub fn with_default_eps(mean: Vec<f32>, var: Vec<f32>, gamma: Vec<f32>, beta: Vec<f32>) -> Result<Self> {
        Self::new(mean, var, gamma, beta, DEFAULT_EPS)
    }

    /// `gamma = 1, beta = 0, mean = 0, var = 1, eps = 0` over `channels`.
    pub fn identity(channels: usize) -> Self {
        Self::new(
            vec![0.0; channels],
            vec![1.0; channels],
            vec![1.0; channels],
            vec![0.0; channels],
            0.0,
        )
        .expect("valid identity parameters")
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn var(&self) -> &[f32] {
        &self.var
    }

    pub fn gamma(&self) -> &[f32] {
        &self.gamma
    }

    pub fn beta(&self) -> &[f32] {
        &self.beta
    }

    pub fn eps(&self) -> f32 {
        self.eps
    }

    /// Bytes of the four parameter vectors plus epsilon as stored on disk.
    pub fn byte_len(&self) -> usize {
        (4 * self.channels() + 1) * 4
    }

    #[inline(always)]
    pub fn apply(&self, c: usize, x: f32) -> f32 {
        self.gamma[c] * (x - self.mean[c]) / self.std[c] + self.beta[c]
    }

    fn threshold(&self, c: usize) -> Threshold {
        Threshold::search(|x| binarize(self.apply(c, x as f32)))
    }
}

/// When a fused channel emits +1 for an accumulator `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Threshold {
    Always(bool),
    AtLeast(i32),
    AtMost(i32),
}

impl Threshold {
    #[inline(always)]
    pub fn bit(&self, x: i32) -> bool {
        match *self {
            Threshold::Always(b) => b,
            Threshold::AtLeast(t) => x >= t,
            Threshold::AtMost(t) => x <= t,
        }
    }

    /// Bisects a monotone predicate over the `i32` range.
    fn search(f: impl Fn(i32) -> bool) -> Threshold {
        let (lo, hi) = (f(i32::MIN), f(i32::MAX));
        if lo == hi {
            return Threshold::Always(lo);
        }
        // invariant: f(l) == lo, f(h) == hi
        let (mut l, mut h) = (i32::MIN as i64, i32::MAX as i64);
        while h - l > 1 {
            let mid = l + (h - l) / 2;
            if f(mid as i32) == lo {
                l = mid;
            } else {
                h = mid;
            }
        }
        if hi {
            Threshold::AtLeast(h as i32)
        } else {
            Threshold::AtMost(l as i32)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    params: BnParams,
    thresholds: Vec<Threshold>,
    backend: Backend,
}

impl BatchNormLayer {
    pub fn new(params: BnParams, backend: Backend) -> Self {
        let thresholds = (0..params.channels()).map(|c| params.threshold(c)).collect();
        BatchNormLayer {
            params,
            thresholds,
            backend,
        }
    }

    pub fn params(&self) -> &BnParams {
        &self.params
    }

    pub fn thresholds(&self) -> &[Threshold] {
        &self.thresholds
    }

    pub fn channels(&self) -> usize {
        self.params.channels()
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn to_backend(&self, backend: Backend) -> Self {
        BatchNormLayer {
            backend,
            ..self.clone()
        }
    }

    fn check(&self, len: usize, channels: usize) -> Result<()> {
        if channels != self.channels() || !len.is_multiple_of(self.channels().max(1)) {
            return Err(mismatch(format!(
                "batchnorm over {} channels given {} channels",
                self.channels(),
                channels
            )));
        }
        Ok(())
    }

    /// `src` is laid out with `channels()` interleaved channels.
    pub fn forward_int_into(&self, src: &[i32], dst: &mut [f32]) {
        let c = self.channels();
        for (i, (d, &x)) in dst.iter_mut().zip(src).enumerate() {
            *d = self.params.apply(i % c, x as f32);
        }
    }

    pub fn forward_float_into(&self, src: &[f32], dst: &mut [f32]) {
        let c = self.channels();
        for (i, (d, &x)) in dst.iter_mut().zip(src).enumerate() {
            *d = self.params.apply(i % c, x);
        }
    }

    /// Batchnorm then sign then pack, as one comparison per element.
    pub fn fused_sign_into(&self, layout: &PackedLayout, src: &[i32], out: &mut [u64]) {
        let c = self.channels();
        pack_indexed_into(layout, src, |i, x| self.thresholds[i % c].bit(x), out);
    }
}

pub fn batchnorm_forward(layer: &BatchNormLayer, x: &FloatTensor) -> Result<FloatTensor> {
    layer.check(x.data().len(), x.dims().channels)?;
    let mut out = vec![0.0; x.data().len()];
    layer.forward_float_into(x.data(), &mut out);
    FloatTensor::new(x.dims(), out)
}

pub fn fused_bn_sign(layer: &BatchNormLayer, x: &IntTensor) -> Result<PackedTensor> {
    layer.check(x.data().len(), x.dims().channels)?;
    let layout = PackedLayout::for_dims(x.dims());
    let mut words = vec![0; layout.word_len()];
    layer.fused_sign_into(&layout, x.data(), &mut words);
    PackedTensor::from_words(x.dims(), words)
}

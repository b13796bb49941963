use std::borrow::Cow;

use super::Backend;
use crate::error::{mismatch, Dims, Result};
use crate::gemm::{bgemv_into, bitplane_gemv_into, sgemv_into, FloatMatrix, PackedMatrixA};
use crate::tensor::{
    bitplanes_into, flatten_packed_into, words_for, PackedLayout, PackedTensor, BYTE_PLANES,
};

/// `units x input_len` weight matrix of a dense layer.
#[derive(Debug, Clone, PartialEq)]
pub enum DenseWeights {
    Packed(PackedMatrixA),
    Reference(FloatMatrix),
}

impl DenseWeights {
    pub fn backend(&self) -> Backend {
        match self {
            DenseWeights::Packed(_) => Backend::Packed,
            DenseWeights::Reference(_) => Backend::Reference,
        }
    }

    pub fn units(&self) -> usize {
        match self {
            DenseWeights::Packed(w) => w.rows(),
            DenseWeights::Reference(w) => w.rows(),
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            DenseWeights::Packed(w) => w.inner(),
            DenseWeights::Reference(w) => w.cols(),
        }
    }

    /// Binarized view of the weights.
    pub fn packed(&self) -> Cow<'_, PackedMatrixA> {
        match self {
            DenseWeights::Packed(w) => Cow::Borrowed(w),
            DenseWeights::Reference(w) => Cow::Owned(PackedMatrixA::from_float(w)),
        }
    }

    /// Float view of the weights (`{-1, +1}` when unpacked).
    pub fn float(&self) -> Cow<'_, FloatMatrix> {
        match self {
            DenseWeights::Packed(w) => Cow::Owned(w.unpack()),
            DenseWeights::Reference(w) => Cow::Borrowed(w),
        }
    }

    pub fn to_backend(&self, backend: Backend) -> DenseWeights {
        match backend {
            Backend::Packed => DenseWeights::Packed(self.packed().into_owned()),
            Backend::Reference => DenseWeights::Reference(self.float().into_owned()),
        }
    }

    fn matvec_packed(&self, x: &[u64], out: &mut [i32]) -> Result<()> {
        match self {
            DenseWeights::Packed(w) => bgemv_into(w.lines(), x, out),
            DenseWeights::Reference(_) => Err(mismatch("packed matvec on reference weights")),
        }
    }

    fn matvec_float(&self, x: &[f32], out: &mut [f32]) -> Result<()> {
        match self {
            DenseWeights::Reference(w) => sgemv_into(w, x, out),
            DenseWeights::Packed(_) => Err(mismatch("float matvec on packed weights")),
        }
    }
}

/// Fully connected layer over a binary input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: DenseWeights,
}

impl DenseLayer {
    pub fn new(weights: DenseWeights) -> Self {
        DenseLayer { weights }
    }

    pub fn units(&self) -> usize {
        self.weights.units()
    }

    pub fn input_len(&self) -> usize {
        self.weights.input_len()
    }

    pub fn backend(&self) -> Backend {
        self.weights.backend()
    }

    pub fn weights(&self) -> &DenseWeights {
        &self.weights
    }

    pub fn to_backend(&self, backend: Backend) -> Self {
        DenseLayer::new(self.weights.to_backend(backend))
    }

    pub fn output_dims(&self) -> Dims {
        Dims::vector(self.units())
    }

    /// `out = W x` for a contiguous packed input of `input_len` bits.
    pub fn forward_packed_into(&self, x: &[u64], out: &mut [i32]) -> Result<()> {
        self.weights.matvec_packed(x, out)
    }

    /// `out = W x` in floats.
    pub fn forward_reference_into(&self, x: &[f32], out: &mut [f32]) -> Result<()> {
        self.weights.matvec_float(x, out)
    }
}

/// First dense layer over raw 8-bit inputs, evaluated one bit plane at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct Input8Layer {
    weights: DenseWeights,
}

impl Input8Layer {
    pub fn new(weights: DenseWeights) -> Self {
        Input8Layer { weights }
    }

    pub fn units(&self) -> usize {
        self.weights.units()
    }

    pub fn input_len(&self) -> usize {
        self.weights.input_len()
    }

    pub fn backend(&self) -> Backend {
        self.weights.backend()
    }

    pub fn weights(&self) -> &DenseWeights {
        &self.weights
    }

    pub fn to_backend(&self, backend: Backend) -> Self {
        Input8Layer::new(self.weights.to_backend(backend))
    }

    pub fn output_dims(&self) -> Dims {
        Dims::vector(self.units())
    }

    /// `planes` holds the 8 packed bit planes of the input, each `words_for(input_len)` words.
    pub fn forward_packed_into(&self, planes: &[u64], out: &mut [i32]) -> Result<()> {
        let wl = words_for(self.input_len());
        if planes.len() != BYTE_PLANES * wl {
            return Err(mismatch("bit planes do not match the input length"));
        }
        let w = match &self.weights {
            DenseWeights::Packed(w) => w,
            DenseWeights::Reference(_) => {
                return Err(mismatch("packed matvec on reference weights"))
            }
        };
        let mut refs: [&[u64]; BYTE_PLANES] = [&[]; BYTE_PLANES];
        for (i, r) in refs.iter_mut().enumerate() {
            *r = &planes[i * wl..(i + 1) * wl];
        }
        bitplane_gemv_into(&refs, w.lines(), out)
    }

    /// `x` holds the input bytes converted to floats.
    pub fn forward_reference_into(&self, x: &[f32], out: &mut [f32]) -> Result<()> {
        self.weights.matvec_float(x, out)
    }
}

/// Exact integer output of an input layer on a byte vector.
pub fn input8_forward(layer: &Input8Layer, bytes: &[u8]) -> Result<Vec<i32>> {
    let k = layer.input_len();
    if bytes.len() != k {
        return Err(mismatch(format!(
            "input layer expects {k} bytes, got {}",
            bytes.len()
        )));
    }
    let layout = PackedLayout::for_dims(Dims::new(1, k, 1));
    let mut planes = vec![0u64; BYTE_PLANES * layout.word_len()];
    bitplanes_into(&layout, bytes, &mut planes);
    let packed = Input8Layer::new(layer.weights.to_backend(Backend::Packed));
    let mut out = vec![0; layer.units()];
    packed.forward_packed_into(&planes, &mut out)?;
    Ok(out)
}

/// Exact integer output of a dense layer on a packed activation of any shape.
pub fn dense_forward(layer: &DenseLayer, a: &PackedTensor) -> Result<Vec<i32>> {
    if a.dims().len() != layer.input_len() {
        return Err(mismatch(format!(
            "dense layer expects {} inputs, got a {} tensor",
            layer.input_len(),
            a.dims()
        )));
    }
    let mut flat = vec![0u64; words_for(layer.input_len())];
    flatten_packed_into(&a.view(), &mut flat);
    let mut out = vec![0; layer.units()];
    match layer.weights() {
        DenseWeights::Packed(w) => bgemv_into(w.lines(), &flat, &mut out)?,
        other => bgemv_into(other.packed().lines(), &flat, &mut out)?,
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FloatTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn packed_layer(units: usize, k: usize, mut f: impl FnMut(usize, usize) -> bool) -> DenseLayer {
        DenseLayer::new(DenseWeights::Packed(PackedMatrixA::from_fn(units, k, &mut f)))
    }

    #[test]
    fn input8_zero_and_ones() {
        let layer = Input8Layer::new(DenseWeights::Packed(PackedMatrixA::from_fn(3, 100, |u, k| {
            (u + k) % 3 == 0
        })));
        assert_eq!(input8_forward(&layer, &[0; 100]).unwrap(), vec![0, 0, 0]);

        let ones = Input8Layer::new(DenseWeights::Packed(PackedMatrixA::from_fn(1, 70, |_, _| true)));
        assert_eq!(input8_forward(&ones, &[1; 70]).unwrap(), vec![70]);
        assert!(input8_forward(&ones, &[1; 69]).is_err());
    }

    #[test]
    fn input8_random_vs_integer_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w: Vec<Vec<bool>> = (0..16)
            .map(|_| (0..784).map(|_| rng.random()).collect())
            .collect();
        let layer = Input8Layer::new(DenseWeights::Packed(PackedMatrixA::from_fn(16, 784, |u, k| {
            w[u][k]
        })));
        for _ in 0..20 {
            let x: Vec<u8> = (0..784).map(|_| rng.random()).collect();
            let y = input8_forward(&layer, &x).unwrap();
            for u in 0..16 {
                let expected: i32 = x
                    .iter()
                    .zip(&w[u])
                    .map(|(&v, &s)| if s { v as i32 } else { -(v as i32) })
                    .sum();
                assert_eq!(y[u], expected);
            }
        }
    }

    #[test]
    fn dense_self_and_complement() {
        let dims = Dims::new(1, 1, 100);
        let a = PackedTensor::from_fn(dims, |_, _, l| l % 7 < 3);
        let layer = packed_layer(2, 100, |u, k| if u == 0 { k % 7 < 3 } else { k % 7 >= 3 });
        assert_eq!(dense_forward(&layer, &a).unwrap(), vec![100, -100]);
    }

    #[test]
    fn dense_random_vs_float_over_multiline_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // 3x3x10 activation: ragged lines that must be flattened
        let dims = Dims::new(3, 3, 10);
        let x = FloatTensor::from_fn(dims, |_, _, _| if rng.random() { 1.0 } else { -1.0 });
        let w = FloatMatrix::from_fn(7, 90, |_, _| if rng.random() { 1.0 } else { -1.0 });
        let layer = DenseLayer::new(DenseWeights::Packed(PackedMatrixA::from_float(&w)));
        let y = dense_forward(&layer, &PackedTensor::pack(&x)).unwrap();

        let reference = layer.to_backend(Backend::Reference);
        let mut yf = vec![0.0; 7];
        reference.forward_reference_into(x.data(), &mut yf).unwrap();
        for (a, b) in y.iter().zip(&yf) {
            assert_eq!(*a as f32, *b);
        }
    }

    #[test]
    fn backend_round_trip() {
        let layer = packed_layer(5, 130, |u, k| (u * k) % 5 == 1);
        let back = layer.to_backend(Backend::Reference).to_backend(Backend::Packed);
        assert_eq!(back, layer);
        assert_eq!(layer.to_backend(Backend::Packed), layer);
    }
}

//! Binary model files.
//!
//! All integers are little-endian. A file is the 8-byte magic, a `u32`
//! version and a `u32` record count, then one record per layer: a tag byte,
//! `u32` shape fields and the payload.
//!
//! | tag | layer     | shape fields                                          | payload                          |
//! |-----|-----------|-------------------------------------------------------|----------------------------------|
//! | 0   | input8    | input_len, units                                      | `units * ceil(input_len/64)` u64 |
//! | 1   | dense     | input_len, units                                      | `units * ceil(input_len/64)` u64 |
//! | 2   | conv      | in_h, in_w, in_c, kh, kw, stride, pad, filters, bytes | `filters * ceil(kh*kw*in_c/64)` u64 |
//! | 3   | maxpool   | ph, pw, stride                                        | none                             |
//! | 4   | batchnorm | channels                                              | f32 mean, var, gamma, beta; f32 eps |
//!
//! Weight lines are packed LSB-first with +1 as a set bit and zero padding.
//! Convolution filters are packed one filter per line over the receptive
//! field in `(ki, kj, c)` order. The `bytes` field is 1 when the convolution
//! reads raw 8-bit input and 0 for binary input. Sign layers are not stored:
//! one follows every batchnorm except the last.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Layer, Network};
use crate::error::{Dims, Error, Result};
use crate::gemm::{PackedMatrixA, PackedMatrixB};
use crate::layers::{
    Backend, BatchNormLayer, BnParams, ConvGeometry, ConvInput, ConvLayer, DenseLayer, DenseWeights,
    Input8Layer, MaxPoolLayer,
};
use crate::tensor::words_for;

pub const MAGIC: &[u8; 8] = b"ESPBDNN1";
pub const VERSION: u32 = 1;

const TAG_INPUT8: u8 = 0;
const TAG_DENSE: u8 = 1;
const TAG_CONV: u8 = 2;
const TAG_MAXPOOL: u8 = 3;
const TAG_BATCHNORM: u8 = 4;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn invalid(index: usize, reason: impl Into<String>) -> Error {
    Error::Validation {
        index,
        reason: reason.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format_err(format!("unexpected end of file at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn fields<const N: usize>(&mut self) -> Result<[usize; N]> {
        let mut out = [0; N];
        for f in &mut out {
            *f = self.u32()? as usize;
        }
        Ok(out)
    }

    fn u64s(&mut self, n: Option<usize>) -> Result<Vec<u64>> {
        let bytes = self.take(n.and_then(|n| n.checked_mul(8)).unwrap_or(usize::MAX))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.saturating_mul(4))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Weight matrix words, with padding bits reported against the record index.
fn matrix_words(r: &mut Reader<'_>, index: usize, lines: usize, bits: usize) -> Result<Vec<u64>> {
    let wpl = words_for(bits);
    let words = r.u64s(lines.checked_mul(wpl))?;
    if !bits.is_multiple_of(64) {
        let mask = !0u64 << (bits % 64);
        if words.chunks_exact(wpl).any(|line| line[wpl - 1] & mask != 0) {
            return Err(invalid(index, "nonzero padding bits in packed weights"));
        }
    }
    Ok(words)
}

fn to_validation(index: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::DimensionMismatch(reason) => invalid(index, reason),
        other => other,
    }
}

fn read_layer(r: &mut Reader<'_>, index: usize) -> Result<Layer> {
    let tag = r.u8()?;
    let err = to_validation(index);
    let layer = match tag {
        TAG_INPUT8 | TAG_DENSE => {
            let [input_len, units] = r.fields()?;
            let words = matrix_words(r, index, units, input_len)?;
            let w = DenseWeights::Packed(PackedMatrixA::from_words(units, input_len, words).map_err(&err)?);
            if tag == TAG_INPUT8 {
                Layer::Input8(Input8Layer::new(w))
            } else {
                Layer::Dense(DenseLayer::new(w))
            }
        }
        TAG_CONV => {
            let [h, w, c, kh, kw, stride, pad, filters, kind] = r.fields()?;
            let input = match kind {
                0 => ConvInput::Binary,
                1 => ConvInput::Bytes,
                k => return Err(invalid(index, format!("unknown convolution input kind {k}"))),
            };
            let patch = kh
                .checked_mul(kw)
                .and_then(|p| p.checked_mul(c))
                .ok_or_else(|| invalid(index, "kernel too large"))?;
            let words = matrix_words(r, index, filters, patch)?;
            let geometry = ConvGeometry {
                input: Dims::new(h, w, c),
                kernel_h: kh,
                kernel_w: kw,
                stride,
                pad,
                filters,
            };
            geometry.validate().map_err(&err)?;
            let elements = h.checked_mul(w).and_then(|n| n.checked_mul(c));
            let out = geometry.output_dims();
            let unrolled = (out.rows * out.cols).checked_mul(patch);
            if !matches!((elements, unrolled), (Some(a), Some(b)) if a <= 1 << 28 && b <= 1 << 28) {
                return Err(invalid(index, "convolution shape too large"));
            }
            let filters = PackedMatrixB::from_words(filters, patch, words).map_err(&err)?;
            Layer::Conv(ConvLayer::new(geometry, input, filters).map_err(&err)?)
        }
        TAG_MAXPOOL => {
            let [ph, pw, stride] = r.fields()?;
            Layer::MaxPool(MaxPoolLayer::new(ph, pw, stride))
        }
        TAG_BATCHNORM => {
            let [c] = r.fields()?;
            let mut v = [vec![], vec![], vec![], vec![]];
            for p in &mut v {
                *p = r.f32s(c)?;
            }
            let eps = r.f32s(1)?[0];
            let [mean, var, gamma, beta] = v;
            let params = BnParams::new(mean, var, gamma, beta, eps).map_err(&err)?;
            Layer::BatchNorm(BatchNormLayer::new(params, Backend::Packed))
        }
        t => return Err(format_err(format!("record {index}: unknown layer tag {t}"))),
    };
    Ok(layer)
}

/// Parses a model file; the result runs on the packed backend.
pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(MAGIC.as_slice()) {
        return Err(format_err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    // every record has at least a tag byte
    if count > bytes.len() {
        return Err(format_err(format!("{count} records cannot fit in {} bytes", bytes.len())));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        layers.push(read_layer(&mut r, i + 1)?);
    }
    if r.pos != bytes.len() {
        return Err(format_err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Network::stack(layers)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("shape field fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_words(out: &mut Vec<u8>, words: &[u64]) {
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a network; reference weights are binarized on the way.
pub fn to_bytes(net: &Network) -> Vec<u8> {
    let records = net.layers().iter().filter(|l| !matches!(l, Layer::Sign(_))).count();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, records);
    for layer in net.layers() {
        match layer {
            Layer::Input8(l) => {
                out.push(TAG_INPUT8);
                put_u32(&mut out, l.input_len());
                put_u32(&mut out, l.units());
                put_words(&mut out, l.weights().packed().words());
            }
            Layer::Dense(l) => {
                out.push(TAG_DENSE);
                put_u32(&mut out, l.input_len());
                put_u32(&mut out, l.units());
                put_words(&mut out, l.weights().packed().words());
            }
            Layer::Conv(l) => {
                let g = l.geometry();
                out.push(TAG_CONV);
                for v in [g.input.rows, g.input.cols, g.input.channels, g.kernel_h, g.kernel_w] {
                    put_u32(&mut out, v);
                }
                for v in [g.stride, g.pad, g.filters] {
                    put_u32(&mut out, v);
                }
                put_u32(&mut out, (l.input_kind() == ConvInput::Bytes) as usize);
                put_words(&mut out, l.filters().words());
            }
            Layer::MaxPool(l) => {
                out.push(TAG_MAXPOOL);
                for v in [l.window_h, l.window_w, l.stride] {
                    put_u32(&mut out, v);
                }
            }
            Layer::BatchNorm(l) => {
                let p = l.params();
                out.push(TAG_BATCHNORM);
                put_u32(&mut out, p.channels());
                for v in [p.mean(), p.var(), p.gamma(), p.beta()] {
                    put_f32s(&mut out, v);
                }
                put_f32s(&mut out, &[p.eps()]);
            }
            Layer::Sign(_) => {}
        }
    }
    out
}

impl Network {
    pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
        from_bytes(bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        to_bytes(self)
    }

    /// Reads a model file; the result runs on the packed backend.
    pub fn load(path: impl AsRef<Path>) -> Result<Network> {
        from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }
}

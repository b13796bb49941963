//! Shape checking and the allocation-free execution of a layer stack.
//!
//! Activations flow between layers in one of four representations. Each
//! layer flavor consumes a fixed one, and a conversion stage is inserted
//! wherever a producer and its consumer disagree (only in hybrid networks).
//! Every representation has two equally sized slots in the workspace; a
//! stage reads one slot and writes the other, or slot 0 of a different
//! representation.

use std::sync::Mutex;

use super::Layer;
use crate::error::{mismatch, Dims, Error, Result};
use crate::gemm::MAX_BYTE_DOT_LEN;
use crate::layers::{Backend, ConvInput};
use crate::tensor::{
    binarize, bitplanes_into, flatten_packed_into, pack_into, unpack_into, words_for,
    PackedLayout, PackedView, BYTE_PLANES,
};

/// Upper bound on the elements of any activation, to reject absurd shapes early.
const MAX_ACTIVATION: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Repr {
    /// The caller's input bytes.
    Bytes,
    /// Integer accumulators.
    Int,
    Float,
    /// Packed binary activations.
    Bits,
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Convert { from: Repr, to: Repr, dims: Dims },
    Layer { index: usize, input: Repr, output: Repr, dims: Dims },
    /// Batchnorm at `index` and the sign after it, as threshold comparisons.
    FusedBnSign { index: usize, dims: Dims },
}

/// Buffer sizes a network needs for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WorkspaceSpec {
    pub ints: usize,
    pub floats: usize,
    pub words: usize,
    pub unrolled: usize,
    pub planes: usize,
    pub columns: usize,
    pub sgemm: usize,
}

impl WorkspaceSpec {
    /// Total bytes of a workspace built from this spec.
    pub fn byte_len(&self) -> usize {
        2 * (self.ints * 4 + self.floats * 4 + self.words * 8)
            + (self.unrolled + self.planes) * 8
            + (self.columns + self.sgemm) * 4
    }

    fn covers(&self, other: &WorkspaceSpec) -> bool {
        self.ints >= other.ints
            && self.floats >= other.floats
            && self.words >= other.words
            && self.unrolled >= other.unrolled
            && self.planes >= other.planes
            && self.columns >= other.columns
            && self.sgemm >= other.sgemm
    }

    fn grow(&mut self, repr: Repr, dims: Dims) {
        match repr {
            Repr::Bytes => {}
            Repr::Int => self.ints = self.ints.max(dims.len()),
            Repr::Float => self.floats = self.floats.max(dims.len()),
            Repr::Bits => self.words = self.words.max(PackedLayout::for_dims(dims).word_len()),
        }
    }
}

/// Preallocated scratch memory for forward passes.
#[derive(Debug, Clone)]
pub struct Workspace {
    spec: WorkspaceSpec,
    ints: [Vec<i32>; 2],
    floats: [Vec<f32>; 2],
    words: [Vec<u64>; 2],
    unrolled: Vec<u64>,
    planes: Vec<u64>,
    columns: Vec<f32>,
    sgemm: Vec<f32>,
}

impl Workspace {
    pub fn new(spec: &WorkspaceSpec) -> Self {
        Workspace {
            spec: *spec,
            ints: [vec![0; spec.ints], vec![0; spec.ints]],
            floats: [vec![0.0; spec.floats], vec![0.0; spec.floats]],
            words: [vec![0; spec.words], vec![0; spec.words]],
            unrolled: vec![0; spec.unrolled],
            planes: vec![0; spec.planes],
            columns: vec![0.0; spec.columns],
            sgemm: vec![0.0; spec.sgemm],
        }
    }

    pub fn spec(&self) -> &WorkspaceSpec {
        &self.spec
    }

    /// Address and capacity of every buffer; unchanged as long as nothing reallocates.
    pub fn fingerprint(&self) -> Vec<(usize, usize)> {
        fn entry<T>(v: &Vec<T>) -> (usize, usize) {
            (v.as_ptr() as usize, v.capacity())
        }
        let mut out = Vec::with_capacity(10);
        out.extend(self.ints.iter().map(entry));
        out.extend(self.floats.iter().map(entry));
        out.extend(self.words.iter().map(entry));
        out.extend([
            entry(&self.unrolled),
            entry(&self.planes),
            entry(&self.columns),
            entry(&self.sgemm),
        ]);
        out
    }
}

/// Workspaces handed out to concurrent callers and recycled afterwards.
#[derive(Debug)]
pub struct WorkspacePool {
    spec: WorkspaceSpec,
    free: Mutex<Vec<Workspace>>,
}

impl WorkspacePool {
    pub fn new(spec: WorkspaceSpec) -> Self {
        WorkspacePool {
            spec,
            free: Mutex::new(Vec::new()),
        }
    }

    /// Runs `f` with a workspace taken from the pool, creating one if none is free.
    pub fn with<R>(&self, f: impl FnOnce(&mut Workspace) -> R) -> R {
        let taken = self.free.lock().unwrap_or_else(|e| e.into_inner()).pop();
        let mut ws = taken.unwrap_or_else(|| Workspace::new(&self.spec));
        let out = f(&mut ws);
        self.free.lock().unwrap_or_else(|e| e.into_inner()).push(ws);
        out
    }

    pub fn idle(&self) -> usize {
        self.free.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

#[derive(Debug, Clone)]
pub(super) struct Plan {
    stages: Vec<Stage>,
    pub(super) spec: WorkspaceSpec,
    pub(super) input_dims: Dims,
    pub(super) input_len: usize,
    pub(super) output_len: usize,
    pub(super) shapes: Vec<Dims>,
}

fn invalid(index: usize, reason: impl Into<String>) -> Error {
    Error::Validation {
        index,
        reason: reason.into(),
    }
}

fn at(index: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::DimensionMismatch(reason) => invalid(index, reason),
        other => other,
    }
}

impl Plan {
    pub(super) fn build(layers: &[Layer]) -> Result<Plan> {
        if layers.is_empty() {
            return Err(invalid(1, "a network needs at least one layer"));
        }
        let input_dims = match &layers[0] {
            Layer::Input8(l) => Dims::new(1, l.input_len(), 1),
            Layer::Conv(l) if l.input_kind() == ConvInput::Bytes => l.geometry().input,
            other => {
                return Err(invalid(
                    1,
                    format!("a network must start with input8 or conv8, not {}", other.name()),
                ))
            }
        };
        let first_k = match &layers[0] {
            Layer::Conv(l) => l.geometry().patch_len(),
            _ => input_dims.len(),
        };
        if first_k > MAX_BYTE_DOT_LEN {
            return Err(invalid(1, format!("{first_k} byte inputs per output exceed {MAX_BYTE_DOT_LEN}")));
        }
        let mut stages = Vec::with_capacity(layers.len() + 4);
        let mut spec = WorkspaceSpec::default();
        let mut shapes = Vec::with_capacity(layers.len());
        let mut repr = Repr::Bytes;
        let mut dims = input_dims;
        let mut skip_sign = false;

        for (i, layer) in layers.iter().enumerate() {
            let k = i + 1;
            let prev = i.checked_sub(1).map(|p| &layers[p]);
            let after_sign = matches!(prev, Some(Layer::Sign(_)));
            let packed = layer.backend() == Some(Backend::Packed);
            let (input, output, out_dims) = match layer {
                Layer::Input8(l) => {
                    if i != 0 {
                        return Err(invalid(k, "input8 can only be the first layer"));
                    }
                    if l.units() == 0 || l.input_len() == 0 {
                        return Err(invalid(k, "input8 needs inputs and units"));
                    }
                    if packed {
                        spec.planes = spec.planes.max(BYTE_PLANES * words_for(l.input_len()));
                        (Repr::Bytes, Repr::Int, l.output_dims())
                    } else {
                        (Repr::Float, Repr::Float, l.output_dims())
                    }
                }
                Layer::Dense(l) => {
                    if !after_sign {
                        return Err(invalid(k, "dense must follow a sign"));
                    }
                    if l.units() == 0 {
                        return Err(invalid(k, "dense needs units"));
                    }
                    if l.input_len() != dims.len() {
                        return Err(invalid(
                            k,
                            format!("dense expects {} inputs, previous layer yields {}", l.input_len(), dims),
                        ));
                    }
                    let input = if packed { Repr::Bits } else { Repr::Float };
                    let output = if packed { Repr::Int } else { Repr::Float };
                    (input, output, l.output_dims())
                }
                Layer::Conv(l) => {
                    let g = l.geometry();
                    match l.input_kind() {
                        ConvInput::Bytes if i != 0 => {
                            return Err(invalid(k, "byte convolution can only be the first layer"))
                        }
                        ConvInput::Binary if !after_sign => {
                            return Err(invalid(k, "convolution must follow a sign"))
                        }
                        _ => {}
                    }
                    if g.input != dims {
                        return Err(invalid(
                            k,
                            format!("convolution expects a {} input, previous layer yields {}", g.input, dims),
                        ));
                    }
                    check_size(k, g.positions().checked_mul(g.patch_len()))?;
                    let out = g.output_dims();
                    check_size(k, Some(out.len()))?;
                    if packed {
                        spec.unrolled = spec.unrolled.max(l.unroll_scratch_words());
                        let input = match l.input_kind() {
                            ConvInput::Binary => Repr::Bits,
                            ConvInput::Bytes => Repr::Bytes,
                        };
                        (input, Repr::Int, out)
                    } else {
                        let (cols, scratch) = l.reference_scratch_len();
                        spec.columns = spec.columns.max(cols);
                        spec.sgemm = spec.sgemm.max(scratch);
                        (Repr::Float, Repr::Float, out)
                    }
                }
                Layer::MaxPool(l) => {
                    if !matches!(prev, Some(Layer::Conv(_) | Layer::MaxPool(_))) {
                        return Err(invalid(k, "pooling must follow a convolution or pooling"));
                    }
                    let out = l.output_dims(dims).map_err(at(k))?;
                    (repr, repr, out)
                }
                Layer::BatchNorm(l) => {
                    if !matches!(
                        prev,
                        Some(Layer::Conv(_) | Layer::MaxPool(_) | Layer::Dense(_) | Layer::Input8(_))
                    ) {
                        return Err(invalid(k, "batchnorm must follow a linear layer or pooling"));
                    }
                    if l.channels() != dims.channels {
                        return Err(invalid(
                            k,
                            format!("batchnorm over {} channels given a {} input", l.channels(), dims),
                        ));
                    }
                    match layers.get(k) {
                        None => {}
                        Some(Layer::Sign(s)) => {
                            if packed && s.backend == Backend::Packed && repr == Repr::Int {
                                stages.push(Stage::FusedBnSign { index: i, dims });
                                spec.grow(Repr::Bits, dims);
                                shapes.push(dims);
                                repr = Repr::Bits;
                                skip_sign = true;
                                continue;
                            }
                        }
                        Some(_) => return Err(invalid(k + 1, "every batchnorm but the last must be followed by a sign")),
                    }
                    (repr, Repr::Float, dims)
                }
                Layer::Sign(s) => {
                    if !matches!(prev, Some(Layer::BatchNorm(_))) {
                        return Err(invalid(k, "sign must follow a batchnorm"));
                    }
                    if k == layers.len() {
                        return Err(invalid(k, "the last layer must be a batchnorm"));
                    }
                    if skip_sign {
                        skip_sign = false;
                        shapes.push(dims);
                        continue;
                    }
                    let output = match s.backend {
                        Backend::Packed => Repr::Bits,
                        Backend::Reference => Repr::Float,
                    };
                    (Repr::Float, output, dims)
                }
            };
            check_size(k, Some(out_dims.len()))?;
            if input != repr {
                stages.push(Stage::Convert {
                    from: repr,
                    to: input,
                    dims,
                });
            }
            spec.grow(input, dims);
            spec.grow(output, out_dims);
            stages.push(Stage::Layer {
                index: i,
                input,
                output,
                dims,
            });
            shapes.push(out_dims);
            repr = output;
            dims = out_dims;
        }
        if !matches!(layers.last(), Some(Layer::BatchNorm(_))) {
            return Err(invalid(layers.len(), "the last layer must be a batchnorm"));
        }
        Ok(Plan {
            stages,
            spec,
            input_dims,
            input_len: input_dims.len(),
            output_len: dims.len(),
            shapes,
        })
    }

    pub(super) fn run<'w>(&self, layers: &[Layer], ws: &'w mut Workspace, input: &[u8]) -> Result<&'w [f32]> {
        if input.len() != self.input_len {
            return Err(mismatch(format!(
                "network expects {} input bytes, got {}",
                self.input_len,
                input.len()
            )));
        }
        if !ws.spec.covers(&self.spec) {
            return Err(mismatch("workspace is too small for this network"));
        }
        let mut slot = 0;
        for stage in &self.stages {
            slot = match *stage {
                Stage::Convert { from, to, dims } => convert(ws, input, from, to, slot, dims),
                Stage::FusedBnSign { index, dims } => {
                    let Layer::BatchNorm(bn) = &layers[index] else {
                        unreachable!("fused stage on a batchnorm")
                    };
                    let layout = PackedLayout::for_dims(dims);
                    let out = &mut ws.words[0][..layout.word_len()];
                    bn.fused_sign_into(&layout, &ws.ints[slot][..dims.len()], out);
                    0
                }
                Stage::Layer {
                    index,
                    input: from,
                    output,
                    dims,
                } => run_layer(&layers[index], ws, input, from, output, slot, dims)?,
            };
        }
        Ok(&ws.floats[slot][..self.output_len])
    }
}

fn check_size(index: usize, len: Option<usize>) -> Result<()> {
    match len {
        Some(n) if n <= MAX_ACTIVATION => Ok(()),
        _ => Err(invalid(index, "layer shape too large")),
    }
}

/// Splits a slot pair into `(source, destination)`.
fn pair<T>(bufs: &mut [Vec<T>; 2], src: usize) -> (&[T], &mut [T]) {
    let [a, b] = bufs;
    if src == 0 {
        (a, b)
    } else {
        (b, a)
    }
}

fn convert(ws: &mut Workspace, input: &[u8], from: Repr, to: Repr, slot: usize, dims: Dims) -> usize {
    let n = dims.len();
    let layout = PackedLayout::for_dims(dims);
    match (from, to) {
        (Repr::Bytes, Repr::Float) => {
            for (d, &b) in ws.floats[0][..n].iter_mut().zip(input) {
                *d = b as f32;
            }
        }
        (Repr::Int, Repr::Float) => {
            for (d, &v) in ws.floats[0][..n].iter_mut().zip(&ws.ints[slot][..n]) {
                *d = v as f32;
            }
        }
        (Repr::Float, Repr::Bits) => pack_into(
            &layout,
            &ws.floats[slot][..n],
            binarize,
            &mut ws.words[0][..layout.word_len()],
        ),
        (Repr::Bits, Repr::Float) => unpack_into(
            &layout,
            &ws.words[slot][..layout.word_len()],
            &mut ws.floats[0][..n],
        ),
        (from, to) => unreachable!("no conversion from {from:?} to {to:?}"),
    }
    0
}

fn run_layer(
    layer: &Layer,
    ws: &mut Workspace,
    input: &[u8],
    from: Repr,
    to: Repr,
    slot: usize,
    dims: Dims,
) -> Result<usize> {
    let n = dims.len();
    let next = slot ^ 1;
    match (layer, from) {
        (Layer::Input8(l), Repr::Bytes) => {
            let layout = PackedLayout::for_dims(Dims::new(1, n, 1));
            let planes = &mut ws.planes[..BYTE_PLANES * layout.word_len()];
            bitplanes_into(&layout, input, planes);
            l.forward_packed_into(planes, &mut ws.ints[0][..l.units()])?;
            Ok(0)
        }
        (Layer::Input8(l), _) => {
            let (src, dst) = pair(&mut ws.floats, slot);
            l.forward_reference_into(&src[..n], &mut dst[..l.units()])?;
            Ok(next)
        }
        (Layer::Dense(l), Repr::Bits) => {
            let layout = PackedLayout::for_dims(dims);
            let (src, spare) = pair(&mut ws.words, slot);
            let src = &src[..layout.word_len()];
            let x = if layout.lines <= 1 || layout.bits_per_line.is_multiple_of(64) {
                &src[..words_for(n)]
            } else {
                let flat = &mut spare[..words_for(n)];
                flatten_packed_into(&PackedView { layout, words: src }, flat);
                &*flat
            };
            l.forward_packed_into(x, &mut ws.ints[0][..l.units()])?;
            Ok(0)
        }
        (Layer::Dense(l), _) => {
            let (src, dst) = pair(&mut ws.floats, slot);
            l.forward_reference_into(&src[..n], &mut dst[..l.units()])?;
            Ok(next)
        }
        (Layer::Conv(l), Repr::Bits) => {
            let layout = PackedLayout::for_dims(dims);
            let view = PackedView {
                layout,
                words: &ws.words[slot][..layout.word_len()],
            };
            let out = l.output_dims().len();
            l.forward_packed_into(&view, &mut ws.unrolled, &mut ws.ints[0][..out])?;
            Ok(0)
        }
        (Layer::Conv(l), Repr::Bytes) => {
            let out = l.output_dims().len();
            l.forward_bytes_packed_into(input, &mut ws.unrolled, &mut ws.ints[0][..out])?;
            Ok(0)
        }
        (Layer::Conv(l), _) => {
            let out = l.output_dims().len();
            let (src, dst) = pair(&mut ws.floats, slot);
            l.forward_reference_into(&src[..n], &mut ws.columns, &mut ws.sgemm, &mut dst[..out])?;
            Ok(next)
        }
        (Layer::MaxPool(l), Repr::Int) => {
            let out = l.output_dims(dims)?.len();
            let (src, dst) = pair(&mut ws.ints, slot);
            l.forward_into(dims, &src[..n], &mut dst[..out])?;
            Ok(next)
        }
        (Layer::MaxPool(l), _) => {
            let out = l.output_dims(dims)?.len();
            let (src, dst) = pair(&mut ws.floats, slot);
            l.forward_into(dims, &src[..n], &mut dst[..out])?;
            Ok(next)
        }
        (Layer::BatchNorm(l), Repr::Int) => {
            l.forward_int_into(&ws.ints[slot][..n], &mut ws.floats[0][..n]);
            Ok(0)
        }
        (Layer::BatchNorm(l), _) => {
            let (src, dst) = pair(&mut ws.floats, slot);
            l.forward_float_into(&src[..n], &mut dst[..n]);
            Ok(next)
        }
        (Layer::Sign(_), _) if to == Repr::Bits => {
            let layout = PackedLayout::for_dims(dims);
            pack_into(
                &layout,
                &ws.floats[slot][..n],
                binarize,
                &mut ws.words[0][..layout.word_len()],
            );
            Ok(0)
        }
        (Layer::Sign(_), _) => {
            let (src, dst) = pair(&mut ws.floats, slot);
            crate::layers::sign_into(&src[..n], &mut dst[..n]);
            Ok(next)
        }
    }
}

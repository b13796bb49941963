use crate::error::{mismatch, Dims, Result};
use crate::tensor::IntTensor;

/// Per-channel max pooling without padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaxPoolLayer {
    pub window_h: usize,
    pub window_w: usize,
    pub stride: usize,
}

impl MaxPoolLayer {
    pub fn new(window_h: usize, window_w: usize, stride: usize) -> Self {
        MaxPoolLayer {
            window_h,
            window_w,
            stride,
        }
    }

    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        if self.window_h == 0 || self.window_w == 0 || self.stride == 0 {
            return Err(mismatch("pooling window and stride must be positive"));
        }
        if self.window_h > input.rows || self.window_w > input.cols {
            return Err(mismatch(format!(
                "{}x{} pooling window larger than {} input",
                self.window_h, self.window_w, input
            )));
        }
        Ok(Dims::new(
            (input.rows - self.window_h) / self.stride + 1,
            (input.cols - self.window_w) / self.stride + 1,
            input.channels,
        ))
    }

    pub fn forward_into<T: Copy + PartialOrd>(
        &self,
        input: Dims,
        src: &[T],
        dst: &mut [T],
    ) -> Result<()> {
        let out = self.output_dims(input)?;
        if src.len() != input.len() || dst.len() != out.len() {
            return Err(mismatch("pooling buffers do not match their dims"));
        }
        let c = input.channels;
        for oy in 0..out.rows {
            for ox in 0..out.cols {
                let o = &mut dst[(oy * out.cols + ox) * c..][..c];
                let (y0, x0) = (oy * self.stride, ox * self.stride);
                o.copy_from_slice(&src[(y0 * input.cols + x0) * c..][..c]);
                for y in y0..y0 + self.window_h {
                    for x in x0..x0 + self.window_w {
                        let s = &src[(y * input.cols + x) * c..][..c];
                        for (m, &v) in o.iter_mut().zip(s) {
                            if v > *m {
                                *m = v;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn maxpool_forward(x: &IntTensor, window: (usize, usize), stride: usize) -> Result<IntTensor> {
    let layer = MaxPoolLayer::new(window.0, window.1, stride);
    let dims = layer.output_dims(x.dims())?;
    let mut out = vec![0; dims.len()];
    layer.forward_into(x.dims(), x.data(), &mut out)?;
    IntTensor::new(dims, out)
}

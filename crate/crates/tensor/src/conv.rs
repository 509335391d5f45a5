//! Forward and backward kernels for 2-D convolution and transposed
//! convolution, lowered to GEMM through im2col/col2im.
//!
//! Layouts follow the usual conventions: activations are `[N, C, H, W]`,
//! convolution weights are `[out, in, k, k]`, transposed-convolution weights
//! are `[in, out, k, k]`, biases are `[out]`.

use crate::element::{matmul, Element, Trans};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Geometry of one (possibly transposed) convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Extra rows/cols appended to a transposed convolution's output.
    /// Ignored by the forward convolution.
    pub output_padding: usize,
}

impl ConvSpec {
    pub const fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvSpec { in_channels, out_channels, kernel, stride, padding, output_padding: 0 }
    }

    pub const fn with_output_padding(mut self, output_padding: usize) -> Self {
        self.output_padding = output_padding;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(TensorError::Config(format!(
                "kernel and stride must be positive (kernel {}, stride {})",
                self.kernel, self.stride
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(TensorError::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// `floor((size + 2p - k) / s) + 1`.
    pub fn output_size(&self, size: usize) -> Result<usize> {
        self.validate()?;
        let padded = size + 2 * self.padding;
        if padded < self.kernel {
            return Err(TensorError::Config(format!(
                "spatial size {size} with padding {} is smaller than kernel {}",
                self.padding, self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// `(size - 1) * s - 2p + k + output_padding`.
    pub fn transposed_output_size(&self, size: usize) -> Result<usize> {
        self.validate()?;
        if self.output_padding >= self.stride {
            return Err(TensorError::Config(format!(
                "output_padding {} must be smaller than stride {}",
                self.output_padding, self.stride
            )));
        }
        if size == 0 {
            return Err(TensorError::Config("spatial size must be positive".into()));
        }
        let full = (size - 1) * self.stride + self.kernel + self.output_padding;
        if full <= 2 * self.padding {
            return Err(TensorError::Config(format!(
                "padding {} consumes the whole transposed output",
                self.padding
            )));
        }
        Ok(full - 2 * self.padding)
    }

    fn col_rows(&self, channels: usize) -> usize {
        channels * self.kernel * self.kernel
    }
}

/// Spatial geometry of an im2col lowering: an image of `channels x h x w`
/// sampled on an `oh x ow` grid.
#[derive(Debug, Clone, Copy)]
struct Patch {
    channels: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
    s: usize,
    p: usize,
}

/// Output columns `lo..hi` whose source `ox * s + kx - p` lies inside `0..w`.
fn valid_range(g: &Patch, kx: usize, w: usize, out: usize) -> (usize, usize) {
    let lo = if g.p > kx { (g.p - kx).div_ceil(g.s) } else { 0 };
    let hi = if w + g.p > kx { ((w + g.p - kx - 1) / g.s + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Writes the patch columns of `img` into `col`, a row-major matrix with
/// `ld` columns, starting at column `off`.
fn im2col<E: Element>(g: Patch, img: &[E], col: &mut [E], ld: usize, off: usize) {
    for c in 0..g.channels {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * ld + off..row * ld + off + g.oh * g.ow];
                let (lo, hi) = valid_range(&g, kx, g.w, g.ow);
                for oy in 0..g.oh {
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(E::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(E::zero());
                    line[hi..].fill(E::zero());
                    let first = lo * g.s + kx - g.p;
                    if g.s == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, &x) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.s)) {
                            *v = x;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of a column block back onto an image (adjoint of `im2col`).
fn col2im<E: Element>(g: Patch, col: &[E], img: &mut [E], ld: usize, off: usize) {
    for c in 0..g.channels {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * ld + off..row * ld + off + g.oh * g.ow];
                let (lo, hi) = valid_range(&g, kx, g.w, g.ow);
                if lo >= hi {
                    continue;
                }
                let first = lo * g.s + kx - g.p;
                for oy in 0..g.oh {
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.ow + lo..oy * g.ow + hi];
                    for (v, &x) in dst[first..].iter_mut().step_by(g.s).zip(line) {
                        *v = *v + x;
                    }
                }
            }
        }
    }
}

/// `[n, c, plane]` to `[c, n * plane]`.
fn channel_major<E: Element>(x: &[E], n: usize, c: usize, plane: usize) -> Vec<E> {
    let mut out = vec![E::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let src = &x[(i * c + ch) * plane..(i * c + ch + 1) * plane];
            out[ch * n * plane + i * plane..ch * n * plane + (i + 1) * plane].copy_from_slice(src);
        }
    }
    out
}

/// `[c, n * plane]` to `[n, c, plane]`.
fn batch_major<E: Element>(x: &[E], n: usize, c: usize, plane: usize) -> Vec<E> {
    let mut out = vec![E::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let src = &x[ch * n * plane + i * plane..ch * n * plane + (i + 1) * plane];
            out[(i * c + ch) * plane..(i * c + ch + 1) * plane].copy_from_slice(src);
        }
    }
    out
}

fn dims4<E: Element>(t: &Tensor<E>, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => Err(TensorError::Shape(format!("{what} must be [N, C, H, W], got {s:?}"))),
    }
}

fn expect_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(TensorError::Shape(format!("{what}: expected {expected}, got {got}")));
    }
    Ok(())
}

fn check_params<E: Element>(
    spec: &ConvSpec,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    transposed: bool,
) -> Result<()> {
    let (d0, d1) = if transposed {
        (spec.in_channels, spec.out_channels)
    } else {
        (spec.out_channels, spec.in_channels)
    };
    let want = [d0, d1, spec.kernel, spec.kernel];
    if weight.shape() != want {
        return Err(TensorError::Shape(format!(
            "weight shape: expected {want:?}, got {:?}",
            weight.shape()
        )));
    }
    if bias.shape() != [spec.out_channels] {
        return Err(TensorError::Shape(format!(
            "bias shape: expected [{}], got {:?}",
            spec.out_channels,
            bias.shape()
        )));
    }
    Ok(())
}

fn add_bias<E: Element>(out: &mut [E], bias: &[E], plane: usize) {
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[i % bias.len()];
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

/// Per-channel sums of a `[n, c, plane]` gradient.
fn bias_grad<E: Element>(gy: &[E], c: usize, plane: usize) -> Vec<E> {
    let mut db = vec![E::zero(); c];
    for (i, chunk) in gy.chunks(plane).enumerate() {
        let mut s = E::zero();
        for &v in chunk {
            s = s + v;
        }
        db[i % c] = db[i % c] + s;
    }
    db
}

// All four passes lower the whole batch into one column matrix with
// `n * plane` columns, so each layer is a single wide GEMM. Every output
// element still reduces over the same k in the same order whatever `n` is.

/// Cross-correlation with zero padding.
pub fn conv2d_forward<E: Element>(
    input: &Tensor<E>,
    spec: &ConvSpec,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>> {
    let [n, c, h, w] = dims4(input, "conv2d input")?;
    expect_dim("conv2d input channels", spec.in_channels, c)?;
    check_params(spec, weight, bias, false)?;
    let (oh, ow) = (spec.output_size(h)?, spec.output_size(w)?);
    let g = Patch { channels: c, h, w, oh, ow, k: spec.kernel, s: spec.stride, p: spec.padding };
    let (rows, plane) = (spec.col_rows(c), oh * ow);
    let ld = n * plane;
    let mut col = vec![E::zero(); rows * ld];
    for (i, x) in input.data().chunks(c * h * w).enumerate() {
        im2col(g, x, &mut col, ld, i * plane);
    }
    let mut y = vec![E::zero(); spec.out_channels * ld];
    matmul(Trans::No, Trans::No, spec.out_channels, rows, ld, weight.data(), &col, &mut y, false);
    let mut out = batch_major(&y, n, spec.out_channels, plane);
    add_bias(&mut out, bias.data(), plane);
    Tensor::new(&[n, spec.out_channels, oh, ow], out)
}

/// Gradients of [`conv2d_forward`]: `(d input, d weight, d bias)`.
/// The input gradient is skipped when `need_input` is false.
pub fn conv2d_backward<E: Element>(
    input: &Tensor<E>,
    spec: &ConvSpec,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    need_input: bool,
) -> Result<(Option<Tensor<E>>, Tensor<E>, Tensor<E>)> {
    let [n, c, h, w] = dims4(input, "conv2d input")?;
    let (oh, ow) = (spec.output_size(h)?, spec.output_size(w)?);
    let want = [n, spec.out_channels, oh, ow];
    if grad_out.shape() != want {
        return Err(TensorError::Shape(format!(
            "conv2d output gradient: expected {want:?}, got {:?}",
            grad_out.shape()
        )));
    }
    let g = Patch { channels: c, h, w, oh, ow, k: spec.kernel, s: spec.stride, p: spec.padding };
    let (rows, plane) = (spec.col_rows(c), oh * ow);
    let ld = n * plane;
    let mut col = vec![E::zero(); rows * ld];
    for (i, x) in input.data().chunks(c * h * w).enumerate() {
        im2col(g, x, &mut col, ld, i * plane);
    }
    let gy = channel_major(grad_out.data(), n, spec.out_channels, plane);
    let mut dw = Tensor::zeros(weight.shape());
    matmul(Trans::No, Trans::Yes, spec.out_channels, ld, rows, &gy, &col, dw.data_mut(), false);
    let db = Tensor::new(&[spec.out_channels], bias_grad(grad_out.data(), spec.out_channels, plane))?;
    let dx = if need_input {
        matmul(Trans::Yes, Trans::No, rows, spec.out_channels, ld, weight.data(), &gy, &mut col, false);
        let mut dx = Tensor::zeros(input.shape());
        for (i, img) in dx.data_mut().chunks_mut(c * h * w).enumerate() {
            col2im(g, &col, img, ld, i * plane);
        }
        Some(dx)
    } else {
        None
    };
    Ok((dx, dw, db))
}

/// Transposed convolution: the adjoint of [`conv2d_forward`] with the same
/// kernel, plus bias.
pub fn deconv2d_forward<E: Element>(
    input: &Tensor<E>,
    spec: &ConvSpec,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>> {
    let [n, c, h, w] = dims4(input, "deconv2d input")?;
    expect_dim("deconv2d input channels", spec.in_channels, c)?;
    check_params(spec, weight, bias, true)?;
    let (oh, ow) = (spec.transposed_output_size(h)?, spec.transposed_output_size(w)?);
    let co = spec.out_channels;
    let g = Patch { channels: co, h: oh, w: ow, oh: h, ow: w, k: spec.kernel, s: spec.stride, p: spec.padding };
    let (rows, plane) = (spec.col_rows(co), h * w);
    let ld = n * plane;
    let x = channel_major(input.data(), n, c, plane);
    let mut col = vec![E::zero(); rows * ld];
    matmul(Trans::Yes, Trans::No, rows, c, ld, weight.data(), &x, &mut col, false);
    let mut out = vec![E::zero(); n * co * oh * ow];
    for (i, y) in out.chunks_mut(co * oh * ow).enumerate() {
        col2im(g, &col, y, ld, i * plane);
    }
    add_bias(&mut out, bias.data(), oh * ow);
    Tensor::new(&[n, co, oh, ow], out)
}

/// Gradients of [`deconv2d_forward`]: `(d input, d weight, d bias)`.
pub fn deconv2d_backward<E: Element>(
    input: &Tensor<E>,
    spec: &ConvSpec,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    need_input: bool,
) -> Result<(Option<Tensor<E>>, Tensor<E>, Tensor<E>)> {
    let [n, c, h, w] = dims4(input, "deconv2d input")?;
    let (oh, ow) = (spec.transposed_output_size(h)?, spec.transposed_output_size(w)?);
    let co = spec.out_channels;
    let want = [n, co, oh, ow];
    if grad_out.shape() != want {
        return Err(TensorError::Shape(format!(
            "deconv2d output gradient: expected {want:?}, got {:?}",
            grad_out.shape()
        )));
    }
    let g = Patch { channels: co, h: oh, w: ow, oh: h, ow: w, k: spec.kernel, s: spec.stride, p: spec.padding };
    let (rows, plane) = (spec.col_rows(co), h * w);
    let ld = n * plane;
    let mut col = vec![E::zero(); rows * ld];
    for (i, gy) in grad_out.data().chunks(co * oh * ow).enumerate() {
        im2col(g, gy, &mut col, ld, i * plane);
    }
    let x = channel_major(input.data(), n, c, plane);
    let mut dw = Tensor::zeros(weight.shape());
    matmul(Trans::No, Trans::Yes, c, ld, rows, &x, &col, dw.data_mut(), false);
    let db = Tensor::new(&[co], bias_grad(grad_out.data(), co, oh * ow))?;
    let dx = if need_input {
        let mut dx = vec![E::zero(); c * ld];
        matmul(Trans::No, Trans::No, c, rows, ld, weight.data(), &col, &mut dx, false);
        Some(Tensor::new(input.shape(), batch_major(&dx, n, c, plane))?)
    } else {
        None
    };
    Ok((dx, dw, db))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_size_chain() {
        let specs = [
            ConvSpec::new(4, 32, 7, 2, 3),
            ConvSpec::new(32, 64, 5, 2, 2),
            ConvSpec::new(64, 128, 5, 2, 2),
            ConvSpec::new(128, 256, 3, 2, 1),
        ];
        let sizes: Vec<usize> = specs
            .iter()
            .scan(64, |s, spec| {
                *s = spec.output_size(*s).unwrap();
                Some(*s)
            })
            .collect();
        assert_eq!(sizes, [32, 16, 8, 4]);
        let back: Vec<usize> = specs
            .iter()
            .rev()
            .scan(4, |s, spec| {
                *s = spec.with_output_padding(1).transposed_output_size(*s).unwrap();
                Some(*s)
            })
            .collect();
        assert_eq!(back, [8, 16, 32, 64]);
    }

    #[test]
    fn output_padding_must_be_below_stride() {
        let spec = ConvSpec::new(1, 1, 3, 1, 1).with_output_padding(1);
        assert!(spec.transposed_output_size(4).is_err());
    }

    #[test]
    fn mismatched_channels_name_the_dimension() {
        let x = Tensor::<f32>::zeros(&[1, 3, 8, 8]);
        let spec = ConvSpec::new(4, 2, 3, 1, 1);
        let w = Tensor::zeros(&[2, 4, 3, 3]);
        let b = Tensor::zeros(&[2]);
        let err = conv2d_forward(&x, &spec, &w, &b).unwrap_err().to_string();
        assert!(err.contains("input channels"), "{err}");
        let err = conv2d_forward(&Tensor::zeros(&[1, 4, 8, 8]), &spec, &Tensor::zeros(&[2, 4, 5, 5]), &b)
            .unwrap_err()
            .to_string();
        assert!(err.contains("weight shape"), "{err}");
    }

    #[test]
    fn one_by_one_identity_kernel_is_identity() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 5, 4], |i| i as f32 * 0.1 - 2.0);
        let spec = ConvSpec::new(3, 3, 1, 1, 0);
        let w = Tensor::from_fn(&[3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = conv2d_forward(&x, &spec, &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x);
    }
}

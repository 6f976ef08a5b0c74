//! Dilated 2-D cross-correlation via im2col + GEMM.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Kernel geometry of a convolution: weight shape `(out_ch, in_ch, kh, kw)`
/// plus stride, zero padding and dilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Square `k×k` kernel, stride 1, no padding, no dilation.
    pub fn new(out_ch: usize, in_ch: usize, k: usize) -> Self {
        ConvSpec {
            out_ch,
            in_ch,
            kh: k,
            kw: k,
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }

    /// `k×k` kernel at the given dilation, padded so stride-1 output keeps the input size.
    pub fn same(out_ch: usize, in_ch: usize, k: usize, dilation: usize) -> Self {
        ConvSpec::new(out_ch, in_ch, k)
            .with_dilation(dilation)
            .with_padding(dilation * (k - 1) / 2)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_ch, self.in_ch, self.kh, self.kw)
    }

    /// Inner dimension of the im2col product.
    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    pub fn fan_in(&self) -> usize {
        self.patch_len()
    }

    fn out_len(&self, input: usize, k: usize, axis: &str) -> Result<usize> {
        if self.stride == 0 || self.dilation == 0 || k == 0 {
            return Err(Error::Invalid(format!(
                "conv2d: stride, dilation and kernel must be positive ({self:?})"
            )));
        }
        let span = self.dilation * (k - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return Err(Error::shape(
                "conv2d",
                format!("{axis} {input} (padded {padded}) is smaller than the dilated kernel span {span}"),
            ));
        }
        Ok((padded - span) / self.stride + 1)
    }

    /// Output shape for input `x`, validating channels and spatial extent.
    pub fn output_shape(&self, x: Shape) -> Result<Shape> {
        if x.c() != self.in_ch {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {} != kernel in_ch {}", x.c(), self.in_ch),
            ));
        }
        let oh = self.out_len(x.h(), self.kh, "height")?;
        let ow = self.out_len(x.w(), self.kw, "width")?;
        Ok(Shape::new(x.n(), self.out_ch, oh, ow))
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    fn check_params<T: Real>(&self, weight: &Tensor<T>, bias: Option<&[T]>) -> Result<()> {
        if weight.shape() != self.weight_shape() {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "weight shape {} != expected {}",
                    weight.shape(),
                    self.weight_shape()
                ),
            ));
        }
        if let Some(b) = bias {
            if b.len() != self.out_ch {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias length {} != out_ch {}", b.len(), self.out_ch),
                ));
            }
        }
        Ok(())
    }
}

/// Range of output columns `[lo, hi)` whose input column `o*stride + off` lands inside `[0, len)`.
fn valid_range(off: isize, stride: usize, out: usize, len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let hi = if (len as isize) <= off {
        0
    } else {
        ((len as isize - off + s - 1) / s) as usize
    };
    let lo = (lo as usize).min(out);
    (lo, hi.min(out).max(lo))
}

fn im2col<T: Real>(x: &[T], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, cols: &mut [T]) {
    let ohw = oh * ow;
    let pad = spec.padding as isize;
    for ci in 0..spec.in_ch {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..spec.kh {
            for kj in 0..spec.kw {
                let row = (ci * spec.kh + ki) * spec.kw + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                let xoff = (kj * spec.dilation) as isize - pad;
                let (lo, hi) = valid_range(xoff, spec.stride, ow, w);
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ki * spec.dilation) as isize - pad;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if hi == lo {
                        continue;
                    }
                    if spec.stride == 1 {
                        let s0 = (lo as isize + xoff) as usize;
                        drow[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate().take(hi).skip(lo) {
                            *d = src[(ox as isize * spec.stride as isize + xoff) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, dx: &mut [T]) {
    let ohw = oh * ow;
    let pad = spec.padding as isize;
    for ci in 0..spec.in_ch {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..spec.kh {
            for kj in 0..spec.kw {
                let row = (ci * spec.kh + ki) * spec.kw + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                let xoff = (kj * spec.dilation) as isize - pad;
                let (lo, hi) = valid_range(xoff, spec.stride, ow, w);
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ki * spec.dilation) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    if hi == lo {
                        continue;
                    }
                    if spec.stride == 1 {
                        let s0 = (lo as isize + xoff) as usize;
                        for (d, &s) in drow[s0..s0 + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                            *d = *d + s;
                        }
                    } else {
                        for ox in lo..hi {
                            let ix = (ox as isize * spec.stride as isize + xoff) as usize;
                            drow[ix] = drow[ix] + srow[ox];
                        }
                    }
                }
            }
        }
    }
}

fn columns<'a, T: Real>(x: &'a [T], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, buf: &'a mut Vec<T>) -> Cow<'a, [T]> {
    if spec.is_pointwise() {
        Cow::Borrowed(x)
    } else {
        buf.resize(spec.patch_len() * oh * ow, T::zero());
        im2col(x, h, w, spec, oh, ow, buf);
        Cow::Borrowed(&buf[..])
    }
}

/// Cross-correlation of `x` with `weight` (shape `spec.weight_shape()`), plus optional bias.
pub fn conv2d<T: Real>(x: &Tensor<T>, spec: &ConvSpec, weight: &Tensor<T>, bias: Option<&[T]>) -> Result<Tensor<T>> {
    spec.check_params(weight, bias)?;
    let xs = x.shape();
    let os = spec.output_shape(xs)?;
    let (oh, ow) = (os.h(), os.w());
    let ohw = oh * ow;
    let k = spec.patch_len();
    let mut out = Tensor::zeros(os);
    let mut buf = Vec::new();
    for n in 0..xs.n() {
        let cols = columns(x.sample(n), xs.h(), xs.w(), spec, oh, ow, &mut buf);
        let y = &mut out.data_mut()[n * os.sample()..(n + 1) * os.sample()];
        T::gemm(
            spec.out_ch,
            k,
            ohw,
            T::one(),
            weight.data(),
            (k, 1),
            &cols,
            (ohw, 1),
            T::zero(),
            y,
            (ohw, 1),
        );
        if let Some(b) = bias {
            for (row, &bv) in y.chunks_mut(ohw).zip(b) {
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`]: `(dx, dweight, dbias)`. `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    need_dx: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Vec<T>)> {
    let xs = x.shape();
    let os = spec.output_shape(xs)?;
    if dy.shape() != os {
        return Err(Error::shape(
            "conv2d_backward",
            format!("upstream gradient {} != output {}", dy.shape(), os),
        ));
    }
    let (oh, ow) = (os.h(), os.w());
    let ohw = oh * ow;
    let k = spec.patch_len();
    let mut dw = Tensor::zeros(spec.weight_shape());
    let mut db = vec![T::zero(); spec.out_ch];
    let mut dx = need_dx.then(|| Tensor::zeros(xs));
    let mut buf = Vec::new();
    let mut dcols = vec![T::zero(); if need_dx { k * ohw } else { 0 }];
    for n in 0..xs.n() {
        let g = dy.sample(n);
        for (o, row) in g.chunks(ohw).enumerate() {
            db[o] = db[o] + row.iter().copied().sum::<T>();
        }
        {
            let cols = columns(x.sample(n), xs.h(), xs.w(), spec, oh, ow, &mut buf);
            T::gemm(
                spec.out_ch,
                ohw,
                k,
                T::one(),
                g,
                (ohw, 1),
                &cols,
                (1, ohw),
                T::one(),
                dw.data_mut(),
                (k, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx.data_mut()[n * xs.sample()..(n + 1) * xs.sample()];
            if spec.is_pointwise() {
                T::gemm(k, spec.out_ch, ohw, T::one(), weight.data(), (1, k), g, (ohw, 1), T::zero(), dxn, (ohw, 1));
            } else {
                T::gemm(
                    k,
                    spec.out_ch,
                    ohw,
                    T::one(),
                    weight.data(),
                    (1, k),
                    g,
                    (ohw, 1),
                    T::zero(),
                    &mut dcols,
                    (ohw, 1),
                );
                col2im(&dcols, xs.h(), xs.w(), spec, oh, ow, dxn);
            }
        }
    }
    Ok((dx, dw, db))
}

//! 2×2 space-to-depth ("fold") and its inverse.
//!
//! `out[b, 4c + 2dy + dx, i, j] = in[b, c, 2i + dy, 2j + dx]`, so each input channel
//! expands to four consecutive output channels in top-left, top-right, bottom-left,
//! bottom-right order.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

pub fn fold2x2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if !s.h().is_multiple_of(2) || !s.w().is_multiple_of(2) {
        return Err(Error::shape(
            "fold2x2",
            format!("spatial size {}x{} must be even", s.h(), s.w()),
        ));
    }
    let (h2, w2) = (s.h() / 2, s.w() / 2);
    let os = Shape::new(s.n(), 4 * s.c(), h2, w2);
    let mut out = Tensor::zeros(os);
    let src = x.data();
    let dst = out.data_mut();
    for n in 0..s.n() {
        for c in 0..s.c() {
            for dy in 0..2 {
                for dx in 0..2 {
                    let oc = 4 * c + 2 * dy + dx;
                    for i in 0..h2 {
                        let row = s.offset(n, c, 2 * i + dy, 0);
                        let orow = os.offset(n, oc, i, 0);
                        for j in 0..w2 {
                            dst[orow + j] = src[row + 2 * j + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn unfold2x2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if !s.c().is_multiple_of(4) {
        return Err(Error::shape(
            "unfold2x2",
            format!("channel count {} is not divisible by 4", s.c()),
        ));
    }
    let c4 = s.c() / 4;
    let os = Shape::new(s.n(), c4, 2 * s.h(), 2 * s.w());
    let mut out = Tensor::zeros(os);
    let src = x.data();
    let dst = out.data_mut();
    for n in 0..s.n() {
        for c in 0..c4 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let ic = 4 * c + 2 * dy + dx;
                    for i in 0..s.h() {
                        let row = s.offset(n, ic, i, 0);
                        let orow = os.offset(n, c, 2 * i + dy, 0);
                        for j in 0..s.w() {
                            dst[orow + 2 * j + dx] = src[row + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

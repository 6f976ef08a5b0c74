//! Bilinear resampling with half-pixel centers (no corner alignment).

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Per output coordinate: the two source taps and the weight of the second one.
#[derive(Debug, Clone, Copy)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    frac: T,
}

fn axis_taps<T: Real>(input: usize, output: usize) -> Vec<Tap<T>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            Tap {
                i0,
                i1,
                frac: T::lit(frac),
            }
        })
        .collect()
}

/// Resamples every plane of `x` to `th × tw`.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, th: usize, tw: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if th == 0 || tw == 0 || s.plane() == 0 {
        return Err(Error::shape(
            "bilinear",
            format!("cannot resample {} to {th}x{tw}", s),
        ));
    }
    let ty = axis_taps::<T>(s.h(), th);
    let tx = axis_taps::<T>(s.w(), tw);
    let os = Shape::new(s.n(), s.c(), th, tw);
    let mut out = Tensor::zeros(os);
    let one = T::one();
    for (plane, dst) in x.data().chunks(s.plane()).zip(out.data_mut().chunks_mut(th * tw)) {
        for (oy, ry) in ty.iter().enumerate() {
            let r0 = &plane[ry.i0 * s.w()..(ry.i0 + 1) * s.w()];
            let r1 = &plane[ry.i1 * s.w()..(ry.i1 + 1) * s.w()];
            for (ox, rx) in tx.iter().enumerate() {
                let top = (one - rx.frac) * r0[rx.i0] + rx.frac * r0[rx.i1];
                let bot = (one - rx.frac) * r1[rx.i0] + rx.frac * r1[rx.i1];
                dst[oy * tw + ox] = (one - ry.frac) * top + ry.frac * bot;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`resize_bilinear`]: scatters `dy` back onto an input of shape `input`.
pub fn resize_bilinear_backward<T: Real>(dy: &Tensor<T>, input: Shape) -> Tensor<T> {
    let os = dy.shape();
    let ty = axis_taps::<T>(input.h(), os.h());
    let tx = axis_taps::<T>(input.w(), os.w());
    let mut dx = Tensor::zeros(input);
    let one = T::one();
    let w = input.w();
    for (g, dst) in dy.data().chunks(os.plane()).zip(dx.data_mut().chunks_mut(input.plane())) {
        for (oy, ry) in ty.iter().enumerate() {
            for (ox, rx) in tx.iter().enumerate() {
                let v = g[oy * os.w() + ox];
                let top = (one - ry.frac) * v;
                let bot = ry.frac * v;
                dst[ry.i0 * w + rx.i0] = dst[ry.i0 * w + rx.i0] + (one - rx.frac) * top;
                dst[ry.i0 * w + rx.i1] = dst[ry.i0 * w + rx.i1] + rx.frac * top;
                dst[ry.i1 * w + rx.i0] = dst[ry.i1 * w + rx.i0] + (one - rx.frac) * bot;
                dst[ry.i1 * w + rx.i1] = dst[ry.i1 * w + rx.i1] + rx.frac * bot;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::<f32>::from_fn(Shape::new(1, 2, 5, 3), |_, c, h, w| (c * 100 + h * 7 + w) as f32 * 0.1);
        assert_eq!(resize_bilinear(&x, 5, 3).unwrap(), x);
    }

    #[test]
    fn checkerboard_down_to_half() {
        // Half-pixel centers put every 2x output sample between four source pixels.
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 4, 4), |_, _, h, w| ((h + w) % 2) as f64);
        let y = resize_bilinear(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn upsample_2x_taps() {
        // in 2 -> out 4: sources at -0.25 (clamped 0), 0.25, 0.75, 1.25 (clamped tap)
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        let y = resize_bilinear(&x, 1, 4).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn backward_is_adjoint() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 3, 2), |_, _, h, w| (h * 2 + w) as f64 + 0.5);
        let g = Tensor::<f64>::from_fn(Shape::new(1, 1, 7, 5), |_, _, h, w| ((h * 5 + w) % 3) as f64 - 1.0);
        let y = resize_bilinear(&x, 7, 5).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let dx = resize_bilinear_backward(&g, x.shape());
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

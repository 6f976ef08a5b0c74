//! Forward/backward kernels on plain tensors. [`crate::autodiff::Tape`] records
//! these into a differentiable graph; tests and oracles call them directly.

mod conv;
mod fold;
mod pool;
mod resample;

pub use conv::{conv2d, conv2d_backward, ConvSpec};
pub use fold::{fold2x2, unfold2x2};
pub use pool::{global_avg_pool, max_pool2x2};
pub use resample::{resize_bilinear, resize_bilinear_backward};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Probability clamp used by the cross-entropy loss.
pub const BCE_CLAMP: f64 = 1e-7;

/// Logistic function, kept strictly inside `(0, 1)` even where the exact value rounds to 0 or 1.
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    let one = T::one();
    let y = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    let hi = one - T::epsilon() / T::lit(2.0);
    y.max(T::min_positive_value()).min(hi)
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Checks that `spec` is a stride-1, size-preserving kernel suitable for the folded domain.
fn check_folded_spec(spec: &ConvSpec) -> Result<()> {
    if spec.stride != 1 || spec.kh != spec.kw || spec.kh.is_multiple_of(2) {
        return Err(Error::Invalid(format!(
            "folded_atrous_conv needs a stride-1 odd square kernel, got {spec:?}"
        )));
    }
    if spec.padding != spec.dilation * (spec.kh - 1) / 2 {
        return Err(Error::Invalid(format!(
            "folded_atrous_conv padding {} must be dilation*(K-1)/2 = {}",
            spec.padding,
            spec.dilation * (spec.kh - 1) / 2
        )));
    }
    if !spec.out_ch.is_multiple_of(4) {
        return Err(Error::shape(
            "folded_atrous_conv",
            format!("out_ch {} is not divisible by 4", spec.out_ch),
        ));
    }
    Ok(())
}

/// Fold 2×2 → atrous conv (in the folded domain, `spec.in_ch = 4·C`) → unfold.
/// Output spatial size equals the input's; channels are `spec.out_ch / 4`.
pub fn folded_atrous_conv<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    check_folded_spec(spec)?;
    let folded = fold2x2(x)?;
    let y = conv2d(&folded, spec, weight, bias)?;
    unfold2x2(&y)
}

pub(crate) fn validate_folded(spec: &ConvSpec) -> Result<()> {
    check_folded_spec(spec)
}

/// Mean binary cross-entropy of probabilities `p` against targets `y`,
/// with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_mean<T: Real>(p: &Tensor<T>, y: &Tensor<T>) -> Result<T> {
    if p.shape() != y.shape() {
        return Err(Error::shape(
            "bce",
            format!("prediction {} vs target {}", p.shape(), y.shape()),
        ));
    }
    let lo = T::lit(BCE_CLAMP);
    let hi = T::one() - lo;
    let n = T::from_usize(p.len()).unwrap();
    let total: T = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&pv, &yv)| {
            let pc = pv.max(lo).min(hi);
            -(yv * pc.ln() + (T::one() - yv) * (T::one() - pc).ln())
        })
        .sum();
    Ok(total / n)
}

/// Gradient of [`bce_mean`] with respect to `p` (zero where the clamp is active).
pub fn bce_mean_grad<T: Real>(p: &Tensor<T>, y: &Tensor<T>) -> Tensor<T> {
    let lo = T::lit(BCE_CLAMP);
    let hi = T::one() - lo;
    let n = T::from_usize(p.len()).unwrap();
    let data = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&pv, &yv)| {
            if pv < lo || pv > hi {
                T::zero()
            } else {
                (-yv / pv + (T::one() - yv) / (T::one() - pv)) / n
            }
        })
        .collect();
    Tensor::from_vec(p.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0f32), 0.5);
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert!(sigmoid_scalar(60.0f32) < 1.0);
        assert!(sigmoid_scalar(-200.0f32) > 0.0);
        assert!(sigmoid_scalar(800.0f64) < 1.0);
    }

    #[test]
    fn relu_values() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 3), vec![-2.0, 0.0, 3.5]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 3.5]);
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let p = Tensor::<f64>::full(Shape::new(1, 1, 2, 2), 0.5);
        let y = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0., 1., 1., 0.]).unwrap();
        let l = bce_mean(&p, &y).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_vanishes_at_target() {
        let y = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2), vec![0., 1.]).unwrap();
        let l = bce_mean(&y, &y).unwrap();
        // clamped at 1e-7: -ln(1 - 1e-7) ~ 1e-7
        assert!((0.0..2e-7).contains(&l));
    }

    #[test]
    fn folded_conv_requires_same_padding() {
        let spec = ConvSpec::new(8, 8, 3).with_dilation(2);
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 8, 8));
        let w = Tensor::zeros(spec.weight_shape());
        assert!(folded_atrous_conv(&x, &spec, &w, None).is_err());
        let spec = ConvSpec::same(8, 8, 3, 2);
        let w = Tensor::zeros(spec.weight_shape());
        let y = folded_atrous_conv(&x, &spec, &w, None).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 8, 8));
    }
}

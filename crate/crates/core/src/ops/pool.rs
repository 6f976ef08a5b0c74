use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Stride-2 2×2 max pooling. Returns the pooled tensor and, for every output
/// element, the flat input index that won (first maximum in raster order).
pub fn max_pool2x2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    if !s.h().is_multiple_of(2) || !s.w().is_multiple_of(2) {
        return Err(Error::shape(
            "max_pool2x2",
            format!("spatial size {}x{} must be even", s.h(), s.w()),
        ));
    }
    let os = Shape::new(s.n(), s.c(), s.h() / 2, s.w() / 2);
    let mut out = Tensor::zeros(os);
    let mut argmax = vec![0usize; os.numel()];
    let src = x.data();
    let mut k = 0;
    for n in 0..s.n() {
        for c in 0..s.c() {
            for i in 0..os.h() {
                for j in 0..os.w() {
                    let base = s.offset(n, c, 2 * i, 2 * j);
                    let mut best = base;
                    for idx in [base + 1, base + s.w(), base + s.w() + 1] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.data_mut()[k] = src[best];
                    argmax[k] = best;
                    k += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Spatial mean per `(batch, channel)`, shape `(b, c, 1, 1)`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.plane() == 0 {
        return Err(Error::shape("global_avg_pool", "empty spatial extent"));
    }
    let denom = T::from_usize(s.plane()).unwrap();
    let data = x
        .data()
        .chunks(s.plane())
        .map(|p| p.iter().copied().sum::<T>() / denom)
        .collect();
    Tensor::from_vec(Shape::new(s.n(), s.c(), 1, 1), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_picks_max() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![1., 2., 3., 4.]).unwrap();
        let (y, arg) = max_pool2x2(&x).unwrap();
        assert_eq!(y.item(), 4.0);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn gap_mean() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().item(), 2.5);
        let c = Tensor::<f64>::full(Shape::new(2, 3, 5, 7), 0.3);
        let g = global_avg_pool(&c).unwrap();
        assert_eq!(g.shape(), Shape::new(2, 3, 1, 1));
        for v in g.data() {
            assert!((v - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn max_pool_rejects_odd() {
        assert!(max_pool2x2(&Tensor::<f32>::zeros(Shape::new(1, 1, 3, 2))).is_err());
    }
}

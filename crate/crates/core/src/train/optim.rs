//! Poly learning-rate schedule and SGD with classical momentum.

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Real;

/// `base_lr · (1 − iter/max_iter)^power`.
pub fn poly_lr(iter: usize, max_iter: usize, base_lr: f64, power: f64) -> Result<f64> {
    if max_iter == 0 || iter > max_iter {
        return Err(Error::Invalid(format!("poly schedule: iteration {iter} outside 0..={max_iter}")));
    }
    Ok(base_lr * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

/// Weight decay skips biases.
pub fn decays(name: &str) -> bool {
    !name.ends_with(".bias")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One update in place:
/// `g' = g + wd·p`, `v = μ·v + g'`, `p -= lr·v`.
///
/// Fails before touching anything if a gradient is non-finite or a tensor is missing.
pub fn sgd_step<T: Real>(params: &mut ParamStore<T>, grads: &ParamStore<T>, velocity: &mut ParamStore<T>, lr: f64, cfg: &SgdConfig) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("no gradient for parameter '{name}'")))?;
        let v = velocity
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("no momentum buffer for parameter '{name}'")))?;
        if g.shape() != p.shape() || v.shape() != p.shape() {
            return Err(Error::shape("sgd", format!("'{name}': param {}, grad {}, velocity {}", p.shape(), g.shape(), v.shape())));
        }
        if let Some(i) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("gradient of '{name}' is {} at element {i}", g.data()[i])));
        }
    }
    let (lr, mu) = (T::lit(lr), T::lit(cfg.momentum));
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("checked above");
        let v = velocity.get_mut(name).expect("checked above");
        let wd = T::lit(if decays(name) { cfg.weight_decay } else { 0.0 });
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi + (gi + wd * *pi);
            *pi = *pi - lr * *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn store(name: &str, v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::full(Shape::scalar(), v));
        s
    }

    #[test]
    fn poly_endpoints() {
        assert_eq!(poly_lr(0, 10, 0.001, 0.9).unwrap(), 0.001);
        assert_eq!(poly_lr(10, 10, 0.001, 0.9).unwrap(), 0.0);
        assert!((poly_lr(5, 10, 0.001, 0.9).unwrap() - 5.3589e-4).abs() < 1e-8);
        assert!(poly_lr(11, 10, 0.001, 0.9).is_err());
    }

    #[test]
    fn two_momentum_steps() {
        let cfg = SgdConfig { momentum: 0.9, weight_decay: 0.1 };
        let mut p = store("w.weight", 1.0);
        let mut v = store("w.weight", 0.0);
        let g = store("w.weight", 0.5);
        sgd_step(&mut p, &g, &mut v, 0.1, &cfg).unwrap();
        // v1 = 0.5 + 0.1·1 = 0.6, p1 = 1 − 0.06 = 0.94
        assert!((p.get("w.weight").unwrap().item() - 0.94).abs() < 1e-12);
        sgd_step(&mut p, &g, &mut v, 0.1, &cfg).unwrap();
        // v2 = 0.9·0.6 + 0.5 + 0.094 = 1.134, p2 = 0.94 − 0.1134
        assert!((p.get("w.weight").unwrap().item() - 0.8266).abs() < 1e-12);
    }

    #[test]
    fn bias_skips_decay_and_nan_names_param() {
        let cfg = SgdConfig { momentum: 0.0, weight_decay: 1.0 };
        let mut p = store("w.bias", 2.0);
        let mut v = store("w.bias", 0.0);
        sgd_step(&mut p, &store("w.bias", 0.0), &mut v, 0.5, &cfg).unwrap();
        assert_eq!(p.get("w.bias").unwrap().item(), 2.0);
        let err = sgd_step(&mut p, &store("w.bias", f64::NAN), &mut v, 0.5, &cfg).unwrap_err();
        assert!(err.to_string().contains("w.bias"));
        assert_eq!(p.get("w.bias").unwrap().item(), 2.0);
    }
}

//! SGD with momentum and weight decay, plus the cosine learning-rate schedule.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Velocity buffers keyed by parameter name. Dropping the optimizer resets
/// momentum.
#[derive(Debug, Default)]
pub struct Sgd<T: Scalar> {
    cfg: Option<SgdConfig>,
    velocity: HashMap<String, Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(cfg: SgdConfig) -> Self {
        Sgd {
            cfg: Some(cfg),
            velocity: HashMap::new(),
        }
    }

    /// One update over the given named parameters. Parameters that do not
    /// require grad, or hold no gradient, are left untouched.
    ///
    /// `v ← momentum·v + g + wd·p`, `p ← p − lr·v`.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
        lr: f64,
    ) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        let cfg = self.cfg.unwrap_or(SgdConfig {
            momentum: 0.0,
            weight_decay: 0.0,
        });
        let (lr, mom, wd) = (T::lit(lr), T::lit(cfg.momentum), T::lit(cfg.weight_decay));
        for (name, p) in params {
            if !p.requires_grad() {
                continue;
            }
            let Some(g) = p.grad() else { continue };
            let mut data = p.to_vec();
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![T::zero(); data.len()]);
            for ((pv, vv), &gv) in data.iter_mut().zip(v.iter_mut()).zip(&g) {
                *vv = mom * *vv + gv + wd * *pv;
                *pv = *pv - lr * *vv;
            }
            p.set_data(data)?;
        }
        Ok(())
    }
}

/// `base_lr · ½ · (1 + cos(π · epoch / total_epochs))`
pub fn cosine_lr(base_lr: f64, epoch: usize, total_epochs: usize) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::config("total_epochs must be positive"));
    }
    if epoch > total_epochs {
        return Err(Error::config(format!("epoch {epoch} beyond schedule of {total_epochs}")));
    }
    let frac = epoch as f64 / total_epochs as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: Vec<f64>) -> Tensor<f64> {
        Tensor::param(&[v.len()], v).unwrap()
    }

    #[test]
    fn plain_step_subtracts_lr_times_grad() {
        let p = param(vec![1.0, -2.0, 0.5]);
        p.scale(3.0).unwrap().sum_all().unwrap().backward().unwrap();
        let mut sgd = Sgd::new(SgdConfig { momentum: 0.0, weight_decay: 0.0 });
        sgd.step([("p", &p)], 0.1).unwrap();
        let expect = [1.0 - 0.3, -2.0 - 0.3, 0.5 - 0.3];
        for (a, b) in p.to_vec().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn nonpositive_lr_is_config_error() {
        let p = param(vec![1.0]);
        let mut sgd = Sgd::new(SgdConfig { momentum: 0.9, weight_decay: 1e-9 });
        assert!(matches!(sgd.step([("p", &p)], 0.0), Err(Error::Config(_))));
        assert!(matches!(sgd.step([("p", &p)], -1.0), Err(Error::Config(_))));
        assert_eq!(p.to_vec(), vec![1.0]);
    }

    #[test]
    fn frozen_parameter_is_bit_identical() {
        let p = param(vec![0.1, 0.2]);
        p.sum_all().unwrap().backward().unwrap();
        p.set_requires_grad(false);
        let before = p.to_vec();
        Sgd::new(SgdConfig { momentum: 0.9, weight_decay: 1e-9 })
            .step([("p", &p)], 0.5)
            .unwrap();
        assert_eq!(p.to_vec(), before);
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let p = param(vec![0.0]);
        let mut sgd = Sgd::new(SgdConfig { momentum: 0.5, weight_decay: 0.0 });
        for _ in 0..2 {
            p.zero_grad();
            p.sum_all().unwrap().backward().unwrap();
            sgd.step([("p", &p)], 1.0).unwrap();
        }
        // v1 = 1, v2 = 0.5 + 1 = 1.5; p = -(1 + 1.5)
        assert_eq!(p.to_vec(), vec![-2.5]);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.01, 0, 20).unwrap(), 0.01);
        assert!(cosine_lr(0.01, 20, 20).unwrap().abs() < 1e-18);
        assert!((cosine_lr(0.01, 10, 20).unwrap() - 0.005).abs() < 1e-15);
        assert!(cosine_lr(0.01, 0, 0).is_err());
        assert!(cosine_lr(0.01, 21, 20).is_err());
    }
}

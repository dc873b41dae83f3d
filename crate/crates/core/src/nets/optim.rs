//! AdamW with decoupled weight decay and a cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// `lr_final + ½(lr_init − lr_final)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total: usize, lr_init: f64, lr_final: f64) -> Result<f64> {
    if step > total {
        return Err(Error::invalid(format!("schedule step {step} exceeds total {total}")));
    }
    if total == 0 {
        return Ok(lr_init);
    }
    let t = step as f64 / total as f64;
    Ok(lr_final + 0.5 * (lr_init - lr_final) * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr_init: f64,
    pub lr_final: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> Result<f64> {
        cosine_lr(step, self.total_steps, self.lr_init, self.lr_final)
    }
}

/// Moment accumulators mirror the parameter shapes; moments are kept in f64.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new<T: Real>(config: AdamWConfig, params: &ParamSet<T>) -> Self {
        AdamW {
            config,
            first: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            second: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update:
    /// `p ← p − lr·(m̂/(√v̂ + ε) + λ·p)`.
    pub fn step<T: Real>(&mut self, params: &mut ParamSet<T>, grads: &[&Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(i);
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "AdamW::step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (k, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gk = gv.as_f64();
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                let old = pv.as_f64();
                *pv = T::of(old - lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * old));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("p", Tensor::full([1], v));
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        let g = Tensor::full([1], 1.0);
        opt.step(&mut p, &[&g], 1e-3).unwrap();
        // m̂ = v̂ = 1 → Δ = lr·1/(1 + ε)
        assert!((p.get(0).item() - (1.0 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p.get(0).item() - 0.999).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_and_pure_decay() {
        let mut p = single(2.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        let g = Tensor::zeros([1]);
        for _ in 0..3 {
            opt.step(&mut p, &[&g], 1e-2).unwrap();
        }
        assert_eq!(p.get(0).item(), 2.0);

        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..AdamWConfig::default()
        };
        let mut p = single(2.0);
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &[&g], 1e-2).unwrap();
        assert!((p.get(0).item() - 2.0 * (1.0 - 1e-2 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 1000, 1e-3, 1e-5).unwrap(), 1e-3);
        assert!((cosine_lr(1000, 1000, 1e-3, 1e-5).unwrap() - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(2000, 2000, 1e-3, 1e-7).unwrap() - 1e-7).abs() < 1e-18);
        assert!((cosine_lr(500, 1000, 1e-3, 1e-5).unwrap() - 5.05e-4).abs() < 1e-15);
        assert!(cosine_lr(1001, 1000, 1e-3, 1e-5).is_err());
    }
}

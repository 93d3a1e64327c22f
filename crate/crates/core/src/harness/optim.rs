use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use super::config::TrainConfig;
use crate::error::Result;

/// Step schedule: `lr * decay_factor^floor((epoch - 1) / decay_epoch)` for
/// 1-based `epoch`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let drops = epoch.saturating_sub(1) / cfg.decay_epoch;
    cfg.lr * cfg.decay_factor.powi(drops as i32)
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: i32,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update of every named variable. Variables without a gradient are
    /// still decayed.
    pub fn step(&mut self, params: &BTreeMap<String, Var>, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (name, var) in params {
            let theta = var.as_tensor();
            let g = match grads.get(var) {
                Some(g) => g.clone(),
                None => theta.zeros_like()?,
            };
            let g = if self.weight_decay != 0.0 {
                (g + (theta * self.weight_decay)?)?
            } else {
                g
            };
            let (m, v) = match self.moments.get(name) {
                Some((m, v)) => (
                    ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?,
                    ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                ),
                None => ((&g * (1.0 - self.beta1))?, (g.sqr()? * (1.0 - self.beta2))?),
            };
            let denom = ((&v / bc2)?.sqrt()? + self.eps)?;
            let update = ((&m / bc1)? / denom)?;
            var.set(&(theta - (update * lr)?)?.detach())?;
            self.moments.insert(name.clone(), (m.detach(), v.detach()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn schedule_halves_every_thirty_epochs() {
        let cfg = TrainConfig::default();
        for (e, lr) in [(1, 1e-4), (30, 1e-4), (31, 5e-5), (60, 5e-5), (61, 2.5e-5), (90, 2.5e-5)] {
            assert!((lr_at_epoch(&cfg, e) - lr).abs() < 1e-18, "epoch {e}");
        }
    }

    /// Scalar Adam with coupled decay, two steps.
    #[test]
    fn matches_scalar_update() {
        let cfg = TrainConfig {
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        let var = Var::new(&[2.0f64], &Device::Cpu).unwrap();
        let params = BTreeMap::from([("w".to_string(), var.clone())]);
        let mut opt = Adam::new(&cfg);
        let (mut theta, mut m, mut v) = (2.0f64, 0.0, 0.0);
        for t in 1..=2 {
            // loss = 3 * w^2
            let loss = (var.as_tensor().sqr().unwrap() * 3.0).unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&params, &grads, 0.01).unwrap();

            let g = 6.0 * theta + 0.1 * theta;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= 0.01 * mh / (vh.sqrt() + 1e-8);
            let got = var.as_tensor().to_vec1::<f64>().unwrap()[0];
            assert!((got - theta).abs() < 1e-14, "step {t}: {got} vs {theta}");
        }
    }
}

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::losses::DEFAULT_LAMBDA_AUX;
use crate::types::parse_num;

/// Optimizer, schedule and loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// The learning rate is multiplied by `decay_factor` every `decay_epoch`
    /// epochs.
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_aux: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            decay_epoch: 30,
            decay_factor: 0.5,
            epochs: 200,
            batch_size: 4,
            seed: 0,
            lambda_aux: DEFAULT_LAMBDA_AUX,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 11] = [
        "lr",
        "beta1",
        "beta2",
        "eps",
        "weight_decay",
        "decay_epoch",
        "decay_factor",
        "epochs",
        "batch_size",
        "seed",
        "lambda_aux",
    ];

    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.eps, self.beta1, self.beta2]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive
            || self.beta1 >= 1.0
            || self.beta2 >= 1.0
            || !(self.weight_decay >= 0.0)
            || !(self.lambda_aux >= 0.0)
            || !(self.decay_factor > 0.0 && self.decay_factor < 1.0)
            || self.decay_epoch == 0
            || self.epochs == 0
            || self.batch_size == 0
        {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "lr = {}\nbeta1 = {}\nbeta2 = {}\neps = {}\nweight_decay = {}\ndecay_epoch = {}\n\
             decay_factor = {}\nepochs = {}\nbatch_size = {}\nseed = {}\nlambda_aux = {}\n",
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
            self.weight_decay,
            self.decay_epoch,
            self.decay_factor,
            self.epochs,
            self.batch_size,
            self.seed,
            self.lambda_aux
        )
    }

    /// Starts from the defaults and overrides every key present. Keys that
    /// belong to neither this config nor the model config are rejected.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in kv {
            match k.as_str() {
                "lr" => c.lr = parse_num(v, k)?,
                "beta1" => c.beta1 = parse_num(v, k)?,
                "beta2" => c.beta2 = parse_num(v, k)?,
                "eps" => c.eps = parse_num(v, k)?,
                "weight_decay" => c.weight_decay = parse_num(v, k)?,
                "decay_epoch" => c.decay_epoch = parse_num(v, k)?,
                "decay_factor" => c.decay_factor = parse_num(v, k)?,
                "epochs" => c.epochs = parse_num(v, k)?,
                "batch_size" => c.batch_size = parse_num(v, k)?,
                "seed" => c.seed = parse_num(v, k)?,
                "lambda_aux" => c.lambda_aux = parse_num(v, k)?,
                _ if crate::types::ModelConfig::KEYS.contains(&k.as_str()) => {}
                _ => return Err(Error::Config(format!("unknown key {k:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::parse_kv;

    #[test]
    fn kv_round_trip() {
        let c = TrainConfig {
            epochs: 7,
            seed: 42,
            lr: 3e-4,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_kv(&parse_kv(&c.to_kv()).unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        for text in ["decay_factor = 1.5", "lr = 0", "epochs = 0", "bogus = 1"] {
            assert!(TrainConfig::from_kv(&parse_kv(text).unwrap()).is_err(), "{text}");
        }
    }
}

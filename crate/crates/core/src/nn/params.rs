use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Named trainable parameters and non-trainable buffers of one network.
///
/// Names are canonical paths such as `encoder.stage2.block0.conv1.weight`;
/// checkpoints and optimizer state are keyed by them. Initialization draws
/// from a seeded ChaCha stream in registration order, so building the same
/// architecture with the same seed gives bit-identical weights.
#[derive(Debug)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn check_new(&self, name: &str) -> Result<()> {
        if self.params.contains_key(name) || self.buffers.contains_key(name) {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        Ok(())
    }

    /// Conv weight, zero-mean normal with variance 1 / (3 * in_channels * kh * kw).
    pub fn conv_weight(&mut self, name: &str, shape: (usize, usize, usize, usize)) -> Result<Var> {
        let fan_in = (shape.1 * shape.2 * shape.3) as f64;
        self.normal(name, shape, (1.0 / (3.0 * fan_in)).sqrt())
    }

    fn normal(&mut self, name: &str, shape: (usize, usize, usize, usize), std: f64) -> Result<Var> {
        self.check_new(name)?;
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        let values: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let v = Var::from_tensor(&t)?;
        self.params.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn constant(&mut self, name: &str, len: usize, value: f64) -> Result<Var> {
        self.check_new(name)?;
        let t = (Tensor::ones(len, self.dtype, &self.device)? * value)?;
        let v = Var::from_tensor(&t)?;
        self.params.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn buffer(&mut self, name: &str, len: usize, value: f64) -> Result<Var> {
        self.check_new(name)?;
        let t = (Tensor::ones(len, self.dtype, &self.device)? * value)?;
        let v = Var::from_tensor(&t)?;
        self.buffers.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Var> {
        &self.buffers
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.params.values().cloned().collect()
    }

    /// Total number of scalar trainable parameters.
    pub fn num_params(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    /// Overwrite a parameter or buffer in place; shape must match.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if var.dims() != value.dims() {
            return Err(Error::shape(format!(
                "{name}: expected {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Every named tensor, parameters and buffers together.
    pub fn named_tensors(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .chain(self.buffers.iter())
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let mut a = ParamStore::new(DType::F32, 3);
        let mut b = ParamStore::new(DType::F32, 3);
        let wa = a.conv_weight("w", (4, 2, 3, 3)).unwrap();
        let wb = b.conv_weight("w", (4, 2, 3, 3)).unwrap();
        let va = wa.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let vb = wb.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(va, vb);
    }

    #[test]
    fn conv_weight_variance_follows_fan_in() {
        let mut s = ParamStore::new(DType::F64, 5);
        let w = s.conv_weight("w", (64, 32, 3, 3)).unwrap();
        let v = w.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        let want = 1.0 / (3.0 * 32.0 * 9.0);
        assert!(mean.abs() < 1e-3, "{mean}");
        assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(DType::F32, 0);
        s.constant("a", 2, 1.0).unwrap();
        assert!(s.buffer("a", 2, 0.0).is_err());
    }

    #[test]
    fn set_checks_shape() {
        let mut s = ParamStore::new(DType::F64, 0);
        s.constant("g", 3, 1.0).unwrap();
        let bad = Tensor::zeros(4, DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(s.set("g", &bad), Err(Error::Shape(_))));
        let good = Tensor::zeros(3, DType::F64, &Device::Cpu).unwrap();
        s.set("g", &good).unwrap();
        assert_eq!(s.get("g").unwrap().to_vec1::<f64>().unwrap(), vec![0.0; 3]);
        assert_eq!(s.num_params(), 3);
    }
}

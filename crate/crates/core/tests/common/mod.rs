#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use dirl::MaskTensor;

pub fn mask(values: &[f64], h: usize, w: usize) -> MaskTensor {
    MaskTensor::from_values(values.to_vec(), h, w).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap()
}

/// Largest relative error between the autodiff gradient of `f` at `x` and
/// central differences, with errors measured against `max(|g|, 1e-6)`
/// scaled by the gradient's overall magnitude.
pub fn fd_gradient_error(x: &[f64], shape: &[usize], f: impl Fn(&Tensor) -> Tensor) -> f64 {
    let dev = Device::Cpu;
    let var = Var::from_tensor(&Tensor::from_vec(x.to_vec(), shape, &dev).unwrap()).unwrap();
    let loss = f(var.as_tensor());
    let grads = loss.backward().unwrap();
    let analytic = flat(grads.get(&var).expect("input reaches the loss"));
    let h = 1e-6;
    let scale = analytic.iter().fold(0f64, |m, g| m.max(g.abs())).max(1e-8);
    let mut worst = 0f64;
    for i in 0..x.len() {
        let eval = |d: f64| {
            let mut v = x.to_vec();
            v[i] += d;
            scalar(&f(&Tensor::from_vec(v, shape, &dev).unwrap()))
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let err = (numeric - analytic[i]).abs() / analytic[i].abs().max(1e-3 * scale);
        worst = worst.max(err);
    }
    worst
}

/// Deterministic pseudo-random values in `[lo, hi)`.
pub fn values(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn binary(seed: u64, n: usize) -> Vec<f64> {
    values(seed, n, 0.0, 1.0).into_iter().map(|v| if v < 0.4 { 1.0 } else { 0.0 }).collect()
}

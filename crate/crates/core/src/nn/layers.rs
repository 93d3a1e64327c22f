use candle_core::{Tensor, Var, D};

use super::conv::conv2d;
use super::params::{join, ParamStore};
use super::resample::upsample2x;
use crate::error::Result;

/// Whether normalization layers use batch statistics (and update their
/// running estimates) or the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.conv_weight(&join(prefix, "weight"), (out_c, in_c, kernel, kernel))?;
        let bias = if bias {
            Some(store.constant(&join(prefix, "bias"), out_c, 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// 3x3, stride 1, same padding, with bias.
    pub fn same3(store: &mut ParamStore, prefix: &str, in_c: usize, out_c: usize) -> Result<Self> {
        Self::new(store, prefix, in_c, out_c, 3, 1, 1, true)
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Var> {
        self.bias.as_ref()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d(x, &self.weight, self.stride, self.padding)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }
}

/// Upsampling layer U: bilinear x2 upsample followed by a stride-1 3x3 conv.
#[derive(Debug, Clone)]
pub struct Up {
    conv: Conv2d,
}

impl Up {
    pub fn new(store: &mut ParamStore, prefix: &str, in_c: usize, out_c: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, prefix, in_c, out_c, 3, 1, 1, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.conv.forward(&upsample2x(x)?)
    }
}

/// Downsampling layer D: a stride-2 3x3 conv.
#[derive(Debug, Clone)]
pub struct Down {
    conv: Conv2d,
}

impl Down {
    pub fn new(store: &mut ParamStore, prefix: &str, in_c: usize, out_c: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, prefix, in_c, out_c, 3, 2, 1, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.conv.forward(x)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
}

impl BatchNorm {
    const EPS: f64 = 1e-5;
    const MOMENTUM: f64 = 0.1;

    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(&join(prefix, "weight"), channels, 1.0)?,
            beta: store.constant(&join(prefix, "bias"), channels, 0.0)?,
            running_mean: store.buffer(&join(prefix, "running_mean"), channels, 0.0)?,
            running_var: store.buffer(&join(prefix, "running_var"), channels, 1.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let shape = (1, c, 1, 1);
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = x.mean_keepdim(3)?.mean_keepdim(2)?.mean_keepdim(0)?;
                let centered = x.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim(3)?.mean_keepdim(2)?.mean_keepdim(0)?;
                let n = (b * h * w) as f64;
                let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                let m = Self::MOMENTUM;
                let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                    + (mean.detach().flatten_all()? * m)?)?;
                let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                    + (var.detach().flatten_all()? * (m * unbiased))?)?;
                self.running_mean.set(&new_mean)?;
                self.running_var.set(&new_var)?;
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.reshape(shape)?,
                self.running_var.reshape(shape)?,
            ),
        };
        let inv_std = (var + Self::EPS)?.sqrt()?.recip()?;
        let scale = self.gamma.reshape(shape)?.broadcast_mul(&inv_std)?;
        Ok(x.broadcast_sub(&mean)?
            .broadcast_mul(&scale)?
            .broadcast_add(&self.beta.reshape(shape)?)?)
    }
}

/// Logistic sigmoid via tanh, which stays finite (and has finite gradient) for
/// any finite input.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Concatenate along the channel axis.
pub fn cat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    Ok(Tensor::cat(parts, 1)?)
}

/// Per-position mean and max across channels, stacked as 2 channels.
pub fn channel_avg_max(x: &Tensor) -> Result<Tensor> {
    let avg = x.mean_keepdim(1)?;
    let max = x.max_keepdim(1)?;
    Ok(Tensor::cat(&[&avg, &max], 1)?)
}

/// Global average and max pooling, each (B, C, 1, 1).
pub fn global_avg_max(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, c, _, _) = x.dims4()?;
    let flat = x.flatten_from(2)?;
    let avg = flat.mean_keepdim(D::Minus1)?.reshape((b, c, 1, 1))?;
    let max = flat.max_keepdim(D::Minus1)?.reshape((b, c, 1, 1))?;
    Ok((avg, max))
}

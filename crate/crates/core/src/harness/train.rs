use std::io::Write;
use std::path::Path;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::optim::{lr_at_epoch, Adam};
use crate::datagen::CompositeSample;
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossBreakdown, SsimWindow};
use crate::model::Model;
use crate::nn::Mode;
use crate::types::{AttentionVariant, ImageTensor, MaskTensor, ModelConfig};

/// Parameters are kept in single precision during training.
pub const TRAIN_DTYPE: DType = DType::F32;

/// One optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    /// Mean total loss of each epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        epoch_means(&self.log)
    }

    pub fn final_loss(&self) -> Option<LossBreakdown> {
        self.log.last().map(|r| r.loss)
    }
}

pub fn epoch_means(log: &[LogRow]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for row in log {
        if out.len() < row.epoch {
            out.resize(row.epoch, (0.0, 0));
        }
        let e = &mut out[row.epoch - 1];
        e.0 += row.loss.total;
        e.1 += 1;
    }
    out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
}

/// Builds a fresh model seeded by `cfg.seed` and trains it.
pub fn train(model_cfg: &ModelConfig, cfg: &TrainConfig, data: &[CompositeSample]) -> Result<TrainOutcome> {
    let mut model = Model::new(model_cfg.clone(), TRAIN_DTYPE, cfg.seed)?;
    let log = train_model(&mut model, cfg, data, |_| {})?;
    Ok(TrainOutcome { model, log })
}

pub(crate) fn stack_masks(masks: &[&MaskTensor]) -> Result<MaskTensor> {
    let parts: Vec<&Tensor> = masks.iter().map(|m| m.tensor()).collect();
    MaskTensor::new(Tensor::cat(&parts, 0)?)
}

/// Trains `model` in place for `cfg.epochs` epochs, calling `observe` after
/// every step. The data order is reshuffled each epoch from a stream seeded
/// by `cfg.seed`.
pub fn train_model(
    model: &mut Model,
    cfg: &TrainConfig,
    data: &[CompositeSample],
    mut observe: impl FnMut(&LogRow),
) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Length("training set is empty".into()));
    }
    let lambda = match model.config().attention_variant {
        AttentionVariant::Mda => cfg.lambda_aux,
        AttentionVariant::Da | AttentionVariant::None => 0.0,
    };
    let window = SsimWindow::default();
    let mut opt = Adam::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::new();
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let images: Vec<&ImageTensor> = batch.iter().map(|&i| &data[i].image).collect();
            let masks: Vec<&MaskTensor> = batch.iter().map(|&i| &data[i].mask).collect();
            let img = ImageTensor::stack(&images)?;
            let gt = stack_masks(&masks)?;

            let out = model.forward(&img, Mode::Train)?;
            let loss = total_loss(&out.mask, &out.attention, &gt, lambda, window)?;
            let b = loss.breakdown;
            if !b.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    bce: b.bce,
                    ssim: b.ssim,
                    aux: b.aux,
                });
            }
            let grads = loss.total.backward()?;
            opt.step(model.store().params(), &grads, lr)?;

            let row = LogRow { step, epoch, lr, loss: b };
            observe(&row);
            log.push(row);
        }
    }
    Ok(log)
}

/// CSV `step,epoch,lr,bce,ssim,aux,total`.
pub fn write_train_log(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut buf = Vec::new();
    let io = |e| Error::io(path, e);
    writeln!(buf, "step,epoch,lr,bce,ssim,aux,total").map_err(io)?;
    for r in log {
        writeln!(
            buf,
            "{},{},{},{},{},{},{}",
            r.step, r.epoch, r.lr, r.loss.bce, r.loss.ssim, r.loss.aux, r.loss.total
        )
        .map_err(io)?;
    }
    std::fs::write(path, buf).map_err(io)
}

//! Refinement stage: CBAM-style dual attention per level, `{b_k} -> {a_k}`.
//!
//! Channel attention `sigmoid(MLP(avgpool b) + MLP(maxpool b))` scales the
//! channels, then spatial attention
//! `A_k = sigmoid(conv7x7([mean_c; max_c]))` scales positions. The maps `A_k`
//! are returned for supervision. DA and MDA share this computation; they
//! differ only in whether the loss supervises `A_k`.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::layers::{channel_avg_max, global_avg_max};
use crate::nn::{area_downsample, sigmoid, Conv2d, ParamStore};
use crate::types::{check_structure, AttentionVariant, FeaturePyramid, MaskTensor, ModelConfig, LEVELS};

/// Channel-then-spatial attention for one level.
#[derive(Debug, Clone)]
pub struct DualAttention {
    fc1: Conv2d,
    fc2: Conv2d,
    spatial: Conv2d,
}

impl DualAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, squeeze_ratio: usize) -> Result<Self> {
        let hidden = channels / squeeze_ratio;
        if hidden == 0 {
            return Err(Error::Config(format!(
                "{prefix}: {channels} channels / ratio {squeeze_ratio} leaves no hidden units"
            )));
        }
        Ok(Self {
            fc1: Conv2d::new(store, &format!("{prefix}.mlp.fc1"), channels, hidden, 1, 1, 0, true)?,
            fc2: Conv2d::new(store, &format!("{prefix}.mlp.fc2"), hidden, channels, 1, 1, 0, true)?,
            spatial: Conv2d::new(store, &format!("{prefix}.spatial"), 2, 1, 7, 1, 3, true)?,
        })
    }

    fn mlp(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.relu()?)
    }

    /// Channel-attended features `b ⊙ ca`.
    pub fn channel_attend(&self, b: &Tensor) -> Result<Tensor> {
        let (avg, max) = global_avg_max(b)?;
        let ca = sigmoid(&(self.mlp(&avg)? + self.mlp(&max)?)?)?;
        Ok(b.broadcast_mul(&ca)?)
    }

    /// Returns `(a, A)`.
    pub fn forward(&self, b: &Tensor) -> Result<(Tensor, Tensor)> {
        let x = self.channel_attend(b)?;
        let map = sigmoid(&self.spatial.forward(&channel_avg_max(&x)?)?)?;
        Ok((x.broadcast_mul(&map)?, map))
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    variant: AttentionVariant,
    channels: [usize; LEVELS],
    blocks: Vec<DualAttention>,
}

impl Attention {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let blocks = match cfg.attention_variant {
            AttentionVariant::None => Vec::new(),
            AttentionVariant::Da | AttentionVariant::Mda => (0..LEVELS)
                .map(|k| {
                    DualAttention::new(
                        store,
                        &format!("attention.{}", k + 1),
                        cfg.channels[k],
                        cfg.squeeze_ratio,
                    )
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            variant: cfg.attention_variant,
            channels: cfg.channels,
            blocks,
        })
    }

    pub fn variant(&self) -> AttentionVariant {
        self.variant
    }

    pub fn block(&self, k: usize) -> Option<&DualAttention> {
        self.blocks.get(k)
    }

    /// Refined pyramid and the five spatial attention maps. With the
    /// `NONE` variant the stage is the identity and no maps are produced.
    pub fn refine(&self, pyr: &FeaturePyramid) -> Result<(FeaturePyramid, Vec<MaskTensor>)> {
        check_structure(pyr, &self.channels, None)?;
        if self.blocks.is_empty() {
            return Ok((pyr.clone(), Vec::new()));
        }
        let mut levels = Vec::with_capacity(LEVELS);
        let mut maps = Vec::with_capacity(LEVELS);
        for (block, b) in self.blocks.iter().zip(pyr.levels()) {
            let (a, map) = block.forward(b)?;
            levels.push(a);
            maps.push(MaskTensor::from_trusted(map));
        }
        Ok((FeaturePyramid::from_levels(levels), maps))
    }
}

/// Ground truth resized by area averaging to each `(h, w)` in `sizes`.
pub fn attention_supervision_targets(gt: &MaskTensor, sizes: &[(usize, usize)]) -> Result<Vec<MaskTensor>> {
    let (h, w) = gt.size();
    sizes
        .iter()
        .map(|&(lh, lw)| {
            if lh == 0 || h % lh != 0 || w % lw != 0 || h / lh != w / lw {
                return Err(Error::shape(format!(
                    "cannot resize {h}x{w} mask to {lh}x{lw} by area averaging"
                )));
            }
            Ok(MaskTensor::from_trusted(area_downsample(gt.tensor(), h / lh)?))
        })
        .collect()
}

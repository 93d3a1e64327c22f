//! Decoding stage: `{a_k} -> M̂`.
//!
//! The cascade starts at `d_5 = a_5` and walks down to level 1. Every block
//! first projects `U(d_{k+1})` to `c_k` channels, then
//!
//! * GGD: `d_k = relu(conv([U(d_{k+1}) ⊙ a_k; g_k]))`, where `g_k` is the
//!   global context `a_5` bilinearly upsampled to level `k`,
//! * GGD_SIM: `d_k = relu(conv(U(d_{k+1}) ⊙ a_k))`,
//! * REG: `d_k = relu(conv([U(d_{k+1}); a_k]))`.
//!
//! The head is `M̂ = sigmoid(conv1x1(d_1))`.

use crate::error::{Error, Result};
use crate::nn::layers::cat_channels;
use crate::nn::{sigmoid, upsample2x, Conv2d, ParamStore, Up};
use crate::types::{check_structure, DecoderVariant, FeaturePyramid, MaskTensor, ModelConfig, LEVELS};

#[derive(Debug, Clone)]
pub struct Decoder {
    variant: DecoderVariant,
    channels: [usize; LEVELS],
    /// `up[k]` maps level `k + 2` to level `k + 1`.
    up: Vec<Up>,
    /// Same indexing as `up`; empty unless GGD.
    blocks: Vec<Conv2d>,
    head: Conv2d,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.channels;
        let variant = cfg.decoder_variant;
        let mut up = Vec::with_capacity(LEVELS - 1);
        let mut blocks = Vec::with_capacity(LEVELS - 1);
        for k in 0..LEVELS - 1 {
            let level = k + 1;
            up.push(Up::new(store, &format!("decoder.up.{level}"), c[k + 1], c[k])?);
            let in_c = match variant {
                DecoderVariant::GgdSim => c[k],
                DecoderVariant::Reg => 2 * c[k],
                DecoderVariant::Ggd => c[k] + c[LEVELS - 1],
            };
            blocks.push(Conv2d::same3(store, &format!("decoder.block.{level}"), in_c, c[k])?);
        }
        let head = Conv2d::new(store, "decoder.head", c[0], 1, 1, 1, 0, true)?;
        Ok(Self {
            variant,
            channels: c,
            up,
            blocks,
            head,
        })
    }

    pub fn variant(&self) -> DecoderVariant {
        self.variant
    }

    /// Predicted mask and the decoder pyramid `{d_1, ..., d_5}`.
    pub fn decode(&self, refined: &FeaturePyramid) -> Result<(MaskTensor, FeaturePyramid)> {
        check_structure(refined, &self.channels, None)?;
        let a = refined.levels();
        // a_5 bilinearly resampled to every level, for the GGD shortcut.
        let mut context = vec![None; LEVELS - 1];
        if self.variant == DecoderVariant::Ggd {
            let mut g = a[LEVELS - 1].clone();
            for k in (0..LEVELS - 1).rev() {
                g = upsample2x(&g)?;
                context[k] = Some(g.clone());
            }
        }

        let mut d = vec![a[LEVELS - 1].clone()];
        for k in (0..LEVELS - 1).rev() {
            let prev = self.up[k].forward(d.last().expect("cascade is non-empty"))?;
            let x = match self.variant {
                DecoderVariant::Reg => cat_channels(&[&prev, &a[k]])?,
                DecoderVariant::GgdSim => (prev * &a[k])?,
                DecoderVariant::Ggd => {
                    let g = context[k].as_ref().ok_or_else(|| Error::shape("missing global context"))?;
                    cat_channels(&[&(prev * &a[k])?, g])?
                }
            };
            d.push(self.blocks[k].forward(&x)?.relu()?);
        }
        d.reverse();
        let mask = sigmoid(&self.head.forward(&d[0])?)?;
        Ok((MaskTensor::from_trusted(mask), FeaturePyramid::from_levels(d)))
    }
}

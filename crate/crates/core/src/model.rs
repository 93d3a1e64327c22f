//! The four-stage network: encoder, fusion, attention, decoder.

use candle_core::DType;

use crate::attention::Attention;
use crate::decoder::Decoder;
use crate::encoder::Encoder;
use crate::error::Result;
use crate::fusion::Fusion;
use crate::nn::{Mode, ParamStore};
use crate::types::{FeaturePyramid, ImageTensor, MaskTensor, ModelConfig};

/// Everything a forward pass produces.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub mask: MaskTensor,
    /// Spatial attention maps `A_1..A_5`; empty when attention is disabled.
    pub attention: Vec<MaskTensor>,
    pub encoded: FeaturePyramid,
    pub fused: FeaturePyramid,
    pub refined: FeaturePyramid,
    pub decoded: FeaturePyramid,
}

#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    encoder: Encoder,
    fusion: Fusion,
    attention: Attention,
    decoder: Decoder,
}

impl Model {
    pub fn new(config: ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, seed);
        let encoder = Encoder::new(&mut store, &config)?;
        let fusion = Fusion::new(&mut store, &config)?;
        let attention = Attention::new(&mut store, &config)?;
        let decoder = Decoder::new(&mut store, &config)?;
        Ok(Self {
            config,
            store,
            encoder,
            fusion,
            attention,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    pub fn forward(&self, img: &ImageTensor, mode: Mode) -> Result<ModelOutput> {
        let img = if img.tensor().dtype() == self.store.dtype() {
            img.clone()
        } else {
            ImageTensor::new(img.tensor().to_dtype(self.store.dtype())?)?
        };
        let encoded = self.encoder.encode(&img, mode)?;
        let fused = self.fusion.fuse(&encoded)?;
        let (refined, attention) = self.attention.refine(&fused)?;
        let (mask, decoded) = self.decoder.decode(&refined)?;
        Ok(ModelOutput {
            mask,
            attention,
            encoded,
            fused,
            refined,
            decoded,
        })
    }

    /// Eval-mode mask only.
    pub fn predict(&self, img: &ImageTensor) -> Result<MaskTensor> {
        Ok(self.forward(img, Mode::Eval)?.mask)
    }
}

//! Pyramid shapes through each transition variant, with parameter counts.

use candle_core::DType;
use dirl::nn::Mode;
use dirl::FusionVariant;
use dirl::{ImageTensor, Model, ModelConfig};

fn main() -> dirl::Result<()> {
    let img = dirl::datagen::generate(3, 1, (64, 64))?.remove(0).image;
    for variant in [FusionVariant::None, FusionVariant::Aim, FusionVariant::BfiDown, FusionVariant::BfiUp, FusionVariant::Bfi] {
        let cfg = ModelConfig { fusion_variant: variant, ..ModelConfig::desk() };
        let model = Model::new(cfg, DType::F32, 0)?;
        let out = model.forward(&ImageTensor::new(img.tensor().to_dtype(DType::F32)?)?, Mode::Eval)?;
        let shapes: Vec<String> = out.fused.levels().iter().map(|t| format!("{:?}", t.dims())).collect();
        println!("{:<9} {:>7} params  {}", variant.to_string(), model.num_params(), shapes.join(" "));
    }
    Ok(())
}

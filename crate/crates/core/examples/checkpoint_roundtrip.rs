//! Saves a model, loads it back and checks the predictions match bit for bit.

use candle_core::DType;
use dirl::datagen::generate;
use dirl::harness::{load_checkpoint, save_checkpoint};
use dirl::{Model, ModelConfig};

fn main() -> dirl::Result<()> {
    let dir = std::env::temp_dir().join("dirl-example-ckpt");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("model.safetensors");
    let model = Model::new(ModelConfig::desk(), DType::F32, 42)?;
    save_checkpoint(&model, &path)?;
    let loaded = load_checkpoint(&path)?;
    let img = &generate(9, 1, (64, 64))?[0].image;
    let a = model.predict(img)?.tensor().flatten_all()?.to_vec1::<f32>()?;
    let b = loaded.predict(img)?.tensor().flatten_all()?.to_vec1::<f32>()?;
    let same = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("{} bytes, {} params, identical predictions: {same}", std::fs::metadata(&path).map_or(0, |m| m.len()), loaded.num_params());
    Ok(())
}

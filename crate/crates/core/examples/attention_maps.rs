//! Briefly trains a small model, then writes its spatial attention maps.
//!
//! `cargo run --release --example attention_maps -- [out_dir]`

use dirl::datagen::generate;
use dirl::harness::{export_attention, train, TrainConfig};
use dirl::ModelConfig;

fn main() -> dirl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-attn".into());
    let data = generate(5, 8, (32, 32))?;
    let cfg = ModelConfig { input_size: (32, 32), ..ModelConfig::desk() };
    let run = train(&cfg, &TrainConfig { epochs: 3, ..TrainConfig::default() }, &data)?;
    let files = export_attention(&run.model, &data[0].image, std::path::Path::new(&out), &data[0].id)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

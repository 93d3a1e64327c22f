//! Generates a small synthetic set, writes it to disk and reads it back.
//!
//! `cargo run --example gen_data -- [out_dir]`

use dirl::datagen::{generate, load_manifest, write_manifest};

fn main() -> dirl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-data".into());
    let samples = generate(7, 6, (64, 64))?;
    for s in &samples {
        let meta = s.meta.as_ref().map(|m| format!("{:?}", m.kind)).unwrap_or_default();
        println!("{}  area {:.3}  {meta}", s.id, s.foreground_area_fraction);
    }
    let manifest = write_manifest(&samples, std::path::Path::new(&out))?;
    let back = load_manifest(&manifest)?;
    println!("wrote {} and reloaded {} samples", manifest.display(), back.len());
    Ok(())
}

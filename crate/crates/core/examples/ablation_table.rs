//! A few ablation rows at a tiny width, printed as the summary table.
//!
//! `cargo run --release --example ablation_table -- [rows]`

use dirl::datagen::generate;
use dirl::harness::{render_table, run_ablation, AblationRow, TrainConfig};
use dirl::ModelConfig;

fn main() -> dirl::Result<()> {
    let rows = AblationRow::parse_list(&std::env::args().nth(1).unwrap_or_else(|| "1,3,7,10".into()))?;
    let train_set = generate(11, 8, (32, 32))?;
    let eval_set = generate(12, 4, (32, 32))?;
    let base = ModelConfig {
        channels: ModelConfig::channel_schedule(4),
        base_width: 4,
        input_size: (32, 32),
        ..ModelConfig::desk()
    };
    let cfg = TrainConfig { epochs: 4, ..TrainConfig::default() };
    let results = run_ablation(&rows, &base, &cfg, &train_set, &eval_set, |r| eprintln!("row {} done", r.row.id))?;
    print!("{}", render_table(&results));
    Ok(())
}

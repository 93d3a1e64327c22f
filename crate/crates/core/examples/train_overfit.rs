//! Overfits the full model on a handful of samples and reports train metrics.
//!
//! `cargo run --release --example train_overfit -- [epochs]`

use dirl::datagen::generate;
use dirl::harness::{evaluate, train_model, TrainConfig};
use dirl::harness::train::TRAIN_DTYPE;
use dirl::{Model, ModelConfig};

fn main() -> dirl::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let data = generate(1, 16, (64, 64))?;
    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let mut model = Model::new(ModelConfig::desk(), TRAIN_DTYPE, cfg.seed)?;
    println!("{} parameters", model.num_params());
    let per_epoch = data.len().div_ceil(cfg.batch_size);
    let mut sum = 0.0;
    train_model(&mut model, &cfg, &data, |r| {
        sum += r.loss.total;
        if r.step % per_epoch == 0 {
            println!("epoch {:>3}  lr {:.2e}  mean loss {:.1}", r.epoch, r.lr, sum / per_epoch as f64);
            sum = 0.0;
        }
    })?;
    let rep = evaluate(&model, &data)?;
    println!("train set: ap {:.4}  f1 {:.4}  iou {:.4}", rep.ap, rep.f1, rep.iou);
    Ok(())
}

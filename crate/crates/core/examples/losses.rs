//! Loss terms on hand-made masks.

use dirl::losses::{aux_attention_loss, bce_loss, ssim_loss, total_loss, SsimWindow};
use dirl::MaskTensor;

fn square(size: usize, lo: usize, hi: usize, inside: f64, outside: f64) -> MaskTensor {
    let v = (0..size * size)
        .map(|i| {
            let (y, x) = (i / size, i % size);
            if (lo..hi).contains(&y) && (lo..hi).contains(&x) { inside } else { outside }
        })
        .collect();
    MaskTensor::from_values(v, size, size).unwrap()
}

fn main() -> dirl::Result<()> {
    let gt = square(16, 4, 12, 1.0, 0.0);
    let window = SsimWindow::default();
    for (name, pred) in [
        ("good", square(16, 4, 12, 0.9, 0.1)),
        ("shifted", square(16, 6, 14, 0.9, 0.1)),
        ("flat", square(16, 0, 0, 0.5, 0.5)),
    ] {
        let bce = bce_loss(&pred, &gt)?.to_scalar::<f64>()?;
        let ssim = ssim_loss(&pred, &gt, window)?.to_scalar::<f64>()?;
        println!("{name:>8}: bce {bce:9.3}  ssim {ssim:.4}");
    }
    let attn = vec![square(16, 4, 12, 0.8, 0.2), square(8, 2, 6, 0.7, 0.3)];
    let aux = aux_attention_loss(&attn, &gt)?.to_scalar::<f64>()?;
    let total = total_loss(&square(16, 4, 12, 0.9, 0.1), &attn, &gt, 0.1, window)?;
    println!("aux {aux:.3}  total {:?}", total.breakdown);
    Ok(())
}

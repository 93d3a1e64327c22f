//! AP, F1 and IoU on a few synthetic predictions.

use dirl::metrics::{evaluate_dataset, image_metrics};
use dirl::MaskTensor;

fn main() -> dirl::Result<()> {
    let n = 32;
    let gt: Vec<f64> = (0..n * n).map(|i| if (i / n) < 12 { 1.0 } else { 0.0 }).collect();
    let gt = MaskTensor::from_values(gt, n, n)?;
    // A soft ramp that crosses 0.5 a few rows past the true boundary.
    let ramp: Vec<f64> = (0..n * n).map(|i| 1.0 / (1.0 + (((i / n) as f64 - 14.0) / 2.0).exp())).collect();
    let ramp = MaskTensor::from_values(ramp, n, n)?;
    let flat = MaskTensor::from_values(vec![0.3; n * n], n, n)?;

    for (name, p) in [("ramp", &ramp), ("flat", &flat), ("exact", &gt)] {
        let m = image_metrics(p, &gt, 0.5)?;
        println!("{name:>6}: ap {:.4}  f1 {:.4}  iou {:.4}", m.ap, m.f1, m.iou);
    }
    let report = evaluate_dataset(&[ramp, flat, gt.clone()], &[gt.clone(), gt.clone(), gt])?;
    println!("mean:   ap {:.4}  f1 {:.4}  iou {:.4}", report.ap, report.f1, report.iou);
    Ok(())
}

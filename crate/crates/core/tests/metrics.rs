mod common;

use common::mask;
use dirl::metrics::{
    average_precision, average_precision_values, confusion, evaluate_dataset, f_measure, image_metrics, iou,
    write_metrics_csv,
};
use dirl::Error;
use proptest::prelude::*;

/// Pixel-count oracle: threshold sweep evaluated independently per level.
fn oracle_ap(pred: &[f64], gt: &[bool]) -> f64 {
    let pos = gt.iter().filter(|&&g| g).count() as f64;
    let pr = |t: f64| {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (&p, &g) in pred.iter().zip(gt) {
            if p >= t {
                if g {
                    tp += 1.0
                } else {
                    fp += 1.0
                }
            }
        }
        let precision = if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) };
        (precision, tp / pos)
    };
    let mut ap = 0.0;
    for n in 0..256 {
        let (p, r) = pr(n as f64 / 255.0);
        let r_next = if n == 255 { 0.0 } else { pr((n + 1) as f64 / 255.0).1 };
        ap += (r - r_next) * p;
    }
    ap
}

fn oracle_counts(pred: &[f64], gt: &[bool], t: f64) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        match (p >= t, g) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    (tp, fp, fn_)
}

fn pred_value() -> impl Strategy<Value = f64> {
    prop_oneof![0.0..=1.0f64, (0u32..=255).prop_map(|n| n as f64 / 255.0)]
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (
        prop::collection::vec(pred_value(), 256),
        prop::collection::vec(any::<bool>(), 256).prop_filter("nonempty gt", |g| g.iter().any(|&b| b)),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn metrics_match_pixel_count_oracle((p, g) in pair()) {
        let gt: Vec<f64> = g.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let (pm, gm) = (mask(&p, 16, 16), mask(&gt, 16, 16));
        prop_assert!((average_precision(&pm, &gm).unwrap() - oracle_ap(&p, &g)).abs() < 1e-9);
        let (tp, fp, fn_) = oracle_counts(&p, &g, 0.5);
        let precision = if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) };
        let recall = tp / (tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        prop_assert!((f_measure(&pm, &gm, 1.0, 0.5).unwrap() - f1).abs() < 1e-9);
        prop_assert!((iou(&pm, &gm, 0.5).unwrap() - tp / (tp + fp + fn_)).abs() < 1e-9);
    }

    #[test]
    fn f1_is_a_function_of_iou((p, g) in pair()) {
        let gt: Vec<f64> = g.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let m = image_metrics(&mask(&p, 16, 16), &mask(&gt, 16, 16), 0.5).unwrap();
        prop_assert!((m.f1 - 2.0 * m.iou / (1.0 + m.iou)).abs() < 1e-12);
    }

    #[test]
    fn ap_lies_in_unit_interval((p, g) in pair()) {
        let ap = average_precision_values(&p, &g).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
    }
}

#[test]
fn perfect_prediction_scores_one() {
    let gt = common::binary(3, 64);
    let m = image_metrics(&mask(&gt, 8, 8), &mask(&gt, 8, 8), 0.5).unwrap();
    assert_eq!((m.ap, m.f1, m.iou), (1.0, 1.0, 1.0));
}

#[test]
fn uniform_prediction_ap_is_prevalence() {
    let gt = common::binary(4, 64);
    let prevalence = gt.iter().sum::<f64>() / 64.0;
    let ap = average_precision(&mask(&[0.5; 64], 8, 8), &mask(&gt, 8, 8)).unwrap();
    assert!((ap - prevalence).abs() < 1e-12);
}

#[test]
fn inverted_prediction_has_zero_overlap() {
    let gt = common::binary(5, 64);
    let inv: Vec<f64> = gt.iter().map(|v| 1.0 - v).collect();
    let c = confusion(&mask(&inv, 8, 8), &mask(&gt, 8, 8), 0.5).unwrap();
    assert_eq!(c.tp, 0);
    assert_eq!(iou(&mask(&inv, 8, 8), &mask(&gt, 8, 8), 0.5).unwrap(), 0.0);
}

#[test]
fn empty_ground_truth_and_soft_ground_truth_are_errors() {
    let p = mask(&[0.3; 16], 4, 4);
    assert!(matches!(average_precision(&p, &mask(&[0.0; 16], 4, 4)), Err(Error::EmptyGroundTruth)));
    assert!(matches!(average_precision(&p, &mask(&[0.5; 16], 4, 4)), Err(Error::Value(_))));
    assert!(matches!(iou(&p, &mask(&[1.0; 4], 2, 2), 0.5), Err(Error::Shape(_))));
}

#[test]
fn dataset_report_and_csv() {
    let gts: Vec<_> = (0..3).map(|s| mask(&common::binary(10 + s, 16), 4, 4)).collect();
    let preds: Vec<_> = (0..3).map(|s| mask(&common::values(20 + s, 16, 0.0, 1.0), 4, 4)).collect();
    let report = evaluate_dataset(&preds, &gts).unwrap();
    let mean = report.per_image.iter().map(|m| m.iou).sum::<f64>() / 3.0;
    assert!((report.iou - mean).abs() < 1e-15);
    assert!(matches!(evaluate_dataset(&preds[..2], &gts), Err(Error::Length(_))));

    let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &report, &ids).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "image_id,ap,f1,iou");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("a,"));
    assert!(lines[4].starts_with("mean,"));
}

//! Evaluation metrics: AP over a 256-level threshold sweep, F-measure and IoU.
//!
//! A pixel is predicted positive when `pred >= threshold`. The sweep uses
//! thresholds `t_n = n / 255` for `n = 0..=255` and
//! `AP = sum_n (R_n - R_{n+1}) * P_n` with `R_256 = 0`; recall therefore
//! falls from 1 at `t_0 = 0` to 0 past the last threshold. Precision with no
//! predicted positives counts as 1.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{ImageMetrics, MaskTensor, MetricReport};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const AP_LEVELS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// Recall; 1 when there are no positives to find.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f_measure(&self, beta: f64) -> f64 {
        let positives = self.tp + self.fn_;
        if positives == 0 {
            return if self.fp == 0 { 1.0 } else { 0.0 };
        }
        let (p, r) = (self.precision(), self.recall());
        let b2 = beta * beta;
        let den = b2 * p + r;
        if den == 0.0 {
            0.0
        } else {
            (1.0 + b2) * p * r / den
        }
    }

    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }
}

fn binary_gt(gt: &[f64]) -> Result<Vec<bool>> {
    gt.iter()
        .map(|&v| {
            if v == 1.0 {
                Ok(true)
            } else if v == 0.0 {
                Ok(false)
            } else {
                Err(Error::Value(format!("ground truth must be binary, found {v}")))
            }
        })
        .collect()
}

fn values(pred: &MaskTensor, gt: &MaskTensor) -> Result<(Vec<f64>, Vec<bool>)> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok((pred.values()?, binary_gt(&gt.values()?)?))
}

pub fn confusion_values(pred: &[f64], gt: &[bool], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p >= threshold, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

pub fn confusion(pred: &MaskTensor, gt: &MaskTensor, threshold: f64) -> Result<ConfusionCounts> {
    let (p, g) = values(pred, gt)?;
    Ok(confusion_values(&p, &g, threshold))
}

fn ap_threshold(n: usize) -> f64 {
    n as f64 / 255.0
}

/// Largest `n` with `p >= n / 255`, or `None` when `p < 0`.
fn top_level(p: f64) -> Option<usize> {
    if !(p >= 0.0) {
        return None;
    }
    let mut n = ((p * 255.0).floor() as usize).min(AP_LEVELS - 1);
    while n + 1 < AP_LEVELS && p >= ap_threshold(n + 1) {
        n += 1;
    }
    while p < ap_threshold(n) {
        n -= 1;
    }
    Some(n)
}

pub fn average_precision_values(pred: &[f64], gt: &[bool]) -> Result<f64> {
    let positives = gt.iter().filter(|&&g| g).count() as u64;
    if positives == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    // hist[n]: pixels whose highest passed threshold is t_n
    let mut hist_pos = [0u64; AP_LEVELS];
    let mut hist_neg = [0u64; AP_LEVELS];
    for (&p, &g) in pred.iter().zip(gt) {
        if let Some(n) = top_level(p) {
            if g {
                hist_pos[n] += 1;
            } else {
                hist_neg[n] += 1;
            }
        }
    }
    let mut tp = [0u64; AP_LEVELS + 1];
    let mut fp = [0u64; AP_LEVELS + 1];
    for n in (0..AP_LEVELS).rev() {
        tp[n] = tp[n + 1] + hist_pos[n];
        fp[n] = fp[n + 1] + hist_neg[n];
    }
    let recall = |n: usize| tp[n] as f64 / positives as f64;
    let mut ap = 0.0;
    for n in 0..AP_LEVELS {
        let precision = if tp[n] + fp[n] == 0 {
            1.0
        } else {
            tp[n] as f64 / (tp[n] + fp[n]) as f64
        };
        let r_next = if n + 1 == AP_LEVELS { 0.0 } else { recall(n + 1) };
        ap += (recall(n) - r_next) * precision;
    }
    Ok(ap)
}

pub fn average_precision(pred: &MaskTensor, gt: &MaskTensor) -> Result<f64> {
    let (p, g) = values(pred, gt)?;
    average_precision_values(&p, &g)
}

pub fn f_measure(pred: &MaskTensor, gt: &MaskTensor, beta: f64, threshold: f64) -> Result<f64> {
    Ok(confusion(pred, gt, threshold)?.f_measure(beta))
}

pub fn iou(pred: &MaskTensor, gt: &MaskTensor, threshold: f64) -> Result<f64> {
    Ok(confusion(pred, gt, threshold)?.iou())
}

/// AP, F1 and IoU of one image.
pub fn image_metrics(pred: &MaskTensor, gt: &MaskTensor, threshold: f64) -> Result<ImageMetrics> {
    let (p, g) = values(pred, gt)?;
    let c = confusion_values(&p, &g, threshold);
    Ok(ImageMetrics {
        ap: average_precision_values(&p, &g)?,
        f1: c.f_measure(1.0),
        iou: c.iou(),
    })
}

pub fn evaluate_dataset(preds: &[MaskTensor], gts: &[MaskTensor]) -> Result<MetricReport> {
    evaluate_dataset_at(preds, gts, DEFAULT_THRESHOLD)
}

pub fn evaluate_dataset_at(preds: &[MaskTensor], gts: &[MaskTensor], threshold: f64) -> Result<MetricReport> {
    if preds.len() != gts.len() {
        return Err(Error::Length(format!(
            "{} predictions for {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    let per_image = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| image_metrics(p, g, threshold))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_per_image(per_image, threshold)
}

/// CSV with header `image_id,ap,f1,iou`, one row per image and a final
/// `mean` row.
pub fn write_metrics_csv<W: Write>(out: &mut W, report: &MetricReport, ids: &[String]) -> std::io::Result<()> {
    writeln!(out, "image_id,ap,f1,iou")?;
    for (i, m) in report.per_image.iter().enumerate() {
        let id = ids.get(i).cloned().unwrap_or_else(|| i.to_string());
        writeln!(out, "{id},{},{},{}", m.ap, m.f1, m.iou)?;
    }
    writeln!(out, "mean,{},{},{}", report.ap, report.f1, report.iou)
}

pub fn save_metrics_csv(path: &Path, report: &MetricReport, ids: &[String]) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, report, ids).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

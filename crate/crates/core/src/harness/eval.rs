use std::path::{Path, PathBuf};

use super::checkpoint::load_checkpoint;
use crate::datagen::{load_manifest, save_mask_png, CompositeSample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, save_metrics_csv};
use crate::model::Model;
use crate::nn::Mode;
use crate::types::{ImageTensor, MaskTensor, MetricReport};

/// Eval-mode masks, one per image, each `(1, 1, H, W)`.
pub fn predict(model: &Model, images: &[&ImageTensor]) -> Result<Vec<MaskTensor>> {
    images.iter().map(|img| model.predict(img)).collect()
}

pub fn evaluate(model: &Model, samples: &[CompositeSample]) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Length("no samples to evaluate".into()));
    }
    let images: Vec<&ImageTensor> = samples.iter().map(|s| &s.image).collect();
    let preds = predict(model, &images)?;
    let gts: Vec<MaskTensor> = samples.iter().map(|s| s.mask.clone()).collect();
    evaluate_dataset(&preds, &gts)
}

/// Loads a checkpoint and a manifest, evaluates, and optionally writes the
/// metrics CSV.
pub fn evaluate_checkpoint(ckpt: &Path, manifest: &Path, csv: Option<&Path>) -> Result<MetricReport> {
    let model = load_checkpoint(ckpt)?;
    let samples = load_manifest(manifest)?;
    let report = evaluate(&model, &samples)?;
    if let Some(csv) = csv {
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        save_metrics_csv(csv, &report, &ids)?;
    }
    Ok(report)
}

/// Writes the spatial attention maps of one image as grayscale PNGs named
/// `{stem}_A{k}.png`, each at its level's resolution.
pub fn export_attention(model: &Model, image: &ImageTensor, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let out = model.forward(image, Mode::Eval)?;
    if out.attention.is_empty() {
        return Err(Error::Config("model has no attention stage".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    out.attention
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let path = dir.join(format!("{stem}_A{}.png", k + 1));
            save_mask_png(&path, &a.get(0)?)?;
            Ok(path)
        })
        .collect()
}

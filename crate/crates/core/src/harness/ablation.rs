use std::fmt::Write as _;
use std::path::Path;

use super::config::TrainConfig;
use super::eval::evaluate;
use super::train::train;
use crate::datagen::CompositeSample;
use crate::error::{Error, Result};
use crate::types::{AttentionVariant, DecoderVariant, FusionVariant, MetricReport, ModelConfig};

/// One configuration of the ablation matrix, from the plain UNet (row 1) to
/// the full model (row 10).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationRow {
    pub id: usize,
    pub transition: FusionVariant,
    pub refine: AttentionVariant,
    pub decoder: DecoderVariant,
}

impl AblationRow {
    pub const ALL: [AblationRow; 10] = {
        use AttentionVariant as A;
        use DecoderVariant as De;
        use FusionVariant as F;
        const fn r(id: usize, transition: F, refine: A, decoder: De) -> AblationRow {
            AblationRow { id, transition, refine, decoder }
        }
        [
            r(1, F::None, A::None, De::Reg),
            r(2, F::None, A::None, De::GgdSim),
            r(3, F::None, A::None, De::Ggd),
            r(4, F::Aim, A::None, De::Ggd),
            r(5, F::BfiDown, A::None, De::Ggd),
            r(6, F::BfiUp, A::None, De::Ggd),
            r(7, F::Bfi, A::None, De::Ggd),
            r(8, F::None, A::Da, De::Ggd),
            r(9, F::None, A::Mda, De::Ggd),
            r(10, F::Bfi, A::Mda, De::Ggd),
        ]
    };

    pub fn get(id: usize) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::Config(format!("ablation rows are numbered 1-10, got {id}")))
    }

    /// Parses `"1,3,10"` or `"all"`.
    pub fn parse_list(list: &str) -> Result<Vec<Self>> {
        if list.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        list.split(',')
            .map(|s| {
                let id = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad ablation row {s:?}")))?;
                Self::get(id)
            })
            .collect()
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        base.clone().with_variants(self.transition, self.refine, self.decoder)
    }
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub row: AblationRow,
    pub num_params: usize,
    pub final_loss: f64,
    pub report: MetricReport,
}

/// Trains and evaluates each row with the same seed and data.
pub fn run_ablation(
    rows: &[AblationRow],
    base: &ModelConfig,
    cfg: &TrainConfig,
    train_data: &[CompositeSample],
    eval_data: &[CompositeSample],
    mut progress: impl FnMut(&AblationResult),
) -> Result<Vec<AblationResult>> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let outcome = train(&row.apply(base), cfg, train_data)?;
        let result = AblationResult {
            row: *row,
            num_params: outcome.model.num_params(),
            final_loss: outcome.final_loss().map_or(f64::NAN, |l| l.total),
            report: evaluate(&outcome.model, eval_data)?,
        };
        progress(&result);
        out.push(result);
    }
    Ok(out)
}

fn dash<T: ToString>(v: T, none: bool) -> String {
    if none {
        "-".into()
    } else {
        v.to_string()
    }
}

fn cells(r: &AblationResult) -> [String; 8] {
    [
        r.row.id.to_string(),
        dash(r.row.transition, r.row.transition == FusionVariant::None),
        dash(r.row.refine, r.row.refine == AttentionVariant::None),
        r.row.decoder.to_string(),
        r.num_params.to_string(),
        format!("{:.2}", 100.0 * r.report.ap),
        format!("{:.4}", r.report.f1),
        format!("{:.2}", 100.0 * r.report.iou),
    ]
}

const HEADER: [&str; 8] = ["#", "Transition", "Refine", "Decoder", "Params", "AP(%)", "F1", "IoU(%)"];

/// Aligned plain-text table.
pub fn render_table(results: &[AblationResult]) -> String {
    let rows: Vec<[String; 8]> = results.iter().map(cells).collect();
    let mut width = HEADER.map(str::len);
    for r in &rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    let line = |s: &mut String, cols: Vec<&str>| {
        let padded: Vec<String> = cols.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(s, "{}", padded.join("  ").trim_end());
    };
    line(&mut s, HEADER.to_vec());
    let _ = writeln!(s, "{}", "-".repeat(width.iter().sum::<usize>() + 2 * (width.len() - 1)));
    for r in &rows {
        line(&mut s, r.iter().map(String::as_str).collect());
    }
    s
}

/// CSV `id,transition,refine,decoder,params,final_loss,ap,f1,iou` with raw
/// fractions.
pub fn write_ablation_csv(path: &Path, results: &[AblationResult]) -> Result<()> {
    let mut s = String::from("id,transition,refine,decoder,params,final_loss,ap,f1,iou\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.row.id,
            r.row.transition,
            r.row.refine,
            r.row.decoder,
            r.num_params,
            r.final_loss,
            r.report.ap,
            r.report.f1,
            r.report.iou
        );
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

//! Command-line front end. Usage errors exit with status 2, runtime errors
//! with status 1.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::datagen::{generate, load_manifest, load_rgb_png, save_mask_png, write_manifest};
use crate::error::{Error, Result};
use crate::harness::{
    evaluate_checkpoint, export_attention, load_checkpoint, render_table, run_ablation, save_checkpoint,
    train_model, write_ablation_csv, write_train_log, AblationRow, TrainConfig,
};
use crate::harness::train::TRAIN_DTYPE;
use crate::model::Model;
use crate::types::{parse_kv, parse_size, AttentionVariant, DecoderVariant, FusionVariant, ModelConfig};

#[derive(Debug, Parser)]
#[command(name = "dirl", version, about = "Inharmonious region localization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic composite dataset.
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        /// `64` or `HxW`.
        #[arg(long, value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus a CSV training log.
    Train {
        /// Manifest file or the directory holding it.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Training log; defaults to the checkpoint path with a `.log.csv` suffix.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate a checkpoint and write the per-image metrics CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to `metrics.csv` next to the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one mask PNG per input image.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        /// PNG files or directories of PNG files.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate rows of the ablation matrix.
    Ablate {
        /// Comma-separated row ids (1-10) or `all`.
        #[arg(long, default_value = "all")]
        rows: String,
        #[arg(long)]
        data: PathBuf,
        /// Held-out set; the training set is evaluated when absent.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Directory for `ablation.csv` and `ablation.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Dump the spatial attention maps A_1..A_5 of each input as PNGs.
    ExportAttn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// `key = value` file with model and/or training settings; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub fusion: Option<FusionVariant>,
    #[arg(long)]
    pub attention: Option<AttentionVariant>,
    #[arg(long)]
    pub decoder: Option<DecoderVariant>,
    #[arg(long)]
    pub base_width: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Merges the optional config file with the flags. The model's input size
/// follows the training data unless the file pins it.
fn load_configs(
    model: &ModelArgs,
    train: &TrainArgs,
    data: &[crate::datagen::CompositeSample],
) -> Result<(ModelConfig, TrainConfig)> {
    let mut kv = match &model.config {
        Some(p) => parse_kv(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => Default::default(),
    };
    if let Some(s) = data.first() {
        let (h, w) = s.image.size();
        kv.entry("input_size".to_string()).or_insert(format!("{h}x{w}"));
    }
    if model.base_width.is_some() {
        kv.remove("channels");
    }
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            kv.insert(k.to_string(), v);
        }
    };
    set("fusion_variant", model.fusion.map(|v| v.to_string()));
    set("attention_variant", model.attention.map(|v| v.to_string()));
    set("decoder_variant", model.decoder.map(|v| v.to_string()));
    set("base_width", model.base_width.map(|v| v.to_string()));
    set("epochs", train.epochs.map(|v| v.to_string()));
    set("batch_size", train.batch_size.map(|v| v.to_string()));
    set("lr", train.lr.map(|v| v.to_string()));
    set("seed", train.seed.map(|v| v.to_string()));
    Ok((ModelConfig::from_kv(&kv)?, TrainConfig::from_kv(&kv)?))
}

fn png_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::Length("no input images found".into()));
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { seed, count, size, out } => {
            let samples = generate(seed, count, size)?;
            let path = write_manifest(&samples, &out)?;
            println!("wrote {} samples to {}", samples.len(), path.display());
        }
        Command::Train { data, out, log, model, train } => {
            let samples = load_manifest(&data)?;
            let (model_cfg, train_cfg) = load_configs(&model, &train, &samples)?;
            let mut net = Model::new(model_cfg, TRAIN_DTYPE, train_cfg.seed)?;
            let per_epoch = samples.len().div_ceil(train_cfg.batch_size);
            let rows = train_model(&mut net, &train_cfg, &samples, |r| {
                if r.step % per_epoch == 0 {
                    eprintln!("epoch {:>4}  lr {:.3e}  total {:.4}", r.epoch, r.lr, r.loss.total);
                }
            })?;
            save_checkpoint(&net, &out)?;
            let log = log.unwrap_or_else(|| {
                let mut s = out.clone().into_os_string();
                s.push(".log.csv");
                PathBuf::from(s)
            });
            write_train_log(&log, &rows)?;
            println!("checkpoint {}  log {}", out.display(), log.display());
        }
        Command::Eval { ckpt, data, out } => {
            let out = out.unwrap_or_else(|| crate::datagen::manifest_path(&data).with_file_name("metrics.csv"));
            let r = evaluate_checkpoint(&ckpt, &data, Some(&out))?;
            println!("ap {:.4}  f1 {:.4}  iou {:.4}  ({} images) -> {}", r.ap, r.f1, r.iou, r.per_image.len(), out.display());
        }
        Command::Predict { ckpt, input, out } => {
            let model = load_checkpoint(&ckpt)?;
            let files = png_inputs(&input)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for f in &files {
                let mask = model.predict(&load_rgb_png(f)?)?;
                save_mask_png(&out.join(format!("{}_mask.png", stem(f))), &mask)?;
            }
            println!("wrote {} masks to {}", files.len(), out.display());
        }
        Command::Ablate { rows, data, eval_data, out, model, train } => {
            let rows = AblationRow::parse_list(&rows)?;
            let train_set = load_manifest(&data)?;
            let (base, train_cfg) = load_configs(&model, &train, &train_set)?;
            let eval_set = match &eval_data {
                Some(p) => load_manifest(p)?,
                None => train_set.clone(),
            };
            let results = run_ablation(&rows, &base, &train_cfg, &train_set, &eval_set, |r| {
                eprintln!("row {:>2}: iou {:.4}", r.row.id, r.report.iou);
            })?;
            let table = render_table(&results);
            print!("{table}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_ablation_csv(&dir.join("ablation.csv"), &results)?;
                let txt = dir.join("ablation.txt");
                std::fs::write(&txt, &table).map_err(|e| Error::io(&txt, e))?;
            }
        }
        Command::ExportAttn { ckpt, input, out } => {
            let model = load_checkpoint(&ckpt)?;
            let mut n = 0;
            for f in png_inputs(&input)? {
                n += export_attention(&model, &load_rgb_png(&f)?, &out, &stem(&f))?.len();
            }
            println!("wrote {n} attention maps to {}", out.display());
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().lines().next().unwrap_or("unknown"));
            1
        }
    }
}

//! Shared tensor wrappers, the feature-pyramid shape contract and the model
//! configuration (which also encodes the ablation dimensions).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// Number of pyramid levels; the architecture is fixed at five.
pub const LEVELS: usize = 5;

/// Input sides must be divisible by this (four halvings).
pub const SIZE_DIVISOR: usize = 16;

fn check_unit_range(t: &Tensor, what: &str) -> Result<()> {
    let flat = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    if let Some(v) = flat.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Value(format!("{what} value {v} outside [0, 1]")));
    }
    Ok(())
}

/// A batch of RGB images `(B, 3, H, W)` with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        let (_, c, h, w) = t
            .dims4()
            .map_err(|_| Error::shape(format!("image must be 4-D, got {:?}", t.dims())))?;
        if c != 3 {
            return Err(Error::shape(format!("image must have 3 channels, got {c}")));
        }
        if h % SIZE_DIVISOR != 0 || w % SIZE_DIVISOR != 0 {
            return Err(Error::shape(format!(
                "image size {h}x{w} not divisible by {SIZE_DIVISOR}"
            )));
        }
        check_unit_range(&t, "image")?;
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.0.dims()[2], self.0.dims()[3])
    }

    /// Stack single images (each `(1, 3, H, W)`) into one batch.
    pub fn stack(images: &[&ImageTensor]) -> Result<Self> {
        let parts: Vec<&Tensor> = images.iter().map(|i| &i.0).collect();
        Ok(Self(Tensor::cat(&parts, 0)?))
    }
}

/// A batch of single-channel soft masks `(B, 1, h, w)` with values in `[0, 1]`.
///
/// Ground truth, predictions and attention maps all use this type.
#[derive(Debug, Clone)]
pub struct MaskTensor(Tensor);

impl MaskTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        let (_, c, _, _) = t
            .dims4()
            .map_err(|_| Error::shape(format!("mask must be 4-D, got {:?}", t.dims())))?;
        if c != 1 {
            return Err(Error::shape(format!("mask must have 1 channel, got {c}")));
        }
        check_unit_range(&t, "mask")?;
        Ok(Self(t))
    }

    /// Wraps a tensor whose range is guaranteed by construction (sigmoid
    /// outputs, resized binary masks).
    pub(crate) fn from_trusted(t: Tensor) -> Self {
        Self(t)
    }

    /// Single `(1, 1, h, w)` mask from row-major values.
    pub fn from_values(values: Vec<f64>, h: usize, w: usize) -> Result<Self> {
        if values.len() != h * w {
            return Err(Error::shape(format!(
                "{} values for a {h}x{w} mask",
                values.len()
            )));
        }
        Self::new(Tensor::from_vec(values, (1, 1, h, w), &Device::Cpu)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.0.dims()[2], self.0.dims()[3])
    }

    pub fn dims(&self) -> &[usize] {
        self.0.dims()
    }

    /// All values as `f64`, row-major over (batch, h, w).
    pub fn values(&self) -> Result<Vec<f64>> {
        Ok(self.0.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
    }

    pub fn is_binary(&self) -> Result<bool> {
        Ok(self.values()?.iter().all(|&v| v == 0.0 || v == 1.0))
    }

    /// The `i`-th mask of the batch as a `(1, 1, h, w)` mask.
    pub fn get(&self, i: usize) -> Result<MaskTensor> {
        Ok(MaskTensor(self.0.narrow(0, i, 1)?))
    }
}

/// Five feature maps `(B, c_k, H / 2^(k-1), W / 2^(k-1))`, shallowest first.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
}

impl FeaturePyramid {
    /// Wraps levels without checking; see [`validate_pyramid`].
    pub fn from_levels(levels: Vec<Tensor>) -> Self {
        Self { levels }
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Tensor {
        &self.levels[k]
    }

    pub fn into_levels(self) -> Vec<Tensor> {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// `(channels, height, width)` per level.
    pub fn shapes(&self) -> Vec<(usize, usize, usize)> {
        self.levels
            .iter()
            .map(|t| {
                let d = t.dims();
                (d[1], d[2], d[3])
            })
            .collect()
    }
}

/// Checks level count, exact halving, batch agreement and channel counts
/// against `cfg`.
pub fn validate_pyramid(p: &FeaturePyramid, cfg: &ModelConfig) -> Result<()> {
    check_structure(p, &cfg.channels, Some(cfg.input_size))
}

/// Structural check used by every stage. Without `input_size`, level 1's
/// spatial size is the reference.
pub(crate) fn check_structure(
    p: &FeaturePyramid,
    channels: &[usize; LEVELS],
    input_size: Option<(usize, usize)>,
) -> Result<()> {
    if p.len() != LEVELS {
        return Err(Error::shape(format!(
            "pyramid has {} levels, expected {LEVELS}",
            p.len()
        )));
    }
    let mut batch = None;
    let mut reference = input_size;
    for (k, t) in p.levels().iter().enumerate() {
        let (b, c, lh, lw) = t.dims4().map_err(|_| {
            Error::shape(format!("level {}: expected 4-D, got {:?}", k + 1, t.dims()))
        })?;
        let (h, w) = *reference.get_or_insert((lh, lw));
        if h % SIZE_DIVISOR != 0 || w % SIZE_DIVISOR != 0 {
            return Err(Error::shape(format!(
                "level 1 size {h}x{w} not divisible by {SIZE_DIVISOR}"
            )));
        }
        let expected = (channels[k], h >> k, w >> k);
        if (c, lh, lw) != expected {
            return Err(Error::shape(format!(
                "level {}: expected (c, h, w) = {:?}, got {:?}",
                k + 1,
                expected,
                (c, lh, lw)
            )));
        }
        match batch {
            None => batch = Some(b),
            Some(b0) if b0 != b => {
                return Err(Error::shape(format!(
                    "level {}: batch {b} differs from level 1 batch {b0}",
                    k + 1
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

macro_rules! variant_enum {
    ($(#[$m:meta])* $name:ident { $($v:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($v),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$v),+];
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$v => $s),+ })
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_uppercase().as_str() {
                    $($s => Ok($name::$v),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

variant_enum!(
    /// Transition-stage block.
    FusionVariant {
        None => "NONE",
        Aim => "AIM",
        Bfi => "BFI",
        BfiUp => "BFI_UP",
        BfiDown => "BFI_DOWN",
    }
);

variant_enum!(
    /// Refinement-stage block. `Da` and `Mda` compute the same thing; only
    /// `Mda` supervises the spatial attention maps.
    AttentionVariant {
        None => "NONE",
        Da => "DA",
        Mda => "MDA",
    }
);

variant_enum!(
    /// Decoder block.
    DecoderVariant {
        Reg => "REG",
        GgdSim => "GGD_SIM",
        Ggd => "GGD",
    }
);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub channels: [usize; LEVELS],
    pub fusion_variant: FusionVariant,
    pub attention_variant: AttentionVariant,
    pub decoder_variant: DecoderVariant,
    pub input_size: (usize, usize),
    pub base_width: usize,
    /// Residual blocks in encoder stages 1-4 (stage 5 always has one).
    pub stage_blocks: [usize; 4],
    /// Channel-attention squeeze ratio.
    pub squeeze_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn channel_schedule(base_width: usize) -> [usize; LEVELS] {
        [1, 2, 4, 8, 8].map(|m| m * base_width)
    }

    /// Desk-scale full model: width 8, 64x64, one block per stage.
    pub fn desk() -> Self {
        Self {
            channels: Self::channel_schedule(8),
            fusion_variant: FusionVariant::Bfi,
            attention_variant: AttentionVariant::Mda,
            decoder_variant: DecoderVariant::Ggd,
            input_size: (64, 64),
            base_width: 8,
            stage_blocks: [1, 1, 1, 1],
            squeeze_ratio: 2,
        }
    }

    /// ResNet34-width trunk with (3, 4, 6, 3) blocks.
    pub fn full_scale(input_size: (usize, usize)) -> Self {
        Self {
            channels: Self::channel_schedule(64),
            input_size,
            base_width: 64,
            stage_blocks: [3, 4, 6, 3],
            squeeze_ratio: 16,
            ..Self::desk()
        }
    }

    pub fn with_variants(
        mut self,
        fusion: FusionVariant,
        attention: AttentionVariant,
        decoder: DecoderVariant,
    ) -> Self {
        self.fusion_variant = fusion;
        self.attention_variant = attention;
        self.decoder_variant = decoder;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.base_width == 0 || self.squeeze_ratio == 0 {
            return Err(Error::Config("base_width and squeeze_ratio must be positive".into()));
        }
        if self.stage_blocks.contains(&0) {
            return Err(Error::Config("every encoder stage needs at least one block".into()));
        }
        if self.attention_variant != AttentionVariant::None {
            if let Some(c) = self.channels.iter().find(|&&c| c < self.squeeze_ratio) {
                return Err(Error::Config(format!(
                    "squeeze ratio {} leaves no hidden units for {c} channels",
                    self.squeeze_ratio
                )));
            }
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % SIZE_DIVISOR != 0 || w % SIZE_DIVISOR != 0 {
            return Err(Error::shape(format!(
                "input size {h}x{w} not divisible by {SIZE_DIVISOR}"
            )));
        }
        Ok(())
    }

    /// `key = value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "channels = {}\nfusion_variant = {}\nattention_variant = {}\ndecoder_variant = {}\n\
             input_size = {}x{}\nbase_width = {}\nstage_blocks = {}\nsqueeze_ratio = {}\n",
            join(&self.channels),
            self.fusion_variant,
            self.attention_variant,
            self.decoder_variant,
            self.input_size.0,
            self.input_size.1,
            self.base_width,
            join(&self.stage_blocks),
            self.squeeze_ratio,
        )
    }

    pub const KEYS: &'static [&'static str] = &[
        "channels",
        "fusion_variant",
        "attention_variant",
        "decoder_variant",
        "input_size",
        "base_width",
        "stage_blocks",
        "squeeze_ratio",
    ];

    /// Builds a config from parsed key-value pairs; absent keys keep the
    /// desk-scale defaults. When `base_width` is given without `channels`,
    /// the channel schedule follows it.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::desk();
        if let Some(v) = kv.get("base_width") {
            cfg.base_width = parse_num(v, "base_width")?;
            cfg.channels = Self::channel_schedule(cfg.base_width);
        }
        if let Some(v) = kv.get("channels") {
            cfg.channels = parse_list::<LEVELS>(v, "channels")?;
        }
        if let Some(v) = kv.get("fusion_variant") {
            cfg.fusion_variant = v.parse()?;
        }
        if let Some(v) = kv.get("attention_variant") {
            cfg.attention_variant = v.parse()?;
        }
        if let Some(v) = kv.get("decoder_variant") {
            cfg.decoder_variant = v.parse()?;
        }
        if let Some(v) = kv.get("input_size") {
            cfg.input_size = parse_size(v)?;
        }
        if let Some(v) = kv.get("stage_blocks") {
            cfg.stage_blocks = parse_list::<4>(v, "stage_blocks")?;
        }
        if let Some(v) = kv.get("squeeze_ratio") {
            cfg.squeeze_ratio = parse_num(v, "squeeze_ratio")?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// duplicate keys and lines without `=` are errors.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().to_string();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key}", i + 1)));
        }
    }
    Ok(out)
}

pub(crate) fn parse_num<T: FromStr>(v: &str, key: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<const N: usize>(v: &str, key: &str) -> Result<[usize; N]> {
    let items = v
        .split(',')
        .map(|s| parse_num::<usize>(s, key))
        .collect::<Result<Vec<_>>>()?;
    items
        .try_into()
        .map_err(|_| Error::Config(format!("{key}: expected {N} comma-separated values")))
}

/// `64`, `64x48` or `64,48`.
pub fn parse_size(v: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = v.split(['x', 'X', ',']).collect();
    match parts.as_slice() {
        [s] => {
            let n = parse_num(s, "size")?;
            Ok((n, n))
        }
        [h, w] => Ok((parse_num(h, "size")?, parse_num(w, "size")?)),
        _ => Err(Error::Config(format!("cannot parse size {v:?}"))),
    }
}

/// Per-image evaluation triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMetrics {
    pub ap: f64,
    pub f1: f64,
    pub iou: f64,
}

/// Dataset-level metrics: arithmetic means of the per-image values.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub ap: f64,
    pub f1: f64,
    pub iou: f64,
    pub per_image: Vec<ImageMetrics>,
    pub threshold: f64,
}

impl MetricReport {
    pub fn from_per_image(per_image: Vec<ImageMetrics>, threshold: f64) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Length("no images to average".into()));
        }
        let n = per_image.len() as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            ap: mean(|m| m.ap),
            f1: mean(|m| m.f1),
            iou: mean(|m| m.iou),
            per_image,
            threshold,
        })
    }
}

//! Synthetic composite images with a color/lighting-perturbed foreground.
//!
//! Each sample starts from a textured background, picks a region (ellipse,
//! star polygon or blob of discs) covering 2%-50% of the image, and applies
//! one perturbation to the pixels inside it. All rasters are quantized to
//! 8 bits so they survive a PNG round trip unchanged, and pixels outside the
//! region are bit-identical to the background.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{ImageTensor, MaskTensor, SIZE_DIVISOR};

pub const MANIFEST_NAME: &str = "manifest";
const MANIFEST_MAGIC: &str = "dirl-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Brightness,
    Contrast,
    HueRotation,
    ChannelAffine,
    Gamma,
}

impl TransformKind {
    pub const ALL: [TransformKind; 5] = [
        TransformKind::Brightness,
        TransformKind::Contrast,
        TransformKind::HueRotation,
        TransformKind::ChannelAffine,
        TransformKind::Gamma,
    ];

    fn arity(self) -> usize {
        match self {
            TransformKind::ChannelAffine => 6,
            _ => 1,
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::Brightness => "brightness",
            TransformKind::Contrast => "contrast",
            TransformKind::HueRotation => "hue",
            TransformKind::ChannelAffine => "affine",
            TransformKind::Gamma => "gamma",
        })
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Value(format!("unknown transform {s:?}")))
    }
}

/// One foreground perturbation.
///
/// * brightness `[g]`: `c * g`
/// * contrast `[s]`: `(c - 0.5) * s + 0.5`
/// * hue `[deg]`: rotation of the RGB vector about the gray axis
/// * affine `[a_r, a_g, a_b, b_r, b_g, b_b]`: `a_i * c_i + b_i`
/// * gamma `[γ]`: `c^γ`
///
/// Results are clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub kind: TransformKind,
    pub params: Vec<f64>,
}

impl Perturbation {
    pub fn new(kind: TransformKind, params: Vec<f64>) -> Result<Self> {
        if params.len() != kind.arity() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Value(format!("{kind} takes {} finite parameters, got {params:?}", kind.arity())));
        }
        Ok(Self { kind, params })
    }

    pub fn apply(&self, rgb: [f64; 3]) -> [f64; 3] {
        let p = &self.params;
        let out = match self.kind {
            TransformKind::Brightness => rgb.map(|c| c * p[0]),
            TransformKind::Contrast => rgb.map(|c| (c - 0.5) * p[0] + 0.5),
            TransformKind::Gamma => rgb.map(|c| c.powf(p[0])),
            TransformKind::ChannelAffine => [0, 1, 2].map(|i| p[i] * rgb[i] + p[3 + i]),
            TransformKind::HueRotation => {
                let m = hue_matrix(p[0]);
                [0, 1, 2].map(|i| m[i][0] * rgb[0] + m[i][1] * rgb[1] + m[i][2] * rgb[2])
            }
        };
        out.map(|c| c.clamp(0.0, 1.0))
    }

    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let kind = TransformKind::ALL[rng.random_range(0..TransformKind::ALL.len())];
        let mut either = |lo: (f64, f64), hi: (f64, f64)| {
            if rng.random_bool(0.5) {
                rng.random_range(lo.0..lo.1)
            } else {
                rng.random_range(hi.0..hi.1)
            }
        };
        let params = match kind {
            TransformKind::Brightness => vec![either((0.45, 0.75), (1.3, 1.7))],
            TransformKind::Contrast => vec![either((0.3, 0.6), (1.5, 2.2))],
            TransformKind::HueRotation => vec![either((60.0, 160.0), (200.0, 300.0))],
            TransformKind::Gamma => vec![either((0.35, 0.65), (1.6, 2.6))],
            TransformKind::ChannelAffine => {
                let mut p: Vec<f64> = (0..3).map(|_| rng.random_range(0.55..1.45)).collect();
                p.extend((0..3).map(|_| rng.random_range(-0.2..0.2)));
                p
            }
        };
        Self { kind, params }
    }
}

fn hue_matrix(degrees: f64) -> [[f64; 3]; 3] {
    let (s, c) = (degrees * PI / 180.0).sin_cos();
    let k = 1.0 / 3.0f64.sqrt();
    let t = (1.0 - c) / 3.0;
    [
        [c + t, t - s * k, t + s * k],
        [t + s * k, c + t, t - s * k],
        [t - s * k, t + s * k, c + t],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub min_area: f64,
    pub max_area: f64,
    /// Minimum mean absolute change inside the region.
    pub min_delta: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            min_area: 0.02,
            max_area: 0.5,
            min_delta: 0.05,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_area > 0.0
            && self.min_area <= self.max_area
            && self.max_area <= 0.5
            && (0.0..1.0).contains(&self.min_delta);
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "area bounds [{}, {}] with delta {} cannot be satisfied",
                self.min_area, self.max_area, self.min_delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CompositeSample {
    pub id: String,
    pub image: ImageTensor,
    pub mask: MaskTensor,
    /// Unperturbed image; absent for externally supplied data.
    pub background: Option<ImageTensor>,
    pub meta: Option<Perturbation>,
    pub foreground_area_fraction: f64,
}

/// 8-bit RGB raster, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb8 {
    pub fn pixel(&self, i: usize) -> [f64; 3] {
        [0, 1, 2].map(|c| self.data[3 * i + c] as f64 / 255.0)
    }

    pub fn to_image(&self) -> Result<ImageTensor> {
        let n = self.width * self.height;
        let mut chw = vec![0f32; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                chw[c * n + i] = self.data[3 * i + c] as f32 / 255.0;
            }
        }
        ImageTensor::new(Tensor::from_vec(chw, (1, 3, self.height, self.width), &Device::Cpu)?)
    }

    pub fn from_image(img: &ImageTensor) -> Result<Self> {
        let (h, w) = img.size();
        let n = h * w;
        let chw = img.tensor().narrow(0, 0, 1)?.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?;
        let mut data = vec![0u8; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                data[3 * i + c] = quantize(chw[c * n + i]);
            }
        }
        Ok(Self { width: w, height: h, data })
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn mask_to_bytes(mask: &MaskTensor) -> Result<Vec<u8>> {
    Ok(mask.get(0)?.values()?.into_iter().map(quantize).collect())
}

pub fn mask_from_bytes(bytes: &[u8], width: usize, height: usize) -> Result<MaskTensor> {
    let v: Vec<f32> = bytes.iter().map(|&b| b as f32 / 255.0).collect();
    MaskTensor::new(Tensor::from_vec(v, (1, 1, height, width), &Device::Cpu)?)
}

fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cell: usize) -> Vec<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
            let bot = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

fn background(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Rgb8 {
    let mut acc = vec![0.0; 3 * h * w];
    for c in 0..3 {
        let base = rng.random_range(0.2..0.8);
        let gx = rng.random_range(-0.3..0.3);
        let gy = rng.random_range(-0.3..0.3);
        for y in 0..h {
            for x in 0..w {
                let v = base + gx * (x as f64 / w as f64 - 0.5) + gy * (y as f64 / h as f64 - 0.5);
                acc[3 * (y * w + x) + c] = v;
            }
        }
        let mut amp = 0.18;
        let mut cell = (h.min(w) / 2).max(2);
        while cell >= 2 {
            let n = value_noise(rng, h, w, cell);
            for (i, v) in n.into_iter().enumerate() {
                acc[3 * i + c] += amp * v;
            }
            amp *= 0.55;
            cell /= 2;
        }
    }
    Rgb8 {
        width: w,
        height: h,
        data: acc.into_iter().map(quantize).collect(),
    }
}

fn region(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<bool> {
    let (hf, wf) = (h as f64, w as f64);
    let s = hf.min(wf);
    let cy = rng.random_range(0.2 * hf..0.8 * hf);
    let cx = rng.random_range(0.2 * wf..0.8 * wf);
    let inside: Box<dyn Fn(f64, f64) -> bool> = match rng.random_range(0..3) {
        0 => {
            let a = rng.random_range(0.08 * s..0.4 * s);
            let b = rng.random_range(0.08 * s..0.4 * s);
            let (st, ct) = rng.random_range(0.0..PI).sin_cos();
            Box::new(move |y, x| {
                let (dy, dx) = (y - cy, x - cx);
                let u = dx * ct + dy * st;
                let v = -dx * st + dy * ct;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            })
        }
        1 => {
            let n = rng.random_range(5..10);
            let radii: Vec<f64> = (0..n).map(|_| rng.random_range(0.12 * s..0.4 * s)).collect();
            let phase = rng.random_range(0.0..2.0 * PI);
            Box::new(move |y, x| {
                let (dy, dx) = (y - cy, x - cx);
                let r = (dy * dy + dx * dx).sqrt();
                let t = ((dy.atan2(dx) - phase).rem_euclid(2.0 * PI)) / (2.0 * PI) * n as f64;
                let i = t.floor() as usize % n;
                let f = t.fract();
                r <= radii[i] * (1.0 - f) + radii[(i + 1) % n] * f
            })
        }
        _ => {
            let discs: Vec<(f64, f64, f64)> = (0..rng.random_range(3..6))
                .map(|_| {
                    (
                        cy + rng.random_range(-0.15 * s..0.15 * s),
                        cx + rng.random_range(-0.15 * s..0.15 * s),
                        rng.random_range(0.06 * s..0.2 * s),
                    )
                })
                .collect();
            Box::new(move |y, x| discs.iter().any(|&(dy, dx, r)| (y - dy).powi(2) + (x - dx).powi(2) <= r * r))
        }
    };
    (0..h * w)
        .map(|i| inside((i / w) as f64 + 0.5, (i % w) as f64 + 0.5))
        .collect()
}

fn composite(bg: &Rgb8, mask: &[bool], p: &Perturbation) -> Rgb8 {
    let mut data = bg.data.clone();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            let out = p.apply(bg.pixel(i));
            for c in 0..3 {
                data[3 * i + c] = quantize(out[c]);
            }
        }
    }
    Rgb8 { data, ..*bg }
}

/// Mean absolute per-channel change over the region.
pub fn region_delta(image: &Rgb8, bg: &Rgb8, mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            for c in 0..3 {
                sum += (image.data[3 * i + c] as f64 - bg.data[3 * i + c] as f64).abs() / 255.0;
            }
            n += 3;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn check_size(size: (usize, usize)) -> Result<()> {
    let (h, w) = size;
    if h == 0 || w == 0 || h % SIZE_DIVISOR != 0 || w % SIZE_DIVISOR != 0 {
        return Err(Error::InvalidConfig(format!(
            "image size {h}x{w} must be positive and divisible by {SIZE_DIVISOR}"
        )));
    }
    Ok(())
}

pub fn generate(seed: u64, count: usize, size: (usize, usize)) -> Result<Vec<CompositeSample>> {
    generate_with(seed, count, size, &GenConfig::default())
}

pub fn generate_with(seed: u64, count: usize, size: (usize, usize), cfg: &GenConfig) -> Result<Vec<CompositeSample>> {
    cfg.validate()?;
    check_size(size)?;
    if count == 0 {
        return Err(Error::InvalidConfig("count must be at least 1".into()));
    }
    let (h, w) = size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let bg = background(&mut rng, h, w);
        let mask = region(&mut rng, h, w);
        let area = mask.iter().filter(|&&m| m).count() as f64 / (h * w) as f64;
        if area < cfg.min_area || area > cfg.max_area {
            continue;
        }
        let mut accepted = None;
        for _ in 0..16 {
            let p = Perturbation::sample(&mut rng);
            let img = composite(&bg, &mask, &p);
            if region_delta(&img, &bg, &mask) >= cfg.min_delta {
                accepted = Some((img, p));
                break;
            }
        }
        let Some((img, p)) = accepted else { continue };
        let mask_bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        out.push(CompositeSample {
            id: format!("{:05}", out.len()),
            image: img.to_image()?,
            mask: mask_from_bytes(&mask_bytes, w, h)?,
            background: Some(bg.to_image()?),
            meta: Some(p),
            foreground_area_fraction: area,
        });
    }
    Ok(out)
}

fn write_png(path: &Path, width: usize, height: usize, data: &[u8], color: image::ExtendedColorType) -> Result<()> {
    image::save_buffer(path, data, width as u32, height as u32, color).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn save_rgb_png(path: &Path, img: &ImageTensor) -> Result<()> {
    let r = Rgb8::from_image(img)?;
    write_png(path, r.width, r.height, &r.data, image::ExtendedColorType::Rgb8)
}

pub fn save_mask_png(path: &Path, mask: &MaskTensor) -> Result<()> {
    let (h, w) = mask.size();
    write_png(path, w, h, &mask_to_bytes(mask)?, image::ExtendedColorType::L8)
}

fn read_image(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory(&bytes).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn load_rgb_png(path: &Path) -> Result<ImageTensor> {
    let img = read_image(path)?.to_rgb8();
    Rgb8 {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.into_raw(),
    }
    .to_image()
}

pub fn load_mask_png(path: &Path) -> Result<MaskTensor> {
    let img = read_image(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    mask_from_bytes(img.as_raw(), w, h)
}

/// Writes PNGs and a tab-separated manifest into `dir`; returns the
/// manifest path.
///
/// The manifest starts with `dirl-manifest v1 <count>`, followed by one line
/// per sample: `id  image  mask  background  kind  params`, where paths are
/// relative to `dir`, `params` is comma-separated and `-` marks an absent
/// field.
pub fn write_manifest(samples: &[CompositeSample], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = format!("{MANIFEST_MAGIC} {}\n", samples.len());
    for s in samples {
        let image = format!("{}_image.png", s.id);
        let mask = format!("{}_mask.png", s.id);
        save_rgb_png(&dir.join(&image), &s.image)?;
        save_mask_png(&dir.join(&mask), &s.mask)?;
        let bg = match &s.background {
            Some(bg) => {
                let name = format!("{}_bg.png", s.id);
                save_rgb_png(&dir.join(&name), bg)?;
                name
            }
            None => "-".into(),
        };
        let (kind, params) = match &s.meta {
            Some(p) => (
                p.kind.to_string(),
                p.params.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            ),
            None => ("-".into(), "-".into()),
        };
        text.push_str(&format!("{}\t{image}\t{mask}\t{bg}\t{kind}\t{params}\n", s.id));
    }
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Accepts either the manifest file or the directory holding it.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<CompositeSample>> {
    let path = manifest_path(path);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let bad = |msg: String| Error::format(&path, msg);

    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty manifest".into()))?;
    let count: usize = header
        .strip_prefix(MANIFEST_MAGIC)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| bad(format!("bad header {header:?}")))?;
    let records: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    if records.len() != count || !text.ends_with('\n') {
        return Err(bad(format!("header announces {count} records, found {}", records.len())));
    }

    records
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let line_no = i + 2;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad(format!("line {line_no}: expected 6 fields, found {}", f.len())));
            }
            let image = load_rgb_png(&dir.join(f[1]))?;
            let mask = load_mask_png(&dir.join(f[2]))?;
            if image.size() != mask.size() {
                return Err(bad(format!("line {line_no}: image and mask sizes differ")));
            }
            let background = match f[3] {
                "-" => None,
                p => Some(load_rgb_png(&dir.join(p))?),
            };
            let meta = match (f[4], f[5]) {
                ("-", _) => None,
                (kind, params) => {
                    let kind: TransformKind = kind.parse().map_err(|e: Error| bad(format!("line {line_no}: {e}")))?;
                    let params = params
                        .split(',')
                        .map(|v| v.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| bad(format!("line {line_no}: bad parameter: {e}")))?;
                    Some(Perturbation::new(kind, params).map_err(|e| bad(format!("line {line_no}: {e}")))?)
                }
            };
            let values = mask.values()?;
            let area = values.iter().filter(|&&v| v >= 0.5).count() as f64 / values.len() as f64;
            Ok(CompositeSample {
                id: f[0].to_string(),
                image,
                mask,
                background,
                meta,
                foreground_area_fraction: area,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hue_matrix_is_rotation_fixing_gray() {
        let m = hue_matrix(123.0);
        for row in m {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let g = Perturbation::new(TransformKind::HueRotation, vec![77.0]).unwrap();
        let out = g.apply([0.4, 0.4, 0.4]);
        assert!(out.iter().all(|v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn transform_names_round_trip() {
        for k in TransformKind::ALL {
            assert_eq!(k.to_string().parse::<TransformKind>().unwrap(), k);
        }
    }

    #[test]
    fn invalid_bounds() {
        let cfg = GenConfig {
            min_area: 0.3,
            max_area: 0.2,
            ..GenConfig::default()
        };
        assert!(matches!(generate_with(0, 1, (32, 32), &cfg), Err(Error::InvalidConfig(_))));
        assert!(matches!(generate(0, 1, (40, 40)), Err(Error::InvalidConfig(_))));
    }
}

//! Transition stage: fusion of adjacent encoder levels, `{r_k} -> {b_k}`.
//!
//! BFI runs a top-down stream (`b↓_5 = r_5`, `b↓_k = r_k + U(b↓_{k+1})`) and a
//! bottom-up stream (`b↑_1 = r_1`, `b↑_k = r_k + D(b↑_{k-1})`) over the
//! pyramid, then aggregates each level from its neighbours:
//!
//! ```text
//! b_k = D([b↓_{k-1}, b↑_{k-1}]) + (b↓_k + b↑_k) + U([b↓_{k+1}, b↑_{k+1}])
//! ```
//!
//! with the missing neighbour term dropped at the two ends. Restricted to a
//! three-level window this is exactly one middle block; restricted to two
//! levels it is the leftmost / rightmost block.
//!
//! `BFI_UP` / `BFI_DOWN` keep only one stream, `b_k = D(s_{k-1}) + s_k + U(s_{k+1})`.
//!
//! AIM blocks only see `(r_{k-1}, r_k, r_{k+1})`:
//!
//! ```text
//! z_{k-1} = Conv(U(r_k) + Conv(r_{k-1}))
//! z_k     = Conv(D(r_{k-1}) + Conv(r_k) + U(r_{k+1}))
//! z_{k+1} = Conv(D(r_k) + Conv(r_{k+1}))
//! b_k     = Conv(D(z_{k-1}) + z_k + U(z_{k+1})) + r_k
//! ```
//!
//! Every U / D layer emits the channel count of its destination level.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::layers::cat_channels;
use crate::nn::{Conv2d, Down, ParamStore, Up};
use crate::types::{check_structure, FeaturePyramid, FusionVariant, ModelConfig, LEVELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Bottom-up stream only.
    Up,
    /// Top-down stream only.
    Down,
}

fn optional_sum(terms: Vec<Tensor>) -> Result<Tensor> {
    let mut it = terms.into_iter();
    let mut acc = it.next().ok_or_else(|| Error::shape("empty sum"))?;
    for t in it {
        acc = (acc + t)?;
    }
    Ok(acc)
}

/// Stream and aggregation layers for BFI and its one-way variants.
///
/// Index `k` of `stream_up` produces level `k` from level `k+1`; index `k` of
/// `stream_down` produces level `k+1` from level `k` (0-based levels).
#[derive(Debug, Clone)]
pub struct BfiParams {
    stream_up: Vec<Up>,
    stream_down: Vec<Down>,
    agg_up: Vec<Up>,
    agg_down: Vec<Down>,
    streams: Streams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Streams {
    Both,
    Only(Direction),
}

impl BfiParams {
    fn new(store: &mut ParamStore, prefix: &str, channels: &[usize], streams: Streams) -> Result<Self> {
        let n = channels.len();
        let widen = if streams == Streams::Both { 2 } else { 1 };
        let mut p = Self {
            stream_up: Vec::new(),
            stream_down: Vec::new(),
            agg_up: Vec::new(),
            agg_down: Vec::new(),
            streams,
        };
        let want_td = streams != Streams::Only(Direction::Up);
        let want_bu = streams != Streams::Only(Direction::Down);
        for k in 0..n - 1 {
            let (lo, hi) = (channels[k], channels[k + 1]);
            if want_td {
                p.stream_up
                    .push(Up::new(store, &format!("{prefix}.td_up.{}", k + 1), hi, lo)?);
            }
            if want_bu {
                p.stream_down
                    .push(Down::new(store, &format!("{prefix}.bu_down.{}", k + 2), lo, hi)?);
            }
            p.agg_up
                .push(Up::new(store, &format!("{prefix}.agg_up.{}", k + 1), widen * hi, lo)?);
            p.agg_down
                .push(Down::new(store, &format!("{prefix}.agg_down.{}", k + 2), widen * lo, hi)?);
        }
        Ok(p)
    }

    /// Applies the block to a contiguous window of levels starting at
    /// 0-based level `first`, returning one output per input level.
    pub fn window(&self, levels: &[Tensor], first: usize) -> Result<Vec<Tensor>> {
        let n = levels.len();
        if n < 2 || first + n > self.agg_up.len() + 1 {
            return Err(Error::shape(format!(
                "window of {n} levels at {first} out of range"
            )));
        }
        let top_down = if self.streams != Streams::Only(Direction::Up) {
            let mut s = vec![levels[n - 1].clone(); n];
            for i in (0..n - 1).rev() {
                s[i] = (&levels[i] + self.stream_up[first + i].forward(&s[i + 1])?)?;
            }
            Some(s)
        } else {
            None
        };
        let bottom_up = if self.streams != Streams::Only(Direction::Down) {
            let mut s = vec![levels[0].clone(); n];
            for i in 1..n {
                s[i] = (&levels[i] + self.stream_down[first + i - 1].forward(&s[i - 1])?)?;
            }
            Some(s)
        } else {
            None
        };
        // transient feature carried to the neighbours at each level
        let carried: Vec<Tensor> = (0..n)
            .map(|i| match (&top_down, &bottom_up) {
                (Some(td), Some(bu)) => cat_channels(&[&td[i], &bu[i]]),
                (Some(s), None) | (None, Some(s)) => Ok(s[i].clone()),
                (None, None) => unreachable!(),
            })
            .collect::<Result<_>>()?;
        (0..n)
            .map(|i| {
                let mut terms = Vec::with_capacity(4);
                if let Some(td) = &top_down {
                    terms.push(td[i].clone());
                }
                if let Some(bu) = &bottom_up {
                    terms.push(bu[i].clone());
                }
                if i > 0 {
                    terms.push(self.agg_down[first + i - 1].forward(&carried[i - 1])?);
                }
                if i + 1 < n {
                    terms.push(self.agg_up[first + i].forward(&carried[i + 1])?);
                }
                optional_sum(terms)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct AimSide {
    conv_in: Conv2d,
    resample_in: Resample,
    conv_out: Conv2d,
    to_center: Resample,
}

#[derive(Debug, Clone)]
enum Resample {
    Up(Up),
    Down(Down),
}

impl Resample {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Resample::Up(u) => u.forward(x),
            Resample::Down(d) => d.forward(x),
        }
    }
}

/// One AIM block; level `k` consumes only its immediate neighbours.
#[derive(Debug, Clone)]
pub struct AimBlock {
    lower: Option<AimSide>,
    upper: Option<AimSide>,
    center_conv_in: Conv2d,
    center_from_lower: Option<Down>,
    center_from_upper: Option<Up>,
    center_conv_out: Conv2d,
    fuse: Conv2d,
}

impl AimBlock {
    fn new(store: &mut ParamStore, prefix: &str, channels: &[usize], k: usize) -> Result<Self> {
        let c = channels[k];
        let lower = if k > 0 {
            let cl = channels[k - 1];
            let p = format!("{prefix}.lower");
            Some(AimSide {
                conv_in: Conv2d::new(store, &format!("{p}.conv_in"), cl, cl, 3, 1, 1, true)?,
                resample_in: Resample::Up(Up::new(store, &format!("{p}.up_in"), c, cl)?),
                conv_out: Conv2d::new(store, &format!("{p}.conv_out"), cl, cl, 3, 1, 1, true)?,
                to_center: Resample::Down(Down::new(store, &format!("{p}.to_center"), cl, c)?),
            })
        } else {
            None
        };
        let upper = if k + 1 < channels.len() {
            let cu = channels[k + 1];
            let p = format!("{prefix}.upper");
            Some(AimSide {
                conv_in: Conv2d::new(store, &format!("{p}.conv_in"), cu, cu, 3, 1, 1, true)?,
                resample_in: Resample::Down(Down::new(store, &format!("{p}.down_in"), c, cu)?),
                conv_out: Conv2d::new(store, &format!("{p}.conv_out"), cu, cu, 3, 1, 1, true)?,
                to_center: Resample::Up(Up::new(store, &format!("{p}.to_center"), cu, c)?),
            })
        } else {
            None
        };
        Ok(Self {
            center_conv_in: Conv2d::new(store, &format!("{prefix}.center.conv_in"), c, c, 3, 1, 1, true)?,
            center_from_lower: match k {
                0 => None,
                _ => Some(Down::new(store, &format!("{prefix}.center.down_in"), channels[k - 1], c)?),
            },
            center_from_upper: if k + 1 < channels.len() {
                Some(Up::new(store, &format!("{prefix}.center.up_in"), channels[k + 1], c)?)
            } else {
                None
            },
            center_conv_out: Conv2d::new(store, &format!("{prefix}.center.conv_out"), c, c, 3, 1, 1, true)?,
            fuse: Conv2d::new(store, &format!("{prefix}.fuse"), c, c, 3, 1, 1, true)?,
            lower,
            upper,
        })
    }

    /// `lower` / `upper` must be present exactly when the block has that side.
    pub fn forward(&self, lower: Option<&Tensor>, center: &Tensor, upper: Option<&Tensor>) -> Result<Tensor> {
        if lower.is_some() != self.lower.is_some() || upper.is_some() != self.upper.is_some() {
            return Err(Error::shape("AIM block given the wrong set of neighbours"));
        }
        let mut center_terms = vec![self.center_conv_in.forward(center)?];
        let mut out_terms = Vec::with_capacity(3);
        if let (Some(side), Some(r)) = (&self.lower, lower) {
            let z = side
                .conv_out
                .forward(&(side.resample_in.forward(center)? + side.conv_in.forward(r)?)?)?;
            out_terms.push(side.to_center.forward(&z)?);
            center_terms.push(self.center_from_lower.as_ref().expect("lower side").forward(r)?);
        }
        if let (Some(side), Some(r)) = (&self.upper, upper) {
            let z = side
                .conv_out
                .forward(&(side.resample_in.forward(center)? + side.conv_in.forward(r)?)?)?;
            out_terms.push(side.to_center.forward(&z)?);
            center_terms.push(self.center_from_upper.as_ref().expect("upper side").forward(r)?);
        }
        out_terms.push(self.center_conv_out.forward(&optional_sum(center_terms)?)?);
        Ok((self.fuse.forward(&optional_sum(out_terms)?)? + center)?)
    }
}

#[derive(Debug, Clone)]
enum Blocks {
    Identity,
    Bfi(BfiParams),
    Aim(Vec<AimBlock>),
}

/// The transition stage for one configured variant.
#[derive(Debug, Clone)]
pub struct Fusion {
    variant: FusionVariant,
    channels: [usize; LEVELS],
    blocks: Blocks,
}

impl Fusion {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let ch = &cfg.channels;
        let blocks = match cfg.fusion_variant {
            FusionVariant::None => Blocks::Identity,
            FusionVariant::Bfi => Blocks::Bfi(BfiParams::new(store, "fusion.bfi", ch, Streams::Both)?),
            FusionVariant::BfiUp => Blocks::Bfi(BfiParams::new(
                store,
                "fusion.bfi_up",
                ch,
                Streams::Only(Direction::Up),
            )?),
            FusionVariant::BfiDown => Blocks::Bfi(BfiParams::new(
                store,
                "fusion.bfi_down",
                ch,
                Streams::Only(Direction::Down),
            )?),
            FusionVariant::Aim => Blocks::Aim(
                (0..LEVELS)
                    .map(|k| AimBlock::new(store, &format!("fusion.aim.{}", k + 1), ch, k))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Self {
            variant: cfg.fusion_variant,
            channels: cfg.channels,
            blocks,
        })
    }

    pub fn variant(&self) -> FusionVariant {
        self.variant
    }

    /// BFI stream/aggregation layers, when the variant is BFI or one-way BFI.
    pub fn bfi(&self) -> Option<&BfiParams> {
        match &self.blocks {
            Blocks::Bfi(p) => Some(p),
            _ => None,
        }
    }

    /// AIM block for 0-based level `k`, when the variant is AIM.
    pub fn aim_block(&self, k: usize) -> Option<&AimBlock> {
        match &self.blocks {
            Blocks::Aim(b) => b.get(k),
            _ => None,
        }
    }

    /// Maps `{r_k}` to `{b_k}` with identical per-level shapes.
    pub fn fuse(&self, pyr: &FeaturePyramid) -> Result<FeaturePyramid> {
        check_structure(pyr, &self.channels, None)?;
        let r = pyr.levels();
        let out = match &self.blocks {
            Blocks::Identity => r.to_vec(),
            Blocks::Bfi(p) => p.window(r, 0)?,
            Blocks::Aim(blocks) => blocks
                .iter()
                .enumerate()
                .map(|(k, b)| b.forward(k.checked_sub(1).map(|i| &r[i]), &r[k], r.get(k + 1)))
                .collect::<Result<_>>()?,
        };
        Ok(FeaturePyramid::from_levels(out))
    }
}

/// BFI over the whole pyramid.
pub fn fuse_bfi(pyr: &FeaturePyramid, fusion: &Fusion) -> Result<FeaturePyramid> {
    expect_variant(fusion, &[FusionVariant::Bfi])?;
    fusion.fuse(pyr)
}

/// AIM over the whole pyramid.
pub fn fuse_aim(pyr: &FeaturePyramid, fusion: &Fusion) -> Result<FeaturePyramid> {
    expect_variant(fusion, &[FusionVariant::Aim])?;
    fusion.fuse(pyr)
}

/// One-way BFI; `direction` must agree with the fusion's variant.
pub fn fuse_oneway(pyr: &FeaturePyramid, fusion: &Fusion, direction: Direction) -> Result<FeaturePyramid> {
    let want = match direction {
        Direction::Up => FusionVariant::BfiUp,
        Direction::Down => FusionVariant::BfiDown,
    };
    expect_variant(fusion, &[want])?;
    fusion.fuse(pyr)
}

fn expect_variant(fusion: &Fusion, allowed: &[FusionVariant]) -> Result<()> {
    if allowed.contains(&fusion.variant) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "fusion built as {}, expected {}",
            fusion.variant, allowed[0]
        )))
    }
}

/// Builds standalone BFI layers over an arbitrary channel list (at least two
/// levels); used for block-level study on small windows.
pub fn bfi_params(store: &mut ParamStore, prefix: &str, channels: &[usize], variant: FusionVariant) -> Result<BfiParams> {
    let streams = match variant {
        FusionVariant::Bfi => Streams::Both,
        FusionVariant::BfiUp => Streams::Only(Direction::Up),
        FusionVariant::BfiDown => Streams::Only(Direction::Down),
        other => return Err(Error::Config(format!("{other} is not a BFI variant"))),
    };
    if channels.len() < 2 {
        return Err(Error::shape("BFI needs at least two levels"));
    }
    BfiParams::new(store, prefix, channels, streams)
}

/// Builds a standalone AIM block for position `k` of `channels`.
pub fn aim_block(store: &mut ParamStore, prefix: &str, channels: &[usize], k: usize) -> Result<AimBlock> {
    if k >= channels.len() || channels.len() < 2 {
        return Err(Error::shape(format!("AIM block {k} outside {} levels", channels.len())));
    }
    AimBlock::new(store, prefix, channels, k)
}

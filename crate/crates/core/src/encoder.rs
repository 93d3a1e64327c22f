//! Five-stage residual encoder.
//!
//! The stem is a single stride-1 3x3 conv with no pooling, so `r_1` keeps the
//! full input resolution. Stages 2-5 each open with a stride-2 basic block.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::params::join;
use crate::nn::{BatchNorm, Conv2d, Mode, ParamStore};
use crate::types::{FeaturePyramid, ImageTensor, ModelConfig, SIZE_DIVISOR};

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    projection: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    fn new(store: &mut ParamStore, prefix: &str, in_c: usize, out_c: usize, stride: usize) -> Result<Self> {
        let projection = if stride != 1 || in_c != out_c {
            Some((
                Conv2d::new(store, &join(prefix, "proj"), in_c, out_c, 1, stride, 0, false)?,
                BatchNorm::new(store, &join(prefix, "proj_bn"), out_c)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(store, &join(prefix, "conv1"), in_c, out_c, 3, stride, 1, false)?,
            bn1: BatchNorm::new(store, &join(prefix, "bn1"), out_c)?,
            conv2: Conv2d::new(store, &join(prefix, "conv2"), out_c, out_c, 3, 1, 1, false)?,
            bn2: BatchNorm::new(store, &join(prefix, "bn2"), out_c)?,
            projection,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, mode)?.relu()?;
        let y = self.bn2.forward(&self.conv2.forward(&y)?, mode)?;
        let skip = match &self.projection {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, mode)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    stem: (Conv2d, BatchNorm),
    stages: Vec<Vec<BasicBlock>>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.channels;
        let stem = (
            Conv2d::new(store, "encoder.stem.conv", 3, c[0], 3, 1, 1, false)?,
            BatchNorm::new(store, "encoder.stem.bn", c[0])?,
        );
        let counts = [
            cfg.stage_blocks[0],
            cfg.stage_blocks[1],
            cfg.stage_blocks[2],
            cfg.stage_blocks[3],
            1,
        ];
        let mut stages = Vec::with_capacity(5);
        let mut in_c = c[0];
        for (k, &count) in counts.iter().enumerate() {
            let stride = if k == 0 { 1 } else { 2 };
            let mut blocks = Vec::with_capacity(count);
            for i in 0..count {
                let prefix = format!("encoder.stage{}.block{i}", k + 1);
                let (bi, bs) = if i == 0 { (in_c, stride) } else { (c[k], 1) };
                blocks.push(BasicBlock::new(store, &prefix, bi, c[k], bs)?);
            }
            in_c = c[k];
            stages.push(blocks);
        }
        Ok(Self { stem, stages })
    }

    /// Runs the trunk and returns `{r_1, ..., r_5}`.
    pub fn encode(&self, img: &ImageTensor, mode: Mode) -> Result<FeaturePyramid> {
        let (h, w) = img.size();
        if h % SIZE_DIVISOR != 0 || w % SIZE_DIVISOR != 0 {
            return Err(Error::shape(format!(
                "input {h}x{w} not divisible by {SIZE_DIVISOR}"
            )));
        }
        self.encode_tensor(img.tensor(), mode)
    }

    pub(crate) fn encode_tensor(&self, x: &Tensor, mode: Mode) -> Result<FeaturePyramid> {
        let mut x = self.stem.1.forward(&self.stem.0.forward(x)?, mode)?.relu()?;
        let mut levels = Vec::with_capacity(5);
        for stage in &self.stages {
            for block in stage {
                x = block.forward(&x, mode)?;
            }
            levels.push(x.clone());
        }
        Ok(FeaturePyramid::from_levels(levels))
    }
}

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// Interpolation matrix (2n x n) for x2 bilinear upsampling with half-pixel
/// centers (`align_corners = false`), edges clamped.
fn bilinear_matrix(n: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f64; 2 * n * n];
    for i in 0..2 * n {
        let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let frac = src - i0 as f64;
        m[i * n + i0] += 1.0 - frac;
        m[i * n + i1] += frac;
    }
    Ok(Tensor::from_vec(m, (2 * n, n), device)?.to_dtype(dtype)?)
}

/// Bilinear x2 upsampling of a (B, C, H, W) tensor.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let mw = bilinear_matrix(w, x.dtype(), x.device())?.t()?;
    let mh = bilinear_matrix(h, x.dtype(), x.device())?.t()?;
    // rows: (B,C,H,W)·(W,2W) -> (B,C,H,2W); columns via transpose
    let y = x.broadcast_matmul(&mw)?;
    let y = y.transpose(2, 3)?.broadcast_matmul(&mh)?;
    Ok(y.transpose(2, 3)?.contiguous()?)
}

/// Box-filter downsampling of a mask by an integer factor along both axes.
pub fn area_downsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(format!(
            "cannot area-downsample {h}x{w} by {factor}"
        )));
    }
    Ok(x.avg_pool2d(factor)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(x: &[f64], h: usize, w: usize) -> Vec<f64> {
        // direct per-pixel bilinear, align_corners = false
        let coord = |o: usize, n: usize| {
            let s = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(n - 1);
            (i0, (i0 + 1).min(n - 1), s - i0 as f64)
        };
        let mut out = vec![0.0; 4 * h * w];
        for oy in 0..2 * h {
            let (y0, y1, fy) = coord(oy, h);
            for ox in 0..2 * w {
                let (x0, x1, fx) = coord(ox, w);
                let v = x[y0 * w + x0] * (1.0 - fy) * (1.0 - fx)
                    + x[y0 * w + x1] * (1.0 - fy) * fx
                    + x[y1 * w + x0] * fy * (1.0 - fx)
                    + x[y1 * w + x1] * fy * fx;
                out[oy * 2 * w + ox] = v;
            }
        }
        out
    }

    #[test]
    fn matches_direct_bilinear() {
        let (h, w) = (3, 5);
        let vals: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.77).sin()).collect();
        let x = Tensor::from_vec(vals.clone(), (1, 1, h, w), &Device::Cpu).unwrap();
        let y = upsample2x(&x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2 * h, 2 * w]);
        let got = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for (a, b) in got.iter().zip(reference(&vals, h, w)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_stays_constant() {
        let x = (Tensor::ones((2, 3, 4, 4), DType::F64, &Device::Cpu).unwrap() * 2.5).unwrap();
        let y = upsample2x(&x).unwrap();
        for v in y.flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert_eq!(v, 2.5);
        }
    }

    #[test]
    fn area_downsample_left_half() {
        let mut m = vec![0f64; 64 * 64];
        for y in 0..64 {
            for x in 0..32 {
                m[y * 64 + x] = 1.0;
            }
        }
        let t = Tensor::from_vec(m, (1, 1, 64, 64), &Device::Cpu).unwrap();
        let d = area_downsample(&t, 16).unwrap();
        let v = d.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for r in 0..4 {
            assert_eq!(&v[r * 4..r * 4 + 4], &[1.0, 1.0, 0.0, 0.0]);
        }
        assert!(area_downsample(&t, 3).is_err());
    }
}

//! 2-D convolution as a candle custom op.
//!
//! Forward and both backward passes go through im2col / col2im and a single
//! GEMM per image, which on CPU is several times faster than the generic
//! candle kernels for the small channel counts used here.

use candle_core::backend::BackendStorage;
use candle_core::{bail, CpuStorage, CustomOp2, Layout, Shape, Tensor};

trait Gemm: Copy + Default + std::ops::AddAssign + 'static {
    const ONE: Self;

    /// C = A * B + beta * C with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Gemm for f32 {
    const ONE: f32 = 1.0;

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Gemm for f64 {
    const ONE: f64 = 1.0;

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    k_h: usize,
    k_w: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.in_c * self.k_h * self.k_w
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output positions `[lo, hi)` whose tap `k` lands inside `[0, extent)`,
    /// and the input index of `lo`.
    #[inline]
    fn valid(&self, k: usize, out: usize, extent: usize) -> (usize, usize, usize) {
        let s = self.stride;
        let p = self.padding;
        // o * s + k >= p  and  o * s + k < extent + p
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if extent + p > k { (extent + p - k).div_ceil(s).min(out) } else { 0 };
        if lo >= hi {
            return (hi, hi, 0);
        }
        (lo, hi, lo * s + k - p)
    }

    fn is_pointwise(&self) -> bool {
        self.k_h == 1 && self.k_w == 1 && self.stride == 1 && self.padding == 0
    }
}

fn im2col<T: Gemm>(x: &[T], g: &Geometry, col: &mut [T]) {
    let n = g.col_cols();
    let s = g.stride;
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.k_h {
            let (y_lo, y_hi, iy0) = g.valid(ky, g.out_h, g.in_h);
            for kx in 0..g.k_w {
                let (x_lo, x_hi, ix0) = g.valid(kx, g.out_w, g.in_w);
                let row = (c * g.k_h + ky) * g.k_w + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                dst[..y_lo * g.out_w].fill(T::default());
                dst[y_hi * g.out_w..].fill(T::default());
                for oy in y_lo..y_hi {
                    let iy = iy0 + (oy - y_lo) * s;
                    let src = &plane[iy * g.in_w..(iy + 1) * g.in_w];
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    line[..x_lo].fill(T::default());
                    line[x_hi..].fill(T::default());
                    let line = &mut line[x_lo..x_hi];
                    if s == 1 {
                        line.copy_from_slice(&src[ix0..ix0 + line.len()]);
                    } else {
                        for (j, v) in line.iter_mut().enumerate() {
                            *v = src[ix0 + j * s];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Gemm>(col: &[T], g: &Geometry, x: &mut [T]) {
    let n = g.col_cols();
    let s = g.stride;
    for c in 0..g.in_c {
        let plane = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.k_h {
            let (y_lo, y_hi, iy0) = g.valid(ky, g.out_h, g.in_h);
            for kx in 0..g.k_w {
                let (x_lo, x_hi, ix0) = g.valid(kx, g.out_w, g.in_w);
                let row = (c * g.k_h + ky) * g.k_w + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in y_lo..y_hi {
                    let iy = iy0 + (oy - y_lo) * s;
                    let line = &src[oy * g.out_w + x_lo..oy * g.out_w + x_hi];
                    let dst = &mut plane[iy * g.in_w..(iy + 1) * g.in_w];
                    if s == 1 {
                        for (d, &v) in dst[ix0..ix0 + line.len()].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (j, &v) in line.iter().enumerate() {
                            dst[ix0 + j * s] += v;
                        }
                    }
                }
            }
        }
    }
}

fn forward<T: Gemm>(x: &[T], w: &[T], g: &Geometry) -> Vec<T> {
    let (k, n) = (g.col_rows(), g.col_cols());
    let pointwise = g.is_pointwise();
    let mut col = vec![T::default(); if pointwise { 0 } else { k * n }];
    let mut out = vec![T::default(); g.batch * g.out_c * n];
    let in_len = g.in_c * g.in_h * g.in_w;
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let col: &[T] = if pointwise {
            xb
        } else {
            im2col(xb, g, &mut col);
            &col
        };
        let dst = &mut out[b * g.out_c * n..(b + 1) * g.out_c * n];
        unsafe {
            T::gemm(
                g.out_c,
                k,
                n,
                w.as_ptr(),
                k as isize,
                1,
                col.as_ptr(),
                n as isize,
                1,
                T::default(),
                dst.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    out
}

fn input_grad<T: Gemm>(grad: &[T], w: &[T], g: &Geometry) -> Vec<T> {
    let (k, n) = (g.col_rows(), g.col_cols());
    let pointwise = g.is_pointwise();
    let mut col = vec![T::default(); if pointwise { 0 } else { k * n }];
    let in_len = g.in_c * g.in_h * g.in_w;
    let mut out = vec![T::default(); g.batch * in_len];
    for b in 0..g.batch {
        let gb = &grad[b * g.out_c * n..(b + 1) * g.out_c * n];
        let ob = &mut out[b * in_len..(b + 1) * in_len];
        let target: &mut [T] = if pointwise { ob } else { &mut col };
        // col = W^T * grad_b
        unsafe {
            T::gemm(
                k,
                g.out_c,
                n,
                w.as_ptr(),
                1,
                k as isize,
                gb.as_ptr(),
                n as isize,
                1,
                T::default(),
                target.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        if !pointwise {
            col2im_add(&col, g, &mut out[b * in_len..(b + 1) * in_len]);
        }
    }
    out
}

fn weight_grad<T: Gemm>(x: &[T], grad: &[T], g: &Geometry) -> Vec<T> {
    let (k, n) = (g.col_rows(), g.col_cols());
    let pointwise = g.is_pointwise();
    let mut col = vec![T::default(); if pointwise { 0 } else { k * n }];
    let in_len = g.in_c * g.in_h * g.in_w;
    let mut out = vec![T::default(); g.out_c * k];
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let col: &[T] = if pointwise {
            xb
        } else {
            im2col(xb, g, &mut col);
            &col
        };
        let gb = &grad[b * g.out_c * n..(b + 1) * g.out_c * n];
        // dW += grad_b * col^T
        unsafe {
            T::gemm(
                g.out_c,
                n,
                k,
                gb.as_ptr(),
                n as isize,
                1,
                col.as_ptr(),
                1,
                n as isize,
                if b == 0 { T::default() } else { T::ONE },
                out.as_mut_ptr(),
                k as isize,
                1,
            );
        }
    }
    out
}

fn contiguous<'a, T>(v: &'a [T], l: &Layout, what: &str) -> candle_core::Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((start, end)) => Ok(&v[start..end]),
        None => bail!("conv2d: {what} must be contiguous"),
    }
}

macro_rules! dispatch {
    ($s1:expr, $l1:expr, $s2:expr, $l2:expr, $f:ident, $g:expr) => {
        match ($s1, $s2) {
            (CpuStorage::F32(a), CpuStorage::F32(b)) => CpuStorage::F32($f(
                contiguous(a, $l1, "lhs")?,
                contiguous(b, $l2, "rhs")?,
                $g,
            )),
            (CpuStorage::F64(a), CpuStorage::F64(b)) => CpuStorage::F64($f(
                contiguous(a, $l1, "lhs")?,
                contiguous(b, $l2, "rhs")?,
                $g,
            )),
            (a, b) => bail!(
                "conv2d: unsupported dtypes {:?} / {:?}",
                a.dtype(),
                b.dtype()
            ),
        }
    };
}

struct Conv2dOp {
    stride: usize,
    padding: usize,
}

struct InputGradOp {
    geom: Geometry,
}

struct WeightGradOp {
    geom: Geometry,
}

fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> candle_core::Result<usize> {
    if input + 2 * padding < kernel {
        bail!("conv2d: kernel {kernel} larger than padded input {}", input + 2 * padding);
    }
    Ok((input + 2 * padding - kernel) / stride + 1)
}

fn geometry(x: &Shape, w: &Shape, stride: usize, padding: usize) -> candle_core::Result<Geometry> {
    let (batch, in_c, in_h, in_w) = x.dims4()?;
    let (out_c, wc, k_h, k_w) = w.dims4()?;
    if wc != in_c {
        bail!("conv2d: input has {in_c} channels, kernel expects {wc}");
    }
    Ok(Geometry {
        batch,
        in_c,
        in_h,
        in_w,
        out_c,
        k_h,
        k_w,
        stride,
        padding,
        out_h: out_extent(in_h, k_h, stride, padding)?,
        out_w: out_extent(in_w, k_w, stride, padding)?,
    })
}

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "dirl-conv2d"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = geometry(l1.shape(), l2.shape(), self.stride, self.padding)?;
        let out = dispatch!(s1, l1, s2, l2, forward, &g);
        Ok((out, Shape::from((g.batch, g.out_c, g.out_h, g.out_w))))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let geom = geometry(x.shape(), w.shape(), self.stride, self.padding)?;
        let grad = grad.contiguous()?;
        let gx = grad.apply_op2_no_bwd(&w.contiguous()?, &InputGradOp { geom })?;
        let gw = x.contiguous()?.apply_op2_no_bwd(&grad, &WeightGradOp { geom })?;
        Ok((Some(gx), Some(gw)))
    }
}

impl CustomOp2 for InputGradOp {
    fn name(&self) -> &'static str {
        "dirl-conv2d-input-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.geom;
        let out = dispatch!(s1, l1, s2, l2, input_grad, g);
        Ok((out, Shape::from((g.batch, g.in_c, g.in_h, g.in_w))))
    }
}

impl CustomOp2 for WeightGradOp {
    fn name(&self) -> &'static str {
        "dirl-conv2d-weight-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.geom;
        let out = dispatch!(s1, l1, s2, l2, weight_grad, g);
        Ok((out, Shape::from((g.out_c, g.in_c, g.k_h, g.k_w))))
    }
}

/// Cross-correlation of `x` (B, C, H, W) with `w` (O, C, kh, kw), zero padding
/// `padding` on every side.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> candle_core::Result<Tensor> {
    if stride == 0 {
        bail!("conv2d: stride must be positive");
    }
    x.contiguous()?
        .apply_op2(&w.contiguous()?, Conv2dOp { stride, padding })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn naive(x: &[f64], w: &[f64], g: &Geometry) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.out_c * g.out_h * g.out_w];
        for b in 0..g.batch {
            for o in 0..g.out_c {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = 0.0;
                        for c in 0..g.in_c {
                            for ky in 0..g.k_h {
                                for kx in 0..g.k_w {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                        continue;
                                    }
                                    acc += x[((b * g.in_c + c) * g.in_h + iy as usize) * g.in_w + ix as usize]
                                        * w[((o * g.in_c + c) * g.k_h + ky) * g.k_w + kx];
                                }
                            }
                        }
                        out[((b * g.out_c + o) * g.out_h + oy) * g.out_w + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn det(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * seed).sin()).collect()
    }

    #[test]
    fn matches_direct_loop() {
        let dev = Device::Cpu;
        // the last two kernels overhang the whole input for some taps
        for &(stride, padding, k, h, w) in &[
            (1, 1, 3, 9, 8),
            (2, 1, 3, 9, 8),
            (1, 0, 1, 9, 8),
            (1, 3, 7, 9, 8),
            (2, 0, 3, 9, 8),
            (1, 3, 7, 2, 2),
            (2, 1, 3, 1, 1),
        ] {
            let xs = det(2 * 3 * h * w, 0.7);
            let ws = det(4 * 3 * k * k, 1.3);
            let x = Tensor::from_vec(xs.clone(), (2, 3, h, w), &dev).unwrap();
            let w = Tensor::from_vec(ws.clone(), (4, 3, k, k), &dev).unwrap();
            let y = conv2d(&x, &w, stride, padding).unwrap();
            let g = geometry(x.shape(), w.shape(), stride, padding).unwrap();
            assert_eq!(y.dims(), &[2, 4, g.out_h, g.out_w]);
            let got = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            for (a, b) in got.iter().zip(naive(&xs, &ws, &g)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let dev = Device::Cpu;
        for &(stride, padding) in &[(1, 1), (2, 1)] {
            let x = Var::from_tensor(&Tensor::from_vec(det(2 * 2 * 6 * 6, 0.3), (2, 2, 6, 6), &dev).unwrap()).unwrap();
            let w = Var::from_tensor(&Tensor::from_vec(det(3 * 2 * 9, 0.9), (3, 2, 3, 3), &dev).unwrap()).unwrap();
            let probe = Tensor::from_vec(det(2 * 3 * 36 / (stride * stride), 2.1), (2, 3, 6 / stride, 6 / stride), &dev)
                .unwrap();
            let loss = |x: &Tensor, w: &Tensor| {
                conv2d(x, w, stride, padding)
                    .unwrap()
                    .mul(&probe)
                    .unwrap()
                    .sum_all()
                    .unwrap()
                    .to_scalar::<f64>()
                    .unwrap()
            };
            let grads = conv2d(&x, &w, stride, padding)
                .unwrap()
                .mul(&probe)
                .unwrap()
                .sum_all()
                .unwrap()
                .backward()
                .unwrap();
            for (var, other, is_x) in [(&x, &w, true), (&w, &x, false)] {
                let analytic = grads.get(var).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
                let base = var.flatten_all().unwrap().to_vec1::<f64>().unwrap();
                for i in 0..base.len() {
                    let eval = |d: f64| {
                        let mut v = base.clone();
                        v[i] += d;
                        let t = Tensor::from_vec(v, var.shape(), &dev).unwrap();
                        if is_x {
                            loss(&t, other)
                        } else {
                            loss(other, &t)
                        }
                    };
                    let fd = (eval(1e-6) - eval(-1e-6)) / 2e-6;
                    assert!((fd - analytic[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", analytic[i]);
                }
            }
        }
        let _ = DType::F64;
    }

    #[test]
    fn f32_path_runs() {
        let dev = Device::Cpu;
        let x = Tensor::ones((1, 2, 4, 4), DType::F32, &dev).unwrap();
        let w = Tensor::ones((1, 2, 3, 3), DType::F32, &dev).unwrap();
        let y = conv2d(&x, &w, 1, 1).unwrap();
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v[0], 8.0);
        assert_eq!(v[5], 18.0);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let dev = Device::Cpu;
        let x = Tensor::ones((1, 2, 4, 4), DType::F32, &dev).unwrap();
        let w = Tensor::ones((1, 3, 3, 3), DType::F32, &dev).unwrap();
        assert!(conv2d(&x, &w, 1, 1).is_err());
    }
}

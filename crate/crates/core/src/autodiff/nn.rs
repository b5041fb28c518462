//! Layer primitives: convolution, transposed convolution, affine maps and
//! batch normalization. Convolutions lower to im2col plus gemm.

use super::gemm::matmul;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize) -> Self {
        let pad = kernel / 2;
        Geometry {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: (height + 2 * pad - kernel) / stride + 1,
            out_w: (width + 2 * pad - kernel) / stride + 1,
        }
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output indices along one axis whose tap `k` lands inside an input
    /// of length `len`.
    #[inline]
    fn valid(&self, k: usize, len: usize, out: usize) -> std::ops::Range<usize> {
        let lo = self.pad.saturating_sub(k).div_ceil(self.stride);
        let hi = ((len + self.pad - k - 1) / self.stride + 1).min(out);
        lo..hi.max(lo)
    }

    /// Calls `f(dst_offset, src_offset)` for every in-bounds pair of tap
    /// `(ky, kx)`: output position within a patch row and input position
    /// within a channel plane.
    #[inline]
    fn for_each_tap(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize)) {
        let xs = self.valid(kx, self.width, self.out_w);
        for oy in self.valid(ky, self.height, self.out_h) {
            let y = oy * self.stride + ky - self.pad;
            for ox in xs.clone() {
                f(oy * self.out_w + ox, y * self.width + ox * self.stride + kx - self.pad);
            }
        }
    }
}

/// `[C·k·k, Ho·Wo]` patch matrix of one image `[C, H, W]`.
fn im2col(img: &[f64], g: &Geometry) -> Vec<f64> {
    let p = g.positions();
    let mut cols = vec![0.0; g.rows() * p];
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                g.for_each_tap(ky, kx, |d, s| dst[d] = plane[s]);
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch columns back onto `[C, H, W]`.
fn col2im(cols: &[f64], g: &Geometry, img: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * p..(row + 1) * p];
                g.for_each_tap(ky, kx, |d, s| plane[s] += src[d]);
            }
        }
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::Dimension(format!(
            "{what} must be 4-D, got {:?}",
            t.shape()
        ))),
    }
}

fn check_bias(bias: &Tensor, n: usize) -> Result<()> {
    if bias.shape() != [n] {
        return Err(Error::Dimension(format!(
            "bias {:?} does not match {n} outputs",
            bias.shape()
        )));
    }
    Ok(())
}

/// Square convolution with odd kernel (1 or 3), zero padding `k/2` and stride
/// 1 or 2. Stride 2 on an even-sized input halves each spatial dimension.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let [b, c, h, w] = dims4(input, "conv2d input")?;
    let [f, wc, kh, kw] = dims4(weight, "conv2d weight")?;
    if wc != c {
        return Err(Error::Dimension(format!(
            "conv2d: input has {c} channels, weight expects {wc}"
        )));
    }
    if kh != kw || !(kh == 1 || kh == 3) {
        return Err(Error::Dimension(format!(
            "conv2d: unsupported kernel {kh}x{kw}"
        )));
    }
    if !(stride == 1 || stride == 2) {
        return Err(Error::Dimension(format!("conv2d: unsupported stride {stride}")));
    }
    if stride == 2 && (h % 2 != 0 || w % 2 != 0) {
        return Err(Error::Dimension(format!(
            "conv2d: stride 2 needs even spatial dims, got {h}x{w}"
        )));
    }
    check_bias(bias, f)?;
    let g = Geometry::new(c, h, w, kh, stride);
    let (rows, p) = (g.rows(), g.positions());
    let mut out = vec![0.0; b * f * p];
    {
        let x = input.data();
        let wt = weight.data();
        let bs = bias.data();
        for bi in 0..b {
            let cols = im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], &g);
            let o = &mut out[bi * f * p..(bi + 1) * f * p];
            for (fi, chunk) in o.chunks_mut(p).enumerate() {
                chunk.fill(bs[fi]);
            }
            matmul(f, rows, p, &wt, false, &cols, false, o, true);
        }
    }
    Ok(Tensor::from_op(
        vec![b, f, g.out_h, g.out_w],
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |ctx| {
            let x = ctx.inputs[0].data();
            let wt = ctx.inputs[1].data();
            let mut gx = ctx.needs(0).then(|| vec![0.0; b * c * h * w]);
            let mut gw = ctx.needs(1).then(|| vec![0.0; f * rows]);
            let mut gb = ctx.needs(2).then(|| vec![0.0; f]);
            let mut dcols = vec![0.0; rows * p];
            for bi in 0..b {
                let dy = &ctx.grad[bi * f * p..(bi + 1) * f * p];
                if let Some(gb) = gb.as_mut() {
                    for (fi, chunk) in dy.chunks(p).enumerate() {
                        gb[fi] += chunk.iter().sum::<f64>();
                    }
                }
                if let Some(gw) = gw.as_mut() {
                    let cols = im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], &g);
                    matmul(f, p, rows, dy, false, &cols, true, gw, true);
                }
                if let Some(gx) = gx.as_mut() {
                    matmul(rows, f, p, &wt, true, dy, false, &mut dcols, false);
                    col2im(&dcols, &g, &mut gx[bi * c * h * w..(bi + 1) * c * h * w]);
                }
            }
            vec![gx, gw, gb]
        }),
    ))
}

/// 3×3 transposed convolution with stride 2: `[B, C, H, W]` becomes
/// `[B, F, 2H, 2W]`. Weight layout is `[C, F, 3, 3]`.
pub fn deconv2d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [b, c, h, w] = dims4(input, "deconv2d input")?;
    let [wc, f, kh, kw] = dims4(weight, "deconv2d weight")?;
    if wc != c {
        return Err(Error::Dimension(format!(
            "deconv2d: input has {c} channels, weight expects {wc}"
        )));
    }
    if kh != 3 || kw != 3 {
        return Err(Error::Dimension(format!(
            "deconv2d: unsupported kernel {kh}x{kw}"
        )));
    }
    check_bias(bias, f)?;
    // Geometry of the strided conv this op is the adjoint of.
    let g = Geometry::new(f, 2 * h, 2 * w, 3, 2);
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    let (rows, p) = (g.rows(), g.positions());
    let plane_out = 4 * h * w;
    let mut out = vec![0.0; b * f * plane_out];
    {
        let x = input.data();
        let wt = weight.data();
        let bs = bias.data();
        let mut cols = vec![0.0; rows * p];
        for bi in 0..b {
            matmul(rows, c, p, &wt, true, &x[bi * c * p..(bi + 1) * c * p], false, &mut cols, false);
            let o = &mut out[bi * f * plane_out..(bi + 1) * f * plane_out];
            for (fi, chunk) in o.chunks_mut(plane_out).enumerate() {
                chunk.fill(bs[fi]);
            }
            col2im(&cols, &g, o);
        }
    }
    Ok(Tensor::from_op(
        vec![b, f, 2 * h, 2 * w],
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |ctx| {
            let x = ctx.inputs[0].data();
            let wt = ctx.inputs[1].data();
            let mut gx = ctx.needs(0).then(|| vec![0.0; b * c * p]);
            let mut gw = ctx.needs(1).then(|| vec![0.0; c * rows]);
            let mut gb = ctx.needs(2).then(|| vec![0.0; f]);
            for bi in 0..b {
                let dy = &ctx.grad[bi * f * plane_out..(bi + 1) * f * plane_out];
                if let Some(gb) = gb.as_mut() {
                    for (fi, chunk) in dy.chunks(plane_out).enumerate() {
                        gb[fi] += chunk.iter().sum::<f64>();
                    }
                }
                if gx.is_none() && gw.is_none() {
                    continue;
                }
                let dcols = im2col(dy, &g);
                if let Some(gx) = gx.as_mut() {
                    matmul(c, rows, p, &wt, false, &dcols, false, &mut gx[bi * c * p..(bi + 1) * c * p], false);
                }
                if let Some(gw) = gw.as_mut() {
                    matmul(c, p, rows, &x[bi * c * p..(bi + 1) * c * p], false, &dcols, true, gw, true);
                }
            }
            vec![gx, gw, gb]
        }),
    ))
}

/// `input [B, D] · weightᵀ [D, E] + bias [E]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (&[b, d], &[e, wd]) = (input.shape(), weight.shape()) else {
        return Err(Error::Dimension(format!(
            "linear expects [B,D] and [E,D], got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    };
    if wd != d {
        return Err(Error::Dimension(format!(
            "linear: input width {d}, weight expects {wd}"
        )));
    }
    check_bias(bias, e)?;
    let mut out = vec![0.0; b * e];
    {
        let bs = bias.data();
        for row in out.chunks_mut(e) {
            row.copy_from_slice(&bs);
        }
        matmul(b, d, e, &input.data(), false, &weight.data(), true, &mut out, true);
    }
    Ok(Tensor::from_op(
        vec![b, e],
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |ctx| {
            let dy = ctx.grad;
            let gx = ctx.needs(0).then(|| {
                let mut g = vec![0.0; b * d];
                matmul(b, e, d, dy, false, &ctx.inputs[1].data(), false, &mut g, false);
                g
            });
            let gw = ctx.needs(1).then(|| {
                let mut g = vec![0.0; e * d];
                matmul(e, b, d, dy, true, &ctx.inputs[0].data(), false, &mut g, false);
                g
            });
            let gb = ctx.needs(2).then(|| {
                let mut g = vec![0.0; e];
                for row in dy.chunks(e) {
                    g.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                }
                g
            });
            vec![gx, gw, gb]
        }),
    ))
}

/// Per-channel running mean and variance for batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl RunningStats {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }
}

/// Batch normalization over `[B, C]` or `[B, C, H, W]`, one statistic per
/// channel. Training mode normalizes with batch statistics and updates
/// `state`; eval mode uses `state` as-is.
pub fn batchnorm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &mut RunningStats,
    training: bool,
) -> Result<Tensor> {
    let shape = input.shape().to_vec();
    let (b, c, inner) = match shape[..] {
        [b, c] => (b, c, 1),
        [b, c, h, w] => (b, c, h * w),
        _ => {
            return Err(Error::Dimension(format!(
                "batchnorm expects 2-D or 4-D input, got {shape:?}"
            )))
        }
    };
    if gamma.shape() != [c] || beta.shape() != [c] || state.mean.len() != c {
        return Err(Error::Dimension(format!(
            "batchnorm: {c} channels but gamma {:?}, beta {:?}, stats {}",
            gamma.shape(),
            beta.shape(),
            state.mean.len()
        )));
    }
    if training && b < 2 {
        return Err(Error::DegenerateBatch(b));
    }
    let count = (b * inner) as f64;
    let eps = state.eps;
    let idx = move |bi: usize, ci: usize| (bi * c + ci) * inner;

    let x = input.data();
    let (mean, var) = if training {
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let mut s = 0.0;
            for bi in 0..b {
                s += x[idx(bi, ci)..idx(bi, ci) + inner].iter().sum::<f64>();
            }
            mean[ci] = s / count;
            let mut v = 0.0;
            for bi in 0..b {
                v += x[idx(bi, ci)..idx(bi, ci) + inner]
                    .iter()
                    .map(|&xv| (xv - mean[ci]).powi(2))
                    .sum::<f64>();
            }
            var[ci] = v / count;
        }
        let m = state.momentum;
        for ci in 0..c {
            state.mean[ci] = (1.0 - m) * state.mean[ci] + m * mean[ci];
            let unbiased = var[ci] * count / (count - 1.0);
            state.var[ci] = (1.0 - m) * state.var[ci] + m * unbiased;
        }
        (mean, var)
    } else {
        (state.mean.clone(), state.var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    {
        let gm = gamma.data();
        let bt = beta.data();
        for bi in 0..b {
            for ci in 0..c {
                let o = idx(bi, ci);
                for k in o..o + inner {
                    xhat[k] = (x[k] - mean[ci]) * inv_std[ci];
                    out[k] = gm[ci] * xhat[k] + bt[ci];
                }
            }
        }
    }
    drop(x);
    Ok(Tensor::from_op(
        shape,
        out,
        vec![input.clone(), gamma.clone(), beta.clone()],
        Box::new(move |ctx| {
            let dy = ctx.grad;
            let gm = ctx.inputs[1].data();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for bi in 0..b {
                for ci in 0..c {
                    let o = idx(bi, ci);
                    for k in o..o + inner {
                        dgamma[ci] += dy[k] * xhat[k];
                        dbeta[ci] += dy[k];
                    }
                }
            }
            let gx = ctx.needs(0).then(|| {
                let mut gx = vec![0.0; dy.len()];
                for ci in 0..c {
                    let scale = gm[ci] * inv_std[ci];
                    for bi in 0..b {
                        let o = idx(bi, ci);
                        for k in o..o + inner {
                            gx[k] = if training {
                                scale * (dy[k] - dbeta[ci] / count - xhat[k] * dgamma[ci] / count)
                            } else {
                                scale * dy[k]
                            };
                        }
                    }
                }
                gx
            });
            vec![gx, ctx.needs(1).then_some(dgamma), ctx.needs(2).then_some(dbeta)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    #[test]
    fn conv_center_of_ones_is_nine() {
        let x = Tensor::full(&[1, 1, 4, 4], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        let v = y.to_vec();
        assert_eq!(v[5], 9.0);
        assert_eq!(v[0], 4.0);
    }

    #[test]
    fn stride_two_halves() {
        let x = Tensor::zeros(&[1, 1, 8, 8]);
        let y = conv2d(&x, &Tensor::zeros(&[1, 1, 3, 3]), &Tensor::zeros(&[1]), 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        let odd = Tensor::zeros(&[1, 1, 7, 7]);
        assert!(conv2d(&odd, &Tensor::zeros(&[1, 1, 3, 3]), &Tensor::zeros(&[1]), 2).is_err());
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, &Tensor::zeros(&[1]), 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn deconv_doubles_and_broadcasts_bias() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let w = Tensor::full(&[1, 2, 3, 3], 0.7);
        let b = Tensor::new(&[2], vec![0.25, -1.0]).unwrap();
        let y = deconv2d(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 4]);
        let v = y.to_vec();
        assert!(v[..16].iter().all(|&z| z == 0.25));
        assert!(v[16..].iter().all(|&z| z == -1.0));
        assert!(deconv2d(&Tensor::zeros(&[1, 3, 2, 2]), &w, &b).is_err());
    }

    #[test]
    fn conv_then_deconv_preserves_shape() {
        let x = Tensor::zeros(&[2, 3, 6, 6]);
        let y = conv2d(&x, &Tensor::zeros(&[4, 3, 3, 3]), &Tensor::zeros(&[4]), 2).unwrap();
        let z = deconv2d(&y, &Tensor::zeros(&[4, 3, 3, 3]), &Tensor::zeros(&[3])).unwrap();
        assert_eq!(z.shape(), x.shape());
    }

    #[test]
    fn linear_identity_and_zero_maps() {
        let x = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, -4.0, 5.0, 6.0]).unwrap();
        let eye = Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(linear(&x, &eye, &Tensor::zeros(&[3])).unwrap().to_vec(), x.to_vec());
        let b = Tensor::new(&[2], vec![0.5, -0.5]).unwrap();
        let y = linear(&x, &Tensor::zeros(&[2, 3]), &b).unwrap();
        assert_eq!(y.to_vec(), vec![0.5, -0.5, 0.5, -0.5]);
        assert!(linear(&x, &Tensor::zeros(&[2, 4]), &b).is_err());
    }

    #[test]
    fn batchnorm_constant_channel_gives_beta() {
        let x = Tensor::full(&[3, 2, 2, 2], 4.0);
        let gamma = Tensor::full(&[2], 2.0);
        let beta = Tensor::new(&[2], vec![0.3, -0.7]).unwrap();
        let mut st = RunningStats::new(2);
        let y = batchnorm(&x, &gamma, &beta, &mut st, true).unwrap().to_vec();
        assert!(y[..4].iter().chain(&y[8..12]).all(|&v| v == 0.3));
        assert!(y[4..8].iter().all(|&v| v == -0.7));
    }

    #[test]
    fn batchnorm_rejects_single_sample_training() {
        let x = Tensor::zeros(&[1, 2]);
        let mut st = RunningStats::new(2);
        let r = batchnorm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &mut st, true);
        assert!(matches!(r, Err(Error::DegenerateBatch(1))));
        let r = batchnorm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &mut st, false);
        assert!(r.is_ok());
    }

    #[test]
    fn batchnorm_running_stats_update() {
        let x = Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap();
        let mut st = RunningStats::new(1);
        batchnorm(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), &mut st, true).unwrap();
        assert!((st.mean[0] - 0.2).abs() < 1e-15);
        // unbiased variance 2.0
        assert!((st.var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn gradient_flows_through_conv_stack() {
        let x = Tensor::param(&[1, 1, 4, 4], vec![0.1; 16]).unwrap();
        let w = Tensor::param(&[2, 1, 3, 3], vec![0.2; 18]).unwrap();
        let y = conv2d(&x, &w, &Tensor::zeros(&[2]), 2).unwrap();
        ops::sum(&y).backward().unwrap();
        assert!(x.grad().is_some() && w.grad().is_some());
    }
}

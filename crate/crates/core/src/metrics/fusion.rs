//! Lifting the eight predicted coordinate images into one world-frame cloud.

use crate::autodiff::{GradCtx, Tensor};
use crate::camera::{backproject, Intrinsics, PointCloud, Viewpoint};
use crate::coord_image::{CoordImage, CH_DEPTH, CH_DU, CH_DV, CH_MASK, COORD_CHANNELS};
use crate::error::{Error, Result};
use crate::generator::NUM_VIEWS;
use crate::pseudorender::POINT_COLUMNS;

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fusion {
    pub cloud: PointCloud,
    pub skipped_nonfinite: usize,
}

impl Fusion {
    /// Set when no pixel of any view passed the threshold.
    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Config(format!("mask threshold must lie in (0, 1), got {t}")));
    }
    Ok(())
}

/// Back-projects every view through the viewpoint named by its
/// `view_index` and concatenates the results in the given order.
pub fn fuse_viewpoints(
    views: &[CoordImage],
    viewpoints: &[Viewpoint],
    intr: &Intrinsics,
    mask_threshold: f64,
) -> Result<Fusion> {
    check_threshold(mask_threshold)?;
    if views.len() != NUM_VIEWS || viewpoints.len() != NUM_VIEWS {
        return Err(Error::Dimension(format!(
            "fusion needs {NUM_VIEWS} views and viewpoints, got {} and {}",
            views.len(),
            viewpoints.len()
        )));
    }
    let mut out = Fusion::default();
    for v in views {
        let vp = viewpoints.get(v.view_index).ok_or(Error::Index {
            index: v.view_index,
            len: viewpoints.len(),
        })?;
        let b = backproject(v, vp, intr, mask_threshold);
        out.skipped_nonfinite += b.skipped_nonfinite;
        out.cloud.extend(b.cloud);
    }
    Ok(out)
}

/// Differentiable fusion of one batch sample.
///
/// `branches` are the decoder outputs `[B, 4k, H, W]` in branch order, so
/// branch `j` channel group `i` is view `j·k + i`. Returns a `[P, 4]`
/// tensor of `(x, y, z, mask)` rows for pixels whose mask is at least the
/// threshold, or `None` when nothing passes. Pixels with non-finite
/// predictions are dropped.
pub fn fuse_points(
    branches: &[Tensor],
    sample: usize,
    viewpoints: &[Viewpoint],
    intr: &Intrinsics,
    mask_threshold: f64,
) -> Result<Option<Tensor>> {
    check_threshold(mask_threshold)?;
    let first = branches
        .first()
        .ok_or_else(|| Error::Dimension("fusion needs at least one branch".into()))?;
    let &[batch, ch, h, w] = first.shape() else {
        return Err(Error::Dimension(format!("branch output must be 4-D, got {:?}", first.shape())));
    };
    if branches.iter().any(|t| t.shape() != first.shape()) || ch % COORD_CHANNELS != 0 {
        return Err(Error::Dimension("branch outputs disagree in shape".into()));
    }
    let k = ch / COORD_CHANNELS;
    if k * branches.len() != viewpoints.len() {
        return Err(Error::Dimension(format!(
            "{} views predicted but {} viewpoints given",
            k * branches.len(),
            viewpoints.len()
        )));
    }
    if sample >= batch {
        return Err(Error::Index { index: sample, len: batch });
    }
    let (fx, fy, cx, cy) = (intr.fx(), intr.fy(), intr.cx(), intr.cy());
    let plane = h * w;

    // (branch, flat offset of the Δu channel, row, col) per kept pixel.
    let mut picks: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for (j, t) in branches.iter().enumerate() {
        let d = t.data();
        for v in 0..k {
            let vp = &viewpoints[j * k + v];
            let base = (sample * ch + v * COORD_CHANNELS) * plane;
            for r in 0..h {
                for c in 0..w {
                    let px = r * w + c;
                    let m = d[base + CH_MASK * plane + px];
                    if m < mask_threshold {
                        continue;
                    }
                    let du = d[base + CH_DU * plane + px];
                    let dv = d[base + CH_DV * plane + px];
                    let z = d[base + CH_DEPTH * plane + px];
                    if !(du.is_finite() && dv.is_finite() && z.is_finite()) {
                        continue;
                    }
                    let p = crate::camera::backproject_pixel(c as f64 + du, r as f64 + dv, z, vp, intr);
                    rows.extend_from_slice(&[p[0], p[1], p[2], m]);
                    picks.push((j, base + px, r, c));
                }
            }
        }
    }
    if picks.is_empty() {
        return Ok(None);
    }
    let rot: Vec<_> = viewpoints.iter().map(|vp| vp.rotation).collect();
    Ok(Some(Tensor::from_op(
        vec![picks.len(), POINT_COLUMNS],
        rows,
        branches.to_vec(),
        Box::new(move |ctx: &GradCtx<'_>| {
            let mut grads: Vec<Option<Vec<f64>>> = ctx
                .inputs
                .iter()
                .enumerate()
                .map(|(i, t)| ctx.needs(i).then(|| vec![0.0; t.numel()]))
                .collect();
            let datas: Vec<_> = ctx.inputs.iter().map(|t| t.data()).collect();
            for (n, &(j, off, r, c)) in picks.iter().enumerate() {
                let Some(g) = grads[j].as_mut() else { continue };
                let gp = &ctx.grad[n * POINT_COLUMNS..n * POINT_COLUMNS + 3];
                let view = j * k + (off / plane - sample * ch) / COORD_CHANNELS;
                // p = Rᵀ (q − t), so dL/dq = R · dL/dp.
                let gq = rot[view] * nalgebra::Vector3::new(gp[0], gp[1], gp[2]);
                let d = &datas[j];
                let du = d[off + CH_DU * plane];
                let dv = d[off + CH_DV * plane];
                let z = d[off + CH_DEPTH * plane];
                let (u, v) = (c as f64 + du, r as f64 + dv);
                g[off + CH_DU * plane] += gq[0] * z / fx;
                g[off + CH_DV * plane] += gq[1] * z / fy;
                g[off + CH_DEPTH * plane] += gq[0] * (u - cx) / fx + gq[1] * (v - cy) / fy + gq[2];
                g[off + CH_MASK * plane] += ctx.grad[n * POINT_COLUMNS + 3];
            }
            grads
        }),
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::cube_corner_viewpoints;

    fn views(mask: f64, size: usize) -> Vec<CoordImage> {
        (0..8)
            .map(|i| {
                let mut img = CoordImage::zeros(size, i);
                for r in 0..size {
                    for c in 0..size {
                        img.set(CH_DEPTH, r, c, 2.0);
                        img.set(CH_MASK, r, c, mask);
                    }
                }
                img
            })
            .collect()
    }

    #[test]
    fn full_and_empty_occupancy_counts() {
        let vps = cube_corner_viewpoints(2.5).unwrap();
        let intr = Intrinsics::for_image(8);
        assert_eq!(fuse_viewpoints(&views(1.0, 8), &vps, &intr, 0.5).unwrap().cloud.len(), 512);
        assert!(fuse_viewpoints(&views(0.0, 8), &vps, &intr, 0.5).unwrap().is_empty());
        assert_eq!(fuse_viewpoints(&views(0.5, 8), &vps, &intr, 0.5).unwrap().cloud.len(), 512);
        assert!(fuse_viewpoints(&views(0.5, 8), &vps, &intr, 0.51).unwrap().is_empty());
    }

    #[test]
    fn bad_inputs() {
        let vps = cube_corner_viewpoints(2.5).unwrap();
        let intr = Intrinsics::for_image(8);
        assert!(matches!(
            fuse_viewpoints(&views(1.0, 8)[..7], &vps, &intr, 0.5),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(fuse_viewpoints(&views(1.0, 8), &vps, &intr, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn tensor_path_matches_plain_path() {
        let vps = cube_corner_viewpoints(2.5).unwrap();
        let intr = Intrinsics::for_image(8);
        let mut imgs = views(0.0, 8);
        for (i, img) in imgs.iter_mut().enumerate() {
            for r in 0..8 {
                for c in 0..8 {
                    img.set(CH_DU, r, c, 0.1 * i as f64 - 0.3);
                    img.set(CH_DV, r, c, 0.02 * c as f64);
                    img.set(CH_MASK, r, c, ((r + c + i) % 3) as f64 / 2.0);
                }
            }
        }
        let plain = fuse_viewpoints(&imgs, &vps, &intr, 0.5).unwrap();
        // Two branches of four views each.
        let branches: Vec<Tensor> = (0..2)
            .map(|j| {
                let data = imgs[j * 4..(j + 1) * 4].iter().flat_map(|v| v.grid.clone()).collect();
                Tensor::new(&[1, 16, 8, 8], data).unwrap()
            })
            .collect();
        let t = fuse_points(&branches, 0, &vps, &intr, 0.5).unwrap().unwrap();
        let d = t.to_vec();
        assert_eq!(d.len(), plain.cloud.len() * 4);
        let conf = plain.cloud.confidence.as_ref().unwrap();
        for (n, p) in plain.cloud.points.iter().enumerate() {
            assert_eq!(&d[n * 4..n * 4 + 3], p);
            assert_eq!(d[n * 4 + 3], conf[n]);
        }
    }
}

//! Differentiable z-buffer rendering of a weighted point cloud.
//!
//! Points are projected into an `upsample`× finer grid where each cell keeps
//! its nearest point. Low-resolution depth pools the winners of a pixel's
//! block (nearest winner by default, or their mean); mask is the largest
//! winner weight. Pixels with no winner get the far depth and mask 0.
//! Gradients reach the winning points only: depth through their
//! camera-frame z, mask through the weight of the block's strongest winner.

use crate::autodiff::{Tensor, GradCtx};
use crate::camera::{Intrinsics, Point3, Viewpoint, DEFAULT_CAMERA_RADIUS};
use crate::error::{Error, Result};

pub const DEFAULT_UPSAMPLE: usize = 5;

/// Columns of the point tensor handed to [`pseudo_render`].
pub const POINT_COLUMNS: usize = 4;

/// Depth of the background, as a multiple of the camera radius.
pub const FAR_FACTOR: f64 = 10.0;

pub const MIN_RENDER_SIZE: usize = 8;

/// How the cell winners of one output pixel combine into its depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthPool {
    /// Nearest winner, so the output pixel holds the minimum depth of every
    /// point landing in it.
    #[default]
    Min,
    /// Mean over occupied cells. Mixes front and back surfaces when the
    /// cloud is sparser than the fine grid.
    Mean,
}

impl std::str::FromStr for DepthPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(DepthPool::Min),
            "mean" => Ok(DepthPool::Mean),
            other => Err(Error::Config(format!("unknown depth pooling '{other}' (known: min, mean)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub size: usize,
    pub upsample: usize,
    pub far: f64,
    pub pool: DepthPool,
}

impl RenderConfig {
    pub fn new(size: usize) -> Self {
        RenderConfig {
            size,
            upsample: DEFAULT_UPSAMPLE,
            far: FAR_FACTOR * DEFAULT_CAMERA_RADIUS,
            pool: DepthPool::default(),
        }
    }

    pub fn with_pool(mut self, pool: DepthPool) -> Self {
        self.pool = pool;
        self
    }

    pub fn with_upsample(mut self, upsample: usize) -> Self {
        self.upsample = upsample;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.size < MIN_RENDER_SIZE || self.upsample == 0 {
            return Err(Error::Config(format!(
                "render size must be at least {MIN_RENDER_SIZE} and upsample positive, got {} and {}",
                self.size, self.upsample
            )));
        }
        Ok(())
    }
}

/// A depth map and mask of `size × size` pixels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderPair {
    pub size: usize,
    pub depth: Vec<f64>,
    pub mask: Vec<f64>,
}

impl RenderPair {
    pub fn background(size: usize, far: f64) -> Self {
        RenderPair {
            size,
            depth: vec![far; size * size],
            mask: vec![0.0; size * size],
        }
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m > 0.5).count() as f64 / self.mask.len().max(1) as f64
    }
}

/// Which point won each low-resolution pixel, for the backward pass.
#[derive(Debug, Clone, Default)]
struct Winners {
    /// Per low-res pixel, the points its depth is averaged over: every
    /// occupied cell's winner, or only the nearest of them.
    depth: Vec<Vec<usize>>,
    /// Per low-res pixel, the point supplying the mask value.
    mask: Vec<Option<usize>>,
}

fn zbuffer(
    points: &[f64],
    vp: &Viewpoint,
    intr: &Intrinsics,
    cfg: &RenderConfig,
) -> (RenderPair, Winners) {
    let hi = cfg.size * cfg.upsample;
    let mut cell: Vec<Option<(f64, usize)>> = vec![None; hi * hi];
    for (i, row) in points.chunks_exact(POINT_COLUMNS).enumerate() {
        let p: Point3 = [row[0], row[1], row[2]];
        let q = vp.to_camera(&p);
        if !(q[2] > 0.0) || !q.iter().all(|c| c.is_finite()) {
            continue;
        }
        let x = intr.k * q;
        let (u, v) = (x[0] / q[2], x[1] / q[2]);
        let s = cfg.upsample as f64;
        let (c, r) = (((u + 0.5) * s).floor(), ((v + 0.5) * s).floor());
        if !(c >= 0.0 && r >= 0.0 && c < hi as f64 && r < hi as f64) {
            continue;
        }
        let slot = &mut cell[r as usize * hi + c as usize];
        // Strictly nearer wins, so ties keep the lowest index.
        if slot.is_none_or(|(z, _)| q[2] < z) {
            *slot = Some((q[2], i));
        }
    }

    let n = cfg.size;
    let mut out = RenderPair::background(n, cfg.far);
    let mut blocks: Vec<Vec<(f64, usize)>> = vec![Vec::new(); n * n];
    for r in 0..hi {
        for c in 0..hi {
            if let Some(w) = cell[r * hi + c] {
                blocks[(r / cfg.upsample) * n + c / cfg.upsample].push(w);
            }
        }
    }
    let mut win = Winners {
        depth: vec![Vec::new(); n * n],
        mask: vec![None; n * n],
    };
    for (px, cells) in blocks.iter().enumerate() {
        if cells.is_empty() {
            continue;
        }
        win.depth[px] = match cfg.pool {
            DepthPool::Min => {
                let near = cells
                    .iter()
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .expect("nonempty block");
                out.depth[px] = near.0;
                vec![near.1]
            }
            DepthPool::Mean => {
                out.depth[px] = cells.iter().map(|w| w.0).sum::<f64>() / cells.len() as f64;
                cells.iter().map(|w| w.1).collect()
            }
        };
        let mut best: Option<usize> = None;
        for &(_, i) in cells {
            let w = points[i * POINT_COLUMNS + 3];
            if best.is_none_or(|b| w > points[b * POINT_COLUMNS + 3]) {
                best = Some(i);
            }
        }
        win.mask[px] = best;
        out.mask[px] = best.map_or(0.0, |b| points[b * POINT_COLUMNS + 3]);
    }
    (out, win)
}

/// Renders a `[P, 4]` tensor of `(x, y, z, weight)` rows into a `[2, H, W]`
/// tensor holding depth then mask.
pub fn pseudo_render(points: &Tensor, vp: &Viewpoint, intr: &Intrinsics, cfg: &RenderConfig) -> Result<Tensor> {
    cfg.validate()?;
    match points.shape() {
        [_, c] if *c == POINT_COLUMNS => {}
        s => {
            return Err(Error::Dimension(format!(
                "pseudo_render expects [P,{POINT_COLUMNS}] points, got {s:?}"
            )))
        }
    }
    let (pair, win) = zbuffer(&points.data(), vp, intr, cfg);
    let n = cfg.size;
    let mut data = pair.depth;
    data.extend(pair.mask);
    let zrow = [vp.rotation[(2, 0)], vp.rotation[(2, 1)], vp.rotation[(2, 2)]];
    Ok(Tensor::from_op(
        vec![2, n, n],
        data,
        vec![points.clone()],
        Box::new(move |ctx: &GradCtx<'_>| {
            let mut g = vec![0.0; ctx.inputs[0].numel()];
            let plane = n * n;
            for px in 0..plane {
                let gd = ctx.grad[px];
                let ids = &win.depth[px];
                if gd != 0.0 && !ids.is_empty() {
                    let share = gd / ids.len() as f64;
                    for &i in ids {
                        for (a, r) in zrow.iter().enumerate() {
                            g[i * POINT_COLUMNS + a] += share * r;
                        }
                    }
                }
                if let Some(i) = win.mask[px] {
                    g[i * POINT_COLUMNS + 3] += ctx.grad[plane + px];
                }
            }
            vec![Some(g)]
        }),
    ))
}

/// Non-differentiable render of plain points with unit weights.
pub fn render_points(points: &[Point3], vp: &Viewpoint, intr: &Intrinsics, cfg: &RenderConfig) -> Result<RenderPair> {
    cfg.validate()?;
    let flat: Vec<f64> = points.iter().flat_map(|p| [p[0], p[1], p[2], 1.0]).collect();
    Ok(zbuffer(&flat, vp, intr, cfg).0)
}

/// Splits a `[2, H, W]` render tensor into a [`RenderPair`].
pub fn to_pair(t: &Tensor) -> Result<RenderPair> {
    let &[2, n, m] = t.shape() else {
        return Err(Error::Dimension(format!("expected [2,H,W], got {:?}", t.shape())));
    };
    if n != m {
        return Err(Error::Dimension(format!("render must be square, got {n}x{m}")));
    }
    let d = t.to_vec();
    Ok(RenderPair {
        size: n,
        depth: d[..n * n].to_vec(),
        mask: d[n * n..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn setup() -> (Viewpoint, Intrinsics, RenderConfig) {
        let vp = Viewpoint::identity();
        let intr = Intrinsics::new(8.0, 8.0, 4.0, 4.0).unwrap();
        (vp, intr, RenderConfig::new(8).with_upsample(2))
    }

    #[test]
    fn empty_cloud_is_background() {
        let (vp, intr, cfg) = setup();
        let out = render_points(&[], &vp, &intr, &cfg).unwrap();
        assert_eq!(out, RenderPair::background(8, cfg.far));
    }

    #[test]
    fn nearest_point_wins_and_ties_keep_first() {
        let (vp, intr, cfg) = setup();
        // All land on pixel (4, 4), at z = 3, 2 and 2.
        let pts = Tensor::new(&[3, 4], vec![0.0, 0.0, 3.0, 0.9, 0.0, 0.0, 2.0, 0.4, 0.0, 0.0, 2.0, 0.7])
            .unwrap();
        let out = to_pair(&pseudo_render(&pts, &vp, &intr, &cfg).unwrap()).unwrap();
        assert_eq!(out.depth[4 * 8 + 4], 2.0);
        assert_eq!(out.mask[4 * 8 + 4], 0.4);
    }

    #[test]
    fn behind_camera_is_ignored() {
        let (vp, intr, cfg) = setup();
        let out = render_points(&[[0.0, 0.0, -1.0]], &vp, &intr, &cfg).unwrap();
        assert_eq!(out.mask.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn gradient_reaches_winners_only() {
        let (_, intr, cfg) = setup();
        let vp = Viewpoint::new(
            nalgebra::Matrix3::identity(),
            Vector3::new(0.0, 0.0, 0.5),
            "shifted",
        )
        .unwrap();
        let pts = Tensor::param(&[2, 4], vec![0.0, 0.0, 3.0, 0.9, 0.0, 0.0, 2.0, 0.4]).unwrap();
        let out = pseudo_render(&pts, &vp, &intr, &cfg).unwrap();
        crate::autodiff::ops::sum(&out).backward().unwrap();
        let g = pts.grad().unwrap();
        assert_eq!(&g[..4], &[0.0; 4]);
        assert_eq!(&g[4..], &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_shape() {
        let (vp, intr, cfg) = setup();
        let pts = Tensor::zeros(&[2, 3]);
        assert!(matches!(pseudo_render(&pts, &vp, &intr, &cfg), Err(Error::Dimension(_))));
    }
}

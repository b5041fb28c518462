//! Ground-truth depth/mask renders and shaded RGB inputs.

use std::sync::OnceLock;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::shapes::{Hit, Shape};
use crate::camera::{Intrinsics, Viewpoint};
use crate::error::Result;
use crate::pseudorender::{render_points, RenderConfig, RenderPair};
use crate::registry::Registry;

/// Ray through the centre of pixel `(row, col)`: world origin and a world
/// direction whose camera-frame z component is 1, so the hit parameter is
/// the camera depth.
pub fn pixel_ray(row: usize, col: usize, vp: &Viewpoint, intr: &Intrinsics) -> (Vector3<f64>, Vector3<f64>) {
    let dc = intr.inverse() * Vector3::new(col as f64, row as f64, 1.0);
    (vp.camera_center(), vp.rotation.transpose() * dc)
}

fn cast(shape: &dyn Shape, row: usize, col: usize, vp: &Viewpoint, intr: &Intrinsics) -> Option<Hit> {
    let (o, d) = pixel_ray(row, col, vp, intr);
    shape.intersect(&o, &d)
}

/// Produces a binary-mask ground-truth render of a shape.
pub trait GtRenderer: Send + Sync {
    fn name(&self) -> &'static str;
    fn render(&self, shape: &dyn Shape, vp: &Viewpoint, intr: &Intrinsics, size: usize, far: f64) -> Result<RenderPair>;
}

/// Exact surface intersection at every pixel centre.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayCast;

impl GtRenderer for RayCast {
    fn name(&self) -> &'static str {
        "raycast"
    }

    fn render(&self, shape: &dyn Shape, vp: &Viewpoint, intr: &Intrinsics, size: usize, far: f64) -> Result<RenderPair> {
        let mut out = RenderPair::background(size, far);
        for r in 0..size {
            for c in 0..size {
                if let Some(h) = cast(shape, r, c, vp, intr) {
                    out.depth[r * size + c] = h.t;
                    out.mask[r * size + c] = 1.0;
                }
            }
        }
        Ok(out)
    }
}

/// Z-buffer of a dense surface sample at 4× supersampling.
#[derive(Debug, Clone, Copy)]
pub struct DenseZBuffer {
    /// Surface samples drawn per output pixel.
    pub samples_per_pixel: usize,
}

impl Default for DenseZBuffer {
    fn default() -> Self {
        DenseZBuffer { samples_per_pixel: 48 }
    }
}

impl GtRenderer for DenseZBuffer {
    fn name(&self) -> &'static str {
        "zbuffer"
    }

    fn render(&self, shape: &dyn Shape, vp: &Viewpoint, intr: &Intrinsics, size: usize, far: f64) -> Result<RenderPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5a5a);
        let pts = shape.sample(&mut rng, self.samples_per_pixel * size * size);
        let cfg = RenderConfig {
            far,
            ..RenderConfig::new(size).with_upsample(4)
        };
        render_points(&pts, vp, intr, &cfg)
    }
}

pub const DEFAULT_RENDERER: &str = "raycast";

pub fn renderer_registry() -> &'static Registry<dyn GtRenderer> {
    static R: OnceLock<Registry<dyn GtRenderer>> = OnceLock::new();
    R.get_or_init(|| {
        Registry::new("ground-truth renderer")
            .with("raycast", || Box::new(RayCast) as Box<dyn GtRenderer>)
            .with("zbuffer", || Box::new(DenseZBuffer::default()) as Box<dyn GtRenderer>)
    })
}

/// World-space direction toward the light.
pub fn light_direction() -> Vector3<f64> {
    Vector3::new(0.4, 1.0, 0.6).normalize()
}

pub const ALBEDO: [f64; 3] = [0.9, 0.7, 0.5];
pub const AMBIENT: f64 = 0.2;

/// Lambertian-shaded render, channel-major `[3][size][size]`, black
/// background.
pub fn render_rgb(shape: &dyn Shape, vp: &Viewpoint, intr: &Intrinsics, size: usize) -> Vec<f64> {
    let plane = size * size;
    let mut out = vec![0.0; 3 * plane];
    let light = light_direction();
    for r in 0..size {
        for c in 0..size {
            if let Some(h) = cast(shape, r, c, vp, intr) {
                let shade = AMBIENT + (1.0 - AMBIENT) * h.normal.dot(&light).max(0.0);
                for (ch, a) in ALBEDO.iter().enumerate() {
                    out[ch * plane + r * size + c] = a * shade;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{azimuth_ring_viewpoints, DEFAULT_CAMERA_RADIUS};
    use crate::synthdata::shapes::{Cube, Sphere};

    #[test]
    fn sphere_min_depth_is_closest_approach() {
        let s = Sphere {
            center: [0.0; 3],
            radius: 0.8,
        };
        let vp = &azimuth_ring_viewpoints(24, 20.0, DEFAULT_CAMERA_RADIUS).unwrap()[5];
        let intr = Intrinsics::for_image(32);
        let out = RayCast.render(&s, vp, &intr, 32, 25.0).unwrap();
        let min = out.depth.iter().copied().fold(f64::INFINITY, f64::min);
        // Within one pixel's depth change around the nearest point.
        assert!((min - (DEFAULT_CAMERA_RADIUS - 0.8)).abs() < 0.01, "{min}");
    }

    #[test]
    fn zbuffer_agrees_with_raycast_on_mask() {
        let s = Cube {
            center: [0.0; 3],
            half: 0.5,
        };
        let vp = &azimuth_ring_viewpoints(4, 20.0, DEFAULT_CAMERA_RADIUS).unwrap()[1];
        let intr = Intrinsics::for_image(16);
        let a = RayCast.render(&s, vp, &intr, 16, 25.0).unwrap();
        let b = DenseZBuffer::default().render(&s, vp, &intr, 16, 25.0).unwrap();
        let differ = a.mask.iter().zip(&b.mask).filter(|(x, y)| x != y).count();
        // Only silhouette pixels may disagree.
        assert!(differ <= 16 * 2, "{differ} pixels differ");
    }

    #[test]
    fn rgb_background_is_black_and_foreground_lit() {
        let s = Sphere {
            center: [0.0; 3],
            radius: 0.9,
        };
        let vp = &azimuth_ring_viewpoints(1, 20.0, DEFAULT_CAMERA_RADIUS).unwrap()[0];
        let img = render_rgb(&s, vp, &Intrinsics::for_image(16), 16);
        assert_eq!(img[0], 0.0);
        let centre = 8 * 16 + 8;
        assert!(img[centre] >= ALBEDO[0] * AMBIENT);
    }
}

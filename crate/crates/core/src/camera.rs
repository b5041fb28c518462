//! Pinhole intrinsics, rigid viewpoints, the fixed viewpoint sets and the
//! lift from per-pixel predictions to world points.
//!
//! Conventions: camera frame is x right, y down, z forward. A world point
//! `p` maps to camera coordinates `q = R·p + t`; pixel `(u, v)` satisfies
//! `K·q = (u·z, v·z, z)`. Pixel centres sit on integer coordinates.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::coord_image::{CoordImage, CH_DEPTH, CH_DU, CH_DV, CH_MASK};
use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Default distance of every camera from the object centre.
pub const DEFAULT_CAMERA_RADIUS: f64 = 2.5;

/// Focal length as a multiple of the image half-width.
pub const DEFAULT_FOCAL_PER_HALF_WIDTH: f64 = 1.875;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub k: Matrix3<f64>,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::Config(format!(
                "intrinsics need positive focal lengths, got fx={fx} fy={fy}"
            )));
        }
        Ok(Intrinsics {
            k: Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0),
        })
    }

    /// Square image of `size` pixels with the principal point at its centre.
    pub fn for_image(size: usize) -> Self {
        let half = size as f64 / 2.0;
        let f = DEFAULT_FOCAL_PER_HALF_WIDTH * half;
        Intrinsics::new(f, f, half, half).expect("positive focal length")
    }

    pub fn fx(&self) -> f64 {
        self.k[(0, 0)]
    }
    pub fn fy(&self) -> f64 {
        self.k[(1, 1)]
    }
    pub fn cx(&self) -> f64 {
        self.k[(0, 2)]
    }
    pub fn cy(&self) -> f64 {
        self.k[(1, 2)]
    }

    /// Same camera at `factor`× resolution (pixel centres stay aligned).
    pub fn scaled(&self, factor: usize) -> Self {
        let s = factor as f64;
        Intrinsics::new(
            self.fx() * s,
            self.fy() * s,
            (self.cx() + 0.5) * s - 0.5,
            (self.cy() + 0.5) * s - 0.5,
        )
        .expect("scaled intrinsics stay valid")
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        let (fx, fy, cx, cy) = (self.fx(), self.fy(), self.cx(), self.cy());
        Matrix3::new(
            1.0 / fx,
            0.0,
            -cx / fx,
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Viewpoint {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub label: String,
}

impl Viewpoint {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, label: impl Into<String>) -> Result<Self> {
        let vp = Viewpoint {
            rotation,
            translation,
            label: label.into(),
        };
        vp.validate(1e-9)?;
        Ok(vp)
    }

    pub fn identity() -> Self {
        Viewpoint {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            label: "identity".into(),
        }
    }

    /// Camera at `center` looking at the world origin, world +y up (+z when
    /// the optical axis is vertical).
    pub fn look_at_origin(center: Vector3<f64>, label: impl Into<String>) -> Result<Self> {
        let dist = center.norm();
        if dist <= 0.0 || !dist.is_finite() {
            return Err(Error::Config(format!("camera centre {center:?} is degenerate")));
        }
        let forward = -center / dist;
        let mut up = Vector3::y();
        if forward.cross(&up).norm() < 1e-9 {
            up = Vector3::z();
        }
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * center);
        Viewpoint::new(rotation, translation, label)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if ortho > tol || (det - 1.0).abs() > tol || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!(
                "viewpoint '{}' is not a rigid transform (|RᵀR-I|={ortho:e}, det={det})",
                self.label
            )));
        }
        Ok(())
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Point3) -> Vector3<f64> {
        self.rotation * Vector3::from(*p) + self.translation
    }

    /// The 12 serialized reals: row-major R, then t.
    pub fn to_row(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            t[0], t[1], t[2],
        ]
    }

    pub fn from_row(row: &[f64], label: impl Into<String>) -> Result<Self> {
        if row.len() != 12 {
            return Err(Error::Dimension(format!("viewpoint row needs 12 reals, got {}", row.len())));
        }
        Viewpoint::new(
            Matrix3::from_row_slice(&row[..9]),
            Vector3::new(row[9], row[10], row[11]),
            label,
        )
    }
}

/// Ordered list of 3D points with optional per-point confidence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub confidence: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud {
            points,
            confidence: None,
        }
    }

    pub fn with_confidence(points: Vec<Point3>, confidence: Vec<f64>) -> Result<Self> {
        if points.len() != confidence.len() {
            return Err(Error::Dimension(format!(
                "{} points but {} confidences",
                points.len(),
                confidence.len()
            )));
        }
        Ok(PointCloud {
            points,
            confidence: Some(confidence),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }

    pub fn extend(&mut self, other: PointCloud) {
        match (&mut self.confidence, other.confidence) {
            (Some(a), Some(b)) => a.extend(b),
            (Some(a), None) => a.extend(std::iter::repeat_n(1.0, other.points.len())),
            (None, Some(b)) if self.points.is_empty() => self.confidence = Some(b),
            (None, _) => {}
        }
        self.points.extend(other.points);
    }
}

/// World point for pixel coordinates `(u, v)` at camera depth `depth`:
/// `R⁻¹ (K⁻¹ (u·z, v·z, z) − t)`.
pub fn backproject_pixel(u: f64, v: f64, depth: f64, vp: &Viewpoint, intr: &Intrinsics) -> Point3 {
    let xh = Vector3::new(u * depth, v * depth, depth);
    let q = intr.inverse() * xh;
    let p = vp.rotation.transpose() * (q - vp.translation);
    [p[0], p[1], p[2]]
}

/// Result of lifting one coordinate image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Backprojection {
    pub cloud: PointCloud,
    /// Pixels above threshold whose prediction was not finite.
    pub skipped_nonfinite: usize,
}

/// Lifts every pixel whose mask is at least `mask_threshold` into the world
/// frame, row-major. Confidence is the mask value.
pub fn backproject(
    img: &CoordImage,
    vp: &Viewpoint,
    intr: &Intrinsics,
    mask_threshold: f64,
) -> Backprojection {
    let mut out = Backprojection::default();
    let mut conf = Vec::new();
    for row in 0..img.size {
        for col in 0..img.size {
            let m = img.get(CH_MASK, row, col);
            if m < mask_threshold {
                continue;
            }
            let du = img.get(CH_DU, row, col);
            let dv = img.get(CH_DV, row, col);
            let z = img.get(CH_DEPTH, row, col);
            if !(du.is_finite() && dv.is_finite() && z.is_finite()) {
                out.skipped_nonfinite += 1;
                continue;
            }
            out.cloud
                .points
                .push(backproject_pixel(col as f64 + du, row as f64 + dv, z, vp, intr));
            conf.push(m);
        }
    }
    out.cloud.confidence = Some(conf);
    out
}

/// A point's image-plane position and camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub index: usize,
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// Pixel containing the projection at `upsample`× resolution, if inside
    /// a `size·upsample` square image.
    pub fn pixel(&self, size: usize, upsample: usize) -> Option<(usize, usize)> {
        let s = upsample as f64;
        let col = ((self.u + 0.5) * s).floor();
        let row = ((self.v + 0.5) * s).floor();
        let lim = (size * upsample) as f64;
        (col >= 0.0 && row >= 0.0 && col < lim && row < lim).then_some((row as usize, col as usize))
    }
}

/// Projects every point with positive camera depth; points at or behind the
/// camera plane are dropped.
pub fn project_forward(cloud: &PointCloud, vp: &Viewpoint, intr: &Intrinsics) -> Vec<Projection> {
    cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(index, p)| project_point(p, vp, intr).map(|(u, v, depth)| Projection { index, u, v, depth }))
        .collect()
}

pub fn project_point(p: &Point3, vp: &Viewpoint, intr: &Intrinsics) -> Option<(f64, f64, f64)> {
    let q = vp.to_camera(p);
    if q[2] <= 0.0 {
        return None;
    }
    let x = intr.k * q;
    Some((x[0] / q[2], x[1] / q[2], q[2]))
}

/// Eight cameras on the corners of an origin-centred cube, each `radius`
/// from the origin. Ordered sign-lexicographically over (x, y, z), minus
/// before plus.
pub fn cube_corner_viewpoints(radius: f64) -> Result<Vec<Viewpoint>> {
    if radius <= 0.0 {
        return Err(Error::Config(format!("camera radius must be positive, got {radius}")));
    }
    let s = radius / 3f64.sqrt();
    (0..8)
        .map(|i| {
            let sign = |bit: usize| if i >> bit & 1 == 1 { 1.0 } else { -1.0 };
            let (sx, sy, sz) = (sign(2), sign(1), sign(0));
            let label = format!(
                "corner{}{}{}",
                if sx > 0.0 { '+' } else { '-' },
                if sy > 0.0 { '+' } else { '-' },
                if sz > 0.0 { '+' } else { '-' }
            );
            Viewpoint::look_at_origin(Vector3::new(sx * s, sy * s, sz * s), label)
        })
        .collect()
}

/// Camera centre at the given azimuth/elevation (degrees) and distance.
/// Azimuth 0 sits on +z; elevation rotates towards +y.
pub fn orbit_center(azimuth_deg: f64, elevation_deg: f64, radius: f64) -> Vector3<f64> {
    let (a, e) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    Vector3::new(radius * e.cos() * a.sin(), radius * e.sin(), radius * e.cos() * a.cos())
}

/// `count` cameras evenly spaced in azimuth at a fixed elevation.
pub fn azimuth_ring_viewpoints(count: usize, elevation_deg: f64, radius: f64) -> Result<Vec<Viewpoint>> {
    if count == 0 {
        return Err(Error::Config("azimuth ring needs at least one view".into()));
    }
    if radius <= 0.0 {
        return Err(Error::Config(format!("camera radius must be positive, got {radius}")));
    }
    (0..count)
        .map(|k| {
            let az = 360.0 * k as f64 / count as f64;
            Viewpoint::look_at_origin(orbit_center(az, elevation_deg, radius), format!("ring{k:02}"))
        })
        .collect()
}

/// Plain-text viewpoint list: each view is an optional `# label` comment
/// followed by 12 whitespace-separated reals.
pub fn format_viewpoints(views: &[Viewpoint]) -> String {
    let mut s = String::from("# viewpoints: row-major R (9 values) then t (3 values)\n");
    for vp in views {
        let _ = writeln!(s, "# {}", vp.label);
        let row: Vec<String> = vp.to_row().iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

pub fn parse_viewpoints(text: &str) -> Result<Vec<Viewpoint>> {
    let mut views = Vec::new();
    let mut label: Option<String> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            label = Some(comment.trim().to_string());
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad real '{tok}'", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let name = label.take().unwrap_or_else(|| format!("view{}", views.len()));
        views.push(
            Viewpoint::from_row(&row, name)
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?,
        );
    }
    Ok(views)
}

pub fn write_viewpoints(path: impl AsRef<Path>, views: &[Viewpoint]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_viewpoints(views)).map_err(|e| Error::io(path, e))
}

pub fn read_viewpoints(path: impl AsRef<Path>) -> Result<Vec<Viewpoint>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_viewpoints(&text)
}

//! Parametric stand-in shapes, each fitting inside the unit sphere.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::OnceLock;

use nalgebra::Vector3;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::Point3;
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Ray parameters at or below this are treated as misses.
const T_MIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter in units of the (unnormalized) direction.
    pub t: f64,
    /// Outward unit normal in world coordinates.
    pub normal: Vector3<f64>,
}

fn nearer(a: Option<Hit>, b: Option<Hit>) -> Option<Hit> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.t < x.t { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

pub trait Shape: Debug + Send + Sync {
    fn kind(&self) -> &'static str;
    fn params(&self) -> Vec<f64>;
    /// First intersection of `origin + t·dir` with `t > 0`.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit>;
    /// Signed distance, negative inside.
    fn sdf(&self, p: &Point3) -> f64;
    fn area(&self) -> f64;
    /// `n` area-uniform surface points.
    fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3>;
}

fn v3(p: &Point3) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

fn arr(v: Vector3<f64>) -> Point3 {
    [v[0], v[1], v[2]]
}

/// Axis-aligned cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub center: Point3,
    pub half: f64,
}

impl Shape for Cube {
    fn kind(&self) -> &'static str {
        "cube"
    }

    fn params(&self) -> Vec<f64> {
        vec![self.center[0], self.center[1], self.center[2], self.half]
    }

    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let (mut tn, mut tf) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut axis_n = 0;
        let mut axis_f = 0;
        for a in 0..3 {
            let lo = self.center[a] - self.half - origin[a];
            let hi = self.center[a] + self.half - origin[a];
            if dir[a] == 0.0 {
                if lo > 0.0 || hi < 0.0 {
                    return None;
                }
                continue;
            }
            let (t1, t2) = (lo / dir[a], hi / dir[a]);
            let (t1, t2) = (t1.min(t2), t1.max(t2));
            if t1 > tn {
                tn = t1;
                axis_n = a;
            }
            if t2 < tf {
                tf = t2;
                axis_f = a;
            }
        }
        if tn > tf || tf <= T_MIN {
            return None;
        }
        let (t, a, exiting) = if tn > T_MIN { (tn, axis_n, false) } else { (tf, axis_f, true) };
        let mut normal = Vector3::zeros();
        let sign = if dir[a] > 0.0 { -1.0 } else { 1.0 };
        normal[a] = if exiting { -sign } else { sign };
        Some(Hit { t, normal })
    }

    fn sdf(&self, p: &Point3) -> f64 {
        let q: Vec<f64> = (0..3).map(|a| (p[a] - self.center[a]).abs() - self.half).collect();
        let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
        let inside = q[0].max(q[1]).max(q[2]).min(0.0);
        outside + inside
    }

    fn area(&self) -> f64 {
        24.0 * self.half * self.half
    }

    fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                let face = rng.random_range(0..6usize);
                let axis = face / 2;
                let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
                let mut p = [0.0; 3];
                for (a, c) in p.iter_mut().enumerate() {
                    *c = if a == axis {
                        sign * self.half
                    } else {
                        rng.random_range(-self.half..self.half)
                    } + self.center[a];
                }
                p
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sphere {
    pub center: Point3,
    pub radius: f64,
}

impl Shape for Sphere {
    fn kind(&self) -> &'static str {
        "sphere"
    }

    fn params(&self) -> Vec<f64> {
        vec![self.center[0], self.center[1], self.center[2], self.radius]
    }

    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let c = v3(&self.center);
        let oc = origin - c;
        let a = dir.dot(dir);
        let b = oc.dot(dir);
        let disc = b * b - a * (oc.dot(&oc) - self.radius * self.radius);
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let t = [(-b - s) / a, (-b + s) / a].into_iter().find(|&t| t > T_MIN)?;
        Some(Hit {
            t,
            normal: (origin + dir * t - c) / self.radius,
        })
    }

    fn sdf(&self, p: &Point3) -> f64 {
        (v3(p) - v3(&self.center)).norm() - self.radius
    }

    fn area(&self) -> f64 {
        4.0 * PI * self.radius * self.radius
    }

    fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| loop {
                let g = Vector3::<f64>::from_fn(|_, _| StandardNormal.sample(rng));
                let len = g.norm();
                if len > 1e-12 {
                    break arr(v3(&self.center) + g * (self.radius / len));
                }
            })
            .collect()
    }
}

/// Capped cylinder around the world y axis, centred at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Cylinder {
    pub radius: f64,
    pub half_height: f64,
}

impl Shape for Cylinder {
    fn kind(&self) -> &'static str {
        "cylinder"
    }

    fn params(&self) -> Vec<f64> {
        vec![self.radius, self.half_height]
    }

    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        let (r, h) = (self.radius, self.half_height);
        let mut best = None;
        let a = d[0] * d[0] + d[2] * d[2];
        if a > 0.0 {
            let b = o[0] * d[0] + o[2] * d[2];
            let c = o[0] * o[0] + o[2] * o[2] - r * r;
            let disc = b * b - a * c;
            if disc >= 0.0 {
                let s = disc.sqrt();
                for t in [(-b - s) / a, (-b + s) / a] {
                    let p = o + d * t;
                    if t > T_MIN && p[1].abs() <= h {
                        best = nearer(best, Some(Hit {
                            t,
                            normal: Vector3::new(p[0] / r, 0.0, p[2] / r),
                        }));
                    }
                }
            }
        }
        if d[1] != 0.0 {
            for y in [-h, h] {
                let t = (y - o[1]) / d[1];
                let p = o + d * t;
                if t > T_MIN && p[0] * p[0] + p[2] * p[2] <= r * r {
                    best = nearer(best, Some(Hit {
                        t,
                        normal: Vector3::new(0.0, y.signum(), 0.0),
                    }));
                }
            }
        }
        best
    }

    fn sdf(&self, p: &Point3) -> f64 {
        let dr = (p[0] * p[0] + p[2] * p[2]).sqrt() - self.radius;
        let dy = p[1].abs() - self.half_height;
        dr.max(dy).min(0.0) + (dr.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt()
    }

    fn area(&self) -> f64 {
        2.0 * PI * self.radius * (2.0 * self.half_height) + 2.0 * PI * self.radius * self.radius
    }

    fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        let (r, h) = (self.radius, self.half_height);
        let side = 4.0 * PI * r * h / self.area();
        (0..n)
            .map(|_| {
                let phi = rng.random_range(0.0..2.0 * PI);
                if rng.random_range(0.0..1.0) < side {
                    [r * phi.cos(), rng.random_range(-h..h), r * phi.sin()]
                } else {
                    // Area-uniform on a disk.
                    let rho = r * rng.random_range(0.0f64..1.0).sqrt();
                    let y = if rng.random_range(0..2u8) == 0 { -h } else { h };
                    [rho * phi.cos(), y, rho * phi.sin()]
                }
            })
            .collect()
    }
}

/// Ring torus around the world y axis, centred at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Torus {
    pub major: f64,
    pub minor: f64,
}

impl Torus {
    fn gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let rho = (p[0] * p[0] + p[2] * p[2]).sqrt().max(1e-300);
        let qx = rho - self.major;
        let len = (qx * qx + p[1] * p[1]).sqrt().max(1e-300);
        Vector3::new(p[0] / rho * qx, p[1], p[2] / rho * qx) / len
    }
}

impl Shape for Torus {
    fn kind(&self) -> &'static str {
        "torus"
    }

    fn params(&self) -> Vec<f64> {
        vec![self.major, self.minor]
    }

    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        let scale = d.norm();
        if scale == 0.0 {
            return None;
        }
        let dn = d / scale;
        // Enter through the bounding sphere, then sphere-trace the exact
        // distance field.
        let bound = Sphere {
            center: [0.0; 3],
            radius: self.major + self.minor + 1e-6,
        };
        let b = o.dot(&dn);
        let c = o.dot(o) - bound.radius * bound.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let exit = -b + disc.sqrt();
        let mut t = (-b - disc.sqrt()).max(0.0);
        for _ in 0..20_000 {
            if t > exit {
                return None;
            }
            let p = o + dn * t;
            let dist = self.sdf(&arr(p));
            if dist < 1e-12 {
                // Two Newton steps along the ray tighten the root.
                for _ in 0..2 {
                    let p = o + dn * t;
                    let slope = self.gradient(&p).dot(&dn);
                    if slope.abs() > 1e-3 {
                        t -= self.sdf(&arr(p)) / slope;
                    }
                }
                if t <= T_MIN {
                    return None;
                }
                let p = o + dn * t;
                return Some(Hit {
                    t: t / scale,
                    normal: self.gradient(&p),
                });
            }
            t += dist;
        }
        None
    }

    fn sdf(&self, p: &Point3) -> f64 {
        let qx = (p[0] * p[0] + p[2] * p[2]).sqrt() - self.major;
        (qx * qx + p[1] * p[1]).sqrt() - self.minor
    }

    fn area(&self) -> f64 {
        4.0 * PI * PI * self.major * self.minor
    }

    fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        let (big, small) = (self.major, self.minor);
        (0..n)
            .map(|_| {
                // Tube angle density is proportional to the local ring radius.
                let theta = loop {
                    let th = rng.random_range(0.0..2.0 * PI);
                    if rng.random_range(0.0..big + small) <= big + small * th.cos() {
                        break th;
                    }
                };
                let phi = rng.random_range(0.0..2.0 * PI);
                let ring = big + small * theta.cos();
                [ring * phi.cos(), small * theta.sin(), ring * phi.sin()]
            })
            .collect()
    }
}

/// Union of disjoint parts.
#[derive(Debug)]
pub struct Composite {
    pub parts: Vec<Box<dyn Shape>>,
}

impl Composite {
    /// How many of `n` samples each part receives: proportional to area,
    /// largest remainders rounded up.
    pub fn split(&self, n: usize) -> Vec<usize> {
        let total: f64 = self.parts.iter().map(|p| p.area()).sum();
        let exact: Vec<f64> = self.parts.iter().map(|p| n as f64 * p.area() / total).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        let missing = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(missing) {
            counts[i] += 1;
        }
        counts
    }
}

impl Shape for Composite {
    fn kind(&self) -> &'static str {
        "composite"
    }

    fn params(&self) -> Vec<f64> {
        self.parts.iter().flat_map(|p| p.params()).collect()
    }

    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        self.parts.iter().fold(None, |acc, p| nearer(acc, p.intersect(o, d)))
    }

    fn sdf(&self, p: &Point3) -> f64 {
        self.parts.iter().map(|s| s.sdf(p)).fold(f64::INFINITY, f64::min)
    }

    fn area(&self) -> f64 {
        self.parts.iter().map(|p| p.area()).sum()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        let counts = self.split(n);
        self.parts
            .iter()
            .zip(counts)
            .flat_map(|(p, k)| p.sample(rng, k))
            .collect()
    }
}

/// A kind of shape: draws parameters and builds instances from them.
pub trait ShapeFamily: Send + Sync {
    fn name(&self) -> &'static str;
    fn random_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn build(&self, params: &[f64]) -> Result<Box<dyn Shape>>;
}

fn expect_params(kind: &str, params: &[f64], n: usize) -> Result<()> {
    if params.len() != n || params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Config(format!("{kind} takes {n} finite parameters, got {params:?}")));
    }
    Ok(())
}

pub struct CubeFamily;
pub struct SphereFamily;
pub struct CylinderFamily;
pub struct TorusFamily;
pub struct CompositeFamily;

/// Cube half extent whose corners touch the unit sphere.
pub fn unit_cube_half() -> f64 {
    1.0 / 3f64.sqrt()
}

impl ShapeFamily for CubeFamily {
    fn name(&self) -> &'static str {
        "cube"
    }
    fn random_params(&self, _: &mut ChaCha8Rng) -> Vec<f64> {
        vec![0.0, 0.0, 0.0, unit_cube_half()]
    }
    fn build(&self, p: &[f64]) -> Result<Box<dyn Shape>> {
        expect_params("cube", p, 4)?;
        if p[3] <= 0.0 {
            return Err(Error::Config("cube half extent must be positive".into()));
        }
        Ok(Box::new(Cube {
            center: [p[0], p[1], p[2]],
            half: p[3],
        }))
    }
}

impl ShapeFamily for SphereFamily {
    fn name(&self) -> &'static str {
        "sphere"
    }
    fn random_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![0.0, 0.0, 0.0, rng.random_range(0.7..1.0)]
    }
    fn build(&self, p: &[f64]) -> Result<Box<dyn Shape>> {
        expect_params("sphere", p, 4)?;
        if p[3] <= 0.0 {
            return Err(Error::Config("sphere radius must be positive".into()));
        }
        Ok(Box::new(Sphere {
            center: [p[0], p[1], p[2]],
            radius: p[3],
        }))
    }
}

impl ShapeFamily for CylinderFamily {
    fn name(&self) -> &'static str {
        "cylinder"
    }
    fn random_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let r: f64 = rng.random_range(0.3..0.7);
        vec![r, (1.0 - r * r).sqrt()]
    }
    fn build(&self, p: &[f64]) -> Result<Box<dyn Shape>> {
        expect_params("cylinder", p, 2)?;
        if p[0] <= 0.0 || p[1] <= 0.0 {
            return Err(Error::Config("cylinder dimensions must be positive".into()));
        }
        Ok(Box::new(Cylinder {
            radius: p[0],
            half_height: p[1],
        }))
    }
}

impl ShapeFamily for TorusFamily {
    fn name(&self) -> &'static str {
        "torus"
    }
    fn random_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let major: f64 = rng.random_range(0.5..0.7);
        let minor = rng.random_range(0.15..0.3f64.min(1.0 - major));
        vec![major, minor]
    }
    fn build(&self, p: &[f64]) -> Result<Box<dyn Shape>> {
        expect_params("torus", p, 2)?;
        if !(p[1] > 0.0 && p[0] > p[1]) {
            return Err(Error::Config("torus needs major > minor > 0".into()));
        }
        Ok(Box::new(Torus {
            major: p[0],
            minor: p[1],
        }))
    }
}

impl ShapeFamily for CompositeFamily {
    fn name(&self) -> &'static str {
        "composite"
    }
    fn random_params(&self, _: &mut ChaCha8Rng) -> Vec<f64> {
        vec![-0.45, 0.0, 0.0, 0.3, 0.5, 0.0, 0.0, 0.35]
    }
    fn build(&self, p: &[f64]) -> Result<Box<dyn Shape>> {
        expect_params("composite", p, 8)?;
        Ok(Box::new(Composite {
            parts: vec![CubeFamily.build(&p[..4])?, SphereFamily.build(&p[4..])?],
        }))
    }
}

pub fn shape_registry() -> &'static Registry<dyn ShapeFamily> {
    static R: OnceLock<Registry<dyn ShapeFamily>> = OnceLock::new();
    R.get_or_init(|| {
        Registry::new("shape kind")
            .with("cube", || Box::new(CubeFamily) as Box<dyn ShapeFamily>)
            .with("sphere", || Box::new(SphereFamily) as Box<dyn ShapeFamily>)
            .with("cylinder", || Box::new(CylinderFamily) as Box<dyn ShapeFamily>)
            .with("torus", || Box::new(TorusFamily) as Box<dyn ShapeFamily>)
            .with("composite", || Box::new(CompositeFamily) as Box<dyn ShapeFamily>)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn all_shapes() -> Vec<Box<dyn Shape>> {
        let mut r = rng();
        shape_registry()
            .names()
            .into_iter()
            .map(|n| {
                let f = shape_registry().create(n).unwrap();
                f.build(&f.random_params(&mut r)).unwrap()
            })
            .collect()
    }

    #[test]
    fn samples_lie_on_surface_inside_unit_sphere() {
        for s in all_shapes() {
            for p in s.sample(&mut rng(), 500) {
                assert!(s.sdf(&p).abs() < 1e-9, "{} sample off surface: {p:?}", s.kind());
                assert!(v3(&p).norm() <= 1.0 + 1e-12, "{} sample outside unit sphere", s.kind());
            }
        }
    }

    #[test]
    fn rays_toward_centre_hit_the_surface() {
        for s in all_shapes() {
            for k in 0..40 {
                let a = k as f64 * 0.37;
                let o = Vector3::new(2.5 * a.cos(), 0.8 * a.sin(), 2.5 * a.sin());
                let target = if s.kind() == "torus" {
                    Vector3::new(0.6 * a.cos(), 0.0, 0.6 * a.sin())
                } else if s.kind() == "composite" {
                    Vector3::new(0.5, 0.0, 0.0)
                } else {
                    Vector3::zeros()
                };
                let d = (target - o) * 0.7;
                let hit = s.intersect(&o, &d).unwrap_or_else(|| panic!("{} missed", s.kind()));
                let p = o + d * hit.t;
                assert!(s.sdf(&arr(p)).abs() < 1e-9, "{}: sdf {}", s.kind(), s.sdf(&arr(p)));
                assert!((hit.normal.norm() - 1.0).abs() < 1e-9);
                assert!(hit.normal.dot(&d) < 0.0, "{} normal faces away", s.kind());
            }
        }
    }

    #[test]
    fn rays_away_miss() {
        for s in all_shapes() {
            let o = Vector3::new(3.0, 0.0, 0.0);
            assert!(s.intersect(&o, &Vector3::new(1.0, 0.2, 0.0)).is_none(), "{}", s.kind());
        }
    }

    #[test]
    fn composite_split_tracks_area() {
        let c = CompositeFamily.build(&CompositeFamily.random_params(&mut rng())).unwrap();
        let c = Composite {
            parts: vec![CubeFamily.build(&c.params()[..4]).unwrap(), SphereFamily.build(&c.params()[4..]).unwrap()],
        };
        let (a0, a1) = (c.parts[0].area(), c.parts[1].area());
        let counts = c.split(2000);
        assert_eq!(counts.iter().sum::<usize>(), 2000);
        assert!((counts[0] as f64 - 2000.0 * a0 / (a0 + a1)).abs() <= 1.0);
    }

    #[test]
    fn bad_params_rejected() {
        assert!(TorusFamily.build(&[0.2, 0.5]).is_err());
        assert!(SphereFamily.build(&[0.0; 3]).is_err());
        assert!(CubeFamily.build(&[0.0, 0.0, 0.0, f64::NAN]).is_err());
    }
}

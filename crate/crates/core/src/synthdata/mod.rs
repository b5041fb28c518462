//! Synthetic training data: parametric shapes, shaded input renders,
//! randomly posed depth/mask supervision and the fixed cube-corner targets.

pub mod render;
pub mod shapes;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use render::{render_rgb, renderer_registry, GtRenderer};
pub use shapes::{shape_registry, Shape, ShapeFamily};

use crate::autodiff::checkpoint::{ArrayBundle, Cursor};
use crate::camera::{
    azimuth_ring_viewpoints, cube_corner_viewpoints, orbit_center, write_viewpoints, Intrinsics,
    PointCloud, Viewpoint, DEFAULT_CAMERA_RADIUS,
};
use crate::coord_image::CoordImage;
use crate::error::{Error, Result};
use crate::pseudorender::{RenderPair, FAR_FACTOR};

pub const SURFACE_SAMPLES: usize = 2000;
pub const INPUT_VIEWS: usize = 24;
pub const SUPERVISION_VIEWS: usize = 100;
pub const DEFAULT_INPUT_ELEVATION: f64 = 20.0;
pub const SUPERVISION_ELEVATION_RANGE: (f64, f64) = (-30.0, 60.0);
/// Attempts per supervision pose before generation gives up.
pub const POSE_RETRIES: usize = 100;

#[derive(Debug, Clone)]
pub struct GroundTruthShape {
    pub kind: String,
    pub params: Vec<f64>,
    pub surface: PointCloud,
    pub shape: Arc<dyn Shape>,
}

impl PartialEq for GroundTruthShape {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.params == other.params && self.surface == other.surface
    }
}

impl GroundTruthShape {
    pub fn from_params(kind: &str, params: Vec<f64>, surface: PointCloud) -> Result<Self> {
        let shape: Arc<dyn Shape> = shape_registry().create(kind)?.build(&params)?.into();
        Ok(GroundTruthShape {
            kind: kind.to_string(),
            params,
            surface,
            shape,
        })
    }
}

/// Draws a shape of `kind` and its area-uniform surface sample.
pub fn generate_shape(kind: &str, seed: u64) -> Result<GroundTruthShape> {
    generate_shape_with(kind, seed, SURFACE_SAMPLES)
}

pub fn generate_shape_with(kind: &str, seed: u64, samples: usize) -> Result<GroundTruthShape> {
    let family = shape_registry().create(kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = family.random_params(&mut rng);
    let shape: Arc<dyn Shape> = family.build(&params)?.into();
    let surface = PointCloud::new(shape.sample(&mut rng, samples));
    Ok(GroundTruthShape {
        kind: kind.to_string(),
        params,
        surface,
        shape,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub input_size: usize,
    pub output_size: usize,
    pub camera_radius: f64,
    pub input_elevation: f64,
    pub input_views: usize,
    pub supervision_views: usize,
    pub surface_samples: usize,
    pub renderer: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            input_size: 64,
            output_size: 128,
            camera_radius: DEFAULT_CAMERA_RADIUS,
            input_elevation: DEFAULT_INPUT_ELEVATION,
            input_views: INPUT_VIEWS,
            supervision_views: SUPERVISION_VIEWS,
            surface_samples: SURFACE_SAMPLES,
            renderer: render::DEFAULT_RENDERER.into(),
        }
    }
}

impl DataConfig {
    pub fn far(&self) -> f64 {
        FAR_FACTOR * self.camera_radius
    }

    pub fn output_intrinsics(&self) -> Intrinsics {
        Intrinsics::for_image(self.output_size)
    }

    pub fn input_intrinsics(&self) -> Intrinsics {
        Intrinsics::for_image(self.input_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub model_id: String,
    pub shape: GroundTruthShape,
    pub input_size: usize,
    /// `[3][S][S]` per ring azimuth.
    pub input_renders: Vec<Vec<f64>>,
    pub input_viewpoints: Vec<Viewpoint>,
    pub supervision: Vec<(Viewpoint, RenderPair)>,
    /// Renders from the eight cube-corner cameras, in their canonical order.
    pub fixed_views: Vec<RenderPair>,
}

impl DatasetEntry {
    pub fn output_size(&self) -> usize {
        self.fixed_views.first().map_or(0, |p| p.size)
    }

    /// Pretraining targets: zero offsets plus rendered depth and mask.
    pub fn fixed_targets(&self) -> Result<Vec<CoordImage>> {
        self.fixed_views
            .iter()
            .enumerate()
            .map(|(i, p)| CoordImage::from_render(p.size, i, &p.depth, &p.mask))
            .collect()
    }
}

/// Renders every image of one entry. Supervision poses whose mask would be
/// empty are redrawn.
pub fn build_entry(model_id: &str, shape: GroundTruthShape, cfg: &DataConfig, seed: u64) -> Result<DatasetEntry> {
    let renderer = renderer_registry().create(&cfg.renderer)?;
    let far = cfg.far();
    let in_intr = cfg.input_intrinsics();
    let out_intr = cfg.output_intrinsics();

    let input_viewpoints = azimuth_ring_viewpoints(cfg.input_views, cfg.input_elevation, cfg.camera_radius)?;
    let input_renders = input_viewpoints
        .iter()
        .map(|vp| render_rgb(shape.shape.as_ref(), vp, &in_intr, cfg.input_size))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut supervision = Vec::with_capacity(cfg.supervision_views);
    for k in 0..cfg.supervision_views {
        let mut attempt = 0;
        let pair = loop {
            let az = rng.random_range(0.0..360.0);
            let el = rng.random_range(SUPERVISION_ELEVATION_RANGE.0..SUPERVISION_ELEVATION_RANGE.1);
            let vp = Viewpoint::look_at_origin(orbit_center(az, el, cfg.camera_radius), format!("sup{k:03}"))?;
            let pair = renderer.render(shape.shape.as_ref(), &vp, &out_intr, cfg.output_size, far)?;
            if pair.mask.iter().any(|&m| m > 0.5) {
                break (vp, pair);
            }
            attempt += 1;
            if attempt >= POSE_RETRIES {
                return Err(Error::Config(format!(
                    "no supervision pose of {model_id} produced a nonempty mask after {POSE_RETRIES} tries"
                )));
            }
        };
        supervision.push(pair);
    }

    let fixed_views = cube_corner_viewpoints(cfg.camera_radius)?
        .iter()
        .map(|vp| renderer.render(shape.shape.as_ref(), vp, &out_intr, cfg.output_size, far))
        .collect::<Result<_>>()?;

    Ok(DatasetEntry {
        model_id: model_id.to_string(),
        shape,
        input_size: cfg.input_size,
        input_renders,
        input_viewpoints,
        supervision,
        fixed_views,
    })
}

/// Settings for [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub kinds: Vec<String>,
    pub count: usize,
    pub seed: u64,
    pub data: DataConfig,
}

/// `count` entries cycling through `kinds`. Entry `i` uses seeds derived
/// from `seed` and `i` only, so prefixes of larger datasets agree.
pub fn generate_dataset(opts: &GenerateOptions) -> Result<Vec<DatasetEntry>> {
    if opts.kinds.is_empty() {
        return Err(Error::Config("at least one shape kind is required".into()));
    }
    (0..opts.count)
        .map(|i| {
            let kind = &opts.kinds[i % opts.kinds.len()];
            let s = opts.seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64);
            let shape = generate_shape_with(kind, s, opts.data.surface_samples)?;
            build_entry(&format!("{kind}-{i:04}"), shape, &opts.data, s ^ 0xD1B5_4A32)
        })
        .collect()
}

pub const DATASET_MAGIC: &[u8; 4] = b"SMDD";
pub const DATASET_VERSION: u32 = 1;

fn flatten_vps(vps: &[&Viewpoint]) -> Vec<f64> {
    vps.iter().flat_map(|v| v.to_row()).collect()
}

fn entry_bundle(e: &DatasetEntry) -> Result<ArrayBundle> {
    let mut b = ArrayBundle::new();
    let n = e.output_size();
    let s = e.input_size;
    b.push("shape.params", vec![e.shape.params.len().max(1)], pad(&e.shape.params))?;
    b.push(
        "shape.surface",
        vec![e.shape.surface.len(), 3],
        e.shape.surface.points.iter().flatten().copied().collect(),
    )?;
    b.push(
        "input.viewpoints",
        vec![e.input_viewpoints.len(), 12],
        flatten_vps(&e.input_viewpoints.iter().collect::<Vec<_>>()),
    )?;
    b.push(
        "input.images",
        vec![e.input_renders.len(), 3, s, s],
        e.input_renders.concat(),
    )?;
    let sup_vps: Vec<&Viewpoint> = e.supervision.iter().map(|(v, _)| v).collect();
    b.push("supervision.viewpoints", vec![sup_vps.len(), 12], flatten_vps(&sup_vps))?;
    b.push(
        "supervision.depth",
        vec![e.supervision.len(), n, n],
        e.supervision.iter().flat_map(|(_, p)| p.depth.clone()).collect(),
    )?;
    b.push(
        "supervision.mask",
        vec![e.supervision.len(), n, n],
        e.supervision.iter().flat_map(|(_, p)| p.mask.clone()).collect(),
    )?;
    b.push(
        "fixed.depth",
        vec![e.fixed_views.len(), n, n],
        e.fixed_views.iter().flat_map(|p| p.depth.clone()).collect(),
    )?;
    b.push(
        "fixed.mask",
        vec![e.fixed_views.len(), n, n],
        e.fixed_views.iter().flat_map(|p| p.mask.clone()).collect(),
    )?;
    Ok(b)
}

// Arrays cannot be empty, so a parameterless shape stores one NaN.
fn pad(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        vec![f64::NAN]
    } else {
        v.to_vec()
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

fn dims_of<'a>(b: &'a ArrayBundle, name: &str, rank: usize) -> Result<(&'a [usize], &'a [f64])> {
    let a = b.get(name)?;
    if a.dims.len() != rank {
        return Err(corrupt(format!("array '{name}' has rank {}, expected {rank}", a.dims.len())));
    }
    Ok((&a.dims, &a.data))
}

fn read_vps(b: &ArrayBundle, name: &str, label: impl Fn(usize) -> String) -> Result<Vec<Viewpoint>> {
    let (d, data) = dims_of(b, name, 2)?;
    if d[1] != 12 {
        return Err(corrupt(format!("'{name}' rows must hold 12 values")));
    }
    data.chunks_exact(12)
        .enumerate()
        .map(|(i, row)| Viewpoint::from_row(row, label(i)).map_err(|e| corrupt(format!("'{name}' row {i}: {e}"))))
        .collect()
}

fn read_pairs(b: &ArrayBundle, prefix: &str) -> Result<Vec<RenderPair>> {
    let (dd, depth) = dims_of(b, &format!("{prefix}.depth"), 3)?;
    let (dm, mask) = dims_of(b, &format!("{prefix}.mask"), 3)?;
    if dd != dm || dd[1] != dd[2] {
        return Err(corrupt(format!("'{prefix}' depth and mask disagree in shape")));
    }
    let plane = dd[1] * dd[2];
    Ok(depth
        .chunks_exact(plane)
        .zip(mask.chunks_exact(plane))
        .map(|(d, m)| RenderPair {
            size: dd[1],
            depth: d.to_vec(),
            mask: m.to_vec(),
        })
        .collect())
}

fn entry_from_bundle(model_id: String, kind: String, b: &ArrayBundle) -> Result<DatasetEntry> {
    let params: Vec<f64> = b.get("shape.params")?.data.iter().copied().filter(|v| !v.is_nan()).collect();
    let (sd, surf) = dims_of(b, "shape.surface", 2)?;
    if sd[1] != 3 {
        return Err(corrupt("'shape.surface' rows must hold 3 values"));
    }
    let surface = PointCloud::new(surf.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
    let shape = GroundTruthShape::from_params(&kind, params, surface).map_err(|e| corrupt(format!("{model_id}: {e}")))?;
    let (id, images) = dims_of(b, "input.images", 4)?;
    let input_size = id[2];
    let input_renders = images.chunks_exact(3 * input_size * input_size).map(<[f64]>::to_vec).collect();
    let input_viewpoints = read_vps(b, "input.viewpoints", |i| format!("ring{i:02}"))?;
    let sup_vps = read_vps(b, "supervision.viewpoints", |i| format!("sup{i:03}"))?;
    let sup_pairs = read_pairs(b, "supervision")?;
    if sup_vps.len() != sup_pairs.len() {
        return Err(corrupt("supervision viewpoints and renders differ in count"));
    }
    Ok(DatasetEntry {
        model_id,
        shape,
        input_size,
        input_renders,
        input_viewpoints,
        supervision: sup_vps.into_iter().zip(sup_pairs).collect(),
        fixed_views: read_pairs(b, "fixed")?,
    })
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn get_str(cur: &mut Cursor<'_>, what: &str) -> Result<String> {
    let n = cur.u64(what)? as usize;
    let bytes = cur.take(n, what)?;
    String::from_utf8(bytes.to_vec()).map_err(|_| corrupt(format!("{what} is not UTF-8")))
}

/// Layout: magic, version (u32), entry count (u64), then per entry
/// `(model_id, kind, body length u64)` in an index, then the bodies.
pub fn encode_dataset(entries: &[DatasetEntry]) -> Result<Vec<u8>> {
    let bodies: Vec<Vec<u8>> = entries
        .iter()
        .map(|e| {
            let mut body = Vec::new();
            entry_bundle(e)?.encode_body(&mut body);
            Ok(body)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (e, body) in entries.iter().zip(&bodies) {
        put_str(&mut out, &e.model_id);
        put_str(&mut out, &e.shape.kind);
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    }
    for body in bodies {
        out.extend_from_slice(&body);
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<DatasetEntry>> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4, "dataset magic")? != DATASET_MAGIC {
        return Err(corrupt("not a dataset file (bad magic)"));
    }
    let version = cur.u32("dataset version")?;
    if version != DATASET_VERSION {
        return Err(Error::Version {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let count = cur.u64("entry count")? as usize;
    let mut index = Vec::new();
    for _ in 0..count {
        let id = get_str(&mut cur, "model id")?;
        let kind = get_str(&mut cur, "shape kind")?;
        let len = cur.u64("entry length")? as usize;
        index.push((id, kind, len));
    }
    let mut entries = Vec::with_capacity(index.len());
    for (id, kind, len) in index {
        let mut body = Cursor::new(cur.take(len, "entry body")?);
        let bundle = ArrayBundle::decode_body(&mut body)?;
        if !body.is_empty() {
            return Err(corrupt(format!("entry '{id}' has trailing bytes")));
        }
        entries.push(entry_from_bundle(id, kind, &bundle)?);
    }
    if !cur.is_empty() {
        return Err(corrupt("trailing bytes after the last entry"));
    }
    Ok(entries)
}

/// Path of the viewpoint listing written next to a dataset.
pub fn views_path(dataset: &Path) -> PathBuf {
    let mut s = dataset.as_os_str().to_owned();
    s.push(".views.txt");
    PathBuf::from(s)
}

/// Writes the container and, next to it, the fixed and ring viewpoints as
/// text.
pub fn write_dataset(entries: &[DatasetEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dataset(entries)?).map_err(|e| Error::io(path, e))?;
    let mut vps = cube_corner_viewpoints(DEFAULT_CAMERA_RADIUS)?;
    if let Some(e) = entries.first() {
        vps.extend(e.input_viewpoints.iter().cloned());
    }
    write_viewpoints(views_path(path), &vps)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let path = path.as_ref();
    decode_dataset(&crate::autodiff::checkpoint::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DataConfig {
        DataConfig {
            input_size: 8,
            output_size: 8,
            supervision_views: 3,
            input_views: 4,
            surface_samples: 50,
            ..Default::default()
        }
    }

    fn entry() -> DatasetEntry {
        let shape = generate_shape_with("sphere", 1, 50).unwrap();
        build_entry("s0", shape, &small_cfg(), 2).unwrap()
    }

    #[test]
    fn counts_match_config() {
        let e = entry();
        assert_eq!(e.input_renders.len(), 4);
        assert_eq!(e.supervision.len(), 3);
        assert_eq!(e.fixed_views.len(), 8);
        assert!(e.supervision.iter().all(|(_, p)| p.mask.contains(&1.0)));
    }

    #[test]
    fn container_roundtrip() {
        let es = vec![entry(), entry()];
        let bytes = encode_dataset(&es).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, es);
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn unknown_kind() {
        assert!(matches!(generate_shape("pyramid", 0), Err(Error::UnknownStrategy { .. })));
    }

    #[test]
    fn version_error_names_both() {
        let mut bytes = encode_dataset(&[entry()]).unwrap();
        bytes[4] = 9;
        let e = decode_dataset(&bytes).unwrap_err();
        assert!(matches!(e, Error::Version { found: 9, expected: 1 }));
        let msg = e.to_string();
        assert!(msg.contains('9') && msg.contains('1'));
    }
}

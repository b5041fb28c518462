//! Two-stage training, inference and evaluation.

mod eval;
mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub use eval::{evaluate, infer, infer_entry, loss_curve, EvalSummary};
pub use train::{finetune, finetune_loss, pretrain, pretrain_loss, FinetuneRenderer, TrainOutcome};

use crate::camera::{Viewpoint, DEFAULT_CAMERA_RADIUS};
use crate::coord_image::CoordImage;
use crate::error::{Error, Result};
use crate::loss::DEFAULT_LAMBDA;
use crate::metrics::DEFAULT_MASK_THRESHOLD;
use crate::pseudorender::{DepthPool, RenderPair, DEFAULT_UPSAMPLE};
use crate::synthdata::DatasetEntry;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_decoders: usize,
    /// Network preset name (`table1-64`, `table1-128`, `test`).
    pub preset: String,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    pub lambda: f64,
    pub supervision_view_count: usize,
    pub pretrain_iters: usize,
    pub finetune_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mask_threshold: f64,
    pub upsample: usize,
    pub depth_pool: DepthPool,
    pub camera_radius: f64,
    /// Global gradient norm cap during fine-tuning.
    pub clip_norm: f64,
    /// Consecutive all-empty fine-tuning iterations tolerated.
    pub max_empty_skips: usize,
    /// Where to dump the network if training diverges.
    pub diagnostic_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_decoders: 8,
            preset: "test".into(),
            pretrain_lr: 5e-3,
            finetune_lr: 5e-6,
            lambda: DEFAULT_LAMBDA,
            supervision_view_count: 5,
            pretrain_iters: 2000,
            finetune_iters: 1000,
            batch_size: 4,
            seed: 0,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            upsample: DEFAULT_UPSAMPLE,
            depth_pool: DepthPool::default(),
            camera_radius: DEFAULT_CAMERA_RADIUS,
            clip_norm: 10.0,
            max_empty_skips: 100,
            diagnostic_checkpoint: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.pretrain_lr > 0.0 && self.finetune_lr > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.supervision_view_count == 0 || self.supervision_view_count > 100 {
            return fail(format!(
                "supervision_view_count must be in 1..=100, got {}",
                self.supervision_view_count
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return fail(format!("mask_threshold must lie in (0, 1), got {}", self.mask_threshold));
        }
        if self.upsample == 0 {
            return fail("upsample must be positive".into());
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_decoders" => self.n_decoders = parse(key, value)?,
            "preset" => self.preset = value.trim().to_string(),
            "pretrain_lr" => self.pretrain_lr = parse(key, value)?,
            "finetune_lr" => self.finetune_lr = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "supervision_view_count" => self.supervision_view_count = parse(key, value)?,
            "pretrain_iters" => self.pretrain_iters = parse(key, value)?,
            "finetune_iters" => self.finetune_iters = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mask_threshold" => self.mask_threshold = parse(key, value)?,
            "upsample" => self.upsample = parse(key, value)?,
            "depth_pool" => self.depth_pool = value.trim().parse()?,
            "camera_radius" => self.camera_radius = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "max_empty_skips" => self.max_empty_skips = parse(key, value)?,
            "diagnostic_checkpoint" => self.diagnostic_checkpoint = Some(PathBuf::from(value.trim())),
            other => return Err(Error::Config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, values: &BTreeMap<String, String>) -> Result<()> {
        values.iter().try_for_each(|(k, v)| self.set(k, v))
    }
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// ignored; later keys override earlier ones.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("config line {}: expected 'key = value', got '{line}'", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse(format!("config line {}: empty key", i + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_config_file(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    parse_config_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Writes an input render as raw little-endian `f64` values, channel-major
/// `[3][S][S]`.
pub fn write_image(path: impl AsRef<Path>, pixels: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = pixels.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an image written by [`write_image`] and returns its pixels and
/// side length.
pub fn read_image(path: impl AsRef<Path>) -> Result<(Vec<f64>, usize)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Corrupt(format!("{}: length {} is not a multiple of 8", path.display(), bytes.len())));
    }
    let pixels: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let side = ((pixels.len() / 3) as f64).sqrt().round() as usize;
    if side == 0 || 3 * side * side != pixels.len() {
        return Err(Error::Corrupt(format!(
            "{}: {} values do not form a 3xSxS image",
            path.display(),
            pixels.len()
        )));
    }
    Ok((pixels, side))
}

/// What the training loops read from a dataset. Kept narrow so tests can
/// observe which stage touches which data.
pub trait TrainingData {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn input_view_count(&self, entry: usize) -> usize;
    /// `[3][S][S]` input render.
    fn input(&self, entry: usize, view: usize) -> &[f64];
    /// The eight cube-corner regression targets.
    fn fixed_targets(&self, entry: usize) -> &[CoordImage];
    fn supervision_count(&self, entry: usize) -> usize;
    fn supervision(&self, entry: usize, index: usize) -> (&Viewpoint, &RenderPair);
}

/// Dataset entries plus their precomputed pretraining targets.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub entries: Vec<DatasetEntry>,
    targets: Vec<Vec<CoordImage>>,
}

impl TrainingSet {
    pub fn new(entries: Vec<DatasetEntry>) -> Result<Self> {
        let targets = entries.iter().map(DatasetEntry::fixed_targets).collect::<Result<_>>()?;
        Ok(TrainingSet { entries, targets })
    }
}

impl TrainingData for TrainingSet {
    fn len(&self) -> usize {
        self.entries.len()
    }
    fn input_view_count(&self, entry: usize) -> usize {
        self.entries[entry].input_renders.len()
    }
    fn input(&self, entry: usize, view: usize) -> &[f64] {
        &self.entries[entry].input_renders[view]
    }
    fn fixed_targets(&self, entry: usize) -> &[CoordImage] {
        &self.targets[entry]
    }
    fn supervision_count(&self, entry: usize) -> usize {
        self.entries[entry].supervision.len()
    }
    fn supervision(&self, entry: usize, index: usize) -> (&Viewpoint, &RenderPair) {
        let (v, p) = &self.entries[entry].supervision[index];
        (v, p)
    }
}

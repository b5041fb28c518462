use rand::seq::index;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TrainConfig, TrainingData};
use crate::autodiff::{adam_step, clip_grad_norm, ops, AdamState, Tensor};
use crate::camera::{cube_corner_viewpoints, Intrinsics, Viewpoint};
use crate::coord_image::{CoordImage, CH_DEPTH, CH_DU, CH_DV, CH_MASK, COORD_CHANNELS};
use crate::error::{Error, Result};
use crate::generator::{Mode, SemdNetwork, NUM_VIEWS};
use crate::loss::{bce_mean, joint_loss, masked_l1_mean, LossRecord};
use crate::metrics::fuse_points;
use crate::pseudorender::{pseudo_render, RenderConfig, FAR_FACTOR};

const PRETRAIN_STREAM: u64 = 2;
const FINETUNE_STREAM: u64 = 3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOutcome {
    /// One record per completed iteration.
    pub log: Vec<LossRecord>,
    /// Fine-tuning iterations skipped because every fused cloud was empty.
    pub skipped_iterations: usize,
}

fn check_data(net: &SemdNetwork, data: &dyn TrainingData, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.batch_size < 2 {
        return Err(Error::Config(format!(
            "training needs batch_size >= 2 for batch statistics, got {}",
            cfg.batch_size
        )));
    }
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let s = net.config().input_size;
    for e in 0..data.len() {
        if data.input_view_count(e) == 0 {
            return Err(Error::Config(format!("entry {e} has no input renders")));
        }
        if data.input(e, 0).len() != 3 * s * s {
            return Err(Error::Dimension(format!(
                "entry {e} input render has {} values, network expects 3x{s}x{s}",
                data.input(e, 0).len()
            )));
        }
    }
    Ok(())
}

/// Draws `(entry, input view)` pairs and stacks their renders.
fn sample_batch(data: &dyn TrainingData, rng: &mut ChaCha8Rng, batch: usize, size: usize) -> Result<(Tensor, Vec<usize>)> {
    let mut entries = Vec::with_capacity(batch);
    let mut pixels = Vec::with_capacity(batch * 3 * size * size);
    for _ in 0..batch {
        let e = rng.random_range(0..data.len());
        let v = rng.random_range(0..data.input_view_count(e));
        pixels.extend_from_slice(data.input(e, v));
        entries.push(e);
    }
    Ok((Tensor::new(&[batch, 3, size, size], pixels)?, entries))
}

fn diverged(net: &SemdNetwork, cfg: &TrainConfig, iteration: usize, loss: f64) -> Error {
    if let Some(path) = &cfg.diagnostic_checkpoint {
        if let Err(e) = net.save(path) {
            eprintln!("could not write diagnostic checkpoint: {e}");
        }
    }
    Error::Divergence { iteration, loss }
}

/// Stage-one objective on branch outputs: per view, BCE on the mask channel
/// plus foreground-masked L1 on the offset and depth channels. Returns the
/// scalar loss and its `(mask, regression)` parts.
pub fn pretrain_loss(branches: &[Tensor], targets: &[&[CoordImage]]) -> Result<(Tensor, f64, f64)> {
    let first = branches
        .first()
        .ok_or_else(|| Error::Dimension("no branch outputs".into()))?;
    let k = first.shape()[1] / COORD_CHANNELS;
    if k * branches.len() != NUM_VIEWS {
        return Err(Error::Dimension(format!("{} views predicted", k * branches.len())));
    }
    let b = first.shape()[0];
    if targets.len() != b {
        return Err(Error::Dimension(format!("{b} samples but {} target sets", targets.len())));
    }
    let mut mask_terms = Vec::new();
    let mut reg_terms = Vec::new();
    for (j, t) in branches.iter().enumerate() {
        for i in 0..k {
            let view = j * k + i;
            let gather = |c: usize| -> Result<Vec<f64>> {
                let mut out = Vec::new();
                for set in targets {
                    let img = set.get(view).ok_or(Error::Index {
                        index: view,
                        len: set.len(),
                    })?;
                    if img.size != t.shape()[2] {
                        return Err(Error::Dimension(format!(
                            "target size {} vs prediction size {}",
                            img.size,
                            t.shape()[2]
                        )));
                    }
                    out.extend_from_slice(img.channel(c));
                }
                Ok(out)
            };
            let gt_mask = gather(CH_MASK)?;
            let fg: Vec<f64> = gt_mask.iter().map(|&m| if m > 0.5 { 1.0 } else { 0.0 }).collect();
            mask_terms.push(bce_mean(&ops::select_channel(t, i * COORD_CHANNELS + CH_MASK)?, &gt_mask)?);
            for c in [CH_DU, CH_DV, CH_DEPTH] {
                let pred = ops::select_channel(t, i * COORD_CHANNELS + c)?;
                if let Some(l) = masked_l1_mean(&pred, &gather(c)?, &fg)? {
                    reg_terms.push(l);
                }
            }
        }
    }
    let mask = ops::add_all(&mask_terms)?;
    let mask_v = mask.item();
    if reg_terms.is_empty() {
        return Ok((mask, mask_v, 0.0));
    }
    let reg = ops::add_all(&reg_terms)?;
    let reg_v = reg.item();
    Ok((ops::add(&mask, &reg)?, mask_v, reg_v))
}

/// Stage one: regress the eight fixed-view coordinate images directly.
pub fn pretrain(net: &SemdNetwork, data: &dyn TrainingData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_data(net, data, cfg)?;
    let out_size = net.config().output_size;
    for e in 0..data.len() {
        let t = data.fixed_targets(e);
        if t.len() != NUM_VIEWS || t.iter().any(|c| c.size != out_size) {
            return Err(Error::Dimension(format!(
                "entry {e} needs {NUM_VIEWS} targets of size {out_size}"
            )));
        }
    }
    let params = net.parameters();
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(PRETRAIN_STREAM);
    let mut outcome = TrainOutcome::default();
    for it in 0..cfg.pretrain_iters {
        let (x, entries) = sample_batch(data, &mut rng, cfg.batch_size, net.config().input_size)?;
        let branches = net.forward_tensors(&x, Mode::Train)?;
        let targets: Vec<&[CoordImage]> = entries.iter().map(|&e| data.fixed_targets(e)).collect();
        let (loss, mask, reg) = pretrain_loss(&branches, &targets)?;
        let total = loss.item();
        if !total.is_finite() {
            return Err(diverged(net, cfg, it, total));
        }
        net.zero_grad();
        loss.backward()?;
        adam_step(&params, &mut adam, cfg.pretrain_lr)?;
        outcome.log.push(LossRecord {
            iteration: it,
            total,
            mask,
            depth: reg,
        });
    }
    Ok(outcome)
}

/// Fixed geometry shared by every fine-tuning iteration.
#[derive(Debug, Clone)]
pub struct FinetuneRenderer {
    pub viewpoints: Vec<Viewpoint>,
    pub intrinsics: Intrinsics,
    pub render: RenderConfig,
}

impl FinetuneRenderer {
    pub fn new(output_size: usize, cfg: &TrainConfig) -> Result<Self> {
        Ok(FinetuneRenderer {
            viewpoints: cube_corner_viewpoints(cfg.camera_radius)?,
            intrinsics: Intrinsics::for_image(output_size),
            render: RenderConfig {
                size: output_size,
                upsample: cfg.upsample,
                far: FAR_FACTOR * cfg.camera_radius,
                pool: cfg.depth_pool,
            },
        })
    }
}

/// Stage-two objective for one batch: each sample's fused cloud is rendered
/// into its supervision views `picks[b]` and scored with the joint loss.
/// The result is averaged over samples with a nonempty cloud, or `None`
/// when every cloud is empty. Returns the loss and its mean mask and depth
/// parts.
pub fn finetune_loss(
    net: &SemdNetwork,
    data: &dyn TrainingData,
    images: &Tensor,
    entries: &[usize],
    picks: &[Vec<usize>],
    cfg: &TrainConfig,
    renderer: &FinetuneRenderer,
) -> Result<Option<(Tensor, f64, f64)>> {
    let branches = net.forward_tensors(images, Mode::Train)?;
    let mut totals = Vec::new();
    let (mut mask, mut depth) = (0.0, 0.0);
    for (b, &e) in entries.iter().enumerate() {
        let fused = fuse_points(
            &branches,
            b,
            &renderer.viewpoints,
            &renderer.intrinsics,
            cfg.mask_threshold,
        )?;
        let Some(points) = fused else { continue };
        let mut preds = Vec::with_capacity(picks[b].len());
        let mut gts = Vec::with_capacity(picks[b].len());
        for &s in &picks[b] {
            let (vp, gt) = data.supervision(e, s);
            preds.push(pseudo_render(&points, vp, &renderer.intrinsics, &renderer.render)?);
            gts.push(gt.clone());
        }
        let l = joint_loss(&preds, &gts, cfg.lambda)?;
        mask += l.mask_loss;
        depth += l.depth_loss;
        totals.push(l.total);
    }
    if totals.is_empty() {
        return Ok(None);
    }
    let n = totals.len() as f64;
    let loss = ops::scale(&ops::add_all(&totals)?, 1.0 / n);
    Ok(Some((loss, mask / n, depth / n)))
}

/// Stage two: fuse, pseudo-render into random supervision views and
/// minimise the joint mask and depth loss.
pub fn finetune(net: &SemdNetwork, data: &dyn TrainingData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_data(net, data, cfg)?;
    let out_size = net.config().output_size;
    for e in 0..data.len() {
        let n = data.supervision_count(e);
        if n < cfg.supervision_view_count {
            return Err(Error::Config(format!(
                "entry {e} has {n} supervision views, {} requested",
                cfg.supervision_view_count
            )));
        }
        if data.supervision(e, 0).1.size != out_size {
            return Err(Error::Dimension(format!(
                "entry {e} supervision renders are {} px, network outputs {out_size} px",
                data.supervision(e, 0).1.size
            )));
        }
    }
    let renderer = FinetuneRenderer::new(out_size, cfg)?;
    let params = net.parameters();
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(FINETUNE_STREAM);
    let mut outcome = TrainOutcome::default();
    let mut empty_run = 0;
    for it in 0..cfg.finetune_iters {
        let (x, entries) = sample_batch(data, &mut rng, cfg.batch_size, net.config().input_size)?;
        let picks: Vec<Vec<usize>> = entries
            .iter()
            .map(|&e| index::sample(&mut rng, data.supervision_count(e), cfg.supervision_view_count).into_vec())
            .collect();
        let parts = finetune_loss(net, data, &x, &entries, &picks, cfg, &renderer)?;
        let Some((loss, mask, depth)) = parts else {
            outcome.skipped_iterations += 1;
            empty_run += 1;
            if empty_run >= cfg.max_empty_skips {
                return Err(Error::EmptyCloud(empty_run));
            }
            continue;
        };
        empty_run = 0;
        let total = loss.item();
        if !total.is_finite() {
            return Err(diverged(net, cfg, it, total));
        }
        net.zero_grad();
        loss.backward()?;
        clip_grad_norm(&params, cfg.clip_norm);
        adam_step(&params, &mut adam, cfg.finetune_lr)?;
        outcome.log.push(LossRecord {
            iteration: it,
            total,
            mask,
            depth,
        });
    }
    Ok(outcome)
}

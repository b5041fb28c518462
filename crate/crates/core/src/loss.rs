//! Mask cross-entropy, masked depth L1 and their weighted sum.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{ops, GradCtx, Tensor};
use crate::error::{Error, Result};
use crate::pseudorender::RenderPair;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

/// Default weight of the depth term.
pub const DEFAULT_LAMBDA: f64 = 1.0;

fn clamp_p(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// Mean binary cross-entropy of `pred` against `target`, as a scalar.
///
/// The gradient uses the clamped probability but is not zeroed where the
/// clamp is active, so a saturated wrong prediction still gets pushed back.
pub fn bce_mean(pred: &Tensor, target: &[f64]) -> Result<Tensor> {
    if pred.numel() != target.len() {
        return Err(Error::Dimension(format!(
            "bce: {} predictions vs {} targets",
            pred.numel(),
            target.len()
        )));
    }
    let n = target.len() as f64;
    let loss = pred
        .data()
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = clamp_p(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n;
    let target = target.to_vec();
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        vec![pred.clone()],
        Box::new(move |ctx: &GradCtx<'_>| {
            let g = ctx.grad[0] / n;
            let p = ctx.inputs[0].data();
            let out = p
                .iter()
                .zip(&target)
                .map(|(&p, &y)| {
                    let p = clamp_p(p);
                    g * ((1.0 - y) / (1.0 - p) - y / p)
                })
                .collect();
            vec![Some(out)]
        }),
    ))
}

/// `Σ w·|pred − target| / Σ w` over the pixels with nonzero weight.
/// Returns `None` when every weight is zero.
pub fn masked_l1_mean(pred: &Tensor, target: &[f64], weight: &[f64]) -> Result<Option<Tensor>> {
    if pred.numel() != target.len() || target.len() != weight.len() {
        return Err(Error::Dimension(format!(
            "masked l1: {} predictions, {} targets, {} weights",
            pred.numel(),
            target.len(),
            weight.len()
        )));
    }
    let denom: f64 = weight.iter().sum();
    if denom <= 0.0 {
        return Ok(None);
    }
    let loss = pred
        .data()
        .iter()
        .zip(target)
        .zip(weight)
        .map(|((&p, &t), &w)| w * (p - t).abs())
        .sum::<f64>()
        / denom;
    let (target, weight) = (target.to_vec(), weight.to_vec());
    Ok(Some(Tensor::from_op(
        vec![1],
        vec![loss],
        vec![pred.clone()],
        Box::new(move |ctx: &GradCtx<'_>| {
            let g = ctx.grad[0] / denom;
            let p = ctx.inputs[0].data();
            let out = p
                .iter()
                .zip(&target)
                .zip(&weight)
                .map(|((&p, &t), &w)| {
                    let d = p - t;
                    // Zero subgradient at the kink.
                    let s = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
                    g * w * s
                })
                .collect();
            vec![Some(out)]
        }),
    )))
}

/// Scalar loss plus its detached components.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: Tensor,
    pub mask_loss: f64,
    pub depth_loss: f64,
    /// `(mask, depth)` per view, in input order.
    pub per_view: Vec<(f64, f64)>,
    /// Views whose ground-truth mask was empty; their depth term is 0.
    pub empty_views: usize,
}

impl LossBreakdown {
    pub fn record(&self, iteration: usize) -> LossRecord {
        LossRecord {
            iteration,
            total: self.total.item(),
            mask: self.mask_loss,
            depth: self.depth_loss,
        }
    }
}

fn split_render(pred: &Tensor, size: usize) -> Result<(Tensor, Tensor)> {
    if pred.shape() != [2, size, size] {
        return Err(Error::Dimension(format!(
            "render of size {size} must be [2,{size},{size}], got {:?}",
            pred.shape()
        )));
    }
    Ok((ops::narrow(pred, 0, 1)?, ops::narrow(pred, 1, 1)?))
}

/// Sum over views of mean BCE between rendered and true masks.
pub fn mask_loss(preds: &[Tensor], gts: &[RenderPair]) -> Result<Tensor> {
    Ok(joint_loss(preds, gts, 0.0)?.total)
}

/// Sum over views of the foreground-masked mean depth L1. Views with an
/// empty ground-truth mask contribute 0.
pub fn depth_loss(preds: &[Tensor], gts: &[RenderPair]) -> Result<Tensor> {
    let present: Vec<Tensor> = depth_terms(preds, gts)?.0.into_iter().flatten().collect();
    match present.is_empty() {
        true => Ok(Tensor::scalar(0.0)),
        false => ops::add_all(&present),
    }
}

fn check_views(preds: &[Tensor], gts: &[RenderPair]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Dimension(format!(
            "{} rendered views vs {} ground-truth views",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Dimension("loss needs at least one view".into()));
    }
    Ok(())
}

fn depth_terms(preds: &[Tensor], gts: &[RenderPair]) -> Result<(Vec<Option<Tensor>>, usize)> {
    check_views(preds, gts)?;
    let mut terms = Vec::new();
    let mut empty = 0;
    for (p, gt) in preds.iter().zip(gts) {
        let (depth, _) = split_render(p, gt.size)?;
        let w: Vec<f64> = gt.mask.iter().map(|&m| if m > 0.5 { 1.0 } else { 0.0 }).collect();
        let t = masked_l1_mean(&depth, &gt.depth, &w)?;
        empty += t.is_none() as usize;
        terms.push(t);
    }
    Ok((terms, empty))
}

/// `mask + lambda · depth` over paired rendered and true views.
pub fn joint_loss(preds: &[Tensor], gts: &[RenderPair], lambda: f64) -> Result<LossBreakdown> {
    check_views(preds, gts)?;
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let mut mask_terms = Vec::with_capacity(preds.len());
    for (p, gt) in preds.iter().zip(gts) {
        let (_, mask) = split_render(p, gt.size)?;
        mask_terms.push(bce_mean(&mask, &gt.mask)?);
    }
    let (depth_terms, empty_views) = depth_terms(preds, gts)?;
    let per_view = mask_terms
        .iter()
        .zip(&depth_terms)
        .map(|(m, d)| (m.item(), d.as_ref().map_or(0.0, Tensor::item)))
        .collect::<Vec<_>>();
    let mask = ops::add_all(&mask_terms)?;
    let present: Vec<Tensor> = depth_terms.into_iter().flatten().collect();
    let depth = match present.is_empty() {
        true => None,
        false => Some(ops::add_all(&present)?),
    };
    let mask_loss = mask.item();
    let depth_loss = depth.as_ref().map_or(0.0, Tensor::item);
    let total = match (&depth, lambda != 0.0) {
        (Some(d), true) => ops::add(&mask, &ops::scale(d, lambda))?,
        _ => mask,
    };
    Ok(LossBreakdown {
        total,
        mask_loss,
        depth_loss,
        per_view,
        empty_views,
    })
}

/// One row of the training loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub mask: f64,
    pub depth: f64,
}

pub const LOSS_LOG_HEADER: &str = "iter,total,mask,depth";

pub fn format_loss_log(records: &[LossRecord]) -> String {
    let mut s = String::from(LOSS_LOG_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.iteration, r.total, r.mask, r.depth);
    }
    s
}

pub fn parse_loss_log(text: &str) -> Result<Vec<LossRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == LOSS_LOG_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "loss log must start with '{LOSS_LOG_HEADER}', found {other:?}"
            )))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Parse(format!("loss log line {}: '{l}'", i + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            Ok(LossRecord {
                iteration: f[0].trim().parse().map_err(|_| bad())?,
                total: num(f[1])?,
                mask: num(f[2])?,
                depth: num(f[3])?,
            })
        })
        .collect()
}

pub fn write_loss_log(path: impl AsRef<Path>, records: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_loss_log(records)).map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let path = path.as_ref();
    parse_loss_log(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Trailing moving average with window `w` (one value per full window).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    if w == 0 || values.len() < w {
        return Vec::new();
    }
    values.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(depth: Vec<f64>, mask: Vec<f64>) -> RenderPair {
        let size = (depth.len() as f64).sqrt() as usize;
        RenderPair { size, depth, mask }
    }

    fn render(depth: &[f64], mask: &[f64]) -> Tensor {
        let n = (depth.len() as f64).sqrt() as usize;
        let mut d = depth.to_vec();
        d.extend_from_slice(mask);
        Tensor::param(&[2, n, n], d).unwrap()
    }

    #[test]
    fn perfect_prediction_has_tiny_loss() {
        let gt = pair(vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 0.0, 1.0, 0.0]);
        let p = render(&gt.depth, &gt.mask);
        let l = joint_loss(&[p], &[gt], 1.0).unwrap();
        assert!(l.total.item() < 1e-6);
        assert_eq!(l.depth_loss, 0.0);
    }

    #[test]
    fn bce_hand_value() {
        let p = Tensor::new(&[2], vec![0.8, 0.3]).unwrap();
        let l = bce_mean(&p, &[1.0, 0.0]).unwrap().item();
        let expect = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
        assert!((l - expect).abs() < 1e-15);
    }

    #[test]
    fn bce_survives_saturation() {
        let p = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        let l = bce_mean(&p, &[1.0, 0.0]).unwrap().item();
        assert!(l.is_finite());
        assert!((l - -(BCE_EPS.ln())).abs() < 1e-6);
    }

    #[test]
    fn depth_only_counts_foreground() {
        let gt = pair(vec![1.0, 1.0, 1.0, 1.0], vec![1.0, 1.0, 0.0, 0.0]);
        let p = render(&[2.0, 0.0, 100.0, -50.0], &[1.0, 1.0, 0.0, 0.0]);
        let l = depth_loss(&[p], &[gt]).unwrap().item();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn empty_mask_view_is_flagged() {
        let gt = pair(vec![1.0; 4], vec![0.0; 4]);
        let p = render(&[5.0; 4], &[0.5; 4]);
        let l = joint_loss(&[p], &[gt], 1.0).unwrap();
        assert_eq!(l.empty_views, 1);
        assert_eq!(l.depth_loss, 0.0);
        assert!((l.total.item() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn lambda_weights_depth() {
        let gt = pair(vec![1.0; 4], vec![1.0; 4]);
        let p = render(&[2.0; 4], &[0.5; 4]);
        let a = joint_loss(std::slice::from_ref(&p), std::slice::from_ref(&gt), 0.0).unwrap();
        let b = joint_loss(&[p], &[gt], 3.0).unwrap();
        assert!((b.total.item() - a.total.item() - 3.0).abs() < 1e-12);
        assert!((b.total.item() - (b.mask_loss + 3.0 * b.depth_loss)).abs() < 1e-12);
    }

    #[test]
    fn per_view_sums_to_aggregates() {
        let gts = vec![
            pair(vec![1.0; 4], vec![1.0, 0.0, 1.0, 0.0]),
            pair(vec![2.0; 4], vec![0.0, 1.0, 1.0, 1.0]),
        ];
        let preds = vec![render(&[1.5; 4], &[0.7; 4]), render(&[2.25; 4], &[0.2; 4])];
        let l = joint_loss(&preds, &gts, 1.0).unwrap();
        let m: f64 = l.per_view.iter().map(|v| v.0).sum();
        let d: f64 = l.per_view.iter().map(|v| v.1).sum();
        assert!((m - l.mask_loss).abs() < 1e-12);
        assert!((d - l.depth_loss).abs() < 1e-12);
        assert!((l.depth_loss - 0.75).abs() < 1e-12);
    }

    #[test]
    fn negative_lambda_rejected() {
        let gt = pair(vec![1.0; 4], vec![1.0; 4]);
        let p = render(&[1.0; 4], &[0.5; 4]);
        assert!(matches!(joint_loss(&[p], &[gt], -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn view_count_mismatch() {
        let gt = pair(vec![1.0; 4], vec![1.0; 4]);
        assert!(matches!(joint_loss(&[], &[gt], 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn loss_log_roundtrip() {
        let recs = vec![
            LossRecord { iteration: 0, total: 1.5, mask: 0.5, depth: 1.0 },
            LossRecord { iteration: 1, total: 0.1 + 0.2, mask: 1e-300, depth: 0.0 },
        ];
        assert_eq!(parse_loss_log(&format_loss_log(&recs)).unwrap(), recs);
        assert!(parse_loss_log("a,b\n").is_err());
    }

    #[test]
    fn moving_average_windows() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
    }
}

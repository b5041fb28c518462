use std::fmt::Write as _;

use crate::autodiff::{no_grad, Tensor};
use crate::camera::{cube_corner_viewpoints, Intrinsics};
use crate::error::{Error, Result};
use crate::generator::{Mode, SemdNetwork};
use crate::loss::{moving_average, LossRecord};
use crate::metrics::{compare, format_report_csv, fuse_viewpoints, Fusion, MetricOptions, MetricReport};
use crate::synthdata::DatasetEntry;

/// Single-image reconstruction: one `[3][S][S]` render in, fused cloud out.
pub fn infer(net: &SemdNetwork, image: &[f64], mask_threshold: f64, camera_radius: f64) -> Result<Fusion> {
    let s = net.config().input_size;
    let x = Tensor::new(&[1, 3, s, s], image.to_vec())
        .map_err(|_| Error::Dimension(format!("input image must hold 3x{s}x{s} values, got {}", image.len())))?;
    let views = no_grad(|| net.forward(&x, Mode::Eval))?;
    let intr = Intrinsics::for_image(net.config().output_size);
    fuse_viewpoints(&views[0], &cube_corner_viewpoints(camera_radius)?, &intr, mask_threshold)
}

pub fn infer_entry(
    net: &SemdNetwork,
    entry: &DatasetEntry,
    view: usize,
    mask_threshold: f64,
    camera_radius: f64,
) -> Result<Fusion> {
    let image = entry.input_renders.get(view).ok_or(Error::Index {
        index: view,
        len: entry.input_renders.len(),
    })?;
    infer(net, image, mask_threshold, camera_radius)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalSummary {
    pub rows: Vec<(String, MetricReport)>,
    /// Entries excluded from the means, with the reason.
    pub failures: Vec<(String, String)>,
}

impl EvalSummary {
    /// Per-metric means over successful entries.
    pub fn mean(&self) -> Option<MetricReport> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| self.rows.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
        let cnt = |f: fn(&MetricReport) -> usize| self.rows.iter().map(|(_, r)| f(r)).sum::<usize>() / self.rows.len();
        Some(MetricReport {
            euclid_pred_to_gt: avg(|r| r.euclid_pred_to_gt),
            euclid_gt_to_pred: avg(|r| r.euclid_gt_to_pred),
            chamfer: avg(|r| r.chamfer),
            emd: avg(|r| r.emd),
            point_counts: (cnt(|r| r.point_counts.0), cnt(|r| r.point_counts.1)),
        })
    }

    /// Per-entry rows followed by a `mean` row when any entry succeeded.
    pub fn to_csv(&self) -> String {
        let mut rows = self.rows.clone();
        if let Some(m) = self.mean() {
            rows.push(("mean".into(), m));
        }
        format_report_csv(&rows)
    }
}

/// Reconstructs every entry from its first input render and scores it
/// against the sampled surface.
pub fn evaluate(
    net: &SemdNetwork,
    entries: &[DatasetEntry],
    mask_threshold: f64,
    camera_radius: f64,
    opts: &MetricOptions,
) -> Result<EvalSummary> {
    let mut out = EvalSummary::default();
    for e in entries {
        let scored = infer_entry(net, e, 0, mask_threshold, camera_radius).and_then(|f| {
            if f.is_empty() {
                return Err(Error::UndefinedMetric("empty predicted cloud".into()));
            }
            compare(&f.cloud, &e.shape.surface, opts)
        });
        match scored {
            Ok(r) => out.rows.push((e.model_id.clone(), r)),
            Err(err @ (Error::UndefinedMetric(_) | Error::Cardinality(..))) => {
                out.failures.push((e.model_id.clone(), err.to_string()))
            }
            Err(err) => return Err(err),
        }
    }
    Ok(out)
}

/// Loss-curve table: the logged columns plus a trailing moving average of
/// the total (blank until a full window is available).
pub fn loss_curve(records: &[LossRecord], window: usize) -> Result<String> {
    if window == 0 {
        return Err(Error::Config("moving-average window must be positive".into()));
    }
    let totals: Vec<f64> = records.iter().map(|r| r.total).collect();
    let ma = moving_average(&totals, window);
    let mut s = format!("iter,total,mask,depth,total_ma{window}\n");
    for (i, r) in records.iter().enumerate() {
        let avg = match i + 1 >= window {
            true => ma[i + 1 - window].to_string(),
            false => String::new(),
        };
        let _ = writeln!(s, "{},{},{},{},{avg}", r.iteration, r.total, r.mask, r.depth);
    }
    Ok(s)
}

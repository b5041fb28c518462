//! View fusion and point cloud distances.

pub mod emd;
pub mod fusion;
pub mod nn;
pub mod ply;

use std::fmt::Write as _;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use emd::{emd_approx, emd_exact, emd_registry, EmdSolver};
pub use fusion::{fuse_points, fuse_viewpoints, Fusion, DEFAULT_MASK_THRESHOLD};
pub use nn::{nn_registry, NearestNeighbor};
pub use ply::{read_ply, write_ply, PlyFormat};

use crate::camera::{Point3, PointCloud};
use crate::error::{Error, Result};

fn nonempty(p: &[Point3], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::UndefinedMetric(format!("{what} point set is empty")));
    }
    Ok(())
}

/// Mean distance from each source point to its nearest target point.
pub fn euclid_distance_with(source: &[Point3], target: &[Point3], nn: &dyn NearestNeighbor) -> Result<f64> {
    nonempty(source, "source")?;
    nonempty(target, "target")?;
    let total: f64 = nn.nearest(target, source).iter().map(|&(_, d2)| d2.sqrt()).sum();
    Ok(total / source.len() as f64)
}

pub fn euclid_distance(source: &PointCloud, target: &PointCloud) -> Result<f64> {
    euclid_distance_with(&source.points, &target.points, &nn::KdTree)
}

/// Sum of squared nearest-neighbour distances in both directions.
pub fn chamfer_distance_with(a: &[Point3], b: &[Point3], nn: &dyn NearestNeighbor) -> Result<f64> {
    nonempty(a, "first")?;
    nonempty(b, "second")?;
    let one = |s: &[Point3], t: &[Point3]| -> f64 { nn.nearest(t, s).iter().map(|&(_, d2)| d2).sum() };
    Ok(one(a, b) + one(b, a))
}

pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_distance_with(&a.points, &b.points, &nn::KdTree)
}

/// Uniform sample of exactly `n` points with replacement.
pub fn resample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    nonempty(&cloud.points, "resample input")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..cloud.len())).collect();
    let points = idx.iter().map(|&i| cloud.points[i]).collect();
    let confidence = cloud
        .confidence
        .as_ref()
        .map(|c| idx.iter().map(|&i| c[i]).collect());
    Ok(PointCloud { points, confidence })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub euclid_pred_to_gt: f64,
    pub euclid_gt_to_pred: f64,
    pub chamfer: f64,
    pub emd: f64,
    pub point_counts: (usize, usize),
}

/// Settings for [`compare`].
#[derive(Debug, Clone)]
pub struct MetricOptions {
    /// Points both clouds are resampled to for chamfer and EMD.
    pub n_points: usize,
    pub seed: u64,
    pub nn: String,
    pub emd: String,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            n_points: 1024,
            seed: 0,
            nn: nn::DEFAULT_NN.into(),
            emd: emd::DEFAULT_EMD.into(),
        }
    }
}

/// Bidirectional Euclidean distance on the full clouds, chamfer and EMD on
/// `n_points` resampled points.
pub fn compare(pred: &PointCloud, gt: &PointCloud, opts: &MetricOptions) -> Result<MetricReport> {
    let nn = nn_registry().create(&opts.nn)?;
    let solver = emd_registry().create(&opts.emd)?;
    let fwd = euclid_distance_with(&pred.points, &gt.points, nn.as_ref())?;
    let bwd = euclid_distance_with(&gt.points, &pred.points, nn.as_ref())?;
    let p = resample(pred, opts.n_points, opts.seed)?;
    let g = resample(gt, opts.n_points, opts.seed.wrapping_add(1))?;
    Ok(MetricReport {
        euclid_pred_to_gt: fwd,
        euclid_gt_to_pred: bwd,
        chamfer: chamfer_distance_with(&p.points, &g.points, nn.as_ref())?,
        emd: solver.emd(&p.points, &g.points)?,
        point_counts: (pred.len(), gt.len()),
    })
}

pub const REPORT_CSV_HEADER: &str = "model_id,euclid_pred_to_gt,euclid_gt_to_pred,chamfer,emd,pred_points,gt_points";

pub fn format_report_csv(rows: &[(String, MetricReport)]) -> String {
    let mut s = String::from(REPORT_CSV_HEADER);
    s.push('\n');
    for (id, r) in rows {
        let _ = writeln!(
            s,
            "{id},{},{},{},{},{},{}",
            r.euclid_pred_to_gt, r.euclid_gt_to_pred, r.chamfer, r.emd, r.point_counts.0, r.point_counts.1
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pc(p: &[Point3]) -> PointCloud {
        PointCloud::new(p.to_vec())
    }

    #[test]
    fn hand_values() {
        let s = pc(&[[0.0, 0.0, 0.0]]);
        let t = pc(&[[1.0, 0.0, 0.0], [5.0, 0.0, 0.0]]);
        assert_eq!(euclid_distance(&s, &t).unwrap(), 1.0);
        let b = pc(&[[0.0, 0.0, 2.0]]);
        assert_eq!(chamfer_distance(&s, &b).unwrap(), 8.0);
    }

    #[test]
    fn empty_is_undefined() {
        let s = pc(&[[0.0; 3]]);
        let e = PointCloud::default();
        assert!(matches!(euclid_distance(&s, &e), Err(Error::UndefinedMetric(_))));
        assert!(matches!(chamfer_distance(&e, &s), Err(Error::UndefinedMetric(_))));
        assert!(matches!(resample(&e, 3, 0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn resample_single_point_and_determinism() {
        let one = pc(&[[1.0, 2.0, 3.0]]);
        assert_eq!(resample(&one, 5, 9).unwrap().points, vec![[1.0, 2.0, 3.0]; 5]);
        let many = pc(&(0..50).map(|i| [i as f64, 0.0, 0.0]).collect::<Vec<_>>());
        assert_eq!(resample(&many, 20, 4).unwrap(), resample(&many, 20, 4).unwrap());
        assert_ne!(resample(&many, 20, 4).unwrap(), resample(&many, 20, 5).unwrap());
    }

    #[test]
    fn self_comparison_is_zero() {
        let c = pc(&(0..40).map(|i| [(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64 * 0.01]).collect::<Vec<_>>());
        let opts = MetricOptions {
            n_points: 40,
            ..Default::default()
        };
        let r = compare(&c, &c, &opts).unwrap();
        assert_eq!(r.euclid_pred_to_gt, 0.0);
        assert_eq!(r.euclid_gt_to_pred, 0.0);
        assert_eq!(r.point_counts, (40, 40));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let r = MetricReport {
            euclid_pred_to_gt: 0.5,
            euclid_gt_to_pred: 0.25,
            chamfer: 1.0,
            emd: 2.0,
            point_counts: (3, 4),
        };
        let s = format_report_csv(&[("m0".into(), r)]);
        assert_eq!(s, format!("{REPORT_CSV_HEADER}\nm0,0.5,0.25,1,2,3,4\n"));
    }
}

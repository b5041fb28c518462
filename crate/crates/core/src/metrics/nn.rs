//! Exact nearest-neighbour search strategies.

use std::sync::OnceLock;

use crate::camera::Point3;
use crate::registry::Registry;

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// For every query, the index of and squared distance to its nearest target.
/// Ties go to the lowest target index.
pub trait NearestNeighbor: Send + Sync {
    fn name(&self) -> &'static str;
    fn nearest(&self, target: &[Point3], queries: &[Point3]) -> Vec<(usize, f64)>;
}

/// Exhaustive scan.
#[derive(Debug, Default, Clone, Copy)]
pub struct BruteForce;

impl NearestNeighbor for BruteForce {
    fn name(&self) -> &'static str {
        "brute"
    }

    fn nearest(&self, target: &[Point3], queries: &[Point3]) -> Vec<(usize, f64)> {
        queries
            .iter()
            .map(|q| {
                let mut best = (usize::MAX, f64::INFINITY);
                for (j, t) in target.iter().enumerate() {
                    let d = dist2(q, t);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best
            })
            .collect()
    }
}

/// Median-split k-d tree, rebuilt per call.
#[derive(Debug, Default, Clone, Copy)]
pub struct KdTree;

struct Tree<'a> {
    pts: &'a [Point3],
    /// Implicit balanced layout: the node of `[lo, hi)` sits at its midpoint.
    order: Vec<usize>,
    axes: Vec<u8>,
}

impl<'a> Tree<'a> {
    fn build(pts: &'a [Point3]) -> Self {
        let mut t = Tree {
            pts,
            order: (0..pts.len()).collect(),
            axes: vec![0; pts.len()],
        };
        t.split(0, pts.len());
        t
    }

    fn split(&mut self, lo: usize, hi: usize) {
        if hi <= lo + 1 {
            return;
        }
        let slice = &self.order[lo..hi];
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &i in slice {
            for a in 0..3 {
                min[a] = min[a].min(self.pts[i][a]);
                max[a] = max[a].max(self.pts[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (max[a] - min[a]).total_cmp(&(max[b] - min[b])))
            .unwrap_or(0);
        let mid = (lo + hi) / 2;
        let pts = self.pts;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&i, &j| pts[i][axis].total_cmp(&pts[j][axis]));
        self.axes[mid] = axis as u8;
        self.split(lo, mid);
        self.split(mid + 1, hi);
    }

    fn query(&self, q: &Point3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid];
        let d = dist2(q, &self.pts[i]);
        if d < best.1 || (d == best.1 && i < best.0) {
            *best = (i, d);
        }
        if hi - lo == 1 {
            return;
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.pts[i][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.query(q, near.0, near.1, best);
        // Equal-distance subtrees are still visited so ties resolve to the
        // lowest index.
        if diff * diff <= best.1 {
            self.query(q, far.0, far.1, best);
        }
    }
}

impl NearestNeighbor for KdTree {
    fn name(&self) -> &'static str {
        "kdtree"
    }

    fn nearest(&self, target: &[Point3], queries: &[Point3]) -> Vec<(usize, f64)> {
        let tree = Tree::build(target);
        queries
            .iter()
            .map(|q| {
                let mut best = (usize::MAX, f64::INFINITY);
                tree.query(q, 0, target.len(), &mut best);
                best
            })
            .collect()
    }
}

pub const DEFAULT_NN: &str = "kdtree";

pub fn nn_registry() -> &'static Registry<dyn NearestNeighbor> {
    static R: OnceLock<Registry<dyn NearestNeighbor>> = OnceLock::new();
    R.get_or_init(|| {
        Registry::new("nearest-neighbour index")
            .with("brute", || Box::new(BruteForce) as Box<dyn NearestNeighbor>)
            .with("kdtree", || Box::new(KdTree) as Box<dyn NearestNeighbor>)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_lowest_index() {
        let target = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        let q = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        for nn in [&BruteForce as &dyn NearestNeighbor, &KdTree] {
            let r = nn.nearest(&target, &q);
            assert_eq!(r[0], (0, 1.0), "{}", nn.name());
            assert_eq!(r[1], (0, 0.0), "{}", nn.name());
        }
    }

    #[test]
    fn kdtree_matches_brute_on_grid_duplicates() {
        let mut target = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..3 {
                    target.push([x as f64 * 0.5, y as f64 * 0.5, z as f64 * 0.5]);
                }
            }
        }
        target.extend(target.clone());
        let queries: Vec<Point3> = (0..50)
            .map(|i| [i as f64 * 0.07, (i % 7) as f64 * 0.3, (i % 3) as f64 * 0.25])
            .collect();
        assert_eq!(BruteForce.nearest(&target, &queries), KdTree.nearest(&target, &queries));
    }

    #[test]
    fn registry_knows_both() {
        assert_eq!(nn_registry().names(), vec!["brute", "kdtree"]);
        assert_eq!(nn_registry().create("kdtree").unwrap().name(), "kdtree");
    }
}

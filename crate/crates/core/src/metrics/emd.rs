//! Earth mover's distance between equal-size point sets: minimum total
//! Euclidean displacement over bijections.

use std::sync::OnceLock;

use super::nn::dist2;
use crate::camera::Point3;
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Largest set the cubic exact solver accepts.
pub const EXACT_EMD_MAX_POINTS: usize = 512;

/// Default number of auction scaling phases.
pub const DEFAULT_AUCTION_PHASES: usize = 10;

fn check(a: &[Point3], b: &[Point3]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Cardinality(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::UndefinedMetric("earth mover's distance of empty sets".into()));
    }
    Ok(())
}

fn cost_matrix(a: &[Point3], b: &[Point3]) -> Vec<f64> {
    a.iter()
        .flat_map(|p| b.iter().map(move |q| dist2(p, q).sqrt()))
        .collect()
}

/// Total cost of `assign` (row `i` goes to column `assign[i]`), summed in
/// row order.
fn assignment_cost(cost: &[f64], n: usize, assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
}

/// Optimal assignment of an `n×n` cost matrix by the shortest augmenting
/// path method with potentials. `O(n³)`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based arrays; column 0 is the virtual start.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Exact EMD via optimal assignment.
pub fn emd_exact(a: &[Point3], b: &[Point3]) -> Result<f64> {
    check(a, b)?;
    let n = a.len();
    if n > EXACT_EMD_MAX_POINTS {
        return Err(Error::Config(format!(
            "exact EMD is limited to {EXACT_EMD_MAX_POINTS} points, got {n}; resample first"
        )));
    }
    let cost = cost_matrix(a, b);
    Ok(assignment_cost(&cost, n, &hungarian(&cost, n)))
}

/// One forward-auction pass at fixed `eps`, warm-started from `price`.
fn auction_phase(cost: &[f64], n: usize, price: &mut [f64], eps: f64) -> Vec<usize> {
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    let mut queue: Vec<usize> = (0..n).rev().collect();
    while let Some(i) = queue.pop() {
        let row = &cost[i * n..(i + 1) * n];
        let (mut best, mut best_v, mut second_v) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for j in 0..n {
            let val = -row[j] - price[j];
            if val > best_v {
                second_v = best_v;
                best_v = val;
                best = j;
            } else if val > second_v {
                second_v = val;
            }
        }
        let inc = if second_v.is_finite() { best_v - second_v + eps } else { eps };
        price[best] += inc;
        if let Some(prev) = owner[best].replace(i) {
            assigned[prev] = None;
            queue.push(prev);
        }
        assigned[i] = Some(best);
    }
    assigned.into_iter().map(|j| j.expect("auction assigns every row")).collect()
}

/// Upper bound on EMD from an ε-scaling auction with `phases` phases.
///
/// Phase `k` runs at `ε₀ / 4ᵏ` and yields a full assignment within `n·ε` of
/// optimal. The cheapest assignment seen is returned, so adding phases never
/// increases the result.
pub fn emd_approx(a: &[Point3], b: &[Point3], phases: usize) -> Result<f64> {
    check(a, b)?;
    if phases == 0 {
        return Err(Error::Config("auction needs at least one phase".into()));
    }
    let n = a.len();
    let cost = cost_matrix(a, b);
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    if max_cost == 0.0 {
        return Ok(0.0);
    }
    let mut price = vec![0.0; n];
    let mut eps = max_cost / 4.0;
    let mut best = f64::INFINITY;
    for _ in 0..phases {
        let assign = auction_phase(&cost, n, &mut price, eps);
        best = best.min(assignment_cost(&cost, n, &assign));
        eps /= 4.0;
    }
    Ok(best)
}

/// An EMD strategy selectable by name.
pub trait EmdSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn emd(&self, a: &[Point3], b: &[Point3]) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Hungarian;

impl EmdSolver for Hungarian {
    fn name(&self) -> &'static str {
        "hungarian"
    }
    fn emd(&self, a: &[Point3], b: &[Point3]) -> Result<f64> {
        emd_exact(a, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Auction {
    pub phases: usize,
}

impl Default for Auction {
    fn default() -> Self {
        Auction {
            phases: DEFAULT_AUCTION_PHASES,
        }
    }
}

impl EmdSolver for Auction {
    fn name(&self) -> &'static str {
        "auction"
    }
    fn emd(&self, a: &[Point3], b: &[Point3]) -> Result<f64> {
        emd_approx(a, b, self.phases)
    }
}

pub const DEFAULT_EMD: &str = "auction";

pub fn emd_registry() -> &'static Registry<dyn EmdSolver> {
    static R: OnceLock<Registry<dyn EmdSolver>> = OnceLock::new();
    R.get_or_init(|| {
        Registry::new("EMD solver")
            .with("hungarian", || Box::new(Hungarian) as Box<dyn EmdSolver>)
            .with("auction", || Box::new(Auction::default()) as Box<dyn EmdSolver>)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swapped_pair_is_zero() {
        let a = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let b = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert_eq!(emd_exact(&a, &b).unwrap(), 0.0);
        assert_eq!(emd_approx(&a, &b, 3).unwrap(), 0.0);
    }

    #[test]
    fn hand_assignment() {
        // Rows prefer the same column; optimum is the anti-diagonal.
        let cost = [1.0, 2.0, 1.0, 10.0];
        assert_eq!(hungarian(&cost, 2), vec![1, 0]);
    }

    #[test]
    fn cardinality_and_empty() {
        let a = [[0.0; 3]];
        assert!(matches!(emd_exact(&a, &[]), Err(Error::Cardinality(1, 0))));
        assert!(matches!(emd_approx(&[], &[], 2), Err(Error::UndefinedMetric(_))));
        assert!(matches!(emd_approx(&a, &a, 0), Err(Error::Config(_))));
    }

    #[test]
    fn exact_limit_enforced() {
        let a = vec![[0.0; 3]; EXACT_EMD_MAX_POINTS + 1];
        assert!(matches!(emd_exact(&a, &a), Err(Error::Config(_))));
    }
}

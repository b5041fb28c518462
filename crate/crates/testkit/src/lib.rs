//! Reference oracles for the `semd` test suites.
//!
//! Everything here is deliberately naive: finite differences, exhaustive
//! scans and factorial enumeration. None of it shares code with the crate
//! under test.

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error between two gradient vectors.
///
/// The denominator is floored at `floor` so that entries whose true value is
/// zero are compared in absolute terms.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Small deterministic generator (SplitMix64) for oracle-side random data.
#[derive(Debug, Clone)]
pub struct SplitMix(u64);

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn points(&mut self, n: usize, lo: f64, hi: f64) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| [self.uniform(lo, hi), self.uniform(lo, hi), self.uniform(lo, hi)])
            .collect()
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Mean over `source` of the distance to the nearest `target` point, O(n·m).
pub fn brute_mean_nn_distance(source: &[[f64; 3]], target: &[[f64; 3]]) -> f64 {
    let total: f64 = source
        .iter()
        .map(|p| target.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
        .sum();
    total / source.len() as f64
}

/// Symmetric sum of squared nearest-neighbour distances, O(n·m).
pub fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let one_way = |s: &[[f64; 3]], t: &[[f64; 3]]| -> f64 {
        s.iter()
            .map(|p| t.iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min))
            .sum()
    };
    one_way(a, b) + one_way(b, a)
}

/// Minimum total matching cost over every permutation (Heap's algorithm).
pub fn brute_emd(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| -> f64 { (0..n).map(|i| dist(&a[i], &b[p[i]])).sum() };
    let mut best = cost(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// For each pixel of a `size`×`size` grid, the minimum depth among projected
/// samples `(col, row, depth)` that land on it, by scanning every sample.
pub fn brute_zbuffer(samples: &[(i64, i64, f64)], size: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; size * size];
    for r in 0..size as i64 {
        for c in 0..size as i64 {
            let mut best: Option<f64> = None;
            for &(sc, sr, d) in samples {
                if sc == c && sr == r {
                    best = Some(best.map_or(d, |b: f64| b.min(d)));
                }
            }
            out[r as usize * size + c as usize] = best;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_difference_of_square() {
        let g = central_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn permutation_emd_finds_swap() {
        let a = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let b = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert_eq!(brute_emd(&a, &b), 0.0);
    }
}

//! Exact k-nearest-neighbor search and Local Outlier Factor scoring.
//!
//! With `d(p, q)` the Euclidean distance and `N_k(p)` every other point
//! within the k-distance of `p` (ties included, so `|N_k(p)| >= k`):
//!
//! ```text
//! reach_k(p, o) = max(kdist(o), d(p, o))
//! lrd(p)        = 1 / mean_{o in N_k(p)} reach_k(p, o)
//! lof(p)        = mean_{o in N_k(p)} lrd(o) / lrd(p)
//! ```
//!
//! A point whose reachability distances are all zero (it sits on at least
//! k duplicates) has `lrd = +inf`. When `p` and every neighbor have
//! infinite lrd, `lof(p) = 1`. A finite-density point next to such a
//! cluster gets `lof = +inf`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum OutlierError {
    #[error("k = {k} is out of range for {n} points (need 1 <= k <= n - 1)")]
    KOutOfRange { k: usize, n: usize },
    #[error("row {row} contains a non-finite value")]
    NonFinite { row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct LofConfig {
    pub k: usize,
}

impl Default for LofConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

/// The k-neighborhood of one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub kdist: f64,
    /// Neighbor row indices, ascending.
    pub neighbors: Vec<usize>,
    /// Distances aligned with `neighbors`.
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LofScores {
    pub scores: Vec<f64>,
    pub lrd: Vec<f64>,
    pub neighborhoods: Vec<Neighborhood>,
}

impl LofScores {
    pub fn kdist(&self) -> Vec<f64> {
        self.neighborhoods.iter().map(|n| n.kdist).collect()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// CSV `(row_index, lof, kdist)` for the given rows.
    pub fn to_csv(&self, rows: &[usize]) -> String {
        let mut out = String::from("row_index,lof,kdist\n");
        for &r in rows {
            out.push_str(&format!("{},{},{}\n", r, self.scores[r], self.neighborhoods[r].kdist));
        }
        out
    }
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn validate(m: &Matrix, k: usize) -> Result<(), OutlierError> {
    let n = m.nrows();
    if k == 0 || k + 1 > n {
        return Err(OutlierError::KOutOfRange { k, n });
    }
    if let Some(row) = (0..n).find(|&r| m.row(r).iter().any(|v| !v.is_finite())) {
        return Err(OutlierError::NonFinite { row });
    }
    Ok(())
}

/// Exact tie-inclusive k-neighborhoods of every row, O(n²) distances.
pub fn knn(m: &Matrix, k: usize) -> Result<Vec<Neighborhood>, OutlierError> {
    validate(m, k)?;
    let n = m.nrows();
    Ok((0..n)
        .into_par_iter()
        .map(|p| {
            let row = m.row(p);
            let dists: Vec<f64> = (0..n).map(|q| if q == p { f64::INFINITY } else { euclidean(row, m.row(q)) }).collect();
            let mut scratch: Vec<f64> = dists.iter().enumerate().filter(|&(q, _)| q != p).map(|(_, d)| *d).collect();
            let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
            let kdist = *kth;
            let (neighbors, distances) = (0..n).filter(|&q| q != p && dists[q] <= kdist).map(|q| (q, dists[q])).unzip();
            Neighborhood { kdist, neighbors, distances }
        })
        .collect())
}

/// Local Outlier Factor of every row.
pub fn lof_scores(m: &Matrix, cfg: &LofConfig) -> Result<LofScores, OutlierError> {
    let neighborhoods = knn(m, cfg.k)?;
    let lrd: Vec<f64> = neighborhoods
        .par_iter()
        .map(|nb| {
            let total: f64 = nb.neighbors.iter().zip(&nb.distances).map(|(&o, &d)| neighborhoods[o].kdist.max(d)).sum();
            if total == 0.0 {
                f64::INFINITY
            } else {
                nb.neighbors.len() as f64 / total
            }
        })
        .collect();
    let scores = neighborhoods
        .par_iter()
        .enumerate()
        .map(|(p, nb)| {
            if lrd[p].is_infinite() {
                if nb.neighbors.iter().all(|&o| lrd[o].is_infinite()) {
                    return 1.0;
                }
                // not reachable in exact arithmetic: infinite lrd puts every
                // neighbor on a duplicate pile with infinite lrd as well.
                // inf/inf counts as 1, finite/inf as 0
                let ratio_sum: f64 = nb.neighbors.iter().map(|&o| if lrd[o].is_infinite() { 1.0 } else { 0.0 }).sum();
                return ratio_sum / nb.neighbors.len() as f64;
            }
            let sum: f64 = nb.neighbors.iter().map(|&o| lrd[o] / lrd[p]).sum();
            sum / nb.neighbors.len() as f64
        })
        .collect();
    Ok(LofScores { scores, lrd, neighborhoods })
}

/// Row indices of the `count` largest scores, ties to the lower index.
/// `count` is clamped to the number of rows.
pub fn top_outliers(scores: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(count.min(scores.len()));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points_1d(v: &[f64]) -> Matrix {
        Matrix::column_vector(v)
    }

    #[test]
    fn tie_inclusive_neighbors() {
        let nb = knn(&points_1d(&[0.0, 1.0, 2.0]), 1).unwrap();
        assert_eq!(nb.iter().map(|n| n.kdist).collect::<Vec<_>>(), vec![1.0, 1.0, 1.0]);
        assert_eq!(nb[1].neighbors, vec![0, 2]);
        assert_eq!(nb[0].neighbors, vec![1]);
    }

    #[test]
    fn k_equals_n_minus_one() {
        let nb = knn(&points_1d(&[0.0, 3.0, 4.0, 10.0]), 3).unwrap();
        for (p, n) in nb.iter().enumerate() {
            assert_eq!(n.neighbors, (0..4).filter(|&q| q != p).collect::<Vec<_>>());
        }
    }

    #[test]
    fn k_range_and_finiteness() {
        let m = points_1d(&[0.0, 1.0]);
        assert_eq!(knn(&m, 0), Err(OutlierError::KOutOfRange { k: 0, n: 2 }));
        assert_eq!(knn(&m, 2), Err(OutlierError::KOutOfRange { k: 2, n: 2 }));
        assert_eq!(knn(&points_1d(&[0.0, f64::NAN, 1.0]), 1), Err(OutlierError::NonFinite { row: 1 }));
    }

    #[test]
    fn duplicates_convention() {
        let s = lof_scores(&points_1d(&[2.5; 6]), &LofConfig { k: 3 }).unwrap();
        assert!(s.scores.iter().all(|v| *v == 1.0));
        assert!(s.lrd.iter().all(|v| v.is_infinite()));
        // a point next to a duplicate pile has infinite outlier factor
        let s = lof_scores(&points_1d(&[0.0, 0.0, 5.0]), &LofConfig { k: 1 }).unwrap();
        assert_eq!(s.scores[0], 1.0);
        assert!(s.scores[2].is_infinite());
    }

    #[test]
    fn grid_interior_near_one() {
        let grid: Vec<f64> = (0..10).map(f64::from).collect();
        let s = lof_scores(&points_1d(&grid), &LofConfig { k: 2 }).unwrap();
        // points at least k steps from either end
        for p in 2..8 {
            assert!((0.8..=1.2).contains(&s.scores[p]), "p={p} lof={}", s.scores[p]);
        }
        // values from a hand evaluation of the formulas
        let expected = [1.25, 1.25, 5.0 / 6.0, 1.0, 1.0, 1.0, 1.0, 5.0 / 6.0, 1.25, 1.25];
        for (got, want) in s.scores.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn top_outliers_ordering() {
        assert_eq!(top_outliers(&[1.0, 3.0, 2.0], 2), vec![1, 2]);
        assert_eq!(top_outliers(&[1.0, 3.0, 2.0], 0), Vec::<usize>::new());
        assert_eq!(top_outliers(&[1.0, 1.0, 1.0], 3), vec![0, 1, 2]);
        assert_eq!(top_outliers(&[1.0, 2.0], 5), vec![1, 0]);
    }
}

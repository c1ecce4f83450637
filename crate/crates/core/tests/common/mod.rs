//! Shared fixtures and brute-force oracles for the integration suites.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ctxmine::tabular::ColumnSpec;
use ctxmine::{Cell, Matrix, Table};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

/// Published medal-classifier confusion matrix, prediction rows × actual
/// columns, classes Gold, Silver, Bronze, No medal.
pub const TABLE2: [[u64; 4]; 4] =
    [[13, 6, 6, 73], [9, 3, 10, 61], [5, 12, 9, 63], [638, 634, 678, 11468]];

pub fn table2() -> ctxmine::metrics::ConfusionMatrix {
    ctxmine::metrics::ConfusionMatrix::from_counts(vec![1, 2, 3, 4], TABLE2.iter().map(|r| r.to_vec()).collect())
        .unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

pub fn random_points(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect()).collect()
}

/// Textbook LOF: distances, k-distance as the k-th smallest distance to
/// another point, k-neighborhood = all points within it, then
/// reachability, lrd and LOF straight from their definitions. Returns
/// (kdist, lrd, lof).
pub fn brute_lof(points: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = points.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for (a, b) in points[i].iter().zip(&points[j]) {
                s += (a - b) * (a - b);
            }
            dist[i][j] = s.sqrt();
        }
    }
    let mut kdist = vec![0.0; n];
    let mut hood: Vec<Vec<usize>> = vec![Vec::new(); n];
    for p in 0..n {
        let mut others: Vec<f64> = (0..n).filter(|&o| o != p).map(|o| dist[p][o]).collect();
        others.sort_by(f64::total_cmp);
        kdist[p] = others[k - 1];
        hood[p] = (0..n).filter(|&o| o != p && dist[p][o] <= kdist[p]).collect();
    }
    let lrd: Vec<f64> = (0..n)
        .map(|p| {
            let mut total = 0.0;
            for &o in &hood[p] {
                total += if kdist[o] > dist[p][o] { kdist[o] } else { dist[p][o] };
            }
            hood[p].len() as f64 / total
        })
        .collect();
    let lof = (0..n)
        .map(|p| {
            let mut s = 0.0;
            for &o in &hood[p] {
                s += lrd[o] / lrd[p];
            }
            s / hood[p].len() as f64
        })
        .collect();
    (kdist, lrd, lof)
}

pub struct McarFixture {
    pub table: Table,
    pub truth: Vec<f64>,
    pub masked: Vec<usize>,
}

/// n rows of x ~ U(0, 10), y = 2x + N(0, 0.1²), with `fraction` of y
/// masked completely at random.
pub fn mcar_fixture(seed: u64, n: usize, fraction: f64) -> McarFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
    let truth: Vec<f64> = x.iter().map(|&v| 2.0 * v + noise.sample(&mut rng)).collect();
    let mut masked = sample(&mut rng, n, (n as f64 * fraction).round() as usize).into_vec();
    masked.sort_unstable();
    let rows = (0..n)
        .map(|i| {
            let y = if masked.binary_search(&i).is_ok() { Cell::Missing } else { Cell::Number(truth[i]) };
            vec![Cell::Number(x[i]), y]
        })
        .collect();
    let table = Table::new(vec![ColumnSpec::numeric("x"), ColumnSpec::numeric("y")], rows).unwrap();
    McarFixture { table, truth, masked }
}

/// Points in [−1, 1]², class 1 when both coordinates share a sign, else 2.
pub fn xor_fixture(seed: u64, n: usize) -> (Matrix, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        rows.push(vec![a, b]);
        labels.push(if a * b > 0.0 { 1 } else { 2 });
    }
    (Matrix::from_rows(&rows), labels)
}

pub fn training_accuracy(pred: &[u32], y: &[u32]) -> f64 {
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

/// (team, ATSS) pairs of the published 2013 team-coefficient chart, best first.
pub const FIGURE5: [(&str, f64); 8] = [
    ("Bayern Munich", 36.585),
    ("Borussia Dortmund", 33.585),
    ("Real Madrid", 29.542),
    ("Barcelona", 27.542),
    ("Paris Saint Germain", 27.35),
    ("Juventus", 25.883),
    ("Malaga", 25.542),
    ("Galatasaray", 24.04),
];

//! Multivariate imputation by chained equations.
//!
//! Numeric targets are imputed with predictive mean matching: a
//! ridge-stabilized least-squares fit of the observed target on the other
//! columns gives a prediction for every row, and each missing row copies
//! the observed value of one of its `donor_pool` nearest rows in
//! prediction space. Categorical targets copy the category of the single
//! nearest observed row under one-vs-rest least-squares scores.
//!
//! A run produces one completed table (no pooling across imputations).

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Matrix};
use crate::tabular::{encode_and_scale, Cell, ColumnKind, EncodedMatrix, Table, TableError};

/// Stream selector mixed into the seed for donor draws, so the
/// initialization and the chain use different random streams.
const DONOR_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error)]
pub enum ImputeError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("invalid imputation config: {0}")]
    Config(String),
    #[error("column `{0}` has no observed values")]
    FullyMissing(String),
    #[error("column `{column}`: {observed} observed values, need at least {needed}")]
    TooFewObserved { column: String, observed: usize, needed: usize },
    #[error("donor pool of {donor_pool} exceeds the {observed} observed rows")]
    DonorPoolTooLarge { donor_pool: usize, observed: usize },
    #[error("singular normal equations (design column {column}) even with ridge {ridge}")]
    Singular { column: usize, ridge: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisitOrder {
    #[default]
    LeftToRight,
    MostMissingFirst,
}

impl std::str::FromStr for VisitOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left-to-right" => Ok(VisitOrder::LeftToRight),
            "most-missing-first" => Ok(VisitOrder::MostMissingFirst),
            other => Err(format!("unknown visit order `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiceConfig {
    /// Number of full sweeps over the incomplete columns.
    pub iterations: usize,
    pub donor_pool: usize,
    pub seed: u64,
    pub visit_order: VisitOrder,
    /// Added to the diagonal of every normal matrix.
    pub ridge: f64,
}

impl Default for MiceConfig {
    fn default() -> Self {
        Self { iterations: 50, donor_pool: 5, seed: 0, visit_order: VisitOrder::LeftToRight, ridge: 1e-8 }
    }
}

impl MiceConfig {
    pub fn validate(&self) -> Result<(), ImputeError> {
        if self.iterations == 0 {
            return Err(ImputeError::Config("iterations must be at least 1".into()));
        }
        if self.donor_pool == 0 {
            return Err(ImputeError::Config("donor_pool must be at least 1".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(ImputeError::Config("ridge must be a finite nonnegative number".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputedCell {
    pub row: usize,
    pub column: String,
    pub value: Cell,
}

/// Mean of the imputed values of one column after one sweep. Iteration 0
/// is the random initialization. Categorical columns report the mean
/// category index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainMean {
    pub iteration: usize,
    pub column: String,
    pub mean_imputed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiceResult {
    pub completed: Table,
    pub imputed_cells: Vec<ImputedCell>,
    pub chain_means: Vec<ChainMean>,
}

impl MiceResult {
    /// Chain means of one column, ordered by iteration.
    pub fn chain(&self, column: &str) -> Vec<f64> {
        self.chain_means.iter().filter(|c| c.column == column).map(|c| c.mean_imputed).collect()
    }

    /// CSV `(iteration, column, mean_imputed)`.
    pub fn chain_means_csv(&self) -> String {
        let mut out = String::from("iteration,column,mean_imputed\n");
        for c in &self.chain_means {
            out.push_str(&format!("{},{},{}\n", c.iteration, crate::tabular::csv_field(&c.column), c.mean_imputed));
        }
        out
    }

    /// CSV `(row, column, value)` of every imputed cell.
    pub fn imputed_cells_csv(&self) -> String {
        let mut out = String::from("row,column,value\n");
        for cell in &self.imputed_cells {
            let col = self.completed.column_index(&cell.column).expect("imputed column exists");
            out.push_str(&format!(
                "{},{},{}\n",
                cell.row,
                crate::tabular::csv_field(&cell.column),
                crate::tabular::csv_field(&self.completed.render(cell.row, col))
            ));
        }
        out
    }
}

/// Fills every MISSING cell of the listed columns with a value drawn
/// uniformly from that column's observed cells.
pub fn initialize_missing<S: AsRef<str>>(t: &Table, columns: &[S], seed: u64) -> Result<Table, ImputeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = t.clone();
    for name in columns {
        let col = t.column_index(name.as_ref())?;
        let observed: Vec<Cell> = (0..t.n_rows()).map(|r| t.cell(r, col)).filter(|c| !c.is_missing()).collect();
        let missing: Vec<usize> = (0..t.n_rows()).filter(|&r| t.is_missing(r, col)).collect();
        if missing.is_empty() {
            continue;
        }
        if observed.is_empty() {
            return Err(ImputeError::FullyMissing(name.as_ref().to_string()));
        }
        for r in missing {
            out.set_cell(r, col, observed[rng.gen_range(0..observed.len())]);
        }
    }
    Ok(out)
}

/// Observed rows sorted by prediction, answering "which `d` observed rows
/// have predictions closest to this value" with ties broken by lower row
/// index.
#[derive(Debug, Clone)]
pub struct DonorIndex {
    /// (prediction, row), ascending.
    sorted: Vec<(f64, usize)>,
}

impl DonorIndex {
    pub fn new(candidates: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut sorted: Vec<(f64, usize)> = candidates.into_iter().map(|(row, p)| (p, row)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self { sorted }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Rows of the `d` nearest candidates, ordered by (distance, row).
    /// Returns fewer than `d` rows only when there are fewer candidates.
    pub fn nearest(&self, query: f64, d: usize) -> Vec<usize> {
        let s = &self.sorted;
        let d = d.min(s.len());
        if d == 0 {
            return Vec::new();
        }
        let dist = |i: usize| (s[i].0 - query).abs();
        // left part [0, split) has predictions < query: distance shrinks
        // toward split; right part grows away from split
        let split = s.partition_point(|&(p, _)| p < query);

        // d-th smallest distance by merging outward from the split
        let (mut l, mut r) = (split, split);
        let mut threshold = 0.0;
        for _ in 0..d {
            let take_left = match (l > 0, r < s.len()) {
                (true, true) => dist(l - 1) <= dist(r),
                (true, false) => true,
                (false, true) => false,
                (false, false) => unreachable!("d <= len"),
            };
            if take_left {
                l -= 1;
                threshold = dist(l);
            } else {
                threshold = dist(r);
                r += 1;
            }
        }

        // everything strictly closer than the threshold is taken; the
        // remaining slots go to the threshold ties by row index
        let left = &s[..split];
        let right = &s[split..];
        let left_le = left.partition_point(|&(p, _)| (p - query).abs() > threshold);
        let left_lt = left.partition_point(|&(p, _)| (p - query).abs() >= threshold);
        let right_lt = right.partition_point(|&(p, _)| (p - query).abs() < threshold);
        let right_le = right.partition_point(|&(p, _)| (p - query).abs() <= threshold);

        let mut chosen: Vec<(f64, usize)> = left[left_lt..]
            .iter()
            .chain(&right[..right_lt])
            .map(|&(p, row)| ((p - query).abs(), row))
            .collect();
        let mut ties: Vec<usize> = left[left_le..left_lt].iter().chain(&right[right_lt..right_le]).map(|&(_, row)| row).collect();
        let need = d - chosen.len();
        if ties.len() > need {
            ties.select_nth_unstable(need);
            ties.truncate(need);
        }
        chosen.extend(ties.into_iter().map(|row| (threshold, row)));
        chosen.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        chosen.into_iter().map(|(_, row)| row).collect()
    }
}

/// Least-squares predictions for every row from a fit on `rows` only:
/// solves `(XᵀX + ridge·I) β = Xᵀy` with `X = [1 | predictors]`.
pub fn ridge_predictions(
    predictors: &Matrix,
    rows: &[usize],
    y: &[f64],
    ridge: f64,
) -> Result<Vec<f64>, ImputeError> {
    let (mut xtx, xty) = linalg::normal_equations(predictors, y, None, Some(rows));
    for k in 0..xtx.nrows() {
        xtx.set(k, k, xtx.get(k, k) + ridge);
    }
    let beta = linalg::solve(&xtx, &xty).map_err(|s| ImputeError::Singular { column: s.column, ridge })?;
    Ok(linalg::linear_predict(predictors, &beta))
}

/// Predictive mean matching for one numeric column.
///
/// `target[i]` is only read where `observed[i]`; the returned column keeps
/// observed entries and fills the rest with donor values.
pub fn pmm_impute_variable<R: Rng + ?Sized>(
    predictors: &Matrix,
    target: &[f64],
    observed: &[bool],
    donor_pool: usize,
    ridge: f64,
    rng: &mut R,
) -> Result<Vec<f64>, ImputeError> {
    assert_eq!(target.len(), predictors.nrows());
    assert_eq!(observed.len(), target.len());
    let obs_rows: Vec<usize> = (0..target.len()).filter(|&i| observed[i]).collect();
    if obs_rows.len() < 2 {
        return Err(ImputeError::TooFewObserved { column: String::new(), observed: obs_rows.len(), needed: 2 });
    }
    if donor_pool > obs_rows.len() {
        return Err(ImputeError::DonorPoolTooLarge { donor_pool, observed: obs_rows.len() });
    }
    let y_obs: Vec<f64> = obs_rows.iter().map(|&i| target[i]).collect();
    let preds = ridge_predictions(predictors, &obs_rows, &y_obs, ridge)?;
    let index = DonorIndex::new(obs_rows.iter().map(|&i| (i, preds[i])));

    let mut out = target.to_vec();
    for i in 0..target.len() {
        if observed[i] {
            continue;
        }
        let donors = index.nearest(preds[i], donor_pool);
        out[i] = target[donors[rng.gen_range(0..donors.len())]];
    }
    Ok(out)
}

/// Nearest-donor copy for a categorical column: one least-squares score
/// per category (indicator of that category), then each missing row takes
/// the category of the observed row whose score vector is closest in
/// Euclidean distance, ties to the lower row index.
fn categorical_impute(
    predictors: &Matrix,
    target: &[u32],
    observed: &[bool],
    n_categories: usize,
    ridge: f64,
) -> Result<Vec<u32>, ImputeError> {
    let obs_rows: Vec<usize> = (0..target.len()).filter(|&i| observed[i]).collect();
    let mut scores: Vec<Vec<f64>> = Vec::new();
    for c in 0..n_categories as u32 {
        if !obs_rows.iter().any(|&i| target[i] == c) {
            continue;
        }
        let indicator: Vec<f64> = obs_rows.iter().map(|&i| f64::from(u8::from(target[i] == c))).collect();
        scores.push(ridge_predictions(predictors, &obs_rows, &indicator, ridge)?);
    }
    let vector = |i: usize| -> Vec<f64> { scores.iter().map(|s| s[i]).collect() };

    // many rows share a predictor pattern; keep the lowest row per score vector
    let mut distinct: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut seen: HashMap<Vec<u64>, ()> = HashMap::new();
    for &i in &obs_rows {
        let v = vector(i);
        if seen.insert(v.iter().map(|x| x.to_bits()).collect(), ()).is_none() {
            distinct.push((v, i));
        }
    }

    let mut out = target.to_vec();
    for i in 0..target.len() {
        if observed[i] {
            continue;
        }
        let q = vector(i);
        let mut best: Option<(f64, usize)> = None;
        for (v, row) in &distinct {
            let d: f64 = v.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            let better = match best {
                None => true,
                Some((bd, br)) => d < bd || (d == bd && *row < br),
            };
            if better {
                best = Some((d, *row));
            }
        }
        out[i] = target[best.expect("at least one observed row").1];
    }
    Ok(out)
}

/// Predictor matrix for the chained regressions. A full one-hot block sums
/// to the intercept column, so the first non-empty indicator of every
/// categorical group is dropped (reference coding), as is any all-zero
/// column (unused categories, constant numerics).
pub fn regression_design(encoded: &EncodedMatrix) -> Matrix {
    let m = &encoded.values;
    let nonzero = |c: usize| (0..m.nrows()).any(|r| m.get(r, c) != 0.0);
    let mut keep = Vec::new();
    for g in &encoded.groups {
        let cols: Vec<usize> = (g.start..g.start + g.width).filter(|&c| nonzero(c)).collect();
        let skip = usize::from(g.scaling.is_none());
        keep.extend(cols.into_iter().skip(skip));
    }
    let data = (0..m.nrows()).flat_map(|r| keep.iter().map(move |&c| m.get(r, c))).collect();
    Matrix::from_row_major(m.nrows(), keep.len(), data)
}

/// Chained-equation imputation of `columns`. Every listed column serves as
/// a predictor for the others; only columns with MISSING cells are
/// imputed.
pub fn mice_impute<S: AsRef<str>>(t: &Table, columns: &[S], cfg: &MiceConfig) -> Result<MiceResult, ImputeError> {
    cfg.validate()?;
    let names: Vec<String> = columns.iter().map(|c| c.as_ref().to_string()).collect();
    let indices = names.iter().map(|c| t.column_index(c)).collect::<Result<Vec<_>, _>>()?;
    let n = t.n_rows();

    let missing_rows: Vec<Vec<usize>> =
        indices.iter().map(|&c| (0..n).filter(|&r| t.is_missing(r, c)).collect()).collect();
    for (k, rows) in missing_rows.iter().enumerate() {
        if !rows.is_empty() && rows.len() == n {
            return Err(ImputeError::FullyMissing(names[k].clone()));
        }
    }

    let mut targets: Vec<usize> = (0..indices.len()).filter(|&k| !missing_rows[k].is_empty()).collect();
    if cfg.visit_order == VisitOrder::MostMissingFirst {
        targets.sort_by(|&a, &b| missing_rows[b].len().cmp(&missing_rows[a].len()));
    }

    let mut current = initialize_missing(t, &names, cfg.seed)?;
    let mut chain_means = Vec::new();
    let mean_of = |table: &Table, k: usize| -> f64 {
        let col = indices[k];
        let vals: Vec<f64> = missing_rows[k]
            .iter()
            .map(|&r| match table.cell(r, col) {
                Cell::Number(v) => v,
                Cell::Category(i) => f64::from(i),
                Cell::Missing => unreachable!("imputed cells are filled"),
            })
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    for k in 0..indices.len() {
        if !missing_rows[k].is_empty() {
            chain_means.push(ChainMean { iteration: 0, column: names[k].clone(), mean_imputed: mean_of(&current, k) });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DONOR_STREAM);
    for iteration in 1..=cfg.iterations {
        for &k in &targets {
            let col = indices[k];
            let others: Vec<&str> = names.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, s)| s.as_str()).collect();
            let predictors = if others.is_empty() {
                Matrix::zeros(n, 0)
            } else {
                regression_design(&encode_and_scale(&current, &others)?)
            };
            let mut observed = vec![true; n];
            for &r in &missing_rows[k] {
                observed[r] = false;
            }
            match t.spec(col).kind {
                ColumnKind::Numeric => {
                    let target: Vec<f64> = (0..n).map(|r| current.number(r, col).expect("filled")).collect();
                    let filled = pmm_impute_variable(&predictors, &target, &observed, cfg.donor_pool, cfg.ridge, &mut rng)
                        .map_err(|e| match e {
                            ImputeError::TooFewObserved { observed, needed, .. } => {
                                ImputeError::TooFewObserved { column: names[k].clone(), observed, needed }
                            }
                            other => other,
                        })?;
                    for &r in &missing_rows[k] {
                        current.set_cell(r, col, Cell::Number(filled[r]));
                    }
                }
                ColumnKind::Categorical => {
                    let target: Vec<u32> = (0..n)
                        .map(|r| match current.cell(r, col) {
                            Cell::Category(i) => i,
                            _ => unreachable!("filled categorical"),
                        })
                        .collect();
                    let filled =
                        categorical_impute(&predictors, &target, &observed, t.spec(col).categories.len(), cfg.ridge)?;
                    for &r in &missing_rows[k] {
                        current.set_cell(r, col, Cell::Category(filled[r]));
                    }
                }
            }
            chain_means.push(ChainMean { iteration, column: names[k].clone(), mean_imputed: mean_of(&current, k) });
        }
    }

    let mut imputed_cells = Vec::new();
    for (k, rows) in missing_rows.iter().enumerate() {
        for &r in rows {
            imputed_cells.push(ImputedCell { row: r, column: names[k].clone(), value: current.cell(r, indices[k]) });
        }
    }
    Ok(MiceResult { completed: current, imputed_cells, chain_means })
}

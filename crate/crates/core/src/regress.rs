//! Ordinary and weighted least squares with an intercept, plus the six
//! recency weighting schemes used for per-sport medal forecasts.

use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::linalg::{self, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum RegressError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("need more observations than predictors (n = {n}, p = {p})")]
    TooFewObservations { n: usize, p: usize },
    #[error("weight {index} is not a positive finite number")]
    BadWeight { index: usize },
    #[error("non-finite value in the design or response")]
    NonFinite,
    #[error("rank-deficient design: {0} is linearly dependent on the preceding columns")]
    RankDeficient(DesignColumn),
}

/// A column of the design matrix `[1 | X]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignColumn {
    Intercept,
    Predictor(usize),
}

impl fmt::Display for DesignColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignColumn::Intercept => f.write_str("the intercept"),
            DesignColumn::Predictor(j) => write!(f, "predictor column {j}"),
        }
    }
}

/// A fitted linear model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    /// Intercept first, then one slope per predictor.
    pub coefficients: Vec<f64>,
    pub r2: f64,
    /// `None` when `n <= p + 1`; written as `"undefined"`.
    #[serde(serialize_with = "crate::report::serialize_undefined")]
    pub adjusted_r2: Option<f64>,
    pub n: usize,
    pub p: usize,
    pub residuals: Vec<f64>,
}

impl LinearFit {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.coefficients[1..]
    }
}

pub fn adjusted_r2(r2: f64, n: usize, p: usize) -> Option<f64> {
    (n > p + 1).then(|| 1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - p as f64 - 1.0))
}

/// Weighted least squares: minimizes `Σ wᵢ (yᵢ − b₀ − xᵢ·b)²` by solving
/// the normal equations with partial pivoting. R² is computed from the
/// weighted sums of squares around the weighted mean of `y`.
pub fn fit_wls(x: &Matrix, y: &[f64], w: &[f64]) -> Result<LinearFit, RegressError> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n || w.len() != n {
        return Err(RegressError::Dimension(format!("X has {n} rows, y has {}, w has {}", y.len(), w.len())));
    }
    if n <= p {
        return Err(RegressError::TooFewObservations { n, p });
    }
    if let Some(index) = w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(RegressError::BadWeight { index });
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(RegressError::NonFinite);
    }

    let (xtwx, xtwy) = linalg::normal_equations(x, y, Some(w), None);
    let coefficients = linalg::solve(&xtwx, &xtwy).map_err(|s| {
        RegressError::RankDeficient(if s.column == 0 { DesignColumn::Intercept } else { DesignColumn::Predictor(s.column - 1) })
    })?;
    let fitted = linalg::linear_predict(x, &coefficients);
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();

    let w_sum: f64 = w.iter().sum();
    let y_bar = y.iter().zip(w).map(|(yi, wi)| wi * yi).sum::<f64>() / w_sum;
    let sst: f64 = y.iter().zip(w).map(|(yi, wi)| wi * (yi - y_bar).powi(2)).sum();
    let sse: f64 = residuals.iter().zip(w).map(|(r, wi)| wi * r * r).sum();
    let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let exact = residuals.iter().all(|r| r.abs() <= 1e-10 * y_norm);
    let r2 = if sst == 0.0 {
        0.0
    } else if exact {
        1.0
    } else {
        (1.0 - sse / sst).min(1.0)
    };
    Ok(LinearFit { coefficients, r2, adjusted_r2: adjusted_r2(r2, n, p), n, p, residuals })
}

/// [`fit_wls`] with unit weights.
pub fn fit_ols(x: &Matrix, y: &[f64]) -> Result<LinearFit, RegressError> {
    fit_wls(x, y, &vec![1.0; y.len()])
}

pub fn predict(fit: &LinearFit, x_new: &Matrix) -> Result<Vec<f64>, RegressError> {
    if x_new.ncols() != fit.p {
        return Err(RegressError::Dimension(format!("model has {} predictors, input has {}", fit.p, x_new.ncols())));
    }
    Ok(linalg::linear_predict(x_new, &fit.coefficients))
}

/// Medal-count rounding for reports: nearest integer, floored at zero.
pub fn round_count(prediction: f64) -> u64 {
    if prediction.is_finite() && prediction > 0.0 {
        prediction.round() as u64
    } else {
        0
    }
}

/// Olympiad length in years.
const GAMES_GAP: f64 = 4.0;
const NEGLIGIBLE: f64 = 1e-6;

/// Observation weight as a function of the observation year, emphasizing
/// recent games.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightScheme {
    Uniform,
    /// `(year − 1892) / (max_year − 1892)`.
    Linear,
    /// `ratio^((max_year − year) / 4)`.
    Geometric { ratio: f64 },
    /// 1 before `from`, `high` from `from` on.
    Step { from: i32, high: f64 },
    /// 1 for the `games` most recent Olympiads, negligible before.
    LastGames { games: u32 },
}

impl WeightScheme {
    pub fn name(&self) -> String {
        match self {
            WeightScheme::Uniform => "uniform".into(),
            WeightScheme::Linear => "linear".into(),
            WeightScheme::Geometric { ratio } => format!("geometric-{ratio}"),
            WeightScheme::Step { from, .. } => format!("step-{from}"),
            WeightScheme::LastGames { games } => format!("last-{games}-games"),
        }
    }

    pub fn weight(&self, year: i32, max_year: i32) -> f64 {
        let (year, max_year) = (f64::from(year), f64::from(max_year));
        match *self {
            WeightScheme::Uniform => 1.0,
            WeightScheme::Linear => ((year - 1892.0) / (max_year - 1892.0)).max(NEGLIGIBLE),
            WeightScheme::Geometric { ratio } => ratio.powf((max_year - year) / GAMES_GAP),
            WeightScheme::Step { from, high } => {
                if year >= f64::from(from) {
                    high
                } else {
                    1.0
                }
            }
            WeightScheme::LastGames { games } => {
                if year > max_year - GAMES_GAP * f64::from(games) {
                    1.0
                } else {
                    NEGLIGIBLE
                }
            }
        }
    }

    pub fn weights(&self, years: &[i32], max_year: i32) -> Vec<f64> {
        years.iter().map(|&y| self.weight(y, max_year)).collect()
    }
}

impl Serialize for WeightScheme {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

/// The six scenarios, from no recency emphasis to almost only the last
/// five games.
pub fn weight_scenarios() -> Vec<WeightScheme> {
    vec![
        WeightScheme::Uniform,
        WeightScheme::Linear,
        WeightScheme::Geometric { ratio: 0.9 },
        WeightScheme::Geometric { ratio: 0.7 },
        WeightScheme::Step { from: 2000, high: 3.0 },
        WeightScheme::LastGames { games: 5 },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::column_vector(v)
    }

    #[test]
    fn perfect_line() {
        let fit = fit_ols(&col(&[0.0, 1.0, 2.0]), &[0.0, 1.0, 2.0]).unwrap();
        assert!(fit.intercept().abs() < 1e-12 && (fit.slopes()[0] - 1.0).abs() < 1e-12);
        assert_eq!(fit.r2, 1.0);
        assert_eq!(fit.adjusted_r2, Some(1.0));
    }

    #[test]
    fn hand_solved_weighted_example() {
        // Σw=6, Σwx=9, Σwx²=17, Σwy=19, Σwxy=34
        // [6 9; 9 17] b = [19; 34] -> det 21, b0 = (19·17 − 9·34)/21 = 17/21,
        // b1 = (6·34 − 9·19)/21 = 33/21
        let fit = fit_wls(&col(&[0.0, 1.0, 2.0]), &[1.0, 2.0, 4.0], &[1.0, 1.0, 4.0]).unwrap();
        assert!((fit.coefficients[0] - 17.0 / 21.0).abs() < 1e-10);
        assert!((fit.coefficients[1] - 33.0 / 21.0).abs() < 1e-10);
    }

    #[test]
    fn constant_response() {
        let fit = fit_ols(&col(&[1.0, 2.0, 3.0, 4.0]), &[5.0; 4]).unwrap();
        assert!(fit.slopes()[0].abs() < 1e-12);
        assert_eq!(fit.r2, 0.0);
    }

    #[test]
    fn exact_interpolation_has_undefined_adjusted() {
        let x = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]);
        let fit = fit_ols(&x, &[3.0, -1.0, 2.5]).unwrap();
        assert_eq!(fit.r2, 1.0);
        assert_eq!(fit.adjusted_r2, None);
        let json = serde_json::to_string(&fit).unwrap();
        assert!(json.contains("\"adjusted_r2\":\"undefined\""), "{json}");
    }

    #[test]
    fn rank_deficiency_names_column() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]]);
        let err = fit_ols(&x, &[1.0, 2.0, 2.0, 5.0]).unwrap_err();
        assert_eq!(err, RegressError::RankDeficient(DesignColumn::Predictor(1)));
        let constant = Matrix::from_rows(&[[1.0], [1.0], [1.0]]);
        assert_eq!(fit_ols(&constant, &[1.0, 2.0, 3.0]).unwrap_err(), RegressError::RankDeficient(DesignColumn::Predictor(0)));
    }

    #[test]
    fn input_validation() {
        assert!(matches!(fit_ols(&col(&[1.0]), &[1.0]), Err(RegressError::TooFewObservations { .. })));
        assert!(matches!(fit_wls(&col(&[1.0, 2.0]), &[1.0, 2.0], &[1.0, 0.0]), Err(RegressError::BadWeight { index: 1 })));
        assert!(matches!(fit_ols(&col(&[1.0, 2.0]), &[1.0]), Err(RegressError::Dimension(_))));
    }

    #[test]
    fn predictions_and_rounding() {
        let fit = fit_ols(&col(&[0.0, 1.0, 2.0]), &[0.0, 1.0, 2.0]).unwrap();
        assert!((predict(&fit, &col(&[5.0])).unwrap()[0] - 5.0).abs() < 1e-12);
        let flat = LinearFit { coefficients: vec![2.0, 0.0], r2: 0.0, adjusted_r2: None, n: 3, p: 1, residuals: vec![] };
        assert_eq!(predict(&flat, &col(&[-4.0, 100.0])).unwrap(), vec![2.0, 2.0]);
        assert!(predict(&flat, &Matrix::zeros(1, 2)).is_err());
        assert_eq!(round_count(6.6), 7);
        assert_eq!(round_count(-0.4), 0);
        assert_eq!(round_count(2.5), 3);
    }

    #[test]
    fn scenarios() {
        let s = weight_scenarios();
        assert_eq!(s.len(), 6);
        let names: Vec<String> = s.iter().map(WeightScheme::name).collect();
        assert_eq!(names, ["uniform", "linear", "geometric-0.9", "geometric-0.7", "step-2000", "last-5-games"]);
        assert_eq!(s[0].weight(1896, 2016), 1.0);
        assert_eq!(s[0].weight(2016, 2016), 1.0);
        assert!(s[1].weight(2016, 2016) > s[1].weight(1896, 2016) && s[1].weight(1896, 2016) > 0.0);
        assert!((s[2].weight(2012, 2016) - 0.9).abs() < 1e-15);
        assert_eq!(s[4].weight(1996, 2016), 1.0);
        assert_eq!(s[4].weight(2000, 2016), 3.0);
        assert_eq!(s[5].weight(2000, 2016), 1.0);
        assert_eq!(s[5].weight(1996, 2016), 1e-6);
        for scheme in &s {
            let mut prev = 0.0;
            for year in (1896..=2016).step_by(4) {
                let w = scheme.weight(year, 2016);
                assert!(w > 0.0 && w >= prev, "{} at {year}", scheme.name());
                prev = w;
            }
        }
    }
}

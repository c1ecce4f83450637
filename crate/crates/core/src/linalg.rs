//! Dense row-major matrices and a small Gaussian-elimination solver.
//!
//! Everything downstream (normal equations, kNN, tree splits) works on
//! [`Matrix`]; the solver is only ever asked for systems of a few dozen
//! unknowns, so no blocking or BLAS is involved.

use serde::{Deserialize, Serialize};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, data: vec![0.0; nrows * ncols] }
    }

    /// Builds a matrix from a flat row-major buffer.
    ///
    /// Panics if `data.len() != nrows * ncols`.
    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), nrows * ncols, "buffer length does not match shape");
        Self { nrows, ncols, data }
    }

    /// Builds a matrix from row vectors. All rows must have equal length;
    /// an empty slice gives a 0×0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { nrows: rows.len(), ncols, data }
    }

    /// Single-column matrix.
    pub fn column_vector(values: &[f64]) -> Self {
        Self { nrows: values.len(), ncols: 1, data: values.to_vec() }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.ncols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.ncols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.ncols..(row + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, col)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New matrix holding the given rows, in the given order (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.ncols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix { nrows: rows.len(), ncols: self.ncols, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Failure of [`solve`]: elimination hit a (numerically) zero pivot while
/// processing `column`, meaning that column is linearly dependent on the
/// columns before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular {
    pub column: usize,
}

/// Relative pivot threshold used by [`solve`].
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Solves `a · x = b` for square `a` by Gaussian elimination with partial
/// pivoting.
///
/// A pivot whose magnitude falls below `PIVOT_TOLERANCE` times the
/// original diagonal entry of its column (or a zero diagonal) is treated as
/// exact dependence of that column on the preceding ones. For the
/// symmetric positive semi-definite normal matrices this crate builds, the
/// ratio equals one minus the squared multiple correlation of the column
/// with its predecessors.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, Singular> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "solve expects a square matrix");
    assert_eq!(b.len(), n, "right-hand side length mismatch");

    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.push(b[i]);
            row
        })
        .collect();
    let scale: Vec<f64> = (0..n).map(|k| a.get(k, k).abs()).collect();

    for k in 0..n {
        let pivot_row = (k..n)
            .max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()).then(j.cmp(&i)))
            .expect("non-empty pivot range");
        let pivot = m[pivot_row][k];
        if scale[k] == 0.0 || pivot.abs() <= PIVOT_TOLERANCE * scale[k] || !pivot.is_finite() {
            return Err(Singular { column: k });
        }
        m.swap(k, pivot_row);
        let (upper, lower) = m.split_at_mut(k + 1);
        let pivot_vals = &upper[k];
        for row in lower.iter_mut() {
            let factor = row[k] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in k..=n {
                row[c] -= factor * pivot_vals[c];
            }
        }
    }

    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut acc = m[k][n];
        for c in k + 1..n {
            acc -= m[k][c] * x[c];
        }
        x[k] = acc / m[k][k];
    }
    Ok(x)
}

/// Weighted normal equations for a design with an implicit leading
/// intercept column: returns `(XᵀWX, XᵀWy)` where `X = [1 | predictors]`.
/// `rows` restricts the fit to a subset of predictor rows; `None` uses all.
pub fn normal_equations(
    predictors: &Matrix,
    y: &[f64],
    weights: Option<&[f64]>,
    rows: Option<&[usize]>,
) -> (Matrix, Vec<f64>) {
    let p = predictors.ncols() + 1;
    let mut xtx = Matrix::zeros(p, p);
    let mut xty = vec![0.0; p];
    let mut design = vec![0.0; p];
    let mut accumulate = |i: usize, yi: f64, wi: f64| {
        design[0] = 1.0;
        design[1..].copy_from_slice(predictors.row(i));
        for a in 0..p {
            let wa = wi * design[a];
            xty[a] += wa * yi;
            for (b, db) in design.iter().enumerate().skip(a) {
                xtx.data[a * p + b] += wa * db;
            }
        }
    };
    match rows {
        Some(rows) => {
            for (k, &i) in rows.iter().enumerate() {
                accumulate(i, y[k], weights.map_or(1.0, |w| w[k]));
            }
        }
        None => {
            for i in 0..predictors.nrows() {
                accumulate(i, y[i], weights.map_or(1.0, |w| w[i]));
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx.data[a * p + b] = xtx.data[b * p + a];
        }
    }
    (xtx, xty)
}

/// `intercept + row · slopes` for every row.
pub fn linear_predict(predictors: &Matrix, coefficients: &[f64]) -> Vec<f64> {
    predictors
        .rows()
        .map(|row| {
            coefficients[0]
                + row.iter().zip(&coefficients[1..]).map(|(x, b)| x * b).sum::<f64>()
        })
        .collect()
}

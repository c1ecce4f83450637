//! Column-typed tables with an explicit missingness mask, CSV ingestion,
//! missing-data pattern analysis, one-hot encoding and z-score scaling.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

/// Token written for MISSING cells when a table is serialized.
pub const MISSING_TOKEN: &str = "NA";

/// Medal labels and their class codes, best first.
pub const MEDAL_CODES: [(&str, u32); 4] =
    [("Gold", 1), ("Silver", 2), ("Bronze", 3), ("No medal", 4)];

#[derive(Debug, Error)]
pub enum TableError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },
    #[error("input has no header row")]
    MissingHeader,
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("column `{0}` not found")]
    UnknownColumn(String),
    #[error("column `{column}` is {actual}, expected {expected}")]
    WrongKind { column: String, expected: ColumnKind, actual: ColumnKind },
    #[error("line {line}: value `{value}` in numeric column `{column}` is not a finite number")]
    NotNumeric { line: u64, column: String, value: String },
    #[error("column `{column}` has duplicate category `{label}`")]
    DuplicateCategory { column: String, label: String },
    #[error("row {row}: expected {expected} cells, found {found}")]
    RowWidth { row: usize, expected: usize, found: usize },
    #[error("row {row}, column `{column}`: {reason}")]
    InvalidCell { row: usize, column: String, reason: String },
    #[error("row {row}, column `{column}` is missing")]
    MissingCell { row: usize, column: String },
    #[error("column `{column}`: unexpected medal label `{label}`")]
    UnknownMedal { column: String, label: String },
    #[error("duplicate join key {0:?} in auxiliary table")]
    DuplicateKey(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnKind::Numeric => f.write_str("numeric"),
            ColumnKind::Categorical => f.write_str("categorical"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Distinct labels in first-appearance order. Empty for numeric columns.
    pub categories: Vec<String>,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: ColumnKind::Numeric, categories: Vec::new() }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }

    pub fn category_index(&self, label: &str) -> Option<u32> {
        self.categories.iter().position(|c| c == label).map(|i| i as u32)
    }
}

/// One table cell. Categorical values are stored as indices into the
/// column's category list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Missing,
    Number(f64),
    Category(u32),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Vec<ColumnSpec>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    /// Validates and assembles a table.
    pub fn new(schema: Vec<ColumnSpec>, rows: Vec<Vec<Cell>>) -> Result<Self, TableError> {
        let mut seen = HashMap::new();
        for spec in &schema {
            if seen.insert(spec.name.as_str(), ()).is_some() {
                return Err(TableError::DuplicateColumn(spec.name.clone()));
            }
            let mut labels = HashMap::new();
            for label in &spec.categories {
                if labels.insert(label.as_str(), ()).is_some() {
                    return Err(TableError::DuplicateCategory {
                        column: spec.name.clone(),
                        label: label.clone(),
                    });
                }
            }
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(TableError::RowWidth { row: r, expected: schema.len(), found: row.len() });
            }
            for (cell, spec) in row.iter().zip(&schema) {
                let bad = |reason: &str| TableError::InvalidCell {
                    row: r,
                    column: spec.name.clone(),
                    reason: reason.to_string(),
                };
                match (spec.kind, cell) {
                    (_, Cell::Missing) => {}
                    (ColumnKind::Numeric, Cell::Number(v)) if v.is_finite() => {}
                    (ColumnKind::Numeric, Cell::Number(_)) => return Err(bad("non-finite number")),
                    (ColumnKind::Categorical, Cell::Category(i))
                        if (*i as usize) < spec.categories.len() => {}
                    (ColumnKind::Categorical, Cell::Category(_)) => {
                        return Err(bad("category index out of range"))
                    }
                    (ColumnKind::Numeric, Cell::Category(_)) => {
                        return Err(bad("category in numeric column"))
                    }
                    (ColumnKind::Categorical, Cell::Number(_)) => {
                        return Err(bad("number in categorical column"))
                    }
                }
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn schema(&self) -> &[ColumnSpec] {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.schema.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Result<usize, TableError> {
        self.schema
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))
    }

    pub fn spec(&self, col: usize) -> &ColumnSpec {
        &self.schema[col]
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.rows[row][col]
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.rows[row][col].is_missing()
    }

    pub fn number(&self, row: usize, col: usize) -> Option<f64> {
        match self.rows[row][col] {
            Cell::Number(v) => Some(v),
            _ => None,
        }
    }

    pub fn label(&self, row: usize, col: usize) -> Option<&str> {
        match self.rows[row][col] {
            Cell::Category(i) => Some(self.schema[col].categories[i as usize].as_str()),
            _ => None,
        }
    }

    /// Textual form of a cell as it would be written to CSV.
    pub fn render(&self, row: usize, col: usize) -> String {
        match self.rows[row][col] {
            Cell::Missing => MISSING_TOKEN.to_string(),
            Cell::Number(v) => format!("{v}"),
            Cell::Category(i) => self.schema[col].categories[i as usize].clone(),
        }
    }

    pub fn missing_count(&self, col: usize) -> usize {
        self.rows.iter().filter(|r| r[col].is_missing()).count()
    }

    pub fn total_missing(&self) -> usize {
        self.rows.iter().flatten().filter(|c| c.is_missing()).count()
    }

    /// Observed numeric values of a column, in row order.
    pub fn observed_numbers(&self, col: usize) -> Vec<f64> {
        self.rows.iter().filter_map(|r| match r[col] {
            Cell::Number(v) => Some(v),
            _ => None,
        }).collect()
    }

    /// New table with the given rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table { schema: self.schema.clone(), rows: rows.iter().map(|&r| self.rows[r].clone()).collect() }
    }

    /// Keeps rows for which `keep(row_index)` is true.
    pub fn filter_rows(&self, mut keep: impl FnMut(usize) -> bool) -> Table {
        let rows = (0..self.n_rows()).filter(|&r| keep(r)).map(|r| self.rows[r].clone()).collect();
        Table { schema: self.schema.clone(), rows }
    }

    /// Overwrites one cell. The caller guarantees the cell matches the column kind.
    pub(crate) fn set_cell(&mut self, row: usize, col: usize, cell: Cell) {
        debug_assert!(match (self.schema[col].kind, cell) {
            (_, Cell::Missing) => true,
            (ColumnKind::Numeric, Cell::Number(v)) => v.is_finite(),
            (ColumnKind::Categorical, Cell::Category(i)) => (i as usize) < self.schema[col].categories.len(),
            _ => false,
        });
        self.rows[row][col] = cell;
    }

    /// Serializes as CSV with a header row; MISSING cells become `NA`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TableError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(self.schema.iter().map(|c| c.name.as_str()))?;
        let mut record = Vec::with_capacity(self.n_cols());
        for r in 0..self.n_rows() {
            record.clear();
            record.extend((0..self.n_cols()).map(|c| self.render(r, c)));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| TableError::Io { path: "<writer>".into(), source: e })?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("table cells are UTF-8")
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<(), TableError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        self.write_csv(io::BufWriter::new(file))
    }
}

fn io_err(path: &Path, source: io::Error) -> TableError {
    TableError::Io { path: path.display().to_string(), source }
}

/// Controls CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Field values read as MISSING.
    pub missing_tokens: Vec<String>,
    /// Forces a column's kind instead of inferring it.
    pub kind_overrides: BTreeMap<String, ColumnKind>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { missing_tokens: vec![String::new(), MISSING_TOKEN.to_string()], kind_overrides: BTreeMap::new() }
    }
}

/// Reads a CSV file; see [`read_csv`].
pub fn ingest_csv(path: impl AsRef<Path>, options: &IngestOptions) -> Result<Table, TableError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_csv(io::BufReader::new(file), options)
}

/// Parses CSV text. The first record is the header. Fields matching one of
/// `missing_tokens` become MISSING; a column whose observed fields all
/// parse as finite reals is numeric, anything else is categorical with
/// categories in first-appearance order.
pub fn read_csv<R: Read>(reader: R, options: &IngestOptions) -> Result<Table, TableError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(TableError::MissingHeader),
    };
    let names: Vec<String> = header.iter().map(str::to_string).collect();
    for name in options.kind_overrides.keys() {
        if !names.contains(name) {
            return Err(TableError::UnknownColumn(name.clone()));
        }
    }

    let mut raw: Vec<(u64, Vec<Option<String>>)> = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            return Err(TableError::RaggedRow { line, expected: names.len(), found: record.len() });
        }
        let fields = record
            .iter()
            .map(|f| if options.missing_tokens.iter().any(|t| t == f) { None } else { Some(f.to_string()) })
            .collect();
        raw.push((line, fields));
    }

    let parse_num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite());
    let mut schema = Vec::with_capacity(names.len());
    for (c, name) in names.iter().enumerate() {
        let kind = options.kind_overrides.get(name).copied().unwrap_or_else(|| {
            let all_numeric = raw.iter().all(|(_, f)| f[c].as_deref().is_none_or(|s| parse_num(s).is_some()));
            if all_numeric { ColumnKind::Numeric } else { ColumnKind::Categorical }
        });
        let mut spec = ColumnSpec { name: name.clone(), kind, categories: Vec::new() };
        if kind == ColumnKind::Categorical {
            let mut seen = HashMap::new();
            for (_, fields) in &raw {
                if let Some(label) = &fields[c] {
                    if !seen.contains_key(label.as_str()) {
                        seen.insert(label.as_str(), ());
                        spec.categories.push(label.clone());
                    }
                }
            }
        }
        schema.push(spec);
    }

    let lookup: Vec<HashMap<&str, u32>> = schema
        .iter()
        .map(|s| s.categories.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect())
        .collect();
    let mut rows = Vec::with_capacity(raw.len());
    for (line, fields) in &raw {
        let mut row = Vec::with_capacity(names.len());
        for (c, field) in fields.iter().enumerate() {
            let cell = match field {
                None => Cell::Missing,
                Some(s) => match schema[c].kind {
                    ColumnKind::Numeric => Cell::Number(parse_num(s).ok_or_else(|| TableError::NotNumeric {
                        line: *line,
                        column: names[c].clone(),
                        value: s.clone(),
                    })?),
                    ColumnKind::Categorical => Cell::Category(lookup[c][s.as_str()]),
                },
            };
            row.push(cell);
        }
        rows.push(row);
    }
    drop(lookup);
    Table::new(schema, rows)
}

/// Replaces every MISSING cell of a categorical column with `label`,
/// appending the label to the column's categories if needed.
pub fn recode_missing_label(t: &Table, column: &str, label: &str) -> Result<Table, TableError> {
    let col = t.column_index(column)?;
    let spec = t.spec(col);
    if spec.kind != ColumnKind::Categorical {
        return Err(TableError::WrongKind {
            column: column.to_string(),
            expected: ColumnKind::Categorical,
            actual: spec.kind,
        });
    }
    if t.missing_count(col) == 0 {
        return Ok(t.clone());
    }
    let mut out = t.clone();
    let idx = match spec.category_index(label) {
        Some(i) => i,
        None => {
            out.schema[col].categories.push(label.to_string());
            (out.schema[col].categories.len() - 1) as u32
        }
    };
    for row in &mut out.rows {
        if row[col].is_missing() {
            row[col] = Cell::Category(idx);
        }
    }
    Ok(out)
}

/// One distinct observed/missing mask and the number of rows showing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MissingnessPattern {
    /// `true` where the column is observed.
    pub mask: Vec<bool>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MissingnessSummary {
    pub columns: Vec<String>,
    /// Sorted by descending count, then mask.
    pub patterns: Vec<MissingnessPattern>,
    pub column_missing: Vec<usize>,
}

impl MissingnessSummary {
    /// CSV with one row per pattern: `count` then one 0/1 column per
    /// table column (1 = observed), plus a final `n_missing` column.
    pub fn patterns_csv(&self) -> String {
        let mut out = String::from("count");
        for c in &self.columns {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push_str(",n_missing\n");
        for p in &self.patterns {
            out.push_str(&p.count.to_string());
            for &m in &p.mask {
                out.push_str(if m { ",1" } else { ",0" });
            }
            out.push_str(&format!(",{}\n", p.mask.iter().filter(|m| !**m).count()));
        }
        out
    }

    /// CSV `(column, missing)`.
    pub fn column_missing_csv(&self) -> String {
        let mut out = String::from("column,missing\n");
        for (c, n) in self.columns.iter().zip(&self.column_missing) {
            out.push_str(&format!("{},{}\n", csv_field(c), n));
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Tabulates the distinct missingness masks of a table.
pub fn missingness_patterns(t: &Table) -> MissingnessSummary {
    let mut counts: BTreeMap<Vec<bool>, usize> = BTreeMap::new();
    let mut column_missing = vec![0; t.n_cols()];
    for row in t.rows() {
        let mask: Vec<bool> = row.iter().map(|c| !c.is_missing()).collect();
        for (c, observed) in mask.iter().enumerate() {
            if !observed {
                column_missing[c] += 1;
            }
        }
        *counts.entry(mask).or_insert(0) += 1;
    }
    let mut patterns: Vec<MissingnessPattern> =
        counts.into_iter().map(|(mask, count)| MissingnessPattern { mask, count }).collect();
    patterns.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.mask.cmp(&b.mask)));
    MissingnessSummary {
        columns: t.schema().iter().map(|c| c.name.clone()).collect(),
        patterns,
        column_missing,
    }
}

/// Z-score parameters of one numeric column. `stddev` is 1 for
/// zero-variance columns, whose scaled values are all zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub stddev: f64,
}

/// Where one source column landed in the encoded matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedGroup {
    pub source: String,
    pub start: usize,
    pub width: usize,
    /// Present for numeric sources.
    pub scaling: Option<Scaling>,
}

/// Dense numeric design matrix produced by [`encode_and_scale`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedMatrix {
    pub values: Matrix,
    pub column_names: Vec<String>,
    pub groups: Vec<EncodedGroup>,
}

impl EncodedMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Scaling means of numeric source columns, in column order.
    pub fn means(&self) -> Vec<f64> {
        self.groups.iter().filter_map(|g| g.scaling.map(|s| s.mean)).collect()
    }

    pub fn stddevs(&self) -> Vec<f64> {
        self.groups.iter().filter_map(|g| g.scaling.map(|s| s.stddev)).collect()
    }
}

/// Sample mean and (n−1) standard deviation with the zero-variance sentinel.
pub fn z_scaling(values: &[f64]) -> Scaling {
    let n = values.len();
    if n == 0 {
        return Scaling { mean: 0.0, stddev: 1.0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Scaling { mean, stddev: 1.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let stddev = var.sqrt();
    if stddev > 0.0 && stddev.is_finite() {
        Scaling { mean, stddev }
    } else {
        Scaling { mean, stddev: 1.0 }
    }
}

/// One-hot encodes categorical columns (one indicator per category, none
/// dropped) and z-scores numeric columns.
pub fn encode_and_scale<S: AsRef<str>>(t: &Table, columns: &[S]) -> Result<EncodedMatrix, TableError> {
    let indices = columns.iter().map(|c| t.column_index(c.as_ref())).collect::<Result<Vec<_>, _>>()?;
    for &c in &indices {
        if let Some(r) = (0..t.n_rows()).find(|&r| t.is_missing(r, c)) {
            return Err(TableError::MissingCell { row: r, column: t.spec(c).name.clone() });
        }
    }

    let mut groups = Vec::with_capacity(indices.len());
    let mut degenerate = Vec::with_capacity(indices.len());
    let mut column_names = Vec::new();
    for &c in &indices {
        let spec = t.spec(c);
        let start = column_names.len();
        match spec.kind {
            ColumnKind::Numeric => {
                column_names.push(spec.name.clone());
                let raw_values = t.observed_numbers(c);
                let scaling = z_scaling(&raw_values);
                let constant = raw_values.len() < 2 || raw_values.iter().all(|v| *v == raw_values[0]);
                degenerate.push(constant);
                groups.push(EncodedGroup {
                    source: spec.name.clone(),
                    start,
                    width: 1,
                    scaling: Some(if constant { Scaling { mean: scaling.mean, stddev: 1.0 } } else { scaling }),
                });
            }
            ColumnKind::Categorical => {
                column_names.extend(spec.categories.iter().map(|l| format!("{}={}", spec.name, l)));
                degenerate.push(false);
                groups.push(EncodedGroup { source: spec.name.clone(), start, width: spec.categories.len(), scaling: None });
            }
        }
    }

    let width = column_names.len();
    let mut values = Matrix::zeros(t.n_rows(), width);
    for ((g, &c), &constant) in groups.iter().zip(&indices).zip(&degenerate) {
        for r in 0..t.n_rows() {
            match t.cell(r, c) {
                Cell::Number(v) => {
                    let s = g.scaling.expect("numeric group has scaling");
                    let z = if constant { 0.0 } else { (v - s.mean) / s.stddev };
                    values.set(r, g.start, z);
                }
                Cell::Category(i) => values.set(r, g.start + i as usize, 1.0),
                Cell::Missing => unreachable!("checked above"),
            }
        }
    }
    Ok(EncodedMatrix { values, column_names, groups })
}

/// Replaces a medal label column by its numeric class codes
/// (Gold 1, Silver 2, Bronze 3, No medal 4). MISSING stays MISSING.
pub fn encode_medals(t: &Table, column: &str) -> Result<Table, TableError> {
    let col = t.column_index(column)?;
    let spec = t.spec(col);
    if spec.kind != ColumnKind::Categorical {
        return Err(TableError::WrongKind {
            column: column.to_string(),
            expected: ColumnKind::Categorical,
            actual: spec.kind,
        });
    }
    let codes = spec
        .categories
        .iter()
        .map(|label| {
            medal_code(label).ok_or_else(|| TableError::UnknownMedal { column: column.to_string(), label: label.clone() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = t.clone();
    out.schema[col] = ColumnSpec::numeric(column);
    for row in &mut out.rows {
        if let Cell::Category(i) = row[col] {
            row[col] = Cell::Number(codes[i as usize] as f64);
        }
    }
    Ok(out)
}

pub fn medal_code(label: &str) -> Option<u32> {
    MEDAL_CODES.iter().find(|(l, _)| *l == label).map(|(_, c)| *c)
}

pub fn medal_label(code: u32) -> Option<&'static str> {
    MEDAL_CODES.iter().find(|(_, c)| *c == code).map(|(l, _)| *l)
}

/// Left join: appends the non-key columns of `aux` to `t`, matching rows on
/// the rendered text of the key columns. Unmatched rows (and rows with a
/// MISSING key) get MISSING in the appended columns.
pub fn left_join<S: AsRef<str>>(t: &Table, aux: &Table, keys: &[S]) -> Result<Table, TableError> {
    let left_keys = keys.iter().map(|k| t.column_index(k.as_ref())).collect::<Result<Vec<_>, _>>()?;
    let right_keys = keys.iter().map(|k| aux.column_index(k.as_ref())).collect::<Result<Vec<_>, _>>()?;
    let extra: Vec<usize> = (0..aux.n_cols()).filter(|c| !right_keys.contains(c)).collect();
    for &c in &extra {
        if t.column_index(&aux.spec(c).name).is_ok() {
            return Err(TableError::DuplicateColumn(aux.spec(c).name.clone()));
        }
    }

    let mut index: HashMap<Vec<String>, usize> = HashMap::new();
    for r in 0..aux.n_rows() {
        if right_keys.iter().any(|&c| aux.is_missing(r, c)) {
            continue;
        }
        let key: Vec<String> = right_keys.iter().map(|&c| aux.render(r, c)).collect();
        if index.insert(key.clone(), r).is_some() {
            return Err(TableError::DuplicateKey(key));
        }
    }

    let mut schema = t.schema.clone();
    schema.extend(extra.iter().map(|&c| aux.spec(c).clone()));
    let rows = (0..t.n_rows())
        .map(|r| {
            let mut row = t.rows[r].clone();
            let hit = if left_keys.iter().any(|&c| t.is_missing(r, c)) {
                None
            } else {
                let key: Vec<String> = left_keys.iter().map(|&c| t.render(r, c)).collect();
                index.get(&key).copied()
            };
            row.extend(extra.iter().map(|&c| hit.map_or(Cell::Missing, |ar| aux.cell(ar, c))));
            row
        })
        .collect();
    Table::new(schema, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Table, TableError> {
        read_csv(text.as_bytes(), &IngestOptions::default())
    }

    #[test]
    fn ingest_infers_kinds_and_missing() {
        let t = parse("a,b\n1,x\n,y\n").unwrap();
        assert_eq!(t.spec(0).kind, ColumnKind::Numeric);
        assert_eq!(t.spec(1).kind, ColumnKind::Categorical);
        assert_eq!(t.spec(1).categories, vec!["x", "y"]);
        assert_eq!(t.cell(0, 0), Cell::Number(1.0));
        assert!(t.is_missing(1, 0));
        assert_eq!(t.label(1, 1), Some("y"));
    }

    #[test]
    fn header_only() {
        let t = parse("a,b\n").unwrap();
        assert_eq!(t.n_rows(), 0);
        assert_eq!(t.n_cols(), 2);
    }

    #[test]
    fn ragged_row_names_line() {
        let err = parse("a,b\n1,2,3\n").unwrap_err();
        assert!(matches!(err, TableError::RaggedRow { line: 2, expected: 2, found: 3 }), "{err}");
        let err = parse("a,b\n1,2\n3\n").unwrap_err();
        assert!(matches!(err, TableError::RaggedRow { line: 3, .. }));
    }

    #[test]
    fn na_token_and_quotes_and_crlf() {
        let t = parse("name,v\r\n\"Smith, J\",NA\r\n\"say \"\"hi\"\"\",2\r\n").unwrap();
        assert_eq!(t.label(0, 0), Some("Smith, J"));
        assert_eq!(t.label(1, 0), Some("say \"hi\""));
        assert!(t.is_missing(0, 1));
        let back = parse(&t.to_csv_string()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn kind_override() {
        let mut opts = IngestOptions::default();
        opts.kind_overrides.insert("code".into(), ColumnKind::Categorical);
        let t = read_csv("code\n10\n20\n10\n".as_bytes(), &opts).unwrap();
        assert_eq!(t.spec(0).categories, vec!["10", "20"]);
        let mut opts = IngestOptions::default();
        opts.kind_overrides.insert("x".into(), ColumnKind::Numeric);
        let err = read_csv("x\n1\nabc\n".as_bytes(), &opts).unwrap_err();
        assert!(matches!(err, TableError::NotNumeric { line: 3, .. }));
    }

    #[test]
    fn non_finite_text_is_categorical() {
        let t = parse("x\n1\ninf\n").unwrap();
        assert_eq!(t.spec(0).kind, ColumnKind::Categorical);
    }

    #[test]
    fn recode_no_medal() {
        let t = parse("medal,h\nGold,1\n,2\nNA,3\n,4\nSilver,5\n").unwrap();
        let out = recode_missing_label(&t, "medal", "No medal").unwrap();
        assert_eq!(out.missing_count(0), 0);
        let n = (0..out.n_rows()).filter(|&r| out.label(r, 0) == Some("No medal")).count();
        assert_eq!(n, 3);
        assert_eq!(out.spec(0).categories, vec!["Gold", "Silver", "No medal"]);
        for r in 0..t.n_rows() {
            assert_eq!(out.cell(r, 1), t.cell(r, 1));
        }
    }

    #[test]
    fn recode_identity_and_errors() {
        let t = parse("medal,h\nGold,1\n").unwrap();
        assert_eq!(recode_missing_label(&t, "medal", "No medal").unwrap(), t);
        assert!(matches!(recode_missing_label(&t, "h", "x"), Err(TableError::WrongKind { .. })));
        assert!(matches!(recode_missing_label(&t, "zz", "x"), Err(TableError::UnknownColumn(_))));
    }

    #[test]
    fn patterns_example() {
        let t = parse("a,b\n1,2\n3,\n4,\n").unwrap();
        let s = missingness_patterns(&t);
        assert_eq!(
            s.patterns,
            vec![
                MissingnessPattern { mask: vec![true, false], count: 2 },
                MissingnessPattern { mask: vec![true, true], count: 1 },
            ]
        );
        assert_eq!(s.column_missing, vec![0, 2]);
        assert!(s.patterns_csv().starts_with("count,a,b,n_missing\n2,1,0,1\n"));
    }

    #[test]
    fn fully_observed_single_pattern() {
        let t = parse("a,b\n1,2\n3,4\n").unwrap();
        let s = missingness_patterns(&t);
        assert_eq!(s.patterns, vec![MissingnessPattern { mask: vec![true, true], count: 2 }]);
    }

    #[test]
    fn large_missing_total_is_tallied() {
        // 114,900 missing cells spread over three numeric columns
        let n = 60_000;
        let schema = vec![ColumnSpec::numeric("Age"), ColumnSpec::numeric("Height"), ColumnSpec::numeric("Weight")];
        let rows = (0..n)
            .map(|r| {
                let age = if r < 9_000 { Cell::Missing } else { Cell::Number(25.0) };
                let height = if r < 50_000 { Cell::Missing } else { Cell::Number(180.0) };
                let weight = if r >= 4_100 { Cell::Missing } else { Cell::Number(70.0) };
                vec![age, height, weight]
            })
            .collect();
        let t = Table::new(schema, rows).unwrap();
        let s = missingness_patterns(&t);
        assert_eq!(s.column_missing.iter().sum::<usize>(), 114_900);
        assert_eq!(s.patterns.iter().map(|p| p.count).sum::<usize>(), n);
    }

    #[test]
    fn encode_column_count() {
        let t = parse("x,y,z,c,d\n1,2,3,a,p\n2,3,1,b,q\n3,1,2,c,p\n").unwrap();
        let e = encode_and_scale(&t, &["x", "y", "z", "c", "d"]).unwrap();
        assert_eq!(e.ncols(), 8);
        assert_eq!(e.column_names[3], "c=a");
        for r in 0..3 {
            assert_eq!(e.values.row(r)[3..6].iter().sum::<f64>(), 1.0);
            assert_eq!(e.values.row(r)[6..8].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn z_score_hand_values() {
        // mean 4, sample sd 2 -> {-1, 0, 1}; population sd would give ±1.2247
        let t = parse("v\n2\n4\n6\n").unwrap();
        let e = encode_and_scale(&t, &["v"]).unwrap();
        let col = e.values.column(0);
        assert!((col[0] + 1.0).abs() < 1e-12 && col[1].abs() < 1e-12 && (col[2] - 1.0).abs() < 1e-12);
        assert_eq!(e.means(), vec![4.0]);
        assert_eq!(e.stddevs(), vec![2.0]);
    }

    #[test]
    fn zero_variance_column() {
        let t = parse("v\n3\n3\n3\n").unwrap();
        let e = encode_and_scale(&t, &["v"]).unwrap();
        assert!(e.values.column(0).iter().all(|v| *v == 0.0));
        assert_eq!(e.stddevs(), vec![1.0]);
    }

    #[test]
    fn encode_rejects_missing() {
        let t = parse("a,b\n1,2\n,3\n").unwrap();
        let err = encode_and_scale(&t, &["b", "a"]).unwrap_err();
        assert!(matches!(err, TableError::MissingCell { row: 1, ref column } if column == "a"));
    }

    #[test]
    fn medals() {
        let t = parse("m\nGold\nNo medal\nBronze\n").unwrap();
        let e = encode_medals(&t, "m").unwrap();
        assert_eq!(e.observed_numbers(0), vec![1.0, 4.0, 3.0]);
        let empty = parse("m\n").unwrap();
        let e = encode_medals(&recode_to_cat(&empty), "m").unwrap();
        assert_eq!(e.n_rows(), 0);
        let bad = parse("m\nGold\nPlatinum\n").unwrap();
        assert!(matches!(encode_medals(&bad, "m"), Err(TableError::UnknownMedal { .. })));
    }

    fn recode_to_cat(t: &Table) -> Table {
        let mut opts = IngestOptions::default();
        opts.kind_overrides.insert("m".into(), ColumnKind::Categorical);
        read_csv(t.to_csv_string().as_bytes(), &opts).unwrap()
    }

    #[test]
    fn join_appends_and_marks_unmatched() {
        let t = parse("Year,NOC,x\n2012,USA,1\n2012,GBR,2\n2016,USA,3\n").unwrap();
        let aux = parse("NOC,Year,GDP\nUSA,2012,16.2\nGBR,2012,2.7\n").unwrap();
        let j = left_join(&t, &aux, &["Year", "NOC"]).unwrap();
        assert_eq!(j.column_names(), vec!["Year", "NOC", "x", "GDP"]);
        assert_eq!(j.number(0, 3), Some(16.2));
        assert_eq!(j.number(1, 3), Some(2.7));
        assert!(j.is_missing(2, 3));
        let dup = parse("NOC,Year,GDP\nUSA,2012,1\nUSA,2012,2\n").unwrap();
        assert!(matches!(left_join(&t, &dup, &["Year", "NOC"]), Err(TableError::DuplicateKey(_))));
    }
}

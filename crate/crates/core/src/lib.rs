//! Context-driven data mining toolkit.
//!
//! The crate covers one lifecycle: clean and wrangle a tabular dataset,
//! join auxiliary context columns, impute missing values with chained
//! equations and predictive mean matching, score rows with the Local
//! Outlier Factor, fit recency-weighted regressions and random forests,
//! score fan sentiment into a per-team coefficient, and evaluate the
//! results with confusion matrices and fit statistics. [`pipeline::run`]
//! drives all of it from a single TOML configuration.

pub mod chart;
pub mod forest;
pub mod impute;
pub mod linalg;
pub mod metrics;
pub mod outlier;
pub mod pipeline;
pub mod regress;
pub mod report;
pub mod sentiment;
pub mod tabular;

pub use linalg::Matrix;
pub use tabular::{Cell, ColumnKind, ColumnSpec, EncodedMatrix, Table};

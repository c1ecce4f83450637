//! Configuration-driven orchestration of the five lifecycle steps:
//! clean/wrangle → context injection → impute/outliers → model → evaluate.
//!
//! Every step writes its artifacts under `<output_dir>/<step>/`. Files are
//! first written with a `.partial` suffix and renamed only once the whole
//! step succeeded, so a failed step leaves its partial output visible.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::chart::{bar_chart_svg, BarPair};
use crate::forest::{train_forest, ForestConfig, ForestError};
use crate::impute::{mice_impute, ImputeError, MiceConfig, VisitOrder};
use crate::linalg::Matrix;
use crate::metrics::{confusion_matrix, MetricsError, MetricsReport};
use crate::outlier::{lof_scores, top_outliers, LofConfig, OutlierError};
use crate::regress::{fit_ols, fit_wls, predict, round_count, weight_scenarios, LinearFit, RegressError, WeightScheme};
use crate::report::{sha256_hex, UNDEFINED};
use crate::sentiment::{
    coefficients_csv, countries_csv, country_aggregate, load_corpus, rank_teams, score_corpus, team_coefficients,
    Lexicon, SentimentError,
};
use crate::tabular::{
    csv_field, encode_and_scale, ingest_csv, left_join, medal_code, missingness_patterns, recode_missing_label,
    Cell, ColumnKind, IngestOptions, Table, TableError, MEDAL_CODES,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot read config {path}: {source}")]
    ConfigIo { path: String, source: io::Error },
    #[error("cannot parse config: {0}")]
    ConfigParse(#[from] toml::de::Error),
    #[error("cannot read run report {path}: {reason}")]
    Report { path: String, reason: String },
    #[error("step `{step}` failed: {source}")]
    Step {
        step: &'static str,
        #[source]
        source: StepError,
    },
}

/// Cause of a failed step.
#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Impute(#[from] ImputeError),
    #[error(transparent)]
    Outlier(#[from] OutlierError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sentiment(#[from] SentimentError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Data(String),
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Required when imputation or classification is enabled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub inputs: Inputs,
    pub clean: CleanSection,
    pub context: ContextSection,
    pub impute: ImputeSection,
    pub outliers: OutlierSection,
    pub regress: RegressSection,
    pub classify: ClassifySection,
    pub sentiment: SentimentSection,
    /// Directory relative input and output paths are resolved against
    /// (the config file's directory when loaded from disk).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tweets: Option<PathBuf>,
    /// Falls back to the built-in lexicon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanSection {
    pub missing_tokens: Vec<String>,
    pub kinds: BTreeMap<String, ColumnKind>,
    /// Keep only these columns (all when empty).
    pub columns: Vec<String>,
    pub exclude: Vec<ExcludeRule>,
    pub recode_missing: Vec<RecodeRule>,
}

impl Default for CleanSection {
    fn default() -> Self {
        let defaults = IngestOptions::default();
        Self {
            missing_tokens: defaults.missing_tokens,
            kinds: BTreeMap::new(),
            columns: Vec::new(),
            exclude: Vec::new(),
            recode_missing: Vec::new(),
        }
    }
}

/// Drops rows whose `column` renders as `value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcludeRule {
    pub column: String,
    pub value: String,
}

/// Turns MISSING in a categorical column into an explicit label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecodeRule {
    pub column: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextSection {
    pub joins: Vec<JoinSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinSpec {
    pub path: PathBuf,
    pub keys: Vec<String>,
    #[serde(default)]
    pub kinds: BTreeMap<String, ColumnKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeSection {
    pub enabled: bool,
    pub columns: Vec<String>,
    pub iterations: usize,
    pub donor_pool: usize,
    pub visit_order: VisitOrder,
    pub ridge: f64,
}

impl Default for ImputeSection {
    fn default() -> Self {
        let m = MiceConfig::default();
        Self {
            enabled: false,
            columns: Vec::new(),
            iterations: m.iterations,
            donor_pool: m.donor_pool,
            visit_order: m.visit_order,
            ridge: m.ridge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierSection {
    pub enabled: bool,
    pub columns: Vec<String>,
    pub k: usize,
    /// Rows flagged (highest LOF first).
    pub top: usize,
    /// Remove flagged rows before modeling instead of only reporting them.
    pub filter: bool,
}

impl Default for OutlierSection {
    fn default() -> Self {
        Self { enabled: false, columns: Vec::new(), k: LofConfig::default().k, top: 20, filter: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressSection {
    pub enabled: bool,
    pub year_column: String,
    pub country_column: String,
    pub sport_column: String,
    pub medal_column: String,
    pub no_medal_label: String,
    /// Forecast year; defaults to the latest year in the data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_year: Option<i32>,
    /// Restrict the report to these countries (all when empty).
    pub countries: Vec<String>,
    /// Minimum number of training games per (country, sport).
    pub min_games: usize,
    /// With a country, the chart shows its sports; otherwise the
    /// `chart_top` countries by actual medal total.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chart_country: Option<String>,
    pub chart_top: usize,
    pub chart_scheme: String,
}

impl Default for RegressSection {
    fn default() -> Self {
        Self {
            enabled: false,
            year_column: "Year".into(),
            country_column: "NOC".into(),
            sport_column: "Sport".into(),
            medal_column: "Medal".into(),
            no_medal_label: "No medal".into(),
            holdout_year: None,
            countries: Vec::new(),
            min_games: 3,
            chart_country: None,
            chart_top: 10,
            chart_scheme: "geometric-0.9".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub enabled: bool,
    pub features: Vec<String>,
    pub label_column: String,
    pub year_column: String,
    /// Train on earlier years and test on this one; without it the model
    /// is evaluated on its training rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_year: Option<i32>,
    pub n_trees: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtry: Option<usize>,
}

impl Default for ClassifySection {
    fn default() -> Self {
        let f = ForestConfig::default();
        Self {
            enabled: false,
            features: Vec::new(),
            label_column: "Medal".into(),
            year_column: "Year".into(),
            test_year: None,
            n_trees: f.n_trees,
            max_depth: f.max_depth,
            min_leaf: f.min_leaf,
            mtry: f.mtry,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SentimentSection {
    pub enabled: bool,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| PipelineError::ConfigIo { path: path.display().to_string(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    fn table_steps_enabled(&self) -> bool {
        self.impute.enabled || self.outliers.enabled || self.regress.enabled || self.classify.enabled
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.table_steps_enabled() && self.inputs.dataset.is_none() {
            return bad("inputs.dataset is required by impute, outliers, regress and classify");
        }
        if self.sentiment.enabled && self.inputs.tweets.is_none() {
            return bad("inputs.tweets is required by sentiment");
        }
        if (self.impute.enabled || self.classify.enabled) && self.seed.is_none() {
            return bad("seed is required when impute or classify is enabled");
        }
        if self.seed.is_some_and(|s| i64::try_from(s).is_err()) {
            return bad("seed must be at most 9223372036854775807 (TOML integers are 64-bit signed)");
        }
        if self.impute.enabled && self.impute.columns.is_empty() {
            return bad("impute.columns is empty");
        }
        if self.outliers.enabled && self.outliers.columns.is_empty() {
            return bad("outliers.columns is empty");
        }
        if self.classify.enabled && self.classify.features.is_empty() {
            return bad("classify.features is empty");
        }
        if self.regress.enabled && scheme_by_name(&self.regress.chart_scheme).is_none() {
            return Err(PipelineError::Config(format!("unknown weight scheme `{}`", self.regress.chart_scheme)));
        }
        for j in &self.context.joins {
            if j.keys.is_empty() {
                return Err(PipelineError::Config(format!("join {} has no keys", j.path.display())));
            }
        }
        Ok(())
    }

    fn mice_config(&self) -> MiceConfig {
        MiceConfig {
            iterations: self.impute.iterations,
            donor_pool: self.impute.donor_pool,
            seed: self.seed.unwrap_or_default(),
            visit_order: self.impute.visit_order,
            ridge: self.impute.ridge,
        }
    }

    fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.classify.n_trees,
            max_depth: self.classify.max_depth,
            min_leaf: self.classify.min_leaf,
            mtry: self.classify.mtry,
            seed: self.seed.unwrap_or_default(),
        }
    }
}

fn optional_json(value: Option<f64>) -> Value {
    match value {
        Some(v) if v.is_finite() => json!(v),
        _ => json!(UNDEFINED),
    }
}

fn scheme_by_name(name: &str) -> Option<WeightScheme> {
    weight_scenarios().into_iter().find(|s| s.name() == name)
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub name: &'static str,
    pub seconds: f64,
    pub rows_in: Option<usize>,
    pub rows_out: Option<usize>,
    pub artifacts: Vec<Artifact>,
    pub summary: Value,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Evaluation {
    pub metrics_json: Option<String>,
    pub coefficients_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunReport {
    pub seed: Option<u64>,
    pub steps: Vec<StepReport>,
    pub evaluation: Evaluation,
}

impl RunReport {
    pub fn step(&self, name: &str) -> Option<&StepReport> {
        self.steps.iter().find(|s| s.name == name)
    }

    /// Data artifact path → SHA-256 (the report file itself is excluded
    /// since it carries timings).
    pub fn checksums(&self) -> BTreeMap<String, String> {
        self.steps.iter().flat_map(|s| &s.artifacts).map(|a| (a.path.clone(), a.sha256.clone())).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// File name of the run report inside the output directory.
pub const REPORT_FILE: &str = "report.json";

struct StepWriter {
    root: PathBuf,
    step: &'static str,
    pending: Vec<(PathBuf, PathBuf, Artifact)>,
}

fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

impl StepWriter {
    fn new(root: &Path, step: &'static str) -> io::Result<Self> {
        fs::create_dir_all(root.join(step))?;
        Ok(Self { root: root.to_path_buf(), step, pending: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> io::Result<()> {
        let bytes = bytes.as_ref();
        let target = self.root.join(self.step).join(name);
        let partial = partial_path(&target);
        match fs::remove_file(&target) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e),
            _ => {}
        }
        fs::write(&partial, bytes)?;
        let artifact =
            Artifact { path: format!("{}/{name}", self.step), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 };
        self.pending.push((partial, target, artifact));
        Ok(())
    }

    fn commit(self) -> io::Result<Vec<Artifact>> {
        let mut out = Vec::with_capacity(self.pending.len());
        for (partial, target, artifact) in self.pending {
            fs::rename(partial, target)?;
            out.push(artifact);
        }
        Ok(out)
    }
}

struct StepOutput<T> {
    value: T,
    rows_in: Option<usize>,
    rows_out: Option<usize>,
    summary: Value,
}

fn run_step<T>(
    root: &Path,
    name: &'static str,
    report: &mut RunReport,
    body: impl FnOnce(&mut StepWriter) -> Result<StepOutput<T>, StepError>,
) -> Result<T, PipelineError> {
    let started = Instant::now();
    let fail = |source: StepError| PipelineError::Step { step: name, source };
    let mut writer = StepWriter::new(root, name).map_err(|e| fail(e.into()))?;
    let out = body(&mut writer).map_err(fail)?;
    let artifacts = writer.commit().map_err(|e| fail(e.into()))?;
    report.steps.push(StepReport {
        name,
        seconds: started.elapsed().as_secs_f64(),
        rows_in: out.rows_in,
        rows_out: out.rows_out,
        artifacts,
        summary: out.summary,
    });
    Ok(out.value)
}

/// Recorded versus on-disk checksum of one artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactCheck {
    pub path: String,
    pub expected: String,
    /// `None` when the file is gone.
    pub actual: Option<String>,
}

impl ArtifactCheck {
    pub fn ok(&self) -> bool {
        self.actual.as_deref() == Some(self.expected.as_str())
    }
}

/// Re-hashes every artifact listed in `<output_dir>/report.json`.
pub fn verify_artifacts(output_dir: &Path) -> Result<Vec<ArtifactCheck>, PipelineError> {
    let path = output_dir.join(REPORT_FILE);
    let fail = |reason: String| PipelineError::Report { path: path.display().to_string(), reason };
    let text = fs::read_to_string(&path).map_err(|e| fail(e.to_string()))?;
    let report: Value = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
    let steps = report["steps"].as_array().ok_or_else(|| fail("no `steps` array".into()))?;
    let mut checks = Vec::new();
    for step in steps {
        for a in step["artifacts"].as_array().into_iter().flatten() {
            let (Some(rel), Some(expected)) = (a["path"].as_str(), a["sha256"].as_str()) else {
                return Err(fail("artifact entry without path or sha256".into()));
            };
            let actual = fs::read(output_dir.join(rel)).ok().map(|b| sha256_hex(&b));
            checks.push(ArtifactCheck { path: rel.to_string(), expected: expected.to_string(), actual });
        }
    }
    Ok(checks)
}

// ---------------------------------------------------------------------------
// run

/// Executes the enabled steps in lifecycle order and writes `report.json`.
pub fn run(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let root = config.output_path();
    fs::create_dir_all(&root).map_err(|e| PipelineError::Step { step: "setup", source: e.into() })?;
    let mut report = RunReport { seed: config.seed, ..RunReport::default() };

    let mut table = None;
    if config.table_steps_enabled() {
        let t = run_step(&root, "clean", &mut report, |w| clean_step(config, w))?;
        let t = if config.context.joins.is_empty() {
            t
        } else {
            run_step(&root, "context", &mut report, |w| context_step(config, t, w))?
        };
        table = Some(t);
    }
    if config.impute.enabled {
        let t = table.take().expect("table present");
        table = Some(run_step(&root, "impute", &mut report, |w| impute_step(config, t, w))?);
    }
    if config.outliers.enabled {
        let t = table.take().expect("table present");
        table = Some(run_step(&root, "outliers", &mut report, |w| outlier_step(config, t, w))?);
    }
    if config.regress.enabled {
        let t = table.as_ref().expect("table present");
        run_step(&root, "regress", &mut report, |w| regress_step(config, t, w))?;
    }
    let mut predictions = None;
    if config.classify.enabled {
        let t = table.as_ref().expect("table present");
        predictions = Some(run_step(&root, "classify", &mut report, |w| classify_step(config, t, w))?);
    }
    let mut ranking = None;
    if config.sentiment.enabled {
        ranking = Some(run_step(&root, "sentiment", &mut report, |w| sentiment_step(config, w))?);
    }
    if predictions.is_some() || ranking.is_some() {
        let eval = run_step(&root, "evaluate", &mut report, |w| evaluate_step(predictions, ranking, w))?;
        report.evaluation = eval;
    }

    let target = root.join(REPORT_FILE);
    let partial = partial_path(&target);
    fs::write(&partial, report.to_json())
        .and_then(|()| fs::rename(&partial, &target))
        .map_err(|e| PipelineError::Step { step: "report", source: e.into() })?;
    Ok(report)
}

/// Ingests the dataset and applies the column projection, row exclusions
/// and missing-label recodes of the `clean` section. Also returns the
/// number of rows read.
pub fn cleaned_table(cfg: &PipelineConfig) -> Result<(Table, usize), StepError> {
    let path = cfg.inputs.dataset.as_ref().ok_or_else(|| StepError::Data("no dataset configured".into()))?;
    let options =
        IngestOptions { missing_tokens: cfg.clean.missing_tokens.clone(), kind_overrides: cfg.clean.kinds.clone() };
    let raw = ingest_csv(cfg.resolve(path), &options)?;
    let rows_in = raw.n_rows();

    let mut t = if cfg.clean.columns.is_empty() {
        raw
    } else {
        let idx = cfg.clean.columns.iter().map(|c| raw.column_index(c)).collect::<Result<Vec<_>, _>>()?;
        let schema = idx.iter().map(|&c| raw.spec(c).clone()).collect();
        let rows = raw.rows().iter().map(|r| idx.iter().map(|&c| r[c]).collect()).collect();
        Table::new(schema, rows)?
    };
    for rule in &cfg.clean.exclude {
        let c = t.column_index(&rule.column)?;
        let before = t.clone();
        t = before.filter_rows(|r| before.render(r, c) != rule.value);
    }
    for rule in &cfg.clean.recode_missing {
        t = recode_missing_label(&t, &rule.column, &rule.label)?;
    }
    Ok((t, rows_in))
}

/// Left-joins every auxiliary table of the `context` section.
pub fn with_context(cfg: &PipelineConfig, t: Table) -> Result<Table, StepError> {
    let mut t = t;
    for join in &cfg.context.joins {
        let options =
            IngestOptions { missing_tokens: cfg.clean.missing_tokens.clone(), kind_overrides: join.kinds.clone() };
        let aux = ingest_csv(cfg.resolve(&join.path), &options)?;
        t = left_join(&t, &aux, &join.keys)?;
    }
    Ok(t)
}

fn clean_step(cfg: &PipelineConfig, w: &mut StepWriter) -> Result<StepOutput<Table>, StepError> {
    let (t, rows_in) = cleaned_table(cfg)?;
    let patterns = missingness_patterns(&t);
    w.write("table.csv", t.to_csv_string())?;
    w.write("missing_patterns.csv", patterns.patterns_csv())?;
    w.write("column_missing.csv", patterns.column_missing_csv())?;
    let summary = json!({
        "columns": t.n_cols(),
        "missing_cells": t.total_missing(),
        "missing_patterns": patterns.patterns.len(),
    });
    Ok(StepOutput { rows_in: Some(rows_in), rows_out: Some(t.n_rows()), summary, value: t })
}

fn context_step(cfg: &PipelineConfig, t: Table, w: &mut StepWriter) -> Result<StepOutput<Table>, StepError> {
    let rows_in = t.n_rows();
    let cols_in = t.n_cols();
    let t = with_context(cfg, t)?;
    let joined: Vec<String> = cfg.context.joins.iter().map(|j| j.path.display().to_string()).collect();
    let patterns = missingness_patterns(&t);
    w.write("table.csv", t.to_csv_string())?;
    w.write("missing_patterns.csv", patterns.patterns_csv())?;
    let summary = json!({
        "joined": joined,
        "columns_added": t.n_cols() - cols_in,
        "missing_cells": t.total_missing(),
    });
    Ok(StepOutput { rows_in: Some(rows_in), rows_out: Some(t.n_rows()), summary, value: t })
}

fn impute_step(cfg: &PipelineConfig, t: Table, w: &mut StepWriter) -> Result<StepOutput<Table>, StepError> {
    let rows = t.n_rows();
    let result = mice_impute(&t, &cfg.impute.columns, &cfg.mice_config())?;
    w.write("table.csv", result.completed.to_csv_string())?;
    w.write("imputed_cells.csv", result.imputed_cells_csv())?;
    w.write("chain_means.csv", result.chain_means_csv())?;
    let summary = json!({
        "imputed_cells": result.imputed_cells.len(),
        "iterations": cfg.impute.iterations,
        "remaining_missing": result.completed.total_missing(),
    });
    Ok(StepOutput { rows_in: Some(rows), rows_out: Some(rows), summary, value: result.completed })
}

fn outlier_step(cfg: &PipelineConfig, t: Table, w: &mut StepWriter) -> Result<StepOutput<Table>, StepError> {
    let rows_in = t.n_rows();
    let encoded = encode_and_scale(&t, &cfg.outliers.columns)?;
    let scores = lof_scores(&encoded.values, &LofConfig { k: cfg.outliers.k })?;
    let flagged = top_outliers(&scores.scores, cfg.outliers.top);
    let all_rows: Vec<usize> = (0..rows_in).collect();
    w.write("lof.csv", scores.to_csv(&all_rows))?;
    w.write("top.csv", scores.to_csv(&flagged))?;

    let out = if cfg.outliers.filter {
        let mut drop = vec![false; rows_in];
        for &r in &flagged {
            drop[r] = true;
        }
        let kept = t.filter_rows(|r| !drop[r]);
        w.write("table.csv", kept.to_csv_string())?;
        kept
    } else {
        t
    };
    let summary = json!({
        "k": cfg.outliers.k,
        "flagged": flagged,
        "filtered": cfg.outliers.filter,
        "encoded_columns": encoded.ncols(),
    });
    Ok(StepOutput { rows_in: Some(rows_in), rows_out: Some(out.n_rows()), summary, value: out })
}

/// Medal entries and participations of one (country, sport) per games.
#[derive(Debug, Clone, Copy, Default)]
struct GamesTally {
    entries: u64,
    medals: u64,
}

/// Per (country, sport): tallies keyed by games year.
type MedalSeries = BTreeMap<(String, String), BTreeMap<i32, GamesTally>>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRow {
    pub country: String,
    pub sport: String,
    pub scheme: String,
    pub actual: u64,
    pub predicted_raw: f64,
    pub predicted_rounded: u64,
}

fn tally_medals(
    cfg: &RegressSection,
    t: &Table,
) -> Result<MedalSeries, StepError> {
    let year_c = t.column_index(&cfg.year_column)?;
    let country_c = t.column_index(&cfg.country_column)?;
    let sport_c = t.column_index(&cfg.sport_column)?;
    let medal_c = t.column_index(&cfg.medal_column)?;
    let medal_numeric = t.spec(medal_c).kind == ColumnKind::Numeric;
    let medal_codes: Vec<u32> = MEDAL_CODES.iter().map(|(_, c)| *c).filter(|&c| c <= 3).collect();

    let mut groups = MedalSeries::new();
    for r in 0..t.n_rows() {
        let Some(year) = t.number(r, year_c) else { continue };
        if t.is_missing(r, country_c) || t.is_missing(r, sport_c) {
            continue;
        }
        let won = match t.cell(r, medal_c) {
            Cell::Missing => false,
            Cell::Number(v) => medal_numeric && medal_codes.iter().any(|&c| f64::from(c) == v),
            Cell::Category(_) => t.label(r, medal_c).is_some_and(|l| l != cfg.no_medal_label),
        };
        let tally = groups
            .entry((t.render(r, country_c), t.render(r, sport_c)))
            .or_default()
            .entry(year.round() as i32)
            .or_default();
        tally.entries += 1;
        tally.medals += u64::from(won);
    }
    Ok(groups)
}

/// Pooled model of a games' medal count from the previous games' count and
/// the current number of entries.
fn lag_model(
    groups: &MedalSeries,
    holdout: i32,
) -> Result<LinearFit, RegressError> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for series in groups.values() {
        let train: Vec<&GamesTally> = series.range(..holdout).map(|(_, t)| t).collect();
        for pair in train.windows(2) {
            x.push(vec![pair[0].medals as f64, pair[1].entries as f64]);
            y.push(pair[1].medals as f64);
        }
    }
    let x = if x.is_empty() { Matrix::zeros(0, 2) } else { Matrix::from_rows(&x) };
    fit_ols(&x, &y)
}

fn regress_step(cfg: &PipelineConfig, t: &Table, w: &mut StepWriter) -> Result<StepOutput<()>, StepError> {
    let rc = &cfg.regress;
    let groups = tally_medals(rc, t)?;
    let holdout = match rc.holdout_year {
        Some(y) => y,
        None => groups
            .values()
            .flat_map(|s| s.keys().copied())
            .max()
            .ok_or_else(|| StepError::Data("no rows with a year".into()))?,
    };
    let last_train = groups
        .values()
        .flat_map(|s| s.range(..holdout).map(|(y, _)| *y))
        .max()
        .ok_or_else(|| StepError::Data(format!("no games before {holdout}")))?;

    let schemes = weight_scenarios();
    let mut rows: Vec<ForecastRow> = Vec::new();
    for ((country, sport), series) in &groups {
        if !rc.countries.is_empty() && !rc.countries.contains(country) {
            continue;
        }
        let Some(actual) = series.get(&holdout) else { continue };
        let train: Vec<(i32, f64)> = series.range(..holdout).map(|(y, t)| (*y, t.medals as f64)).collect();
        if train.len() < rc.min_games.max(2) {
            continue;
        }
        // years centred on the forecast year: the intercept is the forecast
        let x = Matrix::column_vector(&train.iter().map(|(y, _)| f64::from(y - holdout)).collect::<Vec<_>>());
        let counts: Vec<f64> = train.iter().map(|(_, m)| *m).collect();
        let years: Vec<i32> = train.iter().map(|(y, _)| *y).collect();
        for scheme in &schemes {
            let fit = fit_wls(&x, &counts, &scheme.weights(&years, last_train))?;
            let raw = predict(&fit, &Matrix::column_vector(&[0.0]))?[0];
            rows.push(ForecastRow {
                country: country.clone(),
                sport: sport.clone(),
                scheme: scheme.name(),
                actual: actual.medals,
                predicted_raw: raw,
                predicted_rounded: round_count(raw),
            });
        }
    }

    let mut long = String::from("country,sport,scheme,actual,predicted_raw,predicted_rounded\n");
    for r in &rows {
        long.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(&r.country),
            csv_field(&r.sport),
            r.scheme,
            r.actual,
            r.predicted_raw,
            r.predicted_rounded
        ));
    }
    w.write("predictions.csv", long)?;

    // one line per (country, sport) with the rounded forecast of each scheme
    let mut wide = String::from("country,sport,actual");
    for s in &schemes {
        wide.push(',');
        wide.push_str(&s.name());
    }
    wide.push('\n');
    for chunk in rows.chunks(schemes.len()) {
        wide.push_str(&format!("{},{},{}", csv_field(&chunk[0].country), csv_field(&chunk[0].sport), chunk[0].actual));
        for r in chunk {
            wide.push_str(&format!(",{}", r.predicted_rounded));
        }
        wide.push('\n');
    }
    w.write("table.csv", wide)?;

    let mut mae = BTreeMap::new();
    for s in &schemes {
        let name = s.name();
        let errs: Vec<f64> = rows
            .iter()
            .filter(|r| r.scheme == name)
            .map(|r| (r.predicted_rounded as f64 - r.actual as f64).abs())
            .collect();
        let value = (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64);
        mae.insert(name, optional_json(value));
    }

    let lag = match lag_model(&groups, holdout) {
        Ok(fit) => json!({
            "predictors": ["previous_medals", "entries"],
            "coefficients": fit.coefficients,
            "r2": fit.r2,
            "adjusted_r2": optional_json(fit.adjusted_r2),
            "n": fit.n,
        }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let mut lag_text = serde_json::to_string_pretty(&lag).expect("json");
    lag_text.push('\n');
    w.write("lag_model.json", lag_text)?;

    let chart_rows: Vec<&ForecastRow> = rows.iter().filter(|r| r.scheme == rc.chart_scheme).collect();
    let (title, pairs) = match &rc.chart_country {
        Some(country) => (
            format!("{country} {holdout}: actual vs predicted medals ({})", rc.chart_scheme),
            chart_rows
                .iter()
                .filter(|r| &r.country == country)
                .map(|r| BarPair::new(r.sport.clone(), r.actual as f64, r.predicted_rounded as f64))
                .collect::<Vec<_>>(),
        ),
        None => {
            let mut totals: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
            for r in &chart_rows {
                let e = totals.entry(&r.country).or_default();
                e.0 += r.actual;
                e.1 += r.predicted_rounded;
            }
            let mut v: Vec<(&str, (u64, u64))> = totals.into_iter().collect();
            v.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.0.cmp(b.0)));
            v.truncate(rc.chart_top);
            (
                format!("{holdout}: actual vs predicted medals ({})", rc.chart_scheme),
                v.into_iter().map(|(c, (a, p))| BarPair::new(c, a as f64, p as f64)).collect(),
            )
        }
    };
    w.write("chart.svg", bar_chart_svg(&title, &pairs))?;

    let summary = json!({
        "holdout_year": holdout,
        "last_training_year": last_train,
        "groups": rows.len() / schemes.len(),
        "mean_absolute_error": mae,
        "lag_model": lag,
    });
    Ok(StepOutput { rows_in: Some(t.n_rows()), rows_out: Some(rows.len()), summary, value: () })
}

/// Held-out labels and predictions handed to the evaluation step.
#[derive(Debug, Clone)]
struct Predictions {
    actual: Vec<u32>,
    predicted: Vec<u32>,
}

fn medal_class(t: &Table, r: usize, c: usize) -> Result<Option<u32>, StepError> {
    match t.cell(r, c) {
        Cell::Missing => Ok(None),
        Cell::Number(v) => {
            if (1.0..=4.0).contains(&v) && v.fract() == 0.0 {
                Ok(Some(v as u32))
            } else {
                Err(StepError::Data(format!("row {r}: {v} is not a medal code")))
            }
        }
        Cell::Category(_) => {
            let label = t.label(r, c).unwrap_or_default();
            medal_code(label)
                .map(Some)
                .ok_or_else(|| StepError::Data(format!("row {r}: `{label}` is not a medal label")))
        }
    }
}

fn classify_step(cfg: &PipelineConfig, t: &Table, w: &mut StepWriter) -> Result<StepOutput<Predictions>, StepError> {
    let cc = &cfg.classify;
    let label_c = t.column_index(&cc.label_column)?;
    let feature_cols = cc.features.iter().map(|f| t.column_index(f)).collect::<Result<Vec<_>, _>>()?;

    // complete cases only
    let complete: Vec<usize> = (0..t.n_rows())
        .filter(|&r| !t.is_missing(r, label_c) && feature_cols.iter().all(|&c| !t.is_missing(r, c)))
        .collect();
    let dropped = t.n_rows() - complete.len();
    let sub = t.select_rows(&complete);
    let encoded = encode_and_scale(&sub, &cc.features)?;
    let labels = (0..sub.n_rows())
        .map(|r| medal_class(&sub, r, label_c).map(|v| v.expect("complete case")))
        .collect::<Result<Vec<u32>, _>>()?;

    let (train, test): (Vec<usize>, Vec<usize>) = match cc.test_year {
        Some(year) => {
            let yc = sub.column_index(&cc.year_column)?;
            let year_of = |r: usize| sub.number(r, yc).map(|v| v.round() as i32);
            let train = (0..sub.n_rows()).filter(|&r| year_of(r).is_some_and(|y| y < year)).collect();
            let test = (0..sub.n_rows()).filter(|&r| year_of(r) == Some(year)).collect();
            (train, test)
        }
        None => ((0..sub.n_rows()).collect(), (0..sub.n_rows()).collect()),
    };
    if train.is_empty() || test.is_empty() {
        return Err(StepError::Data(format!("{} training and {} test rows", train.len(), test.len())));
    }

    let x_train = encoded.values.select_rows(&train);
    let y_train: Vec<u32> = train.iter().map(|&r| labels[r]).collect();
    let model = train_forest(&x_train, &y_train, &cfg.forest_config())?;
    let predicted = model.predict(&encoded.values.select_rows(&test))?;
    let actual: Vec<u32> = test.iter().map(|&r| labels[r]).collect();

    let mut csv = String::from("row_index,actual,predicted\n");
    for ((&r, a), p) in test.iter().zip(&actual).zip(&predicted) {
        csv.push_str(&format!("{},{a},{p}\n", complete[r]));
    }
    w.write("forest.model", model.to_text())?;
    w.write("predictions.csv", csv)?;
    let summary = json!({
        "dropped_incomplete_rows": dropped,
        "encoded_columns": encoded.ncols(),
        "train_rows": train.len(),
        "test_rows": test.len(),
        "classes": model.classes,
    });
    Ok(StepOutput {
        rows_in: Some(t.n_rows()),
        rows_out: Some(test.len()),
        summary,
        value: Predictions { actual, predicted },
    })
}

fn sentiment_step(cfg: &PipelineConfig, w: &mut StepWriter) -> Result<StepOutput<Vec<String>>, StepError> {
    let tweets = load_corpus(cfg.resolve(cfg.inputs.tweets.as_ref().expect("validated")))?;
    let lexicon = match &cfg.inputs.lexicon {
        Some(p) => Lexicon::load(cfg.resolve(p))?,
        None => Lexicon::default_lexicon(),
    };
    let scores = score_corpus(&lexicon, &tweets);
    let ranked = rank_teams(&team_coefficients(&scores, &tweets)?);
    let countries = country_aggregate(&scores, &tweets)?;

    let mut per_tweet = String::from("id,team,score\n");
    for (tw, s) in tweets.iter().zip(&scores) {
        per_tweet.push_str(&format!("{},{},{s}\n", csv_field(&tw.id), csv_field(&tw.team)));
    }
    w.write("scores.csv", per_tweet)?;
    w.write("coefficients.csv", coefficients_csv(&ranked))?;
    w.write("countries.csv", countries_csv(&countries))?;
    let ranking: Vec<String> = ranked.iter().map(|c| c.team.clone()).collect();
    let summary = json!({
        "tweets": tweets.len(),
        "lexicon_words": lexicon.len(),
        "score_min": scores.iter().min(),
        "score_max": scores.iter().max(),
        "ranking": ranking,
    });
    Ok(StepOutput { rows_in: Some(tweets.len()), rows_out: Some(ranked.len()), summary, value: ranking })
}

fn evaluate_step(
    predictions: Option<Predictions>,
    ranking: Option<Vec<String>>,
    w: &mut StepWriter,
) -> Result<StepOutput<Evaluation>, StepError> {
    let mut eval = Evaluation::default();
    let mut summary = serde_json::Map::new();
    if let Some(p) = predictions {
        let classes: Vec<u32> = MEDAL_CODES.iter().map(|(_, c)| *c).collect();
        let cm = confusion_matrix(&p.predicted, &p.actual, &classes)?;
        let metrics = MetricsReport::new(&cm)?;
        w.write("metrics.json", metrics.to_json())?;
        summary.insert("accuracy".into(), json!(metrics.accuracy));
        summary.insert("accuracy_percent".into(), json!(metrics.accuracy_percent));
        eval.metrics_json = Some("evaluate/metrics.json".into());
    }
    if let Some(ranking) = ranking {
        let mut text = serde_json::to_string_pretty(&json!({ "ranking": ranking })).expect("json");
        text.push('\n');
        w.write("ranking.json", text)?;
        summary.insert("top_two".into(), json!(ranking.iter().take(2).collect::<Vec<_>>()));
        eval.coefficients_csv = Some("sentiment/coefficients.csv".into());
    }
    Ok(StepOutput { rows_in: None, rows_out: None, summary: Value::Object(summary), value: eval })
}

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ctxmine::impute::mice_impute;
use ctxmine::metrics::{confusion_matrix, MetricsReport};
use ctxmine::outlier::{lof_scores, top_outliers, LofConfig};
use ctxmine::pipeline::{self, cleaned_table, verify_artifacts, with_context, PipelineConfig, REPORT_FILE};
use ctxmine::tabular::{encode_and_scale, missingness_patterns, MEDAL_CODES};

/// Context-driven data mining: cleaning, context joins, imputation,
/// outlier scoring, weighted regression, random forests and fan sentiment.
#[derive(Parser)]
#[command(name = "ctxmine", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML pipeline config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the stochastic steps.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (single-artifact commands, stdout when absent) or
    /// output directory (regress, classify, sentiment, run, report).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Read and clean a CSV; writes the cleaned table.
    Ingest { input: Option<PathBuf> },
    /// Missing-data patterns of the cleaned table.
    Patterns {
        input: Option<PathBuf>,
        /// Per-column missing counts instead of row patterns.
        #[arg(long)]
        columns: bool,
    },
    /// MICE / predictive mean matching; writes the completed table.
    Impute {
        input: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        donor_pool: Option<usize>,
    },
    /// Local Outlier Factor; writes `row_index,lof,kdist` of the top rows.
    Outliers {
        input: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Per-sport medal forecasts under every weight scheme.
    Regress {
        input: Option<PathBuf>,
        #[arg(long)]
        holdout_year: Option<i32>,
        #[arg(long, value_delimiter = ',')]
        countries: Vec<String>,
    },
    /// Random forest medal classifier; prints the metrics JSON.
    Classify {
        input: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        features: Vec<String>,
        #[arg(long)]
        test_year: Option<i32>,
        #[arg(long)]
        n_trees: Option<usize>,
    },
    /// Metrics JSON from a `row_index,actual,predicted` CSV.
    Evaluate { predictions: PathBuf },
    /// Team sentiment coefficients (ATSS), ranked.
    Sentiment {
        tweets: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Full pipeline as configured.
    Run,
    /// Summarize a finished run and re-verify its artifact checksums.
    Report { dir: Option<PathBuf> },
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    Ok(cfg)
}

fn set_dataset(cfg: &mut PipelineConfig, input: &Option<PathBuf>) -> Result<()> {
    if let Some(p) = input {
        cfg.inputs.dataset = Some(absolute(p)?);
    }
    Ok(())
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => io::stdout().write_all(text.as_bytes()).context("writing stdout"),
    }
}

fn prepared_table(cfg: &PipelineConfig) -> Result<ctxmine::Table> {
    let (t, _) = cleaned_table(cfg)?;
    Ok(with_context(cfg, t)?)
}

fn override_list(target: &mut Vec<String>, values: Vec<String>) {
    if !values.is_empty() {
        *target = values;
    }
}

/// Runs the pipeline with only `enable` switched on and prints `primary`.
fn run_single(mut cfg: PipelineConfig, out: &Option<PathBuf>, enable: fn(&mut PipelineConfig), primary: &str) -> Result<()> {
    cfg.impute.enabled = false;
    cfg.outliers.enabled = false;
    cfg.regress.enabled = false;
    cfg.classify.enabled = false;
    cfg.sentiment.enabled = false;
    enable(&mut cfg);
    apply_out_dir(&mut cfg, out)?;
    pipeline::run(&cfg)?;
    let path = cfg.output_path().join(primary);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    print!("{text}");
    Ok(())
}

fn apply_out_dir(cfg: &mut PipelineConfig, out: &Option<PathBuf>) -> Result<()> {
    if let Some(dir) = out {
        cfg.output_dir = absolute(dir)?;
    } else if cfg.output_dir.as_os_str().is_empty() {
        cfg.output_dir = PathBuf::from("ctxmine-out");
    }
    Ok(())
}

fn read_predictions(path: &Path) -> Result<(Vec<u32>, Vec<u32>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| *c == name).with_context(|| format!("no `{name}` column"));
    let (ai, pi) = (find("actual")?, find("predicted")?);
    let (mut actual, mut predicted) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |i: usize| -> Result<u32> {
            fields.get(i).with_context(|| format!("line {}: too few fields", n + 2))?.parse().with_context(|| {
                format!("line {}: not a class code", n + 2)
            })
        };
        actual.push(get(ai)?);
        predicted.push(get(pi)?);
    }
    Ok((actual, predicted))
}

fn report(dir: &Path) -> Result<()> {
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report: serde_json::Value = serde_json::from_str(&text).context("parsing run report")?;
    for step in report["steps"].as_array().into_iter().flatten() {
        println!(
            "{:<10} {:>9.3}s  rows {} -> {}",
            step["name"].as_str().unwrap_or("?"),
            step["seconds"].as_f64().unwrap_or(0.0),
            step["rows_in"],
            step["rows_out"]
        );
    }
    let checks = verify_artifacts(dir)?;
    let bad: Vec<_> = checks.iter().filter(|c| !c.ok()).collect();
    for c in &checks {
        println!("  {} {}", if c.ok() { "ok      " } else { "MISMATCH" }, c.path);
    }
    if !bad.is_empty() {
        bail!("{} of {} artifacts do not match their recorded checksums", bad.len(), checks.len());
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let common = cli.common;
    let mut cfg = load_config(&common)?;
    match cli.command {
        Command::Ingest { input } => {
            set_dataset(&mut cfg, &input)?;
            let t = prepared_table(&cfg)?;
            eprintln!("{} rows, {} columns, {} missing cells", t.n_rows(), t.n_cols(), t.total_missing());
            emit(&common.out, &t.to_csv_string())
        }
        Command::Patterns { input, columns } => {
            set_dataset(&mut cfg, &input)?;
            let summary = missingness_patterns(&prepared_table(&cfg)?);
            emit(&common.out, &if columns { summary.column_missing_csv() } else { summary.patterns_csv() })
        }
        Command::Impute { input, columns, iterations, donor_pool } => {
            set_dataset(&mut cfg, &input)?;
            override_list(&mut cfg.impute.columns, columns);
            let mut mice = ctxmine::impute::MiceConfig {
                iterations: iterations.unwrap_or(cfg.impute.iterations),
                donor_pool: donor_pool.unwrap_or(cfg.impute.donor_pool),
                visit_order: cfg.impute.visit_order,
                ridge: cfg.impute.ridge,
                ..Default::default()
            };
            mice.seed = cfg.seed.context("imputation needs --seed (or `seed` in the config)")?;
            if cfg.impute.columns.is_empty() {
                bail!("no columns to impute (use --columns)");
            }
            let result = mice_impute(&prepared_table(&cfg)?, &cfg.impute.columns, &mice)?;
            eprintln!("imputed {} cells", result.imputed_cells.len());
            emit(&common.out, &result.completed.to_csv_string())
        }
        Command::Outliers { input, columns, k, top } => {
            set_dataset(&mut cfg, &input)?;
            override_list(&mut cfg.outliers.columns, columns);
            if cfg.outliers.columns.is_empty() {
                bail!("no feature columns (use --columns)");
            }
            let t = prepared_table(&cfg)?;
            let encoded = encode_and_scale(&t, &cfg.outliers.columns)?;
            let scores = lof_scores(&encoded.values, &LofConfig { k: k.unwrap_or(cfg.outliers.k) })?;
            let flagged = top_outliers(&scores.scores, top.unwrap_or(cfg.outliers.top));
            emit(&common.out, &scores.to_csv(&flagged))
        }
        Command::Regress { input, holdout_year, countries } => {
            set_dataset(&mut cfg, &input)?;
            if holdout_year.is_some() {
                cfg.regress.holdout_year = holdout_year;
            }
            override_list(&mut cfg.regress.countries, countries);
            run_single(cfg, &common.out, |c| c.regress.enabled = true, "regress/table.csv")
        }
        Command::Classify { input, features, test_year, n_trees } => {
            set_dataset(&mut cfg, &input)?;
            override_list(&mut cfg.classify.features, features);
            if test_year.is_some() {
                cfg.classify.test_year = test_year;
            }
            if let Some(n) = n_trees {
                cfg.classify.n_trees = n;
            }
            run_single(cfg, &common.out, |c| c.classify.enabled = true, "evaluate/metrics.json")
        }
        Command::Evaluate { predictions } => {
            let (actual, predicted) = read_predictions(&predictions)?;
            let classes: Vec<u32> = MEDAL_CODES.iter().map(|(_, c)| *c).collect();
            let cm = confusion_matrix(&predicted, &actual, &classes)?;
            emit(&common.out, &MetricsReport::new(&cm)?.to_json())
        }
        Command::Sentiment { tweets, lexicon } => {
            if let Some(p) = tweets {
                cfg.inputs.tweets = Some(absolute(&p)?);
            }
            if let Some(p) = lexicon {
                cfg.inputs.lexicon = Some(absolute(&p)?);
            }
            run_single(cfg, &common.out, |c| c.sentiment.enabled = true, "sentiment/coefficients.csv")
        }
        Command::Run => {
            apply_out_dir(&mut cfg, &common.out)?;
            let report = pipeline::run(&cfg)?;
            for step in &report.steps {
                eprintln!("{:<10} {:>9.3}s  {} artifacts", step.name, step.seconds, step.artifacts.len());
            }
            println!("{}", cfg.output_path().join(REPORT_FILE).display());
            Ok(())
        }
        Command::Report { dir } => {
            let dir = match dir.or(common.out) {
                Some(d) => d,
                None => {
                    apply_out_dir(&mut cfg, &None)?;
                    cfg.output_path()
                }
            };
            report(&dir)
        }
    }
}

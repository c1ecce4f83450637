//! Lexicon-based tweet scoring and the Average Team Sentiment Score.
//!
//! A tweet's score is the signed sum of the lexicon weights of its tokens
//! (tokens split on non-alphanumeric characters and lowercased; repeats
//! count each time). A team's ATSS is the sum of its tweets' scores over
//! its tweet count.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

/// Default ±1 lexicon shipped with the crate.
pub const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.tsv");

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
    #[error("corpus line {line}: {reason}")]
    Corpus { line: usize, reason: String },
    #[error("{scores} scores for {tweets} tweets")]
    LengthMismatch { scores: usize, tweets: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, i64>,
}

impl Lexicon {
    /// Builds a lexicon from `(token, weight)` pairs. Tokens must be
    /// nonempty, lowercase, alphanumeric and unique; weights nonzero.
    pub fn new<S: Into<String>>(pairs: impl IntoIterator<Item = (S, i64)>) -> Result<Self, SentimentError> {
        let mut entries = BTreeMap::new();
        for (i, (token, weight)) in pairs.into_iter().enumerate() {
            let token = token.into();
            let bad = |reason: String| SentimentError::Lexicon { line: i + 1, reason };
            if token.is_empty() || !token.chars().all(char::is_alphanumeric) {
                return Err(bad(format!("token `{token}` must be nonempty and alphanumeric")));
            }
            if token.to_lowercase() != token {
                return Err(bad(format!("token `{token}` must be lowercase")));
            }
            if weight == 0 {
                return Err(bad(format!("token `{token}` has weight 0")));
            }
            if entries.insert(token.clone(), weight).is_some() {
                return Err(bad(format!("duplicate token `{token}`")));
            }
        }
        Ok(Self { entries })
    }

    /// Parses `token<TAB>weight` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, SentimentError> {
        let mut pairs = Vec::new();
        let mut lines = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (token, weight) = trimmed.split_once('\t').ok_or_else(|| SentimentError::Lexicon {
                line: i + 1,
                reason: "expected token<TAB>weight".into(),
            })?;
            let weight: i64 = weight.trim().parse().map_err(|_| SentimentError::Lexicon {
                line: i + 1,
                reason: format!("weight `{weight}` is not an integer"),
            })?;
            pairs.push((token.to_string(), weight));
            lines.push(i + 1);
        }
        // report errors against file lines, not entry positions
        Self::new(pairs).map_err(|e| match e {
            SentimentError::Lexicon { line, reason } => SentimentError::Lexicon { line: lines[line - 1], reason },
            other => other,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SentimentError> {
        Self::parse(&read(path.as_ref())?)
    }

    pub fn default_lexicon() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn weight(&self, token: &str) -> Option<i64> {
        self.entries.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Every weight multiplied by `factor`.
    pub fn scaled(&self, factor: i64) -> Lexicon {
        Lexicon { entries: self.entries.iter().map(|(k, v)| (k.clone(), v * factor)).collect() }
    }
}

fn read(path: &Path) -> Result<String, SentimentError> {
    fs::read_to_string(path).map_err(|source| SentimentError::Io { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TweetRecord {
    pub id: String,
    pub team: String,
    pub country: Option<String>,
    pub text: String,
}

/// Parses a tab-separated corpus: `id<TAB>team<TAB>country<TAB>text` per
/// line. The country may be empty; the text is everything after the third
/// tab. Blank lines are skipped.
pub fn parse_corpus(text: &str) -> Result<Vec<TweetRecord>, SentimentError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() != 4 {
            return Err(SentimentError::Corpus { line: i + 1, reason: format!("expected 4 tab-separated fields, found {}", fields.len()) });
        }
        if fields[1].is_empty() {
            return Err(SentimentError::Corpus { line: i + 1, reason: "empty team".into() });
        }
        out.push(TweetRecord {
            id: fields[0].to_string(),
            team: fields[1].to_string(),
            country: (!fields[2].is_empty()).then(|| fields[2].to_string()),
            text: fields[3].to_string(),
        });
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<TweetRecord>, SentimentError> {
    parse_corpus(&read(path.as_ref())?)
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

pub fn score_text(lex: &Lexicon, text: &str) -> i64 {
    tokenize(text).filter_map(|t| lex.weight(&t)).sum()
}

pub fn score_corpus(lex: &Lexicon, tweets: &[TweetRecord]) -> Vec<i64> {
    tweets.iter().map(|t| score_text(lex, &t.text)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeamCoefficient {
    pub team: String,
    pub atss: f64,
    pub tweet_count: u64,
    pub score_sum: i64,
}

impl TeamCoefficient {
    /// Exact comparison of ATSS values as fractions.
    fn cmp_atss(&self, other: &TeamCoefficient) -> Ordering {
        let lhs = i128::from(self.score_sum) * i128::from(other.tweet_count);
        let rhs = i128::from(other.score_sum) * i128::from(self.tweet_count);
        lhs.cmp(&rhs)
    }
}

fn check_lengths(scores: &[i64], tweets: &[TweetRecord]) -> Result<(), SentimentError> {
    if scores.len() != tweets.len() {
        return Err(SentimentError::LengthMismatch { scores: scores.len(), tweets: tweets.len() });
    }
    Ok(())
}

/// ATSS per team, in team-name order.
pub fn team_coefficients(scores: &[i64], tweets: &[TweetRecord]) -> Result<Vec<TeamCoefficient>, SentimentError> {
    check_lengths(scores, tweets)?;
    let mut groups: BTreeMap<&str, (i64, u64)> = BTreeMap::new();
    for (s, t) in scores.iter().zip(tweets) {
        let g = groups.entry(t.team.as_str()).or_insert((0, 0));
        g.0 += s;
        g.1 += 1;
    }
    Ok(groups
        .into_iter()
        .map(|(team, (sum, count))| TeamCoefficient {
            team: team.to_string(),
            atss: sum as f64 / count as f64,
            tweet_count: count,
            score_sum: sum,
        })
        .collect())
}

/// Descending ATSS, then descending tweet count, then team name.
pub fn rank_teams(coeffs: &[TeamCoefficient]) -> Vec<TeamCoefficient> {
    let mut ranked = coeffs.to_vec();
    ranked.sort_by(|a, b| b.cmp_atss(a).then(b.tweet_count.cmp(&a.tweet_count)).then_with(|| a.team.cmp(&b.team)));
    ranked
}

/// Mean tweet score per country label; unlabeled tweets are ignored.
pub fn country_aggregate(scores: &[i64], tweets: &[TweetRecord]) -> Result<BTreeMap<String, f64>, SentimentError> {
    check_lengths(scores, tweets)?;
    let mut groups: BTreeMap<String, (i64, u64)> = BTreeMap::new();
    for (s, t) in scores.iter().zip(tweets) {
        if let Some(country) = &t.country {
            let g = groups.entry(country.clone()).or_insert((0, 0));
            g.0 += s;
            g.1 += 1;
        }
    }
    Ok(groups.into_iter().map(|(c, (sum, n))| (c, sum as f64 / n as f64)).collect())
}

/// CSV `(team, atss, tweet_count)` in the given order.
pub fn coefficients_csv(ranked: &[TeamCoefficient]) -> String {
    let mut out = String::from("team,atss,tweet_count\n");
    for c in ranked {
        out.push_str(&format!("{},{},{}\n", crate::tabular::csv_field(&c.team), c.atss, c.tweet_count));
    }
    out
}

/// CSV `(country, mean_score)`.
pub fn countries_csv(means: &BTreeMap<String, f64>) -> String {
    let mut out = String::from("country,mean_score\n");
    for (c, m) in means {
        out.push_str(&format!("{},{}\n", crate::tabular::csv_field(c), m));
    }
    out
}

//! Extractive-QA scoring: Exact Match and token F1 with per-language
//! normalization, plus per-language and cross-language aggregation.
//!
//! Normalization runs in a fixed order: case folding, punctuation removal
//! (every Unicode `P*` character plus ASCII punctuation), tokenization, then
//! article removal. Profiles are plain data and can be loaded from a file.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read profile: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse profile: {0}")]
    Parse(String),
    #[error("unknown built-in profile `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenization {
    Whitespace,
    PerCharacter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageProfile {
    #[serde(default)]
    pub articles: Vec<String>,
    #[serde(default = "default_tokenization")]
    pub tokenization: Tokenization,
    #[serde(default = "yes")]
    pub strip_punctuation: bool,
    #[serde(default = "yes")]
    pub fold_case: bool,
}

fn default_tokenization() -> Tokenization {
    Tokenization::Whitespace
}

fn yes() -> bool {
    true
}

impl Default for LanguageProfile {
    fn default() -> Self {
        Self {
            articles: Vec::new(),
            tokenization: Tokenization::Whitespace,
            strip_punctuation: true,
            fold_case: true,
        }
    }
}

impl LanguageProfile {
    fn with_articles(articles: &[&str]) -> Self {
        Self {
            articles: articles.iter().map(|a| a.to_string()).collect(),
            ..Self::default()
        }
    }
}

/// Per-language normalization rules with a fallback for unlisted languages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationProfile {
    #[serde(default)]
    pub languages: BTreeMap<String, LanguageProfile>,
    #[serde(default)]
    pub fallback: LanguageProfile,
}

impl Default for NormalizationProfile {
    /// MLQA-style conventions: English and Spanish articles, per-character
    /// Chinese, everything else on the fallback.
    fn default() -> Self {
        let mut languages = BTreeMap::new();
        languages.insert("en".to_string(), LanguageProfile::with_articles(&["a", "an", "the"]));
        languages.insert(
            "es".to_string(),
            LanguageProfile::with_articles(&["el", "la", "los", "las", "un", "una", "unos", "unas"]),
        );
        languages.insert("hi".to_string(), LanguageProfile::default());
        languages.insert(
            "zh".to_string(),
            LanguageProfile {
                tokenization: Tokenization::PerCharacter,
                ..LanguageProfile::default()
            },
        );
        Self {
            languages,
            fallback: LanguageProfile::default(),
        }
    }
}

impl NormalizationProfile {
    pub fn for_lang(&self, lang: &str) -> &LanguageProfile {
        self.languages.get(lang).unwrap_or(&self.fallback)
    }

    /// Resolves `mlqa` (the default) or a path to a JSON or TOML profile.
    pub fn load(spec: &str) -> Result<Self, ProfileError> {
        if spec == "mlqa" || spec == "default" {
            return Ok(Self::default());
        }
        let path = Path::new(spec);
        if !path.exists() {
            return Err(ProfileError::Unknown(spec.to_string()));
        }
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| ProfileError::Parse(e.to_string()))
        } else {
            serde_json::from_str(&text).map_err(|e| ProfileError::Parse(e.to_string()))
        }
    }
}

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{P}[[:punct:]]]").expect("static pattern"))
}

pub fn normalize(text: &str, lang: &str, profile: &NormalizationProfile) -> Vec<String> {
    let rules = profile.for_lang(lang);
    let mut s = if rules.fold_case {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    if rules.strip_punctuation {
        s = punctuation().replace_all(&s, "").into_owned();
    }
    let tokens: Vec<String> = match rules.tokenization {
        Tokenization::Whitespace => s.split_whitespace().map(str::to_string).collect(),
        Tokenization::PerCharacter => s.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
    };
    tokens.into_iter().filter(|t| !rules.articles.iter().any(|a| a == t)).collect()
}

fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// 1.0 if the normalized prediction equals any normalized reference.
pub fn em<S: AsRef<str>>(pred: &str, golds: &[S], lang: &str, profile: &NormalizationProfile) -> f64 {
    let p = normalize(pred, lang, profile);
    let hit = golds.iter().any(|g| normalize(g.as_ref(), lang, profile) == p);
    if hit {
        1.0
    } else {
        0.0
    }
}

/// Max over references of the token-multiset F1.
pub fn f1<S: AsRef<str>>(pred: &str, golds: &[S], lang: &str, profile: &NormalizationProfile) -> f64 {
    let p = normalize(pred, lang, profile);
    golds
        .iter()
        .map(|g| token_f1(&p, &normalize(g.as_ref(), lang, profile)))
        .fold(0.0, f64::max)
}

/// F1 / EM on the [0, 1] scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValue {
    pub f1: f64,
    pub em: f64,
}

impl MetricValue {
    pub fn new(f1: f64, em: f64) -> Self {
        Self { f1, em }
    }

    /// `F1 / EM` as percentages with two decimals.
    pub fn render(&self) -> String {
        format!("{:.2} / {:.2}", self.f1 * 100.0, self.em * 100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Unweighted mean of the per-language scores.
    #[default]
    Macro,
    /// Mean over all examples of the listed languages.
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageScore {
    pub f1: f64,
    pub em: f64,
    pub count: usize,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_language: BTreeMap<String, LanguageScore>,
    pub average: MetricValue,
    /// Listed languages that were present in the data and averaged.
    pub averaged_over: Vec<String>,
    pub averaging: Averaging,
}

impl MetricReport {
    pub fn get(&self, lang: &str) -> Option<MetricValue> {
        self.per_language.get(lang).map(|s| MetricValue::new(s.f1, s.em))
    }

    /// Markdown table: one row per language in key order, then the average.
    pub fn render_table(&self) -> String {
        let mut out = String::from("| language | F1 / EM | examples | missing |\n|---|---|---|---|\n");
        for (lang, s) in &self.per_language {
            let _ = writeln!(
                out,
                "| {lang} | {} | {} | {} |",
                MetricValue::new(s.f1, s.em).render(),
                s.count,
                s.missing
            );
        }
        let label = match self.averaging {
            Averaging::Macro => "macro",
            Averaging::Micro => "micro",
        };
        let _ = writeln!(
            out,
            "| average ({label}: {}) | {} | | |",
            self.averaged_over.join(","),
            self.average.render()
        );
        out
    }
}

/// Scores predictions against a gold dataset. Gold ids without a prediction
/// score 0 / 0 and are counted in `missing`. An empty `languages` list
/// averages over every language in the data.
pub fn evaluate(
    predictions: &BTreeMap<String, String>,
    gold: &Dataset,
    profile: &NormalizationProfile,
    languages: &[String],
    averaging: Averaging,
) -> MetricReport {
    #[derive(Default)]
    struct Acc {
        f1: f64,
        em: f64,
        count: usize,
        missing: usize,
    }
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    for r in gold.records() {
        let entry = acc.entry(r.lang.clone()).or_default();
        entry.count += 1;
        let Some(pred) = predictions.get(&r.id) else {
            entry.missing += 1;
            continue;
        };
        let golds: Vec<&str> = r.answers.iter().map(|a| a.text.as_str()).collect();
        if golds.is_empty() {
            continue;
        }
        entry.f1 += f1(pred, &golds, &r.lang, profile);
        entry.em += em(pred, &golds, &r.lang, profile);
    }

    let per_language: BTreeMap<String, LanguageScore> = acc
        .iter()
        .map(|(lang, a)| {
            let n = a.count.max(1) as f64;
            (
                lang.clone(),
                LanguageScore {
                    f1: a.f1 / n,
                    em: a.em / n,
                    count: a.count,
                    missing: a.missing,
                },
            )
        })
        .collect();

    let averaged_over: Vec<String> = if languages.is_empty() {
        per_language.keys().cloned().collect()
    } else {
        languages.iter().filter(|l| per_language.contains_key(*l)).cloned().collect()
    };
    let average = if averaged_over.is_empty() {
        MetricValue::default()
    } else {
        match averaging {
            Averaging::Macro => {
                let n = averaged_over.len() as f64;
                MetricValue::new(
                    averaged_over.iter().map(|l| per_language[l].f1).sum::<f64>() / n,
                    averaged_over.iter().map(|l| per_language[l].em).sum::<f64>() / n,
                )
            }
            Averaging::Micro => {
                let total: usize = averaged_over.iter().map(|l| acc[l].count).sum();
                let n = total.max(1) as f64;
                MetricValue::new(
                    averaged_over.iter().map(|l| acc[l].f1).sum::<f64>() / n,
                    averaged_over.iter().map(|l| acc[l].em).sum::<f64>() / n,
                )
            }
        }
    };

    MetricReport {
        per_language,
        average,
        averaged_over,
        averaging,
    }
}

//! Student-agnostic quality baselines: keyword/length rule scoring, token
//! length, verified accuracy and passthrough of externally produced scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TrajectoryDataset, TrajectoryRecord};
use crate::par;

/// Prompt used offline to produce the `llm_judged_quality` score column.
pub const LLM_JUDGE_PROMPT: &str = include_str!("../assets/llm_judge_prompt.txt");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionWeights {
    pub elaborated: f64,
    pub verification: f64,
    pub exploratory: f64,
    pub adaptive: f64,
}

impl Default for CriterionWeights {
    fn default() -> Self {
        Self {
            elaborated: 0.30,
            verification: 0.20,
            exploratory: 0.25,
            adaptive: 0.25,
        }
    }
}

impl CriterionWeights {
    fn as_array(&self) -> [f64; 4] {
        [self.elaborated, self.verification, self.exploratory, self.adaptive]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleQualityConfig {
    pub weights: CriterionWeights,
    pub verification: Vec<String>,
    pub exploratory: Vec<String>,
    pub adaptive: Vec<String>,
}

impl Default for RuleQualityConfig {
    fn default() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect();
        Self {
            weights: CriterionWeights::default(),
            verification: words(&["check", "verify"]),
            exploratory: words(&["perhaps", "might"]),
            adaptive: words(&["therefore", "since"]),
        }
    }
}

impl RuleQualityConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.weights.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidParameter(
                "rule weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "rule weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Raw criterion values for one text: word count, then the verification,
/// exploratory and adaptive keyword rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RawCriteria {
    pub elaborated: f64,
    pub verification: f64,
    pub exploratory: f64,
    pub adaptive: f64,
}

impl RawCriteria {
    fn as_array(&self) -> [f64; 4] {
        [self.elaborated, self.verification, self.exploratory, self.adaptive]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionScores {
    pub raw: RawCriteria,
    /// z-scores in the order elaborated, verification, exploratory, adaptive.
    pub z: [f64; 4],
    pub composite: f64,
}

/// Lowercased alphanumeric words.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

pub fn raw_criteria(text: &str, cfg: &RuleQualityConfig) -> RawCriteria {
    let ws = words(text);
    let n = ws.len();
    if n == 0 {
        log::warn!("empty text: rule criteria set to 0");
        return RawCriteria {
            elaborated: 0.0,
            verification: 0.0,
            exploratory: 0.0,
            adaptive: 0.0,
        };
    }
    let rate = |keys: &[String]| {
        ws.iter().filter(|w| keys.iter().any(|k| k == *w)).count() as f64 / n as f64
    };
    RawCriteria {
        elaborated: n as f64,
        verification: rate(&cfg.verification),
        exploratory: rate(&cfg.exploratory),
        adaptive: rate(&cfg.adaptive),
    }
}

/// Population z-scores; a constant column maps to zeros.
pub fn z_scores(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    let constant = values.iter().all(|&v| v == values[0]);
    if constant || sd == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / sd).collect()
}

/// Rule-based quality for a batch; z-scores are relative to the batch.
pub fn rule_based_quality_records(
    records: &[TrajectoryRecord],
    cfg: &RuleQualityConfig,
) -> Result<Vec<CriterionScores>> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let raw = par::try_map_ordered(records, |r| {
        r.text
            .as_deref()
            .map(|t| raw_criteria(t, cfg))
            .ok_or_else(|| Error::MissingText {
                record: r.key().to_string(),
            })
    })?;
    let columns: Vec<Vec<f64>> = (0..4)
        .map(|c| z_scores(&raw.iter().map(|r| r.as_array()[c]).collect::<Vec<_>>()))
        .collect();
    let w = cfg.weights.as_array();
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(i, raw)| {
            let z = [columns[0][i], columns[1][i], columns[2][i], columns[3][i]];
            let composite = (0..4).map(|c| w[c] * z[c]).sum();
            CriterionScores { raw, z, composite }
        })
        .collect())
}

pub fn rule_based_quality(
    ds: &TrajectoryDataset,
    cfg: &RuleQualityConfig,
) -> Result<Vec<CriterionScores>> {
    rule_based_quality_records(&ds.records, cfg)
}

pub fn avg_token_length(ds: &TrajectoryDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(ds.token_count() as f64 / ds.len() as f64)
}

pub fn verified_accuracy(ds: &TrajectoryDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for r in &ds.records {
        match r.correct {
            Some(true) => correct += 1,
            Some(false) => {}
            None => {
                return Err(Error::MissingLabel {
                    record: r.key().to_string(),
                })
            }
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Values of an external score column in record order. Every record lacking
/// the column is listed in the error.
pub fn external_column(records: &[TrajectoryRecord], column: &str) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(records.len());
    let mut missing = Vec::new();
    for r in records {
        match r.external_scores.get(column) {
            Some(&v) => out.push(v),
            None => missing.push(r.key().to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingExternalScore {
            column: column.to_string(),
            records: missing,
        });
    }
    Ok(out)
}

pub fn attach_external_scores(ds: &TrajectoryDataset, column: &str) -> Result<Vec<f64>> {
    external_column(&ds.records, column)
}

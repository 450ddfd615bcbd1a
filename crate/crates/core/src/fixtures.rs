//! Published dataset-level metric tables and post-training scores, embedded
//! so correlation and teacher ranking can run without any input files.

use crate::correlation::{load_score_tables, PerformanceTable};
use crate::error::Result;
use crate::model::{Provenance, ScoreTable};

pub const METRIC_SCORES_CSV: &str = include_str!("../fixtures/metric_scores.csv");
pub const PERFORMANCE_CSV: &str = include_str!("../fixtures/performance.csv");

/// Students in table order.
pub const STUDENTS: [&str; 5] = [
    "Qwen-3-14B",
    "LLaMA-3.1-8B",
    "Qwen-2.5-7B",
    "Qwen-3-4B",
    "Qwen-2.5-3B",
];

/// Metric rows of the summary correlation table, in its order.
pub const SUMMARY_METRICS: [&str; 12] = [
    "teacher_params_b",
    "teacher_performance",
    "token_length",
    "verified_accuracy",
    "llm_judged_quality",
    "rule_based_quality",
    "avg_surprisal",
    "avg_rank",
    "influence",
    "g_norm",
    "grace",
    "rsr",
];

pub fn metric_scores() -> Result<Vec<ScoreTable>> {
    load_score_tables(METRIC_SCORES_CSV.as_bytes(), Provenance::ExternalFixture)
}

pub fn performance() -> Result<PerformanceTable> {
    PerformanceTable::from_csv(PERFORMANCE_CSV.as_bytes())
}

/// Every metric column except the display-scale bookkeeping columns.
pub fn metric_columns(tables: &[ScoreTable]) -> Vec<String> {
    tables
        .first()
        .map(|t| {
            t.columns
                .iter()
                .filter(|c| !c.ends_with("_scale_exp"))
                .cloned()
                .collect()
        })
        .unwrap_or_default()
}

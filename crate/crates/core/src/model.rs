//! Domain types shared by every other module.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extraction cap used when neither a manifest nor a record supplies one.
pub const DEFAULT_K_EXT: u32 = 1000;

/// One response token scored under a student model.
///
/// Surprisal is in nats. `rank` is 1 plus the number of vocabulary entries the
/// student assigned strictly higher probability; when the true rank exceeded the
/// extraction cap, `rank` holds the cap and `rank_saturated` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenStat {
    #[serde(rename = "s")]
    pub surprisal: f64,
    #[serde(rename = "r")]
    pub rank: u32,
    #[serde(rename = "rs", default)]
    pub rank_saturated: bool,
    #[serde(rename = "ls", default, skip_serializing_if = "Option::is_none")]
    pub local_surprisal: Option<f64>,
    #[serde(rename = "h", default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
}

impl TokenStat {
    pub fn new(rank: u32, surprisal: f64) -> Self {
        Self {
            surprisal,
            rank,
            rank_saturated: false,
            local_surprisal: None,
            entropy: None,
        }
    }

    pub fn with_local_surprisal(mut self, ls: f64) -> Self {
        self.local_surprisal = Some(ls);
        self
    }

    pub fn with_entropy(mut self, h: f64) -> Self {
        self.entropy = Some(h);
        self
    }

    pub fn saturated(mut self) -> Self {
        self.rank_saturated = true;
        self
    }
}

/// Identity of a trajectory inside a dataset or candidate pool.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub problem_id: String,
    pub teacher_id: String,
    pub rollout_id: u32,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}#{}", self.problem_id, self.teacher_id, self.rollout_id)
    }
}

/// One (problem, teacher, rollout) trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub problem_id: String,
    pub teacher_id: String,
    pub rollout_id: u32,
    /// Extraction cap the ranks were computed under.
    pub k_ext: u32,
    pub tokens: Vec<TokenStat>,
    pub text: Option<String>,
    pub correct: Option<bool>,
    pub external_scores: BTreeMap<String, f64>,
}

impl TrajectoryRecord {
    pub fn new(
        problem_id: impl Into<String>,
        teacher_id: impl Into<String>,
        rollout_id: u32,
        tokens: Vec<TokenStat>,
    ) -> Self {
        Self {
            problem_id: problem_id.into(),
            teacher_id: teacher_id.into(),
            rollout_id,
            k_ext: DEFAULT_K_EXT,
            tokens,
            text: None,
            correct: None,
            external_scores: BTreeMap::new(),
        }
    }

    pub fn with_k_ext(mut self, k_ext: u32) -> Self {
        self.k_ext = k_ext;
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn with_correct(mut self, correct: bool) -> Self {
        self.correct = Some(correct);
        self
    }

    pub fn with_score(mut self, name: impl Into<String>, value: f64) -> Self {
        self.external_scores.insert(name.into(), value);
        self
    }

    pub fn key(&self) -> RecordKey {
        RecordKey {
            problem_id: self.problem_id.clone(),
            teacher_id: self.teacher_id.clone(),
            rollout_id: self.rollout_id,
        }
    }

    pub fn saturated_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.rank_saturated).count()
    }
}

/// A named collection of trajectories scored under one student.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub dataset_id: String,
    pub student_id: String,
    pub k_ext: u32,
    pub records: Vec<TrajectoryRecord>,
}

impl TrajectoryDataset {
    pub fn new(
        dataset_id: impl Into<String>,
        student_id: impl Into<String>,
        k_ext: u32,
        records: Vec<TrajectoryRecord>,
    ) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            student_id: student_id.into(),
            k_ext,
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.records.iter().map(|r| r.tokens.len()).sum()
    }

    pub fn saturation_fraction(&self) -> f64 {
        let tokens = self.token_count();
        if tokens == 0 {
            return 0.0;
        }
        let saturated: usize = self.records.iter().map(|r| r.saturated_count()).sum();
        saturated as f64 / tokens as f64
    }
}

/// Where a score column came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Computed,
    ExternalFixture,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Computed => f.write_str("computed"),
            Provenance::ExternalFixture => f.write_str("external-fixture"),
        }
    }
}

/// Dataset-level metric values for one student: rows are teacher datasets,
/// columns are metrics. Cells may be missing; correlation refuses them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub student_id: String,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub provenance: Vec<Provenance>,
    values: Vec<Vec<Option<f64>>>,
}

impl ScoreTable {
    pub fn new(student_id: impl Into<String>, rows: Vec<String>, columns: Vec<String>) -> Self {
        let values = vec![vec![None; columns.len()]; rows.len()];
        let provenance = vec![Provenance::Computed; columns.len()];
        Self {
            student_id: student_id.into(),
            rows,
            columns,
            provenance,
            values,
        }
    }

    pub fn row_index(&self, row: &str) -> Option<usize> {
        self.rows.iter().position(|r| r == row)
    }

    pub fn column_index(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == column)
    }

    pub fn set(&mut self, row: &str, column: &str, value: f64) -> Result<()> {
        let (r, c) = self.locate(row, column)?;
        self.values[r][c] = Some(value);
        Ok(())
    }

    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let (r, c) = self.locate(row, column).ok()?;
        self.values[r][c]
    }

    pub fn set_provenance(&mut self, column: &str, provenance: Provenance) -> Result<()> {
        let c = self
            .column_index(column)
            .ok_or_else(|| Error::UnknownMetric(column.to_string()))?;
        self.provenance[c] = provenance;
        Ok(())
    }

    /// The full column in row order, or the list of missing cells.
    pub fn column(&self, column: &str) -> Result<Vec<f64>> {
        let c = self
            .column_index(column)
            .ok_or_else(|| Error::UnknownMetric(column.to_string()))?;
        let mut out = Vec::with_capacity(self.rows.len());
        let mut missing = Vec::new();
        for (r, row) in self.rows.iter().enumerate() {
            match self.values[r][c] {
                Some(v) => out.push(v),
                None => missing.push(format!("{}:{}:{}", self.student_id, row, column)),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(Error::MissingCells { cells: missing })
        }
    }

    fn locate(&self, row: &str, column: &str) -> Result<(usize, usize)> {
        let r = self.row_index(row).ok_or_else(|| Error::MissingCells {
            cells: vec![format!("{}:{}:{}", self.student_id, row, column)],
        })?;
        let c = self
            .column_index(column)
            .ok_or_else(|| Error::UnknownMetric(column.to_string()))?;
        Ok((r, c))
    }
}

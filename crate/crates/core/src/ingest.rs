//! Streaming ingestion, serialization and validation of token-stats files.
//!
//! A token-stats file is UTF-8 JSON Lines, one trajectory per line:
//!
//! ```text
//! {"schema_version":"1","problem_id":"p1","teacher_id":"t","rollout_id":1,"k_ext":1000,
//!  "tokens":[{"s":0.41,"r":2,"rs":false}], "text":"...", "correct":true, "scores":{"g_norm":3.1}}
//! ```
//!
//! An optional sidecar `<stem>.manifest.json` names the dataset and student and
//! records the surprisal unit.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RecordKey, TokenStat, TrajectoryDataset, TrajectoryRecord, DEFAULT_K_EXT};

pub const SCHEMA_VERSION: &str = "1";
pub const SURPRISAL_UNIT: &str = "nats";

#[derive(Deserialize)]
struct WireRecord {
    schema_version: String,
    problem_id: String,
    teacher_id: String,
    rollout_id: u32,
    k_ext: u32,
    tokens: Vec<TokenStat>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    correct: Option<bool>,
    #[serde(default)]
    scores: Option<BTreeMap<String, f64>>,
}

#[derive(Serialize)]
struct WireRecordRef<'a> {
    schema_version: &'static str,
    problem_id: &'a str,
    teacher_id: &'a str,
    rollout_id: u32,
    k_ext: u32,
    tokens: &'a [TokenStat],
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    correct: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scores: Option<&'a BTreeMap<String, f64>>,
}

/// Sidecar metadata for a token-stats file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub student_id: String,
    #[serde(default = "default_unit")]
    pub surprisal_unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_ext: Option<u32>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extraction: BTreeMap<String, serde_json::Value>,
}

fn default_unit() -> String {
    SURPRISAL_UNIT.to_string()
}

impl DatasetManifest {
    pub fn new(dataset_id: impl Into<String>, student_id: impl Into<String>) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            student_id: student_id.into(),
            surprisal_unit: default_unit(),
            k_ext: None,
            extraction: BTreeMap::new(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.surprisal_unit != SURPRISAL_UNIT {
            return Err(Error::Manifest(format!(
                "surprisal unit `{}` is not `{SURPRISAL_UNIT}`",
                self.surprisal_unit
            )));
        }
        if self.k_ext == Some(0) {
            return Err(Error::Manifest("k_ext must be at least 1".into()));
        }
        Ok(())
    }
}

/// Path of the sidecar manifest belonging to a token-stats file.
pub fn manifest_path(data: &Path) -> PathBuf {
    let stem = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    data.with_file_name(format!("{stem}.manifest.json"))
}

fn invalid(line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::InvalidField {
        line,
        field: field.into(),
        message: message.into(),
    }
}

fn check_nonneg(line: usize, field: String, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(invalid(line, field, format!("non-finite value {v}")));
    }
    if v < 0.0 {
        return Err(invalid(line, field, format!("negative value {v}")));
    }
    Ok(())
}

fn decode_line(line_no: usize, line: &str) -> Result<TrajectoryRecord> {
    let wire: WireRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    if wire.schema_version != SCHEMA_VERSION {
        return Err(invalid(
            line_no,
            "schema_version",
            format!("unsupported version `{}`", wire.schema_version),
        ));
    }
    if wire.k_ext == 0 {
        return Err(invalid(line_no, "k_ext", "must be at least 1"));
    }
    for (i, t) in wire.tokens.iter().enumerate() {
        check_nonneg(line_no, format!("tokens[{i}].s"), t.surprisal)?;
        if t.rank < 1 {
            return Err(invalid(line_no, format!("tokens[{i}].r"), "rank must be at least 1"));
        }
        if t.rank > wire.k_ext {
            return Err(invalid(
                line_no,
                format!("tokens[{i}].r"),
                format!("rank {} exceeds k_ext {}", t.rank, wire.k_ext),
            ));
        }
        if t.rank_saturated && t.rank != wire.k_ext {
            return Err(invalid(
                line_no,
                format!("tokens[{i}].rs"),
                format!("saturated rank {} must equal k_ext {}", t.rank, wire.k_ext),
            ));
        }
        if let Some(ls) = t.local_surprisal {
            check_nonneg(line_no, format!("tokens[{i}].ls"), ls)?;
        }
        if let Some(h) = t.entropy {
            check_nonneg(line_no, format!("tokens[{i}].h"), h)?;
        }
    }
    if let Some(scores) = &wire.scores {
        for (name, v) in scores {
            if !v.is_finite() {
                return Err(invalid(line_no, format!("scores.{name}"), format!("non-finite value {v}")));
            }
        }
    }
    Ok(TrajectoryRecord {
        problem_id: wire.problem_id,
        teacher_id: wire.teacher_id,
        rollout_id: wire.rollout_id,
        k_ext: wire.k_ext,
        tokens: wire.tokens,
        text: wire.text,
        correct: wire.correct,
        external_scores: wire.scores.unwrap_or_default(),
    })
}

/// Single-pass reader over a token-stats stream.
///
/// Yields one item per non-blank line. After an error the reader keeps going,
/// so a validator can report every bad line; collectors stop at the first.
pub struct RecordReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    seen: HashSet<RecordKey>,
    k_ext: Option<u32>,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            seen: HashSet::new(),
            k_ext: None,
        }
    }

    /// Pins the extraction cap every record must carry.
    pub fn expect_k_ext(mut self, k_ext: u32) -> Self {
        self.k_ext = Some(k_ext);
        self
    }

    pub fn k_ext(&self) -> Option<u32> {
        self.k_ext
    }

    fn accept(&mut self, line_no: usize, line: &str) -> Result<TrajectoryRecord> {
        let record = decode_line(line_no, line)?;
        match self.k_ext {
            Some(expected) if expected != record.k_ext => {
                return Err(Error::MixedExtractionCap {
                    line: line_no,
                    expected,
                    found: record.k_ext,
                })
            }
            None => self.k_ext = Some(record.k_ext),
            _ => {}
        }
        if !self.seen.insert(record.key()) {
            return Err(Error::DuplicateRecord {
                line: line_no,
                problem_id: record.problem_id,
                teacher_id: record.teacher_id,
                rollout_id: record.rollout_id,
            });
        }
        Ok(record)
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = (usize, Result<TrajectoryRecord>);

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line_no = self.line_no;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    let err = if e.kind() == std::io::ErrorKind::InvalidData {
                        Error::Parse {
                            line: line_no,
                            message: "invalid UTF-8".into(),
                        }
                    } else {
                        Error::Io(e)
                    };
                    return Some((line_no, Err(err)));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some((line_no, self.accept(line_no, &line)));
        }
    }
}

/// Parses a whole token-stats stream into a dataset, preserving record order.
pub fn parse_token_stats<R: BufRead>(
    source: R,
    manifest: Option<&DatasetManifest>,
) -> Result<TrajectoryDataset> {
    if let Some(m) = manifest {
        m.check()?;
    }
    let mut reader = RecordReader::new(source);
    if let Some(k) = manifest.and_then(|m| m.k_ext) {
        reader = reader.expect_k_ext(k);
    }
    let mut records = Vec::new();
    for (_, rec) in reader.by_ref() {
        records.push(rec?);
    }
    let k_ext = reader.k_ext().unwrap_or(DEFAULT_K_EXT);
    let (dataset_id, student_id) = match manifest {
        Some(m) => (m.dataset_id.clone(), m.student_id.clone()),
        None => ("dataset".to_string(), "unknown".to_string()),
    };
    Ok(TrajectoryDataset {
        dataset_id,
        student_id,
        k_ext,
        records,
    })
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = File::open(path)?;
    let manifest: DatasetManifest = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    manifest.check()?;
    Ok(manifest)
}

/// Manifest next to `path`, or a default one named after the file stem.
pub fn manifest_for(path: &Path) -> Result<DatasetManifest> {
    let sidecar = manifest_path(path);
    if sidecar.exists() {
        read_manifest(&sidecar)
    } else {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Ok(DatasetManifest::new(stem, "unknown"))
    }
}

/// Loads a token-stats file together with its sidecar manifest.
pub fn load_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let manifest = manifest_for(path)?;
    let file = File::open(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
    parse_token_stats(BufReader::new(file), Some(&manifest))
        .map_err(|e| e.context(path.display().to_string()))
}

pub fn write_record<W: Write>(record: &TrajectoryRecord, mut out: W) -> Result<()> {
    let wire = WireRecordRef {
        schema_version: SCHEMA_VERSION,
        problem_id: &record.problem_id,
        teacher_id: &record.teacher_id,
        rollout_id: record.rollout_id,
        k_ext: record.k_ext,
        tokens: &record.tokens,
        text: record.text.as_deref(),
        correct: record.correct,
        scores: (!record.external_scores.is_empty()).then_some(&record.external_scores),
    };
    serde_json::to_writer(&mut out, &wire)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Writes the dataset in token-stats format. Output of this function parses
/// back to an equal dataset and re-serializes to identical bytes.
pub fn write_token_stats<W: Write>(ds: &TrajectoryDataset, mut out: W) -> Result<()> {
    for r in &ds.records {
        write_record(r, &mut out)?;
    }
    Ok(())
}

pub fn write_manifest<W: Write>(manifest: &DatasetManifest, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, manifest)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// `line N`, a record key, or `dataset`.
    pub location: String,
    pub message: String,
}

/// Outcome of [`validate_dataset`] or [`validate_source`]. Never fails; every
/// problem is listed with a location.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub dataset_id: String,
    pub records: usize,
    pub tokens: usize,
    pub saturated_tokens: usize,
    pub saturation_fraction: f64,
    pub k_ext: u32,
    pub r_max: u32,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Tally {
    records: usize,
    tokens: usize,
    saturated: usize,
    violations: Vec<Violation>,
}

impl Tally {
    fn new() -> Self {
        Self {
            records: 0,
            tokens: 0,
            saturated: 0,
            violations: Vec::new(),
        }
    }

    fn add(&mut self, location: impl FnOnce() -> String, r: &TrajectoryRecord) {
        self.records += 1;
        self.tokens += r.tokens.len();
        self.saturated += r.saturated_count();
        if r.tokens.is_empty() {
            self.violations.push(Violation {
                location: location(),
                message: "trajectory has no tokens".into(),
            });
        } else if r.tokens.iter().map(|t| t.surprisal).sum::<f64>() <= crate::metrics::EPSILON {
            self.violations.push(Violation {
                location: location(),
                message: "total surprisal is zero; ratio metrics are undefined".into(),
            });
        }
    }

    fn finish(mut self, dataset_id: String, k_ext: u32, r_max: u32) -> ValidationReport {
        if r_max == 0 {
            self.violations.push(Violation {
                location: "dataset".into(),
                message: "r_max must be at least 1".into(),
            });
        }
        if k_ext < r_max {
            self.violations.push(Violation {
                location: "dataset".into(),
                message: format!("extraction cap below clip threshold (k_ext {k_ext} < r_max {r_max})"),
            });
        }
        if self.records == 0 {
            self.violations.push(Violation {
                location: "dataset".into(),
                message: "dataset has no records".into(),
            });
        }
        let saturation_fraction = if self.tokens == 0 {
            0.0
        } else {
            self.saturated as f64 / self.tokens as f64
        };
        ValidationReport {
            dataset_id,
            records: self.records,
            tokens: self.tokens,
            saturated_tokens: self.saturated,
            saturation_fraction,
            k_ext,
            r_max,
            violations: self.violations,
        }
    }
}

/// Checks an in-memory dataset against a clip threshold.
pub fn validate_dataset(ds: &TrajectoryDataset, r_max: u32) -> ValidationReport {
    let mut tally = Tally::new();
    for r in &ds.records {
        tally.add(|| r.key().to_string(), r);
        if r.k_ext != ds.k_ext {
            tally.violations.push(Violation {
                location: r.key().to_string(),
                message: format!("k_ext {} differs from dataset k_ext {}", r.k_ext, ds.k_ext),
            });
        }
    }
    tally.finish(ds.dataset_id.clone(), ds.k_ext, r_max)
}

/// Validates a raw stream line by line, collecting every malformed line
/// instead of stopping at the first.
pub fn validate_source<R: BufRead>(
    source: R,
    manifest: Option<&DatasetManifest>,
    r_max: u32,
) -> ValidationReport {
    let mut tally = Tally::new();
    if let Some(Err(e)) = manifest.map(|m| m.check()) {
        tally.violations.push(Violation {
            location: "manifest".into(),
            message: e.to_string(),
        });
    }
    let mut reader = RecordReader::new(source);
    if let Some(k) = manifest.and_then(|m| m.k_ext) {
        reader = reader.expect_k_ext(k);
    }
    for (line, rec) in reader.by_ref() {
        match rec {
            Ok(r) => tally.add(|| format!("line {line}"), &r),
            Err(e) => tally.violations.push(Violation {
                location: format!("line {line}"),
                message: match e {
                    Error::Parse { message, .. } => message,
                    Error::InvalidField { field, message, .. } => format!("{field}: {message}"),
                    other => other.to_string(),
                },
            }),
        }
    }
    let k_ext = reader.k_ext().unwrap_or(DEFAULT_K_EXT);
    let dataset_id = manifest
        .map(|m| m.dataset_id.clone())
        .unwrap_or_else(|| "dataset".into());
    tally.finish(dataset_id, k_ext, r_max)
}

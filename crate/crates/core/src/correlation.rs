//! Rank and product-moment correlation between metric columns and
//! post-training performance, aggregated across students.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Provenance, ScoreTable};

/// Step added per `tie_order` unit when resolving rounded performance ties.
pub const TIE_STEP: f64 = 1e-6;

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        // positions i+1 ..= j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::TooFewPoints(xs.len()));
    }
    if let Some(&v) = xs.iter().chain(ys).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "correlation input".into(),
            value: v,
        });
    }
    for v in [xs, ys] {
        if v.iter().all(|&x| x == v[0]) {
            return Err(Error::ConstantVector);
        }
    }
    Ok(())
}

/// Two-pass product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantVector);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Post-training score per (student, teacher), teachers in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerformanceTable {
    students: Vec<String>,
    scores: BTreeMap<String, Vec<(String, f64)>>,
}

impl PerformanceTable {
    pub fn insert(&mut self, student: &str, teacher: &str, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::NonFinite {
                what: format!("performance {student}:{teacher}"),
                value: score,
            });
        }
        if !self.scores.contains_key(student) {
            self.students.push(student.to_string());
        }
        let row = self.scores.entry(student.to_string()).or_default();
        if row.iter().any(|(t, _)| t == teacher) {
            return Err(Error::InvalidParameter(format!(
                "duplicate performance entry {student}:{teacher}"
            )));
        }
        row.push((teacher.to_string(), score));
        Ok(())
    }

    pub fn students(&self) -> &[String] {
        &self.students
    }

    pub fn get(&self, student: &str, teacher: &str) -> Option<f64> {
        self.scores
            .get(student)?
            .iter()
            .find(|(t, _)| t == teacher)
            .map(|(_, v)| *v)
    }

    pub fn teachers(&self, student: &str) -> Vec<&str> {
        self.scores
            .get(student)
            .map(|r| r.iter().map(|(t, _)| t.as_str()).collect())
            .unwrap_or_default()
    }

    /// Reads `student,teacher,score[,tie_order]`; lines starting with `#` are
    /// comments. The effective value is `score + TIE_STEP * tie_order`.
    pub fn from_csv<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(source);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (s, t, v) = match (col("student"), col("teacher"), col("score")) {
            (Some(s), Some(t), Some(v)) => (s, t, v),
            _ => {
                return Err(Error::Manifest(
                    "performance CSV needs student, teacher and score columns".into(),
                ))
            }
        };
        let tie = col("tie_order");
        let mut table = Self::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = rec.position().map_or(i + 2, |p| p.line() as usize);
            let num = |c: usize, field: &str| -> Result<f64> {
                let raw = rec.get(c).unwrap_or("");
                raw.parse::<f64>().map_err(|_| Error::InvalidField {
                    line,
                    field: field.into(),
                    message: format!("`{raw}` is not a number"),
                })
            };
            let mut score = num(v, "score")?;
            if let Some(c) = tie {
                if !rec.get(c).unwrap_or("").is_empty() {
                    score += TIE_STEP * num(c, "tie_order")?;
                }
            }
            table.insert(&rec[s], &rec[t], score)?;
        }
        Ok(table)
    }
}

/// Reads a wide score CSV (`student,teacher,<metric>...`, `#` comments) into
/// one table per student, in first-appearance order. Empty cells stay missing.
pub fn load_score_tables<R: Read>(source: R, provenance: Provenance) -> Result<Vec<ScoreTable>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("student") || headers.get(1) != Some("teacher") {
        return Err(Error::Manifest(
            "score CSV must start with student,teacher columns".into(),
        ));
    }
    let metrics: Vec<String> = headers.iter().skip(2).map(String::from).collect();
    let mut rows: Vec<(String, String, Vec<Option<f64>>, usize)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        let mut values = Vec::with_capacity(metrics.len());
        for (c, m) in metrics.iter().enumerate() {
            let raw = rec.get(c + 2).unwrap_or("");
            values.push(if raw.is_empty() {
                None
            } else {
                Some(raw.parse::<f64>().map_err(|_| Error::InvalidField {
                    line,
                    field: m.clone(),
                    message: format!("`{raw}` is not a number"),
                })?)
            });
        }
        rows.push((rec[0].to_string(), rec[1].to_string(), values, line));
    }
    let mut students: Vec<String> = Vec::new();
    for (s, ..) in &rows {
        if !students.contains(s) {
            students.push(s.clone());
        }
    }
    let mut tables = Vec::with_capacity(students.len());
    for student in students {
        let mine: Vec<_> = rows.iter().filter(|r| r.0 == student).collect();
        let teachers: Vec<String> = mine.iter().map(|r| r.1.clone()).collect();
        let mut table = ScoreTable::new(student.clone(), teachers, metrics.clone());
        for (_, teacher, values, line) in &mine {
            if table.rows.iter().filter(|t| *t == teacher).count() > 1 {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("duplicate row {student}:{teacher}"),
                });
            }
            for (m, v) in metrics.iter().zip(values) {
                if let Some(v) = v {
                    table.set(teacher, m, *v)?;
                }
            }
        }
        for m in &metrics {
            table.set_provenance(m, provenance)?;
        }
        tables.push(table);
    }
    Ok(tables)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellCorrelation {
    pub student: String,
    pub spearman: f64,
    pub pearson: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricCorrelation {
    pub metric: String,
    pub cells: Vec<CellCorrelation>,
    /// |mean over students of the signed coefficient|.
    pub spearman_aggregate: f64,
    pub pearson_aggregate: f64,
}

impl MetricCorrelation {
    pub fn cell(&self, student: &str) -> Option<&CellCorrelation> {
        self.cells.iter().find(|c| c.student == student)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub students: Vec<String>,
    pub metrics: Vec<MetricCorrelation>,
}

impl CorrelationReport {
    pub fn metric(&self, name: &str) -> Option<&MetricCorrelation> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

/// Correlates each requested metric with performance for every student table.
/// All missing or unaligned cells are collected into one error.
pub fn correlate_table(
    scores: &[ScoreTable],
    perf: &PerformanceTable,
    metrics: &[String],
) -> Result<CorrelationReport> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter("no score tables".into()));
    }
    let mut missing = Vec::new();
    let mut aligned: Vec<(&ScoreTable, Vec<f64>)> = Vec::new();
    for table in scores {
        let mut ys = Vec::with_capacity(table.rows.len());
        for teacher in &table.rows {
            match perf.get(&table.student_id, teacher) {
                Some(v) => ys.push(v),
                None => missing.push(format!("performance:{}:{}", table.student_id, teacher)),
            }
        }
        for teacher in perf.teachers(&table.student_id) {
            if table.row_index(teacher).is_none() {
                missing.push(format!("{}:{}", table.student_id, teacher));
            }
        }
        for m in metrics {
            if table.column_index(m).is_none() {
                return Err(Error::UnknownMetric(m.clone()));
            }
            if let Err(Error::MissingCells { cells }) = table.column(m) {
                missing.extend(cells);
            }
        }
        aligned.push((table, ys));
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells { cells: missing });
    }
    let mut rows = Vec::with_capacity(metrics.len());
    for m in metrics {
        let mut cells = Vec::with_capacity(aligned.len());
        for (table, ys) in &aligned {
            let xs = table.column(m)?;
            let ctx = |e: Error| e.context(format!("{}:{}", table.student_id, m));
            cells.push(CellCorrelation {
                student: table.student_id.clone(),
                spearman: spearman(&xs, ys).map_err(ctx)?,
                pearson: pearson(&xs, ys).map_err(ctx)?,
                n: xs.len(),
            });
        }
        let k = cells.len() as f64;
        let spearman_aggregate = (cells.iter().map(|c| c.spearman).sum::<f64>() / k).abs();
        let pearson_aggregate = (cells.iter().map(|c| c.pearson).sum::<f64>() / k).abs();
        rows.push(MetricCorrelation {
            metric: m.clone(),
            cells,
            spearman_aggregate,
            pearson_aggregate,
        });
    }
    Ok(CorrelationReport {
        students: scores.iter().map(|t| t.student_id.clone()).collect(),
        metrics: rows,
    })
}

/// Long-format CSV with signed coefficients; aggregate rows use student `average`.
pub fn write_report_csv<W: Write>(report: &CorrelationReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "student", "spearman", "pearson", "n"])?;
    for m in &report.metrics {
        for c in &m.cells {
            w.write_record([
                m.metric.clone(),
                c.student.clone(),
                format!("{:.6}", c.spearman),
                format!("{:.6}", c.pearson),
                c.n.to_string(),
            ])?;
        }
        w.write_record([
            m.metric.clone(),
            "average".into(),
            format!("{:.6}", m.spearman_aggregate),
            format!("{:.6}", m.pearson_aggregate),
            String::new(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    Spearman,
    Pearson,
}

/// Aligned table of absolute coefficients, one row per metric, one column per
/// student plus the aggregate.
pub fn render_text(report: &CorrelationReport, which: Coefficient) -> String {
    let label_w = report
        .metrics
        .iter()
        .map(|m| m.metric.len())
        .max()
        .unwrap_or(0)
        .max("metric".len());
    let col_w = report
        .students
        .iter()
        .map(|s| s.len())
        .max()
        .unwrap_or(0)
        .max(8);
    let mut out = format!("{:<label_w$}", "metric");
    for s in &report.students {
        out.push_str(&format!("  {s:>col_w$}"));
    }
    out.push_str(&format!("  {:>col_w$}\n", "average"));
    for m in &report.metrics {
        out.push_str(&format!("{:<label_w$}", m.metric));
        for c in &m.cells {
            let v = match which {
                Coefficient::Spearman => c.spearman,
                Coefficient::Pearson => c.pearson,
            };
            out.push_str(&format!("  {:>col_w$.3}", v.abs()));
        }
        let agg = match which {
            Coefficient::Spearman => m.spearman_aggregate,
            Coefficient::Pearson => m.pearson_aggregate,
        };
        out.push_str(&format!("  {agg:>col_w$.3}\n"));
    }
    out
}

//! Per-problem trajectory selection and dataset-level teacher ranking.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{Direction, Metric, MetricParams};
use crate::model::{TrajectoryDataset, TrajectoryRecord};
use crate::par;

/// Candidate trajectories for one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub problem_id: String,
    pub candidates: Vec<TrajectoryRecord>,
}

impl CandidatePool {
    pub fn new(problem_id: impl Into<String>, candidates: Vec<TrajectoryRecord>) -> Result<Self> {
        let problem_id = problem_id.into();
        if candidates.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "pool `{problem_id}` has no candidates"
            )));
        }
        if let Some(c) = candidates.iter().find(|c| c.problem_id != problem_id) {
            return Err(Error::InvalidParameter(format!(
                "candidate {} does not belong to pool `{problem_id}`",
                c.key()
            )));
        }
        Ok(Self {
            problem_id,
            candidates,
        })
    }
}

/// Groups records by problem; pools come out in problem-id order, candidates
/// in input order.
pub fn group_pools(records: impl IntoIterator<Item = TrajectoryRecord>) -> Vec<CandidatePool> {
    let mut by_problem: BTreeMap<String, Vec<TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        by_problem.entry(r.problem_id.clone()).or_default().push(r);
    }
    by_problem
        .into_iter()
        .map(|(problem_id, candidates)| CandidatePool {
            problem_id,
            candidates,
        })
        .collect()
}

/// Keeps only candidates from the listed teachers; pools left empty are dropped.
pub fn restrict_teachers(pools: &[CandidatePool], teachers: &[String]) -> Vec<CandidatePool> {
    pools
        .iter()
        .filter_map(|p| {
            let candidates: Vec<_> = p
                .candidates
                .iter()
                .filter(|c| teachers.contains(&c.teacher_id))
                .cloned()
                .collect();
            (!candidates.is_empty()).then(|| CandidatePool {
                problem_id: p.problem_id.clone(),
                candidates,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Choice {
    pub problem_id: String,
    pub teacher_id: String,
    pub rollout_id: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeacherShare {
    pub teacher_id: String,
    pub selected: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionManifest {
    pub metric: String,
    pub direction: Direction,
    pub params: BTreeMap<String, f64>,
    pub correctness_filtered: bool,
    pub choices: Vec<Choice>,
    pub composition: Vec<TeacherShare>,
}

impl SelectionManifest {
    fn new(
        metric: String,
        direction: Direction,
        params: BTreeMap<String, f64>,
        correctness_filtered: bool,
        choices: Vec<Choice>,
    ) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &choices {
            *counts.entry(c.teacher_id.as_str()).or_default() += 1;
        }
        let total = choices.len() as f64;
        let composition = counts
            .into_iter()
            .map(|(t, n)| TeacherShare {
                teacher_id: t.to_string(),
                selected: n,
                percent: 100.0 * n as f64 / total,
            })
            .collect();
        Self {
            metric,
            direction,
            params,
            correctness_filtered,
            choices,
            composition,
        }
    }

    /// One JSON object per chosen trajectory.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for c in &self.choices {
            serde_json::to_writer(&mut out, c)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn render_composition(&self) -> String {
        let width = self
            .composition
            .iter()
            .map(|s| s.teacher_id.len())
            .max()
            .unwrap_or(0)
            .max("teacher".len());
        let mut out = format!("{:<width$}  {:>8}  {:>8}\n", "teacher", "selected", "percent");
        for s in &self.composition {
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>7.2}%\n",
                s.teacher_id, s.selected, s.percent
            ));
        }
        out
    }
}

/// Index of the preferred candidate among `idx`. Equal values go to the
/// lexicographically smallest (teacher_id, rollout_id).
fn best_of(
    candidates: &[TrajectoryRecord],
    values: &[f64],
    idx: impl Iterator<Item = usize>,
    direction: Direction,
) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in idx {
        best = Some(match best {
            None => i,
            Some(b) => {
                let (vi, vb) = (values[i], values[b]);
                let key = |k: usize| (&candidates[k].teacher_id, candidates[k].rollout_id);
                if direction.better(vi, vb) || (vi == vb && key(i) < key(b)) {
                    i
                } else {
                    b
                }
            }
        });
    }
    best
}

/// Picks one candidate per pool given precomputed values (one slice per pool).
/// With `filter_correct`, pools holding at least one correct candidate are
/// restricted to correct candidates first.
pub fn select_by_values(
    pools: &[CandidatePool],
    values: &[Vec<f64>],
    direction: Direction,
    filter_correct: bool,
) -> Result<Vec<Choice>> {
    if pools.len() != values.len() {
        return Err(Error::LengthMismatch {
            left: pools.len(),
            right: values.len(),
        });
    }
    let mut choices = Vec::with_capacity(pools.len());
    for (pool, vals) in pools.iter().zip(values) {
        let cands = &pool.candidates;
        if cands.is_empty() || cands.len() != vals.len() {
            return Err(Error::InvalidParameter(format!(
                "pool `{}`: {} candidates, {} values",
                pool.problem_id,
                cands.len(),
                vals.len()
            )));
        }
        let correct = || (0..cands.len()).filter(|&i| cands[i].correct == Some(true));
        let pick = if filter_correct && correct().next().is_some() {
            best_of(cands, vals, correct(), direction)
        } else {
            best_of(cands, vals, 0..cands.len(), direction)
        }
        .expect("non-empty pool");
        let c = &cands[pick];
        choices.push(Choice {
            problem_id: pool.problem_id.clone(),
            teacher_id: c.teacher_id.clone(),
            rollout_id: c.rollout_id,
            value: vals[pick],
        });
    }
    Ok(choices)
}

/// Scores every candidate. Batch-relative metrics are standardized over all
/// candidates of all pools together.
pub fn score_pools(
    pools: &[CandidatePool],
    metric: &Metric,
    params: &MetricParams,
) -> Result<Vec<Vec<f64>>> {
    if metric.is_batch_relative() {
        let all: Vec<TrajectoryRecord> = pools
            .iter()
            .flat_map(|p| p.candidates.iter().cloned())
            .collect();
        let flat = metric.score_records(&all, params)?;
        let mut out = Vec::with_capacity(pools.len());
        let mut at = 0;
        for p in pools {
            out.push(flat[at..at + p.candidates.len()].to_vec());
            at += p.candidates.len();
        }
        return Ok(out);
    }
    par::try_map_ordered(pools, |p| {
        metric
            .score_records(&p.candidates, params)
            .map_err(|e| e.context(format!("pool `{}`", p.problem_id)))
    })
}

fn run_selection(
    pools: &[CandidatePool],
    metric: &Metric,
    params: &MetricParams,
    direction: Direction,
    filter_correct: bool,
) -> Result<SelectionManifest> {
    if pools.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let values = score_pools(pools, metric, params)?;
    let choices = select_by_values(pools, &values, direction, filter_correct)?;
    Ok(SelectionManifest::new(
        metric.name(),
        direction,
        metric.params_echo(params),
        filter_correct,
        choices,
    ))
}

/// One trajectory per pool, extremizing `metric` in `direction`.
pub fn select_trajectories(
    pools: &[CandidatePool],
    metric: &Metric,
    params: &MetricParams,
    direction: Direction,
) -> Result<SelectionManifest> {
    run_selection(pools, metric, params, direction, false)
}

/// As [`select_trajectories`], preferring correct candidates where any exist.
pub fn correctness_filtered_select(
    pools: &[CandidatePool],
    metric: &Metric,
    params: &MetricParams,
    direction: Direction,
) -> Result<SelectionManifest> {
    run_selection(pools, metric, params, direction, true)
}

/// Seeded uniform sample of `n` records without replacement, kept in the
/// dataset's record order.
pub fn sample_for_teacher(ds: &TrajectoryDataset, n: usize, seed: u64) -> Result<TrajectoryDataset> {
    if n > ds.len() {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: ds.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, ds.len(), n).into_vec();
    idx.sort_unstable();
    Ok(TrajectoryDataset {
        dataset_id: ds.dataset_id.clone(),
        student_id: ds.student_id.clone(),
        k_ext: ds.k_ext,
        records: idx.into_iter().map(|i| ds.records[i].clone()).collect(),
    })
}

/// A teacher to rank: either its trajectories or an already computed score.
#[derive(Debug, Clone)]
pub enum TeacherInput {
    Dataset(TrajectoryDataset),
    Score(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedTeacher {
    pub position: usize,
    pub teacher_id: String,
    pub score: f64,
    pub top1: bool,
    pub top2: bool,
}

/// Orders teachers by dataset-level score; equal scores by teacher id.
pub fn rank_scores(scores: &[(String, f64)], direction: Direction) -> Result<Vec<RankedTeacher>> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter("no teachers to rank".into()));
    }
    if let Some((t, v)) = scores.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("score of teacher `{t}`"),
            value: *v,
        });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|(ta, a), (tb, b)| {
        let ord = match direction {
            Direction::Min => a.total_cmp(b),
            Direction::Max => b.total_cmp(a),
        };
        ord.then_with(|| ta.cmp(tb))
    });
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, (teacher_id, score))| RankedTeacher {
            position: i + 1,
            teacher_id,
            score,
            top1: i == 0,
            top2: i == 1,
        })
        .collect())
}

/// Scores each teacher (dataset-level) and ranks them. Batch-relative metrics
/// are standardized over the union of all supplied datasets.
pub fn rank_teachers(
    teachers: &[(String, TeacherInput)],
    metric: &Metric,
    params: &MetricParams,
    direction: Direction,
) -> Result<Vec<RankedTeacher>> {
    let scores: Vec<(String, f64)> = if metric.is_batch_relative() {
        let all: Vec<TrajectoryRecord> = teachers
            .iter()
            .filter_map(|(_, t)| match t {
                TeacherInput::Dataset(ds) => Some(ds.records.iter().cloned()),
                TeacherInput::Score(_) => None,
            })
            .flatten()
            .collect();
        let flat = if all.is_empty() {
            Vec::new()
        } else {
            metric.score_records(&all, params)?
        };
        let mut at = 0;
        let mut out = Vec::with_capacity(teachers.len());
        for (id, t) in teachers {
            let v = match t {
                TeacherInput::Score(v) => *v,
                TeacherInput::Dataset(ds) => {
                    if ds.is_empty() {
                        return Err(Error::EmptyDataset.context(format!("teacher `{id}`")));
                    }
                    let slice = &flat[at..at + ds.len()];
                    at += ds.len();
                    slice.iter().sum::<f64>() / slice.len() as f64
                }
            };
            out.push((id.clone(), v));
        }
        out
    } else {
        par::try_map_ordered(teachers, |(id, t)| {
            let v = match t {
                TeacherInput::Score(v) => Ok(*v),
                TeacherInput::Dataset(ds) => metric.dataset_score(ds, params),
            };
            v.map(|v| (id.clone(), v))
                .map_err(|e| e.context(format!("teacher `{id}`")))
        })?
    };
    rank_scores(&scores, direction)
}

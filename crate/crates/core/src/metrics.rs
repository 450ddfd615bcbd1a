//! Token-, trajectory- and dataset-level suitability metrics.
//!
//! All sums run in token order (and record order for datasets), so values are
//! bit-reproducible regardless of how many workers evaluated the records.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TokenStat, TrajectoryDataset, TrajectoryRecord};
use crate::par;
use crate::quality::{self, RuleQualityConfig};

/// Zero guard for surprisal denominators.
pub const EPSILON: f64 = 1e-12;

pub const DEFAULT_R_MAX: u32 = 100;
pub const DEFAULT_FILTER_H: f64 = 30.0;

/// Rank clipping threshold `r_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ClipThreshold(u32);

impl ClipThreshold {
    pub fn new(r_max: u32) -> Result<Self> {
        if r_max == 0 {
            return Err(Error::InvalidParameter("r_max must be at least 1".into()));
        }
        Ok(Self(r_max))
    }

    pub fn r_max(self) -> u32 {
        self.0
    }

    /// Fails when ranks extracted under `k_ext` cannot be clipped at this threshold.
    pub fn check_cap(self, k_ext: u32) -> Result<()> {
        if k_ext < self.0 {
            Err(Error::CapBelowClip {
                k_ext,
                r_max: self.0,
            })
        } else {
            Ok(())
        }
    }
}

impl Default for ClipThreshold {
    fn default() -> Self {
        Self(DEFAULT_R_MAX)
    }
}

impl TryFrom<u32> for ClipThreshold {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ClipThreshold> for u32 {
    fn from(c: ClipThreshold) -> u32 {
        c.0
    }
}

/// A named metric value with the parameters it was computed under.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    pub params: BTreeMap<String, f64>,
}

pub fn clip_rank(rank: u32, clip: ClipThreshold) -> u32 {
    rank.min(clip.0)
}

/// Rank over surprisal for a single token, with the unclipped rank.
pub fn token_rsr(t: &TokenStat) -> Result<f64> {
    token_ratio(0, t.rank, t.surprisal)
}

fn token_ratio(index: usize, rank: u32, surprisal: f64) -> Result<f64> {
    if surprisal <= EPSILON {
        return Err(Error::UnboundedTokenRatio { index, surprisal });
    }
    Ok(rank as f64 / surprisal)
}

fn nonempty(traj: &TrajectoryRecord) -> Result<&[TokenStat]> {
    if traj.tokens.is_empty() {
        Err(Error::EmptyTrajectory)
    } else {
        Ok(&traj.tokens)
    }
}

fn clipped_tokens(traj: &TrajectoryRecord, clip: ClipThreshold) -> Result<&[TokenStat]> {
    let tokens = nonempty(traj)?;
    clip.check_cap(traj.k_ext)?;
    Ok(tokens)
}

fn clipped_rank_sum(tokens: &[TokenStat], clip: ClipThreshold) -> f64 {
    tokens
        .iter()
        .map(|t| clip_rank(t.rank, clip) as f64)
        .sum()
}

fn surprisal_sum(tokens: &[TokenStat]) -> f64 {
    tokens.iter().map(|t| t.surprisal).sum()
}

fn guard_total(total: f64) -> Result<f64> {
    if total > EPSILON {
        Ok(total)
    } else {
        Err(Error::ZeroSurprisal { total })
    }
}

/// Trajectory-level rank-surprisal ratio: summed clipped ranks over summed
/// surprisals. Lower means better suited to the student.
pub fn trajectory_rsr(traj: &TrajectoryRecord, clip: ClipThreshold) -> Result<f64> {
    let tokens = clipped_tokens(traj, clip)?;
    let s = guard_total(surprisal_sum(tokens))?;
    Ok(clipped_rank_sum(tokens, clip) / s)
}

/// Surprisal-weighted mean of the clipped token ratios. Algebraically equal to
/// [`trajectory_rsr`]; computed through the per-token ratios so the two can be
/// checked against each other. A zero-surprisal token contributes its limit
/// `s * (r / s) = r`.
pub fn weighted_avg_token_rsr(traj: &TrajectoryRecord, clip: ClipThreshold) -> Result<f64> {
    let tokens = clipped_tokens(traj, clip)?;
    let s_total = guard_total(surprisal_sum(tokens))?;
    let mut num = 0.0;
    for t in tokens {
        let r = clip_rank(t.rank, clip) as f64;
        num += if t.surprisal > 0.0 {
            t.surprisal * (r / t.surprisal)
        } else {
            r
        };
    }
    Ok(num / s_total)
}

pub fn avg_surprisal(traj: &TrajectoryRecord) -> Result<f64> {
    let tokens = nonempty(traj)?;
    Ok(surprisal_sum(tokens) / tokens.len() as f64)
}

/// Mean of the precomputed local-context surprisal field.
pub fn avg_local_surprisal(traj: &TrajectoryRecord) -> Result<f64> {
    let tokens = nonempty(traj)?;
    let mut sum = 0.0;
    for (index, t) in tokens.iter().enumerate() {
        sum += t
            .local_surprisal
            .ok_or(Error::MissingLocalSurprisal { index })?;
    }
    Ok(sum / tokens.len() as f64)
}

/// Mean token rank, optionally clipped. Unclipped means are refused when any
/// rank is saturated, since the stored value is only a lower bound.
pub fn avg_rank(traj: &TrajectoryRecord, clip: Option<ClipThreshold>) -> Result<f64> {
    let tokens = nonempty(traj)?;
    let n = tokens.len() as f64;
    match clip {
        Some(c) => {
            c.check_cap(traj.k_ext)?;
            Ok(clipped_rank_sum(tokens, c) / n)
        }
        None => {
            let saturated = traj.saturated_count();
            if saturated > 0 {
                return Err(Error::SaturatedRanks {
                    fraction: saturated as f64 / n,
                });
            }
            Ok(tokens.iter().map(|t| t.rank as f64).sum::<f64>() / n)
        }
    }
}

/// Plain mean of unclipped token ratios over every token.
pub fn avg_token_rsr(traj: &TrajectoryRecord) -> Result<f64> {
    let tokens = nonempty(traj)?;
    let mut sum = 0.0;
    for (i, t) in tokens.iter().enumerate() {
        sum += token_ratio(i, t.rank, t.surprisal)?;
    }
    Ok(sum / tokens.len() as f64)
}

/// Number of tokens kept by the top-`h`% surprisal filter: `ceil(h% * len)`.
pub fn filtered_count(len: usize, h: f64) -> usize {
    let exact = h * len as f64 / 100.0;
    // absorb representation error so that e.g. 30% of 10 keeps 3 tokens
    let k = (exact - 1e-9).ceil() as usize;
    k.clamp(1, len.max(1))
}

/// Mean clipped token ratio over the `ceil(h% * T)` highest-surprisal tokens.
/// Equal surprisals keep the earlier token first.
pub fn filtered_avg_token_rsr(
    traj: &TrajectoryRecord,
    h: f64,
    clip: ClipThreshold,
) -> Result<f64> {
    if !(h > 0.0 && h <= 100.0) {
        return Err(Error::InvalidParameter(format!(
            "filter percentage {h} outside (0, 100]"
        )));
    }
    let tokens = clipped_tokens(traj, clip)?;
    let keep = filtered_count(tokens.len(), h);
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    // stable sort: ties stay in token order
    order.sort_by(|&a, &b| tokens[b].surprisal.total_cmp(&tokens[a].surprisal));
    let mut selected = order[..keep].to_vec();
    selected.sort_unstable();
    let mut sum = 0.0;
    for i in selected {
        let t = &tokens[i];
        sum += token_ratio(i, clip_rank(t.rank, clip), t.surprisal)?;
    }
    Ok(sum / keep as f64)
}

/// Mean over tokens of (clipped rank - surprisal).
pub fn rank_minus_surprisal(traj: &TrajectoryRecord, clip: ClipThreshold) -> Result<f64> {
    let tokens = clipped_tokens(traj, clip)?;
    let sum: f64 = tokens
        .iter()
        .map(|t| clip_rank(t.rank, clip) as f64 - t.surprisal)
        .sum();
    Ok(sum / tokens.len() as f64)
}

/// Mean clipped rank over mean token entropy.
pub fn rank_entropy_ratio(traj: &TrajectoryRecord, clip: ClipThreshold) -> Result<f64> {
    let tokens = clipped_tokens(traj, clip)?;
    let mut h_sum = 0.0;
    for (index, t) in tokens.iter().enumerate() {
        h_sum += t.entropy.ok_or(Error::MissingEntropy { index })?;
    }
    let h_sum = guard_total(h_sum)?;
    Ok(clipped_rank_sum(tokens, clip) / h_sum)
}

/// `sum(clipped_rank^p_rank) / sum(surprisal^p_surp)`.
pub fn power_rsr(
    traj: &TrajectoryRecord,
    clip: ClipThreshold,
    p_rank: f64,
    p_surp: f64,
) -> Result<f64> {
    if !p_rank.is_finite() || !p_surp.is_finite() || p_rank <= 0.0 || p_surp <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "exponents must be positive and finite (rank {p_rank}, surprisal {p_surp})"
        )));
    }
    let tokens = clipped_tokens(traj, clip)?;
    let num: f64 = tokens
        .iter()
        .map(|t| (clip_rank(t.rank, clip) as f64).powf(p_rank))
        .sum();
    let den: f64 = tokens.iter().map(|t| t.surprisal.powf(p_surp)).sum();
    Ok(num / guard_total(den)?)
}

/// Per-trajectory mean clipped rank and mean surprisal.
pub fn trajectory_means(traj: &TrajectoryRecord, clip: ClipThreshold) -> Result<(f64, f64)> {
    let tokens = clipped_tokens(traj, clip)?;
    let n = tokens.len() as f64;
    let s = surprisal_sum(tokens);
    guard_total(s)?;
    Ok((clipped_rank_sum(tokens, clip) / n, s / n))
}

fn with_record<T>(r: &TrajectoryRecord, res: Result<T>) -> Result<T> {
    res.map_err(|e| e.context(format!("record {}", r.key())))
}

/// Dataset-level ratio: sum of per-trajectory mean clipped ranks over the sum
/// of per-trajectory mean surprisals, i.e. the mean-surprisal-weighted average
/// of trajectory ratios.
pub fn dataset_rsr(ds: &TrajectoryDataset, clip: ClipThreshold) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    clip.check_cap(ds.k_ext)?;
    let means = par::try_map_ordered(&ds.records, |r| with_record(r, trajectory_means(r, clip)))?;
    let (mut r_sum, mut s_sum) = (0.0, 0.0);
    for (r, s) in means {
        r_sum += r;
        s_sum += s;
    }
    Ok(r_sum / s_sum)
}

/// Unweighted mean of a trajectory-level metric across the dataset.
pub fn dataset_simple_mean<F>(ds: &TrajectoryDataset, metric: F) -> Result<f64>
where
    F: Fn(&TrajectoryRecord) -> Result<f64> + Sync + Send,
{
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let values = par::try_map_ordered(&ds.records, |r| with_record(r, metric(r)))?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Selection direction for a metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Min,
    Max,
}

impl Direction {
    /// True when `a` is strictly preferred over `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Min => a < b,
            Direction::Max => a > b,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Min => "min",
            Direction::Max => "max",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(Direction::Min),
            "max" => Ok(Direction::Max),
            other => Err(Error::InvalidParameter(format!(
                "direction `{other}` (expected min or max)"
            ))),
        }
    }
}

/// Parameters shared by the named metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub clip: ClipThreshold,
    pub filter_h: f64,
    pub p_rank: f64,
    pub p_surp: f64,
    pub rule: RuleQualityConfig,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            clip: ClipThreshold::default(),
            filter_h: DEFAULT_FILTER_H,
            p_rank: 1.0,
            p_surp: 1.0,
            rule: RuleQualityConfig::default(),
        }
    }
}

/// Every metric addressable by name from reports, selection and the CLI.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Metric {
    Rsr,
    WeightedTokenRsr,
    AvgSurprisal,
    AvgLocalSurprisal,
    AvgRank,
    AvgRankClipped,
    AvgTokenRsr,
    FilteredTokenRsr,
    RankMinusSurprisal,
    RankEntropyRatio,
    PowerRsr,
    TokenLength,
    VerifiedAccuracy,
    RuleBasedQuality,
    External(String),
}

impl Metric {
    pub const BUILTIN: [Metric; 14] = [
        Metric::Rsr,
        Metric::WeightedTokenRsr,
        Metric::AvgSurprisal,
        Metric::AvgLocalSurprisal,
        Metric::AvgRank,
        Metric::AvgRankClipped,
        Metric::AvgTokenRsr,
        Metric::FilteredTokenRsr,
        Metric::RankMinusSurprisal,
        Metric::RankEntropyRatio,
        Metric::PowerRsr,
        Metric::TokenLength,
        Metric::VerifiedAccuracy,
        Metric::RuleBasedQuality,
    ];

    pub fn name(&self) -> String {
        match self {
            Metric::Rsr => "rsr".into(),
            Metric::WeightedTokenRsr => "weighted_token_rsr".into(),
            Metric::AvgSurprisal => "avg_surprisal".into(),
            Metric::AvgLocalSurprisal => "avg_surp_local".into(),
            Metric::AvgRank => "avg_rank".into(),
            Metric::AvgRankClipped => "avg_rank_clipped".into(),
            Metric::AvgTokenRsr => "avg_token_rsr".into(),
            Metric::FilteredTokenRsr => "avg_token_rsr_filtered".into(),
            Metric::RankMinusSurprisal => "rank_minus_surprisal".into(),
            Metric::RankEntropyRatio => "rank_entropy_ratio".into(),
            Metric::PowerRsr => "power_rsr".into(),
            Metric::TokenLength => "token_length".into(),
            Metric::VerifiedAccuracy => "verified_accuracy".into(),
            Metric::RuleBasedQuality => "rule_based_quality".into(),
            Metric::External(col) => format!("external:{col}"),
        }
    }

    /// The direction in which the metric marks better data, when known.
    pub fn preferred_direction(&self) -> Option<Direction> {
        match self {
            Metric::TokenLength | Metric::VerifiedAccuracy | Metric::RuleBasedQuality => {
                Some(Direction::Max)
            }
            Metric::External(_) => None,
            _ => Some(Direction::Min),
        }
    }

    /// Scores depend on the other records in the batch (z-scored metrics).
    pub fn is_batch_relative(&self) -> bool {
        matches!(self, Metric::RuleBasedQuality)
    }

    /// Parameters that influence the value, echoed into reports.
    pub fn params_echo(&self, p: &MetricParams) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let r_max = p.clip.r_max() as f64;
        match self {
            Metric::Rsr
            | Metric::WeightedTokenRsr
            | Metric::AvgRankClipped
            | Metric::RankMinusSurprisal
            | Metric::RankEntropyRatio => {
                m.insert("r_max".into(), r_max);
            }
            Metric::FilteredTokenRsr => {
                m.insert("r_max".into(), r_max);
                m.insert("filter_h".into(), p.filter_h);
            }
            Metric::PowerRsr => {
                m.insert("r_max".into(), r_max);
                m.insert("p_rank".into(), p.p_rank);
                m.insert("p_surp".into(), p.p_surp);
            }
            Metric::RuleBasedQuality => {
                m.insert("w_elaborated".into(), p.rule.weights.elaborated);
                m.insert("w_verification".into(), p.rule.weights.verification);
                m.insert("w_exploratory".into(), p.rule.weights.exploratory);
                m.insert("w_adaptive".into(), p.rule.weights.adaptive);
            }
            _ => {}
        }
        m
    }

    /// Value for one trajectory. Batch-relative metrics are refused here; use
    /// [`Metric::score_records`].
    pub fn evaluate(&self, r: &TrajectoryRecord, p: &MetricParams) -> Result<f64> {
        let v = match self {
            Metric::Rsr => trajectory_rsr(r, p.clip),
            Metric::WeightedTokenRsr => weighted_avg_token_rsr(r, p.clip),
            Metric::AvgSurprisal => avg_surprisal(r),
            Metric::AvgLocalSurprisal => avg_local_surprisal(r),
            Metric::AvgRank => avg_rank(r, None),
            Metric::AvgRankClipped => avg_rank(r, Some(p.clip)),
            Metric::AvgTokenRsr => avg_token_rsr(r),
            Metric::FilteredTokenRsr => filtered_avg_token_rsr(r, p.filter_h, p.clip),
            Metric::RankMinusSurprisal => rank_minus_surprisal(r, p.clip),
            Metric::RankEntropyRatio => rank_entropy_ratio(r, p.clip),
            Metric::PowerRsr => power_rsr(r, p.clip, p.p_rank, p.p_surp),
            Metric::TokenLength => Ok(r.tokens.len() as f64),
            Metric::VerifiedAccuracy => r
                .correct
                .map(|c| if c { 1.0 } else { 0.0 })
                .ok_or_else(|| Error::MissingLabel {
                    record: r.key().to_string(),
                }),
            Metric::External(col) => {
                r.external_scores
                    .get(col)
                    .copied()
                    .ok_or_else(|| Error::MissingExternalScore {
                        column: col.clone(),
                        records: vec![r.key().to_string()],
                    })
            }
            Metric::RuleBasedQuality => Err(Error::InvalidParameter(
                "rule_based_quality is z-scored over a batch; score the whole batch".into(),
            )),
        }?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: self.name(),
                value: v,
            });
        }
        Ok(v)
    }

    /// Values for a batch of records, in record order.
    pub fn score_records(&self, records: &[TrajectoryRecord], p: &MetricParams) -> Result<Vec<f64>> {
        match self {
            Metric::RuleBasedQuality => Ok(quality::rule_based_quality_records(records, &p.rule)?
                .into_iter()
                .map(|c| c.composite)
                .collect()),
            Metric::External(col) => quality::external_column(records, col),
            _ => par::try_map_ordered(records, |r| with_record(r, self.evaluate(r, p))),
        }
    }

    /// Dataset-level aggregate: the surprisal-weighted ratio for `rsr`, the
    /// plain mean of trajectory values otherwise.
    pub fn dataset_score(&self, ds: &TrajectoryDataset, p: &MetricParams) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        match self {
            Metric::Rsr => dataset_rsr(ds, p.clip),
            _ => {
                let v = self.score_records(&ds.records, p)?;
                Ok(v.iter().sum::<f64>() / v.len() as f64)
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(col) = s.strip_prefix("external:") {
            if col.is_empty() {
                return Err(Error::UnknownMetric(s.into()));
            }
            return Ok(Metric::External(col.to_string()));
        }
        Metric::BUILTIN
            .iter()
            .find(|m| m.name() == s)
            .cloned()
            .ok_or_else(|| Error::UnknownMetric(s.into()))
    }
}

//! Run configuration: defaults, command-line flags, then an optional TOML
//! file whose entries win over flags.

use std::path::{Path, PathBuf};

use anyhow::Result;
use rsr_core::metrics::{Direction, MetricParams, DEFAULT_FILTER_H, DEFAULT_R_MAX};
use rsr_core::quality::{CriterionWeights, RuleQualityConfig};
use rsr_core::simulation::{MixtureMode, SimulationConfig, DEFAULT_SEED};
use rsr_core::ClipThreshold;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::InputError;

pub const DEFAULT_N_SAMPLE: usize = 200;

/// Every setting a flag or config file may supply. Unset entries fall back to
/// the previous layer.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub inputs: Option<Vec<PathBuf>>,
    pub out: Option<PathBuf>,
    pub metrics: Option<Vec<String>>,
    pub direction: Option<Direction>,
    pub r_max: Option<u32>,
    pub filter_h: Option<f64>,
    pub p_rank: Option<f64>,
    pub p_surp: Option<f64>,
    pub n_sample: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub correctness_filter: Option<bool>,
    pub teachers: Option<Vec<String>>,
    pub student: Option<String>,
    pub scores: Option<PathBuf>,
    pub performance: Option<PathBuf>,
    pub sweep: Option<u64>,
    pub simulation: Option<SimulationOverrides>,
    pub rule_weights: Option<CriterionWeights>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationOverrides {
    pub alpha: Option<f64>,
    pub vocab_size: Option<usize>,
    pub m_a: Option<u64>,
    pub m_b: Option<u64>,
    pub tokens_per_trajectory: Option<usize>,
    pub mixture_mode: Option<MixtureMode>,
    pub collapse_modes: Option<bool>,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub metrics: Vec<String>,
    pub direction: Option<Direction>,
    pub r_max: u32,
    pub filter_h: f64,
    pub p_rank: f64,
    pub p_surp: f64,
    pub n_sample: usize,
    pub seed: u64,
    pub correctness_filter: bool,
    pub teachers: Vec<String>,
    pub student: Option<String>,
    pub scores: Option<PathBuf>,
    pub performance: Option<PathBuf>,
    pub sweep: u64,
    pub simulation: SimulationConfig,
    pub rule: RuleQualityConfig,
    /// Output location and worker count do not affect report contents.
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            metrics: Vec::new(),
            direction: None,
            r_max: DEFAULT_R_MAX,
            filter_h: DEFAULT_FILTER_H,
            p_rank: 1.0,
            p_surp: 1.0,
            n_sample: DEFAULT_N_SAMPLE,
            seed: DEFAULT_SEED,
            correctness_filter: false,
            teachers: Vec::new(),
            student: None,
            scores: None,
            performance: None,
            sweep: 0,
            simulation: SimulationConfig::default(),
            rule: RuleQualityConfig::default(),
            out: None,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn apply(&mut self, o: Overrides) {
        macro_rules! take {
            ($($f:ident),*) => {$( if let Some(v) = o.$f { self.$f = v; } )*};
        }
        take!(inputs, metrics, r_max, filter_h, p_rank, p_surp, n_sample, seed, correctness_filter, teachers, sweep);
        if o.direction.is_some() {
            self.direction = o.direction;
        }
        for (slot, v) in [
            (&mut self.scores, o.scores),
            (&mut self.performance, o.performance),
            (&mut self.out, o.out),
        ] {
            if v.is_some() {
                *slot = v;
            }
        }
        if o.student.is_some() {
            self.student = o.student;
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        if let Some(w) = o.rule_weights {
            self.rule.weights = w;
        }
        if let Some(s) = o.simulation {
            let sim = &mut self.simulation;
            macro_rules! sim_take {
                ($($f:ident),*) => {$( if let Some(v) = s.$f { sim.$f = v; } )*};
            }
            sim_take!(alpha, vocab_size, m_a, m_b, tokens_per_trajectory, mixture_mode, collapse_modes);
        }
        self.simulation.seed = self.seed;
    }

    pub fn load_file(path: &Path) -> Result<Overrides> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| InputError(format!("config {}: {e}", path.display())).into())
    }

    pub fn clip(&self) -> Result<ClipThreshold> {
        Ok(ClipThreshold::new(self.r_max)?)
    }

    pub fn metric_params(&self) -> Result<MetricParams> {
        self.rule.validate()?;
        Ok(MetricParams {
            clip: self.clip()?,
            filter_h: self.filter_h,
            p_rank: self.p_rank,
            p_surp: self.p_surp,
            rule: self.rule.clone(),
        })
    }

    /// The settings that influence `command`'s output, as a stable JSON value.
    pub fn echo(&self, command: &str) -> Value {
        let full = serde_json::to_value(self).expect("config serializes");
        let keys: &[&str] = match command {
            "validate" => &["inputs", "r_max"],
            "score" => &["inputs", "metrics", "r_max", "filter_h", "p_rank", "p_surp", "rule"],
            "select-traj" => &[
                "inputs", "metrics", "direction", "r_max", "filter_h", "p_rank", "p_surp", "rule",
                "correctness_filter", "teachers",
            ],
            "select-teacher" => &[
                "inputs", "metrics", "direction", "r_max", "filter_h", "p_rank", "p_surp", "rule",
                "n_sample", "seed", "teachers", "student", "scores",
            ],
            "simulate" => &["simulation", "sweep"],
            "correlate" => &["metrics", "scores", "performance"],
            _ => &[],
        };
        let mut out = serde_json::Map::new();
        out.insert("command".into(), json!(command));
        for k in keys {
            out.insert((*k).into(), full[*k].clone());
        }
        Value::Object(out)
    }
}

/// Report preamble: tool version, config hash and the resolved config.
pub struct Header {
    pub config: Value,
    pub hash: String,
}

impl Header {
    pub fn new(config: Value) -> Self {
        let canonical = serde_json::to_string(&config).expect("json");
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
        Self { config, hash }
    }

    /// Comment lines prefixed with `#`.
    pub fn comment(&self) -> String {
        format!(
            "# rsr {}\n# config-hash: {}\n# config: {}\n",
            env!("CARGO_PKG_VERSION"),
            self.hash,
            serde_json::to_string(&self.config).expect("json")
        )
    }

    pub fn json(&self) -> Value {
        json!({
            "rsr_version": env!("CARGO_PKG_VERSION"),
            "config_hash": self.hash,
            "config": self.config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_flags() {
        let mut cfg = RunConfig::default();
        cfg.apply(Overrides {
            r_max: Some(50),
            seed: Some(1),
            ..Default::default()
        });
        let file: Overrides = toml::from_str("r_max = 20\n[simulation]\nalpha = 2.0\n").unwrap();
        cfg.apply(file);
        assert_eq!(cfg.r_max, 20);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.simulation.seed, 1);
        assert_eq!(cfg.simulation.alpha, 2.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Overrides>("rmax = 3").is_err());
    }

    #[test]
    fn hash_ignores_threads_and_out() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.threads = Some(8);
        b.out = Some("elsewhere".into());
        assert_eq!(Header::new(a.echo("score")).hash, Header::new(b.echo("score")).hash);
        let mut c = a.clone();
        c.r_max = 7;
        assert_ne!(Header::new(a.echo("score")).hash, Header::new(c.echo("score")).hash);
    }
}

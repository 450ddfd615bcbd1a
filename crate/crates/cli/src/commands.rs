use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rsr_core::correlation::{self, Coefficient, PerformanceTable};
use rsr_core::ingest;
use rsr_core::metrics::{Direction, Metric, MetricParams};
use rsr_core::model::{Provenance, ScoreTable, TrajectoryDataset};
use rsr_core::selection::{self, TeacherInput};
use rsr_core::simulation;
use rsr_core::{fixtures, par};

use crate::config::{Header, RunConfig};
use crate::InputError;

/// Where reports go: files under `--out`, or the primary report on stdout.
pub struct Output {
    dir: Option<PathBuf>,
    header: Header,
}

impl Output {
    pub fn new(cfg: &RunConfig, command: &str) -> Result<Self> {
        if let Some(dir) = &cfg.out {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(Self {
            dir: cfg.out.clone(),
            header: Header::new(cfg.echo(command)),
        })
    }

    /// Writes a `#`-commented report. Only primary reports reach stdout.
    fn text(&self, name: &str, body: &str, primary: bool) -> Result<()> {
        self.raw(name, &format!("{}{body}", self.header.comment()), primary)
    }

    /// Line-delimited JSON whose first line is the header object.
    fn jsonl(&self, name: &str, body: &[u8], primary: bool) -> Result<()> {
        let mut s = serde_json::to_string(&self.header.json())?;
        s.push('\n');
        s.push_str(std::str::from_utf8(body)?);
        self.raw(name, &s, primary)
    }

    fn raw(&self, name: &str, content: &str, primary: bool) -> Result<()> {
        match &self.dir {
            Some(dir) => {
                let path = dir.join(name);
                fs::write(&path, content).with_context(|| format!("writing {}", path.display()))
            }
            None if primary => {
                print!("{content}");
                Ok(())
            }
            None => Ok(()),
        }
    }
}

fn require_inputs(cfg: &RunConfig) -> Result<&[PathBuf]> {
    if cfg.inputs.is_empty() {
        bail!(InputError("no --input given".into()));
    }
    for p in &cfg.inputs {
        if !p.is_file() {
            bail!(InputError(format!("input {} is not a readable file", p.display())));
        }
    }
    Ok(&cfg.inputs)
}

fn load(path: &Path, cfg: &RunConfig) -> Result<TrajectoryDataset> {
    let ds = ingest::load_dataset(path)?;
    // every input must support the requested clip threshold
    cfg.clip()?
        .check_cap(ds.k_ext)
        .map_err(|e| e.context(path.display().to_string()))?;
    Ok(ds)
}

fn parse_metrics(cfg: &RunConfig) -> Result<Vec<Metric>> {
    let names: Vec<String> = if cfg.metrics.is_empty() {
        vec!["rsr".into()]
    } else {
        cfg.metrics.clone()
    };
    names
        .iter()
        .map(|n| n.parse::<Metric>().map_err(anyhow::Error::from))
        .collect()
}

fn direction_for(metric: &Metric, cfg: &RunConfig) -> Result<Direction> {
    cfg.direction
        .or_else(|| metric.preferred_direction())
        .ok_or_else(|| InputError(format!("metric `{metric}` needs --direction")).into())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn validate(cfg: &RunConfig) -> Result<bool> {
    let inputs = require_inputs(cfg)?;
    let out = Output::new(cfg, "validate")?;
    let mut body = String::new();
    let mut ok = true;
    for path in inputs {
        let manifest = match ingest::manifest_for(path) {
            Ok(m) => Some(m),
            Err(e) => {
                ok = false;
                body.push_str(&format!("{}: manifest: {e}\n", path.display()));
                None
            }
        };
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let report = ingest::validate_source(BufReader::new(file), manifest.as_ref(), cfg.r_max);
        body.push_str(&format!(
            "{}: dataset {} records {} tokens {} k_ext {} r_max {} saturated {} ({:.6}) violations {}\n",
            path.display(),
            report.dataset_id,
            report.records,
            report.tokens,
            report.k_ext,
            report.r_max,
            report.saturated_tokens,
            report.saturation_fraction,
            report.violations.len()
        ));
        for v in &report.violations {
            body.push_str(&format!("{}:{}: {}\n", path.display(), v.location, v.message));
        }
        ok &= report.is_ok();
    }
    out.text("validation.txt", &body, true)?;
    Ok(ok)
}

pub fn score(cfg: &RunConfig) -> Result<()> {
    let inputs = require_inputs(cfg)?;
    let metrics = parse_metrics(cfg)?;
    let params = cfg.metric_params()?;
    let out = Output::new(cfg, "score")?;
    let names: Vec<String> = metrics.iter().map(Metric::name).collect();

    let mut rows = format!("row,dataset_id,problem_id,teacher_id,rollout_id,{}\n", names.join(","));
    let mut table_rows = Vec::new();
    let mut dataset_values = Vec::new();
    for path in inputs {
        let ds = load(path, cfg)?;
        let per_metric: Vec<Vec<f64>> = metrics
            .iter()
            .map(|m| m.score_records(&ds.records, &params))
            .collect::<rsr_core::Result<_>>()
            .map_err(|e| e.context(path.display().to_string()))?;
        let aggregates: Vec<f64> = metrics
            .iter()
            .map(|m| m.dataset_score(&ds, &params))
            .collect::<rsr_core::Result<_>>()
            .map_err(|e| e.context(path.display().to_string()))?;
        for (i, r) in ds.records.iter().enumerate() {
            let vals: Vec<String> = per_metric.iter().map(|col| fmt(col[i])).collect();
            rows.push_str(&format!(
                "record,{},{},{},{},{}\n",
                csv_field(&ds.dataset_id),
                csv_field(&r.problem_id),
                csv_field(&r.teacher_id),
                r.rollout_id,
                vals.join(",")
            ));
        }
        let vals: Vec<String> = aggregates.iter().map(|v| fmt(*v)).collect();
        rows.push_str(&format!(
            "dataset,{},,,,{}\n",
            csv_field(&ds.dataset_id),
            vals.join(",")
        ));
        table_rows.push((ds.student_id.clone(), ds.dataset_id.clone()));
        dataset_values.push(aggregates);
    }
    let params_line = format!(
        "# params: {}\n",
        serde_json::to_string(
            &metrics
                .iter()
                .map(|m| (m.name(), m.params_echo(&params)))
                .collect::<std::collections::BTreeMap<_, _>>()
        )?
    );
    out.text("scores.csv", &format!("{params_line}{rows}"), true)?;

    // dataset-level values in the wide format `correlate` reads
    let mut wide = format!("student,teacher,{}\n", names.join(","));
    for ((student, dataset), vals) in table_rows.iter().zip(&dataset_values) {
        let vals: Vec<String> = vals.iter().map(|v| fmt(*v)).collect();
        wide.push_str(&format!("{},{},{}\n", csv_field(student), csv_field(dataset), vals.join(",")));
    }
    out.text("dataset_scores.csv", &wide, false)?;
    Ok(())
}

pub fn select_traj(cfg: &RunConfig) -> Result<()> {
    let inputs = require_inputs(cfg)?;
    let metric = parse_metrics(cfg)?.remove(0);
    let direction = direction_for(&metric, cfg)?;
    let params = cfg.metric_params()?;
    let out = Output::new(cfg, "select-traj")?;
    let mut records = Vec::new();
    for path in inputs {
        records.extend(load(path, cfg)?.records);
    }
    let mut pools = selection::group_pools(records);
    if !cfg.teachers.is_empty() {
        pools = selection::restrict_teachers(&pools, &cfg.teachers);
    }
    let manifest = if cfg.correctness_filter {
        selection::correctness_filtered_select(&pools, &metric, &params, direction)?
    } else {
        selection::select_trajectories(&pools, &metric, &params, direction)?
    };
    let mut buf = Vec::new();
    manifest.write_jsonl(&mut buf)?;
    out.jsonl("selection.jsonl", &buf, false)?;
    out.text("composition.txt", &manifest.render_composition(), true)?;
    Ok(())
}

fn score_table(path: Option<&PathBuf>) -> Result<Vec<ScoreTable>> {
    match path {
        None => Ok(fixtures::metric_scores()?),
        Some(p) => {
            let f = File::open(p).map_err(|e| InputError(format!("{}: {e}", p.display())))?;
            Ok(correlation::load_score_tables(f, Provenance::Computed)?)
        }
    }
}

pub fn select_teacher(cfg: &RunConfig) -> Result<()> {
    let out = Output::new(cfg, "select-teacher")?;
    let ranked = if cfg.inputs.is_empty() {
        // rank from a dataset-level score table
        let tables = score_table(cfg.scores.as_ref())?;
        let student = cfg
            .student
            .as_deref()
            .ok_or_else(|| InputError("ranking from a score table needs --student".into()))?;
        let table = tables
            .iter()
            .find(|t| t.student_id == student)
            .ok_or_else(|| InputError(format!("student `{student}` not in score table")))?;
        let column = cfg
            .metrics
            .first()
            .cloned()
            .unwrap_or_else(|| "rsr".into());
        let direction = match cfg.direction {
            Some(d) => d,
            None => direction_for(&column.parse::<Metric>()?, cfg)?,
        };
        let teachers: Vec<String> = if cfg.teachers.is_empty() {
            table.rows.clone()
        } else {
            cfg.teachers.clone()
        };
        let mut scores = Vec::with_capacity(teachers.len());
        for t in teachers {
            let v = table.get(&t, &column).ok_or_else(|| {
                InputError(format!("no `{column}` value for {student}:{t}"))
            })?;
            scores.push((t, v));
        }
        selection::rank_scores(&scores, direction)?
    } else {
        let inputs = require_inputs(cfg)?;
        let metric = parse_metrics(cfg)?.remove(0);
        let direction = direction_for(&metric, cfg)?;
        let params: MetricParams = cfg.metric_params()?;
        let mut teachers = Vec::new();
        for path in inputs {
            let ds = load(path, cfg)?;
            let n = cfg.n_sample.min(ds.len());
            if n < cfg.n_sample {
                log::warn!("{}: {} records, sampling all of them", path.display(), ds.len());
            }
            let sample = selection::sample_for_teacher(&ds, n, cfg.seed)?;
            teachers.push((ds.dataset_id.clone(), TeacherInput::Dataset(sample)));
        }
        selection::rank_teachers(&teachers, &metric, &params, direction)?
    };
    let mut body = String::from("position,teacher,score,top1,top2\n");
    for r in &ranked {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            r.position,
            csv_field(&r.teacher_id),
            fmt(r.score),
            r.top1,
            r.top2
        ));
    }
    out.text("teachers.csv", &body, true)?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let out = Output::new(cfg, "simulate")?;
    let sim = &cfg.simulation;
    let (report, student) = simulation::simulate(sim)?;

    let mut text = simulation::render_text(&report);
    text.push_str(&format!(
        "max relative deviation from reference: {:.4}\n",
        simulation::max_relative_deviation(&report)
    ));
    let check = simulation::check_ordering(&report);
    text.push_str(&format!(
        "ordering: token_rsr {} surprisal {}\n",
        check.token_rsr, check.surprisal
    ));
    let mut csv = Vec::new();
    simulation::write_report_csv(&report, &mut csv)?;
    let mut z = Vec::new();
    simulation::write_student_csv(&student, &mut z)?;

    if cfg.sweep > 0 {
        let seeds: Vec<u64> = (0..cfg.sweep).map(|i| sim.seed.wrapping_add(i)).collect();
        let reports = simulation::sweep_seeds(sim, &seeds)?;
        let mut rows = String::from("seed");
        for f in simulation::FAMILIES {
            for c in ["prob", "surprisal", "rank", "token_rsr"] {
                rows.push_str(&format!(",{f}_{c}"));
            }
        }
        rows.push_str(",token_rsr_order,surprisal_order\n");
        let (mut ok_r, mut ok_s) = (0, 0);
        for (seed, r) in seeds.iter().zip(&reports) {
            let c = simulation::check_ordering(r);
            ok_r += c.token_rsr as u64;
            ok_s += c.surprisal as u64;
            rows.push_str(&seed.to_string());
            for row in &r.rows {
                for v in row.cells() {
                    rows.push_str(&format!(",{}", fmt(v)));
                }
            }
            rows.push_str(&format!(",{},{}\n", c.token_rsr, c.surprisal));
        }
        text.push_str(&format!(
            "sweep over {} seeds: token_rsr ordering {ok_r}, surprisal ordering {ok_s}\n",
            seeds.len()
        ));
        out.text("sweep.csv", &rows, false)?;
    }
    out.text("simulation.txt", &text, true)?;
    out.text("simulation.csv", std::str::from_utf8(&csv)?, false)?;
    out.text("student.csv", std::str::from_utf8(&z)?, false)?;
    Ok(())
}

pub fn correlate(cfg: &RunConfig) -> Result<()> {
    let out = Output::new(cfg, "correlate")?;
    let tables = score_table(cfg.scores.as_ref())?;
    let perf = match &cfg.performance {
        None => fixtures::performance()?,
        Some(p) => {
            let f = File::open(p).map_err(|e| InputError(format!("{}: {e}", p.display())))?;
            PerformanceTable::from_csv(f)?
        }
    };
    let metrics = if cfg.metrics.is_empty() {
        fixtures::metric_columns(&tables)
    } else {
        cfg.metrics.clone()
    };
    if metrics.is_empty() {
        return Err(anyhow!(InputError("no metric columns to correlate".into())));
    }
    let report = correlation::correlate_table(&tables, &perf, &metrics)?;
    let mut csv = Vec::new();
    correlation::write_report_csv(&report, &mut csv)?;
    let text = format!(
        "spearman (absolute; average = |mean of signed|)\n{}\npearson (absolute; average = |mean of signed|)\n{}",
        correlation::render_text(&report, Coefficient::Spearman),
        correlation::render_text(&report, Coefficient::Pearson)
    );
    out.text("correlation.txt", &text, true)?;
    out.text("correlation.csv", std::str::from_utf8(&csv)?, false)?;
    Ok(())
}

pub fn configure_threads(cfg: &RunConfig) {
    if let Some(n) = cfg.threads {
        par::configure_threads(n);
    }
}

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsr_core::correlation::correlate_table;
use rsr_core::fixtures::{self, STUDENTS};
use rsr_core::metrics::{dataset_rsr, trajectory_rsr, weighted_avg_token_rsr, ClipThreshold, Direction, Metric, MetricParams};
use rsr_core::model::{TokenStat, TrajectoryDataset, TrajectoryRecord};
use rsr_core::quality::{rule_based_quality_records, RuleQualityConfig};
use rsr_core::selection::{correctness_filtered_select, rank_scores, select_trajectories, CandidatePool};
use rsr_core::simulation::{self, SimulationConfig, FAMILIES, REFERENCE_VALUES};

use common::{rsr, stderr, write_dataset, Shape};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn within(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{name}: got {got:.4}, want {want} ± {tol}"))
    }
}

fn correlation_fixture() -> Outcome {
    let start = Instant::now();
    let tables = fixtures::metric_scores().map_err(|e| e.to_string())?;
    let perf = fixtures::performance().map_err(|e| e.to_string())?;
    let report = correlate_table(&tables, &perf, &["rsr".to_string()]).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let rsr = report.metric("rsr").ok_or("no rsr row")?;
    let spearman = [0.855, 0.845, 0.918, 0.818, 0.845];
    let pearson = [0.654, 0.880, 0.805, 0.819, 0.811];
    for (i, s) in STUDENTS.iter().enumerate() {
        let c = rsr.cell(s).ok_or(format!("no cell for {s}"))?;
        within(&format!("{s} spearman"), c.spearman.abs(), spearman[i], 0.005)?;
        within(&format!("{s} pearson"), c.pearson.abs(), pearson[i], 0.005)?;
    }
    within("aggregate spearman", rsr.spearman_aggregate, 0.856, 0.005)?;
    if elapsed >= Duration::from_secs(1) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!("aggregate spearman {:.4}, {elapsed:?}", rsr.spearman_aggregate))
}

fn baseline_rows() -> Outcome {
    let tables = fixtures::metric_scores().map_err(|e| e.to_string())?;
    let perf = fixtures::performance().map_err(|e| e.to_string())?;
    let expected: [(&str, [f64; 5]); 4] = [
        ("avg_surprisal", [0.24, 0.42, 0.55, 0.55, 0.70]),
        ("avg_rank", [0.41, 0.64, 0.68, 0.61, 0.62]),
        ("token_length", [0.49, 0.68, 0.45, 0.57, 0.47]),
        ("verified_accuracy", [0.54, 0.43, 0.25, 0.35, 0.10]),
    ];
    let metrics: Vec<String> = expected.iter().map(|(m, _)| m.to_string()).collect();
    let report = correlate_table(&tables, &perf, &metrics).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (m, row) in expected {
        let mc = report.metric(m).ok_or(format!("no row {m}"))?;
        for (i, s) in STUDENTS.iter().enumerate() {
            let v = mc.cell(s).ok_or(format!("no cell {m} {s}"))?.spearman.abs();
            within(&format!("{m} {s}"), v, row[i], 0.015)?;
            worst = worst.max((v - row[i]).abs());
        }
    }
    Ok(format!("20 cells, largest deviation {worst:.4}"))
}

fn teacher_selection() -> Outcome {
    let tables = fixtures::metric_scores().map_err(|e| e.to_string())?;
    let t = tables.iter().find(|t| t.student_id == "Qwen-2.5-7B").ok_or("no student")?;
    let pool = [
        "Deepseek-R1",
        "Qwen-3-235B-Thinking",
        "Nemotron-Super",
        "Qwen-3-30B-Thinking",
        "Magistral-Small",
        "GPT-OSS-20B",
    ];
    let mut scores = Vec::new();
    for p in pool {
        scores.push((p.to_string(), t.get(p, "rsr_200_sample").ok_or(format!("no score for {p}"))?));
    }
    let ranked = rank_scores(&scores, Direction::Min).map_err(|e| e.to_string())?;
    let perf = fixtures::performance().map_err(|e| e.to_string())?;
    let (top1, top2) = (&ranked[0].teacher_id, &ranked[1].teacher_id);
    let (p1, p2) = (perf.get("Qwen-2.5-7B", top1), perf.get("Qwen-2.5-7B", top2));
    if top1 == "Qwen-3-30B-Thinking" && top2 == "Deepseek-R1" && p1 == Some(50.0) && p2 == Some(47.8) {
        Ok(format!("top-1 {top1} ({:?}), top-2 {top2} ({:?})", p1.unwrap(), p2.unwrap()))
    } else {
        Err(format!("top-1 {top1} {p1:?}, top-2 {top2} {p2:?}"))
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

fn identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let clip = ClipThreshold::new(100).map_err(|e| e.to_string())?;
    let mut records = Vec::with_capacity(1000);
    let mut worst: f64 = 0.0;
    for i in 0..1000u32 {
        let len = rng.random_range(1..=5000);
        let tokens: Vec<TokenStat> = (0..len)
            .map(|_| TokenStat::new(rng.random_range(1..=10_000), rng.random_range(1e-6..=20.0)))
            .collect();
        let rec = TrajectoryRecord::new(format!("p{i}"), "t", 1, tokens).with_k_ext(10_000);
        let traj = trajectory_rsr(&rec, clip).map_err(|e| e.to_string())?;
        let weighted = weighted_avg_token_rsr(&rec, clip).map_err(|e| e.to_string())?;
        // independent evaluation of the same ratio
        let (num, den) = rec
            .tokens
            .iter()
            .fold((0.0, 0.0), |(n, d), t| (n + t.rank.min(100) as f64, d + t.surprisal));
        for (name, v) in [("weighted", weighted), ("oracle", num / den)] {
            let r = rel(traj, v);
            worst = worst.max(r);
            if r > 1e-12 {
                return Err(format!("record {i}: {name} {v} vs trajectory {traj} (rel {r:e})"));
            }
        }
        records.push(rec);
    }
    let ds = TrajectoryDataset::new("d", "s", 10_000, records);
    let got = dataset_rsr(&ds, clip).map_err(|e| e.to_string())?;
    let (mut num, mut den) = (0.0, 0.0);
    for r in &ds.records {
        let n = r.tokens.len() as f64;
        let mean_s = r.tokens.iter().map(|t| t.surprisal).sum::<f64>() / n;
        num += mean_s * trajectory_rsr(r, clip).map_err(|e| e.to_string())?;
        den += mean_s;
    }
    let r = rel(got, num / den);
    if r > 1e-12 {
        return Err(format!("dataset {got} vs weighted mean {} (rel {r:e})", num / den));
    }
    Ok(format!("1000 trajectories, worst relative gap {:.1e}", worst.max(r)))
}

fn simulation_criterion() -> Outcome {
    let start = Instant::now();
    let base = SimulationConfig::default();
    let seeds: Vec<u64> = (0..100).collect();
    let reports = simulation::sweep_seeds(&base, &seeds).map_err(|e| e.to_string())?;
    let (mut rsr_ok, mut surp_ok) = (0, 0);
    for r in &reports {
        let c = simulation::check_ordering(r);
        rsr_ok += c.token_rsr as usize;
        surp_ok += c.surprisal as usize;
    }
    let pinned = simulation::run_simulation(&base).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut bad = Vec::new();
    for (f, row) in pinned.rows.iter().enumerate() {
        for (c, v) in row.cells().iter().enumerate() {
            let want = REFERENCE_VALUES[f][c];
            if (v - want).abs() / want.abs() > 0.20 {
                bad.push(format!("{} cell {c}: {v:.4} vs {want}", FAMILIES[f]));
            }
        }
    }
    let detail = format!(
        "orderings {rsr_ok}/100 and {surp_ok}/100, seed {} max deviation {:.3}, {elapsed:?}",
        base.seed,
        simulation::max_relative_deviation(&pinned)
    );
    if rsr_ok >= 95 && surp_ok >= 95 && bad.is_empty() && elapsed < Duration::from_secs(10) {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", bad.join("; ")))
    }
}

const TEACHERS: [&str; 11] = ["t00", "t01", "t02", "t03", "t04", "t05", "t06", "t07", "t08", "t09", "t10"];

/// Pools with few distinct, exactly representable token sequences so ties
/// between candidates are frequent.
fn random_pools(rng: &mut ChaCha8Rng) -> Vec<CandidatePool> {
    let shapes: Vec<Vec<TokenStat>> = (0..6)
        .map(|_| {
            (0..rng.random_range(1..4))
                .map(|_| TokenStat::new(rng.random_range(1..5), rng.random_range(1..5) as f64 * 0.5))
                .collect()
        })
        .collect();
    (0..10_000)
        .map(|id| {
            let size = rng.random_range(1..=33);
            let mut slots: Vec<(usize, u32)> = (0..11).flat_map(|t| (1..=3).map(move |r| (t, r))).collect();
            for i in (1..slots.len()).rev() {
                slots.swap(i, rng.random_range(0..=i));
            }
            let candidates = slots[..size]
                .iter()
                .map(|&(t, r)| {
                    let tokens = shapes[rng.random_range(0..shapes.len())].clone();
                    let mut rec = TrajectoryRecord::new(format!("p{id:05}"), TEACHERS[t], r, tokens);
                    rec.correct = [Some(true), Some(false), None][rng.random_range(0..3)];
                    rec
                })
                .collect();
            CandidatePool::new(format!("p{id:05}"), candidates).unwrap()
        })
        .collect()
}

fn oracle(pool: &CandidatePool, direction: Direction, filter: bool) -> (String, u32, f64) {
    let value = |c: &TrajectoryRecord| {
        let n: f64 = c.tokens.iter().map(|t| t.rank.min(100) as f64).sum();
        let d: f64 = c.tokens.iter().map(|t| t.surprisal).sum();
        n / d
    };
    let correct: Vec<&TrajectoryRecord> = pool.candidates.iter().filter(|c| c.correct == Some(true)).collect();
    let set: Vec<&TrajectoryRecord> = if filter && !correct.is_empty() {
        correct
    } else {
        pool.candidates.iter().collect()
    };
    let mut best: Option<(&TrajectoryRecord, f64)> = None;
    for c in set {
        let v = value(c);
        let take = match best {
            None => true,
            Some((b, bv)) => {
                let better = match direction {
                    Direction::Min => v < bv,
                    Direction::Max => v > bv,
                };
                better || (v == bv && (&c.teacher_id, c.rollout_id) < (&b.teacher_id, b.rollout_id))
            }
        };
        if take {
            best = Some((c, v));
        }
    }
    let (b, v) = best.unwrap();
    (b.teacher_id.clone(), b.rollout_id, v)
}

fn selection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pools = random_pools(&mut rng);
    let params = MetricParams::default();
    let mut ties = 0;
    for pool in &pools {
        let (_, _, v) = oracle(pool, Direction::Min, false);
        let n = pool
            .candidates
            .iter()
            .filter(|c| trajectory_rsr(c, params.clip).unwrap() == v)
            .count();
        ties += (n > 1) as usize;
    }
    for direction in [Direction::Min, Direction::Max] {
        let plain = select_trajectories(&pools, &Metric::Rsr, &params, direction).map_err(|e| e.to_string())?;
        let filtered =
            correctness_filtered_select(&pools, &Metric::Rsr, &params, direction).map_err(|e| e.to_string())?;
        for (i, pool) in pools.iter().enumerate() {
            for (m, filter) in [(&plain, false), (&filtered, true)] {
                let c = &m.choices[i];
                let want = oracle(pool, direction, filter);
                if (c.teacher_id.clone(), c.rollout_id, c.value) != want || c.problem_id != pool.problem_id {
                    return Err(format!("{}: {direction:?} filter={filter}: got {c:?}, want {want:?}", pool.problem_id));
                }
            }
        }
    }
    Ok(format!("10000 pools x 2 directions x 2 modes, {ties} pools with tied minima"))
}

fn rule_quality() -> Outcome {
    const VOCAB: [&str; 10] = ["check", "verify", "perhaps", "might", "therefore", "since", "the", "x", "sum", "equals"];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = RuleQualityConfig::default();
    let mut checked = 0;
    for _ in 0..500 {
        let n = rng.random_range(2..60);
        let recs: Vec<TrajectoryRecord> = (0..n)
            .map(|i| {
                let words: Vec<&str> = (0..rng.random_range(1..80)).map(|_| VOCAB[rng.random_range(0..10)]).collect();
                TrajectoryRecord::new("p", "t", i, vec![TokenStat::new(1, 1.0)]).with_text(words.join(" "))
            })
            .collect();
        let scores = rule_based_quality_records(&recs, &cfg).map_err(|e| e.to_string())?;
        for c in 0..4 {
            let raw: Vec<f64> = scores
                .iter()
                .map(|s| [s.raw.elaborated, s.raw.verification, s.raw.exploratory, s.raw.adaptive][c])
                .collect();
            if raw.iter().all(|&v| v == raw[0]) {
                continue;
            }
            let z: Vec<f64> = scores.iter().map(|s| s.z[c]).collect();
            let k = z.len() as f64;
            let mean = z.iter().sum::<f64>() / k;
            let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k).sqrt();
            if mean.abs() >= 1e-9 || (sd - 1.0).abs() >= 1e-9 {
                return Err(format!("criterion {c}: mean {mean:e}, sd {sd}"));
            }
            checked += 1;
        }
    }
    let two: Vec<TrajectoryRecord> = [10, 30]
        .iter()
        .enumerate()
        .map(|(i, &n)| TrajectoryRecord::new("p", "t", i as u32, vec![TokenStat::new(1, 1.0)]).with_text(vec!["word"; n].join(" ")))
        .collect();
    let s = rule_based_quality_records(&two, &cfg).map_err(|e| e.to_string())?;
    if s[0].composite != -0.30 || s[1].composite != 0.30 {
        return Err(format!("two-document composites {} {}", s[0].composite, s[1].composite));
    }
    Ok(format!("{checked} standardized criteria, two-document composites -0.30/+0.30"))
}

fn read_dir_sorted(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let inputs: Vec<String> = ["ta", "tb", "tc"]
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let shape = Shape { name: t, teacher: t, problems: 300, rollouts: 3, max_len: 200, seed: i as u64 + 10, ..Default::default() };
            write_dataset(dir, &shape).to_string_lossy().into_owned()
        })
        .collect();
    let with_inputs = |args: &[&str]| {
        let mut v: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        for i in &inputs {
            v.push("--input".into());
            v.push(i.clone());
        }
        v
    };
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("validate", with_inputs(&["validate"])),
        (
            "score",
            with_inputs(&[
                "score", "-m", "rsr", "-m", "weighted_token_rsr", "-m", "avg_token_rsr_filtered", "-m",
                "rule_based_quality", "-m", "verified_accuracy",
            ]),
        ),
        ("select-traj", with_inputs(&["select-traj", "--filter-correct"])),
        ("select-traj-rbq", with_inputs(&["select-traj", "-m", "rule_based_quality"])),
        ("select-teacher", with_inputs(&["select-teacher", "--n-sample", "100", "--seed", "5"])),
        ("simulate", vec!["simulate".into(), "--sweep".into(), "4".into()]),
        ("correlate", vec!["correlate".into()]),
    ];
    let mut files = 0;
    for (name, args) in &commands {
        let mut reference: Option<BTreeMap<String, Vec<u8>>> = None;
        for threads in ["1", "8"] {
            for run in 0..2 {
                let out = dir.join(format!("{name}-{threads}-{run}"));
                let mut full = args.clone();
                full.extend(["--threads".into(), threads.into(), "--out".into(), out.to_string_lossy().into_owned()]);
                let o = rsr(&full);
                if !o.status.success() {
                    return Err(format!("{name} failed: {}", stderr(&o)));
                }
                let got = read_dir_sorted(&out);
                match &reference {
                    None => {
                        files += got.len();
                        reference = Some(got);
                    }
                    Some(r) if *r != got => {
                        return Err(format!("{name}: output differs at {threads} threads, run {run}"));
                    }
                    Some(_) => {}
                }
            }
        }
    }
    Ok(format!("{} commands, {files} report files identical across 4 runs each", commands.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("correlation fixture reproduction", correlation_fixture),
        ("baseline correlation rows", baseline_rows),
        ("teacher selection fixture", teacher_selection),
        ("algebraic identities", identities),
        ("simulation", simulation_criterion),
        ("selection oracle equivalence", selection_oracle),
        ("rule-based quality", rule_quality),
        ("determinism harness", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

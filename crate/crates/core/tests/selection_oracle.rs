use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsr_core::metrics::{Direction, Metric, MetricParams};
use rsr_core::model::{TokenStat, TrajectoryDataset, TrajectoryRecord};
use rsr_core::selection::*;

const TEACHERS: [&str; 11] = ["t00", "t01", "t02", "t03", "t04", "t05", "t06", "t07", "t08", "t09", "t10"];

fn random_pool(rng: &mut ChaCha8Rng, id: usize) -> CandidatePool {
    let size = rng.random_range(1..=33);
    let mut slots: Vec<(usize, u32)> = (0..11).flat_map(|t| (1..=3).map(move |r| (t, r))).collect();
    // random distinct (teacher, rollout) slots in random order
    for i in (1..slots.len()).rev() {
        slots.swap(i, rng.random_range(0..=i));
    }
    let candidates = slots[..size]
        .iter()
        .map(|&(t, r)| {
            // coarse values so that ties are common
            let v = rng.random_range(0..6) as f64 * 0.5;
            let mut rec = TrajectoryRecord::new(format!("p{id:05}"), TEACHERS[t], r, vec![TokenStat::new(1, 1.0)])
                .with_score("v", v);
            rec.correct = match rng.random_range(0..3) {
                0 => Some(true),
                1 => Some(false),
                _ => None,
            };
            rec
        })
        .collect();
    CandidatePool::new(format!("p{id:05}"), candidates).unwrap()
}

fn oracle(pool: &CandidatePool, direction: Direction, filter: bool) -> (String, u32) {
    let all: Vec<&TrajectoryRecord> = pool.candidates.iter().collect();
    let correct: Vec<&TrajectoryRecord> = all.iter().copied().filter(|c| c.correct == Some(true)).collect();
    let set = if filter && !correct.is_empty() { correct } else { all };
    let key = |c: &TrajectoryRecord| {
        let v = c.external_scores["v"];
        match direction {
            Direction::Min => v,
            Direction::Max => -v,
        }
    };
    let mut best = set[0];
    for &c in &set[1..] {
        let (kc, kb) = (key(c), key(best));
        if kc < kb || (kc == kb && (&c.teacher_id, c.rollout_id) < (&best.teacher_id, best.rollout_id)) {
            best = c;
        }
    }
    (best.teacher_id.clone(), best.rollout_id)
}

#[test]
fn matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pools: Vec<CandidatePool> = (0..10_000).map(|i| random_pool(&mut rng, i)).collect();
    let metric = Metric::External("v".into());
    let params = MetricParams::default();
    for direction in [Direction::Min, Direction::Max] {
        let plain = select_trajectories(&pools, &metric, &params, direction).unwrap();
        let filtered = correctness_filtered_select(&pools, &metric, &params, direction).unwrap();
        for (i, pool) in pools.iter().enumerate() {
            let p = &plain.choices[i];
            let f = &filtered.choices[i];
            assert_eq!(p.problem_id, pool.problem_id);
            assert_eq!((p.teacher_id.clone(), p.rollout_id), oracle(pool, direction, false));
            assert_eq!((f.teacher_id.clone(), f.rollout_id), oracle(pool, direction, true));
            if pool.candidates.iter().any(|c| c.correct == Some(true)) {
                let chosen = pool
                    .candidates
                    .iter()
                    .find(|c| c.teacher_id == f.teacher_id && c.rollout_id == f.rollout_id)
                    .unwrap();
                assert_eq!(chosen.correct, Some(true));
            }
        }
        for m in [&plain, &filtered] {
            let total: f64 = m.composition.iter().map(|s| s.percent).sum();
            assert!((total - 100.0).abs() < 1e-9);
            assert_eq!(m.composition.iter().map(|s| s.selected).sum::<usize>(), pools.len());
        }
    }
}

#[test]
fn manifest_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pools: Vec<CandidatePool> = (0..500).map(|i| random_pool(&mut rng, i)).collect();
    let metric = Metric::External("v".into());
    let run = || {
        let m = select_trajectories(&pools, &metric, &MetricParams::default(), Direction::Min).unwrap();
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        (buf, m.render_composition())
    };
    assert_eq!(run(), run());
}

#[test]
fn teacher_ranking_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let n = rng.random_range(1..=11);
        let scores: Vec<(String, f64)> = (0..n)
            .map(|i| (TEACHERS[i].to_string(), rng.random_range(0..4) as f64))
            .collect();
        let ranked = rank_scores(&scores, Direction::Max).unwrap();
        let mut want = scores.clone();
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let got: Vec<_> = ranked.iter().map(|r| (r.teacher_id.clone(), r.score)).collect();
        assert_eq!(got, want);
        assert_eq!(ranked.iter().filter(|r| r.top1).count(), 1);
        assert_eq!(ranked.iter().filter(|r| r.top2).count(), usize::from(n > 1));
    }
}

#[test]
fn teacher_sample_has_unique_records() {
    let records: Vec<TrajectoryRecord> = (0..5000)
        .map(|i| TrajectoryRecord::new(format!("p{i:04}"), "t", 1, vec![TokenStat::new(1, 1.0)]))
        .collect();
    let ds = TrajectoryDataset::new("d", "s", 1000, records);
    let s = sample_for_teacher(&ds, 200, 42).unwrap();
    assert_eq!(s.len(), 200);
    let mut ids: Vec<_> = s.records.iter().map(|r| r.problem_id.clone()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 200);
    assert_eq!(s, sample_for_teacher(&ds, 200, 42).unwrap());
}

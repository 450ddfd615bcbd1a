#![allow(dead_code)]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsr_core::ingest::{self, DatasetManifest};
use rsr_core::model::{TokenStat, TrajectoryDataset, TrajectoryRecord};

const WORDS: [&str; 12] = [
    "check", "verify", "perhaps", "might", "therefore", "since", "the", "x", "sum", "equals",
    "alternatively", "wait",
];

pub struct Shape<'a> {
    pub name: &'a str,
    pub teacher: &'a str,
    pub student: &'a str,
    pub problems: usize,
    pub rollouts: u32,
    pub max_len: usize,
    pub k_ext: u32,
    pub seed: u64,
}

impl Default for Shape<'_> {
    fn default() -> Self {
        Self {
            name: "data",
            teacher: "teacher",
            student: "student",
            problems: 20,
            rollouts: 2,
            max_len: 40,
            k_ext: 1000,
            seed: 1,
        }
    }
}

pub fn dataset(shape: &Shape) -> TrajectoryDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(shape.seed);
    let mut records = Vec::new();
    for p in 0..shape.problems {
        for r in 1..=shape.rollouts {
            let len = rng.random_range(1..=shape.max_len);
            let tokens = (0..len)
                .map(|_| {
                    let rank = rng.random_range(1..=shape.k_ext.min(300));
                    TokenStat::new(rank, rng.random_range(0.01..8.0))
                })
                .collect();
            let words = rng.random_range(1..30);
            let text: Vec<&str> = (0..words).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
            records.push(
                TrajectoryRecord::new(format!("p{p:03}"), shape.teacher, r, tokens)
                    .with_k_ext(shape.k_ext)
                    .with_text(text.join(" "))
                    .with_correct(rng.random_bool(0.6)),
            );
        }
    }
    TrajectoryDataset::new(shape.name, shape.student, shape.k_ext, records)
}

/// Writes the token-stats file and its manifest; returns the data path.
pub fn write_dataset(dir: &Path, shape: &Shape) -> PathBuf {
    let ds = dataset(shape);
    let path = dir.join(format!("{}.jsonl", shape.name));
    ingest::write_token_stats(&ds, BufWriter::new(File::create(&path).unwrap())).unwrap();
    let mut manifest = DatasetManifest::new(shape.name, shape.student);
    manifest.k_ext = Some(shape.k_ext);
    ingest::write_manifest(&manifest, File::create(ingest::manifest_path(&path)).unwrap()).unwrap();
    path
}

pub fn rsr<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_rsr")).args(args).output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

//! Random programs and the labelled synthetic corpora built from them.
//!
//! A corpus directory holds one `.ir` file per program and a `manifest.json`
//! recording the task, seed, generator settings and labels:
//!
//! ```json
//! {
//!   "entries": [{"file": "p00000.ir", "label": 1}, ...],
//!   "generator": {"back_edge_prob": 0.05, ...},
//!   "seed": 7,
//!   "task": "parity"
//! }
//! ```
//!
//! Entries are `{"file", "label"}` for `parity`, `{"file", "labels"}` (one
//! per token) for `regioncount`, and `{"left", "right", "similar"}` for
//! `pairs`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{parse, BinOp, CodeUnit, IrError, Location, Op, Operand};
use crate::model::{Example, Features};
use crate::pdg::build_pdg;
use crate::symmetry::{apply, sample_reordering, SymmetryError};
use crate::vocab::Vocab;

/// Settings of the random program generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub min_instructions: usize,
    pub max_instructions: usize,
    /// Variables are drawn from the first `var_pool` of `a, b, c, ...`.
    pub var_pool: usize,
    /// Chance that the next slot opens a branch (and its target label).
    pub branch_prob: f64,
    /// Chance that a branch jumps backwards.
    pub back_edge_prob: f64,
}

impl Default for GenConfig {
    fn default() -> GenConfig {
        GenConfig {
            min_instructions: 2,
            max_instructions: 16,
            var_pool: 4,
            branch_prob: 0.2,
            back_edge_prob: 0.05,
        }
    }
}

const LITERALS: std::ops::RangeInclusive<i64> = 0..=9;
const BINOPS: [BinOp; 5] = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Lt, BinOp::Eq];

/// A random unit whose instruction count (labels included) lies in
/// `min_instructions..=max_instructions`.
pub fn random_program<R: Rng>(cfg: &GenConfig, rng: &mut R) -> CodeUnit {
    assert!(cfg.var_pool >= 1 && cfg.var_pool <= 26, "var_pool must be in 1..=26");
    assert!(cfg.min_instructions >= 1 && cfg.min_instructions <= cfg.max_instructions);
    let n = rng.gen_range(cfg.min_instructions..=cfg.max_instructions);
    let var = |rng: &mut R| ((b'a' + rng.gen_range(0..cfg.var_pool) as u8) as char).to_string();
    let operand = |rng: &mut R| {
        if rng.gen_bool(0.5) {
            Operand::Var(var(rng))
        } else {
            Operand::Lit(rng.gen_range(LITERALS))
        }
    };
    let mut ops: Vec<Op> = Vec::with_capacity(n);
    let mut pending: Vec<String> = Vec::new();
    let mut labels = 0;
    while ops.len() + pending.len() < n {
        let room = n - ops.len() - pending.len();
        if room >= 2 && rng.gen_bool(cfg.branch_prob) {
            let target = format!("L{labels}");
            labels += 1;
            let cond = var(rng);
            if rng.gen_bool(cfg.back_edge_prob) {
                let at = rng.gen_range(0..=ops.len());
                ops.insert(at, Op::Label(target.clone()));
                ops.push(Op::Branch { cond, target });
            } else {
                ops.push(Op::Branch {
                    cond,
                    target: target.clone(),
                });
                pending.push(target);
            }
            continue;
        }
        let op = match rng.gen_range(0..10) {
            0..=2 => Op::AssignConst {
                dest: var(rng),
                value: rng.gen_range(LITERALS),
            },
            3..=5 => Op::AssignBinop {
                dest: var(rng),
                op: *BINOPS.choose(rng).unwrap(),
                lhs: operand(rng),
                rhs: operand(rng),
            },
            6 => Op::AssignCopy {
                dest: var(rng),
                src: var(rng),
            },
            7 | 8 => Op::Load { dest: var(rng) },
            _ => Op::Store { src: var(rng) },
        };
        ops.push(op);
    }
    // Forward targets land somewhere after their branch.
    for target in pending {
        let branch = ops
            .iter()
            .position(|op| matches!(op, Op::Branch { target: t, .. } if *t == target))
            .expect("branch was emitted");
        let at = rng.gen_range(branch + 1..=ops.len());
        ops.insert(at, Op::Label(target));
    }
    CodeUnit::from_ops(ops).expect("generated labels are unique and resolved")
}

/// `count` programs from one seeded stream.
pub fn random_programs(cfg: &GenConfig, count: usize, seed: u64) -> Vec<CodeUnit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_program(cfg, &mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusTask {
    /// Unit label: number of writes to `a`, mod 2.
    Parity,
    /// Token label: 1 when the token's instruction touches memory.
    Regioncount,
    /// Reordered copies as similar pairs, distinct programs as dissimilar.
    Pairs,
}

pub fn parity_label(unit: &CodeUnit) -> usize {
    let a = Location::Var("a".into());
    unit.ops().filter(|op| op.writes().contains(&a)).count() % 2
}

pub fn region_labels(unit: &CodeUnit) -> Vec<usize> {
    unit.token_owner()
        .iter()
        .map(|&i| usize::from(unit.instructions()[i].op.touches_memory()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Unit { file: String, label: usize },
    Token { file: String, labels: Vec<usize> },
    Pair { left: String, right: String, similar: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<Entry>,
    pub generator: GenConfig,
    pub seed: u64,
    pub task: CorpusTask,
}

/// A corpus in memory: the manifest plus the program behind every file name.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    pub files: Vec<(String, CodeUnit)>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Manifest { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: IrError },
    #[error("manifest entry does not fit a {task:?} corpus")]
    EntryKind { task: CorpusTask },
    #[error("{file}: {found} labels for {expected} tokens")]
    LabelCount { file: String, expected: usize, found: usize },
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
}

fn file_name(i: usize, suffix: &str) -> String {
    format!("p{i:05}{suffix}.ir")
}

/// Builds a labelled corpus of `count` programs. For `pairs`, program `i`
/// yields one similar pair (it and a fully reordered copy) and one dissimilar
/// pair (it and program `i + 1`, wrapping).
pub fn generate(task: CorpusTask, count: usize, seed: u64, cfg: &GenConfig) -> Result<Corpus, CorpusError> {
    let programs = random_programs(cfg, count, seed);
    let mut files = Vec::new();
    let mut entries = Vec::new();
    match task {
        CorpusTask::Parity | CorpusTask::Regioncount => {
            for (i, unit) in programs.into_iter().enumerate() {
                let file = file_name(i, "");
                entries.push(match task {
                    CorpusTask::Parity => Entry::Unit {
                        file: file.clone(),
                        label: parity_label(&unit),
                    },
                    _ => Entry::Token {
                        file: file.clone(),
                        labels: region_labels(&unit),
                    },
                });
                files.push((file, unit));
            }
        }
        CorpusTask::Pairs => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a1e_5eed);
            for (i, unit) in programs.iter().enumerate() {
                let g = build_pdg(unit);
                let perm = sample_reordering(&g, 100, rng.gen())?;
                let (orig, moved) = (file_name(i, "a"), file_name(i, "b"));
                files.push((orig.clone(), unit.clone()));
                files.push((moved.clone(), apply(&perm, unit)?));
                entries.push(Entry::Pair {
                    left: orig.clone(),
                    right: moved,
                    similar: true,
                });
                if count > 1 {
                    entries.push(Entry::Pair {
                        left: orig,
                        right: file_name((i + 1) % count, "a"),
                        similar: false,
                    });
                }
            }
        }
    }
    Ok(Corpus {
        manifest: Manifest {
            entries,
            generator: cfg.clone(),
            seed,
            task,
        },
        files,
    })
}

impl Corpus {
    pub fn unit(&self, file: &str) -> Option<&CodeUnit> {
        self.files.iter().find(|(f, _)| f == file).map(|(_, u)| u)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CorpusError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, unit) in &self.files {
            let path = dir.join(name);
            fs::write(&path, unit.render()).map_err(io_err(&path))?;
        }
        let path = dir.join("manifest.json");
        let mut json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        json.push('\n');
        fs::write(&path, json).map_err(io_err(&path))
    }

    pub fn read(dir: &Path) -> Result<Corpus, CorpusError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|source| CorpusError::Io {
            path: path.clone(),
            source,
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|source| CorpusError::Manifest { path, source })?;
        let mut names: Vec<&String> = manifest
            .entries
            .iter()
            .flat_map(|e| match e {
                Entry::Unit { file, .. } | Entry::Token { file, .. } => vec![file],
                Entry::Pair { left, right, .. } => vec![left, right],
            })
            .collect();
        names.sort();
        names.dedup();
        let mut files = Vec::with_capacity(names.len());
        for name in names {
            let path = dir.join(name);
            let src = fs::read_to_string(&path).map_err(|source| CorpusError::Io {
                path: path.clone(),
                source,
            })?;
            let unit = parse(&src).map_err(|source| CorpusError::Parse { path, source })?;
            files.push((name.clone(), unit));
        }
        Ok(Corpus { manifest, files })
    }

    /// Training examples, with every unit first transformed by `transform`
    /// (for instance a reordering) before its features are built.
    pub fn examples_with(
        &self,
        vocab: &Vocab,
        mut transform: impl FnMut(&CodeUnit) -> Result<CodeUnit, CorpusError>,
    ) -> Result<Vec<Example>, CorpusError> {
        let task = self.manifest.task;
        let mut feats = |file: &str| -> Result<(CodeUnit, Features), CorpusError> {
            let unit = self.unit(file).ok_or_else(|| CorpusError::Io {
                path: file.into(),
                source: io::Error::new(io::ErrorKind::NotFound, "file missing from corpus"),
            })?;
            let unit = transform(unit)?;
            let f = Features::from_unit(&unit, vocab);
            Ok((unit, f))
        };
        self.manifest
            .entries
            .iter()
            .map(|entry| match (task, entry) {
                (CorpusTask::Parity, Entry::Unit { file, label }) => Ok(Example::Unit {
                    features: feats(file)?.1,
                    label: *label,
                }),
                (CorpusTask::Regioncount, Entry::Token { file, labels }) => {
                    let (unit, features) = feats(file)?;
                    if labels.len() != features.len() {
                        return Err(CorpusError::LabelCount {
                            file: file.clone(),
                            expected: features.len(),
                            found: labels.len(),
                        });
                    }
                    // Labels follow their tokens when the unit was reordered.
                    Ok(Example::Token {
                        labels: region_labels(&unit),
                        features,
                    })
                }
                (CorpusTask::Pairs, Entry::Pair { left, right, similar }) => Ok(Example::Pair {
                    left: feats(left)?.1,
                    right: feats(right)?.1,
                    similar: *similar,
                }),
                _ => Err(CorpusError::EntryKind { task }),
            })
            .collect()
    }

    pub fn examples(&self, vocab: &Vocab) -> Result<Vec<Example>, CorpusError> {
        self.examples_with(vocab, |u| Ok(u.clone()))
    }
}

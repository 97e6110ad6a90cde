//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a checked property failed, 2 usage, input or I/O
//! error. The default seed comes from `PDGSYM_SEED`; `--config` names a JSON
//! file whose values are overridden by explicit flags.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audit::{self, AuditConfig, Suite};
use crate::corpus::{self, Corpus, CorpusTask, GenConfig};
use crate::eval::evaluate;
use crate::ir::{io_equivalent, parse, CodeUnit};
use crate::model::{load_checkpoint, save_checkpoint, train, GaModel, ModelConfig, Precision, TrainConfig};
use crate::pdg::{build_pdg, to_dot, to_json};
use crate::symmetry::{apply, sample_reordering};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "pdgsym", version, about = "Dependence graphs, their symmetries, and an encoder that respects them")]
pub struct Cli {
    /// Seed used by every randomised step.
    #[arg(long, global = true, env = "PDGSYM_SEED")]
    seed: Option<u64>,
    /// JSON file with `seed`, `generator`, `model`, `train` and `audit` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a program and print it in canonical form.
    Parse {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ParseFormat::Text)]
        format: ParseFormat,
    },
    /// Emit the dependence graph of a program.
    Pdg {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = GraphFormat::Json)]
        format: GraphFormat,
    },
    /// Write reordered variants of a program plus a manifest.
    Perm {
        input: PathBuf,
        #[arg(long, default_value_t = 100)]
        percent: u32,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Check every variant against the original on random inputs.
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the property suites and print the report.
    Audit {
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        #[arg(long)]
        programs: Option<usize>,
        /// Also audit a model fed absolute positions, which must fail.
        #[arg(long)]
        negative_control: bool,
        #[arg(long, value_enum)]
        precision: Option<PrecisionArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a labelled synthetic corpus.
    Gen {
        #[arg(long)]
        programs: usize,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a corpus and write a checkpoint.
    Train {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a corpus, optionally reordered.
    Eval {
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        percent: u32,
        #[arg(long, value_enum)]
        precision: Option<PrecisionArg>,
        /// Include per-example predictions and scores.
        #[arg(long)]
        predictions: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ParseFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GraphFormat {
    Dot,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    Equivariance,
    Distance,
    Semantics,
    Gradients,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Parity,
    Regioncount,
    Pairs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionArg {
    Wide,
    Narrow,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Precision {
        match p {
            PrecisionArg::Wide => Precision::Wide,
            PrecisionArg::Narrow => Precision::Narrow,
        }
    }
}

/// Settings read from `--config`; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub generator: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub audit: Option<AuditConfig>,
}

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_unit(path: &Path) -> Result<(String, CodeUnit), Failure> {
    let text = read_text(path)?;
    let unit = parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok((text, unit))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => write_file(p, text.as_bytes()),
        None => out.write_all(text.as_bytes()).map_err(|e| usage(e.to_string())),
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => serde_json::from_str(&read_text(path)?)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Runs the CLI on `args` (program name first), returning the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(rendered.as_bytes())
            } else {
                err.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    match dispatch(&cli, out, err) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Parse { input, format } => {
            let (_, unit) = read_unit(input)?;
            let text = match format {
                ParseFormat::Text => unit.render(),
                ParseFormat::Json => pretty(&json!({
                    "instructions": unit.ops().map(|op| op.to_string()).collect::<Vec<_>>(),
                    "intra_pos": unit.intra_pos(),
                    "token_owner": unit.token_owner(),
                    "tokens": unit.tokens(),
                })),
            };
            emit(out, None, &text)?;
            Ok(EXIT_OK)
        }
        Command::Pdg { input, format } => {
            let (_, unit) = read_unit(input)?;
            let g = build_pdg(&unit);
            let text = match format {
                GraphFormat::Json => to_json(&unit, &g),
                GraphFormat::Dot => to_dot(&unit, &g),
            };
            emit(out, None, &text)?;
            Ok(EXIT_OK)
        }
        Command::Perm {
            input,
            percent,
            count,
            verify,
            trials,
            out: dir,
        } => cmd_perm(&cfg, input, *percent, *count, *verify, *trials, dir, out),
        Command::Audit {
            suite,
            programs,
            negative_control,
            precision,
            out: path,
        } => {
            let mut acfg = cfg.audit.clone().unwrap_or_else(|| AuditConfig {
                generator: cfg.generator.clone(),
                model: cfg.model.clone(),
                ..AuditConfig::default()
            });
            acfg.seed = cfg.seed;
            if let Some(n) = programs {
                acfg.programs = *n;
                acfg.semantics_programs = *n;
            }
            if let Some(p) = precision {
                acfg.model.precision = (*p).into();
            }
            acfg.negative_control |= negative_control;
            let suite = match suite {
                SuiteArg::Equivariance => Suite::Equivariance,
                SuiteArg::Distance => Suite::Distance,
                SuiteArg::Semantics => Suite::Semantics,
                SuiteArg::Gradients => Suite::Gradients,
                SuiteArg::All => Suite::All,
            };
            let started = std::time::Instant::now();
            let report = audit::run(&acfg, suite);
            let _ = writeln!(err, "audit finished in {:.2?}", started.elapsed());
            emit(out, path.as_deref(), &report.to_json())?;
            for p in report.failing() {
                let _ = writeln!(
                    err,
                    "FAILED {}: max deviation {:e} exceeds tolerance {:e}",
                    p.property, p.max_abs_deviation, p.tolerance
                );
            }
            Ok(if report.pass { EXIT_OK } else { EXIT_PROPERTY })
        }
        Command::Gen {
            programs,
            task,
            out: dir,
        } => {
            let task = match task {
                TaskArg::Parity => CorpusTask::Parity,
                TaskArg::Regioncount => CorpusTask::Regioncount,
                TaskArg::Pairs => CorpusTask::Pairs,
            };
            let c = corpus::generate(task, *programs, cfg.seed, &cfg.generator).map_err(|e| usage(e.to_string()))?;
            c.write(dir).map_err(|e| usage(e.to_string()))?;
            let _ = writeln!(err, "wrote {} entries to {}", c.manifest.entries.len(), dir.display());
            Ok(EXIT_OK)
        }
        Command::Train {
            corpus: dir,
            out: path,
            epochs,
            metrics,
        } => {
            let c = Corpus::read(dir).map_err(|e| usage(e.to_string()))?;
            let mut mcfg = cfg.model.clone();
            mcfg.seed = cfg.seed;
            let mut tcfg = cfg.train.clone();
            tcfg.seed = cfg.seed;
            if let Some(e) = epochs {
                tcfg.epochs = *e;
            }
            let model = GaModel::new(mcfg.clone()).map_err(|e| usage(e.to_string()))?;
            let examples = c.examples(&mcfg.vocab()).map_err(|e| usage(e.to_string()))?;
            let (model, trace) = train(model, &examples, &tcfg).map_err(|e| usage(e.to_string()))?;
            let meta = json!({
                "corpus": dir.display().to_string(),
                "seed": cfg.seed,
                "task": c.manifest.task,
                "trace": trace,
                "train": tcfg,
            });
            save_checkpoint(path, &model, &meta).map_err(|e| usage(e.to_string()))?;
            emit(out, metrics.as_deref(), &pretty(&meta))?;
            Ok(EXIT_OK)
        }
        Command::Eval {
            corpus: dir,
            checkpoint,
            percent,
            precision,
            predictions,
            out: path,
        } => {
            if *percent > 100 {
                return Err(usage(format!("--percent {percent} is outside 0..=100")));
            }
            let c = Corpus::read(dir).map_err(|e| usage(e.to_string()))?;
            let (mut model, meta) = load_checkpoint(checkpoint).map_err(|e| usage(e.to_string()))?;
            if let Some(p) = precision {
                model = model.with_precision((*p).into());
            }
            let mut e = evaluate(&model, &c, *percent, cfg.seed).map_err(|e| usage(e.to_string()))?;
            if !predictions {
                e.predictions.clear();
                e.scores.clear();
            }
            let report = json!({
                "checkpoint": checkpoint.display().to_string(),
                "checkpoint_meta": meta,
                "corpus": dir.display().to_string(),
                "metrics": e,
                "model": model.config(),
                "seed": cfg.seed,
            });
            emit(out, path.as_deref(), &pretty(&report))?;
            Ok(EXIT_OK)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_perm(
    cfg: &RunConfig,
    input: &Path,
    percent: u32,
    count: usize,
    verify: bool,
    trials: usize,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let (text, unit) = read_unit(input)?;
    let g = build_pdg(&unit);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut variants = Vec::with_capacity(count);
    let mut failed = None;
    for k in 0..count {
        let perm = sample_reordering(&g, percent, rng.gen()).map_err(|e| usage(e.to_string()))?;
        let file = format!("variant_{k:04}.ir");
        // The identity reproduces the input byte for byte.
        let (moved, body) = if perm.is_identity() {
            (unit.clone(), text.clone())
        } else {
            let moved = apply(&perm, &unit).map_err(|e| usage(e.to_string()))?;
            let body = moved.render();
            (moved, body)
        };
        let verdict = verify.then(|| io_equivalent(&unit, &moved, trials, cfg.seed.wrapping_add(k as u64)));
        if let Some(v) = &verdict {
            if v.is_inequivalent() && failed.is_none() {
                failed = Some(file.clone());
            }
        }
        write_file(&dir.join(&file), body.as_bytes())?;
        variants.push(json!({
            "file": file,
            "permutation": perm.as_slice(),
            "verification": verdict,
        }));
        if failed.is_some() {
            break;
        }
    }
    let manifest = pretty(&json!({
        "count": count,
        "input": input.display().to_string(),
        "percent": percent,
        "seed": cfg.seed,
        "trials": if verify { Some(trials) } else { None },
        "variants": variants,
    }));
    write_file(&dir.join("manifest.json"), manifest.as_bytes())?;
    if let Some(file) = failed {
        return Err(Failure {
            code: EXIT_PROPERTY,
            message: format!("{file} is not equivalent to the input; aborting"),
        });
    }
    emit(out, None, &format!("wrote {} variants to {}\n", variants.len(), dir.display()))?;
    Ok(EXIT_OK)
}

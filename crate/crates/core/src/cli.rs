//! The `dots` command line: corpus generation, training, evaluation, length
//! profiling and an interactive chat loop.
//!
//! Exit codes: 0 on success, 1 for runtime failures, 2 for usage errors
//! (bad flags, missing input files).

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{generate_synthetic, parse_corpus, CorpusSplits, Dialogue};
use crate::database::Database;
use crate::error::Error;
use crate::evaluation::{evaluate, evaluate_gold};
use crate::nn::{Model, ModelConfig};
use crate::ontology::{Ontology, Vocabulary};
use crate::pipeline::{initial_state, Mode, Pipeline, SessionState};
use crate::profiler::{profile, ProfileMode};
use crate::schema::Schema;
use crate::training::{corpus_schema, train, Checkpoint, TrainingConfig, DEFAULT_SEED};
use crate::world;

pub const CORPUS_FILE: &str = "corpus.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAINING_LOG_FILE: &str = "training_log.csv";
pub const TRAINING_CONFIG_FILE: &str = "training_config.toml";
pub const PROFILE_FILE: &str = "length_profile.csv";

#[derive(Debug, Parser)]
#[command(name = "dots", version, about = "Task-oriented dialogue with domain state tracking")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct WorldArgs {
    /// Ontology JSON (default: built-in restaurant/hotel/taxi world).
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Entity database JSON (default: built-in).
    #[arg(long)]
    pub db: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Random seed; falls back to $DOTS_SEED, then a fixed default.
    #[arg(long, env = "DOTS_SEED")]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    /// Predicted states flow downstream.
    E2e,
    /// Gold states are substituted downstream each turn.
    Oracle,
    /// Score the gold annotations themselves.
    Gold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-domain corpus.
    GenCorpus {
        #[command(flatten)]
        world: WorldArgs,
        #[command(flatten)]
        seed: SeedArg,
        /// Number of dialogues over all splits.
        #[arg(long, default_value_t = 300)]
        dialogues: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and keep the checkpoint with the best validation score.
    Train {
        #[command(flatten)]
        world: WorldArgs,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML file with training settings; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        /// Replace the domain-state segment of every context by a constant block.
        #[arg(long)]
        no_domain_state: bool,
    },
    /// Score a checkpoint (or the gold annotations) on a corpus split.
    Eval {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, required_if_eq_any([("mode", "e2e"), ("mode", "oracle")]))]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalMode::E2e)]
        mode: EvalMode,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Also write per-dialogue verdicts.
        #[arg(long)]
        per_dialogue: bool,
    },
    /// Per-turn input-context lengths, dots context versus full history.
    Profile {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::All)]
        split: Split,
    },
    /// Talk to a trained model. `/reset` starts over, `/quit` leaves.
    Chat {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Print the three encoder contexts of every turn.
        #[arg(long)]
        dump_context: bool,
    },
}

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{}: {source}", category(source))]
    Runtime {
        #[from]
        source: Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime { .. } => 1,
        }
    }
}

fn category(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "i/o error",
        Error::Format { .. }
        | Error::DuplicateName { .. }
        | Error::EmptyValues { .. }
        | Error::VocabularyCollision(_) => "input error",
        Error::Checkpoint(_) | Error::Shape(_) => "checkpoint error",
        Error::NonFiniteLoss(_) => "training error",
        Error::Argument(_) => "argument error",
        _ => "runtime error",
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} `{}` does not exist", path.display())))
    }
}

fn seed(arg: &SeedArg) -> u64 {
    arg.seed.unwrap_or(DEFAULT_SEED)
}

fn load_world(args: &WorldArgs) -> CliResult<(Ontology, Database)> {
    let ontology = match &args.ontology {
        Some(p) => {
            require_file(p, "ontology")?;
            Ontology::load(p)?
        }
        None => world::ontology(),
    };
    let db = match &args.db {
        Some(p) => {
            require_file(p, "database")?;
            Database::load(&ontology, p)?
        }
        None => world::database(&ontology)?,
    };
    Ok((ontology, db))
}

fn load_corpus(ontology: &Ontology, path: &Path) -> CliResult<CorpusSplits> {
    require_file(path, "corpus")?;
    Ok(parse_corpus(ontology, path)?)
}

fn pick(splits: &CorpusSplits, split: Split) -> Vec<Dialogue> {
    match split {
        Split::Train => splits.train.clone(),
        Split::Validation => splits.validation.clone(),
        Split::Test => splits.test.clone(),
        Split::All => splits.all().cloned().collect(),
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

/// A checkpoint together with the schema its vocabulary describes.
pub fn load_model(ontology: &Ontology, path: &Path) -> CliResult<(Model, Schema)> {
    require_file(path, "checkpoint")?;
    let ck = Checkpoint::load(path)?;
    let vocab = Vocabulary::from_token_list(ontology, ck.vocabulary)?;
    let schema = Schema::new(ontology.clone(), vocab)?;
    if schema.vocab().len() != ck.model.config.encoder.vocab_size {
        return Err(Error::Shape("checkpoint vocabulary does not match its embedding table".into()).into());
    }
    Ok((ck.model, schema))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenCorpus {
            world,
            seed: s,
            dialogues,
            out,
        } => {
            let (ontology, db) = load_world(&world)?;
            let splits = generate_synthetic(&ontology, &db, dialogues, seed(&s))?;
            create_dir(&out)?;
            splits.save(&ontology, out.join(CORPUS_FILE))?;
            log::info!(
                "wrote {} dialogues ({} / {} / {})",
                splits.len(),
                splits.train.len(),
                splits.validation.len(),
                splits.test.len()
            );
            Ok(())
        }
        Command::Train {
            world,
            seed: s,
            corpus,
            out,
            config,
            epochs,
            lr,
            batch,
            patience,
            no_domain_state,
        } => {
            let (ontology, db) = load_world(&world)?;
            let mut cfg = match &config {
                Some(p) => {
                    require_file(p, "config")?;
                    TrainingConfig::load(p)?
                }
                None => TrainingConfig::default(),
            };
            if let Some(v) = s.seed {
                cfg.seed = v;
            }
            if let Some(v) = epochs {
                cfg.max_epochs = v;
            }
            if let Some(v) = lr {
                cfg.lr = v;
            }
            if let Some(v) = batch {
                cfg.batch_size = v;
            }
            if let Some(v) = patience {
                cfg.patience = v;
            }
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let splits = load_corpus(&ontology, &corpus)?;
            let schema = corpus_schema(&ontology, &splits)?;
            let mut mc = ModelConfig::new(schema.vocab().len(), ontology.num_domains());
            mc.mask_domain_state = no_domain_state;
            let model = Model::new(mc, cfg.seed)?;
            create_dir(&out)?;
            std::fs::write(out.join(TRAINING_CONFIG_FILE), cfg.to_toml())
                .map_err(|e| Error::io(out.join(TRAINING_CONFIG_FILE), e))?;
            match train(model, &schema, &db, &splits, &cfg) {
                Ok(outcome) => {
                    outcome.best.save(out.join(CHECKPOINT_FILE))?;
                    outcome.log.save_csv(out.join(TRAINING_LOG_FILE))?;
                    log::info!("best epoch {:?}", outcome.log.best_epoch);
                    Ok(())
                }
                Err(failure) => {
                    if let Some(best) = &failure.best {
                        best.save(out.join(CHECKPOINT_FILE))?;
                        eprintln!("kept checkpoint from epoch {}", best.epoch);
                    }
                    failure.log.save_csv(out.join(TRAINING_LOG_FILE))?;
                    Err(failure.source.into())
                }
            }
        }
        Command::Eval {
            world,
            corpus,
            checkpoint,
            out,
            mode,
            split,
            per_dialogue,
        } => {
            let (ontology, db) = load_world(&world)?;
            let splits = load_corpus(&ontology, &corpus)?;
            let dialogues = pick(&splits, split);
            let report = match mode {
                EvalMode::Gold => evaluate_gold(&ontology, &db, &dialogues)?,
                EvalMode::E2e | EvalMode::Oracle => {
                    let path = checkpoint.ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
                    let (model, schema) = load_model(&ontology, &path)?;
                    let pipeline = Pipeline::new(&model, &schema, &db);
                    evaluate(&pipeline, &dialogues, mode == EvalMode::Oracle)?
                }
            };
            create_dir(&out)?;
            report.write(&out, per_dialogue)?;
            println!(
                "inform {:.2}  success {:.2}  bleu {:.2}  ({} dialogues)",
                report.inform, report.success, report.bleu, report.dialogues
            );
            Ok(())
        }
        Command::Profile {
            world,
            corpus,
            out,
            split,
        } => {
            let (ontology, db) = load_world(&world)?;
            let splits = load_corpus(&ontology, &corpus)?;
            let schema = corpus_schema(&ontology, &splits)?;
            let p = profile(&schema, &db, &pick(&splits, split), &ProfileMode::ALL)?;
            create_dir(&out)?;
            p.write_csv(out.join(PROFILE_FILE))?;
            Ok(())
        }
        Command::Chat {
            world,
            checkpoint,
            dump_context,
        } => {
            let (ontology, db) = load_world(&world)?;
            let (model, schema) = load_model(&ontology, &checkpoint)?;
            let pipeline = Pipeline::new(&model, &schema, &db);
            let opts = ChatOptions {
                verbose: cli.verbose > 0,
                dump_context,
            };
            let stdin = std::io::stdin();
            run_chat(&pipeline, stdin.lock(), std::io::stdout(), opts).map_err(|e| Error::io("<terminal>", e))?;
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ChatOptions {
    pub verbose: bool,
    pub dump_context: bool,
}

/// Read-eval loop over `input`. Returns at `/quit` or end of input.
pub fn run_chat<R: BufRead, W: Write>(
    pipeline: &Pipeline<'_>,
    input: R,
    mut out: W,
    opts: ChatOptions,
) -> std::io::Result<()> {
    let schema = pipeline.schema;
    let ontology = schema.ontology();
    let mut state: SessionState = initial_state(ontology);
    write!(out, "> ")?;
    out.flush()?;
    for line in input.lines() {
        let line = line?;
        let text = line.trim();
        match text {
            "/quit" => return Ok(()),
            "/reset" => {
                state = initial_state(ontology);
                writeln!(out, "(state reset)")?;
            }
            "" => {}
            _ => match pipeline.run_turn(&state, text, Mode::EndToEnd) {
                Ok((r, next)) => {
                    if opts.dump_context {
                        for c in &r.contexts {
                            let words = schema.vocab().detokenize(&c.tokens).unwrap_or_default();
                            writeln!(out, "  C[{:?}] {}", c.kind, words)?;
                        }
                    }
                    if r.is_repaired() {
                        writeln!(out, "warning: repaired malformed decoder output")?;
                    }
                    if opts.verbose {
                        writeln!(out, "  D: {}", r.domain.display(ontology))?;
                        writeln!(out, "  B: {}", r.belief.display(ontology))?;
                        writeln!(out, "  DB: {}", r.db.display(ontology))?;
                        writeln!(out, "  A: {}", r.action.display(ontology))?;
                    }
                    writeln!(out, "system: {}", r.response_lex)?;
                    state = next;
                }
                Err(e) => {
                    writeln!(out, "warning: {e}; keeping the previous state")?;
                    state.turn += 1;
                }
            },
        }
        write!(out, "> ")?;
        out.flush()?;
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error ({e})");
            e.exit_code()
        }
    }
}

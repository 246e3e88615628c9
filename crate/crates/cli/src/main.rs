//! `propdis` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use propdis::corpus::{read_predictions, SplitName, TaskId};
use propdis::expman::{
    audit_dataset, audit_splits, compare_to_paper, emit_loss_curves, published_table, reference_fixture, results_table, ExperimentConfig,
    ExperimentManifest, ExpmanError, Mode, RunOverrides, EXIT_OK, EXIT_VALIDATION,
};
use propdis::metrics::score_pairs;

#[derive(Parser)]
#[command(name = "propdis", version, about = "Propaganda and disinformation classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Task; overrides the config.
    #[arg(long)]
    task: Option<TaskId>,
}

#[derive(Subcommand)]
enum Command {
    /// Class distribution of task splits against the published counts.
    Audit {
        #[arg(long)]
        task: TaskId,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Audit the bundled synthetic fixture instead of files.
        #[arg(long, conflicts_with_all = ["train", "dev", "test"])]
        fixture: bool,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Fine-tune one configuration (mode = "finetune").
    Train(RunArgs),
    /// Dropout sweep (mode = "sweep").
    Sweep(RunArgs),
    /// Randomized grid search (mode = "search").
    Search(RunArgs),
    /// Zero/few-shot LLM classification (mode = "llm_probe").
    Probe(RunArgs),
    /// Score predictions against gold labels, from flags or a config
    /// (mode = "score").
    Score {
        #[arg(long, conflicts_with_all = ["gold", "pred"])]
        config: Option<PathBuf>,
        #[arg(long, requires = "pred")]
        gold: Option<PathBuf>,
        #[arg(long, requires = "gold")]
        pred: Option<PathBuf>,
        #[arg(long)]
        task: Option<TaskId>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render a manifest's results table, or the published results.
    Report {
        #[arg(long, required_unless_present = "published")]
        manifest: Option<PathBuf>,
        /// Also write the loss-curve table to this file.
        #[arg(long, requires = "manifest")]
        curves: Option<PathBuf>,
        /// Print the published results for --task.
        #[arg(long, requires = "task", conflicts_with = "manifest")]
        published: bool,
        #[arg(long)]
        task: Option<TaskId>,
    },
    /// Side-by-side comparison of a manifest with published results.
    Compare {
        #[arg(long)]
        manifest: PathBuf,
    },
}

enum Failure {
    Expman(ExpmanError),
    Validation(String),
}

impl From<ExpmanError> for Failure {
    fn from(e: ExpmanError) -> Self {
        Failure::Expman(e)
    }
}

fn run_mode(args: &RunArgs, expected: Mode) -> Result<i32, Failure> {
    let config = ExperimentConfig::load(&args.config)?;
    if config.mode != expected {
        return Err(Failure::Validation(format!("{} has mode {}, this command runs {}", args.config.display(), config.mode, expected)));
    }
    let overrides = RunOverrides { out_dir: args.out.clone(), seed: args.seed, task_id: args.task };
    let manifest = propdis::expman::run(&args.config, &overrides)?;
    print!("{}", results_table(&manifest).render());
    Ok(EXIT_OK)
}

fn audit(task: TaskId, paths: [(SplitName, &Option<PathBuf>); 3], fixture: bool, json: bool) -> Result<i32, Failure> {
    let report = if fixture {
        audit_splits(task, &reference_fixture(task))?
    } else {
        let given: Vec<(SplitName, PathBuf)> = paths.iter().filter_map(|(s, p)| p.as_ref().map(|p| (*s, p.clone()))).collect();
        if given.is_empty() {
            return Err(Failure::Validation("give at least one of --train/--dev/--test, or --fixture".into()));
        }
        audit_dataset(task, &given)?
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{}", report.render());
    }
    Ok(if report.passed() { EXIT_OK } else { EXIT_VALIDATION })
}

fn score(config: Option<&Path>, gold: Option<&Path>, pred: Option<&Path>, task: Option<TaskId>, out: Option<PathBuf>, seed: Option<u64>) -> Result<i32, Failure> {
    if let Some(config) = config {
        let args = RunArgs { config: config.to_path_buf(), out, seed, task };
        return run_mode(&args, Mode::Score);
    }
    let (Some(gold), Some(pred)) = (gold, pred) else {
        return Err(Failure::Validation("give --config, or --gold and --pred".into()));
    };
    let task = task.ok_or_else(|| Failure::Validation("--task is required with --gold/--pred".into()))?;
    let load = |p: &Path| read_predictions(p).map_err(|e| Failure::Expman(e.into()));
    let eval = score_pairs(&load(gold)?, &load(pred)?, &task.vocab()).map_err(|e| Failure::Expman(e.into()))?;
    print!("{}", eval.render_text());
    Ok(EXIT_OK)
}

fn dispatch(cli: Cli) -> Result<i32, Failure> {
    match cli.command {
        Command::Audit { task, train, dev, test, fixture, json } => {
            audit(task, [(SplitName::Train, &train), (SplitName::Dev, &dev), (SplitName::Test, &test)], fixture, json)
        }
        Command::Train(args) => run_mode(&args, Mode::Finetune),
        Command::Sweep(args) => run_mode(&args, Mode::Sweep),
        Command::Search(args) => run_mode(&args, Mode::Search),
        Command::Probe(args) => run_mode(&args, Mode::LlmProbe),
        Command::Score { config, gold, pred, task, out, seed } => score(config.as_deref(), gold.as_deref(), pred.as_deref(), task, out, seed),
        Command::Report { manifest, curves, published, task } => {
            if published {
                print!("{}", published_table(task.expect("clap requires --task")).render());
                return Ok(EXIT_OK);
            }
            let manifest = ExperimentManifest::load(manifest.expect("clap requires --manifest"))?;
            print!("{}", results_table(&manifest).render());
            if let Some(path) = curves {
                emit_loss_curves(&manifest, &path)?;
            }
            Ok(EXIT_OK)
        }
        Command::Compare { manifest } => {
            let manifest = ExperimentManifest::load(manifest)?;
            print!("{}", compare_to_paper(&manifest)?.render());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION as u8 } else { EXIT_OK as u8 });
        }
    };
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(Failure::Validation(message)) => {
            eprintln!("error: {message}");
            EXIT_VALIDATION
        }
        Err(Failure::Expman(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

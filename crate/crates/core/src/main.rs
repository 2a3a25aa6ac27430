use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gemquad::backend::{self, BackendEndpoint, DEFAULT_PREDICT_BATCH};
use gemquad::corpus::load_dataset;
use gemquad::orchestrator::{
    self, emit_report, run_generate, score_model, Fault, FaultAction, OrchestratorError, RunConfig, RunOptions,
    FAULT_ENV,
};
use gemquad::qametrics::{evaluate, Averaging, NormalizationProfile};
use gemquad::ModelRef;

#[derive(Parser)]
#[command(name = "gemquad", version, about = "Synthetic extractive-QA curation loop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AveragingArg {
    Macro,
    Micro,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic QA pairs for every configured language.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the configured training mode, optionally resuming a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Score a model (or a predictions file) on a dataset.
    Eval {
        /// Model reference passed to the student backend.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        dataset: PathBuf,
        /// `mlqa` or a profile file (.json / .toml).
        #[arg(long, default_value = "mlqa")]
        profile: String,
        /// Language for records that do not carry one.
        #[arg(long, default_value = "en")]
        lang: String,
        /// Student backend URL (http://... or mock://script.json).
        #[arg(long)]
        backend: Option<String>,
        /// JSON object mapping qa id to predicted answer text; replaces the backend.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "macro")]
        averaging: AveragingArg,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit the report files of a run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

enum CliError {
    Run(OrchestratorError),
    Usage(String),
    Other(String),
}

impl<E: Into<OrchestratorError>> From<E> for CliError {
    fn from(e: E) -> Self {
        Self::Run(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Generate { config } => {
            let cfg = RunConfig::load(&config)?;
            for g in run_generate(&cfg)? {
                println!(
                    "{}: {} contexts -> {} records ({} excluded) -> {}",
                    g.lang,
                    g.contexts,
                    g.records,
                    g.excluded,
                    g.output.display()
                );
            }
            Ok(())
        }
        Command::Run { config, resume } => {
            let cfg = RunConfig::load(&config)?;
            let fault = std::env::var(FAULT_ENV)
                .ok()
                .and_then(|spec| Fault::parse(&spec, FaultAction::Abort));
            let state = orchestrator::run(&cfg, &RunOptions { resume, fault })?;
            let stop = state.stop.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
            println!(
                "run finished: {} rounds, stop {stop}, best round {}",
                state.rounds.len(),
                state.best_round.map(|r| r.to_string()).unwrap_or_else(|| "-".into())
            );
            println!("report: {}", cfg.run_dir().join("report").display());
            Ok(())
        }
        Command::Eval {
            model,
            dataset,
            profile,
            lang,
            backend,
            predictions,
            averaging,
            out,
        } => {
            let profile = NormalizationProfile::load(&profile)?;
            let ds = load_dataset(&dataset, &lang)?;
            let averaging = match averaging {
                AveragingArg::Macro => Averaging::Macro,
                AveragingArg::Micro => Averaging::Micro,
            };
            let report = if let Some(path) = predictions {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Other(format!("cannot read {}: {e}", path.display())))?;
                let preds: BTreeMap<String, String> = serde_json::from_str(&text)
                    .map_err(|e| CliError::Other(format!("predictions {}: {e}", path.display())))?;
                evaluate(&preds, &ds, &profile, &[], averaging)
            } else {
                let (Some(model), Some(url)) = (model, backend) else {
                    return Err(CliError::Usage("eval needs --predictions, or both --model and --backend".into()));
                };
                let student = backend::connect(&BackendEndpoint::new(url))?;
                let model = ModelRef::new(model)?;
                score_model(student.as_ref(), &model, &ds, &profile, averaging, DEFAULT_PREDICT_BATCH)?
            };
            print!("{}", report.render_table());
            if let Some(out) = out {
                let json = serde_json::to_vec_pretty(&report).expect("report serializes");
                std::fs::write(&out, json).map_err(|e| CliError::Other(format!("cannot write {}: {e}", out.display())))?;
            }
            Ok(())
        }
        Command::Report { run_dir } => {
            let files = emit_report(&run_dir)?;
            println!("{}", files.rounds_md.display());
            println!("{}", files.rounds_csv.display());
            println!("{}", files.acceptance_csv.display());
            println!("{}", files.final_eval_md.display());
            println!("{}", files.summary_json.display());
            Ok(())
        }
    }
}

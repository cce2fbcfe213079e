//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use log::{info, warn};

use crate::efsm::{walk, AcceptMode, Efsm};
use crate::evaluation::{run_experiment, Experiment, DEFAULT_FOLDS, DEFAULT_NEGATIVES};
use crate::guidance::Session;
use crate::inference::{infer_with_observer, InferenceConfig};
use crate::parser::{parse_corpus, parse_steps};
use crate::service::{self, ServiceState, DEFAULT_TTL};
use crate::trace::Corpus;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_INFERENCE: i32 = 3;
pub const EXIT_EVALUATION: i32 = 4;

pub const LOG_ENV: &str = "PROOFMINER_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "proofminer",
    version,
    about = "Mine state machines from Coq proof scripts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract traces from proof scripts.
    Parse {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Infer a model from a trace corpus.
    Infer {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Inference settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Leave this proof out before inferring.
        #[arg(long)]
        holdout: Option<String>,
    },
    /// k-fold cross validation.
    Eval {
        #[arg(short, long)]
        input: PathBuf,
        /// Traces from unrelated theories, used as negatives.
        #[arg(long)]
        foreign: Option<PathBuf>,
        #[arg(short, default_value_t = DEFAULT_FOLDS)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_NEGATIVES)]
        negatives: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = AcceptMode::Guarded)]
        mode: AcceptMode,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the full report as JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Per-trace verdicts against a model.
    Accept {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long, default_value_t = AcceptMode::Guarded)]
        mode: AcceptMode,
    },
    /// List the options after a partial proof.
    Suggest {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(long, default_value = "")]
        history: String,
        #[arg(long)]
        json: bool,
    },
    /// Run the guidance HTTP service.
    Serve {
        #[arg(short, long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Write GraphViz and guard rule files.
    Export {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(long)]
        dot: Option<PathBuf>,
        #[arg(long)]
        guards: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path, code: i32) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| fail(code, format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, bytes).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn load_corpus(path: &Path) -> Result<Corpus, Failure> {
    Corpus::from_json(&read(path, EXIT_PARSE)?)
        .map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Efsm, Failure> {
    Efsm::from_json(&read(path, EXIT_PARSE)?)
        .map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<InferenceConfig, Failure> {
    match path {
        None => Ok(InferenceConfig::default()),
        Some(p) => InferenceConfig::from_json(&read(p, EXIT_USAGE)?)
            .map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", p.display()))),
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn execute(command: Command) -> Outcome {
    match command {
        Command::Parse { files, output } => {
            let (corpus, summary) =
                parse_corpus(&files).map_err(|e| fail(EXIT_PARSE, e.to_string()))?;
            for w in &summary.warnings {
                warn!("{w}");
            }
            write(&output, corpus.to_json())?;
            eprintln!(
                "{} files, {} proofs parsed, {} skipped, {} warnings",
                summary.files_read,
                summary.proofs_parsed,
                summary.proofs_skipped,
                summary.warnings.len()
            );
            Ok(())
        }
        Command::Infer {
            input,
            output,
            config,
            holdout,
        } => {
            let config = load_config(config.as_deref())?;
            let mut corpus = load_corpus(&input)?;
            if let Some(name) = holdout {
                corpus = corpus.without(&name).ok_or_else(|| {
                    fail(EXIT_USAGE, format!("no proof named {name:?} in corpus"))
                })?;
                info!("holding out {name}");
            }
            let (model, stats) = infer_with_observer(&corpus, &config, &mut |_, _| {})
                .map_err(|e| fail(EXIT_INFERENCE, e.to_string()))?;
            write(&output, model.to_json())?;
            eprintln!(
                "{} states, {} transitions ({}-state prefix tree, {} merges)",
                model.state_count(),
                model.transitions().len(),
                stats.pta_states,
                stats.merges
            );
            Ok(())
        }
        Command::Eval {
            input,
            foreign,
            k,
            negatives,
            seed,
            mode,
            config,
            json,
        } => {
            let config = load_config(config.as_deref())?;
            let corpus = load_corpus(&input)?;
            let foreign = match foreign {
                Some(p) => load_corpus(&p)?,
                None => Corpus::default(),
            };
            let experiment = Experiment {
                k,
                negatives,
                seed,
                mode,
                config,
            };
            let mut report = run_experiment(&corpus, &foreign, &experiment)
                .map_err(|e| fail(EXIT_EVALUATION, e.to_string()))?;
            report.dataset = dataset_name(&input);
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_table());
            }
            Ok(())
        }
        Command::Accept { model, input, mode } => {
            let model = load_model(&model)?;
            let corpus = load_corpus(&input)?;
            let width = corpus
                .traces()
                .iter()
                .map(|t| t.name.len())
                .max()
                .unwrap_or(0);
            for t in corpus.traces() {
                let r = walk(&model, t, mode);
                println!(
                    "{:<width$}  {}  {}",
                    t.name,
                    if r.accepted() { "accepted" } else { "rejected" },
                    serde_json::to_value(r.reason)
                        .expect("reason serializes")
                        .as_str()
                        .unwrap_or("")
                );
            }
            Ok(())
        }
        Command::Suggest {
            model,
            history,
            json,
        } => {
            let model = Arc::new(load_model(&model)?);
            let (events, _) = if history.trim().is_empty() {
                (Vec::new(), Vec::new())
            } else {
                parse_steps("history", &history).map_err(|e| fail(EXIT_PARSE, e.to_string()))?
            };
            let session =
                Session::replay(model, &events).map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
            let options = session.options();
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&options).expect("options serialize")
                );
                return Ok(());
            }
            println!(
                "state {}{}",
                options.state,
                if options.can_finish {
                    " (can finish)"
                } else {
                    ""
                }
            );
            for s in &options.suggestions {
                let params: Vec<String> = s
                    .parameter_candidates
                    .iter()
                    .map(|v| v.params.join(" "))
                    .collect();
                let mut line = s.label.to_string();
                if !params.is_empty() {
                    line.push_str(&format!("  [{}]", params.join(" | ")));
                }
                if s.combined_hint {
                    line.push_str("  ;");
                }
                if s.leads_to_accepting {
                    line.push_str("  -> accepting");
                }
                println!("{line}");
            }
            Ok(())
        }
        Command::Serve { model, port, host } => {
            let state = ServiceState::new(DEFAULT_TTL);
            if let Some(path) = model {
                let id = state.add_model(load_model(&path)?);
                eprintln!("loaded {} as model {id}", path.display());
            }
            let runtime =
                tokio::runtime::Runtime::new().map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .map_err(|e| fail(EXIT_USAGE, format!("{host}:{port}: {e}")))?;
                eprintln!(
                    "listening on http://{}",
                    listener
                        .local_addr()
                        .map_err(|e| fail(EXIT_USAGE, e.to_string()))?
                );
                service::serve(listener, state)
                    .await
                    .map_err(|e| fail(EXIT_USAGE, e.to_string()))
            })
        }
        Command::Export { model, dot, guards } => {
            if dot.is_none() && guards.is_none() {
                return Err(fail(
                    EXIT_USAGE,
                    "nothing to export: pass --dot and/or --guards",
                ));
            }
            let model = load_model(&model)?;
            if let Some(path) = dot {
                write(&path, model.export_dot())?;
            }
            if let Some(path) = guards {
                let rules = serde_json::to_string_pretty(&model.guards().rules_json())
                    .expect("rules serialize");
                write(&path, rules)?;
            }
            Ok(())
        }
    }
}

/// Sets up logging from `PROOFMINER_LOG` (error, info or debug).
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "error"))
        .format_timestamp(None)
        .try_init();
}

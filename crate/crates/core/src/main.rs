use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::Utc;
use clap::{Parser, Subcommand};
use serde_json::json;

use pipewright::catalog::Catalog;
use pipewright::engine::{Engine, ExampleStore};
use pipewright::eval::{run_elt_suite, run_variance, table, SuiteMode, SuiteOptions};
use pipewright::exec::{execute, Backends, ExecOptions};
use pipewright::intent::TaskSpec;
use pipewright::pipeline::{parse, serialize};
use pipewright::provider::Provider;
use pipewright::safety::{Scanner, VerdictStatus};
use pipewright::service::{http, Service, ServiceConfig};

#[derive(Parser)]
#[command(name = "pipewright", version, about = "Conversational ELT pipeline builder")]
struct Cli {
    /// Service/engine config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Scripted provider fixture; overrides the configured provider.
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Interactive session on stdin/stdout.
    Chat {
        /// First message; read from stdin when absent.
        #[arg(long)]
        prompt: Option<String>,
    },
    /// Build a pipeline from a complete task spec (JSON).
    Compile {
        taskspec: PathBuf,
        /// Write `<artifact id>.yaml` here instead of printing the YAML.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scan a pipeline; exits 3 when it is rejected.
    Validate { pipeline: PathBuf },
    /// Scan and run a pipeline against local stores.
    Run {
        pipeline: PathBuf,
        #[arg(long, default_value = "fixtures")]
        fixtures: PathBuf,
        #[arg(long, default_value = "stores")]
        stores: PathBuf,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    Eval {
        #[command(subcommand)]
        which: EvalCommand,
    },
    /// HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// N sessions on one prompt, compared pairwise.
    Variance {
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Reply to clarifying questions, in order; repeatable.
        #[arg(long = "answer")]
        answers: Vec<String>,
        #[arg(long)]
        table: bool,
    },
    /// The desk ELT suite.
    Elt {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        no_question: bool,
        #[arg(long, default_value = "elt-output")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long)]
        table: bool,
    },
}

struct Failure {
    code: u8,
    body: serde_json::Value,
}

impl Failure {
    fn new(kind: &str, message: impl ToString) -> Self {
        Self {
            code: 1,
            body: json!({ "error": kind, "message": message.to_string() }),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.body);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ServiceConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => ServiceConfig::load(path).map_err(|e| Failure::new("config", e))?,
        None => ServiceConfig::default(),
    };
    if let Some(script) = &cli.script {
        config.provider = pipewright::service::ProviderConfig::Scripted {
            script: Some(script.clone()),
        };
    }
    Ok(config)
}

fn provider(config: &ServiceConfig) -> Result<Arc<dyn Provider>, Failure> {
    config.provider.build().map_err(|e| Failure::new("config", e))
}

/// A closed stdout (`| head`) is not an error worth reporting.
fn print_json<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    let _ = writeln!(io::stdout(), "{text}");
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))
}

fn dispatch(cli: Cli) -> CliResult {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Chat { prompt } => chat(config, prompt),
        Command::Compile { taskspec, out } => compile(&config, &taskspec, out.as_deref()),
        Command::Validate { pipeline } => validate(&pipeline),
        Command::Run {
            pipeline,
            fixtures,
            stores,
            workers,
        } => run(&pipeline, Backends::new(fixtures, stores), workers),
        Command::Eval { which } => eval(&config, which),
        Command::Serve { port, host } => serve(config, &host, port),
    }
}

fn chat(config: ServiceConfig, prompt: Option<String>) -> CliResult {
    let service = Service::open(config).map_err(|e| Failure::new(e.kind(), e))?;
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    let mut next_line = |label: &str| -> Option<String> {
        print!("{label}");
        io::stdout().flush().ok();
        lines.next().and_then(Result::ok)
    };
    let prompt = match prompt {
        Some(p) => p,
        None => next_line("you> ").ok_or_else(|| Failure::new("usage", "no prompt given"))?,
    };
    let mut reply = service.create_session(&prompt).map_err(|e| Failure::new(e.kind(), e))?;
    loop {
        if let Some(message) = &reply.message {
            println!("assistant> {message}");
        }
        if reply.phase.is_terminal() {
            break;
        }
        let Some(answer) = next_line("you> ") else {
            break;
        };
        reply = service
            .post_message(&reply.session_id, &answer)
            .map_err(|e| Failure::new(e.kind(), e))?;
    }
    print_json(&reply);
    Ok(())
}

fn compile(config: &ServiceConfig, path: &Path, out: Option<&Path>) -> CliResult {
    let spec: TaskSpec =
        serde_json::from_str(&read(path)?).map_err(|e| Failure::new("invalid", format!("{}: {e}", path.display())))?;
    let provider = provider(config)?;
    let catalog = Catalog::curated().session_view();
    let examples = ExampleStore::bundled();
    let engine = Engine::new(provider.as_ref(), &catalog, &examples, config.engine.clone());
    let outcome = engine
        .compile_spec("cli", &spec, Utc::now())
        .map_err(|e| Failure::new("compile", e))?;
    let yaml = serialize(&outcome.pipeline);
    let id = outcome.pipeline.artifact_id();
    let mut report = json!({
        "pipeline": id,
        "compile": outcome.compile,
        "verdict": outcome.verdict.status,
        "tools": outcome.tools,
    });
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Failure::new("io", e))?;
            let file = dir.join(format!("{id}.yaml"));
            std::fs::write(&file, &yaml).map_err(|e| Failure::new("io", e))?;
            report["file"] = json!(file);
        }
        None => report["yaml"] = json!(yaml),
    }
    print_json(&report);
    if !outcome.succeeded() {
        return Err(Failure {
            code: 2,
            body: json!({ "error": "compile", "message": "pipeline did not compile or was rejected" }),
        });
    }
    Ok(())
}

fn validate(path: &Path) -> CliResult {
    let pipeline = parse(&read(path)?).map_err(|e| Failure::new("invalid", e))?;
    let verdict = Scanner::default().scan(&pipeline, &Catalog::curated());
    print_json(&verdict);
    if verdict.status == VerdictStatus::Rejected {
        return Err(Failure {
            code: 3,
            body: json!({ "error": "rejected", "message": format!("{} finding(s)", verdict.findings.len()) }),
        });
    }
    Ok(())
}

fn run(path: &Path, backends: Backends, workers: usize) -> CliResult {
    let pipeline = parse(&read(path)?).map_err(|e| Failure::new("invalid", e))?;
    let verdict = Scanner::default().scan(&pipeline, &Catalog::curated());
    let Some(approved) = verdict.approved(&pipeline) else {
        return Err(Failure {
            code: 3,
            body: json!({ "error": "rejected", "message": "pipeline was rejected", "verdict": verdict }),
        });
    };
    let mut approved = approved.clone();
    approved.stamp(verdict.status);
    let record = execute(&approved, verdict.status, &ExecOptions::new(backends).with_workers(workers))
        .map_err(|e| Failure::new("run", e))?;
    print_json(&record);
    if !record.succeeded {
        return Err(Failure::new("run", "one or more tasks failed"));
    }
    Ok(())
}

fn eval(config: &ServiceConfig, which: EvalCommand) -> CliResult {
    let catalog = Catalog::curated();
    let examples = ExampleStore::bundled();
    match which {
        EvalCommand::Variance {
            prompt,
            n,
            answers,
            table: as_table,
        } => {
            let provider = provider(config)?;
            let run = run_variance(&prompt, n, &answers, provider.as_ref(), &catalog, &examples, &config.engine, Utc::now())
                .map_err(|e| Failure::new("eval", e))?;
            if as_table {
                let _ = write!(io::stdout(), "{}", table::variance_table(&[("pipewright".to_string(), run.report.clone())]));
            } else {
                print_json(&run);
            }
        }
        EvalCommand::Elt {
            suite,
            no_question,
            out,
            workers,
            table: as_table,
        } => {
            let mode = if no_question { SuiteMode::NoQuestion } else { SuiteMode::Full };
            let options = SuiteOptions {
                catalog: &catalog,
                examples: &examples,
                output_root: out,
                workers,
            };
            let report = run_elt_suite(&suite, mode, &options).map_err(|e| Failure::new("eval", e))?;
            if as_table {
                let _ = write!(io::stdout(), "{}", table::elt_table(&report));
            } else {
                print_json(&report);
            }
        }
    }
    Ok(())
}

fn serve(config: ServiceConfig, host: &str, port: u16) -> CliResult {
    let addr: SocketAddr = format!("{host}:{port}").parse().map_err(|e| Failure::new("usage", e))?;
    let service = Arc::new(Service::open(config).map_err(|e| Failure::new(e.kind(), e))?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new("io", e))?;
    runtime
        .block_on(http::serve(service, addr))
        .map_err(|e| Failure::new("io", e))
}

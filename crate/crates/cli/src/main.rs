use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use memo_cli::commands::{self, ClusterArgs, EvalArgs, Failure, IngestArgs, InspectArgs, RunArgs};
use memo_cli::runtime::{CommonArgs, Runtime};
use memo_cli::service::{self, AppState, ServeOptions};

#[derive(Debug, Parser)]
#[command(name = "memo", version, about = "Skill memory for a tabletop manipulation policy")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run trials of one task, learning from the teacher into the skillbook.
    Run(RunArgs),
    /// Add a feedback corpus to the skillbook.
    Ingest(IngestArgs),
    /// Cluster and compress the skillbook offline.
    Cluster(ClusterArgs),
    /// Show skillbook statistics or a retrieval dry run.
    Inspect(InspectArgs),
    /// Zero-shot evaluation over a task suite.
    Eval(EvalArgs),
    /// HTTP service for the steering console.
    Serve(ServeArgs),
}

#[derive(Debug, clap::Args)]
struct ServeArgs {
    #[arg(long)]
    skillbook: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 300)]
    step_delay_ms: u64,
    /// Silence after which a waiting episode continues without the console.
    #[arg(long, default_value_t = 30_000)]
    heartbeat_ms: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    if let Command::Eval(args) = &cli.command {
        let report = commands::eval(args, &cli.common)?;
        print!("{}", report.table());
        return Ok(());
    }
    let rt = Runtime::from_args(&cli.common)?;
    match cli.command {
        Command::Run(args) => {
            let summary = commands::run(&rt, &args)?;
            println!("{}", summary.line());
            if summary.completed < summary.trials {
                return Err(Failure::Error(format!(
                    "{} of {} trials did not complete",
                    summary.trials - summary.completed,
                    summary.trials
                )));
            }
        }
        Command::Ingest(args) => {
            let r = commands::ingest(&rt, &args)?;
            println!(
                "{} records: {} added ({} globals), {} skipped, {} errors, {} fallbacks",
                r.records, r.entries_added, r.globals_added, r.skipped, r.errors, r.fallbacks
            );
            for p in &r.problems {
                eprintln!("{p}");
            }
        }
        Command::Cluster(args) => {
            let (r, path) = commands::cluster(&rt, &args)?;
            println!(
                "{} clusters, {} pruned, chars {} -> {}, generation {} -> {}; report {}",
                r.clusters,
                r.pruned.len(),
                r.char_before,
                r.char_after,
                r.generation_before,
                r.generation_after,
                path.display()
            );
        }
        Command::Inspect(args) => commands::inspect(&rt, &args, &mut std::io::stdout().lock())?,
        Command::Eval(_) => unreachable!("handled above"),
        Command::Serve(args) => {
            let book = rt.open_book(&args.skillbook)?;
            let opts = ServeOptions {
                step_delay: Duration::from_millis(args.step_delay_ms),
                heartbeat: Duration::from_millis(args.heartbeat_ms),
            };
            let state = AppState::new(rt, std::sync::Arc::new(book), opts);
            let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            runtime.block_on(async {
                let listener =
                    tokio::net::TcpListener::bind(args.addr).await.map_err(|e| format!("{}: {e}", args.addr))?;
                eprintln!("listening on {}", listener.local_addr().map_err(|e| e.to_string())?);
                service::serve(listener, state).await.map_err(|e| e.to_string())
            })?;
        }
    }
    Ok(())
}

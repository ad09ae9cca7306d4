use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use cherryrec_cli::commands::{
    resolve_config, run_eval, run_ingest, run_recommend, run_train, IngestOpts, RecommendOpts,
};
use cherryrec_cli::{exit_code, mock_llm, serve};
use cherryrec_core::Result;

#[derive(Parser)]
#[command(
    name = "cherryrec",
    version,
    about = "Two-stage news recommendation engine: rapid candidate selection, \
             LLM preference evaluation, and ensemble ranking"
)]
struct Cli {
    /// Engine configuration file (key = value); falls back to $CHERRYREC_CONFIG.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse news/behaviors TSV logs into a validated snapshot directory.
    Ingest(IngestArgs),
    /// Fit the scoring models on an ingested snapshot.
    Train(TrainArgs),
    /// Rank fresh items for one user and print them as JSON.
    Recommend(RecommendArgs),
    /// Run the leave-one-out offline evaluation and emit the report JSON.
    Eval(EvalArgs),
    /// Serve recommendations over HTTP from a frozen snapshot.
    Serve(ServeArgs),
    /// Stand up the reference cnle/1 evaluator server (mock scorer).
    MockLlmServe(MockLlmArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Seven-column news TSV (id, category, subcategory, title, abstract, source, publish_time).
    #[arg(long, value_name = "FILE")]
    news: PathBuf,
    /// Five-column behaviors TSV (impression_id, user_id, time, history, impressions).
    #[arg(long, value_name = "FILE")]
    behaviors: PathBuf,
    /// Optional two-column TSV of user_id → role positioning hints.
    #[arg(long = "role-hints", value_name = "FILE")]
    role_hints: Option<PathBuf>,
    /// k-core filtering strength; 0 disables filtering.
    #[arg(long = "k-core", default_value_t = 5)]
    k_core: usize,
    /// Output snapshot directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Snapshot directory produced by `ingest`.
    #[arg(long, value_name = "DIR")]
    snapshot: PathBuf,
    /// Output directory for the trained model.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct RecommendArgs {
    /// Snapshot directory produced by `ingest`.
    #[arg(long, value_name = "DIR")]
    snapshot: PathBuf,
    /// Model directory produced by `train`.
    #[arg(long, value_name = "DIR")]
    models: PathBuf,
    /// User to recommend for.
    #[arg(long)]
    user: String,
    /// Number of items to return.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Scoring timestamp (epoch seconds); defaults to just after the
    /// newest event in the snapshot.
    #[arg(long)]
    now: Option<i64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Snapshot directory produced by `ingest`.
    #[arg(long, value_name = "DIR")]
    snapshot: PathBuf,
    /// Model directory produced by `train`.
    #[arg(long, value_name = "DIR")]
    models: PathBuf,
    /// Metric cutoff; overrides the configured eval_k.
    #[arg(long)]
    k: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Snapshot directory produced by `ingest`.
    #[arg(long, value_name = "DIR")]
    snapshot: PathBuf,
    /// Model directory produced by `train`.
    #[arg(long, value_name = "DIR")]
    models: PathBuf,
    /// Bind address.
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Port; 0 selects an ephemeral port (announced on stdout).
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

#[derive(Args)]
struct MockLlmArgs {
    /// Bind address.
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Port; 0 selects an ephemeral port (announced on stdout).
    #[arg(long, default_value_t = 8081)]
    port: u16,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => run_ingest(&IngestOpts {
            news: &args.news,
            behaviors: &args.behaviors,
            roles: args.role_hints.as_deref(),
            k_core: args.k_core,
            out: &args.out,
        }),
        Command::Train(args) => {
            let config = resolve_config(cli.config.as_ref())?;
            run_train(&args.snapshot, &args.out, &config)
        }
        Command::Recommend(args) => {
            let config = resolve_config(cli.config.as_ref())?;
            run_recommend(
                &RecommendOpts {
                    data: &args.snapshot,
                    model_dir: &args.models,
                    user_id: &args.user,
                    k: args.k,
                    now: args.now,
                },
                &config,
            )
        }
        Command::Eval(args) => {
            let mut config = resolve_config(cli.config.as_ref())?;
            if let Some(k) = args.k {
                config.eval_k = k;
            }
            run_eval(&args.snapshot, &args.models, args.out.as_deref(), &config)
        }
        Command::Serve(args) => {
            let config = resolve_config(cli.config.as_ref())?;
            let engine =
                cherryrec_cli::commands::load_engine(&args.snapshot, &args.models, config)?;
            serve::run(engine, &args.bind, args.port)
        }
        Command::MockLlmServe(args) => mock_llm::run(&args.bind, args.port),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // Help goes to stdout, usage errors to stderr.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({} stage): {e}", e.stage());
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

use std::fs::File;
use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use sumcap::bench::{report_table, run_bench, BenchOptions};
use sumcap::clock::{Clock, MonotonicClock};
use sumcap::config::ServiceConfig;
use sumcap::latency::{epsilon_bounds, savings, savings_sweep, simulate_dialogue, RateConstants, TimingParams};
use sumcap::pipeline::Pipeline;
use sumcap::providers::registry::builtin_descriptors;
use sumcap::providers::{ProviderKind, ProviderRegistry, DEFAULT_PROMPT_TEMPLATE};
use sumcap::server::Server;
use sumcap::store::{import_jsonl, DataStore, ExportFilter};

#[derive(Parser)]
#[command(name = "sumcap", version, about = "Summarizing subtitle-translation relay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the per-turn latency model.
    Latency(LatencyArgs),
    /// Run the relay server.
    Serve(ServeArgs),
    /// Inspect, export and import collected training data.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Benchmark a summarization provider.
    Bench(BenchArgs),
}

#[derive(Args)]
struct LatencyArgs {
    /// Words in the utterance.
    #[arg(long, default_value_t = 20)]
    wc: u64,
    /// Compression ratio in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Cognition time, seconds.
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long = "t-trans", default_value_t = 0.0)]
    t_trans: f64,
    #[arg(long = "t-sum", default_value_t = 0.0)]
    t_sum: f64,
    #[arg(long = "reading-wpm", default_value_t = sumcap::latency::DEFAULT_READING_WPM)]
    reading_wpm: f64,
    #[arg(long = "speaking-wpm", default_value_t = sumcap::latency::DEFAULT_SPEAKING_WPM)]
    speaking_wpm: f64,
    /// Simulate this many identical back-to-back turns.
    #[arg(long, default_value_t = 1)]
    turns: usize,
    /// Print a savings-vs-sigma sweep with this many steps as JSON lines.
    #[arg(long)]
    sweep: Option<usize>,
    /// Print the breakdown as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stream-socket listen address; overrides the config file.
    #[arg(long)]
    listen: Option<String>,
    /// WebSocket listen address for browser clients; overrides the config file.
    #[arg(long = "ws-listen")]
    ws_listen: Option<String>,
}

#[derive(Subcommand)]
enum DataCommand {
    /// Write paired records as JSON lines.
    Export {
        #[arg(long)]
        store: PathBuf,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        session: Option<String>,
        #[arg(long = "source-lang")]
        source_lang: Option<String>,
        #[arg(long = "target-lang")]
        target_lang: Option<String>,
        /// Use the latest human correction in place of the model summary.
        #[arg(long = "prefer-corrections")]
        prefer_corrections: bool,
    },
    /// Record count, mean sigma and per-language counts.
    Stats {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Append records from an export file.
    Import {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "imported")]
        session: String,
    },
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    provider: String,
    /// Text file to summarize.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "target-sigma", default_value_t = 2.0 / 3.0)]
    target_sigma: f64,
    /// Service config with additional provider definitions.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the full result, including per-run samples, as JSON.
    #[arg(long)]
    json: bool,
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Latency(args) => latency(args),
        Command::Serve(args) => serve(args),
        Command::Data { command } => data(command),
        Command::Bench(args) => bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn latency(args: LatencyArgs) -> CliResult {
    let rates = RateConstants::new(args.reading_wpm, args.speaking_wpm)?;
    let mut out = std::io::stdout().lock();
    if let Some(steps) = args.sweep {
        for point in savings_sweep(args.wc as f64, steps, &rates)? {
            writeln!(out, "{}", serde_json::to_string(&point)?)?;
        }
        return Ok(());
    }
    let turn = TimingParams::new(args.wc, args.sigma, args.gamma, args.t_trans, args.t_sum)?;
    let dialogue = simulate_dialogue(&vec![turn; args.turns.max(1)], &rates)?;
    let b = dialogue.per_turn[0];
    let saved = savings(args.wc as f64, args.sigma, &rates)?;
    let bounds = epsilon_bounds(&rates);
    if args.json {
        let value = serde_json::json!({
            "params": turn,
            "rates": rates,
            "breakdown": b,
            "savings_s": saved,
            "epsilon_bounds": bounds,
            "turns": args.turns.max(1),
            "dialogue_total_s": dialogue.total_s,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
        return Ok(());
    }
    writeln!(out, "reading_s           {:.6}", b.reading_s)?;
    writeln!(out, "speaking_s          {:.6}", b.speaking_s)?;
    writeln!(out, "cognition_s         {:.6}", b.cognition_s)?;
    writeln!(out, "translation_s       {:.6}", b.translation_s)?;
    writeln!(out, "summarization_s     {:.6}", b.summarization_s)?;
    writeln!(out, "total_s             {:.6}", b.total_s)?;
    writeln!(
        out,
        "epsilon_s_per_word  {:.6}  in ({:.6}, {:.6}]",
        b.epsilon_s_per_word, bounds.min_exclusive, bounds.max_inclusive
    )?;
    writeln!(out, "savings_s           {saved:.6}")?;
    if args.turns > 1 {
        writeln!(
            out,
            "dialogue_total_s    {:.6}  ({} turns)",
            dialogue.total_s, args.turns
        )?;
    }
    Ok(())
}

fn serve(args: ServeArgs) -> CliResult {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_ansi(std::io::stderr().is_terminal())
        .with_writer(std::io::stderr)
        .init();
    let cfg = match &args.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    let clock: Arc<dyn Clock> = Arc::new(MonotonicClock::new());
    let registry = ProviderRegistry::build(&cfg.providers, clock.clone(), cfg.base_dir.as_deref())?;
    let store = cfg.store_path().map(DataStore::open).transpose()?.map(Arc::new);
    if store.is_none() {
        tracing::warn!("no store_dir configured; training data will not be collected");
    }
    let pipeline = Arc::new(Pipeline::new(Arc::new(registry), store, clock));
    let listen = args
        .listen
        .or(cfg.listen.clone())
        .unwrap_or_else(|| "127.0.0.1:7878".into());
    let ws_listen = args.ws_listen.or(cfg.ws_listen.clone());

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let server = Server::new(pipeline, cfg.server.clone());
        let (addr, _tcp) = server.listen_tcp(&listen).await?;
        tracing::info!(%addr, "listening for framed connections");
        if let Some(ws) = ws_listen {
            let (addr, _ws) = server.listen_ws(&ws).await?;
            tracing::info!(%addr, "listening for websocket connections");
        }
        tokio::signal::ctrl_c().await?;
        tracing::info!("shutting down");
        Ok::<_, Box<dyn std::error::Error>>(())
    })
}

fn data(command: DataCommand) -> CliResult {
    match command {
        DataCommand::Export {
            store,
            out,
            session,
            source_lang,
            target_lang,
            prefer_corrections,
        } => {
            let store = DataStore::open(&store)?;
            let filter = ExportFilter {
                session_id: session,
                source_lang,
                target_lang,
            };
            let n = match out {
                Some(path) => store.export_jsonl(File::create(&path)?, &filter, prefer_corrections)?,
                None => store.export_jsonl(std::io::stdout().lock(), &filter, prefer_corrections)?,
            };
            eprintln!("exported {n} records");
        }
        DataCommand::Stats { store, json } => {
            let stats = DataStore::open(&store)?.stats();
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                println!("records            {}", stats.records);
                println!("corrections        {}", stats.corrections);
                println!("corrected_records  {}", stats.corrected_records);
                match stats.mean_sigma {
                    Some(s) => println!("mean_sigma         {s:.4}"),
                    None => println!("mean_sigma         -"),
                }
                for (pair, count) in &stats.per_language_pair {
                    println!("pair {pair:<13} {count}");
                }
            }
        }
        DataCommand::Import { store, input, session } => {
            let rows = import_jsonl(&input)?;
            let ids = DataStore::open(&store)?.import_rows(rows, &session)?;
            eprintln!("imported {} records", ids.len());
        }
    }
    Ok(())
}

fn bench(args: BenchArgs) -> CliResult {
    let cfg = match &args.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    let descriptor = builtin_descriptors()
        .into_iter()
        .chain(cfg.providers.iter().cloned())
        .rfind(|d| d.kind == ProviderKind::Summarize && d.provider_id == args.provider)
        .ok_or_else(|| format!("unknown summarize provider `{}`", args.provider))?
        .with_seed(args.seed);
    let clock = Arc::new(MonotonicClock::new());
    let mut registry = ProviderRegistry::new();
    registry.add(&descriptor, clock.clone(), cfg.base_dir.as_deref())?;
    let entry = registry.summarizer(&args.provider).expect("just registered");
    let input = std::fs::read_to_string(resolve_input(&args.input))?;
    let opts = BenchOptions {
        n_reps: args.reps,
        target_sigma: args.target_sigma,
        prompt_template: if entry.prompt_template.is_empty() {
            DEFAULT_PROMPT_TEMPLATE.to_owned()
        } else {
            entry.prompt_template.clone()
        },
        seed: Some(args.seed),
    };
    let result = run_bench(entry.provider.as_ref(), &args.provider, &input, &opts, clock.as_ref())?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        print!("{}", report_table(std::slice::from_ref(&result)));
    }
    if let Some(failure) = &result.failure {
        return Err(format!("benchmark stopped early: {failure}").into());
    }
    Ok(())
}

fn resolve_input(path: &Path) -> PathBuf {
    path.to_path_buf()
}

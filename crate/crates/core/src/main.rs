use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use memlt::commands;
use memlt::config::RunConfig;
use memlt::numeric::FloatWidth;

/// Long-tailed classification with group-aware logit modulation.
#[derive(Parser, Debug)]
#[command(name = "memlt", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Flags override values from `--config`, which override built-in defaults.
#[derive(Args, Debug)]
struct Global {
    /// TOML config file, or JSON (for instance a previous run.json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Group partition strategy: 1 shot thresholds, 2 random even, 3 even by count.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=3))]
    strategy: Option<u8>,
    #[arg(long, global = true)]
    xi: Option<f64>,
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    topk: Option<usize>,
    /// Floating-point width used for training and inference: 32 or 64.
    #[arg(long, global = true, value_parser = parse_float)]
    float: Option<FloatWidth>,
}

fn parse_float(s: &str) -> Result<FloatWidth, String> {
    let bits: u8 = s.parse().map_err(|_| format!("expected 32 or 64, got `{s}`"))?;
    FloatWidth::try_from(bits).map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
struct Inputs {
    /// Dataset manifest [default: <out>/manifest.json].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Base checkpoint [default: <out>/base.json].
    #[arg(long)]
    base: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic long-tailed dataset.
    GenData,
    /// Train the encoder and classifier with cross-entropy.
    TrainBase {
        /// Dataset manifest [default: <out>/manifest.json].
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the modulator on top of a frozen base encoder.
    TrainMem {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Evaluate the base model, MEM and the oracle-group bound.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        /// MEM checkpoint [default: <out>/mem.json].
        #[arg(long)]
        mem: Option<PathBuf>,
    },
    /// Group confusion and oracle-group comparison of the base model.
    Analyze {
        #[command(flatten)]
        inputs: Inputs,
        /// Also report a MEM checkpoint.
        #[arg(long)]
        mem: Option<PathBuf>,
    },
}

fn resolve_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = &g.out {
        cfg.out = v.clone();
    }
    if let Some(v) = g.strategy {
        cfg.partition.strategy = v;
    }
    if let Some(v) = g.xi {
        cfg.mem.xi = v;
    }
    if let Some(v) = g.mu {
        cfg.mem.mu = v;
    }
    if let Some(v) = g.lambda {
        cfg.mem.lambda = v;
    }
    if let Some(v) = g.topk {
        cfg.mem.top_k = v;
    }
    if let Some(v) = g.float {
        cfg.float = v;
    }
    Ok(cfg.resolve()?)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MEMLT_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("MEMLT_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the evaluation thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let cfg = resolve_config(&cli.global)?;
    let manifest = |p: &Option<PathBuf>| p.clone().unwrap_or_else(|| commands::default_manifest(&cfg));
    let base = |p: &Option<PathBuf>| p.clone().unwrap_or_else(|| commands::default_base(&cfg));
    match &cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::TrainBase { data } => commands::train_base_cmd(&cfg, &manifest(data)),
        Command::TrainMem { inputs } => commands::train_mem_cmd(&cfg, &manifest(&inputs.data), &base(&inputs.base)),
        Command::Eval { inputs, mem } => {
            let mem = mem.clone().unwrap_or_else(|| commands::default_mem(&cfg));
            commands::eval_cmd(&cfg, &manifest(&inputs.data), &base(&inputs.base), &mem)
        }
        Command::Analyze { inputs, mem } => {
            commands::analyze_cmd(&cfg, &manifest(&inputs.data), &base(&inputs.base), mem.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their source in the message
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.ends_with(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

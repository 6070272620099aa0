use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use span_ensemble::backend::{load_pool_with, EnsemblePool, PoolOverrides};
use span_ensemble::eval::{
    load_dataset, run_eval, run_sweep, write_summary_csv, EvalOptions, EvalReport, Metric,
    MetricError, SweepError, SweepSpec,
};
use span_ensemble::{generate, EnsembleConfig, Executor};

#[derive(Parser)]
#[command(
    name = "span-ensemble",
    version,
    about = "Span-level ensemble decoding over several language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode one prompt and print the ensemble output.
    Run(RunArgs),
    /// Decode every example of a JSONL dataset and score the predictions.
    Eval(EvalArgs),
    /// Evaluate a grid of span lengths, thresholds and pools; writes a CSV summary.
    Sweep(SweepArgs),
    /// Load a pool config and list its models.
    ValidatePool(ValidateArgs),
}

#[derive(Args)]
struct DecodeArgs {
    /// Words per candidate span.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    span_length: u64,
    /// Outlier ratio threshold.
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    /// Keep every score when averaging.
    #[arg(long)]
    no_filter: bool,
    /// Stop starting new rounds once this many words are generated.
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    max_words: u64,
}

impl DecodeArgs {
    fn config(&self) -> EnsembleConfig {
        EnsembleConfig {
            span_length_words: self.span_length as usize,
            lambda: self.lambda,
            filter_enabled: !self.no_filter,
            max_total_words: self.max_words as usize,
            ..EnsembleConfig::default()
        }
    }
}

#[derive(Args)]
struct PoolArgs {
    /// Pool config (JSON list of models).
    #[arg(long)]
    pool: PathBuf,
    /// Per-request timeout for HTTP models, in milliseconds.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    timeout_ms: Option<u64>,
}

impl PoolArgs {
    fn load(&self) -> Result<EnsemblePool, Failure> {
        let overrides = PoolOverrides {
            timeout_ms: self.timeout_ms,
        };
        load_pool_with(&self.pool, &overrides).map_err(Failure::runtime)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    pool: PoolArgs,
    #[arg(
        long,
        conflicts_with = "prompt_file",
        required_unless_present = "prompt_file"
    )]
    prompt: Option<String>,
    #[arg(long)]
    prompt_file: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Write the per-round JSONL transcript here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Threads for the per-round fan-out (default: pool size).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    pool: PoolArgs,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "em", value_parser = parse_metric)]
    metric: Metric,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Examples decoded concurrently.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Pool used when the spec lists no pool scenarios.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Dataset, overriding the one named in the spec.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// CSV summary path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    timeout_ms: Option<u64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    pool: PoolArgs,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: MetricError| e.to_string())
}

/// A fatal error and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::runtime(format!("creating {}: {e}", path.display())))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let config = args.decode.config();
    config.validate().map_err(Failure::usage)?;
    let prompt = match (&args.prompt, &args.prompt_file) {
        (Some(p), _) => p.clone(),
        (None, Some(path)) => std::fs::read_to_string(path)
            .map_err(|e| Failure::runtime(format!("reading {}: {e}", path.display())))?,
        (None, None) => unreachable!("clap requires one of --prompt and --prompt-file"),
    };
    let pool = args.pool.load()?;
    let exec = Executor::new(args.workers.map_or(pool.len(), |w| w as usize));
    let transcript = generate(&pool, &prompt, &config, &exec).map_err(Failure::runtime)?;
    if let Some(path) = &args.trace {
        let mut out = create(path)?;
        transcript
            .write_jsonl(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Failure::runtime(format!("writing {}: {e}", path.display())))?;
    }
    log::info!(
        "{} rounds, {} words, stop: {:?}",
        transcript.rounds.len(),
        transcript.generated_words(),
        transcript.stop_reason
    );
    println!("{}", transcript.final_text);
    Ok(())
}

fn write_report(path: &Path, report: &EvalReport) -> Result<(), Failure> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, report)
        .map_err(std::io::Error::from)
        .and_then(|_| out.write_all(b"\n"))
        .and_then(|_| out.flush())
        .map_err(|e| Failure::runtime(format!("writing {}: {e}", path.display())))
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let config = args.decode.config();
    config.validate().map_err(Failure::usage)?;
    let pool = args.pool.load()?;
    let examples = load_dataset(&args.dataset).map_err(Failure::runtime)?;
    let options = EvalOptions {
        example_workers: args.workers as usize,
        round_workers: None,
    };
    let report =
        run_eval(&examples, &pool, &config, args.metric, &options).map_err(Failure::runtime)?;
    if let Some(path) = &args.out {
        write_report(path, &report)?;
    }
    if report.stats.failed > 0 {
        log::warn!(
            "{} of {} examples failed",
            report.stats.failed,
            report.stats.examples
        );
    }
    println!("{} {:.4}", args.metric, report.aggregate);
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let spec = SweepSpec::load(&args.spec).map_err(|e| match e {
        SweepError::Io { .. } => Failure::runtime(e),
        other => Failure::usage(other),
    })?;
    let dataset = args
        .dataset
        .clone()
        .or_else(|| spec.dataset.clone())
        .ok_or_else(|| {
            Failure::usage("no dataset: pass --dataset or set \"dataset\" in the spec")
        })?;
    let overrides = PoolOverrides {
        timeout_ms: args.timeout_ms,
    };
    let mut pools = Vec::new();
    if spec.pool_scenarios.is_empty() {
        let path = args.pool.as_ref().ok_or_else(|| {
            Failure::usage("no pool: pass --pool or list pool_scenarios in the spec")
        })?;
        let name = path
            .file_stem()
            .map_or("pool".into(), |s| s.to_string_lossy().into_owned());
        pools.push((
            name,
            load_pool_with(path, &overrides).map_err(Failure::runtime)?,
        ));
    } else {
        for s in &spec.pool_scenarios {
            match load_pool_with(&s.pool, &overrides) {
                Ok(p) => pools.push((s.name.clone(), p)),
                Err(e) => log::error!("pool scenario {}: {e}", s.name),
            }
        }
        if pools.is_empty() {
            return Err(Failure::runtime("no pool scenario could be loaded"));
        }
    }
    let examples = load_dataset(&dataset).map_err(Failure::runtime)?;
    let options = EvalOptions {
        example_workers: args.workers as usize,
        round_workers: None,
    };
    let cells = run_sweep(&spec, &examples, &pools, &options).map_err(Failure::usage)?;
    let rows = match &args.out {
        Some(path) => {
            let out = create(path)?;
            write_summary_csv(&cells, out)
        }
        None => write_summary_csv(&cells, std::io::stdout().lock()),
    }
    .map_err(|e| Failure::runtime(format!("writing summary: {e}")))?;
    let failed = cells.len() - rows;
    if failed > 0 {
        log::warn!("{failed} of {} cells failed", cells.len());
    }
    if rows == 0 {
        return Err(Failure::runtime(format!(
            "all {} sweep cells failed",
            cells.len()
        )));
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), Failure> {
    let pool = args.pool.load()?;
    for (i, name) in pool.names().iter().enumerate() {
        println!("{i}\t{name}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::ValidatePool(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let line = f.message.replace('\n', " ");
            eprintln!("error: {line}");
            ExitCode::from(f.code)
        }
    }
}

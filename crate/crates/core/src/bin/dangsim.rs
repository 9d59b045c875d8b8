use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dangsim::addrtable::{DEFAULT_DIRECT_BITS, DEFAULT_HASH_BITS};
use dangsim::logcache::DEFAULT_INDEX_BITS;
use dangsim::reaper::DEFAULT_PERIOD_THRESHOLD;
use dangsim::{
    cwe416_corpus, generate, parse, CompressionMode, Engine, EngineConfig, Pattern, Placement, WorkloadSpec,
};

#[derive(Parser)]
#[command(name = "dangsim", version, about = "Dangling-pointer elimination runtime simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a trace file and report statistics.
    Run(RunArgs),
    /// Generate a synthetic workload trace.
    Gen(GenArgs),
    /// Write the use-after-free scenario corpus to a directory.
    Corpus {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementArg {
    Low,
    High,
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    /// off | block:<words> | full
    #[arg(long, default_value = "off")]
    compression: CompressionMode,
    #[arg(long, default_value_t = DEFAULT_INDEX_BITS)]
    cache_bits: u8,
    #[arg(long, default_value_t = DEFAULT_DIRECT_BITS)]
    direct_bits: u8,
    #[arg(long, default_value_t = DEFAULT_HASH_BITS)]
    hash_bits: u8,
    #[arg(long, default_value_t = DEFAULT_PERIOD_THRESHOLD)]
    period_threshold: usize,
    #[arg(long, value_enum, default_value = "low")]
    placement: PlacementArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Audit every release against a full memory sweep.
    #[arg(long)]
    oracle_check: bool,
    #[arg(long)]
    stats_out: Option<PathBuf>,
    #[arg(long)]
    no_final_flush: bool,
    /// Fault injection: probability of a spurious cache hit.
    #[arg(long, default_value_t = 0.0, hide = true)]
    inject_false_hits: f64,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    pattern: Pattern,
    #[arg(long)]
    objects: usize,
    #[arg(long)]
    stores: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short = 'o', long = "out")]
    out: Option<PathBuf>,
}

fn run(args: RunArgs) -> Result<(), String> {
    let text = fs::read_to_string(&args.file).map_err(|e| format!("{}: {e}", args.file.display()))?;
    let trace = parse(&text).map_err(|e| format!("{}: {e}", args.file.display()))?;
    let config = EngineConfig {
        compression: args.compression,
        cache_bits: args.cache_bits,
        direct_bits: args.direct_bits,
        hash_bits: args.hash_bits,
        period_threshold: args.period_threshold,
        placement: match args.placement {
            PlacementArg::Low => Placement::Low,
            PlacementArg::High => Placement::High,
        },
        seed: args.seed,
        oracle_check: args.oracle_check,
        final_flush: !args.no_final_flush,
        false_hit_rate: args.inject_false_hits,
    };
    let mut engine = Engine::new(config).map_err(|e| e.to_string())?;
    let report = engine.run(&trace).map_err(|e| format!("{}: {e}", args.file.display()))?;
    if let Some(path) = &args.stats_out {
        fs::write(path, report.to_kv()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    println!("trace        {} ({} events)", args.file.display(), trace.len());
    println!("{report}");
    Ok(())
}

fn gen(args: GenArgs) -> Result<(), String> {
    if args.objects == 0 || args.stores == 0 {
        return Err("--objects and --stores must be at least 1".into());
    }
    let spec = WorkloadSpec { pattern: args.pattern, objects: args.objects, stores: args.stores, seed: args.seed };
    let text = generate(&spec);
    match &args.out {
        Some(path) => fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn corpus(out: PathBuf) -> Result<(), String> {
    fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
    let traces = cwe416_corpus();
    for trace in &traces {
        let path = out.join(format!("{}.trace", trace.name));
        fs::write(&path, &trace.text).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    println!("wrote {} traces to {}", traces.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Gen(args) => gen(args),
        Command::Corpus { out } => corpus(out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

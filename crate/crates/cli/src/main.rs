use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use drdst_core::sharding::{ga_baseline_run, gsa_run, GsaParams};
use drdst_core::sim::{initial_nodes, run_with, write_byte_log, write_epoch_series, write_tx_log, RunOptions, RunOutput};
use drdst_core::{SeedSource, SimConfig};
use log::info;
use serde::Serialize;

mod sweep;

/// Batch runner for the sharded RSU consensus simulator.
#[derive(Parser)]
#[command(name = "drdst", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its metrics.
    Run(RunArgs),
    /// Run the cross product of several config axes over a list of seeds.
    Sweep {
        /// JSON sweep description.
        #[arg(long)]
        spec: PathBuf,
        /// Directory receiving `sweep.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare the sharding optimizer with a plain genetic algorithm.
    ShardBench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `rng_seed` of the config.
    #[arg(long)]
    seed: u64,
    /// Metrics file. With CSV output the epoch series goes to `<out>.epochs.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Print a human-readable digest on standard output.
    #[arg(long)]
    summary: bool,
    /// Per-transaction log.
    #[arg(long)]
    tx_log: Option<PathBuf>,
    /// Per-transmission byte log.
    #[arg(long)]
    byte_log: Option<PathBuf>,
    /// Broadcast tree edges of every epoch.
    #[arg(long)]
    tree_edges: Option<PathBuf>,
    /// Every DAG event with its parents and commit time.
    #[arg(long)]
    dag_dump: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<drdst_core::Error> for Failure {
    fn from(e: drdst_core::Error) -> Self {
        match e {
            drdst_core::Error::Config { .. } | drdst_core::Error::Json(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

pub fn load_config(path: &Path) -> Result<SimConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(SimConfig::from_json(&text)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| io_failure(path, e))?;
    }
    w.flush().map_err(|e| io_failure(path, e))
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    cfg.rng_seed = args.seed;
    let opts = RunOptions {
        tree_edges: args.tree_edges.is_some(),
        dag_dump: args.dag_dump.is_some(),
    };
    info!("run: seed {} with {} shards", cfg.rng_seed, cfg.shard_count);
    let out = run_with(&cfg, &opts)?;
    write_run(args, &cfg, &out)?;
    if args.summary {
        print_summary(&cfg, &out);
    }
    Ok(())
}

fn write_run(args: &RunArgs, cfg: &SimConfig, out: &RunOutput) -> Result<(), Failure> {
    match args.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(create(&args.out)?);
            let fail = |e| io_failure(&args.out, e);
            w.write_record(drdst_core::sim::MetricsRecord::csv_header()).map_err(fail)?;
            w.write_record(out.metrics.csv_values()).map_err(fail)?;
            w.flush().map_err(|e| io_failure(&args.out, e))?;
            let epochs = sidecar(&args.out, ".epochs.csv");
            write_epoch_series(create(&epochs)?, &out.epochs)?;
        }
        Format::Json => {
            let doc = serde_json::json!({
                "config": cfg,
                "metrics": out.metrics,
                "epochs": out.epochs,
            });
            serde_json::to_writer_pretty(create(&args.out)?, &doc).map_err(|e| io_failure(&args.out, e))?;
        }
    }
    if let Some(p) = &args.tx_log {
        write_tx_log(create(p)?, &out.tx_log)?;
    }
    if let Some(p) = &args.byte_log {
        write_byte_log(create(p)?, &out.byte_log)?;
    }
    if let Some(p) = &args.tree_edges {
        write_rows(p, &out.tree_edges)?;
    }
    if let Some(p) = &args.dag_dump {
        write_rows(p, &out.dag_dump)?;
    }
    Ok(())
}

fn print_summary(cfg: &SimConfig, out: &RunOutput) {
    let m = &out.metrics;
    let latency = m.mean_latency_s.map_or("n/a".to_string(), |v| format!("{v:.3} s"));
    println!("seed {}: {} RSUs, {} shards, {} epochs", cfg.rng_seed, cfg.rsu_count, cfg.shard_count, out.epochs.len());
    println!("  submitted {}  committed {}  pending {}  rejected {}", m.submitted, m.committed, m.pending, m.rejected);
    println!("  latency {latency}  throughput {:.1} tps  success {:.4}", m.throughput_tps, m.success_rate);
    println!("  traffic {:.3} MB per RSU  cross-shard {:.2} tps", m.node_traffic_mb, m.cross_shard_throughput_tps);
}

#[derive(Serialize)]
struct BenchRow {
    generation: usize,
    algorithm: &'static str,
    run_id: usize,
    best_fitness: f64,
}

fn cmd_shard_bench(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let nodes = initial_nodes(&cfg)?;
    let params = GsaParams::from_config(&cfg.gsa, &nodes);
    let seeds = SeedSource::new(cfg.rng_seed);
    let mut w = csv::Writer::from_writer(create(out)?);
    let mut finals = [0.0, 0.0];
    for run_id in 0..cfg.gsa.bench_runs {
        let gsa = gsa_run(&nodes, cfg.shard_count, &params, &cfg.thresholds, &mut seeds.indexed("bench-gsa", run_id as u64))?;
        let ga = ga_baseline_run(&nodes, cfg.shard_count, &params, &cfg.thresholds, &mut seeds.indexed("bench-ga", run_id as u64))?;
        for (k, (algorithm, outcome)) in [("gsa", &gsa), ("ga", &ga)].into_iter().enumerate() {
            finals[k] += outcome.fitness;
            for (g, &best_fitness) in outcome.history.iter().enumerate() {
                let row = BenchRow {
                    generation: g + 1,
                    algorithm,
                    run_id,
                    best_fitness,
                };
                w.serialize(row).map_err(|e| io_failure(out, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_failure(out, e))?;
    let runs = cfg.gsa.bench_runs as f64;
    info!("shard-bench: mean final fitness gsa {:.4}, ga {:.4}", finals[0] / runs, finals[1] / runs);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DRDST_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args).map(|()| true),
        Command::Sweep { spec, out, jobs } => sweep::cmd_sweep(spec, out, *jobs),
        Command::ShardBench { config, out } => cmd_shard_bench(config, out).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("drdst: configuration error: {m}"),
                Failure::Runtime(m) => eprintln!("drdst: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

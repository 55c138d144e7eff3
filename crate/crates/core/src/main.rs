use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dgmphd::config::ExperimentConfig;
use dgmphd::experiment::run_experiment;
use dgmphd::network::generate_network;
use dgmphd::scenario::default_region;
use dgmphd::Error;

#[derive(Parser)]
#[command(
    name = "dgmphd",
    version,
    about = "Distributed multi-target tracking over a simulated sensor network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write the result tables.
    Run {
        /// Path to the TOML configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the configuration and DGMPHD_OUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread count; overrides DGMPHD_THREADS.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a configuration, including network feasibility, without
    /// simulating.
    Validate {
        /// Path to the TOML configuration file.
        #[arg(long)]
        config: PathBuf,
    },
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn fail(error: &Error, code: u8) -> ExitCode {
    eprintln!("error: {error}");
    ExitCode::from(code)
}

fn run_exit_code(error: &Error) -> u8 {
    match error {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, String> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("DGMPHD_THREADS") {
            Ok(raw) => Some(
                raw.parse::<usize>()
                    .map_err(|_| format!("DGMPHD_THREADS must be a positive integer, got {raw:?}"))?,
            ),
            Err(_) => None,
        },
    };
    if threads == Some(0) {
        return Err("thread count must be positive".to_string());
    }
    Ok(threads)
}

fn run_command(
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(&config) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e, EXIT_CONFIG),
    };
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    let out_dir = out
        .or_else(|| std::env::var_os("DGMPHD_OUT_DIR").map(PathBuf::from))
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let threads = match resolve_threads(threads) {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run_experiment(&cfg, &out_dir)),
            Err(e) => {
                eprintln!("error: cannot build a {n}-thread worker pool: {e}");
                return ExitCode::from(EXIT_RUNTIME);
            }
        },
        None => run_experiment(&cfg, &out_dir),
    };
    match result {
        Ok(output) => {
            println!(
                "{:<10} {:>3} {:>18} {:>18} {:>22}",
                "protocol", "t", "avg network OSPA", "tuples per step", "efficiency per tuple"
            );
            for row in &output.aggregates {
                let ce = row
                    .consensus_efficiency
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_else(|| "-".to_string());
                println!(
                    "{:<10} {:>3} {:>18.4} {:>18.2} {:>22}",
                    row.protocol, row.t, row.time_avg_network_ospa, row.mean_tuples_per_step, ce
                );
            }
            println!();
            println!("wrote {} tables to {}", output.files.len(), output.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, run_exit_code(&e)),
    }
}

fn validate_command(config: PathBuf) -> ExitCode {
    let cfg = match ExperimentConfig::load(&config) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e, EXIT_CONFIG),
    };
    let graph = match generate_network(
        cfg.network.nodes,
        cfg.network.comm_radius,
        &default_region(),
        cfg.network.target_diameter,
        cfg.network.seed,
    ) {
        Ok(graph) => graph,
        Err(e) => return fail(&e, EXIT_CONFIG),
    };
    println!("scenario: {:?}", cfg.scenario_kind());
    println!("steps: {}, runs: {}, master seed: {}", cfg.steps, cfg.mc_runs, cfg.master_seed);
    println!(
        "network: {} nodes, {} edges, diameter {}",
        graph.len(),
        graph.edges().len(),
        graph.diameter()
    );
    let protocols: Vec<&str> = cfg.protocol_names().iter().map(|p| p.as_str()).collect();
    println!("protocols: {}", protocols.join(", "));
    println!(
        "t values: {}",
        cfg.t_values().iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", ")
    );
    println!("configuration OK");
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, out, seed, threads } => run_command(config, out, seed, threads),
        Command::Validate { config } => validate_command(config),
    }
}

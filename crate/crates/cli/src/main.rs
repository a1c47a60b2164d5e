use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hybrid_precoding::grouping::{
    channel_correlation, exhaustive_grouping, grouping_objective, random_correlation, shared_ahc,
    GroupingObjective,
};
use hybrid_precoding::harness::{run_sweep, ExperimentConfig, RunOptions};
use hybrid_precoding::pcs::Side;

/// Seeded sweeps of broadband hybrid precoding schemes.
#[derive(Debug, Parser)]
#[command(name = "hybridsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a sweep and write the result table as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long)]
        parallel: Option<usize>,
        /// Restrict the sweep, e.g. `scheme=pca-fca,as`. Repeatable.
        #[arg(long)]
        filter: Vec<String>,
    },
    /// Check a config file and print the number of rows it would produce.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare shared-AHC with exhaustive search on one grouping instance.
    OracleGrouping {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        nrf: usize,
        #[arg(long)]
        seed: u64,
        /// `channel`: R_F of fully-digital precoders on an n-element array;
        /// `gaussian`: R = G G^H with i.i.d. Gaussian G.
        #[arg(long, value_enum, default_value_t = Instance::Channel)]
        instance: Instance,
        /// Streams of the channel instance.
        #[arg(long, default_value_t = 1)]
        ns: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Instance {
    Channel,
    Gaussian,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            parallel,
            filter,
        } => {
            let mut cfg = ExperimentConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            for f in &filter {
                cfg.apply_filter(f)?;
            }
            let start = Instant::now();
            let result = run_sweep(&cfg, RunOptions { threads: parallel })?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            result.write_csv(BufWriter::new(file))?;
            for e in &result.errors {
                eprintln!("row error: {e}");
            }
            eprintln!(
                "wrote {} rows ({} failed) to {} in {:.1} s",
                result.rows.len(),
                result.errors.len(),
                out.display(),
                start.elapsed().as_secs_f64()
            );
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)
                .with_context(|| format!("validating {}", config.display()))?;
            println!("ok: {} rows", cfg.expected_rows());
        }
        Command::OracleGrouping {
            n,
            nrf,
            seed,
            instance,
            ns,
        } => {
            let corr = match instance {
                Instance::Channel => channel_correlation(n, ns, seed)?,
                Instance::Gaussian => random_correlation(n, seed, Side::Tx)?,
            };
            let start = Instant::now();
            let ahc = shared_ahc(&corr, nrf)?;
            let t_ahc = start.elapsed();
            println!("shared-ahc in {:.3} ms", t_ahc.as_secs_f64() * 1e3);
            print!("{ahc}");
            for objective in [GroupingObjective::ApproxSum, GroupingObjective::ExactLambda] {
                let start = Instant::now();
                let best = exhaustive_grouping(&corr, nrf, objective)?;
                let t_exh = start.elapsed();
                let value = grouping_objective(&ahc, &corr, objective)?;
                println!(
                    "[{objective}] exhaustive {:.6} over {} candidates in {:.3} ms",
                    best.objective,
                    best.candidates,
                    t_exh.as_secs_f64() * 1e3
                );
                print!("{}", best.partition);
                println!(
                    "[{objective}] shared-ahc {value:.6} ratio {:.6}",
                    value / best.objective
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

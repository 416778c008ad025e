//! Runs both experiments and writes `recovery.csv` and `repair.csv`.

use std::fs::{self, File};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use entangled_bench::{
    default_strategies, run_recovery_sweep, run_repair_comparison, write_csv, BenchConfig, COMPARE_DEPTHS, COMPARE_FRACTIONS, DEFAULT_FRACTIONS,
};

#[derive(Parser)]
#[command(about = "Seeded recovery and repair experiments")]
struct Args {
    /// Output directory for the CSV files.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    /// Use 10 KiB chunks (25 MB file) instead of 1 KiB.
    #[arg(long)]
    large: bool,
    /// Workers per collaborative repair.
    #[arg(long, default_value_t = 3)]
    peers_collab: usize,
}

fn run(args: &Args) -> entangled_bench::Result<()> {
    let base = if args.large { BenchConfig::large() } else { BenchConfig::default() };
    let cfg = BenchConfig { seed: args.seed, repetitions: args.repetitions, ..base };
    fs::create_dir_all(&args.out)?;
    let sweep = run_recovery_sweep(&cfg, &default_strategies(), &DEFAULT_FRACTIONS)?;
    write_csv(&sweep, File::create(args.out.join("recovery.csv"))?)?;
    let compare = run_repair_comparison(&cfg, &COMPARE_DEPTHS, &COMPARE_FRACTIONS, args.peers_collab)?;
    write_csv(&compare, File::create(args.out.join("repair.csv"))?)?;
    println!("recovery_rows={}", sweep.len());
    println!("repair_rows={}", compare.len());
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error={e}");
            ExitCode::FAILURE
        }
    }
}

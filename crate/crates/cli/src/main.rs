use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use vireid_lab_cli::{run_experiment, run_selftest, ExperimentConfig, Kernels, Overrides};

/// Train free embedding tables on synthetic visible/infrared data under
/// selectable metric-learning losses and report retrieval metrics.
#[derive(Parser)]
#[command(name = "vireid-lab", version)]
struct Args {
    /// Experiment configuration (JSON).
    #[arg(long, required_unless_present = "selftest")]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for data generation, training and evaluation.
    #[arg(long)]
    seed: Option<u64>,
    /// Run the built-in oracle and gradient checks instead of an experiment.
    #[arg(long, conflicts_with = "config")]
    selftest: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.selftest {
        return match run_selftest(&mut io::stdout().lock(), &Kernels::default()) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        };
    }

    let overrides = Overrides {
        seed: args.seed,
        output_dir: args.out,
    };
    let path = args.config.expect("clap enforces --config");
    let result = ExperimentConfig::load(&path, &overrides).and_then(|cfg| {
        let cells = run_experiment(&cfg)?;
        Ok((cfg, cells))
    });
    match result {
        Ok((cfg, cells)) => {
            println!("{:<4} {:<48} {:>8} {:>8} {:>8}", "cell", "losses", "rank1", "rank10", "mAP");
            for c in &cells {
                println!(
                    "{:<4} {:<48} {:>8.4} {:>8.4} {:>8.4}",
                    c.index,
                    c.name,
                    c.report.cmc_at(1),
                    c.report.cmc_at(10),
                    c.report.map
                );
            }
            println!("artifacts written to {}", cfg.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

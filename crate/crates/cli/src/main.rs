use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use epilna_cli::commands::{cmd_compare, cmd_fit, cmd_pf_variance, cmd_simulate};
use epilna_cli::config::{load, Experiment};
use epilna_cli::error::CliResult;

#[derive(Parser)]
#[command(
    name = "epilna",
    about = "Stochastic epidemic models from incidence counts: exact simulation and LNA-based Bayesian inference",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (repeatable for `compare`).
    #[arg(long, required = true)]
    config: Vec<PathBuf>,

    /// Override the configuration seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads for parallel fits (0 = number of cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic data set from the configured model.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the configured model to data and write chain outputs.
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Fit several configurations and tabulate DIC.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Report the variance of repeated particle-filter log-likelihood
    /// estimates at the configured parameter values.
    PfVariance {
        #[command(flatten)]
        common: Common,

        /// Number of repeated estimates.
        #[arg(long, default_value_t = 100)]
        reps: usize,

        /// Also report the variance of successive differences under a
        /// Crank-Nicolson auxiliary chain with this correlation.
        #[arg(long)]
        rho: Option<f64>,
    },
}

fn load_all(common: &Common) -> CliResult<Vec<Experiment>> {
    let mut exps = Vec::new();
    for path in &common.config {
        let mut exp = load(path)?;
        if let Some(seed) = common.seed {
            exp.settings.seed = seed;
            exp.config.mcmc.seed = seed;
        }
        if let Some(out) = &common.out {
            exp.out_dir = out.clone();
            exp.config.output.dir = Some(out.display().to_string());
        }
        exps.push(exp);
    }
    Ok(exps)
}

fn run(cli: Cli) -> CliResult<()> {
    let common = match &cli.command {
        Command::Simulate { common }
        | Command::Fit { common }
        | Command::Compare { common }
        | Command::PfVariance { common, .. } => common,
    };
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .ok();
    }
    let mut exps = load_all(common)?;

    match cli.command {
        Command::Simulate { .. } => {
            let exp = &exps[0];
            let out = cmd_simulate(exp)?;
            println!(
                "simulated {} observations (interval {}) -> {}",
                out.y.len(),
                out.delta,
                out.data_path.display()
            );
        }
        Command::Fit { .. } => {
            let exp = &exps[0];
            let fit = cmd_fit(exp)?;
            println!("fit '{}' finished: acceptance {:.3}, DIC {:.1} (p_D {:.2})", fit.label, fit.acceptance_rate, fit.dic, fit.p_d);
            for s in &fit.summary {
                println!(
                    "  {:<11} mean {:>12.6}  sd {:>12.6}  ESS {:>8.1}  ESS/s {:>9.3}",
                    s.name, s.mean, s.sd, s.ess, s.ess_per_sec
                );
            }
            println!("  outputs in {}", fit.out_dir.display());
        }
        Command::Compare { ref common, .. } => {
            let out_dir = common
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("out/compare"));
            let exps = std::mem::take(&mut exps);
            let cmp = cmd_compare(exps, &out_dir)?;
            println!("model,dic,p_d");
            for row in &cmp.rows {
                println!("{},{:.1},{:.2}", row.label, row.dic, row.p_d);
            }
            println!("preferred model: {}", cmp.best);
        }
        Command::PfVariance { reps, rho, .. } => {
            let exp = &exps[0];
            let report = cmd_pf_variance(exp, reps, rho)?;
            println!(
                "log-likelihood estimates over {} repetitions: mean {:.4}, variance {:.4}",
                report.reps, report.mean, report.variance
            );
            if let Some(v) = report.diff_variance {
                println!("variance of successive correlated differences: {v:.4}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

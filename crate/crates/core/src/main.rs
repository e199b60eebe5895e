use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eewm::covariance::{ar1_autocorr, read_covariance_csv, toeplitz_from_autocorr};
use eewm::design::{
    brute_force_best_covariance, optimal_watermark_covariance, stationarity_residual,
};
use eewm::harness::{write_csv_file, ExperimentConfig};
use eewm::wss::{ar1_psd, psd_condition_check, toeplitz_eigen_gap};
use eewm::{run_experiment, solve_attack, Result};

#[derive(Parser)]
#[command(
    name = "eewm",
    version,
    about = "Watermark covariance design under optimal linear attacks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the optimal linear attack; prints `N,gamma,lambda,r0,distortion`.
    Attack {
        /// Host covariance CSV.
        #[arg(long)]
        host: PathBuf,
        /// Watermark covariance CSV.
        #[arg(long)]
        watermark: PathBuf,
        /// Target average linear correlation.
        #[arg(long, allow_negative_numbers = true)]
        r0: f64,
    },
    /// Optimal watermark covariance for a host and power budget.
    Design {
        #[arg(long)]
        host: PathBuf,
        #[arg(long)]
        pw: f64,
        /// Also run a randomized search with this many candidates.
        #[arg(long)]
        brute_trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Toeplitz eigenvalue vs. PSD agreement and the power-spectrum condition for AR(1) hosts.
    WssCheck {
        #[arg(long, allow_negative_numbers = true)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        #[arg(long)]
        pw: f64,
        #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512")]
        sizes: Vec<usize>,
    },
    /// Run a config-driven experiment and write the results CSV.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Attack {
            host,
            watermark,
            r0,
        } => {
            let c_x = read_covariance_csv(host)?;
            let c_w = read_covariance_csv(watermark)?;
            let sol = solve_attack(&c_x, &c_w, r0)?;
            println!(
                "{},{:.15e},{:.15e},{:.15e},{:.15e}",
                c_x.dim(),
                sol.gamma,
                sol.lagrange,
                sol.r_target,
                sol.distortion
            );
        }
        Command::Design {
            host,
            pw,
            brute_trials,
            seed,
        } => {
            let c_x = read_covariance_csv(host)?;
            let sol = optimal_watermark_covariance(&c_x, pw)?;
            let brute = match brute_trials {
                Some(trials) => format!(
                    "{:.15e}",
                    brute_force_best_covariance(&c_x, pw, trials, seed)?.residual_energy
                ),
                None => String::new(),
            };
            let resid = stationarity_residual(&c_x, &sol.covariance, sol.lagrange)?;
            println!("N,c,lambda,alpha,E_opt,E_brute_best,stationarity_residual");
            println!(
                "{},{:.15e},{:.15e},{:.15e},{:.15e},{},{:.15e}",
                c_x.dim(),
                sol.c,
                sol.lagrange,
                sol.alpha,
                sol.residual_energy,
                brute,
                resid
            );
        }
        Command::WssCheck {
            rho,
            sigma2,
            pw,
            sizes,
        } => {
            println!("N,eigen_gap,psd_ratio_error");
            for n in sizes {
                let c_x = toeplitz_from_autocorr(&ar1_autocorr(sigma2, rho, n)?)?;
                let gap = toeplitz_eigen_gap(&c_x, &ar1_psd(sigma2, rho, n)?)?;
                let report = psd_condition_check(&c_x, pw)?;
                println!("{n},{gap:.15e},{:.15e}", report.max_psd_ratio_error);
            }
        }
        Command::Experiment { config, out, seed } => {
            let mut config = ExperimentConfig::from_file(config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let rows = run_experiment(&config)?;
            write_csv_file(&rows, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

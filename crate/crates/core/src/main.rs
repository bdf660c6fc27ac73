use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fbsde_filter::harness::{self, Axis, ExperimentConfig};
use fbsde_filter::model::ModelRegistry;
use fbsde_filter::Result;

#[derive(Parser)]
#[command(name = "fbsde-filter", version, about = "Kernel-learning FBSDE particle filter and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Model name from the built-in zoo (overrides the config file).
    #[arg(long)]
    model: Option<String>,
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a truth path and its observations; writes truth.csv.
    Simulate(Common),
    /// Run the FBSDE filter and baselines on a simulated path.
    Filter(Common),
    /// Empirical convergence rate along one axis.
    Rates {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_axis)]
        axis: Axis,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Recurrence-coefficient diagnostic on a simulated path.
    Diagnose(Common),
}

fn parse_axis(s: &str) -> std::result::Result<Axis, String> {
    s.parse().map_err(|e: fbsde_filter::Error| e.to_string())
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(|e| match e {
            fbsde_filter::Error::Parse { line, message } => {
                fbsde_filter::Error::Config(format!("{}:{line}: {message}", path.display()))
            }
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = &common.model {
        cfg.model = m.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml_string())?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    let registry = ModelRegistry::default();
    match command {
        Command::Simulate(c) => {
            let cfg = load(&c)?;
            let sim = harness::simulate(&cfg, &registry)?;
            write_config(&cfg, &c.out)?;
            harness::write_truth(&sim.truth, fs::File::create(c.out.join("truth.csv"))?)?;
            println!("wrote {}", c.out.join("truth.csv").display());
        }
        Command::Filter(c) => {
            let cfg = load(&c)?;
            write_config(&cfg, &c.out)?;
            let s = harness::run_experiment(&cfg, &registry, &c.out)?;
            println!("model {}: FBSDE RMSE {:.4}", s.model, s.rmse_fbsde);
            if let Some(r) = s.rmse_bootstrap {
                println!("bootstrap RMSE {r:.4}");
            }
            if let (Some(name), Some(r), Some(gap)) = (&s.reference, s.rmse_reference, s.max_reference_gap) {
                println!("{name} reference RMSE {r:.4}; max FBSDE gap {gap:.3} reference std");
            }
        }
        Command::Rates {
            common,
            axis,
            replications,
        } => {
            let mut cfg = load(&common)?;
            if let Some(r) = replications {
                cfg.rates.replications = r;
            }
            write_config(&cfg, &common.out)?;
            let report = harness::run_rates(&cfg, &registry, axis, &common.out)?;
            for p in &report.points {
                println!("{axis} = {:<10} {:?} = {:.4e} ± {:.1e}", p.value, report.statistic, p.error, p.std_error);
            }
            println!(
                "slope {:.3} ± {:.3} (theory {:.3})",
                report.fit.slope, report.fit.half_width, report.theoretical_slope
            );
        }
        Command::Diagnose(c) => {
            let cfg = load(&c)?;
            write_config(&cfg, &c.out)?;
            let est = harness::run_diagnose(&cfg, &registry, &c.out)?;
            println!(
                "G = {:.4}, R = {:.4} ({}){}",
                est.divergence_bound,
                est.coefficient,
                if est.below_one { "below one" } else { "not below one" },
                if est.underflow { ", denominator underflow" } else { "" }
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Simulate(c) | Command::Filter(c) | Command::Diagnose(c) => c.threads,
        Command::Rates { common, .. } => common.threads,
    };
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => {
                eprintln!("error: cannot start {n} threads: {e}");
                return ExitCode::FAILURE;
            }
        },
        None => run(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

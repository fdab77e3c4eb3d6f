use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use safevolt_core::config::RunConfig;
use safevolt_core::env::dataset::{synth_dataset, SynthConfig, TimeSeriesDataset};
use safevolt_core::grid::NetworkModel;
use safevolt_core::powerflow::{self, InjectionProfile, SolverOptions};
use safevolt_core::runner::{self, RunnerError};

/// Environment variable overriding the output root of `run`.
const OUT_ENV: &str = "SAFEVOLT_OUT";

#[derive(Parser)]
#[command(name = "safevolt", version, about = "Safe multi-agent voltage control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every (algorithm, seed) cell of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the config's list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root; overrides the config and $SAFEVOLT_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Validate inputs and print the run plan without training.
        #[arg(long)]
        dry_run: bool,
        /// Number of runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Rebuild summary.csv and learning_curves.csv from run directories.
    Report { out_dir: PathBuf },
    /// Solve one power flow and print bus voltages as CSV.
    SolvePf {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, conflicts_with = "dataset")]
        zero_injections: bool,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        row: usize,
    },
    /// Generate a synthetic load/PV dataset for a network.
    MakeData {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, default_value_t = 20)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that a network file describes a valid radial network.
    ValidateNet { net: PathBuf },
}

/// Missing or unusable inputs; reported with exit code 2.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<InputError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Run {
            config,
            seed,
            out,
            dry_run,
            parallel,
        } => run(&config, seed, out, dry_run, parallel),
        Command::Report { out_dir } => {
            let rows = runner::report(&out_dir)?;
            let mut stdout = std::io::stdout().lock();
            for r in rows {
                writeln!(stdout, "{:<18} {:<6} median {:.4} std {:.4} (n={})", r.algorithm, r.metric, r.median, r.std, r.runs)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SolvePf {
            net,
            zero_injections,
            dataset,
            row,
        } => solve_pf(&net, zero_injections, dataset.as_deref(), row),
        Command::MakeData { net, days, seed, out } => {
            let model = load_net(&net)?;
            let cfg = SynthConfig {
                days,
                ..SynthConfig::default()
            };
            let data = synth_dataset(&model, &cfg, seed)?;
            data.save_csv(&out, &model)
                .with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} rows to {}", data.rows(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateNet { net } => {
            let model = load_net(&net)?;
            println!(
                "{}: {} buses, {} branches, {} loads, {} PVs, {} zones",
                net.display(),
                model.n_bus(),
                model.branches().len(),
                model.loads().len(),
                model.pvs().len(),
                model.zones().len()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_net(path: &Path) -> anyhow::Result<NetworkModel> {
    if !path.is_file() {
        return Err(InputError(format!("network file not found: {}", path.display())).into());
    }
    NetworkModel::load(path).map_err(|e| InputError(e.to_string()).into())
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, dry_run: bool, parallel: usize) -> anyhow::Result<ExitCode> {
    if !config.is_file() {
        return Err(InputError(format!("config file not found: {}", config.display())).into());
    }
    let mut cfg = RunConfig::load(config).map_err(|e| InputError(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let out_dir = out
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.out_dir.clone());

    // Inputs are checked before anything runs, dry or not.
    runner::load_inputs(&cfg).map_err(|e| match e {
        RunnerError::MissingFile(_) | RunnerError::Grid(_) | RunnerError::Dataset(_) => {
            anyhow::Error::from(InputError(e.to_string()))
        }
        other => other.into(),
    })?;

    let cells = runner::plan(&cfg);
    if dry_run {
        println!("config ok; {} run(s) into {}", cells.len(), out_dir.display());
        for c in &cells {
            println!("  {}  ({}, seed {})", c.run_id, c.algorithm.name(), c.seed);
        }
        return Ok(ExitCode::SUCCESS);
    }

    let outcomes = runner::run_all(&cfg, &out_dir, parallel)?;
    let failed: Vec<_> = outcomes.iter().filter(|o| o.result.is_err()).collect();
    for o in &outcomes {
        match &o.result {
            Ok(()) => println!("ok      {}", o.dir.display()),
            Err(e) => println!("failed  {}: {e}", o.dir.display()),
        }
    }
    if failed.is_empty() {
        println!("summary: {}", out_dir.join("summary.csv").display());
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

fn solve_pf(net: &Path, zero: bool, dataset: Option<&Path>, row: usize) -> anyhow::Result<ExitCode> {
    let model = load_net(net)?;
    let inj = match dataset {
        Some(path) if !zero => {
            if !path.is_file() {
                return Err(InputError(format!("dataset not found: {}", path.display())).into());
            }
            let data = TimeSeriesDataset::load_csv(path, &model)?;
            if row >= data.rows() {
                anyhow::bail!("row {row} out of range (dataset has {} rows)", data.rows());
            }
            data.injections(&model, row, &vec![0.0; model.pvs().len()])
        }
        _ => InjectionProfile::zeros(model.n_bus()),
    };
    let sol = powerflow::solve(&model, &inj, &SolverOptions::default())?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "bus,v_pu,theta_rad")?;
    for (i, (v, t)) in sol.v.iter().zip(&sol.theta).enumerate() {
        writeln!(stdout, "{i},{v},{t}")?;
    }
    eprintln!("converged in {} iterations, line loss {} p.u.", sol.iterations, sol.p_loss);
    Ok(ExitCode::SUCCESS)
}

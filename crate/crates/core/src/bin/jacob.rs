use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jacob::admission::Mode;
use jacob::experiments::{self, RunConfig};
use jacob::{scenario, JacobError};

#[derive(Parser)]
#[command(name = "jacob", version, about = "Joint admission control and coordinated beamforming simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Feasibility rate of serving every user, per total user count
    Feasibility {
        #[command(flatten)]
        common: Common,
        /// Total user count KM (repeatable)
        #[arg(long = "total-users")]
        total_users: Vec<usize>,
    },
    /// Mean admitted users per SINR threshold, centralized and distributed
    Admitted {
        #[command(flatten)]
        common: Common,
    },
    /// Total BCD rounds over deflation, with and without prescreening
    Iterations {
        #[command(flatten)]
        common: Common,
    },
    /// Run deflation on a scenario file and write a report
    Solve {
        /// Scenario file
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a scenario file
    Gen {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// key=value configuration file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long = "users-per-cell")]
    users_per_cell: Option<usize>,
    /// SINR threshold in dB (repeatable)
    #[arg(long = "gamma-db", allow_negative_numbers = true)]
    gamma_db: Vec<f64>,
    #[arg(long, value_parser = ["centralized", "distributed"])]
    mode: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    /// Output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, JacobError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.users_per_cell {
            cfg.scenario.users_per_cell = v;
        }
        if !self.gamma_db.is_empty() {
            cfg.gammas_db = self.gamma_db.clone();
        }
        if let Some(m) = &self.mode {
            cfg.mode = m.parse()?;
        }
        if let Some(v) = self.eps {
            cfg.eps = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn emit(&self, text: &str) -> Result<(), JacobError> {
        match &self.out {
            Some(path) => std::fs::write(path, text)?,
            None => print!("{text}"),
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<(), JacobError> {
    match cli.command {
        Command::Feasibility { common, total_users } => {
            let mut cfg = common.resolve()?;
            if !total_users.is_empty() {
                cfg.user_counts = total_users;
            }
            if let Some(&g) = common.gamma_db.first() {
                cfg.scenario.threshold_db = g;
            }
            common.emit(&experiments::feasibility_sweep(&cfg)?.table.to_csv())
        }
        Command::Admitted { common } => {
            let cfg = common.resolve()?;
            let study = experiments::admitted_sweep(&cfg)?;
            for (g, t, e) in &study.failures {
                eprintln!("gamma_db={g} trial={t}: {e}");
            }
            common.emit(&study.table.to_csv())
        }
        Command::Iterations { common } => {
            let cfg = common.resolve()?;
            let study = experiments::iteration_study(&cfg)?;
            for (g, t, e) in &study.failures {
                eprintln!("gamma_db={g} trial={t}: {e}");
            }
            common.emit(&study.table.to_csv())
        }
        Command::Solve { scenario: path, common } => {
            let cfg = common.resolve()?;
            let s = scenario::load(&path)?;
            let s = match common.gamma_db.first() {
                Some(&g) => s.with_thresholds(scenario::db_to_linear(g))?,
                None => s,
            };
            let mode: Mode = cfg.mode;
            common.emit(&experiments::solve_report(&s, mode, &cfg.admission_options(cfg.prescreen))?)
        }
        Command::Gen { common } => {
            let mut cfg = common.resolve()?;
            if let Some(&g) = common.gamma_db.first() {
                cfg.scenario.threshold_db = g;
            }
            let s = scenario::generate(&cfg.trial_config(0))?;
            common.emit(&scenario::to_text(&s))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                JacobError::Solver { .. } => 3,
                JacobError::Io(_) => 1,
                _ => 2,
            })
        }
    }
}

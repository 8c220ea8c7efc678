use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ratesync_harness::{
    run_conformance, run_delay_speedup, run_single, run_variance_sweep, ExperimentConfig, HarnessError, Mode,
    PolicyKind,
};

#[derive(Parser)]
#[command(name = "ratesync", version, about = "Multi-rate synchronization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spread of sin(theta) across repeated runs of one action tape.
    Variance(Common),
    /// Realized real-time factor with and without a one-period delay.
    Speedup {
        #[command(flatten)]
        common: Common,
        /// Injected cost per callback in milliseconds.
        #[arg(long)]
        cost_ms: Option<f64>,
    },
    /// Count formulas against the timeline oracle on random channels.
    Conformance {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        cases: u32,
    },
    /// A single episode; writes the trajectory as JSON lines with --out.
    Run {
        #[command(flatten)]
        common: Common,
        /// tape, random, zero or swingup.
        #[arg(long)]
        policy: Option<PolicyKind>,
    },
}

#[derive(Args)]
struct Common {
    /// Graph TOML file, or a built-in graph: filtered, direct.
    #[arg(long)]
    graph: Option<String>,
    /// Engine to resolve the graph under.
    #[arg(long)]
    engine: Option<String>,
    /// sync or async; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    mode: Vec<Mode>,
    /// Target real-time factors; 0 means unlimited.
    #[arg(long, value_delimiter = ',')]
    rtf: Vec<f64>,
    #[arg(long)]
    runs: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Episode length in simulated seconds.
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file whose keys take precedence over the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn resolve(self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        if let Some(g) = self.graph {
            cfg.graph = g;
        }
        if let Some(e) = self.engine {
            cfg.engine = e;
        }
        if !self.mode.is_empty() {
            cfg.modes = self.mode;
        }
        if !self.rtf.is_empty() {
            cfg.target_rtf = self.rtf;
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.seconds {
            cfg.episode_seconds = s;
        }
        if self.out.is_some() {
            cfg.out = self.out;
        }
        match self.config {
            Some(path) => cfg.overlay_file(&path),
            None => Ok(cfg),
        }
    }
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Variance(common) => {
            let cfg = common.resolve()?;
            for s in run_variance_sweep(&cfg)? {
                let rtf = s.runs.iter().map(|r| r.realized_rtf).sum::<f64>() / s.runs.len() as f64;
                println!(
                    "{:<12} variance {:.3e}  identical hashes {:<5}  mean realized rtf {:.2}",
                    s.setting,
                    s.variance,
                    s.hashes_identical(),
                    rtf
                );
            }
        }
        Command::Speedup { common, cost_ms } => {
            let mut cfg = common.resolve()?;
            if let Some(c) = cost_ms {
                cfg.cost_ms = c;
            }
            println!("{}", run_delay_speedup(&cfg)?);
        }
        Command::Conformance { common, cases } => {
            let cfg = common.resolve()?;
            let report = run_conformance(cfg.seed, cases)?;
            println!("{report}");
            if !report.passed() {
                return Err(HarnessError::Conformance(
                    report.first_counterexample.unwrap_or_else(|| "mismatch".into()),
                ));
            }
        }
        Command::Run { common, policy } => {
            let mut cfg = common.resolve()?;
            if let Some(p) = policy {
                cfg.policy = p;
            }
            let traj = run_single(&cfg)?;
            println!(
                "{} steps, {:.2} s simulated, realized rtf {:.2}, return {:.3}",
                traj.records.len(),
                traj.sim_time,
                traj.realized_rtf,
                traj.total_reward()
            );
            println!("episode hash {}", traj.hash);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Command-line front end: single runs, policy comparison, sweeps and the
//! small-instance verifier. Exit codes: 0 success, 2 configuration error,
//! 3 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mec_offload::harness::{self, obtain_policy};
use mec_offload::verify::{small_instance_config, verify_small_instance};
use mec_offload::{load_config, ExperimentConfig, PolicyKind};

#[derive(Parser, Debug)]
#[command(name = "mec-offload", version, about = "Seedable MEC offloading simulator")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (TOML); desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Training episodes; overrides `run.episodes`.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "ddql")]
    policy: String,
}

#[derive(Args, Debug)]
struct MultiArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated policies; all seven when omitted.
    #[arg(long, value_delimiter = ',')]
    policies: Vec<String>,
    /// Number of seeds; overrides `run.seeds`.
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate policies over several seeds and write compare.csv.
    Compare(MultiArgs),
    /// Cost against fixed task size; writes sweep_data.csv.
    SweepData {
        #[command(flatten)]
        multi: MultiArgs,
        /// Task sizes in Mbits; `sweep.data_mbits` when omitted.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
    },
    /// Cost against MEC count; writes sweep_mec.csv.
    SweepMec {
        #[command(flatten)]
        multi: MultiArgs,
        /// MEC counts; `sweep.mec_counts` when omitted.
        #[arg(long, value_delimiter = ',')]
        counts: Vec<usize>,
    },
    /// Exhaustive one-step check on small instances; writes verify.csv.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Shrink the configuration to the verifier's bounds first.
        #[arg(long)]
        small: bool,
        #[arg(long)]
        instances: Option<usize>,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let is_config = e
            .chain()
            .any(|c| c.downcast_ref::<mec_offload::Error>().is_some_and(|m| m.is_config()));
        if is_config {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

impl From<mec_offload::Error> for Failure {
    fn from(e: mec_offload::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn load(common: &Common) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p).map_err(config_error)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(e) = common.episodes {
        cfg.run.episodes = e;
    }
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

fn policies(names: &[String]) -> std::result::Result<Vec<PolicyKind>, Failure> {
    if names.is_empty() {
        return Ok(PolicyKind::ALL.to_vec());
    }
    names.iter().map(|n| n.parse().map_err(config_error)).collect()
}

fn load_multi(m: &MultiArgs) -> std::result::Result<(ExperimentConfig, Vec<PolicyKind>), Failure> {
    let mut cfg = load(&m.common)?;
    if let Some(s) = m.seeds {
        cfg.run.seeds = s;
    }
    cfg.validate().map_err(config_error)?;
    Ok((cfg, policies(&m.policies)?))
}

fn write_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        None => {
            let cfg = load(&cli.run.common)?;
            let kind: PolicyKind = cli.run.policy.parse().map_err(config_error)?;
            let out = &cli.run.common.out;
            write_config(&cfg, out)?;
            let s = harness::run_experiment(&cfg, kind, out).context("run failed")?;
            println!(
                "{}: seed {} eval sum cost {:.3} (std {:.3}), violation rate {:.3}",
                s.policy, s.seed, s.eval_sum_cost, s.eval_sum_cost_std, s.eval_violation_rate
            );
        }
        Some(Command::Compare(m)) => {
            let (cfg, ps) = load_multi(&m)?;
            write_config(&cfg, &m.common.out)?;
            for r in harness::compare(&cfg, &ps, &m.common.out).context("compare failed")? {
                let red = r.ddql_reduction.map_or(String::new(), |x| format!("  ddql reduction {:.1}%", 100.0 * x));
                println!("{:6} {:12.3} ± {:10.3}{red}", r.policy, r.mean_sum_cost, r.std_sum_cost);
            }
        }
        Some(Command::SweepData { multi, grid }) => {
            let (cfg, ps) = load_multi(&multi)?;
            let grid = if grid.is_empty() { cfg.sweep.data_mbits.clone() } else { grid };
            let mut check = cfg.clone();
            check.sweep.data_mbits = grid.clone();
            check.validate().map_err(config_error)?;
            write_config(&cfg, &multi.common.out)?;
            let rows = harness::sweep_data_size(&cfg, &ps, &grid).context("data sweep failed")?;
            harness::write_sweep(&multi.common.out.join("sweep_data.csv"), &rows)?;
            for r in &rows {
                println!("{:6} {:6.1} Mbit {:12.3}  monotone {}", r.policy, r.x, r.mean_sum_cost, r.flag);
            }
        }
        Some(Command::SweepMec { multi, counts }) => {
            let (cfg, ps) = load_multi(&multi)?;
            let counts = if counts.is_empty() { cfg.sweep.mec_counts.clone() } else { counts };
            if counts.contains(&0) {
                return Err(config_error(mec_offload::Error::config("counts", "MEC counts must be >= 1")));
            }
            write_config(&cfg, &multi.common.out)?;
            let rows = harness::sweep_mec_count(&cfg, &ps, &counts).context("MEC sweep failed")?;
            harness::write_sweep(&multi.common.out.join("sweep_mec.csv"), &rows)?;
            for r in &rows {
                println!("{:6} {:3} MECs {:12.3}  foc>flc {}", r.policy, r.x, r.mean_sum_cost, r.flag);
            }
        }
        Some(Command::Verify { common, small, instances }) => {
            let mut cfg = load(&common)?;
            if small {
                cfg = small_instance_config(&cfg);
            }
            if let Some(n) = instances {
                cfg.verify.instances = n;
            }
            cfg.run.episodes = common.episodes.unwrap_or(cfg.verify.train_episodes);
            cfg.validate().map_err(config_error)?;
            mec_offload::verify::check_size(&cfg).context("instance outside verifier bounds")?;
            write_config(&cfg, &common.out)?;
            let trained = obtain_policy(&cfg, PolicyKind::Ddql, cfg.run.seed).context("training failed")?;
            let mut rows = Vec::new();
            let mut wins = 0;
            for k in 0..cfg.verify.instances {
                let r = verify_small_instance(&cfg, k, &[&trained.policy]).context("verification failed")?;
                let g = r.gap_of("ddql").unwrap_or(f64::INFINITY);
                wins += usize::from(g < r.random_gap);
                println!(
                    "instance {k}: optimum {:.3}, ddql gap {:.3}, random gap {:.3}",
                    r.optimum, g, r.random_gap
                );
                rows.extend(r.rows(k));
            }
            harness::write_csv(&common.out.join("verify.csv"), &rows)?;
            println!("ddql beats random on {wins}/{} instances", cfg.verify.instances);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

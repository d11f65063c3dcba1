use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tiered_control::harness::montecarlo::run_batch;
use tiered_control::harness::output::{read_trace_file, write_json, write_trace_file};
use tiered_control::harness::sweep::{format_table, grid_of, sweep};
use tiered_control::harness::{Scenario, ScenarioConfig};
use tiered_control::stability::{check_decrease, DecreaseReport, DECREASE_TOLERANCE};
use tiered_control::{Error, Result};

#[derive(Parser)]
#[command(name = "tiered", version, about = "Multi-tier control over lossy links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.runs`.
    #[arg(long)]
    runs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write per-run CSV traces.
    #[arg(long, overrides_with = "no_trace")]
    trace: bool,
    #[arg(long = "no-trace", overrides_with = "trace")]
    no_trace: bool,
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(r) = self.runs {
            cfg.run.runs = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario: a single run, or a batch with `--runs`.
    Run(Common),
    /// Run every cell of the sweep grid and print a comparison table.
    Sweep(Common),
    /// Smallest delay budget D with Pr(d > D) ≤ rho for each link.
    Plan {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Target outage probability.
        #[arg(long, default_value_t = 0.2)]
        rho: f64,
    },
    /// Re-check the Lyapunov decrease on a saved trace.
    Check {
        /// Trace CSV written by `run --trace`.
        trace: PathBuf,
        /// Decrease slack η; zero for nominal runs.
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        #[arg(long, default_value_t = DECREASE_TOLERANCE)]
        tolerance: f64,
    },
}

#[derive(Serialize)]
struct CheckOutput<'a> {
    config_hash: Option<&'a str>,
    seed: Option<u64>,
    report: DecreaseReport,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(c) => run(&c),
        Command::Sweep(c) => {
            let cfg = c.load()?;
            let rows = sweep(&cfg, &grid_of(&cfg))?;
            print!("{}", format_table(&rows));
            let out = c.out_dir()?;
            write_json(&out.join("sweep.json"), &rows)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Plan { config, rho } => {
            let cfg = match config {
                Some(p) => ScenarioConfig::load(p)?,
                None => ScenarioConfig::default(),
            };
            for (name, tier_depth, link) in [
                ("cloud", cfg.cloud.depth, cfg.cloud.link),
                ("edge", cfg.edge.depth, cfg.edge.link),
            ] {
                match link.resolve(tier_depth)? {
                    Some(law) => {
                        let d = law.plan_budget(rho)?;
                        println!(
                            "{name}: D = {d}  Pr(d > D) = {:.6}  (target {rho})",
                            law.fit_loss_probability(d)
                        );
                    }
                    None => println!("{name}: link never delivers; no budget"),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { trace, eta, tolerance } => {
            let saved = read_trace_file(&trace)?;
            let report = check_decrease(&saved.samples, eta, tolerance)?;
            let ok = report.violations.is_empty();
            let out = CheckOutput {
                config_hash: saved.config_hash.as_deref(),
                seed: saved.seed,
                report,
            };
            println!("{}", serde_json::to_string_pretty(&out).map_err(|e| Error::Io(e.to_string()))?);
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn run(c: &Common) -> Result<ExitCode> {
    let cfg = c.load()?;
    let out = c.out_dir()?;
    let scenario = Scenario::new(cfg.clone())?;
    let hash = scenario.config_hash().to_owned();
    if cfg.run.runs == 1 {
        let result = scenario.run(cfg.run.seed)?;
        if c.trace {
            write_trace_file(&out.join(format!("trace_{hash}_{}.csv", cfg.run.seed)), &result)?;
        }
        write_json(&out.join(format!("metrics_{hash}_{}.json", cfg.run.seed)), &result.metrics)?;
        let m = &result.metrics;
        println!(
            "config {hash} seed {}: mean cost {:.4}, cloud {:.3} edge {:.3} buffer {:.3} onboard {:.3}, \
             decrease violations {}",
            cfg.run.seed,
            m.average_cost,
            m.sources.cloud,
            m.sources.edge,
            m.sources.buffer,
            m.sources.onboard,
            m.lyapunov.violation_count()
        );
        return Ok(ExitCode::SUCCESS);
    }
    let summary = run_batch(&scenario, cfg.run.seed, cfg.run.runs)?;
    if c.trace {
        for &s in &summary.seeds {
            write_trace_file(&out.join(format!("trace_{hash}_{s}.csv")), &scenario.run(s)?)?;
        }
    }
    write_json(&out.join(format!("summary_{hash}_{}.json", cfg.run.seed)), &summary)?;
    println!(
        "config {hash}, {} runs: mean cost {:.4} ± {:.4}, buffer {:.3}, cloud-origin {:.3}",
        summary.average_cost.n,
        summary.average_cost.mean,
        summary.average_cost.std_dev,
        summary.buffer_fraction.mean,
        summary.cloud_origin.mean
    );
    Ok(ExitCode::SUCCESS)
}

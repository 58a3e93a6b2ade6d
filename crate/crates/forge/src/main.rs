use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use cda_core::engine::ClearingRule;
use cda_core::expost::{optimal_profit, ExPostError, PriceGrid, ReplayScenario};
use cda_core::market::ExperimentConfig;
use clap::{Args, Parser, Subcommand};

use cda_forge::config::load_config;
use cda_forge::harness::{
    compare_cell, population_sweep, run_timed, thread_pool, write_cell_artifacts, write_json, write_run_artifacts,
    write_sweep_artifacts, CellSpec, SweepSpec,
};
use cda_forge::log_io::{event_line, read_log};
use cda_forge::report::{grids_csv, grids_text, load_cells, verdict_grids};

/// Continuous double auction experiments: single runs, strategy
/// comparisons, population sweeps, hindsight benchmarks and verdict tables.
///
/// Exit status: 0 on success, 1 on a runtime failure, 2 on a configuration
/// or usage error.
#[derive(Parser)]
#[command(name = "cda-forge", version)]
struct Cli {
    /// Progress and timing on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One market run: events.jsonl, agents.csv, offers.csv, summary.json.
    Run(RunArgs),
    /// Swap the target seller through FM5, RM, CP5 and P over several seeds
    /// and test P against each: cell.json, comparison.csv, verdicts.csv.
    Compare(CompareArgs),
    /// Vary the background sellers between FM, CP and P: sweep.json,
    /// sweep.csv.
    Sweep(SweepArgs),
    /// Hindsight-optimal prices for one seller over a recorded event log:
    /// opt.json.
    Opt(OptArgs),
    /// Verdict grids (zone x buyer/seller rate) from compare outputs:
    /// verdicts.csv, verdicts.txt.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Replace the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Also write decisions.jsonl: every p-seller's belief, utility table
    /// and chosen price.
    #[arg(long)]
    dump_decisions: bool,
}

#[derive(Args)]
struct Parallel {
    /// Worker threads for independent runs [default: available cores].
    #[arg(long, env = "CDA_FORGE_JOBS")]
    jobs: Option<usize>,
    /// Number of consecutive seeds, starting at the configured one.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    parallel: Parallel,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    parallel: Parallel,
}

#[derive(Args)]
struct OptArgs {
    /// Event log written by `run`.
    #[arg(long, value_name = "PATH")]
    log: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Agent to optimize [default: the logged run's target seller].
    #[arg(long)]
    target: Option<u32>,
    /// Private cost to use at every opportunity [default: the logged one].
    #[arg(long)]
    cost: Option<i64>,
    /// Candidate prices LOWER:UPPER[:STEP] [default: the logged zone, step 1].
    #[arg(long, value_parser = parse_grid)]
    grid: Option<PriceGrid>,
    /// seller-price, buyer-price or midpoint [default: the logged rule].
    #[arg(long, value_parser = parse_rule)]
    clearing: Option<ClearingRule>,
    /// Charge per cycle waited in hindsight profits.
    #[arg(long, default_value_t = 0.0)]
    delay_cost: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Directories written by `compare` (or their cell.json files).
    #[arg(value_name = "CELL")]
    cells: Vec<PathBuf>,
}

fn parse_grid(s: &str) -> Result<PriceGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| p.trim().parse::<i64>().map_err(|e| format!("{p:?}: {e}"));
    let grid = match parts.as_slice() {
        [lo, hi] => PriceGrid { lower: num(lo)?, upper: num(hi)?, step: 1 },
        [lo, hi, step] => PriceGrid { lower: num(lo)?, upper: num(hi)?, step: num(step)? },
        _ => return Err("expected LOWER:UPPER or LOWER:UPPER:STEP".into()),
    };
    if grid.lower > grid.upper || grid.step <= 0 {
        return Err("need LOWER <= UPPER and STEP >= 1".into());
    }
    Ok(grid)
}

fn parse_rule(s: &str) -> Result<ClearingRule, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown clearing rule {s:?}"))
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config_for(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = load_config(&common.config).map_err(|e| Failure::Config(e.into()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn jobs(p: &Parallel) -> usize {
    p.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn seeds(cfg: &ExperimentConfig, p: &Parallel) -> Result<Vec<u64>, Failure> {
    if p.seeds == 0 {
        return Err(Failure::Config(anyhow!("--seeds must be at least 1")));
    }
    Ok((cfg.seed..cfg.seed + p.seeds).collect())
}

fn run_cmd(a: &RunArgs, verbose: u8) -> Result<(), Failure> {
    let cfg = config_for(&a.common)?;
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    let out = run_timed(&cfg, a.dump_decisions).context("simulation failed")?;
    if verbose > 0 {
        eprintln!(
            "{} cycles, {} trades, {:.2}s",
            out.metrics.cycles,
            out.metrics.trades.len(),
            out.metrics.wall_clock_secs
        );
    }
    write_run_artifacts(&a.common.out, &cfg, &out)?;
    Ok(())
}

fn compare_cmd(a: &CompareArgs, verbose: u8) -> Result<(), Failure> {
    let cfg = config_for(&a.common)?;
    if cfg.target.is_none() {
        return Err(Failure::Config(anyhow!("{}: field `target`: compare needs a target seller", a.common.config.display())));
    }
    let seeds = seeds(&cfg, &a.parallel)?;
    let spec = CellSpec::new(cfg, seeds);
    let pool = thread_pool(jobs(&a.parallel))?;
    let report = compare_cell(&spec, &pool)?;
    if verbose > 0 {
        for m in &report.majority {
            eprintln!("{} {}: P vs {} -> {}", report.zone, report.rates, m.opponent, m.winner.symbol());
        }
    }
    write_cell_artifacts(&a.common.out, &report)?;
    Ok(())
}

fn sweep_cmd(a: &SweepArgs, verbose: u8) -> Result<(), Failure> {
    let cfg = config_for(&a.common)?;
    let seeds = seeds(&cfg, &a.parallel)?;
    let spec = SweepSpec::edges(cfg, seeds);
    let pool = thread_pool(jobs(&a.parallel))?;
    let rows = population_sweep(&spec, &pool)?;
    if verbose > 0 {
        eprintln!("{} sweep runs", rows.len());
    }
    write_sweep_artifacts(&a.common.out, &rows)?;
    Ok(())
}

fn opt_cmd(a: &OptArgs, verbose: u8) -> Result<(), Failure> {
    let (header, events) = read_log(&a.log).map_err(|e| Failure::Runtime(anyhow!("{}: {e}", a.log.display())))?;
    let logged = header.config.as_ref();
    let target = a
        .target
        .or_else(|| logged.and_then(|c| c.target_id()))
        .ok_or_else(|| Failure::Config(anyhow!("the log names no target seller; pass --target")))?;
    let grid = a.grid.or_else(|| logged.map(|c| PriceGrid::new(c.zone.bounds().0, c.zone.bounds().1)));
    let grid = grid.ok_or_else(|| Failure::Config(anyhow!("the log has no zone; pass --grid")))?;
    if !(a.delay_cost.is_finite() && a.delay_cost >= 0.0) {
        return Err(Failure::Config(anyhow!("--delay-cost must be finite and >= 0")));
    }
    let scenario = ReplayScenario {
        events,
        target,
        cost: a.cost,
        grid,
        clearing: a.clearing.or(logged.map(|c| c.clearing)).unwrap_or_default(),
        buy_capacity: logged.map_or(cda_core::engine::DEFAULT_CAPACITY, |c| c.buy_capacity),
        sell_capacity: logged.map_or(cda_core::engine::DEFAULT_CAPACITY, |c| c.sell_capacity),
        delay_cost: a.delay_cost,
    };
    let report = optimal_profit(scenario).map_err(|e| match e {
        ExPostError::Replay(r) => {
            Failure::Runtime(anyhow!("{}: line {}: {r}", a.log.display(), event_line(r.index())))
        }
        other => Failure::Runtime(anyhow!("{}: {other}", a.log.display())),
    })?;
    if verbose > 0 {
        eprintln!(
            "{} opportunities, hindsight {:.1} vs logged {:.1}",
            report.opportunities.len(),
            report.total_profit,
            report.logged_total
        );
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join("opt.json"), &report)?;
    Ok(())
}

fn report_cmd(a: &ReportArgs, verbose: u8) -> Result<(), Failure> {
    let cells = load_cells(&a.cells)?;
    let grids = verdict_grids(&cells);
    let text = grids_text(&grids);
    if verbose > 0 {
        eprint!("{text}");
    }
    write_text(&a.out, "verdicts.csv", &grids_csv(&grids)?)?;
    write_text(&a.out, "verdicts.txt", &text)?;
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(name), text).with_context(|| format!("writing {name}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let v = cli.verbose;
    let result = match &cli.command {
        Command::Run(a) => run_cmd(a, v),
        Command::Compare(a) => compare_cmd(a, v),
        Command::Sweep(a) => sweep_cmd(a, v),
        Command::Opt(a) => opt_cmd(a, v),
        Command::Report(a) => report_cmd(a, v),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

//! Runs, cell comparisons and population sweeps, with their artifacts.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use cda_core::engine::Side;
use cda_core::expost::optimal_profit;
use cda_core::market::{run, ExperimentConfig, NominalRates, OfferOutcome, RunOutput, SellerGroup, SimError};
use cda_core::strategy::{PConfig, StrategySpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::log_io::{write_log, LogHeader};
use crate::stats::{welch_t_test, Better, WelchResult, DEFAULT_CONFIDENCE};

pub const SAMPLE_UNIT: &str = "per-offer profit of the target seller";
pub const OPT_MODEL: &str = "open-loop replay of the logged run, zone grid step 1, no delay charge";

/// Runs the market and fills in the wall-clock time.
pub fn run_timed(cfg: &ExperimentConfig, record_decisions: bool) -> Result<RunOutput, SimError> {
    let started = Instant::now();
    let mut out = run(cfg, record_decisions)?;
    out.metrics.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(out)
}

/// "FM5", "RM", "CP5", "P".
pub fn target_label(s: &StrategySpec) -> String {
    match s.markup() {
        Some(m) => format!("{}{m}", s.label()),
        None => s.label().to_string(),
    }
}

pub fn rate_label(r: &NominalRates) -> String {
    format!("{}/{}", round_rate(r.buy), round_rate(r.sell))
}

fn round_rate(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn accounting(cfg: &ExperimentConfig) -> String {
    if cfg.discount_delay {
        format!("surplus less {} per cycle waited", cfg.delay_cost)
    } else {
        "raw surplus".into()
    }
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().context("building the worker pool")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub accounting: String,
    pub warnings: Vec<String>,
    pub trades: usize,
    pub realized_rates: NominalRates,
    pub total_profit: f64,
    pub trade_surplus: i64,
    pub target: Option<TargetSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub agent: u32,
    pub strategy: String,
    pub offers: usize,
    pub matches: u64,
    pub profit: f64,
    pub profit_per_offer: f64,
}

pub fn summarize(cfg: &ExperimentConfig, out: &RunOutput) -> RunSummary {
    let m = &out.metrics;
    let target = cfg.target_id().and_then(|id| {
        let a = m.agent(id)?;
        let offers = m.offer_profits(id).len();
        Some(TargetSummary {
            agent: id,
            strategy: a.strategy.clone(),
            offers,
            matches: a.matches,
            profit: a.profit,
            profit_per_offer: if offers > 0 { a.profit / offers as f64 } else { 0.0 },
        })
    });
    RunSummary {
        config: cfg.clone(),
        accounting: accounting(cfg),
        warnings: cfg.warnings(),
        trades: m.trades.len(),
        realized_rates: m.realized_rates(),
        total_profit: m.total_profit(),
        trade_surplus: m.trade_surplus(),
        target,
    }
}

#[derive(Serialize)]
struct OfferRow {
    id: u64,
    agent: u32,
    side: Side,
    cycle: u64,
    value: i64,
    price: i64,
    status: &'static str,
    end_cycle: Option<u64>,
    clearing_price: Option<i64>,
    profit: f64,
}

/// Writes `events.jsonl`, `agents.csv`, `offers.csv`, `summary.json` and,
/// when decisions were recorded, `decisions.jsonl`. The wall clock is left
/// out so identical inputs give identical files.
pub fn write_run_artifacts(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_log(&dir.join("events.jsonl"), &LogHeader::new(Some(cfg.clone())), &out.events)?;

    let m = &out.metrics;
    let mut w = csv::Writer::from_path(dir.join("agents.csv"))?;
    for a in &m.agents {
        w.serialize(a)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("offers.csv"))?;
    for o in &m.offers {
        let (status, end_cycle, clearing_price) = match o.outcome {
            OfferOutcome::Open => ("open", None, None),
            OfferOutcome::Matched { cycle, price } => ("matched", Some(cycle), Some(price)),
            OfferOutcome::Bumped { cycle } => ("bumped", Some(cycle), None),
            OfferOutcome::Rejected => ("rejected", None, None),
            OfferOutcome::Withdrawn { cycle } => ("withdrawn", Some(cycle), None),
        };
        w.serialize(OfferRow {
            id: o.id,
            agent: o.agent,
            side: o.side,
            cycle: o.cycle,
            value: o.value,
            price: o.price,
            status,
            end_cycle,
            clearing_price,
            profit: o.profit(m.delay_cost, m.discount_delay),
        })?;
    }
    w.flush()?;

    write_json(&dir.join("summary.json"), &summarize(cfg, out))?;

    if !out.decisions.is_empty() {
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join("decisions.jsonl"))?);
        for d in &out.decisions {
            serde_json::to_writer(&mut f, d)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// The four sellers compared in every cell.
pub fn standard_targets() -> Vec<StrategySpec> {
    vec![
        StrategySpec::Fm { markup: 5 },
        StrategySpec::Rm,
        StrategySpec::Cp { markup: 5 },
        StrategySpec::P(PConfig::default()),
    ]
}

#[derive(Debug, Clone)]
pub struct CellSpec {
    /// Scenario with a target seller; its strategy is replaced per run.
    pub base: ExperimentConfig,
    pub targets: Vec<StrategySpec>,
    pub seeds: Vec<u64>,
    pub confidence: f64,
}

impl CellSpec {
    pub fn new(base: ExperimentConfig, seeds: Vec<u64>) -> Self {
        Self { base, targets: standard_targets(), seeds, confidence: DEFAULT_CONFIDENCE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRun {
    pub seed: u64,
    pub target: String,
    pub offers: usize,
    pub total_profit: f64,
    pub profit_per_offer: f64,
    pub opt_total: f64,
    pub opt_per_offer: f64,
    /// Realized profit over hindsight profit on the same log.
    pub normalized: Option<f64>,
    pub dominance_violations: usize,
    /// Opportunities where the hindsight profit fell below the logged one.
    pub below_logged: usize,
    pub offer_profits: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    P,
    Other,
    Unclear,
}

impl Winner {
    pub fn symbol(self) -> &'static str {
        match self {
            Winner::P => "P",
            Winner::Other => "other",
            Winner::Unclear => "?",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedVerdict {
    pub seed: u64,
    pub opponent: String,
    pub winner: Winner,
    /// `a` is P, `b` the opponent.
    pub test: WelchResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityVerdict {
    pub opponent: String,
    pub p_wins: usize,
    pub other_wins: usize,
    pub unclear: usize,
    pub winner: Winner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub zone: String,
    pub rates: String,
    pub cycles: u64,
    pub seeds: Vec<u64>,
    pub confidence: f64,
    pub sample_unit: String,
    pub accounting: String,
    pub opt_model: String,
    pub runs: Vec<TargetRun>,
    pub verdicts: Vec<SeedVerdict>,
    pub majority: Vec<MajorityVerdict>,
    /// Per seed, the target with the highest normalized profit per offer.
    pub best_normalized: Vec<(u64, String)>,
}

impl CellReport {
    pub fn run(&self, seed: u64, target: &str) -> Option<&TargetRun> {
        self.runs.iter().find(|r| r.seed == seed && r.target == target)
    }

    pub fn majority_against(&self, opponent: &str) -> Option<&MajorityVerdict> {
        self.majority.iter().find(|m| m.opponent == opponent)
    }
}

fn target_run(cfg: &ExperimentConfig) -> Result<TargetRun> {
    let label = target_label(&cfg.target.context("cell runs need a target seller")?.strategy);
    let out = run_timed(cfg, false).with_context(|| format!("{label} seed {}", cfg.seed))?;
    let tid = cfg.target_id().expect("target checked above");
    let offer_profits = out.metrics.offer_profits(tid);
    let scenario = cfg.opt_scenario(out.events).expect("target checked above");
    let opt = optimal_profit(scenario).with_context(|| format!("hindsight replay for {label} seed {}", cfg.seed))?;
    let below_logged = opt.opportunities.iter().filter(|o| o.profit < o.logged_profit).count();
    let offers = offer_profits.len();
    let total: f64 = offer_profits.iter().sum();
    let per = |x: f64| if offers > 0 { x / offers as f64 } else { 0.0 };
    Ok(TargetRun {
        seed: cfg.seed,
        target: label,
        offers,
        total_profit: total,
        profit_per_offer: per(total),
        opt_total: opt.total_profit,
        opt_per_offer: per(opt.total_profit),
        normalized: (opt.total_profit > 0.0).then(|| total / opt.total_profit),
        dominance_violations: opt.dominance_violations,
        below_logged,
        offer_profits,
    })
}

fn majority(votes: &[Winner]) -> Winner {
    let count = |w| votes.iter().filter(|&&v| v == w).count();
    [Winner::P, Winner::Other, Winner::Unclear]
        .into_iter()
        .find(|&w| 2 * count(w) > votes.len())
        .unwrap_or(Winner::Unclear)
}

/// Every (seed, target) run of a cell, the hindsight benchmark for each,
/// Welch tests of P against every other target per seed and the majority
/// verdict over seeds.
pub fn compare_cell(spec: &CellSpec, pool: &rayon::ThreadPool) -> Result<CellReport> {
    anyhow::ensure!(!spec.seeds.is_empty(), "a cell needs at least one seed");
    anyhow::ensure!(spec.base.target.is_some(), "a cell needs a target seller");
    let configs: Vec<ExperimentConfig> = spec
        .seeds
        .iter()
        .flat_map(|&seed| {
            spec.targets.iter().map(move |&strategy| {
                let mut c = spec.base.clone();
                c.seed = seed;
                c.target.as_mut().expect("checked").strategy = strategy;
                c
            })
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let runs: Vec<TargetRun> = pool.install(|| configs.par_iter().map(target_run).collect::<Result<_>>())?;

    let labels: Vec<String> = spec.targets.iter().map(target_label).collect();
    let p_label = labels.iter().find(|l| l.as_str() == "P").cloned();
    let find = |seed: u64, label: &str| runs.iter().find(|r| r.seed == seed && r.target == label).expect("ran");

    let mut verdicts = Vec::new();
    if let Some(p) = &p_label {
        for &seed in &spec.seeds {
            for other in labels.iter().filter(|l| *l != p) {
                let test = welch_t_test(&find(seed, p).offer_profits, &find(seed, other).offer_profits, spec.confidence)
                    .with_context(|| format!("P vs {other}, seed {seed}"))?;
                let winner = match test.better {
                    Better::A => Winner::P,
                    Better::B => Winner::Other,
                    Better::Indistinguishable => Winner::Unclear,
                };
                verdicts.push(SeedVerdict { seed, opponent: other.clone(), winner, test });
            }
        }
    }
    let majority = labels
        .iter()
        .filter(|l| Some(*l) != p_label.as_ref())
        .map(|other| {
            let votes: Vec<Winner> = verdicts.iter().filter(|v| &v.opponent == other).map(|v| v.winner).collect();
            let count = |w| votes.iter().filter(|&&v| v == w).count();
            MajorityVerdict {
                opponent: other.clone(),
                p_wins: count(Winner::P),
                other_wins: count(Winner::Other),
                unclear: count(Winner::Unclear),
                winner: majority(&votes),
            }
        })
        .collect();

    let best_normalized = spec
        .seeds
        .iter()
        .map(|&seed| {
            let best = labels
                .iter()
                .map(|l| find(seed, l))
                .max_by(|a, b| a.normalized.unwrap_or(0.0).total_cmp(&b.normalized.unwrap_or(0.0)))
                .map(|r| r.target.clone())
                .unwrap_or_default();
            (seed, best)
        })
        .collect();

    Ok(CellReport {
        zone: spec.base.zone.name(),
        rates: rate_label(&spec.base.derived_rates()),
        cycles: spec.base.cycles,
        seeds: spec.seeds.clone(),
        confidence: spec.confidence,
        sample_unit: SAMPLE_UNIT.into(),
        accounting: accounting(&spec.base),
        opt_model: OPT_MODEL.into(),
        runs,
        verdicts,
        majority,
        best_normalized,
    })
}

#[derive(Serialize)]
struct RunRow<'a> {
    seed: u64,
    target: &'a str,
    offers: usize,
    total_profit: f64,
    profit_per_offer: f64,
    opt_total: f64,
    opt_per_offer: f64,
    normalized: Option<f64>,
    dominance_violations: usize,
}

#[derive(Serialize)]
struct VerdictRow<'a> {
    seed: String,
    opponent: &'a str,
    verdict: &'static str,
    mean_diff: Option<f64>,
    lower: Option<f64>,
    upper: Option<f64>,
    dof: Option<f64>,
    n_p: Option<usize>,
    n_other: Option<usize>,
}

/// `cell.json`, `comparison.csv` (one row per run) and `verdicts.csv` (one
/// row per seed and opponent, then the majority rows).
pub fn write_cell_artifacts(dir: &Path, report: &CellReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("cell.json"), report)?;
    let mut w = csv::Writer::from_path(dir.join("comparison.csv"))?;
    for r in &report.runs {
        w.serialize(RunRow {
            seed: r.seed,
            target: &r.target,
            offers: r.offers,
            total_profit: r.total_profit,
            profit_per_offer: r.profit_per_offer,
            opt_total: r.opt_total,
            opt_per_offer: r.opt_per_offer,
            normalized: r.normalized,
            dominance_violations: r.dominance_violations,
        })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("verdicts.csv"))?;
    for v in &report.verdicts {
        w.serialize(VerdictRow {
            seed: v.seed.to_string(),
            opponent: &v.opponent,
            verdict: v.winner.symbol(),
            mean_diff: Some(v.test.mean_diff),
            lower: Some(v.test.interval.0),
            upper: Some(v.test.interval.1),
            dof: Some(v.test.dof),
            n_p: Some(v.test.n_a),
            n_other: Some(v.test.n_b),
        })?;
    }
    for m in &report.majority {
        w.serialize(VerdictRow {
            seed: "majority".into(),
            opponent: &m.opponent,
            verdict: m.winner.symbol(),
            mean_diff: None,
            lower: None,
            upper: None,
            dof: None,
            n_p: None,
            n_other: None,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Background seller counts at one point of the population sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixPoint {
    pub fm: u32,
    pub cp: u32,
    pub p: u32,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub fm: StrategySpec,
    pub cp: StrategySpec,
    pub p: StrategySpec,
    pub points: Vec<MixPoint>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// Background FM sellers as in `base` (true cost when `base` has none),
    /// CP with markup 0 and default p-sellers, along both edges leaving the
    /// all-FM corner.
    pub fn edges(base: ExperimentConfig, seeds: Vec<u64>) -> Self {
        let n: u32 = base.sellers.iter().map(|g| g.count).sum::<u32>().max(1);
        let fm = base
            .sellers
            .iter()
            .find(|g| matches!(g.strategy, StrategySpec::Fm { .. }))
            .map_or(StrategySpec::Fm { markup: 0 }, |g| g.strategy);
        let mut points: Vec<MixPoint> = (0..=n).map(|k| MixPoint { fm: n - k, cp: 0, p: k }).collect();
        points.extend((1..=n).map(|k| MixPoint { fm: n - k, cp: k, p: 0 }));
        Self { base, fm, cp: StrategySpec::Cp { markup: 0 }, p: StrategySpec::P(PConfig::default()), points, seeds }
    }

    pub fn config_at(&self, point: MixPoint, seed: u64) -> ExperimentConfig {
        let interval = self
            .base
            .sellers
            .first()
            .map(|g| g.offer_interval)
            .or(self.base.target.map(|t| t.offer_interval))
            .unwrap_or(self.base.buyers.offer_interval);
        let sellers = [(self.fm, point.fm), (self.cp, point.cp), (self.p, point.p)]
            .into_iter()
            .filter(|&(_, count)| count > 0)
            .map(|(strategy, count)| SellerGroup { strategy, count, offer_interval: interval })
            .collect();
        ExperimentConfig { sellers, seed, ..self.base.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fm: u32,
    pub cp: u32,
    pub p: u32,
    pub seed: u64,
    pub trades: usize,
    /// Σ buyers + Σ sellers.
    pub total_profit: f64,
    pub buyer_profit: f64,
    pub seller_profit: f64,
    pub target_profit: Option<f64>,
    pub target_offers: Option<usize>,
    /// Mean profit per background agent of each kind.
    pub fm_mean: Option<f64>,
    pub cp_mean: Option<f64>,
    pub p_mean: Option<f64>,
}

pub fn population_sweep(spec: &SweepSpec, pool: &rayon::ThreadPool) -> Result<Vec<SweepRow>> {
    anyhow::ensure!(!spec.seeds.is_empty(), "a sweep needs at least one seed");
    let jobs: Vec<(MixPoint, ExperimentConfig)> = spec
        .points
        .iter()
        .flat_map(|&pt| spec.seeds.iter().map(move |&s| (pt, spec.config_at(pt, s))))
        .collect();
    for (_, c) in &jobs {
        c.validate()?;
    }
    pool.install(|| {
        jobs.par_iter()
            .map(|(pt, cfg)| {
                let out = run_timed(cfg, false).with_context(|| format!("sweep point {pt:?} seed {}", cfg.seed))?;
                let m = &out.metrics;
                let side_total = |s: Side| m.agents.iter().filter(|a| a.side == s).map(|a| a.profit).sum::<f64>();
                let tid = cfg.target_id();
                let first_bg = cfg.buyers.count + u32::from(tid.is_some());
                let mut start = first_bg;
                let mut means = [None; 3];
                for (slot, count) in [pt.fm, pt.cp, pt.p].into_iter().enumerate() {
                    if count > 0 {
                        let sum: f64 = (start..start + count).map(|id| m.agents[id as usize].profit).sum();
                        means[slot] = Some(sum / count as f64);
                    }
                    start += count;
                }
                Ok(SweepRow {
                    fm: pt.fm,
                    cp: pt.cp,
                    p: pt.p,
                    seed: cfg.seed,
                    trades: m.trades.len(),
                    total_profit: m.total_profit(),
                    buyer_profit: side_total(Side::Buy),
                    seller_profit: side_total(Side::Sell),
                    target_profit: tid.and_then(|id| m.agent(id)).map(|a| a.profit),
                    target_offers: tid.map(|id| m.offer_profits(id).len()),
                    fm_mean: means[0],
                    cp_mean: means[1],
                    p_mean: means[2],
                })
            })
            .collect()
    })
}

pub fn write_sweep_artifacts(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("sweep.json"), &rows)?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

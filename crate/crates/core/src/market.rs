//! Agent-based market runs: offer timing, private values, strategy dispatch
//! and per-run accounting on top of the order book.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{RiskNeutral, UtilityCurve};
use crate::engine::{
    AgentId, ClearingRule, Cycle, EngineError, MarketEvent, Offer, OfferId, OrderBook, Price, Side, DEFAULT_CAPACITY,
};
use crate::expost::{PriceGrid, ReplayScenario};
use crate::ordering::PriceDistribution;
use crate::pstrategy::{
    best_offer, AuctionBelief, BeliefEstimator, BeliefPriors, DecisionCache, OfferDecision, PStrategyError,
    SellerContext, StandingCounts, DEFAULT_DELAY_COST,
};
use crate::strategy::{baseline_ask, Observation, PConfig, StrategySpec};

pub const DEFAULT_CYCLES: u64 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    /// Values and costs on [0, 20].
    Narrow,
    /// [0, 50].
    Medium,
    /// [0, 100].
    Wide,
    Custom { lower: Price, upper: Price },
}

impl Zone {
    pub fn bounds(&self) -> (Price, Price) {
        match *self {
            Zone::Narrow => (0, 20),
            Zone::Medium => (0, 50),
            Zone::Wide => (0, 100),
            Zone::Custom { lower, upper } => (lower, upper),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Zone::Narrow => "narrow".into(),
            Zone::Medium => "medium".into(),
            Zone::Wide => "wide".into(),
            Zone::Custom { lower, upper } => format!("custom[{lower},{upper}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuyerGroup {
    pub count: u32,
    pub offer_interval: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SellerGroup {
    pub strategy: StrategySpec,
    pub count: u32,
    pub offer_interval: u64,
}

/// The seller whose strategy an experiment varies. It always gets the first
/// seller id, so swapping its strategy leaves every other agent untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSeller {
    pub strategy: StrategySpec,
    pub offer_interval: u64,
}

/// Offers per cycle each side is meant to produce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalRates {
    pub buy: f64,
    pub sell: f64,
}

/// Largest accepted gap between a configured nominal rate and the rate the
/// offer intervals imply.
pub const RATE_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub zone: Zone,
    pub buyers: BuyerGroup,
    #[serde(default)]
    pub target: Option<TargetSeller>,
    #[serde(default)]
    pub sellers: Vec<SellerGroup>,
    #[serde(default = "default_cycles")]
    pub cycles: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clearing: ClearingRule,
    #[serde(default = "default_capacity")]
    pub buy_capacity: usize,
    #[serde(default = "default_capacity")]
    pub sell_capacity: usize,
    /// Cost per cycle of waiting, used by p-sellers and by discounted
    /// accounting.
    #[serde(default = "default_delay_cost")]
    pub delay_cost: f64,
    /// Charge `delay_cost` per cycle an offer waited before matching.
    #[serde(default)]
    pub discount_delay: bool,
    #[serde(default)]
    pub nominal_rates: Option<NominalRates>,
}

fn default_cycles() -> u64 {
    DEFAULT_CYCLES
}

fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}

fn default_delay_cost() -> f64 {
    DEFAULT_DELAY_COST
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn config_error(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), message: message.into() }
}

impl ExperimentConfig {
    /// Ten truthful buyers, nine true-cost background sellers and the
    /// target, with the given offer intervals.
    pub fn standard(zone: Zone, buyer_interval: u64, seller_interval: u64, target: StrategySpec) -> Self {
        Self {
            zone,
            buyers: BuyerGroup { count: 10, offer_interval: buyer_interval },
            target: Some(TargetSeller { strategy: target, offer_interval: seller_interval }),
            sellers: alloc::vec![SellerGroup {
                strategy: StrategySpec::Fm { markup: 0 },
                count: 9,
                offer_interval: seller_interval,
            }],
            cycles: DEFAULT_CYCLES,
            seed: 0,
            clearing: ClearingRule::SellerPrice,
            buy_capacity: DEFAULT_CAPACITY,
            sell_capacity: DEFAULT_CAPACITY,
            delay_cost: DEFAULT_DELAY_COST,
            discount_delay: false,
            nominal_rates: None,
        }
    }

    /// Offers per cycle implied by the intervals, Σ 2 / interval per side.
    pub fn derived_rates(&self) -> NominalRates {
        let rate = |count: u32, interval: u64| count as f64 * 2.0 / interval as f64;
        let mut sell: f64 = self.sellers.iter().map(|g| rate(g.count, g.offer_interval)).sum();
        if let Some(t) = &self.target {
            sell += rate(1, t.offer_interval);
        }
        NominalRates { buy: rate(self.buyers.count, self.buyers.offer_interval), sell }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let (lower, upper) = self.zone.bounds();
        if lower < 0 || upper <= lower {
            return Err(config_error("zone", "bounds must satisfy 0 <= lower < upper"));
        }
        if self.buyers.offer_interval == 0 {
            return Err(config_error("buyers.offer_interval", "must be at least 1"));
        }
        if let Some(t) = &self.target {
            if t.offer_interval == 0 {
                return Err(config_error("target.offer_interval", "must be at least 1"));
            }
            check_strategy(&t.strategy, "target.strategy")?;
        }
        for (i, g) in self.sellers.iter().enumerate() {
            if g.offer_interval == 0 {
                return Err(config_error(format!("sellers[{i}].offer_interval"), "must be at least 1"));
            }
            check_strategy(&g.strategy, &format!("sellers[{i}].strategy"))?;
        }
        if self.cycles == 0 {
            return Err(config_error("cycles", "must be at least 1"));
        }
        if self.buy_capacity == 0 {
            return Err(config_error("buy_capacity", "must be at least 1"));
        }
        if self.sell_capacity == 0 {
            return Err(config_error("sell_capacity", "must be at least 1"));
        }
        if !(self.delay_cost.is_finite() && self.delay_cost >= 0.0) {
            return Err(config_error("delay_cost", "must be finite and >= 0"));
        }
        if let Some(n) = &self.nominal_rates {
            let d = self.derived_rates();
            if (d.buy - n.buy).abs() > RATE_TOLERANCE {
                return Err(config_error(
                    "nominal_rates.buy",
                    format!("buyer intervals give {:.4} offers per cycle, not {}", d.buy, n.buy),
                ));
            }
            if (d.sell - n.sell).abs() > RATE_TOLERANCE {
                return Err(config_error(
                    "nominal_rates.sell",
                    format!("seller intervals give {:.4} offers per cycle, not {}", d.sell, n.sell),
                ));
            }
        }
        Ok(())
    }

    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        let has_p = self.target.iter().any(|t| matches!(t.strategy, StrategySpec::P(_)))
            || self.sellers.iter().any(|g| g.count > 0 && matches!(g.strategy, StrategySpec::P(_)));
        if has_p && self.clearing != ClearingRule::SellerPrice {
            w.push(String::from(
                "p-sellers value a sale at their own ask; with this clearing rule the realized price differs",
            ));
        }
        w
    }

    /// One entry per agent: buyers first, then the target, then the
    /// background sellers in group order. Agent ids are positions.
    pub fn roster(&self) -> Vec<AgentSetup> {
        let mut r = Vec::new();
        for _ in 0..self.buyers.count {
            r.push(AgentSetup::new(Side::Buy, StrategySpec::Truthful, self.buyers.offer_interval));
        }
        if let Some(t) = &self.target {
            r.push(AgentSetup::new(Side::Sell, t.strategy, t.offer_interval));
        }
        for g in &self.sellers {
            for _ in 0..g.count {
                r.push(AgentSetup::new(Side::Sell, g.strategy, g.offer_interval));
            }
        }
        r
    }

    pub fn target_id(&self) -> Option<AgentId> {
        self.target.as_ref().map(|_| self.buyers.count)
    }

    /// Hindsight scenario for the target over a run's log: zone grid, the
    /// run's book settings and no delay charge.
    pub fn opt_scenario(&self, events: Vec<MarketEvent>) -> Option<ReplayScenario> {
        let (lower, upper) = self.zone.bounds();
        Some(ReplayScenario {
            events,
            target: self.target_id()?,
            cost: None,
            grid: PriceGrid::new(lower, upper),
            clearing: self.clearing,
            buy_capacity: self.buy_capacity,
            sell_capacity: self.sell_capacity,
            delay_cost: 0.0,
        })
    }
}

fn check_strategy(s: &StrategySpec, field: &str) -> Result<(), ConfigError> {
    match *s {
        StrategySpec::Fm { markup } | StrategySpec::Cp { markup } if markup < 0 => {
            Err(config_error(format!("{field}.markup"), "must be >= 0"))
        }
        StrategySpec::Opt => Err(config_error(field, "opt is computed after a run and cannot trade")),
        StrategySpec::P(p) => {
            if p.window == 0 {
                return Err(config_error(format!("{field}.window"), "must be at least 1"));
            }
            if p.grid_step <= 0 {
                return Err(config_error(format!("{field}.grid_step"), "must be at least 1"));
            }
            if p.delay_cost.is_some_and(|c| !(c.is_finite() && c >= 0.0)) {
                return Err(config_error(format!("{field}.delay_cost"), "must be finite and >= 0"));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSetup {
    pub side: Side,
    pub strategy: StrategySpec,
    pub offer_interval: u64,
    /// Use this private value for every offer instead of drawing one.
    pub fixed_value: Option<Price>,
    /// Offer at this cycle first instead of a random one.
    pub first_offer: Option<Cycle>,
}

impl AgentSetup {
    pub fn new(side: Side, strategy: StrategySpec, offer_interval: u64) -> Self {
        Self { side, strategy, offer_interval, fixed_value: None, first_offer: None }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("agent {agent} at cycle {cycle}: {source}")]
    PStrategy { agent: AgentId, cycle: Cycle, source: PStrategyError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OfferOutcome {
    /// Still standing when the run ended.
    Open,
    Matched { cycle: Cycle, price: Price },
    Bumped { cycle: Cycle },
    Rejected,
    /// Replaced by the same agent's next offer.
    Withdrawn { cycle: Cycle },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfferRecord {
    pub id: OfferId,
    pub agent: AgentId,
    pub side: Side,
    pub cycle: Cycle,
    pub value: Price,
    pub price: Price,
    pub outcome: OfferOutcome,
}

impl OfferRecord {
    /// Surplus of a matched offer, less `delay_cost` per cycle waited when
    /// discounting; 0 otherwise.
    pub fn profit(&self, delay_cost: f64, discount: bool) -> f64 {
        let OfferOutcome::Matched { cycle, price } = self.outcome else {
            return 0.0;
        };
        let surplus = match self.side {
            Side::Buy => self.value - price,
            Side::Sell => price - self.value,
        } as f64;
        if discount {
            surplus - delay_cost * (cycle - self.cycle) as f64
        } else {
            surplus
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub cycle: Cycle,
    pub buy_offer: OfferId,
    pub sell_offer: OfferId,
    pub buyer: AgentId,
    pub seller: AgentId,
    pub price: Price,
    pub buyer_value: Price,
    pub seller_cost: Price,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub agent: AgentId,
    pub side: Side,
    pub strategy: String,
    pub offers: u64,
    pub matches: u64,
    /// Own offers displaced from a full queue.
    pub bumps: u64,
    pub rejections: u64,
    /// Raw surplus, `V - price` or `price - C`, over matched offers.
    pub surplus: i64,
    /// Surplus under the run's accounting (discounted when configured).
    pub profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub cycles: u64,
    pub target: Option<AgentId>,
    pub delay_cost: f64,
    pub discount_delay: bool,
    pub agents: Vec<AgentMetrics>,
    pub trades: Vec<TradeRecord>,
    /// Quote at the end of each cycle.
    pub quotes: Vec<Option<Price>>,
    pub offers: Vec<OfferRecord>,
    /// Filled in by callers that time the run.
    pub wall_clock_secs: f64,
}

impl RunMetrics {
    pub fn agent(&self, id: AgentId) -> Option<&AgentMetrics> {
        self.agents.get(id as usize)
    }

    pub fn total_profit(&self) -> f64 {
        self.agents.iter().map(|a| a.profit).sum()
    }

    pub fn total_surplus(&self) -> i64 {
        self.agents.iter().map(|a| a.surplus).sum()
    }

    /// Σ (V − C) over trades.
    pub fn trade_surplus(&self) -> i64 {
        self.trades.iter().map(|t| t.buyer_value - t.seller_cost).sum()
    }

    /// Profit of each of the agent's offers, in submission order.
    pub fn offer_profits(&self, agent: AgentId) -> Vec<f64> {
        self.offers
            .iter()
            .filter(|o| o.agent == agent)
            .map(|o| o.profit(self.delay_cost, self.discount_delay))
            .collect()
    }

    /// Submissions per cycle on each side.
    pub fn realized_rates(&self) -> NominalRates {
        let count = |s: Side| self.offers.iter().filter(|o| o.side == s).count() as f64 / self.cycles as f64;
        NominalRates { buy: count(Side::Buy), sell: count(Side::Sell) }
    }
}

/// A p-seller's view and choice at one offer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub cycle: Cycle,
    pub agent: AgentId,
    pub cost: Price,
    pub counts: StandingCounts,
    pub belief: AuctionBelief,
    /// `None` when no grid price let the chain absorb; the seller then asked
    /// its cost.
    pub decision: Option<OfferDecision>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub events: Vec<MarketEvent>,
    pub decisions: Vec<DecisionRecord>,
}

struct PSeller {
    config: PConfig,
    estimator: BeliefEstimator,
    cache: DecisionCache,
}

struct Agent {
    setup: AgentSetup,
    next_due: Cycle,
    values: ChaCha8Rng,
    timing: ChaCha8Rng,
    choices: ChaCha8Rng,
    p: Option<PSeller>,
    metrics: AgentMetrics,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// One market instance. Each agent owns independent random streams for its
/// values, its offer times and its strategy, so changing one agent's
/// strategy leaves every other agent's draws unchanged.
pub struct Market {
    lower: Price,
    upper: Price,
    clearing: ClearingRule,
    delay_cost: f64,
    discount: bool,
    seed: u64,
    target: Option<AgentId>,
    book: OrderBook,
    cycle: Cycle,
    agents: Vec<Agent>,
    order: ChaCha8Rng,
    events: Vec<MarketEvent>,
    offers: Vec<OfferRecord>,
    trades: Vec<TradeRecord>,
    quotes: Vec<Option<Price>>,
    decisions: Option<Vec<DecisionRecord>>,
    utility: Arc<dyn UtilityCurve + Send + Sync>,
}

impl Market {
    pub fn new(config: &ExperimentConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut m = Self::with_roster(config, &config.roster())?;
        m.target = config.target_id();
        Ok(m)
    }

    /// Market over an explicit roster; `config` supplies everything but
    /// the agents.
    pub fn with_roster(config: &ExperimentConfig, roster: &[AgentSetup]) -> Result<Self, SimError> {
        let (lower, upper) = config.zone.bounds();
        let seed = config.seed;
        let mut agents = Vec::with_capacity(roster.len());
        for (i, setup) in roster.iter().enumerate() {
            if setup.offer_interval == 0 {
                return Err(config_error(format!("agent {i}"), "offer interval must be at least 1").into());
            }
            let base = 1 + 3 * i as u64;
            let mut timing = stream(seed, base + 1);
            let first = timing.random_range(1..=setup.offer_interval);
            let id = i as AgentId;
            let p = match setup.strategy {
                StrategySpec::P(pc) => {
                    let priors = generator_priors(roster, i, lower, upper);
                    let estimator = if pc.oracle_belief {
                        BeliefEstimator::oracle(id, priors)
                    } else {
                        BeliefEstimator::new(id, pc.window, 0, priors)
                    };
                    Some(PSeller { config: pc, estimator, cache: DecisionCache::new() })
                }
                _ => None,
            };
            agents.push(Agent {
                setup: *setup,
                next_due: setup.first_offer.unwrap_or(first),
                values: stream(seed, base),
                timing,
                choices: stream(seed, base + 2),
                p,
                metrics: AgentMetrics {
                    agent: id,
                    side: setup.side,
                    strategy: setup.strategy.label().into(),
                    offers: 0,
                    matches: 0,
                    bumps: 0,
                    rejections: 0,
                    surplus: 0,
                    profit: 0.0,
                },
            });
        }
        Ok(Self {
            lower,
            upper,
            clearing: config.clearing,
            delay_cost: config.delay_cost,
            discount: config.discount_delay,
            seed,
            target: None,
            book: OrderBook::new(config.buy_capacity, config.sell_capacity)?,
            cycle: 0,
            agents,
            order: stream(seed, 0),
            events: Vec::new(),
            offers: Vec::new(),
            trades: Vec::new(),
            quotes: Vec::new(),
            decisions: None,
            utility: Arc::new(RiskNeutral),
        })
    }

    /// Keep every p-seller decision for later inspection.
    pub fn record_decisions(&mut self, on: bool) {
        self.decisions = if on { Some(self.decisions.take().unwrap_or_default()) } else { None };
    }

    pub fn cycle(&self) -> Cycle {
        self.cycle
    }

    pub fn book(&self) -> &OrderBook {
        &self.book
    }

    pub fn events(&self) -> &[MarketEvent] {
        &self.events
    }

    /// Runs one cycle: every agent due offers once, in a seeded random
    /// order, each offer fully processed before the next. Returns the
    /// cycle's events.
    pub fn advance_cycle(&mut self) -> Result<&[MarketEvent], SimError> {
        self.cycle += 1;
        let now = self.cycle;
        let start = self.events.len();
        let mut due: Vec<usize> = (0..self.agents.len()).filter(|&i| self.agents[i].next_due == now).collect();
        due.shuffle(&mut self.order);
        for i in due {
            self.act(i)?;
        }
        self.quotes.push(self.book.quote());
        Ok(&self.events[start..])
    }

    fn act(&mut self, i: usize) -> Result<(), SimError> {
        let now = self.cycle;
        let (lower, upper) = (self.lower, self.upper);
        let agent = &mut self.agents[i];
        let value = match agent.setup.fixed_value {
            Some(v) => v,
            None => agent.values.random_range(lower..=upper),
        };
        let gap = agent.timing.random_range(1..=agent.setup.offer_interval);
        agent.next_due = now + gap;
        let id = i as AgentId;
        let price = match agent.setup.side {
            Side::Buy => value,
            Side::Sell if agent.p.is_some() => self.p_ask(i, value)?,
            Side::Sell => {
                let obs = Observation {
                    cycle: now,
                    quote: self.book.quote(),
                    own_offer: self.book.standing_offer(id).copied(),
                    private_value: value,
                    zone_lower: lower,
                    zone_upper: upper,
                };
                baseline_ask(&agent.setup.strategy, &obs, &mut agent.choices).unwrap_or(value)
            }
        };
        let offer = Offer {
            id: self.offers.len() as OfferId + 1,
            agent: id,
            side: self.agents[i].setup.side,
            price,
            cycle: now,
        };
        let (_, events) = self.book.replace(id, offer, Some(value), self.clearing)?;
        for e in &events {
            self.account(e);
            for a in &mut self.agents {
                if let Some(p) = &mut a.p {
                    p.estimator.observe(e);
                }
            }
        }
        self.events.extend(events);
        Ok(())
    }

    fn p_ask(&mut self, i: usize, cost: Price) -> Result<Price, SimError> {
        let now = self.cycle;
        let id = i as AgentId;
        let quote = self.book.quote();
        let counts = StandingCounts {
            nb: self.book.buys().len(),
            ns: self.book.sells().iter().filter(|o| o.agent != id).count(),
        };
        let (cb, cs) = (self.book.buy_capacity(), self.book.sell_capacity());
        let upper = self.upper;
        let run_delay = self.delay_cost;
        let utility = self.utility.clone();
        let p = self.agents[i].p.as_mut().expect("p-seller state");
        let belief = p.estimator.estimate(now, quote);
        let ctx = SellerContext {
            cost,
            delay_cost: p.config.delay_cost.unwrap_or(run_delay),
            utility,
            grid_upper: upper,
            grid_step: p.config.grid_step,
            buy_capacity: cb,
            sell_capacity: cs,
        };
        let (price, decision) = match best_offer(&belief, &ctx, counts, &mut p.cache) {
            Ok(d) => (d.price, Some(d)),
            Err(PStrategyError::NoFeasiblePrice) => (cost, None),
            Err(source) => return Err(SimError::PStrategy { agent: id, cycle: now, source }),
        };
        if let Some(log) = &mut self.decisions {
            log.push(DecisionRecord { cycle: now, agent: id, cost, counts, belief, decision });
        }
        Ok(price)
    }

    fn account(&mut self, e: &MarketEvent) {
        let (c, discount) = (self.delay_cost, self.discount);
        match *e {
            MarketEvent::Submitted { cycle, offer, value } => {
                self.agents[offer.agent as usize].metrics.offers += 1;
                self.offers.push(OfferRecord {
                    id: offer.id,
                    agent: offer.agent,
                    side: offer.side,
                    cycle,
                    value: value.unwrap_or(offer.price),
                    price: offer.price,
                    outcome: OfferOutcome::Open,
                });
            }
            MarketEvent::Replaced { cycle, withdrawn, .. } => {
                self.offers[withdrawn.id as usize - 1].outcome = OfferOutcome::Withdrawn { cycle };
            }
            MarketEvent::Matched { cycle, trade } => {
                let mut values = [0; 2];
                for (k, o) in [trade.buy, trade.sell].into_iter().enumerate() {
                    let rec = &mut self.offers[o.id as usize - 1];
                    rec.outcome = OfferOutcome::Matched { cycle, price: trade.price };
                    values[k] = rec.value;
                    let profit = rec.profit(c, discount);
                    let m = &mut self.agents[o.agent as usize].metrics;
                    m.matches += 1;
                    m.profit += profit;
                    m.surplus += match o.side {
                        Side::Buy => rec.value - trade.price,
                        Side::Sell => trade.price - rec.value,
                    };
                }
                self.trades.push(TradeRecord {
                    cycle,
                    buy_offer: trade.buy.id,
                    sell_offer: trade.sell.id,
                    buyer: trade.buy.agent,
                    seller: trade.sell.agent,
                    price: trade.price,
                    buyer_value: values[0],
                    seller_cost: values[1],
                });
            }
            MarketEvent::Bumped { cycle, victim, .. } => {
                self.offers[victim.id as usize - 1].outcome = OfferOutcome::Bumped { cycle };
                self.agents[victim.agent as usize].metrics.bumps += 1;
            }
            MarketEvent::Rejected { offer, .. } => {
                let rec = &mut self.offers[offer as usize - 1];
                rec.outcome = OfferOutcome::Rejected;
                self.agents[rec.agent as usize].metrics.rejections += 1;
            }
            MarketEvent::Stood { .. } | MarketEvent::QuoteChanged { .. } => {}
        }
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            metrics: RunMetrics {
                seed: self.seed,
                cycles: self.cycle,
                target: self.target,
                delay_cost: self.delay_cost,
                discount_delay: self.discount,
                agents: self.agents.into_iter().map(|a| a.metrics).collect(),
                trades: self.trades,
                quotes: self.quotes,
                offers: self.offers,
                wall_clock_secs: 0.0,
            },
            events: self.events,
            decisions: self.decisions.unwrap_or_default(),
        }
    }
}

/// Arrival rates and zone-uniform prices of everyone but agent `me`; the
/// p-seller's prior, and its whole belief in oracle mode.
fn generator_priors(roster: &[AgentSetup], me: usize, lower: Price, upper: Price) -> BeliefPriors {
    let mut p_buy = 0.0;
    let mut p_sell = 0.0;
    for (i, a) in roster.iter().enumerate() {
        if i == me {
            continue;
        }
        // gaps uniform on 1..=interval have mean (interval + 1) / 2
        let rate = 2.0 / (a.offer_interval as f64 + 1.0);
        match a.side {
            Side::Buy => p_buy += rate,
            Side::Sell => p_sell += rate,
        }
    }
    let total = p_buy + p_sell;
    if total > 1.0 {
        p_buy /= total;
        p_sell /= total;
    }
    let d = PriceDistribution::uniform(lower as f64 - 0.5, upper as f64 + 0.5)
        .expect("zone bounds are validated");
    BeliefPriors { p_buy, p_sell, buy_dist: d, sell_dist: d }
}

/// Runs `config.cycles` cycles.
pub fn run(config: &ExperimentConfig, record_decisions: bool) -> Result<RunOutput, SimError> {
    let mut m = Market::new(config)?;
    m.record_decisions(record_decisions);
    for _ in 0..config.cycles {
        m.advance_cycle()?;
    }
    Ok(m.finish())
}

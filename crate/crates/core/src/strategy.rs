//! Baseline bidding strategies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Cycle, Offer, Price};
use crate::pstrategy::DEFAULT_BELIEF_WINDOW;

/// What a baseline strategy sees when it is due to offer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub cycle: Cycle,
    pub quote: Option<Price>,
    pub own_offer: Option<Offer>,
    /// Cost for sellers, valuation for buyers.
    pub private_value: Price,
    pub zone_lower: Price,
    pub zone_upper: Price,
}

/// Settings of a p-strategy seller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PConfig {
    /// Delay cost per clearing interval; the run's delay cost when absent.
    #[serde(default)]
    pub delay_cost: Option<f64>,
    #[serde(default = "default_window")]
    pub window: u64,
    /// Use the true generator parameters instead of estimating them.
    #[serde(default)]
    pub oracle_belief: bool,
    #[serde(default = "default_step")]
    pub grid_step: Price,
}

fn default_window() -> u64 {
    DEFAULT_BELIEF_WINDOW
}

fn default_step() -> Price {
    1
}

impl Default for PConfig {
    fn default() -> Self {
        Self { delay_cost: None, window: DEFAULT_BELIEF_WINDOW, oracle_belief: false, grid_step: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StrategySpec {
    /// Cost plus a fixed markup.
    Fm { markup: Price },
    /// Uniform integer between cost and the zone's upper bound.
    Rm,
    /// The quote when it beats cost, else cost plus markup.
    Cp { markup: Price },
    /// The private value itself.
    Truthful,
    P(PConfig),
    /// Ex-post benchmark, computed from a finished run's log.
    Opt,
}

impl StrategySpec {
    pub fn label(&self) -> &'static str {
        match self {
            StrategySpec::Fm { .. } => "FM",
            StrategySpec::Rm => "RM",
            StrategySpec::Cp { .. } => "CP",
            StrategySpec::Truthful => "TT",
            StrategySpec::P(_) => "P",
            StrategySpec::Opt => "OPT",
        }
    }

    pub fn markup(&self) -> Option<Price> {
        match *self {
            StrategySpec::Fm { markup } | StrategySpec::Cp { markup } => Some(markup),
            _ => None,
        }
    }
}

pub fn fm_price(cost: Price, markup: Price) -> Price {
    cost + markup
}

/// Budget-constrained random ask: never below cost.
pub fn rm_price<R: Rng + ?Sized>(cost: Price, zone_upper: Price, rng: &mut R) -> Price {
    if cost >= zone_upper {
        return cost;
    }
    rng.random_range(cost..=zone_upper)
}

pub fn cp_price(cost: Price, quote: Option<Price>, markup: Price) -> Price {
    match quote {
        Some(q) if q > cost => q,
        _ => fm_price(cost, markup),
    }
}

pub fn truthful_price(private_value: Price) -> Price {
    private_value
}

/// Seller ask for a baseline strategy; `None` for strategies that need more
/// than an observation (P, OPT).
pub fn baseline_ask<R: Rng + ?Sized>(spec: &StrategySpec, obs: &Observation, rng: &mut R) -> Option<Price> {
    let c = obs.private_value;
    Some(match *spec {
        StrategySpec::Fm { markup } => fm_price(c, markup),
        StrategySpec::Rm => rm_price(c, obs.zone_upper, rng),
        StrategySpec::Cp { markup } => cp_price(c, obs.quote, markup),
        StrategySpec::Truthful => truthful_price(c),
        StrategySpec::P(_) | StrategySpec::Opt => return None,
    })
}

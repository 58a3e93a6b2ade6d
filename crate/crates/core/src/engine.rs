//! Continuous double auction order book.
//!
//! Each side is a bounded queue kept best-first: sells by ascending price,
//! buys by descending price, first-in first-out among equal prices. An
//! incoming offer that crosses the opposite best trades with it at once;
//! otherwise it stands, displacing the least competitive offer of a full
//! queue only if it is strictly better. Every operation appends to an event
//! log that [`replay`] can re-execute and verify.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prices are integer minor currency units.
pub type Price = i64;
pub type AgentId = u32;
pub type OfferId = u64;
pub type Cycle = u64;

pub const DEFAULT_CAPACITY: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("offer {id} has negative price {price}")]
    NegativePrice { id: OfferId, price: Price },
    #[error("agent {agent} already has a standing offer")]
    DuplicateStanding { agent: AgentId },
    #[error("offer {id} is already in the book")]
    DuplicateId { id: OfferId },
    #[error("offer belongs to agent {offer_agent}, not {agent}")]
    AgentMismatch { agent: AgentId, offer_agent: AgentId },
    #[error("bid {bid} is below ask {ask}")]
    NotCrossing { bid: Price, ask: Price },
    #[error("capacities must be at least 1")]
    ZeroCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offer {
    pub id: OfferId,
    pub agent: AgentId,
    pub side: Side,
    pub price: Price,
    pub cycle: Cycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub buy: Offer,
    pub sell: Offer,
    pub price: Price,
    pub cycle: Cycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClearingRule {
    #[default]
    SellerPrice,
    BuyerPrice,
    Midpoint,
}

/// Transaction price of a crossing pair. Midpoint rounds half up.
pub fn clearing_price(bid: Price, ask: Price, rule: ClearingRule) -> Result<Price, EngineError> {
    if bid < ask {
        return Err(EngineError::NotCrossing { bid, ask });
    }
    Ok(match rule {
        ClearingRule::SellerPrice => ask,
        ClearingRule::BuyerPrice => bid,
        ClearingRule::Midpoint => (bid + ask + 1).div_euclid(2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum SubmitOutcome {
    Matched { trade: Trade },
    Stood,
    Bumped { victim: Offer },
    Rejected,
}

/// One entry of the append-only market log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MarketEvent {
    /// `value` is the submitter's private cost or valuation, when known.
    Submitted { cycle: Cycle, offer: Offer, value: Option<Price> },
    Replaced { cycle: Cycle, agent: AgentId, withdrawn: Offer },
    Matched { cycle: Cycle, trade: Trade },
    Stood { cycle: Cycle, offer: OfferId },
    Bumped { cycle: Cycle, offer: OfferId, victim: Offer },
    Rejected { cycle: Cycle, offer: OfferId },
    QuoteChanged { cycle: Cycle, quote: Option<Price> },
}

impl MarketEvent {
    pub fn cycle(&self) -> Cycle {
        match *self {
            MarketEvent::Submitted { cycle, .. }
            | MarketEvent::Replaced { cycle, .. }
            | MarketEvent::Matched { cycle, .. }
            | MarketEvent::Stood { cycle, .. }
            | MarketEvent::Bumped { cycle, .. }
            | MarketEvent::Rejected { cycle, .. }
            | MarketEvent::QuoteChanged { cycle, .. } => cycle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderBook {
    buys: Vec<Offer>,
    sells: Vec<Offer>,
    buy_capacity: usize,
    sell_capacity: usize,
}

impl Default for OrderBook {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY, DEFAULT_CAPACITY).unwrap()
    }
}

impl OrderBook {
    pub fn new(buy_capacity: usize, sell_capacity: usize) -> Result<Self, EngineError> {
        if buy_capacity == 0 || sell_capacity == 0 {
            return Err(EngineError::ZeroCapacity);
        }
        Ok(Self { buys: Vec::new(), sells: Vec::new(), buy_capacity, sell_capacity })
    }

    /// Standing buys, best (highest) first.
    pub fn buys(&self) -> &[Offer] {
        &self.buys
    }

    /// Standing sells, best (lowest) first.
    pub fn sells(&self) -> &[Offer] {
        &self.sells
    }

    pub fn buy_capacity(&self) -> usize {
        self.buy_capacity
    }

    pub fn sell_capacity(&self) -> usize {
        self.sell_capacity
    }

    /// Highest standing buy price.
    pub fn quote(&self) -> Option<Price> {
        self.buys.first().map(|o| o.price)
    }

    pub fn best_ask(&self) -> Option<Price> {
        self.sells.first().map(|o| o.price)
    }

    pub fn standing_offer(&self, agent: AgentId) -> Option<&Offer> {
        self.buys.iter().chain(&self.sells).find(|o| o.agent == agent)
    }

    pub fn contains(&self, id: OfferId) -> bool {
        self.buys.iter().chain(&self.sells).any(|o| o.id == id)
    }

    /// Removes and returns the agent's standing offer.
    pub fn withdraw(&mut self, agent: AgentId) -> Option<Offer> {
        for q in [&mut self.buys, &mut self.sells] {
            if let Some(i) = q.iter().position(|o| o.agent == agent) {
                return Some(q.remove(i));
            }
        }
        None
    }

    /// Processes a new offer from an agent with nothing standing.
    pub fn submit(
        &mut self,
        offer: Offer,
        value: Option<Price>,
        rule: ClearingRule,
    ) -> Result<(SubmitOutcome, Vec<MarketEvent>), EngineError> {
        if self.standing_offer(offer.agent).is_some() {
            return Err(EngineError::DuplicateStanding { agent: offer.agent });
        }
        let mut events = Vec::with_capacity(3);
        let before = self.quote();
        let outcome = self.process(offer, value, rule, &mut events)?;
        self.note_quote(before, offer.cycle, &mut events);
        Ok((outcome, events))
    }

    /// Withdraws the agent's standing offer, if any, then submits.
    pub fn replace(
        &mut self,
        agent: AgentId,
        offer: Offer,
        value: Option<Price>,
        rule: ClearingRule,
    ) -> Result<(SubmitOutcome, Vec<MarketEvent>), EngineError> {
        if offer.agent != agent {
            return Err(EngineError::AgentMismatch { agent, offer_agent: offer.agent });
        }
        check_offer(&offer)?;
        let mut events = Vec::with_capacity(4);
        let before = self.quote();
        if let Some(withdrawn) = self.withdraw(agent) {
            events.push(MarketEvent::Replaced { cycle: offer.cycle, agent, withdrawn });
        }
        let outcome = self.process(offer, value, rule, &mut events)?;
        self.note_quote(before, offer.cycle, &mut events);
        Ok((outcome, events))
    }

    fn note_quote(&self, before: Option<Price>, cycle: Cycle, events: &mut Vec<MarketEvent>) {
        let after = self.quote();
        if after != before {
            events.push(MarketEvent::QuoteChanged { cycle, quote: after });
        }
    }

    fn process(
        &mut self,
        offer: Offer,
        value: Option<Price>,
        rule: ClearingRule,
        events: &mut Vec<MarketEvent>,
    ) -> Result<SubmitOutcome, EngineError> {
        check_offer(&offer)?;
        if self.contains(offer.id) {
            return Err(EngineError::DuplicateId { id: offer.id });
        }
        let cycle = offer.cycle;
        events.push(MarketEvent::Submitted { cycle, offer, value });
        let (own, other, cap) = match offer.side {
            Side::Buy => (&mut self.buys, &mut self.sells, self.buy_capacity),
            Side::Sell => (&mut self.sells, &mut self.buys, self.sell_capacity),
        };
        let better = |a: Price, b: Price| match offer.side {
            Side::Buy => a > b,
            Side::Sell => a < b,
        };
        if let Some(best) = other.first() {
            let crosses = match offer.side {
                Side::Buy => offer.price >= best.price,
                Side::Sell => offer.price <= best.price,
            };
            if crosses {
                let resting = other.remove(0);
                let (buy, sell) = match offer.side {
                    Side::Buy => (offer, resting),
                    Side::Sell => (resting, offer),
                };
                let trade = Trade { buy, sell, price: clearing_price(buy.price, sell.price, rule)?, cycle };
                events.push(MarketEvent::Matched { cycle, trade });
                return Ok(SubmitOutcome::Matched { trade });
            }
        }
        let pos = own.partition_point(|o| !better(offer.price, o.price));
        if own.len() < cap {
            own.insert(pos, offer);
            events.push(MarketEvent::Stood { cycle, offer: offer.id });
            return Ok(SubmitOutcome::Stood);
        }
        let worst = own[own.len() - 1];
        if better(offer.price, worst.price) {
            own.pop();
            own.insert(pos, offer);
            events.push(MarketEvent::Bumped { cycle, offer: offer.id, victim: worst });
            Ok(SubmitOutcome::Bumped { victim: worst })
        } else {
            events.push(MarketEvent::Rejected { cycle, offer: offer.id });
            Ok(SubmitOutcome::Rejected)
        }
    }

    /// Checks ordering, capacity, no-crossing and one-offer-per-agent.
    pub fn audit(&self) -> Result<(), &'static str> {
        if self.buys.len() > self.buy_capacity || self.sells.len() > self.sell_capacity {
            return Err("queue over capacity");
        }
        if !self.buys.windows(2).all(|w| w[0].price >= w[1].price) {
            return Err("buys not best-first");
        }
        if !self.sells.windows(2).all(|w| w[0].price <= w[1].price) {
            return Err("sells not best-first");
        }
        if self.buys.iter().any(|o| o.side != Side::Buy) || self.sells.iter().any(|o| o.side != Side::Sell) {
            return Err("offer on wrong side");
        }
        if let (Some(b), Some(s)) = (self.quote(), self.best_ask()) {
            if b >= s {
                return Err("book is crossed");
            }
        }
        let all: Vec<&Offer> = self.buys.iter().chain(&self.sells).collect();
        for (i, a) in all.iter().enumerate() {
            if all[i + 1..].iter().any(|b| b.agent == a.agent) {
                return Err("agent has two standing offers");
            }
        }
        Ok(())
    }
}

fn check_offer(offer: &Offer) -> Result<(), EngineError> {
    if offer.price < 0 {
        return Err(EngineError::NegativePrice { id: offer.id, price: offer.price });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("event {index}: {source}")]
    Engine { index: usize, source: EngineError },
    #[error("event {index}: log does not match re-execution")]
    Mismatch { index: usize },
    #[error("event {index}: expected a submission")]
    Unexpected { index: usize },
}

impl ReplayError {
    pub fn index(&self) -> usize {
        match *self {
            ReplayError::Engine { index, .. }
            | ReplayError::Mismatch { index }
            | ReplayError::Unexpected { index } => index,
        }
    }
}

/// Re-executes every submission in `log` against a fresh book and checks
/// that the regenerated events equal the recorded ones.
pub fn replay(
    log: &[MarketEvent],
    buy_capacity: usize,
    sell_capacity: usize,
    rule: ClearingRule,
) -> Result<OrderBook, ReplayError> {
    let mut book = OrderBook::new(buy_capacity, sell_capacity)
        .map_err(|source| ReplayError::Engine { index: 0, source })?;
    let mut i = 0;
    while i < log.len() {
        let start = i;
        if let MarketEvent::Replaced { .. } = log[i] {
            i += 1;
        }
        let Some(MarketEvent::Submitted { offer, value, .. }) = log.get(i) else {
            return Err(ReplayError::Unexpected { index: i });
        };
        let (_, events) = book
            .replace(offer.agent, *offer, *value, rule)
            .map_err(|source| ReplayError::Engine { index: i, source })?;
        for (k, e) in events.iter().enumerate() {
            if log.get(start + k) != Some(e) {
                return Err(ReplayError::Mismatch { index: start + k });
            }
        }
        i = start + events.len();
    }
    Ok(book)
}

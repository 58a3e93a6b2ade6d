//! Hindsight benchmark: at each of one agent's offers, the price that would
//! have earned the most given everything that happened until its next offer.
//!
//! Counterfactuals are open loop. Other agents' recorded offers are
//! resubmitted verbatim, even where a different price from the target would
//! have changed what a reactive agent did.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    AgentId, ClearingRule, Cycle, EngineError, MarketEvent, Offer, OrderBook, Price, ReplayError, Side,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExPostError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("opportunity {index} out of range ({count} recorded)")]
    OutOfRange { index: usize, count: usize },
    #[error("price grid needs lower <= upper and a positive step")]
    Grid,
    #[error("delay cost must be finite and >= 0")]
    DelayCost,
    #[error("counterfactual replay failed: {0}")]
    Engine(#[from] EngineError),
}

/// Candidate prices: for a seller `cost, cost + step, …` up to `upper`; for
/// a buyer `lower, lower + step, …` up to its valuation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceGrid {
    pub lower: Price,
    pub upper: Price,
    pub step: Price,
}

impl PriceGrid {
    pub fn new(lower: Price, upper: Price) -> Self {
        Self { lower, upper, step: 1 }
    }

    fn validate(&self) -> Result<(), ExPostError> {
        if self.lower > self.upper || self.step <= 0 {
            return Err(ExPostError::Grid);
        }
        Ok(())
    }

    /// Prices an agent with private value `value` may offer without loss.
    pub fn candidates(&self, side: Side, value: Price) -> Vec<Price> {
        let step = self.step as usize;
        match side {
            Side::Sell if value > self.upper => alloc::vec![value],
            Side::Sell => (value.max(self.lower)..=self.upper).step_by(step).collect(),
            Side::Buy => (self.lower..=value.min(self.upper)).step_by(step).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayScenario {
    pub events: Vec<MarketEvent>,
    pub target: AgentId,
    /// Private value to use at every opportunity; the logged one otherwise.
    pub cost: Option<Price>,
    pub grid: PriceGrid,
    pub clearing: ClearingRule,
    pub buy_capacity: usize,
    pub sell_capacity: usize,
    /// Charged per cycle waited (or, on failure, per cycle of the window).
    pub delay_cost: f64,
}

/// One offer of the target as logged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opportunity {
    pub cycle: Cycle,
    pub offer: Offer,
    pub value: Price,
    /// Cycle of the target's next offer, or of the last logged event.
    pub window_end: Cycle,
}

/// One submission (with its optional replacement) in the log.
#[derive(Debug, Clone, Copy)]
struct Group {
    offer: Offer,
    value: Option<Price>,
}

/// A scenario checked against the log and cut into windows.
#[derive(Debug, Clone)]
pub struct Replay {
    scenario: ReplayScenario,
    opportunities: Vec<Opportunity>,
    /// Book just before each opportunity.
    books: Vec<OrderBook>,
    /// Exogenous submissions inside each window.
    windows: Vec<Vec<Group>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub profit: f64,
    /// Cycle and clearing price of the match, if the offer matched.
    pub matched: Option<(Cycle, Price)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpportunityResult {
    pub index: usize,
    pub cycle: Cycle,
    pub value: Price,
    pub chosen_price: Price,
    pub profit: f64,
    pub logged_price: Price,
    pub logged_profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptReport {
    pub target: AgentId,
    pub delay_cost: f64,
    pub clearing: ClearingRule,
    pub grid: PriceGrid,
    pub open_loop: bool,
    pub total_profit: f64,
    pub logged_total: f64,
    /// Opportunities where the logged price beat every grid price (possible
    /// only when the logged price lies off the grid).
    pub dominance_violations: usize,
    pub opportunities: Vec<OpportunityResult>,
}

impl Replay {
    /// Re-executes the log, checking every recorded event, and records the
    /// book at each of the target's offers.
    pub fn new(scenario: ReplayScenario) -> Result<Self, ExPostError> {
        scenario.grid.validate()?;
        if !(scenario.delay_cost.is_finite() && scenario.delay_cost >= 0.0) {
            return Err(ExPostError::DelayCost);
        }
        let log = &scenario.events;
        let mut book = OrderBook::new(scenario.buy_capacity, scenario.sell_capacity)
            .map_err(|source| ReplayError::Engine { index: 0, source })?;
        let mut opportunities: Vec<Opportunity> = Vec::new();
        let mut books = Vec::new();
        let mut windows: Vec<Vec<Group>> = Vec::new();
        let mut i = 0;
        while i < log.len() {
            let start = i;
            if let MarketEvent::Replaced { .. } = log[i] {
                i += 1;
            }
            let Some(&MarketEvent::Submitted { offer, value, .. }) = log.get(i) else {
                return Err(ReplayError::Unexpected { index: i }.into());
            };
            let before = (offer.agent == scenario.target).then(|| book.clone());
            let (_, events) = book
                .replace(offer.agent, offer, value, scenario.clearing)
                .map_err(|source| ReplayError::Engine { index: i, source })?;
            for (k, e) in events.iter().enumerate() {
                if log.get(start + k) != Some(e) {
                    return Err(ReplayError::Mismatch { index: start + k }.into());
                }
            }
            i = start + events.len();
            if let Some(b) = before {
                if let Some(prev) = opportunities.last_mut() {
                    prev.window_end = offer.cycle;
                }
                opportunities.push(Opportunity {
                    cycle: offer.cycle,
                    offer,
                    value: scenario.cost.or(value).unwrap_or(offer.price),
                    window_end: offer.cycle,
                });
                books.push(b);
                windows.push(Vec::new());
            } else if let Some(w) = windows.last_mut() {
                w.push(Group { offer, value });
            }
        }
        if let (Some(last), Some(e)) = (opportunities.last_mut(), log.last()) {
            last.window_end = e.cycle();
        }
        Ok(Self { scenario, opportunities, books, windows })
    }

    pub fn scenario(&self) -> &ReplayScenario {
        &self.scenario
    }

    pub fn opportunities(&self) -> &[Opportunity] {
        &self.opportunities
    }

    fn opportunity(&self, k: usize) -> Result<&Opportunity, ExPostError> {
        self.opportunities.get(k).ok_or(ExPostError::OutOfRange { index: k, count: self.opportunities.len() })
    }

    /// Profit of the target's `k`-th offer had it been made at `price`.
    pub fn counterfactual_window(&self, k: usize, price: Price) -> Result<WindowResult, ExPostError> {
        let opp = *self.opportunity(k)?;
        let sc = &self.scenario;
        let c = sc.delay_cost;
        let mine = Offer { price, ..opp.offer };
        let settle = |trade_price: Price, cycle: Cycle| {
            let surplus = match mine.side {
                Side::Sell => trade_price - opp.value,
                Side::Buy => opp.value - trade_price,
            } as f64;
            WindowResult { profit: surplus - c * (cycle - opp.cycle) as f64, matched: Some((cycle, trade_price)) }
        };
        let failed = WindowResult { profit: -c * (opp.window_end - opp.cycle) as f64, matched: None };
        let mut book = self.books[k].clone();
        let (_, events) = book.replace(mine.agent, mine, Some(opp.value), sc.clearing)?;
        if let Some(r) = resolve(&events, mine, &settle) {
            return Ok(r.unwrap_or(failed));
        }
        for g in &self.windows[k] {
            let (_, events) = book.replace(g.offer.agent, g.offer, g.value, sc.clearing)?;
            if let Some(r) = resolve(&events, mine, &settle) {
                return Ok(r.unwrap_or(failed));
            }
        }
        Ok(failed)
    }

    /// Best grid price at opportunity `k` (ties to the lower price) and the
    /// logged price's result.
    pub fn evaluate(&self, k: usize) -> Result<OpportunityResult, ExPostError> {
        let opp = *self.opportunity(k)?;
        let mut best: Option<(Price, f64)> = None;
        for p in self.scenario.grid.candidates(opp.offer.side, opp.value) {
            let r = self.counterfactual_window(k, p)?;
            if best.is_none_or(|(_, v)| r.profit > v) {
                best = Some((p, r.profit));
            }
        }
        let logged = self.counterfactual_window(k, opp.offer.price)?;
        let (chosen_price, profit) = best.expect("candidate set is never empty");
        Ok(OpportunityResult {
            index: k,
            cycle: opp.cycle,
            value: opp.value,
            chosen_price,
            profit,
            logged_price: opp.offer.price,
            logged_profit: logged.profit,
        })
    }

    pub fn report(&self, results: Vec<OpportunityResult>) -> OptReport {
        let sc = &self.scenario;
        OptReport {
            target: sc.target,
            delay_cost: sc.delay_cost,
            clearing: sc.clearing,
            grid: sc.grid,
            open_loop: true,
            total_profit: results.iter().map(|r| r.profit).sum(),
            logged_total: results.iter().map(|r| r.logged_profit).sum(),
            dominance_violations: results.iter().filter(|r| r.profit < r.logged_profit).count(),
            opportunities: results,
        }
    }
}

/// `Some(Some(_))` on a match, `Some(None)` once the offer is out of the
/// book unmatched, `None` while it stands.
fn resolve(
    events: &[MarketEvent],
    mine: Offer,
    settle: &impl Fn(Price, Cycle) -> WindowResult,
) -> Option<Option<WindowResult>> {
    for e in events {
        match *e {
            MarketEvent::Matched { cycle, trade } if trade.buy.id == mine.id || trade.sell.id == mine.id => {
                return Some(Some(settle(trade.price, cycle)));
            }
            MarketEvent::Bumped { victim, .. } if victim.id == mine.id => return Some(None),
            MarketEvent::Rejected { offer, .. } if offer == mine.id => return Some(None),
            _ => {}
        }
    }
    None
}

/// Total hindsight profit over every opportunity.
pub fn optimal_profit(scenario: ReplayScenario) -> Result<OptReport, ExPostError> {
    let replay = Replay::new(scenario)?;
    let results = (0..replay.opportunities().len()).map(|k| replay.evaluate(k)).collect::<Result<Vec<_>, _>>()?;
    Ok(replay.report(results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const TARGET: AgentId = 9;

    /// Builds a log by running submissions through a fresh book.
    fn log(subs: &[(Cycle, AgentId, Side, Price, Price)]) -> Vec<MarketEvent> {
        let mut book = OrderBook::new(5, 5).unwrap();
        let mut out = Vec::new();
        for (n, &(cycle, agent, side, price, value)) in subs.iter().enumerate() {
            let offer = Offer { id: n as u64 + 1, agent, side, price, cycle };
            let (_, ev) = book.replace(agent, offer, Some(value), ClearingRule::SellerPrice).unwrap();
            out.extend(ev);
        }
        out
    }

    fn scenario(events: Vec<MarketEvent>) -> ReplayScenario {
        ReplayScenario {
            events,
            target: TARGET,
            cost: None,
            grid: PriceGrid::new(0, 100),
            clearing: ClearingRule::SellerPrice,
            buy_capacity: 5,
            sell_capacity: 5,
            delay_cost: 0.0,
        }
    }

    #[test]
    fn buy_arrives_in_window() {
        let ev = log(&[(1, TARGET, Side::Sell, 35, 30), (4, 1, Side::Buy, 80, 80), (9, TARGET, Side::Sell, 50, 30)]);
        let r = Replay::new(scenario(ev)).unwrap();
        let w = r.counterfactual_window(0, 70).unwrap();
        assert_eq!(w.profit, 40.0);
        assert_eq!(w.matched, Some((4, 70)));
        assert_eq!(r.counterfactual_window(0, 81).unwrap().profit, 0.0);
    }

    #[test]
    fn crossing_candidate_matches_at_once() {
        let ev = log(&[(1, 1, Side::Buy, 60, 60), (2, TARGET, Side::Sell, 90, 30)]);
        let r = Replay::new(scenario(ev)).unwrap();
        let w = r.counterfactual_window(0, 55).unwrap();
        assert_eq!((w.profit, w.matched), (25.0, Some((2, 55))));
    }

    #[test]
    fn picks_the_best_buy_in_window() {
        let ev = log(&[(1, TARGET, Side::Sell, 95, 30), (3, 1, Side::Buy, 50, 50), (5, 2, Side::Buy, 90, 90)]);
        let rep = optimal_profit(scenario(ev)).unwrap();
        assert_eq!(rep.opportunities.len(), 1);
        assert_eq!(rep.opportunities[0].chosen_price, 90);
        assert_eq!(rep.total_profit, 60.0);
        // brute force over the grid agrees
        let r = Replay::new(scenario(rep_log())).unwrap();
        let best = (30..=100).map(|p| r.counterfactual_window(0, p).unwrap().profit).fold(f64::MIN, f64::max);
        assert_eq!(best, 60.0);
    }

    fn rep_log() -> Vec<MarketEvent> {
        log(&[(1, TARGET, Side::Sell, 95, 30), (3, 1, Side::Buy, 50, 50), (5, 2, Side::Buy, 90, 90)])
    }

    #[test]
    fn empty_window_takes_lowest_price() {
        let ev = log(&[(1, TARGET, Side::Sell, 95, 30)]);
        let rep = optimal_profit(scenario(ev)).unwrap();
        assert_eq!(rep.opportunities[0].chosen_price, 30);
        assert_eq!(rep.total_profit, 0.0);
    }

    #[test]
    fn delay_and_failure_are_charged() {
        let ev = log(&[(1, TARGET, Side::Sell, 35, 30), (4, 1, Side::Buy, 80, 80), (9, TARGET, Side::Sell, 50, 30)]);
        let mut sc = scenario(ev);
        sc.delay_cost = 0.5;
        let r = Replay::new(sc).unwrap();
        assert_eq!(r.counterfactual_window(0, 70).unwrap().profit, 40.0 - 1.5);
        assert_eq!(r.counterfactual_window(0, 90).unwrap().profit, -0.5 * 8.0);
    }

    #[test]
    fn bumped_candidate_fails() {
        let mut subs = vec![(1, TARGET, Side::Sell, 60, 30)];
        for a in 0..5 {
            subs.push((2 + a as Cycle, 20 + a, Side::Sell, 40 + a as Price, 40));
        }
        subs.push((10, 1, Side::Buy, 70, 70));
        let r = Replay::new(scenario(log(&subs))).unwrap();
        // 60 is pushed out by the five lower asks before the buy arrives
        assert_eq!(r.counterfactual_window(0, 60).unwrap().matched, None);
        assert_eq!(r.counterfactual_window(0, 35).unwrap().profit, 5.0);
    }

    #[test]
    fn corrupted_log_reports_index() {
        let mut ev = rep_log();
        ev.swap(1, 2);
        let err = Replay::new(scenario(ev)).unwrap_err();
        assert!(matches!(err, ExPostError::Replay(e) if e.index() == 1));
    }

    #[test]
    fn grid_candidates() {
        let g = PriceGrid { lower: 0, upper: 10, step: 3 };
        assert_eq!(g.candidates(Side::Sell, 4), vec![4, 7, 10]);
        assert_eq!(g.candidates(Side::Sell, 12), vec![12]);
        assert_eq!(g.candidates(Side::Buy, 7), vec![0, 3, 6]);
    }
}

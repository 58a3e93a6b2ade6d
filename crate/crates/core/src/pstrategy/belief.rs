use alloc::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::AuctionBelief;
use crate::engine::{AgentId, Cycle, MarketEvent, Price, Side};
use crate::ordering::PriceDistribution;

pub const DEFAULT_BELIEF_WINDOW: u64 = 500;

/// Below this many windowed samples a side falls back to its prior.
pub const MIN_SIDE_SAMPLES: usize = 10;

/// Fallback arrival probabilities and price distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefPriors {
    pub p_buy: f64,
    pub p_sell: f64,
    pub buy_dist: PriceDistribution,
    pub sell_dist: PriceDistribution,
}

/// Sliding-window estimate of other agents' arrival rates and offer prices.
#[derive(Debug, Clone)]
pub struct BeliefEstimator {
    owner: AgentId,
    window: u64,
    origin: Cycle,
    priors: BeliefPriors,
    oracle: Option<BeliefPriors>,
    buys: VecDeque<(Cycle, Price)>,
    sells: VecDeque<(Cycle, Price)>,
}

impl BeliefEstimator {
    /// Estimator for `owner`, counting cycles from `origin`.
    pub fn new(owner: AgentId, window: u64, origin: Cycle, priors: BeliefPriors) -> Self {
        Self {
            owner,
            window: window.max(1),
            origin,
            priors,
            oracle: None,
            buys: VecDeque::new(),
            sells: VecDeque::new(),
        }
    }

    /// Estimator that ignores observations and always reports `truth`.
    pub fn oracle(owner: AgentId, truth: BeliefPriors) -> Self {
        let mut e = Self::new(owner, DEFAULT_BELIEF_WINDOW, 0, truth);
        e.oracle = Some(truth);
        e
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    /// Records other agents' submissions.
    pub fn observe(&mut self, event: &MarketEvent) {
        if self.oracle.is_some() {
            return;
        }
        if let MarketEvent::Submitted { cycle, offer, .. } = *event {
            if offer.agent == self.owner {
                return;
            }
            match offer.side {
                Side::Buy => self.buys.push_back((cycle, offer.price)),
                Side::Sell => self.sells.push_back((cycle, offer.price)),
            }
        }
    }

    pub fn update<'a>(
        &mut self,
        events: impl IntoIterator<Item = &'a MarketEvent>,
        now: Cycle,
        quote: Option<Price>,
    ) -> AuctionBelief {
        for e in events {
            self.observe(e);
        }
        self.estimate(now, quote)
    }

    /// Belief as of cycle `now`; samples older than the window are dropped.
    pub fn estimate(&mut self, now: Cycle, quote: Option<Price>) -> AuctionBelief {
        if let Some(t) = self.oracle {
            return AuctionBelief {
                p_buy: t.p_buy,
                p_sell: t.p_sell,
                buy_dist: t.buy_dist,
                sell_dist: t.sell_dist,
                quote,
            };
        }
        let window = self.window;
        for q in [&mut self.buys, &mut self.sells] {
            while q.front().is_some_and(|&(c, _)| c + window <= now) {
                q.pop_front();
            }
        }
        let span = now.saturating_sub(self.origin).clamp(1, self.window) as f64;
        let side = |q: &VecDeque<(Cycle, Price)>, p0: f64, d0: PriceDistribution| {
            if q.len() < MIN_SIDE_SAMPLES {
                return (p0, d0);
            }
            let lo = q.iter().map(|x| x.1).min().unwrap() as f64;
            let hi = q.iter().map(|x| x.1).max().unwrap() as f64;
            // each integer price stands for its unit cell
            let d = PriceDistribution::uniform(lo - 0.5, hi + 0.5);
            (q.len() as f64 / span, d.unwrap_or(d0))
        };
        let (mut pb, buy_dist) = side(&self.buys, self.priors.p_buy, self.priors.buy_dist);
        let (mut ps, sell_dist) = side(&self.sells, self.priors.p_sell, self.priors.sell_dist);
        let total = pb + ps;
        if total > 1.0 {
            pb /= total;
            ps /= total;
        }
        AuctionBelief { p_buy: pb, p_sell: ps, buy_dist, sell_dist, quote }
    }
}

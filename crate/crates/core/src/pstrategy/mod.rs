//! The p-strategy seller: model the auction as an absorbing Markov chain for
//! each candidate ask, score each ask by expected utility, pick the best.
//!
//! A transient state `(nb, k, r)` records `nb` standing buys, `k` other
//! standing sells and the rank `r` of the seller's own ask among all `k + 1`
//! sells (1 = lowest). Standing prices are assumed to be independent draws
//! constrained only by the state's ordering
//! `b… ≤ s₍₁₎ … s₍ᵣ₋₁₎ ≤ ρ ≤ s₍ᵣ₎ … s₍ₖ₎`, and in each clearing interval at
//! most one offer arrives: a buy with probability `p_b`, a sell with `p_s`.

mod belief;
pub mod episode;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use belief::{BeliefEstimator, BeliefPriors, DEFAULT_BELIEF_WINDOW, MIN_SIDE_SAMPLES};

use crate::chain::{
    outcome_summary, AbsorbingChain, ChainBuilder, ChainError, OutcomeSummary, Outcomes,
    Payoffs, RewardSpec, RiskNeutral, SolvePath, UtilityCurve,
};
use crate::engine::Price;
use crate::ordering::{OrderingCache, OrderingError, OrderingPattern, PriceDistribution, Slot};

/// Delay cost per clearing interval used when none is configured.
pub const DEFAULT_DELAY_COST: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PStrategyError {
    #[error("invalid belief: {0}")]
    Belief(&'static str),
    #[error("invalid seller context: {0}")]
    Context(&'static str),
    #[error("standing counts ({nb} buys, {ns} sells) exceed capacities")]
    Counts { nb: usize, ns: usize },
    #[error("no price on the grid has a feasible chain")]
    NoFeasiblePrice,
    #[error("empty price grid")]
    EmptyGrid,
    #[error(transparent)]
    Ordering(#[from] OrderingError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum ChainState {
    Transient { nb: usize, k: usize, r: usize },
    Success,
    Failure,
    Start,
}

impl fmt::Display for ChainState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainState::Transient { nb, k, r } => write!(f, "({nb},{k},{r})"),
            ChainState::Success => f.write_str("S"),
            ChainState::Failure => f.write_str("F"),
            ChainState::Start => f.write_str("Start"),
        }
    }
}

/// All states for the given capacities: transients ordered by `(k, r, nb)`,
/// then Success, Failure, Start.
pub fn enumerate_states(buy_capacity: usize, sell_capacity: usize) -> Vec<ChainState> {
    let mut out = Vec::new();
    for k in 0..sell_capacity {
        for r in 1..=k + 1 {
            for nb in 0..=buy_capacity {
                out.push(ChainState::Transient { nb, k, r });
            }
        }
    }
    out.extend([ChainState::Success, ChainState::Failure, ChainState::Start]);
    out
}

fn transient_index(buy_capacity: usize, nb: usize, k: usize, r: usize) -> usize {
    // states with fewer other sells come first: Σ_{j<k} (j+1)(B+1)
    let per = buy_capacity + 1;
    k * (k + 1) / 2 * per + (r - 1) * per + nb
}

/// What the seller believes about incoming offers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuctionBelief {
    pub p_buy: f64,
    pub p_sell: f64,
    pub buy_dist: PriceDistribution,
    pub sell_dist: PriceDistribution,
    pub quote: Option<Price>,
}

impl AuctionBelief {
    pub fn validate(&self) -> Result<(), PStrategyError> {
        let ok = |p: f64| p.is_finite() && p >= 0.0;
        if !ok(self.p_buy) || !ok(self.p_sell) {
            return Err(PStrategyError::Belief("arrival probabilities must be finite and >= 0"));
        }
        if self.p_buy + self.p_sell > 1.0 + 1e-12 {
            return Err(PStrategyError::Belief("p_buy + p_sell exceeds 1"));
        }
        self.buy_dist.validate()?;
        self.sell_dist.validate()?;
        Ok(())
    }
}

/// Book occupancy seen by the seller, excluding its own offer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StandingCounts {
    pub nb: usize,
    pub ns: usize,
}

/// The seller's own parameters.
#[derive(Clone)]
pub struct SellerContext {
    pub cost: Price,
    pub delay_cost: f64,
    pub utility: Arc<dyn UtilityCurve + Send + Sync>,
    /// Highest price on the grid; the grid runs from `cost` in steps of `grid_step`.
    pub grid_upper: Price,
    pub grid_step: Price,
    pub buy_capacity: usize,
    pub sell_capacity: usize,
}

impl fmt::Debug for SellerContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SellerContext")
            .field("cost", &self.cost)
            .field("delay_cost", &self.delay_cost)
            .field("grid_upper", &self.grid_upper)
            .field("grid_step", &self.grid_step)
            .field("buy_capacity", &self.buy_capacity)
            .field("sell_capacity", &self.sell_capacity)
            .finish_non_exhaustive()
    }
}

impl SellerContext {
    /// Risk-neutral seller with unit price step and capacity 5 per side.
    pub fn new(cost: Price, delay_cost: f64, grid_upper: Price) -> Self {
        Self {
            cost,
            delay_cost,
            utility: Arc::new(RiskNeutral),
            grid_upper,
            grid_step: 1,
            buy_capacity: crate::engine::DEFAULT_CAPACITY,
            sell_capacity: crate::engine::DEFAULT_CAPACITY,
        }
    }

    pub fn validate(&self) -> Result<(), PStrategyError> {
        if !(self.delay_cost.is_finite() && self.delay_cost >= 0.0) {
            return Err(PStrategyError::Context("delay cost must be finite and >= 0"));
        }
        if self.cost < 0 || self.cost > self.grid_upper {
            return Err(PStrategyError::Context("cost must lie in [0, grid upper]"));
        }
        if self.grid_step <= 0 {
            return Err(PStrategyError::Context("grid step must be positive"));
        }
        if self.buy_capacity == 0 || self.sell_capacity == 0 {
            return Err(PStrategyError::Context("capacities must be at least 1"));
        }
        Ok(())
    }

    /// `cost, cost + step, …, grid_upper`, plus the quote when it is at
    /// least the cost.
    pub fn grid(&self, quote: Option<Price>) -> Vec<Price> {
        let mut g: Vec<Price> = (self.cost..=self.grid_upper).step_by(self.grid_step as usize).collect();
        if let Some(q) = quote {
            if q >= self.cost {
                g.push(q);
                g.sort_unstable();
                g.dedup();
            }
        }
        g
    }

    fn check_counts(&self, counts: StandingCounts) -> Result<(), PStrategyError> {
        if counts.nb > self.buy_capacity || counts.ns > self.sell_capacity {
            return Err(PStrategyError::Counts { nb: counts.nb, ns: counts.ns });
        }
        Ok(())
    }
}

/// Where the seller's offer lands when submitted at `rho`.
///
/// With the quote known and `rho ≤ quote` the offer trades at once. Otherwise
/// the rank of `rho` among the `ns` standing sells, each known to exceed the
/// quote, follows from the ordering probabilities of `rho` inserted at each
/// position of the sorted sells.
/// A full sell queue bumps its highest offer, or rejects ours (Failure) if
/// ours would be the highest.
pub fn initial_distribution(
    rho: Price,
    belief: &AuctionBelief,
    counts: StandingCounts,
    sell_capacity: usize,
    cache: &mut OrderingCache,
) -> Result<Vec<(ChainState, f64)>, PStrategyError> {
    if let Some(q) = belief.quote {
        if rho <= q {
            return Ok(vec![(ChainState::Success, 1.0)]);
        }
    }
    let ns = counts.ns.min(sell_capacity);
    let r = rho as f64;
    let (b, s) = (&belief.buy_dist, &belief.sell_dist);
    let mut prefix = OrderingPattern::empty();
    if let Some(q) = belief.quote {
        prefix = prefix.then(Slot::Fixed(q as f64), 1)?;
    }
    let mut given = prefix.clone().then(Slot::Sell, ns)?;
    if cache.ordering_probability(&given, b, s, r)? == 0.0 {
        // standing sells cannot all exceed the quote under this belief
        prefix = OrderingPattern::empty();
        given = prefix.clone().then(Slot::Sell, ns)?;
    }
    let mut out = Vec::with_capacity(ns + 1);
    for below in 0..=ns {
        let event = prefix.clone().then(Slot::Sell, below)?.then(Slot::Rho, 1)?.then(Slot::Sell, ns - below)?;
        let p = cache.conditional(&event, &given, b, s, r)?;
        let state = if ns < sell_capacity {
            ChainState::Transient { nb: counts.nb, k: ns, r: below + 1 }
        } else if below == ns {
            ChainState::Failure
        } else {
            ChainState::Transient { nb: counts.nb, k: sell_capacity - 1, r: below + 1 }
        };
        out.push((state, p));
    }
    Ok(out)
}

/// Outgoing arcs of one transient state split by arrival type; each group
/// sums to one before scaling by `p_b`/`p_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Placement {
    buy_stand: f64,
    buy_cross: f64,
    sell_low: f64,
    sell_mid: f64,
    sell_inner: f64,
    sell_top: f64,
}

/// Memo shared by successive decisions of one seller: ordering
/// probabilities, per-price transition splits and per-price chain outcomes.
/// Entries are keyed on the exact belief bits, so a changed belief simply
/// misses. Cleared wholesale once it grows past its limits.
#[derive(Debug, Default, Clone)]
pub struct DecisionCache {
    ordering: OrderingCache,
    placements: BTreeMap<PlacementKey, Vec<Placement>>,
    outcomes: BTreeMap<OutcomeKey, OutcomeSummary>,
}

type PlacementKey = ([u64; 4], Price, usize, usize);
type OutcomeKey = ([u64; 8], Option<Price>, [usize; 4], Price);

const ORDERING_LIMIT: usize = 400_000;
const PLACEMENT_LIMIT: usize = 20_000;
const OUTCOME_LIMIT: usize = 200_000;

impl DecisionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ordering(&mut self) -> &mut OrderingCache {
        &mut self.ordering
    }

    pub fn clear(&mut self) {
        self.ordering.clear();
        self.placements.clear();
        self.outcomes.clear();
    }

    fn trim(&mut self) {
        if self.ordering.len() > ORDERING_LIMIT
            || self.placements.len() > PLACEMENT_LIMIT
            || self.outcomes.len() > OUTCOME_LIMIT
        {
            self.clear();
        }
    }

    /// Splits for every transient state at `rho`, in chain order.
    fn placements(
        &mut self,
        rho: Price,
        belief: &AuctionBelief,
        cb: usize,
        cs: usize,
    ) -> Result<&[Placement], PStrategyError> {
        let [b0, b1] = belief.buy_dist.key();
        let [s0, s1] = belief.sell_dist.key();
        let key = ([b0, b1, s0, s1], rho, cb, cs);
        if !self.placements.contains_key(&key) {
            let states = enumerate_states(cb, cs);
            let mut table = Vec::with_capacity(states.len() - 3);
            for s in &states[..states.len() - 3] {
                let ChainState::Transient { nb, k, r } = *s else { unreachable!() };
                table.push(placement(nb, r - 1, k + 1 - r, rho as f64, belief, &mut self.ordering)?);
            }
            self.placements.insert(key, table);
        }
        Ok(&self.placements[&key])
    }
}

fn outcome_key(rho: Price, belief: &AuctionBelief, ctx: &SellerContext, counts: StandingCounts) -> OutcomeKey {
    let [b0, b1] = belief.buy_dist.key();
    let [s0, s1] = belief.sell_dist.key();
    let bits = [belief.p_buy.to_bits(), belief.p_sell.to_bits(), b0, b1, s0, s1, ctx.delay_cost.to_bits(), 0];
    (bits, belief.quote, [counts.nb, counts.ns, ctx.buy_capacity, ctx.sell_capacity], rho)
}

fn placement(
    nb: usize,
    below: usize,
    above: usize,
    rho: f64,
    belief: &AuctionBelief,
    cache: &mut OrderingCache,
) -> Result<Placement, PStrategyError> {
    let (bd, sd) = (&belief.buy_dist, &belief.sell_dist);
    // the blocks below and above rho are independent given rho
    let low_block = OrderingPattern::empty().then(Slot::Buy, nb)?.then(Slot::Sell, below)?.then(Slot::Rho, 1)?;
    let high_block = OrderingPattern::empty().then(Slot::Rho, 1)?.then(Slot::Sell, above)?;
    let possible = cache.ordering_probability(&low_block, bd, sd, rho)? > 0.0
        && cache.ordering_probability(&high_block, bd, sd, rho)? > 0.0;
    if !possible {
        // zero-probability state: spread arrivals evenly over the gaps
        let n = (nb + below + above + 2) as f64;
        let stand = (nb + 1) as f64 / n;
        return Ok(Placement {
            buy_stand: stand,
            buy_cross: 1.0 - stand,
            sell_low: nb as f64 / n,
            sell_mid: (below + 1) as f64 / n,
            sell_inner: above as f64 / n,
            sell_top: 1.0 / n,
        });
    }
    let buy_stand = cache.insertion(&low_block, nb, Slot::Buy, bd, sd, rho)?;
    let sell_below = cache.ordering_probability(
        &OrderingPattern::new(vec![Slot::Sell, Slot::Rho])?,
        bd,
        sd,
        rho,
    )?;
    let (sell_low, sell_mid) = if nb == 0 {
        (0.0, sell_below)
    } else {
        let mid = cache.insertion(&low_block, nb, Slot::Sell, bd, sd, rho)?.min(sell_below);
        (sell_below - mid, mid)
    };
    let sell_top = cache.insertion(&high_block, above + 1, Slot::Sell, bd, sd, rho)?;
    let sell_inner = ((1.0 - sell_below) - sell_top).max(0.0);
    Ok(Placement {
        buy_stand,
        buy_cross: 1.0 - buy_stand,
        sell_low,
        sell_mid,
        sell_inner,
        sell_top,
    })
}

/// What happens during the clearing interval an arc stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrival {
    Idle,
    Buy,
    Sell,
}

/// One contribution to a transient state's row. Several arcs may share a
/// destination; the chain holds their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfferArc {
    pub from: usize,
    pub to: usize,
    pub arrival: Arrival,
    pub probability: f64,
}

/// The chain for one candidate ask, with its designated states.
#[derive(Debug, Clone)]
pub struct OfferChain {
    pub chain: AbsorbingChain,
    pub states: Vec<ChainState>,
    pub success: usize,
    pub failure: usize,
    pub start: usize,
    /// Arcs out of the transient states, tagged by arrival.
    pub arcs: Vec<OfferArc>,
}

impl OfferChain {
    pub fn index_of(&self, state: ChainState) -> Option<usize> {
        self.states.iter().position(|&s| s == state)
    }

    pub fn outcomes(&self) -> Outcomes {
        Outcomes { success: self.success, failure: self.failure }
    }

    /// Delay reward: `c` per clearing interval, nothing for leaving Start.
    pub fn rewards(&self, delay_cost: f64) -> Result<RewardSpec, ChainError> {
        Ok(RewardSpec::constant(delay_cost)?.with_free_source(self.start))
    }
}

pub fn build_chain(
    rho: Price,
    belief: &AuctionBelief,
    ctx: &SellerContext,
    counts: StandingCounts,
    cache: &mut DecisionCache,
) -> Result<OfferChain, PStrategyError> {
    belief.validate()?;
    ctx.validate()?;
    ctx.check_counts(counts)?;
    let (cb, cs) = (ctx.buy_capacity, ctx.sell_capacity);
    let states = enumerate_states(cb, cs);
    let n_transient = states.len() - 3;
    let (success, failure, start) = (n_transient, n_transient + 1, n_transient + 2);
    let mut builder = ChainBuilder::new();
    for s in &states {
        builder.add_state(format!("{s}"), matches!(s, ChainState::Success | ChainState::Failure));
    }
    let index = |s: ChainState| match s {
        ChainState::Transient { nb, k, r } => transient_index(cb, nb, k, r),
        ChainState::Success => success,
        ChainState::Failure => failure,
        ChainState::Start => start,
    };
    let (pb, ps) = (belief.p_buy, belief.p_sell);
    let table = cache.placements(rho, belief, cb, cs)?;
    let mut arcs = Vec::with_capacity(n_transient * 7);
    for (i, &state) in states[..n_transient].iter().enumerate() {
        let ChainState::Transient { nb, k, r: rank } = state else { unreachable!() };
        debug_assert_eq!(index(state), i);
        let below = rank - 1;
        let above = k + 1 - rank;
        let full = k + 1 == cs;
        debug_assert!(below + above == k);
        let pl = table[i];
        let mut arc = |to: usize, arrival: Arrival, probability: f64| {
            arcs.push(OfferArc { from: i, to, arrival, probability });
        };
        arc(i, Arrival::Idle, 1.0 - pb - ps);

        let stood = if nb < cb { index(ChainState::Transient { nb: nb + 1, k, r: rank }) } else { i };
        arc(stood, Arrival::Buy, pb * pl.buy_stand);
        let crossed = if rank == 1 {
            success
        } else {
            index(ChainState::Transient { nb, k: k - 1, r: rank - 1 })
        };
        arc(crossed, Arrival::Buy, pb * pl.buy_cross);

        if nb > 0 {
            arc(index(ChainState::Transient { nb: nb - 1, k, r: rank }), Arrival::Sell, ps * pl.sell_low);
        }
        let mid = match (full, above) {
            (false, _) => index(ChainState::Transient { nb, k: k + 1, r: rank + 1 }),
            (true, 0) => failure,
            (true, _) => index(ChainState::Transient { nb, k, r: rank + 1 }),
        };
        arc(mid, Arrival::Sell, ps * pl.sell_mid);
        let higher = if full { i } else { index(ChainState::Transient { nb, k: k + 1, r: rank }) };
        arc(higher, Arrival::Sell, ps * (pl.sell_inner + pl.sell_top));
    }
    for a in &arcs {
        builder.arc(a.from, a.to, a.probability);
    }
    for (s, p) in initial_distribution(rho, belief, counts, cs, &mut cache.ordering)? {
        builder.arc(start, index(s), p);
    }
    builder.start(start);
    let chain = builder.build()?;
    Ok(OfferChain { chain, states, success, failure, start, arcs })
}

/// Utility of one ask and the chain quantities behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfferEvaluation {
    pub price: Price,
    pub utility: f64,
    pub p_success: f64,
    pub p_failure: f64,
    pub delay_success: f64,
    pub delay_failure: f64,
}

pub fn evaluate_offer(
    rho: Price,
    belief: &AuctionBelief,
    ctx: &SellerContext,
    counts: StandingCounts,
    cache: &mut DecisionCache,
) -> Result<OfferEvaluation, PStrategyError> {
    let payoff = (rho - ctx.cost) as f64;
    if let Some(q) = belief.quote {
        if rho <= q {
            belief.validate()?;
            ctx.validate()?;
            return Ok(OfferEvaluation {
                price: rho,
                utility: ctx.utility.utility(payoff),
                p_success: 1.0,
                p_failure: 0.0,
                delay_success: 0.0,
                delay_failure: 0.0,
            });
        }
    }
    let key = outcome_key(rho, belief, ctx, counts);
    if let Some(summary) = cache.outcomes.get(&key) {
        return Ok(evaluation_from(rho, payoff, summary, ctx));
    }
    let oc = build_chain(rho, belief, ctx, counts, cache)?;
    let rewards = oc.rewards(ctx.delay_cost)?;
    let summary = outcome_summary(&oc.chain, oc.outcomes(), &rewards, SolvePath::Fast)?;
    cache.outcomes.insert(key, summary);
    Ok(evaluation_from(rho, payoff, &summary, ctx))
}

fn evaluation_from(rho: Price, payoff: f64, s: &OutcomeSummary, ctx: &SellerContext) -> OfferEvaluation {
    let utility = s.utility(Payoffs { success: payoff, failure_base: 0.0 }, &*ctx.utility);
    OfferEvaluation {
        price: rho,
        utility,
        p_success: s.p_success,
        p_failure: s.p_failure,
        delay_success: s.td_success.unwrap_or(0.0),
        delay_failure: s.td_failure.unwrap_or(0.0),
    }
}

/// One row of the per-price table; `evaluation` is `None` where the chain
/// never absorbs (such prices are never chosen).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub price: Price,
    pub evaluation: Option<OfferEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfferDecision {
    pub price: Price,
    pub utility: f64,
    pub table: Vec<GridPoint>,
    /// Whether the feasible utilities rise then fall along the grid.
    pub unimodal: bool,
}

/// Grid argmax of [`evaluate_offer`], ties to the lower price.
pub fn best_offer(
    belief: &AuctionBelief,
    ctx: &SellerContext,
    counts: StandingCounts,
    cache: &mut DecisionCache,
) -> Result<OfferDecision, PStrategyError> {
    let grid = ctx.grid(belief.quote);
    best_offer_on(&grid, belief, ctx, counts, cache)
}

pub fn best_offer_on(
    grid: &[Price],
    belief: &AuctionBelief,
    ctx: &SellerContext,
    counts: StandingCounts,
    cache: &mut DecisionCache,
) -> Result<OfferDecision, PStrategyError> {
    if grid.is_empty() {
        return Err(PStrategyError::EmptyGrid);
    }
    belief.validate()?;
    ctx.validate()?;
    cache.trim();
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(Price, f64)> = None;
    for &rho in grid {
        let evaluation = match evaluate_offer(rho, belief, ctx, counts, cache) {
            Ok(e) => Some(e),
            Err(PStrategyError::Chain(ChainError::AbsorptionUnreachable { .. })) => None,
            Err(e) => return Err(e),
        };
        if let Some(e) = &evaluation {
            if best.is_none_or(|(_, u)| e.utility > u) {
                best = Some((rho, e.utility));
            }
        }
        table.push(GridPoint { price: rho, evaluation });
    }
    let (price, utility) = best.ok_or(PStrategyError::NoFeasiblePrice)?;
    let values: Vec<f64> = table.iter().filter_map(|g| g.evaluation.map(|e| e.utility)).collect();
    Ok(OfferDecision { price, utility, unimodal: is_unimodal(&values), table })
}

fn is_unimodal(values: &[f64]) -> bool {
    let mut falling = false;
    for w in values.windows(2) {
        if w[1] < w[0] {
            falling = true;
        } else if w[1] > w[0] && falling {
            return false;
        }
    }
    true
}

/// Label of every state, in chain order.
pub fn state_labels(states: &[ChainState]) -> Vec<String> {
    states.iter().map(|s| format!("{s}")).collect()
}

//! Measurement routines shared by the property tests and the acceptance
//! run. Each returns what it measured; callers decide the bounds.

#![allow(dead_code)]

use std::collections::HashMap;
use std::time::{Duration, Instant};

use cda_core::chain::{analyze_dense, analyze_fast, outcome_summary, AbsorbingChain, RewardSpec, SolvePath};
use cda_core::engine::{replay, AgentId, ClearingRule, EngineError, MarketEvent, Offer, OrderBook, Price, Side, SubmitOutcome};
use cda_core::linalg::Matrix;
use cda_core::ordering::{
    conditional_ordering_probability, mc_oracle, ordering_probability, OracleQuery, OrderingPattern, PriceDistribution,
    Slot,
};
use cda_core::pstrategy::episode::simulate_episodes;
use cda_core::pstrategy::{build_chain, AuctionBelief, DecisionCache, SellerContext, StandingCounts};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- absorbing chains ----

pub fn random_chain(rng: &mut ChaCha8Rng) -> AbsorbingChain {
    let n = rng.random_range(2..=10usize);
    let a = rng.random_range(1..=(n - 1).min(3));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let absorbing: Vec<usize> = order[..a].to_vec();
    let transient: Vec<usize> = order[a..].to_vec();
    let mut m = Matrix::zeros(n, n);
    for &x in &absorbing {
        m[(x, x)] = 1.0;
    }
    for (k, &i) in transient.iter().enumerate() {
        let mut w = vec![0.0; n];
        // a path to absorption through states already wired up
        let anchor = if k == 0 || rng.random_bool(0.3) {
            absorbing[rng.random_range(0..a)]
        } else {
            transient[rng.random_range(0..k)]
        };
        w[anchor] = rng.random_range(0.05..1.0);
        for _ in 0..rng.random_range(0..n) {
            w[rng.random_range(0..n)] += rng.random_range(0.05..1.0);
        }
        let s: f64 = w.iter().sum();
        for (j, v) in w.into_iter().enumerate() {
            m[(i, j)] = v / s;
        }
    }
    let start = if rng.random_bool(0.05) { absorbing[0] } else { transient[rng.random_range(0..transient.len())] };
    let labels = (0..n).map(|i| format!("s{i}")).collect();
    AbsorbingChain::new(labels, &absorbing, m, start).expect("generated chain is valid")
}

fn random_rewards(chain: &AbsorbingChain, rng: &mut ChaCha8Rng) -> RewardSpec {
    if rng.random_bool(0.5) {
        return RewardSpec::constant(rng.random_range(0.0..2.0)).unwrap();
    }
    let n = chain.len();
    let mut w = Matrix::zeros(n, n);
    for i in chain.transient_states() {
        for j in 0..n {
            w[(i, j)] = rng.random_range(0.0..3.0);
        }
    }
    RewardSpec::from_matrix(w).unwrap()
}

/// Σ_k Qᵏ by repeated doubling.
fn power_series(q: &Matrix) -> Matrix {
    let n = q.rows();
    let mut sum = Matrix::identity(n);
    let mut pow = q.clone();
    for _ in 0..64 {
        let step = pow.mul(&sum).unwrap();
        for i in 0..n {
            for j in 0..n {
                sum[(i, j)] += step[(i, j)];
            }
        }
        pow = pow.mul(&pow).unwrap();
        if pow.max_abs() < 1e-18 {
            break;
        }
    }
    sum
}

/// Largest errors seen over a batch of random chains.
#[derive(Debug, Default)]
pub struct ChainSuite {
    pub chains: usize,
    /// Inverse against the power series.
    pub series: f64,
    /// Absorption rows against 1.
    pub rows: f64,
    /// Dense inverse against the direct solves.
    pub paths: f64,
    /// Σ F·TD against Σ visits × expected step reward.
    pub total_reward: f64,
    pub reward_checks: usize,
    /// Pairs where one path found a target reachable and the other did not.
    pub reachability_mismatches: usize,
    pub elapsed: Duration,
}

pub fn chain_suite(seed: u64, chains: usize) -> ChainSuite {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = ChainSuite { chains, ..ChainSuite::default() };
    for _ in 0..chains {
        let chain = random_chain(&mut rng);
        let rewards = random_rewards(&chain, &mut rng);
        let dense = analyze_dense(&chain, &rewards).unwrap();
        let fast = analyze_fast(&chain, &rewards).unwrap();
        let cf = &dense.canonical;

        r.series = r.series.max(power_series(&cf.q).max_abs_diff(&dense.fundamental));
        for i in 0..dense.absorb_prob.rows() {
            let s: f64 = dense.absorb_prob.row(i).iter().sum();
            r.rows = r.rows.max((s - 1.0).abs());
        }
        r.paths = r.paths.max(dense.absorb_prob.max_abs_diff(&fast.absorb_prob));
        for k in 0..cf.absorbing.len() {
            r.paths = r.paths.max((dense.start_absorb[k] - fast.start_absorb[k]).abs());
            match (dense.rewards[k], fast.rewards[k]) {
                (Some(a), Some(b)) => r.paths = r.paths.max((a - b).abs()),
                (None, None) => {}
                _ => r.reachability_mismatches += 1,
            }
            if let (Some(a), Some(b)) = (&dense.conditioned_visits[k], &fast.conditioned_visits[k]) {
                for (x, y) in a.iter().zip(b) {
                    r.paths = r.paths.max((x - y).abs());
                }
            }
        }

        if let Some(s) = cf.transient_position(chain.start()) {
            let lhs: f64 =
                dense.start_absorb.iter().zip(&dense.rewards).map(|(&f, td)| f * td.unwrap_or(0.0)).sum();
            let mut rhs = 0.0;
            for (pi, &i) in cf.transient.iter().enumerate() {
                let step: f64 = (0..chain.len()).map(|j| chain.probability(i, j) * rewards.weight(&chain, i, j)).sum();
                rhs += dense.fundamental[(s, pi)] * step;
            }
            r.total_reward = r.total_reward.max((lhs - rhs).abs());
            for (pi, &v) in fast.start_visits.iter().enumerate() {
                r.paths = r.paths.max((v - dense.fundamental[(s, pi)]).abs());
            }
            r.reward_checks += 1;
        }
    }
    r.elapsed = started.elapsed();
    r
}

// ---- ordering probabilities ----

pub const ORACLE_SAMPLES: u64 = 1_000_000;

fn random_dist(rng: &mut ChaCha8Rng) -> PriceDistribution {
    let lo = rng.random_range(0..50) as f64 - 0.5;
    let hi = lo + rng.random_range(5..60) as f64;
    PriceDistribution::uniform(lo, hi).unwrap()
}

fn random_pattern(rng: &mut ChaCha8Rng) -> OrderingPattern {
    let len = rng.random_range(2..=6);
    let mut slots = Vec::with_capacity(len);
    let mut rho = false;
    for _ in 0..len {
        let s = match rng.random_range(0..10) {
            0..=3 => Slot::Buy,
            4..=7 => Slot::Sell,
            8 if !rho => {
                rho = true;
                Slot::Rho
            }
            _ => Slot::Fixed(rng.random_range(0..100) as f64),
        };
        slots.push(s);
    }
    OrderingPattern::new(slots).unwrap()
}

pub struct Query {
    pub query: OracleQuery,
    pub buy: PriceDistribution,
    pub sell: PriceDistribution,
    pub rho: f64,
    pub exact: f64,
}

/// Fifty fixed queries (forty patterns, ten conditionals) whose probability
/// is large enough for sampling to see.
pub fn oracle_queries() -> Vec<Query> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0dd3);
    let mut out = Vec::new();
    while out.len() < 50 {
        let buy = random_dist(&mut rng);
        let sell = random_dist(&mut rng);
        let rho = rng.random_range(0..100) as f64;
        let event = random_pattern(&mut rng);
        let conditional = out.len() >= 40;
        let (query, exact) = if conditional {
            let keep: Vec<Slot> = event.slots().iter().copied().filter(|_| rng.random_bool(0.5)).collect();
            let given = OrderingPattern::new(keep).unwrap();
            if ordering_probability(&given, &buy, &sell, rho).unwrap() < 0.01 {
                continue;
            }
            let p = conditional_ordering_probability(&event, &given, &buy, &sell, rho).unwrap();
            (OracleQuery::Conditional { event, given }, p)
        } else {
            let p = ordering_probability(&event, &buy, &sell, rho).unwrap();
            (OracleQuery::Pattern { pattern: event }, p)
        };
        if !(1e-3..=1.0 - 1e-3).contains(&exact) {
            continue;
        }
        out.push(Query { query, buy, sell, rho, exact });
    }
    out
}

pub struct OracleBattery {
    /// |exact - sampled| / standard error, per query.
    pub z: Vec<f64>,
    pub elapsed: Duration,
}

pub fn oracle_battery() -> OracleBattery {
    let started = Instant::now();
    let z = oracle_queries()
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let est = mc_oracle(&q.query, &q.buy, &q.sell, q.rho, ORACLE_SAMPLES, 7_000 + i as u64).unwrap();
            ((est.estimate - q.exact) / est.std_error).abs()
        })
        .collect();
    OracleBattery { z, elapsed: started.elapsed() }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Largest |P - 1/k!| over k ≤ 5 for k exchangeable draws in a fixed
/// order: buys alone, sells alone, and buys and sells from one law.
pub fn factorial_symmetry() -> f64 {
    let same = PriceDistribution::uniform(-0.5, 20.5).unwrap();
    let other = PriceDistribution::uniform(3.0, 70.0).unwrap();
    let mut worst: f64 = 0.0;
    for k in 1..=5 {
        let want = 1.0 / factorial(k);
        let buys = OrderingPattern::empty().then(Slot::Buy, k).unwrap();
        let sells = OrderingPattern::empty().then(Slot::Sell, k).unwrap();
        let mixed: Vec<Slot> = (0..k).map(|i| if i % 2 == 0 { Slot::Buy } else { Slot::Sell }).collect();
        for p in [
            ordering_probability(&buys, &same, &other, 0.0).unwrap(),
            ordering_probability(&sells, &other, &same, 0.0).unwrap(),
            ordering_probability(&OrderingPattern::new(mixed).unwrap(), &same, &same, 0.0).unwrap(),
        ] {
            worst = worst.max((p - want).abs());
        }
    }
    worst
}

// ---- order book fuzz ----

pub const FUZZ_SUBMISSIONS: usize = 100_000;
const FUZZ_AGENTS: u32 = 40;

#[derive(Debug, Default)]
pub struct FuzzReport {
    pub submissions: usize,
    pub trades: usize,
    /// One message per broken invariant, with the step.
    pub violations: Vec<String>,
    /// Replaying the log rebuilt the final book byte for byte.
    pub replay_identical: bool,
}

/// Random budget-respecting submissions from 40 agents against one book.
pub fn fuzz_stream(rule: ClearingRule, seed: u64, submissions: usize) -> FuzzReport {
    struct Trader {
        side: Side,
        value: Price,
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traders: Vec<Trader> = (0..FUZZ_AGENTS)
        .map(|a| Trader { side: if a % 2 == 0 { Side::Buy } else { Side::Sell }, value: rng.random_range(0..=100) })
        .collect();
    let cb = rng.random_range(1..=6);
    let cs = rng.random_range(1..=6);
    let mut book = OrderBook::new(cb, cs).unwrap();
    let mut log: Vec<MarketEvent> = Vec::new();
    let mut next_id = 1;
    let (mut bumps, mut rejects, mut replaced) = (0usize, 0usize, 0usize);
    let mut owner: HashMap<u64, AgentId> = HashMap::new();
    let mut r = FuzzReport { submissions, ..FuzzReport::default() };
    let fail = |r: &mut FuzzReport, step: usize, what: String| r.violations.push(format!("{rule:?} step {step}: {what}"));

    for step in 0..submissions {
        let agent = rng.random_range(0..FUZZ_AGENTS);
        let t = &traders[agent as usize];
        let price = match t.side {
            Side::Buy => rng.random_range(0..=t.value),
            Side::Sell => rng.random_range(t.value..=100),
        };
        let offer = Offer { id: next_id, agent, side: t.side, price, cycle: step as u64 + 1 };

        if book.standing_offer(agent).is_some() && rng.random_bool(0.05) {
            let before = book.clone();
            match book.submit(offer, Some(t.value), rule) {
                Err(EngineError::DuplicateStanding { agent: a }) if a == agent => {}
                other => fail(&mut r, step, format!("second standing offer accepted: {other:?}")),
            }
            if book != before {
                fail(&mut r, step, "rejected call changed the book".into());
            }
            continue;
        }
        next_id += 1;
        owner.insert(offer.id, agent);
        let (outcome, events) = match book.replace(agent, offer, Some(t.value), rule) {
            Ok(x) => x,
            Err(e) => {
                fail(&mut r, step, format!("engine error {e}"));
                continue;
            }
        };
        replaced += events.iter().filter(|e| matches!(e, MarketEvent::Replaced { .. })).count();
        match outcome {
            SubmitOutcome::Matched { trade } => {
                r.trades += 1;
                if trade.buy.price < trade.sell.price || !(trade.sell.price..=trade.buy.price).contains(&trade.price) {
                    fail(&mut r, step, format!("crossing violated: {trade:?}"));
                }
                let v = traders[trade.buy.agent as usize].value;
                let c = traders[trade.sell.agent as usize].value;
                let (buyer, seller) = (v - trade.price, trade.price - c);
                if buyer < 0 || seller < 0 || buyer + seller != v - c {
                    fail(&mut r, step, format!("surplus not conserved: {trade:?}"));
                }
            }
            SubmitOutcome::Bumped { victim } => {
                bumps += 1;
                if book.contains(victim.id) || victim.side != offer.side {
                    fail(&mut r, step, format!("bad bump of {victim:?}"));
                }
            }
            SubmitOutcome::Rejected => rejects += 1,
            SubmitOutcome::Stood => {
                if !book.contains(offer.id) {
                    fail(&mut r, step, "standing offer missing".into());
                }
            }
        }
        if let Err(e) = book.audit() {
            fail(&mut r, step, format!("audit: {e}"));
        }
        if book.buys().len() > cb || book.sells().len() > cs {
            fail(&mut r, step, "capacity exceeded".into());
        }
        log.extend(events);
    }

    // every accepted offer is accounted for exactly once
    let submitted = log.iter().filter(|e| matches!(e, MarketEvent::Submitted { .. })).count();
    let standing = book.buys().len() + book.sells().len();
    if submitted != 2 * r.trades + standing + bumps + rejects + replaced {
        fail(&mut r, submissions, "offer accounting does not balance".into());
    }
    for o in book.buys().iter().chain(book.sells()) {
        if owner[&o.id] != o.agent {
            fail(&mut r, submissions, format!("offer {} changed owner", o.id));
        }
    }

    r.replay_identical = match replay(&log, cb, cs, rule) {
        Ok(rebuilt) => serde_json::to_vec(&rebuilt).unwrap() == serde_json::to_vec(&book).unwrap(),
        Err(_) => false,
    };
    let text = serde_json::to_string(&log).unwrap();
    let back: Vec<MarketEvent> = serde_json::from_str(&text).unwrap();
    if back != log {
        fail(&mut r, submissions, "log does not survive a JSON round trip".into());
    }
    r
}

// ---- offer chain against simulation ----

pub const EPISODES: u64 = 100_000;
const MAX_STEPS: u64 = 10_000_000;

pub struct SimCase {
    pub p_buy: f64,
    pub p_sell: f64,
    pub buy: (f64, f64),
    pub sell: (f64, f64),
    pub quote: Option<i64>,
    pub rho: i64,
    pub nb: usize,
    pub ns: usize,
    pub cost: i64,
}

/// Ten frozen beliefs and books.
pub fn sim_cases() -> Vec<SimCase> {
    let c = |p_buy, p_sell, buy, sell, quote, rho, nb, ns, cost| SimCase { p_buy, p_sell, buy, sell, quote, rho, nb, ns, cost };
    vec![
        c(0.3, 0.3, (0.0, 100.0), (0.0, 100.0), Some(40), 60, 2, 3, 30),
        c(0.4, 0.4, (0.0, 50.0), (0.0, 50.0), None, 30, 0, 0, 10),
        c(0.1, 0.4, (0.0, 50.0), (0.0, 50.0), Some(20), 35, 3, 4, 10),
        c(0.4, 0.1, (0.0, 20.0), (0.0, 20.0), Some(8), 14, 1, 5, 5),
        c(0.2, 0.5, (10.0, 80.0), (0.0, 60.0), Some(30), 45, 4, 2, 20),
        c(0.1, 0.1, (-0.5, 20.5), (-0.5, 20.5), Some(12), 15, 5, 5, 10),
        c(0.05, 0.3, (0.0, 100.0), (20.0, 100.0), None, 50, 1, 1, 20),
        c(0.45, 0.45, (30.0, 70.0), (0.0, 50.0), Some(45), 55, 0, 2, 25),
        c(0.25, 0.15, (0.0, 40.0), (5.0, 45.0), Some(30), 36, 3, 0, 15),
        c(0.35, 0.2, (-0.5, 50.5), (-0.5, 50.5), Some(1), 40, 5, 3, 30),
    ]
}

#[derive(Debug)]
pub struct SimComparison {
    pub chain_p_success: f64,
    pub z_p_success: f64,
    /// `None` when success is unreachable.
    pub z_delay: Option<f64>,
    pub censored: u64,
}

pub fn chain_vs_simulation() -> (Vec<SimComparison>, Duration) {
    let started = Instant::now();
    let out = sim_cases()
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            let belief = AuctionBelief {
                p_buy: k.p_buy,
                p_sell: k.p_sell,
                buy_dist: PriceDistribution::uniform(k.buy.0, k.buy.1).unwrap(),
                sell_dist: PriceDistribution::uniform(k.sell.0, k.sell.1).unwrap(),
                quote: k.quote,
            };
            let counts = StandingCounts { nb: k.nb, ns: k.ns };
            let ctx = SellerContext::new(k.cost, 1.0, 100);
            let mut cache = DecisionCache::new();
            let oc = build_chain(k.rho, &belief, &ctx, counts, &mut cache).unwrap();
            let s = outcome_summary(&oc.chain, oc.outcomes(), &oc.rewards(1.0).unwrap(), SolvePath::Dense).unwrap();
            let e = simulate_episodes(k.rho, &belief, counts, 5, 5, EPISODES, MAX_STEPS, 1000 + i as u64).unwrap();
            SimComparison {
                chain_p_success: s.p_success,
                z_p_success: (e.p_success() - s.p_success) / e.p_success_se(),
                z_delay: s.td_success.map(|td| (e.mean_success_delay() - td) / e.mean_success_delay_se()),
                censored: e.censored,
            }
        })
        .collect();
    (out, started.elapsed())
}

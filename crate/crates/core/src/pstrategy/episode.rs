//! Monte-Carlo episodes of the process the offer chain describes.
//!
//! Each clearing interval the standing prices are redrawn from the law the
//! current state imposes (independent draws conditioned on the state's
//! ordering), an arrival is drawn, and the book reacts by comparing actual
//! prices. Averaging over episodes estimates the success probability and the
//! mean number of intervals until success without using the chain.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AuctionBelief, PStrategyError, StandingCounts};
use crate::engine::Price;
use crate::ordering::PriceDistribution;

const TABLE_CELLS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeStats {
    pub episodes: u64,
    pub successes: u64,
    pub failures: u64,
    /// Episodes cut off at the step limit.
    pub censored: u64,
    delay_sum: f64,
    delay_sq_sum: f64,
}

impl EpisodeStats {
    pub fn p_success(&self) -> f64 {
        self.successes as f64 / self.episodes as f64
    }

    pub fn p_success_se(&self) -> f64 {
        let p = self.p_success();
        libm::sqrt(p * (1.0 - p) / self.episodes as f64)
    }

    /// Mean intervals until absorption over successful episodes.
    pub fn mean_success_delay(&self) -> f64 {
        self.delay_sum / self.successes as f64
    }

    pub fn mean_success_delay_se(&self) -> f64 {
        let n = self.successes as f64;
        let mean = self.mean_success_delay();
        let var = (self.delay_sq_sum - n * mean * mean) / (n - 1.0);
        libm::sqrt(var.max(0.0) / n)
    }
}

/// Inverse-CDF table for the lowest of the sells below `rho` when `a` buys
/// lie under it: density ∝ f_s(t) (G(ρ) − G(t))^(b−1) F_b(t)^a.
struct MinSellTable {
    lo: f64,
    hi: f64,
    cdf: Vec<f64>,
}

impl MinSellTable {
    fn build(a: usize, b: usize, rho: f64, belief: &AuctionBelief) -> Option<Self> {
        let (slo, shi) = belief.sell_dist.bounds();
        let lo = slo;
        let hi = shi.min(rho);
        if hi <= lo {
            return None;
        }
        let g_rho = belief.sell_dist.cdf(rho);
        let dens = |t: f64| {
            let up = (g_rho - belief.sell_dist.cdf(t)).max(0.0);
            libm::pow(up, (b - 1) as f64) * libm::pow(belief.buy_dist.cdf(t), a as f64)
        };
        let h = (hi - lo) / TABLE_CELLS as f64;
        let mut cdf = Vec::with_capacity(TABLE_CELLS + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 0..TABLE_CELLS {
            let x0 = lo + i as f64 * h;
            // Simpson's rule on each cell
            acc += h / 6.0 * (dens(x0) + 4.0 * dens(x0 + 0.5 * h) + dens(x0 + h));
            cdf.push(acc);
        }
        if acc <= 0.0 || !acc.is_finite() {
            return None;
        }
        for v in &mut cdf {
            *v /= acc;
        }
        Some(Self { lo, hi, cdf })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, TABLE_CELLS);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        let h = (self.hi - self.lo) / TABLE_CELLS as f64;
        self.lo + (i as f64 - 1.0 + frac) * h
    }
}

fn draw_between<R: Rng + ?Sized>(d: &PriceDistribution, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let (f0, f1) = (d.cdf(lo), d.cdf(hi));
    d.quantile(f0 + rng.random::<f64>() * (f1 - f0))
}

/// Prices behind one state: highest buy, lowest sell other than ours (or
/// none below ours), highest sell above ours.
struct Snapshot {
    max_buy: Option<f64>,
    min_below: Option<f64>,
    max_above: Option<f64>,
}

struct Sampler<'a> {
    belief: &'a AuctionBelief,
    rho: f64,
    tables: BTreeMap<(usize, usize), Option<MinSellTable>>,
}

impl Sampler<'_> {
    fn snapshot<R: Rng + ?Sized>(&mut self, a: usize, b: usize, m: usize, rng: &mut R) -> Snapshot {
        let (bd, sd, rho) = (&self.belief.buy_dist, &self.belief.sell_dist, self.rho);
        let mut max_above: Option<f64> = None;
        let shi = sd.bounds().1.max(rho);
        for _ in 0..m {
            let x = draw_between(sd, rho, shi, rng);
            max_above = Some(max_above.map_or(x, |v: f64| v.max(x)));
        }
        let (ceiling, min_below) = if b == 0 {
            (rho, None)
        } else {
            let belief = self.belief;
            let table = self.tables.entry((a, b)).or_insert_with(|| MinSellTable::build(a, b, rho, belief));
            let t = match table {
                Some(t) => t.sample(rng),
                None => rho,
            };
            (t, Some(t))
        };
        let blo = bd.bounds().0.min(ceiling);
        let mut max_buy: Option<f64> = None;
        for _ in 0..a {
            let x = draw_between(bd, blo, ceiling, rng);
            max_buy = Some(max_buy.map_or(x, |v: f64| v.max(x)));
        }
        Snapshot { max_buy, min_below, max_above }
    }
}

/// Runs `episodes` independent episodes of at most `max_steps` intervals.
#[allow(clippy::too_many_arguments)]
pub fn simulate_episodes(
    rho: Price,
    belief: &AuctionBelief,
    counts: StandingCounts,
    buy_capacity: usize,
    sell_capacity: usize,
    episodes: u64,
    max_steps: u64,
    seed: u64,
) -> Result<EpisodeStats, PStrategyError> {
    belief.validate()?;
    if counts.nb > buy_capacity || counts.ns > sell_capacity {
        return Err(PStrategyError::Counts { nb: counts.nb, ns: counts.ns });
    }
    let r = rho as f64;
    let sd = belief.sell_dist;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = Sampler { belief, rho: r, tables: BTreeMap::new() };
    let mut stats = EpisodeStats { episodes, ..Default::default() };
    let quote_floor = belief.quote.map(|q| q as f64).filter(|&q| sd.cdf(q) < 1.0);

    for _ in 0..episodes {
        if belief.quote.is_some_and(|q| rho <= q) {
            stats.successes += 1;
            continue;
        }
        // place our ask among the standing sells, each above the quote
        let mut below = 0;
        for _ in 0..counts.ns {
            let x = match quote_floor {
                Some(q) => draw_between(&sd, q, sd.bounds().1, &mut rng),
                None => sd.sample(&mut rng),
            };
            if x < r {
                below += 1;
            }
        }
        let (mut a, mut k, mut rank) = (counts.nb, counts.ns, below + 1);
        if counts.ns == sell_capacity {
            if below == counts.ns {
                stats.failures += 1;
                continue;
            }
            k = sell_capacity - 1;
        }
        let mut steps = 0u64;
        let outcome = loop {
            if steps == max_steps {
                break None;
            }
            steps += 1;
            let u: f64 = rng.random();
            if u >= belief.p_buy + belief.p_sell {
                continue;
            }
            let b = rank - 1;
            let m = k + 1 - rank;
            let snap = sampler.snapshot(a, b, m, &mut rng);
            if u < belief.p_buy {
                let x = belief.buy_dist.sample(&mut rng);
                let lowest = snap.min_below.unwrap_or(r);
                if x >= lowest {
                    if b == 0 {
                        break Some(true);
                    }
                    k -= 1;
                    rank -= 1;
                } else if a < buy_capacity {
                    a += 1;
                }
            } else {
                let x = sd.sample(&mut rng);
                if snap.max_buy.is_some_and(|mb| x <= mb) {
                    a -= 1;
                } else if k + 1 < sell_capacity {
                    k += 1;
                    if x < r {
                        rank += 1;
                    }
                } else {
                    let highest = snap.max_above.unwrap_or(r);
                    if x < highest {
                        if m == 0 {
                            break Some(false);
                        }
                        if x < r {
                            rank += 1;
                        }
                    }
                }
            }
        };
        match outcome {
            Some(true) => {
                stats.successes += 1;
                stats.delay_sum += steps as f64;
                stats.delay_sq_sum += (steps * steps) as f64;
            }
            Some(false) => stats.failures += 1,
            None => stats.censored += 1,
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn immediate_sale_episodes() {
        let b = AuctionBelief {
            p_buy: 0.3,
            p_sell: 0.3,
            buy_dist: PriceDistribution::uniform(0.0, 50.0).unwrap(),
            sell_dist: PriceDistribution::uniform(0.0, 50.0).unwrap(),
            quote: Some(30),
        };
        let s = simulate_episodes(25, &b, StandingCounts { nb: 1, ns: 0 }, 5, 5, 1000, 100, 1).unwrap();
        assert_eq!(s.successes, 1000);
        assert_eq!(s.mean_success_delay(), 0.0);
    }

    #[test]
    fn min_sell_table_is_a_cdf() {
        let b = AuctionBelief {
            p_buy: 0.3,
            p_sell: 0.3,
            buy_dist: PriceDistribution::uniform(0.0, 50.0).unwrap(),
            sell_dist: PriceDistribution::uniform(10.0, 60.0).unwrap(),
            quote: None,
        };
        let t = MinSellTable::build(2, 3, 40.0, &b).unwrap();
        assert_eq!(t.cdf[0], 0.0);
        assert!((t.cdf[TABLE_CELLS] - 1.0).abs() < 1e-15);
        assert!(t.cdf.windows(2).all(|w| w[0] <= w[1]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = t.sample(&mut rng);
            assert!((10.0..=40.0).contains(&x));
        }
    }
}

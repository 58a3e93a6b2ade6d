//! Probabilities that independent price draws fall in a given order.
//!
//! A pattern is a sequence of slots read as `x₁ ≤ x₂ ≤ … ≤ xₘ`, where each
//! slot is a buy draw, a sell draw, the seller's ask `ρ`, or some other fixed
//! price. The probability is computed exactly by forward integration:
//! `g₀ = 1`, a draw with density `f` maps `g` to `t ↦ ∫_{-∞}^t f g`, and a
//! constant `c` maps `g` to `t ↦ g(c)·1[c ≤ t]`. For uniform densities every
//! `gₖ` is a piecewise polynomial on the intervals cut by the distribution
//! bounds and the constants. Writing each piece in coordinates local to its
//! left end keeps every coefficient non-negative, so no cancellation occurs.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrderingError {
    #[error("distribution bounds must be finite with lower < upper, got [{lower}, {upper}]")]
    BadDistribution { lower: f64, upper: f64 },
    #[error("pattern has more than one rho slot")]
    MultipleRho,
    #[error("constant slot value {0} is not finite")]
    NonFiniteConstant(f64),
    #[error("rho {0} is not finite")]
    NonFiniteRho(f64),
    #[error("event pattern does not refine the given pattern")]
    NotARefinement,
    #[error("oracle needs at least 10000 samples, got {0}")]
    TooFewSamples(u64),
    #[error("insertion gap {gap} out of range for a pattern of {len} slots")]
    GapOutOfRange { gap: usize, len: usize },
}

/// Price distribution of incoming offers on one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PriceDistribution {
    Uniform { lower: f64, upper: f64 },
}

impl PriceDistribution {
    pub fn uniform(lower: f64, upper: f64) -> Result<Self, OrderingError> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(OrderingError::BadDistribution { lower, upper });
        }
        Ok(PriceDistribution::Uniform { lower, upper })
    }

    pub fn validate(&self) -> Result<(), OrderingError> {
        let (lower, upper) = self.bounds();
        Self::uniform(lower, upper).map(|_| ())
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            PriceDistribution::Uniform { lower, upper } => (lower, upper),
        }
    }

    /// CDF, clamped to 0 below and 1 above the support.
    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.bounds();
        if x <= lo {
            0.0
        } else if x >= hi {
            1.0
        } else {
            (x - lo) / (hi - lo)
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        let (lo, hi) = self.bounds();
        if x >= lo && x < hi {
            1.0 / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let (lo, hi) = self.bounds();
        lo + u.clamp(0.0, 1.0) * (hi - lo)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }

    pub(crate) fn key(&self) -> [u64; 2] {
        let (lo, hi) = self.bounds();
        [lo.to_bits(), hi.to_bits()]
    }
}

/// One position in an ordering pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Buy,
    Sell,
    Rho,
    Fixed(f64),
}

impl Slot {
    fn same_kind(self, other: Slot) -> bool {
        match (self, other) {
            (Slot::Fixed(a), Slot::Fixed(b)) => a.to_bits() == b.to_bits(),
            (a, b) => core::mem::discriminant(&a) == core::mem::discriminant(&b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum SlotKey {
    Buy,
    Sell,
    Rho,
    Fixed(u64),
}

impl From<Slot> for SlotKey {
    fn from(s: Slot) -> Self {
        match s {
            Slot::Buy => SlotKey::Buy,
            Slot::Sell => SlotKey::Sell,
            Slot::Rho => SlotKey::Rho,
            Slot::Fixed(v) => SlotKey::Fixed(v.to_bits()),
        }
    }
}

/// Nondecreasing sequence of slots.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Slot>", into = "Vec<Slot>")]
pub struct OrderingPattern {
    slots: Vec<Slot>,
}

impl TryFrom<Vec<Slot>> for OrderingPattern {
    type Error = OrderingError;
    fn try_from(slots: Vec<Slot>) -> Result<Self, OrderingError> {
        Self::new(slots)
    }
}

impl From<OrderingPattern> for Vec<Slot> {
    fn from(p: OrderingPattern) -> Self {
        p.slots
    }
}

impl OrderingPattern {
    pub fn new(slots: Vec<Slot>) -> Result<Self, OrderingError> {
        if slots.iter().filter(|s| matches!(s, Slot::Rho)).count() > 1 {
            return Err(OrderingError::MultipleRho);
        }
        for s in &slots {
            if let Slot::Fixed(v) = s {
                if !v.is_finite() {
                    return Err(OrderingError::NonFiniteConstant(*v));
                }
            }
        }
        Ok(Self { slots })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Appends `count` copies of `slot`.
    pub fn then(mut self, slot: Slot, count: usize) -> Result<Self, OrderingError> {
        self.slots.extend(core::iter::repeat_n(slot, count));
        Self::new(self.slots)
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn buy_count(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, Slot::Buy)).count()
    }

    pub fn sell_count(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, Slot::Sell)).count()
    }

    pub fn has_rho(&self) -> bool {
        self.slots.iter().any(|s| matches!(s, Slot::Rho))
    }

    /// Positions in `self` that `given` occupies, if `given` is a
    /// subsequence of `self`.
    pub fn embedding_of(&self, given: &OrderingPattern) -> Option<Vec<usize>> {
        let mut out = Vec::with_capacity(given.len());
        let mut it = self.slots.iter().enumerate();
        for g in &given.slots {
            loop {
                let (i, s) = it.next()?;
                if s.same_kind(*g) {
                    out.push(i);
                    break;
                }
            }
        }
        Some(out)
    }

    /// Pattern with one new draw of kind `slot` inserted at `gap`
    /// (`0..=len`), and how many gaps produce the same pattern.
    pub fn insert(&self, gap: usize, slot: Slot) -> Result<(OrderingPattern, usize), OrderingError> {
        if gap > self.len() {
            return Err(OrderingError::GapOutOfRange { gap, len: self.len() });
        }
        let mut slots = self.slots.clone();
        slots.insert(gap, slot);
        let mut lo = gap;
        while lo > 0 && slots[lo - 1].same_kind(slot) {
            lo -= 1;
        }
        let mut hi = gap;
        while hi + 1 < slots.len() && slots[hi + 1].same_kind(slot) {
            hi += 1;
        }
        Ok((OrderingPattern::new(slots)?, hi - lo + 1))
    }

    fn key(&self) -> Vec<SlotKey> {
        self.slots.iter().map(|&s| s.into()).collect()
    }
}

/// Piecewise polynomial over sorted breakpoints `xs`: constant `left` below
/// `xs[0]`, `pieces[j]` on `[xs[j], xs[j+1])` in powers of `t - xs[j]`,
/// constant `right` from the last breakpoint on.
struct Piecewise {
    left: f64,
    pieces: Vec<Vec<f64>>,
    right: f64,
}

impl Piecewise {
    fn at_breakpoint(&self, j: usize) -> f64 {
        if j < self.pieces.len() {
            self.pieces[j][0]
        } else {
            self.right
        }
    }
}

fn value_of(slot: Slot, rho: f64) -> Option<f64> {
    match slot {
        Slot::Rho => Some(rho),
        Slot::Fixed(v) => Some(v),
        _ => None,
    }
}

/// Probability that independent draws realize `pattern`'s interleaving.
pub fn ordering_probability(
    pattern: &OrderingPattern,
    buy: &PriceDistribution,
    sell: &PriceDistribution,
    rho: f64,
) -> Result<f64, OrderingError> {
    buy.validate()?;
    sell.validate()?;
    if pattern.has_rho() && !rho.is_finite() {
        return Err(OrderingError::NonFiniteRho(rho));
    }
    Ok(integrate(pattern.slots(), buy, sell, rho))
}

fn integrate(slots: &[Slot], buy: &PriceDistribution, sell: &PriceDistribution, rho: f64) -> f64 {
    if slots.is_empty() {
        return 1.0;
    }
    let mut xs: Vec<f64> = Vec::with_capacity(8);
    let mut uses_buy = false;
    let mut uses_sell = false;
    for &s in slots {
        match s {
            Slot::Buy => uses_buy = true,
            Slot::Sell => uses_sell = true,
            other => xs.push(value_of(other, rho).unwrap()),
        }
    }
    if uses_buy {
        let (a, b) = buy.bounds();
        xs.extend([a, b]);
    }
    if uses_sell {
        let (a, b) = sell.bounds();
        xs.extend([a, b]);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let k = xs.len();
    let widths: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();

    let mut g = Piecewise { left: 1.0, pieces: vec![vec![1.0]; k - 1], right: 1.0 };
    for &slot in slots {
        g = match slot {
            Slot::Buy | Slot::Sell => {
                let dist = if matches!(slot, Slot::Buy) { buy } else { sell };
                let mut acc = 0.0;
                let mut pieces = Vec::with_capacity(k - 1);
                for (j, old) in g.pieces.iter().enumerate() {
                    let d = dist.density(0.5 * (xs[j] + xs[j + 1]));
                    if d == 0.0 {
                        pieces.push(vec![acc]);
                        continue;
                    }
                    let h = widths[j];
                    let mut p = Vec::with_capacity(old.len() + 1);
                    p.push(acc);
                    let mut hp = h;
                    let mut area = 0.0;
                    for (i, &c) in old.iter().enumerate() {
                        let q = d * c / (i as f64 + 1.0);
                        p.push(q);
                        area += q * hp;
                        hp *= h;
                    }
                    acc += area;
                    pieces.push(p);
                }
                Piecewise { left: 0.0, pieces, right: acc }
            }
            Slot::Rho | Slot::Fixed(_) => {
                let c = value_of(slot, rho).unwrap();
                let j = xs.partition_point(|&x| x < c);
                let v = g.at_breakpoint(j);
                let pieces = (0..k - 1).map(|i| vec![if i < j { 0.0 } else { v }]).collect();
                Piecewise { left: 0.0, pieces, right: v }
            }
        };
        debug_assert!(g.left == 0.0);
    }
    g.right.clamp(0.0, 1.0)
}

/// `P(event) / P(given)` where `event` refines `given`; `0` if `P(given) = 0`.
pub fn conditional_ordering_probability(
    event: &OrderingPattern,
    given: &OrderingPattern,
    buy: &PriceDistribution,
    sell: &PriceDistribution,
    rho: f64,
) -> Result<f64, OrderingError> {
    if event.embedding_of(given).is_none() {
        return Err(OrderingError::NotARefinement);
    }
    let den = ordering_probability(given, buy, sell, rho)?;
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((ordering_probability(event, buy, sell, rho)? / den).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct CacheKey {
    slots: Vec<SlotKey>,
    dists: [u64; 4],
    rho: u64,
}

/// Memo of ordering probabilities keyed on pattern, distribution bounds and
/// `ρ`. Owned by one caller; not synchronized.
#[derive(Debug, Default, Clone)]
pub struct OrderingCache {
    map: BTreeMap<CacheKey, f64>,
    hits: u64,
    misses: u64,
}

impl OrderingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }

    pub fn ordering_probability(
        &mut self,
        pattern: &OrderingPattern,
        buy: &PriceDistribution,
        sell: &PriceDistribution,
        rho: f64,
    ) -> Result<f64, OrderingError> {
        let [b0, b1] = buy.key();
        let [s0, s1] = sell.key();
        let key = CacheKey {
            slots: pattern.key(),
            dists: [b0, b1, s0, s1],
            // rho is irrelevant to patterns without a rho slot
            rho: if pattern.has_rho() { rho.to_bits() } else { 0 },
        };
        if let Some(&v) = self.map.get(&key) {
            self.hits += 1;
            return Ok(v);
        }
        self.misses += 1;
        let v = ordering_probability(pattern, buy, sell, rho)?;
        self.map.insert(key, v);
        Ok(v)
    }

    pub fn conditional(
        &mut self,
        event: &OrderingPattern,
        given: &OrderingPattern,
        buy: &PriceDistribution,
        sell: &PriceDistribution,
        rho: f64,
    ) -> Result<f64, OrderingError> {
        if event.embedding_of(given).is_none() {
            return Err(OrderingError::NotARefinement);
        }
        let den = self.ordering_probability(given, buy, sell, rho)?;
        if den == 0.0 {
            return Ok(0.0);
        }
        Ok((self.ordering_probability(event, buy, sell, rho)? / den).min(1.0))
    }

    /// Probability that one new draw of kind `slot` lands in `gap` of
    /// `given`, counting every gap that yields the same pattern once each.
    /// Summed over all distinct insertion results this is 1.
    pub fn insertion(
        &mut self,
        given: &OrderingPattern,
        gap: usize,
        slot: Slot,
        buy: &PriceDistribution,
        sell: &PriceDistribution,
        rho: f64,
    ) -> Result<f64, OrderingError> {
        let (event, mult) = given.insert(gap, slot)?;
        Ok((mult as f64 * self.conditional(&event, given, buy, sell, rho)?).min(1.0))
    }
}

/// Query answered by [`mc_oracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OracleQuery {
    Pattern { pattern: OrderingPattern },
    Conditional { event: OrderingPattern, given: OrderingPattern },
}

/// Monte-Carlo frequency estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// Samples that entered the estimate (all draws, or those meeting the
    /// conditioning event).
    pub effective_samples: u64,
}

/// Sampling oracle for ordering probabilities; deterministic given `seed`.
pub fn mc_oracle(
    query: &OracleQuery,
    buy: &PriceDistribution,
    sell: &PriceDistribution,
    rho: f64,
    samples: u64,
    seed: u64,
) -> Result<OracleEstimate, OrderingError> {
    if samples < 10_000 {
        return Err(OrderingError::TooFewSamples(samples));
    }
    buy.validate()?;
    sell.validate()?;
    let (pattern, given_pos) = match query {
        OracleQuery::Pattern { pattern } => (pattern, None),
        OracleQuery::Conditional { event, given } => {
            (event, Some(event.embedding_of(given).ok_or(OrderingError::NotARefinement)?))
        }
    };
    let slots = pattern.slots();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; slots.len()];
    let mut hits = 0u64;
    let mut trials = 0u64;
    for _ in 0..samples {
        for (v, s) in values.iter_mut().zip(slots) {
            *v = match s {
                Slot::Buy => buy.sample(&mut rng),
                Slot::Sell => sell.sample(&mut rng),
                other => value_of(*other, rho).unwrap(),
            };
        }
        if let Some(pos) = &given_pos {
            if !pos.windows(2).all(|w| values[w[0]] <= values[w[1]]) {
                continue;
            }
        }
        trials += 1;
        if values.windows(2).all(|w| w[0] <= w[1]) {
            hits += 1;
        }
    }
    if trials == 0 {
        return Ok(OracleEstimate { estimate: 0.0, std_error: 0.0, effective_samples: 0 });
    }
    let p = hits as f64 / trials as f64;
    Ok(OracleEstimate {
        estimate: p,
        std_error: libm::sqrt(p * (1.0 - p) / trials as f64),
        effective_samples: trials,
    })
}

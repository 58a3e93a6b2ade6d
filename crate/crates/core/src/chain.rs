//! Absorbing Markov chain analysis.
//!
//! A chain is stored as a square row-stochastic matrix over labelled states,
//! some of which are absorbing. The canonical partition splits the
//! transient block `Q` from the transient-to-absorbing block `R`; from there
//!
//! * the fundamental matrix `M = (I - Q)⁻¹` counts expected visits,
//! * `F = M R` gives absorption probabilities,
//! * conditioning on an absorbing target rescales every arc by
//!   `f_j / f_i` and yields a chain that is absorbed at the target surely,
//! * the accumulated per-transition reward along paths that end at a target
//!   is read off the conditioned chain's fundamental matrix.
//!
//! Two solver routes are provided. [`analyze_dense`] builds the conditioned
//! chains and inverts them explicitly. [`analyze_fast`] factors `I - Q` once
//! with an envelope LU and uses the h-transform identity
//! `M⁽ᵃ⁾_{si} = M_{si} f_{ia} / f_{sa}` so conditioned chains are never
//! materialized. Both are kept and cross-checked in the tests.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{EnvelopeLu, LinalgError, Matrix};

/// Row-sum tolerance enforced on every validated chain.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// States whose conditional absorption probability falls at or below this
/// are dropped when conditioning on an absorbing target.
pub const CONDITIONING_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("chain has no states")]
    Empty,
    #[error("transition matrix is {rows}x{cols}, expected {n}x{n}")]
    Shape { rows: usize, cols: usize, n: usize },
    #[error("state index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("chain has no absorbing state")]
    NoAbsorbingState,
    #[error("invalid probability {value} on arc {from} -> {to}")]
    InvalidProbability { from: String, to: String, value: f64 },
    #[error("row of state {state} sums to {sum}")]
    RowSum { state: String, sum: f64 },
    #[error("absorbing state {state} leaks probability to other states")]
    AbsorbingNotClosed { state: String },
    #[error("no absorbing state is reachable from transient state {state}")]
    AbsorptionUnreachable { state: String },
    #[error("state {state} is not absorbing")]
    NotAbsorbing { state: String },
    #[error("absorption target {target} is unreachable from the start state (probability {probability})")]
    UnreachableTarget { target: String, probability: f64 },
    #[error("success and failure outcomes must be two distinct absorbing states")]
    MissingOutcome,
    #[error("invalid reward specification: {0}")]
    InvalidReward(&'static str),
    #[error("singular (I - Q): non-absorbing component near transient position {0}")]
    Singular(usize),
}

impl From<LinalgError> for ChainError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Singular { pivot } => ChainError::Singular(pivot),
            LinalgError::Dimension { expected, got } => {
                ChainError::Shape { rows: got, cols: got, n: expected }
            }
        }
    }
}

/// On-disk form of a chain: labels, absorbing indices, row-major rows and
/// the start index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub states: Vec<String>,
    pub absorbing: Vec<usize>,
    pub transitions: Vec<Vec<f64>>,
    pub start: usize,
}

/// A validated finite absorbing Markov chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainSpec", into = "ChainSpec")]
pub struct AbsorbingChain {
    states: Vec<String>,
    is_absorbing: Vec<bool>,
    transitions: Matrix,
    start: usize,
}

impl TryFrom<ChainSpec> for AbsorbingChain {
    type Error = ChainError;
    fn try_from(spec: ChainSpec) -> Result<Self, ChainError> {
        let n = spec.states.len();
        let rows = spec.transitions.len();
        let cols = spec.transitions.first().map_or(0, Vec::len);
        if spec.transitions.iter().any(|r| r.len() != cols) {
            return Err(ChainError::Shape { rows, cols: usize::MAX, n });
        }
        let m = Matrix::from_rows(&spec.transitions)?;
        AbsorbingChain::new(spec.states, &spec.absorbing, m, spec.start)
    }
}

impl From<AbsorbingChain> for ChainSpec {
    fn from(c: AbsorbingChain) -> Self {
        ChainSpec {
            absorbing: c.absorbing_states().collect(),
            transitions: c.transitions.to_rows(),
            states: c.states,
            start: c.start,
        }
    }
}

impl AbsorbingChain {
    pub fn new(
        states: Vec<String>,
        absorbing: &[usize],
        transitions: Matrix,
        start: usize,
    ) -> Result<Self, ChainError> {
        let n = states.len();
        if n == 0 {
            return Err(ChainError::Empty);
        }
        if transitions.rows() != n || transitions.cols() != n {
            return Err(ChainError::Shape { rows: transitions.rows(), cols: transitions.cols(), n });
        }
        if start >= n {
            return Err(ChainError::IndexOutOfRange(start));
        }
        let mut is_absorbing = vec![false; n];
        for &a in absorbing {
            if a >= n {
                return Err(ChainError::IndexOutOfRange(a));
            }
            is_absorbing[a] = true;
        }
        let chain = Self { states, is_absorbing, transitions, start };
        chain.validate()?;
        Ok(chain)
    }

    fn validate(&self) -> Result<(), ChainError> {
        let n = self.len();
        if !self.is_absorbing.iter().any(|&a| a) {
            return Err(ChainError::NoAbsorbingState);
        }
        for i in 0..n {
            let row = self.transitions.row(i);
            let mut sum = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 || p > 1.0 + ROW_SUM_TOLERANCE {
                    return Err(ChainError::InvalidProbability {
                        from: self.states[i].clone(),
                        to: self.states[j].clone(),
                        value: p,
                    });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(ChainError::RowSum { state: self.states[i].clone(), sum });
            }
            if self.is_absorbing[i] && row[i] != 1.0 {
                return Err(ChainError::AbsorbingNotClosed { state: self.states[i].clone() });
            }
        }
        // reverse breadth-first search from the absorbing set
        let mut reaches = self.is_absorbing.clone();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| reaches[i]).collect();
        while let Some(j) = queue.pop_front() {
            for i in 0..n {
                if !reaches[i] && self.transitions[(i, j)] > 0.0 {
                    reaches[i] = true;
                    queue.push_back(i);
                }
            }
        }
        if let Some(i) = reaches.iter().position(|&r| !r) {
            return Err(ChainError::AbsorptionUnreachable { state: self.states[i].clone() });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.states
    }

    pub fn label(&self, i: usize) -> &str {
        &self.states[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn transitions(&self) -> &Matrix {
        &self.transitions
    }

    pub fn probability(&self, from: usize, to: usize) -> f64 {
        self.transitions[(from, to)]
    }

    pub fn is_absorbing(&self, i: usize) -> bool {
        self.is_absorbing[i]
    }

    pub fn absorbing_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.is_absorbing[i])
    }

    pub fn transient_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| !self.is_absorbing[i])
    }

    /// Copy of this chain with a different start state.
    pub fn with_start(&self, start: usize) -> Result<Self, ChainError> {
        if start >= self.len() {
            return Err(ChainError::IndexOutOfRange(start));
        }
        let mut c = self.clone();
        c.start = start;
        Ok(c)
    }
}

/// Incremental construction in insertion order; indices returned by
/// [`ChainBuilder::add_state`] are the final state indices.
#[derive(Debug, Clone, Default)]
pub struct ChainBuilder {
    states: Vec<String>,
    absorbing: Vec<usize>,
    arcs: Vec<(usize, usize, f64)>,
    start: usize,
}

impl ChainBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_state(&mut self, label: impl Into<String>, absorbing: bool) -> usize {
        let idx = self.states.len();
        self.states.push(label.into());
        if absorbing {
            self.absorbing.push(idx);
        }
        idx
    }

    /// Adds `p` to the arc `from -> to` (arcs accumulate).
    pub fn arc(&mut self, from: usize, to: usize, p: f64) -> &mut Self {
        self.arcs.push((from, to, p));
        self
    }

    pub fn start(&mut self, s: usize) -> &mut Self {
        self.start = s;
        self
    }

    pub fn build(&self) -> Result<AbsorbingChain, ChainError> {
        let n = self.states.len();
        let mut m = Matrix::zeros(n, n);
        for &(i, j, p) in &self.arcs {
            if i >= n || j >= n {
                return Err(ChainError::IndexOutOfRange(i.max(j)));
            }
            m[(i, j)] += p;
        }
        for &a in &self.absorbing {
            m[(a, a)] = 1.0;
        }
        AbsorbingChain::new(self.states.clone(), &self.absorbing, m, self.start)
    }
}

/// `Q` and `R` with the position maps back to chain indices.
#[derive(Debug, Clone)]
pub struct CanonicalForm {
    pub transient: Vec<usize>,
    pub absorbing: Vec<usize>,
    pub q: Matrix,
    pub r: Matrix,
    transient_pos: Vec<Option<usize>>,
    absorbing_pos: Vec<Option<usize>>,
}

impl CanonicalForm {
    pub fn transient_position(&self, state: usize) -> Option<usize> {
        self.transient_pos[state]
    }

    pub fn absorbing_position(&self, state: usize) -> Option<usize> {
        self.absorbing_pos[state]
    }
}

pub fn canonical_partition(chain: &AbsorbingChain) -> CanonicalForm {
    let n = chain.len();
    let transient: Vec<usize> = chain.transient_states().collect();
    let absorbing: Vec<usize> = chain.absorbing_states().collect();
    let mut transient_pos = vec![None; n];
    let mut absorbing_pos = vec![None; n];
    for (p, &i) in transient.iter().enumerate() {
        transient_pos[i] = Some(p);
    }
    for (p, &i) in absorbing.iter().enumerate() {
        absorbing_pos[i] = Some(p);
    }
    let mut q = Matrix::zeros(transient.len(), transient.len());
    let mut r = Matrix::zeros(transient.len(), absorbing.len());
    for (pi, &i) in transient.iter().enumerate() {
        for (pj, &j) in transient.iter().enumerate() {
            q[(pi, pj)] = chain.probability(i, j);
        }
        for (pj, &j) in absorbing.iter().enumerate() {
            r[(pi, pj)] = chain.probability(i, j);
        }
    }
    CanonicalForm { transient, absorbing, q, r, transient_pos, absorbing_pos }
}

/// `M = (I - Q)⁻¹` by pivoted Gauss-Jordan.
pub fn fundamental_matrix(q: &Matrix) -> Result<Matrix, ChainError> {
    Ok(q.identity_minus().inverse()?)
}

/// `F = M R`, one row per transient state, one column per absorbing state
/// (canonical order).
pub fn absorption_probabilities(chain: &AbsorbingChain) -> Result<Matrix, ChainError> {
    let cf = canonical_partition(chain);
    let m = fundamental_matrix(&cf.q)?;
    Ok(m.mul(&cf.r)?)
}

fn absorption_from(
    chain: &AbsorbingChain,
    cf: &CanonicalForm,
    f: &Matrix,
    state: usize,
    target: usize,
) -> f64 {
    match cf.transient_position(state) {
        Some(p) => f[(p, cf.absorbing_position(target).unwrap())],
        None => {
            if state == target {
                1.0
            } else {
                debug_assert!(chain.is_absorbing(state));
                0.0
            }
        }
    }
}

fn require_absorbing(chain: &AbsorbingChain, target: usize) -> Result<(), ChainError> {
    if target >= chain.len() {
        return Err(ChainError::IndexOutOfRange(target));
    }
    if !chain.is_absorbing(target) {
        return Err(ChainError::NotAbsorbing { state: chain.label(target).into() });
    }
    Ok(())
}

/// Conditioned chain plus the original index of each of its states.
fn condition_with_map(
    chain: &AbsorbingChain,
    target: usize,
) -> Result<(AbsorbingChain, Vec<usize>), ChainError> {
    require_absorbing(chain, target)?;
    let cf = canonical_partition(chain);
    let f = fundamental_matrix(&cf.q)?.mul(&cf.r)?;
    let f_of = |i: usize| absorption_from(chain, &cf, &f, i, target);
    let f_start = f_of(chain.start());
    if f_start <= CONDITIONING_EPSILON {
        return Err(ChainError::UnreachableTarget {
            target: chain.label(target).into(),
            probability: f_start,
        });
    }
    let kept: Vec<usize> = (0..chain.len())
        .filter(|&i| i == target || (!chain.is_absorbing(i) && f_of(i) > CONDITIONING_EPSILON))
        .collect();
    let mut new_index = vec![usize::MAX; chain.len()];
    for (k, &i) in kept.iter().enumerate() {
        new_index[i] = k;
    }
    let n = kept.len();
    let mut m = Matrix::zeros(n, n);
    for (ni, &i) in kept.iter().enumerate() {
        if i == target {
            m[(ni, ni)] = 1.0;
            continue;
        }
        let fi = f_of(i);
        let mut sum = 0.0;
        for (nj, &j) in kept.iter().enumerate() {
            let p = chain.probability(i, j);
            if p == 0.0 {
                continue;
            }
            let v = if j == target { p / fi } else { f_of(j) * p / fi };
            m[(ni, nj)] = v;
            sum += v;
        }
        // dropped states carry at most epsilon of mass; renormalize it away
        for v in m.row_mut(ni) {
            *v /= sum;
        }
    }
    let labels = kept.iter().map(|&i| chain.label(i).into()).collect();
    let c = AbsorbingChain::new(labels, &[new_index[target]], m, new_index[chain.start()])?;
    Ok((c, kept))
}

/// Chain of the paths that end in `target`, over `target` plus the transient
/// states that can still reach it.
pub fn condition_on_absorbing(
    chain: &AbsorbingChain,
    target: usize,
) -> Result<AbsorbingChain, ChainError> {
    condition_with_map(chain, target).map(|(c, _)| c)
}

/// Per-transition rewards `ω_ij`.
///
/// By default every transition leaving a transient state costs
/// `per_transition_cost` and absorbing self-loops cost nothing. Transient
/// states listed as free sources (a bookkeeping start state, for example)
/// have zero-cost outgoing arcs. A full matrix override replaces all of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    per_transition_cost: f64,
    #[serde(default)]
    free_sources: Vec<usize>,
    #[serde(default)]
    overrides: Option<Matrix>,
}

impl RewardSpec {
    pub fn constant(cost: f64) -> Result<Self, ChainError> {
        if !cost.is_finite() || cost < 0.0 {
            return Err(ChainError::InvalidReward("cost must be finite and non-negative"));
        }
        Ok(Self { per_transition_cost: cost, free_sources: Vec::new(), overrides: None })
    }

    pub fn zero() -> Self {
        Self { per_transition_cost: 0.0, free_sources: Vec::new(), overrides: None }
    }

    pub fn with_free_source(mut self, state: usize) -> Self {
        self.free_sources.push(state);
        self
    }

    pub fn from_matrix(weights: Matrix) -> Result<Self, ChainError> {
        if weights.as_slice().iter().any(|w| !w.is_finite()) {
            return Err(ChainError::InvalidReward("reward matrix entries must be finite"));
        }
        Ok(Self { per_transition_cost: 0.0, free_sources: Vec::new(), overrides: Some(weights) })
    }

    pub fn per_transition_cost(&self) -> f64 {
        self.per_transition_cost
    }

    fn check(&self, chain: &AbsorbingChain) -> Result<(), ChainError> {
        if let Some(w) = &self.overrides {
            if w.rows() != chain.len() || w.cols() != chain.len() {
                return Err(ChainError::InvalidReward("reward matrix shape differs from chain"));
            }
            if chain.absorbing_states().any(|a| w[(a, a)] != 0.0) {
                return Err(ChainError::InvalidReward("absorbing self-loop rewards must be zero"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, chain: &AbsorbingChain, i: usize, j: usize) -> f64 {
        if let Some(w) = &self.overrides {
            return w[(i, j)];
        }
        if chain.is_absorbing(i) || self.free_sources.contains(&i) {
            0.0
        } else {
            self.per_transition_cost
        }
    }
}

/// Everything the dense route computes for a chain.
#[derive(Debug, Clone)]
pub struct AbsorptionReport {
    pub canonical: CanonicalForm,
    /// `M`, transient x transient in canonical order.
    pub fundamental: Matrix,
    /// `F`, transient x absorbing in canonical order.
    pub absorb_prob: Matrix,
    /// Absorption probability from the start state, per absorbing state.
    pub start_absorb: Vec<f64>,
    /// Per absorbing state: expected visits to each transient state (canonical
    /// order) on paths from the start that end there. `None` if unreachable.
    pub conditioned_visits: Vec<Option<Vec<f64>>>,
    /// Per absorbing state: accumulated reward `TD` from the start.
    pub rewards: Vec<Option<f64>>,
}

/// Reference route: explicit inverses and explicitly conditioned chains.
pub fn analyze_dense(
    chain: &AbsorbingChain,
    rewards: &RewardSpec,
) -> Result<AbsorptionReport, ChainError> {
    rewards.check(chain)?;
    let cf = canonical_partition(chain);
    let fundamental = fundamental_matrix(&cf.q)?;
    let absorb_prob = fundamental.mul(&cf.r)?;
    let start = chain.start();
    let start_absorb: Vec<f64> = cf
        .absorbing
        .iter()
        .map(|&a| absorption_from(chain, &cf, &absorb_prob, start, a))
        .collect();
    let mut conditioned_visits = Vec::with_capacity(cf.absorbing.len());
    let mut td = Vec::with_capacity(cf.absorbing.len());
    for (k, &a) in cf.absorbing.iter().enumerate() {
        if start_absorb[k] <= CONDITIONING_EPSILON {
            conditioned_visits.push(None);
            td.push(None);
            continue;
        }
        if chain.is_absorbing(start) {
            conditioned_visits.push(Some(vec![0.0; cf.transient.len()]));
            td.push(Some(0.0));
            continue;
        }
        let (cond, kept) = condition_with_map(chain, a)?;
        let ccf = canonical_partition(&cond);
        let cm = fundamental_matrix(&ccf.q)?;
        let s = ccf.transient_position(cond.start()).expect("start is transient");
        let mut visits = vec![0.0; cf.transient.len()];
        let mut total = 0.0;
        for (pi, &ci) in ccf.transient.iter().enumerate() {
            let mu = cm[(s, pi)];
            let orig_i = kept[ci];
            visits[cf.transient_position(orig_i).unwrap()] = mu;
            let mut step = 0.0;
            for cj in 0..cond.len() {
                let p = cond.probability(ci, cj);
                if p != 0.0 {
                    step += p * rewards.weight(chain, orig_i, kept[cj]);
                }
            }
            total += mu * step;
        }
        conditioned_visits.push(Some(visits));
        td.push(Some(total));
    }
    Ok(AbsorptionReport {
        canonical: cf,
        fundamental,
        absorb_prob,
        start_absorb,
        conditioned_visits,
        rewards: td,
    })
}

/// What the fast route computes: `F` in full, plus start-row quantities.
#[derive(Debug, Clone)]
pub struct StartAnalysis {
    pub canonical: CanonicalForm,
    pub absorb_prob: Matrix,
    pub start_absorb: Vec<f64>,
    /// Row `start` of `M` (unconditioned expected visits), canonical order.
    pub start_visits: Vec<f64>,
    pub conditioned_visits: Vec<Option<Vec<f64>>>,
    pub rewards: Vec<Option<f64>>,
}

/// Fast route: one envelope LU of `I - Q`, then `(I - Q) X = R` and
/// `(I - Q)ᵀ x = e_start`.
pub fn analyze_fast(
    chain: &AbsorbingChain,
    rewards: &RewardSpec,
) -> Result<StartAnalysis, ChainError> {
    rewards.check(chain)?;
    let cf = canonical_partition(chain);
    let t = cf.transient.len();
    let a = cf.absorbing.len();
    let start = chain.start();
    if chain.is_absorbing(start) {
        let start_absorb: Vec<f64> =
            cf.absorbing.iter().map(|&x| if x == start { 1.0 } else { 0.0 }).collect();
        let lu = EnvelopeLu::factor(&cf.q.identity_minus())?;
        let mut absorb_prob = cf.r.clone();
        solve_columns(&lu, &mut absorb_prob);
        return Ok(StartAnalysis {
            conditioned_visits: start_absorb
                .iter()
                .map(|&p| if p > 0.0 { Some(vec![0.0; t]) } else { None })
                .collect(),
            rewards: start_absorb.iter().map(|&p| if p > 0.0 { Some(0.0) } else { None }).collect(),
            start_absorb,
            start_visits: vec![0.0; t],
            absorb_prob,
            canonical: cf,
        });
    }
    let lu = EnvelopeLu::factor(&cf.q.identity_minus())?;
    let mut absorb_prob = cf.r.clone();
    solve_columns(&lu, &mut absorb_prob);
    let s = cf.transient_position(start).unwrap();
    let mut visits = vec![0.0; t];
    visits[s] = 1.0;
    lu.solve_transpose_in_place(&mut visits);

    let start_absorb: Vec<f64> = (0..a).map(|k| absorb_prob[(s, k)]).collect();
    let mut conditioned_visits = Vec::with_capacity(a);
    let mut td = Vec::with_capacity(a);
    for k in 0..a {
        let fs = start_absorb[k];
        if fs <= CONDITIONING_EPSILON {
            conditioned_visits.push(None);
            td.push(None);
            continue;
        }
        let target = cf.absorbing[k];
        let mut total = 0.0;
        let mut cv = vec![0.0; t];
        for (pi, &i) in cf.transient.iter().enumerate() {
            let fi = absorb_prob[(pi, k)];
            cv[pi] = visits[pi] * fi / fs;
            if visits[pi] == 0.0 {
                continue;
            }
            let row = chain.transitions().row(i);
            let mut w = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let fj = match cf.transient_position(j) {
                    Some(pj) => absorb_prob[(pj, k)],
                    None if j == target => 1.0,
                    None => 0.0,
                };
                if fj != 0.0 {
                    w += p * fj * rewards.weight(chain, i, j);
                }
            }
            total += visits[pi] * w;
        }
        conditioned_visits.push(Some(cv));
        td.push(Some(total / fs));
    }
    Ok(StartAnalysis {
        canonical: cf,
        absorb_prob,
        start_absorb,
        start_visits: visits,
        conditioned_visits,
        rewards: td,
    })
}

fn solve_columns(lu: &EnvelopeLu, rhs: &mut Matrix) {
    let mut col = vec![0.0; rhs.rows()];
    for k in 0..rhs.cols() {
        for i in 0..rhs.rows() {
            col[i] = rhs[(i, k)];
        }
        lu.solve_in_place(&mut col);
        for i in 0..rhs.rows() {
            rhs[(i, k)] = col[i];
        }
    }
}

/// `TD` for paths that end in `target` (reference route).
pub fn accumulated_reward(
    chain: &AbsorbingChain,
    target: usize,
    rewards: &RewardSpec,
) -> Result<f64, ChainError> {
    require_absorbing(chain, target)?;
    let report = analyze_dense(chain, rewards)?;
    let k = report.canonical.absorbing_position(target).unwrap();
    report.rewards[k].ok_or_else(|| ChainError::UnreachableTarget {
        target: chain.label(target).into(),
        probability: report.start_absorb[k],
    })
}

/// Monotone utility over payoffs.
pub trait UtilityCurve {
    fn utility(&self, payoff: f64) -> f64;
}

/// Identity utility.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskNeutral;

impl UtilityCurve for RiskNeutral {
    fn utility(&self, payoff: f64) -> f64 {
        payoff
    }
}

/// Adapts a closure.
pub struct CurveFn<F>(pub F);

impl<F: Fn(f64) -> f64> UtilityCurve for CurveFn<F> {
    fn utility(&self, payoff: f64) -> f64 {
        (self.0)(payoff)
    }
}

impl<F> fmt::Debug for CurveFn<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CurveFn")
    }
}

impl<T: UtilityCurve + ?Sized> UtilityCurve for Arc<T> {
    fn utility(&self, payoff: f64) -> f64 {
        (**self).utility(payoff)
    }
}

impl<T: UtilityCurve + ?Sized> UtilityCurve for &T {
    fn utility(&self, payoff: f64) -> f64 {
        (**self).utility(payoff)
    }
}

/// Which absorbing states count as success and failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcomes {
    pub success: usize,
    pub failure: usize,
}

impl Outcomes {
    fn check(&self, chain: &AbsorbingChain) -> Result<(), ChainError> {
        let ok = |i: usize| i < chain.len() && chain.is_absorbing(i);
        if self.success == self.failure || !ok(self.success) || !ok(self.failure) {
            return Err(ChainError::MissingOutcome);
        }
        Ok(())
    }
}

/// Payoffs before delay: the success payoff (`CP - C` for a seller) and the
/// base value of failure (0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Payoffs {
    pub success: f64,
    pub failure_base: f64,
}

/// Success/failure probabilities and delay rewards read off one analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeSummary {
    pub p_success: f64,
    pub p_failure: f64,
    pub td_success: Option<f64>,
    pub td_failure: Option<f64>,
}

impl OutcomeSummary {
    pub fn utility<U: UtilityCurve + ?Sized>(&self, payoffs: Payoffs, curve: &U) -> f64 {
        let mut u = 0.0;
        if let Some(td) = self.td_success {
            u += self.p_success * curve.utility(payoffs.success - td);
        }
        if let Some(td) = self.td_failure {
            u += self.p_failure * curve.utility(payoffs.failure_base - td);
        }
        u
    }
}

/// Solver route selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolvePath {
    Dense,
    #[default]
    Fast,
}

pub fn outcome_summary(
    chain: &AbsorbingChain,
    outcomes: Outcomes,
    rewards: &RewardSpec,
    path: SolvePath,
) -> Result<OutcomeSummary, ChainError> {
    outcomes.check(chain)?;
    let (cf, start_absorb, td) = match path {
        SolvePath::Dense => {
            let r = analyze_dense(chain, rewards)?;
            (r.canonical, r.start_absorb, r.rewards)
        }
        SolvePath::Fast => {
            let r = analyze_fast(chain, rewards)?;
            (r.canonical, r.start_absorb, r.rewards)
        }
    };
    let s = cf.absorbing_position(outcomes.success).unwrap();
    let f = cf.absorbing_position(outcomes.failure).unwrap();
    Ok(OutcomeSummary {
        p_success: start_absorb[s],
        p_failure: start_absorb[f],
        td_success: td[s],
        td_failure: td[f],
    })
}

/// `P_S U(payoff_S - TD_S) + P_F U(payoff_F - TD_F)`, fast route.
pub fn expected_utility<U: UtilityCurve + ?Sized>(
    chain: &AbsorbingChain,
    outcomes: Outcomes,
    payoffs: Payoffs,
    rewards: &RewardSpec,
    curve: &U,
) -> Result<f64, ChainError> {
    Ok(outcome_summary(chain, outcomes, rewards, SolvePath::Fast)?.utility(payoffs, curve))
}

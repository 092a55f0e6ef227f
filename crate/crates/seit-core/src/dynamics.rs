//! Timeslot reputation dynamics and their stability checks.
//!
//! Scores evolve synchronously under
//! `R[t+1] = max{(1 - alpha) * R[t] + alpha * q_ibr[t], 0}`, where `q_ibr`
//! is a weighted average of per-pair feedback. This module provides the
//! update step, equilibrium search under a fixed good/bad behaviour model
//! (`q_ij = sign_j * R_ji`), the geometric-contraction gap between paired
//! trajectories, and a power-iteration bound on the update matrix's
//! dominant eigenvalue.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ReputationGraph, TenantId};

/// Convergence declared once the per-tick residual drops below
/// `alpha * epsilon` (so the fixed-point residual is below `epsilon`).
pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const DEFAULT_T_MAX: u64 = 10_000;

/// An ordered (owner, subject) reputation pair.
pub type Pair = (TenantId, TenantId);

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("alpha {alpha} outside (0, 1)")]
    InvalidAlpha { alpha: f64 },
    #[error("weights for pair ({0}, {1}) sum to {sum}, not 1", .pair.0, .pair.1)]
    NonStochasticWeights { pair: Pair, sum: f64 },
    #[error("negative weight on pair ({0}, {1})", .pair.0, .pair.1)]
    NegativeWeight { pair: Pair },
    #[error("no feedback value for contributing pair ({0}, {1})", .pair.0, .pair.1)]
    MissingWeight { pair: Pair },
    #[error("state lacks the reverse pair ({0}, {1})", .pair.0, .pair.1)]
    MissingReversePair { pair: Pair },
    #[error("no behaviour sign for tenant {0}")]
    MissingSign(TenantId),
    #[error("trajectories have different lengths ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("trajectories cover different pair sets")]
    PairSetMismatch,
    #[error("score {value} outside [0, 1] for pair ({0}, {1})", .pair.0, .pair.1)]
    ScoreOutOfRange { pair: Pair, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub alpha: f64,
    pub t_max: u64,
    pub epsilon: f64,
}

impl DynamicsConfig {
    pub fn new(alpha: f64) -> Result<Self, DynamicsError> {
        if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
            return Err(DynamicsError::InvalidAlpha { alpha });
        }
        Ok(DynamicsConfig {
            alpha,
            t_max: DEFAULT_T_MAX,
            epsilon: DEFAULT_EPSILON,
        })
    }

    pub fn with_t_max(mut self, t_max: u64) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
}

/// Fixed behaviour sign per tenant: good tenants feed back `+R`, bad
/// tenants `-R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TenantSign {
    Good,
    Bad,
}

impl TenantSign {
    fn factor(self) -> f64 {
        match self {
            TenantSign::Good => 1.0,
            TenantSign::Bad => -1.0,
        }
    }
}

pub type BehaviorModel = BTreeMap<TenantId, TenantSign>;

/// Per-pair aggregation weights for `q_ibr`. Each row must be a convex
/// combination: nonnegative weights summing to 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregateWeights {
    rows: BTreeMap<Pair, Vec<(Pair, f64)>>,
}

impl AggregateWeights {
    /// Each pair listens only to its own feedback.
    pub fn identity<I: IntoIterator<Item = Pair>>(pairs: I) -> Self {
        let rows = pairs
            .into_iter()
            .map(|p| (p.clone(), vec![(p, 1.0)]))
            .collect();
        AggregateWeights { rows }
    }

    /// Validates and stores explicit rows.
    pub fn from_rows(rows: BTreeMap<Pair, Vec<(Pair, f64)>>) -> Result<Self, DynamicsError> {
        for (pair, entries) in &rows {
            let mut sum = 0.0;
            for (contrib, w) in entries {
                if *w < 0.0 || !w.is_finite() {
                    return Err(DynamicsError::NegativeWeight {
                        pair: contrib.clone(),
                    });
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(DynamicsError::NonStochasticWeights {
                    pair: pair.clone(),
                    sum,
                });
            }
        }
        Ok(AggregateWeights { rows })
    }

    /// Default weighting derived from a graph's introduction records: half
    /// the weight on the pair's own feedback, the other half split evenly
    /// across the owner's pairs whose introduction chain contains the
    /// subject. Pairs without such contributors listen only to themselves.
    pub fn from_graph(graph: &ReputationGraph) -> Self {
        let mut rows = BTreeMap::new();
        for edge in graph.edges() {
            let pair = (edge.owner.clone(), edge.subject.clone());
            let introduced: Vec<Pair> = graph
                .edges_of(&edge.owner)
                .filter(|e| e.intro.chain.contains(&edge.subject))
                .map(|e| (e.owner.clone(), e.subject.clone()))
                .collect();
            let mut entries = Vec::with_capacity(1 + introduced.len());
            if introduced.is_empty() {
                entries.push((pair.clone(), 1.0));
            } else {
                let share = 0.5 / introduced.len() as f64;
                entries.push((pair.clone(), 0.5));
                entries.extend(introduced.into_iter().map(|p| (p, share)));
            }
            rows.insert(pair, entries);
        }
        AggregateWeights { rows }
    }

    pub fn rows(&self) -> &BTreeMap<Pair, Vec<(Pair, f64)>> {
        &self.rows
    }

    pub fn row(&self, pair: &Pair) -> Option<&[(Pair, f64)]> {
        self.rows.get(pair).map(Vec::as_slice)
    }

    /// Weighted average of the contributing pairs' feedback values.
    pub fn aggregate_q_ibr(
        &self,
        feedback: &BTreeMap<Pair, f64>,
        pair: &Pair,
    ) -> Result<f64, DynamicsError> {
        let entries = self
            .rows
            .get(pair)
            .ok_or_else(|| DynamicsError::MissingWeight { pair: pair.clone() })?;
        let mut acc = 0.0;
        for (contrib, w) in entries {
            let q = feedback
                .get(contrib)
                .ok_or_else(|| DynamicsError::MissingWeight {
                    pair: contrib.clone(),
                })?;
            acc += w * q;
        }
        Ok(acc)
    }
}

/// Snapshot of every pair's score at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryState {
    pub t: u64,
    pub scores: BTreeMap<Pair, f64>,
}

impl TrajectoryState {
    pub fn new(t: u64, scores: BTreeMap<Pair, f64>) -> Result<Self, DynamicsError> {
        for (pair, value) in &scores {
            if !value.is_finite() || !(0.0..=1.0).contains(value) {
                return Err(DynamicsError::ScoreOutOfRange {
                    pair: pair.clone(),
                    value: *value,
                });
            }
        }
        Ok(TrajectoryState { t, scores })
    }
}

/// A full run: the pair ordering plus one score vector per tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pairs: Vec<Pair>,
    ticks: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn scores_at(&self, t: usize) -> Option<&[f64]> {
        self.ticks.get(t).map(Vec::as_slice)
    }

    pub fn state_at(&self, t: usize) -> Option<TrajectoryState> {
        let tick = self.ticks.get(t)?;
        let scores = self
            .pairs
            .iter()
            .cloned()
            .zip(tick.iter().copied())
            .collect();
        Some(TrajectoryState { t: t as u64, scores })
    }

    pub fn final_state(&self) -> TrajectoryState {
        self.state_at(self.len() - 1).expect("trajectory is never empty")
    }

    /// CSV export with columns `t,owner,subject,score`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "t,owner,subject,score")?;
        for (t, tick) in self.ticks.iter().enumerate() {
            for (pair, score) in self.pairs.iter().zip(tick) {
                writeln!(out, "{t},{},{},{score}", pair.0, pair.1)?;
            }
        }
        Ok(())
    }
}

/// Grouping of tenants at a converged equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReputationGroup {
    ZeroReputation,
    PositiveReputation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub converged: bool,
    pub t_final: u64,
    /// Pairs failing the equilibrium condition at the config's epsilon.
    pub violations: Vec<Pair>,
    pub classification: BTreeMap<TenantId, ReputationGroup>,
}

/// One synchronous update of every pair against the given feedback
/// snapshot: `R' = max{(1 - alpha) * R + alpha * q_ibr, 0}`.
pub fn step(
    state: &TrajectoryState,
    weights: &AggregateWeights,
    feedback: &BTreeMap<Pair, f64>,
    alpha: f64,
) -> Result<TrajectoryState, DynamicsError> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(DynamicsError::InvalidAlpha { alpha });
    }
    let mut next = BTreeMap::new();
    for (pair, score) in &state.scores {
        let q = weights.aggregate_q_ibr(feedback, pair)?;
        let value = ((1.0 - alpha) * score + alpha * q).max(0.0);
        next.insert(pair.clone(), value);
    }
    Ok(TrajectoryState {
        t: state.t + 1,
        scores: next,
    })
}

/// Builds the feedback snapshot implied by a behaviour model:
/// `q_ij = sign_j * R_ji`.
pub fn behavior_feedback(
    state: &TrajectoryState,
    behavior: &BehaviorModel,
) -> Result<BTreeMap<Pair, f64>, DynamicsError> {
    let mut feedback = BTreeMap::new();
    for pair in state.scores.keys() {
        let (i, j) = pair;
        let reverse = state
            .scores
            .get(&(j.clone(), i.clone()))
            .ok_or_else(|| DynamicsError::MissingReversePair { pair: pair.clone() })?;
        let sign = behavior
            .get(j)
            .ok_or_else(|| DynamicsError::MissingSign(j.clone()))?;
        feedback.insert(pair.clone(), sign.factor() * reverse);
    }
    Ok(feedback)
}

/// Pairs violating the equilibrium condition: neither `|q_ibr - R| < eps`
/// nor (`R < eps` and `q_ibr < 0`).
pub fn equilibrium_violations(
    state: &TrajectoryState,
    weights: &AggregateWeights,
    behavior: &BehaviorModel,
    epsilon: f64,
) -> Result<Vec<Pair>, DynamicsError> {
    let feedback = behavior_feedback(state, behavior)?;
    let mut violations = Vec::new();
    for (pair, score) in &state.scores {
        let q = weights.aggregate_q_ibr(&feedback, pair)?;
        let ok = (q - score).abs() < epsilon || (*score < epsilon && q < 0.0);
        if !ok {
            violations.push(pair.clone());
        }
    }
    Ok(violations)
}

/// Indexed copy of the system for the inner iteration loop.
struct IndexedSystem {
    pairs: Vec<Pair>,
    /// Per pair: (index of the reverse pair, behaviour factor of the subject).
    feedback_terms: Vec<(usize, f64)>,
    /// Per pair: contributing (pair index, weight) entries.
    rows: Vec<Vec<(usize, f64)>>,
}

impl IndexedSystem {
    fn build(
        initial: &TrajectoryState,
        weights: &AggregateWeights,
        behavior: &BehaviorModel,
    ) -> Result<(Self, Vec<f64>), DynamicsError> {
        let pairs: Vec<Pair> = initial.scores.keys().cloned().collect();
        let index: BTreeMap<&Pair, usize> =
            pairs.iter().enumerate().map(|(i, p)| (p, i)).collect();
        let mut feedback_terms = Vec::with_capacity(pairs.len());
        let mut rows = Vec::with_capacity(pairs.len());
        for pair in &pairs {
            let reverse = (pair.1.clone(), pair.0.clone());
            let rev_idx = *index
                .get(&reverse)
                .ok_or_else(|| DynamicsError::MissingReversePair { pair: pair.clone() })?;
            let sign = behavior
                .get(&pair.1)
                .ok_or_else(|| DynamicsError::MissingSign(pair.1.clone()))?;
            feedback_terms.push((rev_idx, sign.factor()));

            let entries = weights
                .row(pair)
                .ok_or_else(|| DynamicsError::MissingWeight { pair: pair.clone() })?;
            let mut row = Vec::with_capacity(entries.len());
            for (contrib, w) in entries {
                let c_idx = *index
                    .get(contrib)
                    .ok_or_else(|| DynamicsError::MissingWeight {
                        pair: contrib.clone(),
                    })?;
                row.push((c_idx, *w));
            }
            rows.push(row);
        }
        let values = pairs.iter().map(|p| initial.scores[p]).collect();
        Ok((
            IndexedSystem {
                pairs,
                feedback_terms,
                rows,
            },
            values,
        ))
    }

    fn step_into(&self, current: &[f64], alpha: f64, q_buf: &mut [f64], next: &mut [f64]) {
        for (i, (rev, sign)) in self.feedback_terms.iter().enumerate() {
            q_buf[i] = sign * current[*rev];
        }
        for (i, row) in self.rows.iter().enumerate() {
            let mut q_ibr = 0.0;
            for (c, w) in row {
                q_ibr += w * q_buf[*c];
            }
            next[i] = ((1.0 - alpha) * current[i] + alpha * q_ibr).max(0.0);
        }
    }
}

/// Iterates the behaviour-model dynamics from `initial` until the update
/// residual drops below `alpha * epsilon` or `t_max` ticks have run.
///
/// The returned report verifies the equilibrium condition per pair at the
/// config's epsilon and classifies tenants by their converged incoming
/// reputations. Non-convergence is reported, not an error; the trajectory
/// is complete either way.
pub fn run_to_equilibrium(
    initial: &TrajectoryState,
    weights: &AggregateWeights,
    behavior: &BehaviorModel,
    config: &DynamicsConfig,
) -> Result<(Trajectory, EquilibriumReport), DynamicsError> {
    if !config.alpha.is_finite() || config.alpha <= 0.0 || config.alpha >= 1.0 {
        return Err(DynamicsError::InvalidAlpha {
            alpha: config.alpha,
        });
    }
    let (system, first) = IndexedSystem::build(initial, weights, behavior)?;
    let n = first.len();
    let mut ticks = vec![first];
    let mut q_buf = vec![0.0; n];
    let mut converged = false;
    while (ticks.len() as u64) <= config.t_max {
        let current = ticks.last().expect("at least the initial state");
        let mut next = vec![0.0; n];
        system.step_into(current, config.alpha, &mut q_buf, &mut next);
        let residual = current
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        ticks.push(next);
        if residual < config.alpha * config.epsilon {
            converged = true;
            break;
        }
    }

    let trajectory = Trajectory {
        pairs: system.pairs,
        ticks,
    };
    let final_state = trajectory.final_state();
    let violations = equilibrium_violations(&final_state, weights, behavior, config.epsilon)?;
    let classification = classify(&final_state, config.epsilon);
    let report = EquilibriumReport {
        converged,
        t_final: final_state.t,
        violations,
        classification,
    };
    Ok((trajectory, report))
}

fn classify(state: &TrajectoryState, epsilon: f64) -> BTreeMap<TenantId, ReputationGroup> {
    let mut tenants = BTreeSet::new();
    for (i, j) in state.scores.keys() {
        tenants.insert(i.clone());
        tenants.insert(j.clone());
    }
    let mut max_incoming: BTreeMap<TenantId, f64> =
        tenants.iter().map(|t| (t.clone(), 0.0)).collect();
    for ((_, subject), score) in &state.scores {
        let entry = max_incoming.get_mut(subject).expect("subject collected");
        *entry = entry.max(*score);
    }
    max_incoming
        .into_iter()
        .map(|(tenant, max)| {
            let group = if max < epsilon {
                ReputationGroup::ZeroReputation
            } else {
                ReputationGroup::PositiveReputation
            };
            (tenant, group)
        })
        .collect()
}

/// Per-tick maximum absolute score gap between two trajectories over the
/// same pair set. Without clamping the gap contracts exactly as
/// `(1 - alpha)^t * gap[0]`.
pub fn contraction_gap(a: &Trajectory, b: &Trajectory) -> Result<Vec<f64>, DynamicsError> {
    if a.len() != b.len() {
        return Err(DynamicsError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    if a.pairs != b.pairs {
        return Err(DynamicsError::PairSetMismatch);
    }
    Ok(a.ticks
        .iter()
        .zip(&b.ticks)
        .map(|(ta, tb)| {
            ta.iter()
                .zip(tb)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max)
        })
        .collect())
}

/// Runs externally-driven dynamics: one state per feedback snapshot, so
/// trajectory index 0 is the state after applying `feedbacks[0]`.
pub fn run_with_feedback(
    initial: &TrajectoryState,
    weights: &AggregateWeights,
    feedbacks: &[BTreeMap<Pair, f64>],
    alpha: f64,
) -> Result<Trajectory, DynamicsError> {
    let pairs: Vec<Pair> = initial.scores.keys().cloned().collect();
    let mut ticks = Vec::with_capacity(feedbacks.len());
    let mut state = initial.clone();
    for feedback in feedbacks {
        state = step(&state, weights, feedback, alpha)?;
        ticks.push(pairs.iter().map(|p| state.scores[p]).collect());
    }
    Ok(Trajectory { pairs, ticks })
}

/// Estimates the dominant eigenvalue of `Sigma = (1 - alpha) I + alpha *
/// Sigma_1` by power iteration, where `Sigma_1` is the (row-stochastic)
/// weight matrix. Rows whose weights do not sum to 1 within 1e-12 are
/// rejected.
pub fn spectral_radius_check(
    weights: &AggregateWeights,
    alpha: f64,
) -> Result<f64, DynamicsError> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(DynamicsError::InvalidAlpha { alpha });
    }
    let pairs: Vec<&Pair> = weights.rows.keys().collect();
    let index: BTreeMap<&Pair, usize> = pairs.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let entries = &weights.rows[*pair];
        let sum: f64 = entries.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(DynamicsError::NonStochasticWeights {
                pair: (*pair).clone(),
                sum,
            });
        }
        let mut row = Vec::with_capacity(entries.len());
        for (contrib, w) in entries {
            let c_idx = *index
                .get(contrib)
                .ok_or_else(|| DynamicsError::MissingWeight {
                    pair: contrib.clone(),
                })?;
            row.push((c_idx, *w));
        }
        rows.push(row);
    }

    let n = rows.len();
    if n == 0 {
        return Ok(0.0);
    }
    // Deterministic start: all-ones plus a tiny index-dependent tilt so the
    // start vector is never orthogonal to the dominant eigenvector.
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 1e-6 * (i as f64 + 1.0) / n as f64)
        .collect();
    let mut estimate = 0.0;
    for _ in 0..200 {
        let mut next = vec![0.0; n];
        for (i, row) in rows.iter().enumerate() {
            let mut acc = 0.0;
            for (c, w) in row {
                acc += w * v[*c];
            }
            next[i] = (1.0 - alpha) * v[i] + alpha * acc;
        }
        let norm = next.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if norm == 0.0 {
            return Ok(0.0);
        }
        for x in &mut next {
            *x /= norm;
        }
        let change = (norm - estimate).abs();
        estimate = norm;
        v = next;
        if change < 1e-12 * estimate.max(1.0) {
            break;
        }
    }
    Ok(estimate)
}

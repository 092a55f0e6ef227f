//! Connection queries over the reputation graph and threshold triggers.
//!
//! A connection request from `src` to `dst` is answered by searching for an
//! introduction path: a chain of tenants where every hop owner already
//! holds an edge toward the previous hop, admits it under its selectivity
//! threshold, and (for intermediaries) has rate-limit budget left. Among
//! admissible paths the search returns the one with the highest bottleneck
//! score, breaking ties by fewest hops and then by lexicographically
//! smallest tenant-id sequence.
//!
//! Threshold subscriptions turn edge updates into crossing notifications,
//! standing in for a continuous reputation query.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ReputationGraph, ReputationScore, TenantId};

/// Default edge-selectivity threshold when a tenant has no explicit config.
pub const DEFAULT_SELECTIVITY: f64 = 0.0;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("tenant {id} is not registered")]
    UnknownTenant { id: TenantId },
    #[error("source and destination are the same tenant ({id})")]
    SameEndpoints { id: TenantId },
    #[error("invalid thresholds: {reason}")]
    InvalidThresholds { reason: String },
    #[error("invalid rate limit: window must be >= 1")]
    InvalidRateLimit,
}

/// Cap on how often a tenant serves as an introduction intermediary within
/// a trailing window of ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimit {
    pub max_introductions: u32,
    pub window: u64,
}

impl RateLimit {
    pub fn new(max_introductions: u32, window: u64) -> Result<Self, QueryError> {
        if window == 0 {
            return Err(QueryError::InvalidRateLimit);
        }
        Ok(RateLimit {
            max_introductions,
            window,
        })
    }

    /// Effectively no limit.
    pub fn unlimited() -> Self {
        RateLimit {
            max_introductions: u32::MAX,
            window: 1,
        }
    }
}

/// Per-tenant query configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryConfig {
    pub owner: TenantId,
    pub selectivity_threshold: ReputationScore,
    pub rate_limit: RateLimit,
}

/// Served-introduction log for one tenant; the trailing window is pruned
/// lazily on inspection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LimiterState {
    served: Vec<u64>,
}

impl LimiterState {
    fn served_in_window(&self, tick: u64, window: u64) -> u32 {
        let cutoff = tick.saturating_sub(window.saturating_sub(1));
        self.served.iter().filter(|&&t| t >= cutoff).count() as u32
    }

    fn prune(&mut self, tick: u64, window: u64) {
        let cutoff = tick.saturating_sub(window.saturating_sub(1));
        self.served.retain(|&t| t >= cutoff);
    }
}

/// Outcome of an introduction admission check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admission {
    Allow,
    Deny(DenyReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    BelowSelectivity,
    RateLimited,
}

/// An accepted introduction path: the ordered intermediaries between source
/// and destination (empty when the destination already admits the source
/// directly) plus the minimum edge score along all hops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub path: Vec<TenantId>,
    pub bottleneck: ReputationScore,
    pub accepted: bool,
}

/// Which edge subjects a subscription watches.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectFilter {
    Any,
    Tenant(TenantId),
}

impl SubjectFilter {
    fn matches(&self, subject: &TenantId) -> bool {
        match self {
            SubjectFilter::Any => true,
            SubjectFilter::Tenant(id) => id == subject,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSubscription {
    pub subscriber: TenantId,
    pub subject_filter: SubjectFilter,
    pub thresholds: Vec<ReputationScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingDirection {
    Rising,
    Falling,
}

/// Emitted when an edge update moves a score across a subscribed threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingNotification {
    pub subscriber: TenantId,
    pub subject: TenantId,
    pub threshold: ReputationScore,
    pub direction: CrossingDirection,
    pub new_score: ReputationScore,
    pub tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubscriptionId(u64);

/// Query-side state: per-tenant configs, rate-limiter logs, and threshold
/// subscriptions. Mutations follow the same single-writer contract as the
/// graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryEngine {
    default_selectivity: f64,
    default_rate_limit: Option<RateLimit>,
    configs: BTreeMap<TenantId, QueryConfig>,
    limiters: BTreeMap<TenantId, LimiterState>,
    subscriptions: BTreeMap<(TenantId, SubjectFilter), (SubscriptionId, Vec<f64>)>,
    next_subscription: u64,
}

impl QueryEngine {
    pub fn new() -> Self {
        QueryEngine::default()
    }

    /// Engine whose unconfigured tenants fall back to the given selectivity
    /// and rate limit.
    pub fn with_defaults(selectivity: f64, rate_limit: RateLimit) -> Self {
        QueryEngine {
            default_selectivity: selectivity,
            default_rate_limit: Some(rate_limit),
            ..QueryEngine::default()
        }
    }

    pub fn set_config(&mut self, config: QueryConfig) {
        self.configs.insert(config.owner.clone(), config);
    }

    pub fn config(&self, tenant: &TenantId) -> Option<&QueryConfig> {
        self.configs.get(tenant)
    }

    fn selectivity_of(&self, tenant: &TenantId) -> f64 {
        self.configs
            .get(tenant)
            .map(|c| c.selectivity_threshold.value())
            .unwrap_or(self.default_selectivity)
    }

    fn rate_limit_of(&self, tenant: &TenantId) -> RateLimit {
        self.configs
            .get(tenant)
            .map(|c| c.rate_limit)
            .or(self.default_rate_limit)
            .unwrap_or_else(RateLimit::unlimited)
    }

    fn rate_would_allow(&self, tenant: &TenantId, tick: u64) -> bool {
        let limit = self.rate_limit_of(tenant);
        let served = self
            .limiters
            .get(tenant)
            .map(|s| s.served_in_window(tick, limit.window))
            .unwrap_or(0);
        served < limit.max_introductions
    }

    fn commit_served(&mut self, tenant: &TenantId, tick: u64) {
        let limit = self.rate_limit_of(tenant);
        let state = self.limiters.entry(tenant.clone()).or_default();
        state.prune(tick, limit.window);
        state.served.push(tick);
    }

    /// Checks whether a tenant admits an introduction request from a
    /// requester it scores at `requester_score`, committing the served
    /// counter on allow. Selectivity is checked before the rate limit.
    pub fn admit_introduction(
        &mut self,
        tenant: &TenantId,
        requester_score: ReputationScore,
        tick: u64,
    ) -> Admission {
        if requester_score.value() < self.selectivity_of(tenant) {
            return Admission::Deny(DenyReason::BelowSelectivity);
        }
        if !self.rate_would_allow(tenant, tick) {
            return Admission::Deny(DenyReason::RateLimited);
        }
        self.commit_served(tenant, tick);
        Admission::Allow
    }

    /// Searches for the best admissible introduction path from `src` to
    /// `dst` and commits rate-limit counters for the returned path's
    /// intermediaries. Returns `None` when no admissible path exists; a
    /// failed search leaves all limiter state unchanged.
    pub fn find_introduction_path(
        &mut self,
        graph: &ReputationGraph,
        src: &TenantId,
        dst: &TenantId,
        tick: u64,
    ) -> Result<Option<PathResult>, QueryError> {
        if !graph.is_registered(src) {
            return Err(QueryError::UnknownTenant { id: src.clone() });
        }
        if !graph.is_registered(dst) {
            return Err(QueryError::UnknownTenant { id: dst.clone() });
        }
        if src == dst {
            return Err(QueryError::SameEndpoints { id: src.clone() });
        }

        // Forward adjacency in request direction: u -> w exists when w holds
        // an admissible edge toward u. Intermediaries are gated on
        // selectivity and rate budget, the destination on selectivity only.
        let mut adjacency: BTreeMap<&TenantId, Vec<(&TenantId, f64)>> = BTreeMap::new();
        for edge in graph.edges() {
            let w = &edge.owner;
            let u = &edge.subject;
            if w == src {
                continue;
            }
            let admissible = if w == dst {
                edge.score.value() >= self.selectivity_of(w)
            } else {
                edge.score.value() >= self.selectivity_of(w) && self.rate_would_allow(w, tick)
            };
            if admissible {
                adjacency.entry(u).or_default().push((w, edge.score.value()));
            }
        }

        // Widest-path pass: maximize the minimum edge score from src.
        let mut width: BTreeMap<&TenantId, f64> = BTreeMap::new();
        width.insert(src, f64::INFINITY);
        let mut heap: std::collections::BinaryHeap<(Width, std::cmp::Reverse<&TenantId>)> =
            std::collections::BinaryHeap::new();
        heap.push((Width(f64::INFINITY), std::cmp::Reverse(src)));
        while let Some((Width(w), std::cmp::Reverse(node))) = heap.pop() {
            if w < *width.get(node).unwrap_or(&f64::NEG_INFINITY) {
                continue;
            }
            if node == dst {
                continue;
            }
            if let Some(nexts) = adjacency.get(node) {
                for (next, score) in nexts {
                    let cand = w.min(*score);
                    if cand > *width.get(*next).unwrap_or(&f64::NEG_INFINITY) {
                        width.insert(next, cand);
                        heap.push((Width(cand), std::cmp::Reverse(*next)));
                    }
                }
            }
        }
        let bottleneck = match width.get(dst) {
            Some(b) if b.is_finite() => *b,
            _ => return Ok(None),
        };

        // Restrict to arcs at or above the bottleneck; any src -> dst path in
        // this subgraph realizes it. BFS layers give fewest hops, and the
        // per-node lexicographically smallest sequence is carried along.
        let mut best_seq: BTreeMap<&TenantId, Vec<TenantId>> = BTreeMap::new();
        best_seq.insert(src, Vec::new());
        let mut frontier: Vec<&TenantId> = vec![src];
        let mut visited: BTreeMap<&TenantId, usize> = BTreeMap::new();
        visited.insert(src, 0);
        let mut depth = 0usize;
        let final_seq = 'bfs: loop {
            depth += 1;
            let mut next_best: BTreeMap<&TenantId, Vec<TenantId>> = BTreeMap::new();
            for node in &frontier {
                let seq = &best_seq[*node];
                if let Some(nexts) = adjacency.get(*node) {
                    for (next, score) in nexts {
                        if *score < bottleneck {
                            continue;
                        }
                        if visited.get(*next).is_some_and(|d| *d < depth) {
                            continue;
                        }
                        let mut cand = seq.clone();
                        cand.push((*next).clone());
                        match next_best.get(*next) {
                            Some(existing) if *existing <= cand => {}
                            _ => {
                                next_best.insert(next, cand);
                            }
                        }
                    }
                }
            }
            if next_best.is_empty() {
                return Ok(None);
            }
            if let Some(seq) = next_best.get(dst) {
                break 'bfs seq.clone();
            }
            frontier = next_best.keys().copied().collect();
            for node in &frontier {
                visited.insert(node, depth);
            }
            best_seq = next_best;
        };

        let intermediaries: Vec<TenantId> =
            final_seq[..final_seq.len() - 1].to_vec();
        for hop in &intermediaries {
            self.commit_served(hop, tick);
        }
        Ok(Some(PathResult {
            path: intermediaries,
            bottleneck: ReputationScore::clamped(bottleneck),
            accepted: true,
        }))
    }

    /// Registers (or replaces) a threshold subscription. Thresholds must be
    /// strictly increasing and each within [0, 1].
    pub fn subscribe(
        &mut self,
        subscriber: TenantId,
        subject_filter: SubjectFilter,
        thresholds: Vec<f64>,
    ) -> Result<SubscriptionId, QueryError> {
        for window in thresholds.windows(2) {
            if window[0] >= window[1] {
                return Err(QueryError::InvalidThresholds {
                    reason: format!("{} does not precede {}", window[0], window[1]),
                });
            }
        }
        for value in &thresholds {
            if !value.is_finite() || !(0.0..=1.0).contains(value) {
                return Err(QueryError::InvalidThresholds {
                    reason: format!("{value} outside [0, 1]"),
                });
            }
        }
        let id = SubscriptionId(self.next_subscription);
        self.next_subscription += 1;
        self.subscriptions
            .insert((subscriber, subject_filter), (id, thresholds));
        Ok(id)
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = ThresholdSubscription> + '_ {
        self.subscriptions
            .iter()
            .map(|((subscriber, filter), (_, thresholds))| ThresholdSubscription {
                subscriber: subscriber.clone(),
                subject_filter: filter.clone(),
                thresholds: thresholds
                    .iter()
                    .map(|t| ReputationScore::clamped(*t))
                    .collect(),
            })
    }

    /// Emits one notification per subscribed threshold crossed by an edge
    /// update. A threshold counts as crossed when it lies strictly between
    /// the old and new score, or when the new score lands exactly on it.
    /// Subscribers are notified only about edges they own or are the
    /// subject of, with the filter matched against the edge's subject.
    pub fn process_edge_update(
        &self,
        owner: &TenantId,
        subject: &TenantId,
        old_score: ReputationScore,
        new_score: ReputationScore,
        tick: u64,
    ) -> Vec<CrossingNotification> {
        let old = old_score.value();
        let new = new_score.value();
        if old == new {
            return Vec::new();
        }
        let direction = if new > old {
            CrossingDirection::Rising
        } else {
            CrossingDirection::Falling
        };
        let mut out = Vec::new();
        for ((subscriber, filter), (_, thresholds)) in &self.subscriptions {
            if subscriber != owner && subscriber != subject {
                continue;
            }
            if !filter.matches(subject) {
                continue;
            }
            let crossed = thresholds.iter().copied().filter(|&t| match direction {
                CrossingDirection::Rising => old < t && t <= new,
                CrossingDirection::Falling => new <= t && t < old,
            });
            // Report thresholds in the order they were crossed.
            let crossed: Vec<f64> = match direction {
                CrossingDirection::Rising => crossed.collect(),
                CrossingDirection::Falling => {
                    let mut v: Vec<f64> = crossed.collect();
                    v.reverse();
                    v
                }
            };
            for threshold in crossed {
                out.push(CrossingNotification {
                    subscriber: subscriber.clone(),
                    subject: subject.clone(),
                    threshold: ReputationScore::clamped(threshold),
                    direction,
                    new_score,
                    tick,
                });
            }
        }
        out
    }
}

/// Heap key for the widest-path pass. Scores are finite or the +inf
/// sentinel at the source, never NaN, so the order is total.
#[derive(PartialEq, PartialOrd)]
struct Width(f64);

impl Eq for Width {}

impl Ord for Width {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).expect("scores are never NaN")
    }
}

//! Directed reputation graph built through introductions.
//!
//! Every tenant keeps a local, directed score in [0,1] for each tenant it
//! knows. New edges are created either by bootstrap (empty introduction
//! chain, default global score) or by an introduction, in which case the
//! new score is the introducer's score scaled by the graph's introduction
//! scale and the responsibility chain is recorded on the edge. Feedback on
//! an edge also touches the reporter's edges toward the recorded
//! intermediaries, attenuated geometrically per hop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default introduction scale applied when deriving a new edge's score
/// from the introducer's score.
pub const DEFAULT_INTRODUCTION_SCALE: f64 = 0.5;
/// Default score assigned to edges established without an introducer.
pub const DEFAULT_GLOBAL_SCORE: f64 = 0.5;
/// Default per-hop attenuation for feedback applied to chain intermediaries.
pub const DEFAULT_ATTENUATION: f64 = 0.5;
/// Default step size for event-driven feedback application.
pub const DEFAULT_FEEDBACK_STEP: f64 = 0.2;

/// Opaque tenant identifier, unique within one graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TenantId(String);

impl TenantId {
    pub fn new(id: impl Into<String>) -> Self {
        TenantId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TenantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TenantId {
    fn from(s: &str) -> Self {
        TenantId(s.to_string())
    }
}

impl From<String> for TenantId {
    fn from(s: String) -> Self {
        TenantId(s)
    }
}

/// A reputation value, always within [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReputationScore(f64);

impl ReputationScore {
    /// Builds a score, rejecting values outside [0, 1] or non-finite input.
    pub fn new(value: f64) -> Result<Self, GraphError> {
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(GraphError::ScoreOutOfRange { value });
        }
        Ok(ReputationScore(value))
    }

    /// Builds a score by clamping the value into [0, 1].
    pub fn clamped(value: f64) -> Self {
        ReputationScore(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for ReputationScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A signed observation about a subject tenant, in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub reporter: TenantId,
    pub subject: TenantId,
    pub q: f64,
    pub tick: u64,
    pub cause: String,
}

impl FeedbackEvent {
    pub fn new(
        reporter: TenantId,
        subject: TenantId,
        q: f64,
        tick: u64,
        cause: impl Into<String>,
    ) -> Result<Self, GraphError> {
        if !q.is_finite() || !(-1.0..=1.0).contains(&q) {
            return Err(GraphError::FeedbackOutOfRange { q });
        }
        if reporter == subject {
            return Err(GraphError::SelfFeedback { tenant: reporter });
        }
        Ok(FeedbackEvent {
            reporter,
            subject,
            q,
            tick,
            cause: cause.into(),
        })
    }
}

/// The intermediaries that introduced an edge's subject to its owner,
/// nearest introducer first. Empty for bootstrap edges.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IntroductionRecord {
    pub chain: Vec<TenantId>,
    pub created_at: u64,
}

/// One tenant's scored, directed view of another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub owner: TenantId,
    pub subject: TenantId,
    pub score: ReputationScore,
    pub intro: IntroductionRecord,
    pub last_update: u64,
}

/// Scaling parameter applied to the introducer's score when an edge is
/// established through an introduction. Fixed per graph instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntroductionScale(f64);

impl IntroductionScale {
    pub fn new(x: f64) -> Result<Self, GraphError> {
        if !x.is_finite() || x <= 0.0 || x > 1.0 {
            return Err(GraphError::InvalidScale { value: x });
        }
        Ok(IntroductionScale(x))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for IntroductionScale {
    fn default() -> Self {
        IntroductionScale(DEFAULT_INTRODUCTION_SCALE)
    }
}

/// One edge touched by a feedback application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TouchedEdge {
    pub owner: TenantId,
    pub subject: TenantId,
    /// 0 for the direct edge, k >= 1 for the intermediary at chain position k.
    pub position: usize,
    pub old: ReputationScore,
    pub new: ReputationScore,
}

/// Every edge touched by one `apply_feedback` call, direct edge first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReceipt {
    pub reporter: TenantId,
    pub subject: TenantId,
    pub q: f64,
    pub touched: Vec<TouchedEdge>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("tenant {id} is already registered")]
    DuplicateTenant { id: TenantId },
    #[error("tenant {id} is not registered")]
    UnknownTenant { id: TenantId },
    #[error("no edge from {owner} to {subject}")]
    UnknownEdge { owner: TenantId, subject: TenantId },
    #[error("{owner} has no edge to introducer {introducer}")]
    MissingIntroducerEdge {
        owner: TenantId,
        introducer: TenantId,
    },
    #[error("feedback value {q} outside [-1, 1]")]
    FeedbackOutOfRange { q: f64 },
    #[error("tenant {tenant} cannot report feedback about itself")]
    SelfFeedback { tenant: TenantId },
    #[error("score {value} outside [0, 1]")]
    ScoreOutOfRange { value: f64 },
    #[error("introduction scale {value} outside (0, 1]")]
    InvalidScale { value: f64 },
    #[error("invalid introduction chain: {reason}")]
    InvalidChain { reason: String },
}

/// Serializable snapshot form of a graph; edges carry their endpoints so the
/// keyed map can be rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphSnapshot {
    scale: IntroductionScale,
    default_global_score: ReputationScore,
    attenuation: f64,
    tenants: BTreeSet<TenantId>,
    edges: Vec<Edge>,
    feedback_log: Vec<FeedbackEvent>,
}

/// The reputation graph: registered tenants plus directed, scored edges.
///
/// All mutation goes through `register_tenant`, `establish_edge`, and
/// `apply_feedback`/`cascade_feedback`; identical call sequences on
/// identical graphs produce identical graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphSnapshot", into = "GraphSnapshot")]
pub struct ReputationGraph {
    scale: IntroductionScale,
    default_global_score: ReputationScore,
    attenuation: f64,
    tenants: BTreeSet<TenantId>,
    edges: BTreeMap<(TenantId, TenantId), Edge>,
    feedback_log: Vec<FeedbackEvent>,
}

impl Default for ReputationGraph {
    fn default() -> Self {
        ReputationGraph::new()
    }
}

impl ReputationGraph {
    pub fn new() -> Self {
        ReputationGraph {
            scale: IntroductionScale::default(),
            default_global_score: ReputationScore(DEFAULT_GLOBAL_SCORE),
            attenuation: DEFAULT_ATTENUATION,
            tenants: BTreeSet::new(),
            edges: BTreeMap::new(),
            feedback_log: Vec::new(),
        }
    }

    /// Builds a graph with explicit parameters. `attenuation` is the
    /// per-hop factor applied to chain feedback, in (0, 1].
    pub fn with_params(
        scale: IntroductionScale,
        default_global_score: ReputationScore,
        attenuation: f64,
    ) -> Result<Self, GraphError> {
        if !attenuation.is_finite() || attenuation <= 0.0 || attenuation > 1.0 {
            return Err(GraphError::InvalidScale { value: attenuation });
        }
        Ok(ReputationGraph {
            scale,
            default_global_score,
            attenuation,
            tenants: BTreeSet::new(),
            edges: BTreeMap::new(),
            feedback_log: Vec::new(),
        })
    }

    pub fn scale(&self) -> IntroductionScale {
        self.scale
    }

    pub fn default_global_score(&self) -> ReputationScore {
        self.default_global_score
    }

    pub fn attenuation(&self) -> f64 {
        self.attenuation
    }

    pub fn tenant_count(&self) -> usize {
        self.tenants.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_registered(&self, id: &TenantId) -> bool {
        self.tenants.contains(id)
    }

    pub fn tenants(&self) -> impl Iterator<Item = &TenantId> {
        self.tenants.iter()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn edge(&self, owner: &TenantId, subject: &TenantId) -> Option<&Edge> {
        self.edges.get(&(owner.clone(), subject.clone()))
    }

    /// Edges held by the given owner, i.e. the owner's local views.
    pub fn edges_of<'a>(&'a self, owner: &TenantId) -> impl Iterator<Item = &'a Edge> + 'a {
        let owner = owner.clone();
        self.edges
            .range((owner.clone(), TenantId::new(""))..)
            .take_while(move |((o, _), _)| *o == owner)
            .map(|(_, e)| e)
    }

    pub fn feedback_log(&self) -> &[FeedbackEvent] {
        &self.feedback_log
    }

    /// Adds a tenant. The tenant starts with no local edges; the graph's
    /// default global score is used later as the bootstrap edge score.
    pub fn register_tenant(&mut self, id: TenantId) -> Result<TenantId, GraphError> {
        if !self.tenants.insert(id.clone()) {
            return Err(GraphError::DuplicateTenant { id });
        }
        Ok(id)
    }

    /// Creates (or replaces) the acceptor's edge toward the newcomer.
    ///
    /// With a non-empty chain the score is `scale * score(acceptor, chain[0])`,
    /// clamped into bounds, and the full chain is recorded on the edge. With
    /// an empty chain this is a bootstrap edge at the default global score.
    ///
    /// Every consecutive link of the responsibility chain must already exist:
    /// `acceptor -> chain[0]`, `chain[0] -> chain[1]`, and so on.
    pub fn establish_edge(
        &mut self,
        acceptor: &TenantId,
        newcomer: &TenantId,
        introducer_chain: &[TenantId],
        tick: u64,
    ) -> Result<Edge, GraphError> {
        self.require_tenant(acceptor)?;
        self.require_tenant(newcomer)?;
        if acceptor == newcomer {
            return Err(GraphError::InvalidChain {
                reason: format!("{acceptor} cannot hold an edge to itself"),
            });
        }
        let mut seen = BTreeSet::new();
        for link in introducer_chain {
            self.require_tenant(link)?;
            if link == acceptor || link == newcomer {
                return Err(GraphError::InvalidChain {
                    reason: format!("chain contains endpoint {link}"),
                });
            }
            if !seen.insert(link.clone()) {
                return Err(GraphError::InvalidChain {
                    reason: format!("chain repeats {link}"),
                });
            }
        }
        let mut prev = acceptor;
        for link in introducer_chain {
            if self.edge(prev, link).is_none() {
                return Err(GraphError::MissingIntroducerEdge {
                    owner: prev.clone(),
                    introducer: link.clone(),
                });
            }
            prev = link;
        }

        let score = match introducer_chain.first() {
            Some(nearest) => {
                let base = self
                    .edge(acceptor, nearest)
                    .expect("nearest introducer edge checked above")
                    .score
                    .value();
                ReputationScore::clamped(self.scale.value() * base)
            }
            None => self.default_global_score,
        };
        let edge = Edge {
            owner: acceptor.clone(),
            subject: newcomer.clone(),
            score,
            intro: IntroductionRecord {
                chain: introducer_chain.to_vec(),
                created_at: tick,
            },
            last_update: tick,
        };
        self.edges
            .insert((acceptor.clone(), newcomer.clone()), edge.clone());
        Ok(edge)
    }

    /// Returns the owner's score of the subject, or `None` when no such
    /// edge exists. Never fabricates a score.
    pub fn reputation_of(&self, owner: &TenantId, subject: &TenantId) -> Option<ReputationScore> {
        self.edge(owner, subject).map(|e| e.score)
    }

    /// Mean of all scores held about the subject, or `None` when nobody
    /// holds an edge toward it.
    pub fn sentiment(&self, subject: &TenantId) -> Option<ReputationScore> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for edge in self.edges.values() {
            if &edge.subject == subject {
                sum += edge.score.value();
                n += 1;
            }
        }
        if n == 0 {
            None
        } else {
            Some(ReputationScore::clamped(sum / n as f64))
        }
    }

    /// Applies one feedback event with step size `delta`.
    ///
    /// The direct edge moves by `delta * q`; the reporter's edge toward the
    /// intermediary at chain position k (nearest introducer is position 1)
    /// moves by `delta * q * attenuation^k`. All updates clamp into [0, 1].
    /// Chain intermediaries the reporter holds no edge toward are skipped.
    /// The event is appended to the feedback log.
    pub fn apply_feedback(
        &mut self,
        event: &FeedbackEvent,
        delta: f64,
    ) -> Result<FeedbackReceipt, GraphError> {
        if !event.q.is_finite() || event.q.abs() > 1.0 {
            return Err(GraphError::FeedbackOutOfRange { q: event.q });
        }
        if event.reporter == event.subject {
            return Err(GraphError::SelfFeedback {
                tenant: event.reporter.clone(),
            });
        }
        let chain = match self.edge(&event.reporter, &event.subject) {
            Some(direct) => direct.intro.chain.clone(),
            None => {
                return Err(GraphError::UnknownEdge {
                    owner: event.reporter.clone(),
                    subject: event.subject.clone(),
                })
            }
        };

        let mut touched = Vec::with_capacity(1 + chain.len());
        touched.push(self.nudge_edge(&event.reporter, &event.subject, delta * event.q, 0, event.tick));
        for (idx, intermediary) in chain.iter().enumerate() {
            let position = idx + 1;
            if self.edge(&event.reporter, intermediary).is_none() {
                continue;
            }
            let step = delta * event.q * self.attenuation.powi(position as i32);
            touched.push(self.nudge_edge(&event.reporter, intermediary, step, position, event.tick));
        }
        self.feedback_log.push(event.clone());
        Ok(FeedbackReceipt {
            reporter: event.reporter.clone(),
            subject: event.subject.clone(),
            q: event.q,
            touched,
        })
    }

    /// Applies feedback at the reporter, then lets every intermediary on the
    /// reporter's recorded chain that also knows the subject apply its own
    /// attenuated feedback about the subject.
    ///
    /// This is the full propagation used when a misbehaviour report comes
    /// in: the victim downgrades the subject and its own introducers, and
    /// each responsible introducer downgrades the subject in turn. Receipts
    /// are returned in application order, the reporter's first.
    pub fn cascade_feedback(
        &mut self,
        event: &FeedbackEvent,
        delta: f64,
    ) -> Result<Vec<FeedbackReceipt>, GraphError> {
        let chain = match self.edge(&event.reporter, &event.subject) {
            Some(direct) => direct.intro.chain.clone(),
            None => {
                return Err(GraphError::UnknownEdge {
                    owner: event.reporter.clone(),
                    subject: event.subject.clone(),
                })
            }
        };
        let mut receipts = vec![self.apply_feedback(event, delta)?];
        for (idx, intermediary) in chain.iter().enumerate() {
            if intermediary == &event.subject
                || self.edge(intermediary, &event.subject).is_none()
            {
                continue;
            }
            let scaled = event.q * self.attenuation.powi((idx + 1) as i32);
            let derived = FeedbackEvent {
                reporter: intermediary.clone(),
                subject: event.subject.clone(),
                q: scaled,
                tick: event.tick,
                cause: event.cause.clone(),
            };
            receipts.push(self.apply_feedback(&derived, delta)?);
        }
        Ok(receipts)
    }

    fn nudge_edge(
        &mut self,
        owner: &TenantId,
        subject: &TenantId,
        step: f64,
        position: usize,
        tick: u64,
    ) -> TouchedEdge {
        let edge = self
            .edges
            .get_mut(&(owner.clone(), subject.clone()))
            .expect("edge existence checked by caller");
        let old = edge.score;
        edge.score = ReputationScore::clamped(old.value() + step);
        edge.last_update = tick;
        TouchedEdge {
            owner: owner.clone(),
            subject: subject.clone(),
            position,
            old,
            new: edge.score,
        }
    }

    fn require_tenant(&self, id: &TenantId) -> Result<(), GraphError> {
        if self.is_registered(id) {
            Ok(())
        } else {
            Err(GraphError::UnknownTenant { id: id.clone() })
        }
    }
}

impl From<ReputationGraph> for GraphSnapshot {
    fn from(g: ReputationGraph) -> Self {
        GraphSnapshot {
            scale: g.scale,
            default_global_score: g.default_global_score,
            attenuation: g.attenuation,
            tenants: g.tenants,
            edges: g.edges.into_values().collect(),
            feedback_log: g.feedback_log,
        }
    }
}

impl TryFrom<GraphSnapshot> for ReputationGraph {
    type Error = String;

    fn try_from(s: GraphSnapshot) -> Result<Self, Self::Error> {
        let mut edges = BTreeMap::new();
        for edge in s.edges {
            if !s.tenants.contains(&edge.owner) || !s.tenants.contains(&edge.subject) {
                return Err(format!(
                    "edge {} -> {} references an unregistered tenant",
                    edge.owner, edge.subject
                ));
            }
            edges.insert((edge.owner.clone(), edge.subject.clone()), edge);
        }
        Ok(ReputationGraph {
            scale: s.scale,
            default_global_score: s.default_global_score,
            attenuation: s.attenuation,
            tenants: s.tenants,
            edges,
            feedback_log: s.feedback_log,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(id: &str) -> TenantId {
        TenantId::from(id)
    }

    fn graph_with(tenants: &[&str]) -> ReputationGraph {
        let mut g = ReputationGraph::new();
        for id in tenants {
            g.register_tenant(t(id)).unwrap();
        }
        g
    }

    fn set_score(g: &mut ReputationGraph, owner: &str, subject: &str, score: f64) {
        g.establish_edge(&t(owner), &t(subject), &[], 0).unwrap();
        let key = (t(owner), t(subject));
        g.edges.get_mut(&key).unwrap().score = ReputationScore::new(score).unwrap();
    }

    #[test]
    fn register_into_empty_graph() {
        let mut g = ReputationGraph::new();
        g.register_tenant(t("T1")).unwrap();
        assert_eq!(g.tenant_count(), 1);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn register_twice_is_rejected() {
        let mut g = ReputationGraph::new();
        g.register_tenant(t("T1")).unwrap();
        assert_eq!(
            g.register_tenant(t("T1")),
            Err(GraphError::DuplicateTenant { id: t("T1") })
        );
    }

    #[test]
    fn fresh_tenants_have_no_reputation() {
        let mut g = ReputationGraph::new();
        for i in 0..1024 {
            g.register_tenant(t(&format!("t{i:04}"))).unwrap();
        }
        assert_eq!(g.tenant_count(), 1024);
        assert_eq!(g.edge_count(), 0);
        for i in 0..1024 {
            for j in [0usize, 1, 512, 1023] {
                let owner = t(&format!("t{i:04}"));
                let subject = t(&format!("t{j:04}"));
                assert_eq!(g.reputation_of(&owner, &subject), None);
            }
        }
    }

    #[test]
    fn establish_scales_the_introducer_score() {
        let mut g = graph_with(&["A", "B", "C"]);
        set_score(&mut g, "C", "B", 0.8);
        let edge = g.establish_edge(&t("C"), &t("A"), &[t("B")], 5).unwrap();
        assert_eq!(edge.score.value(), 0.4);
        assert_eq!(edge.intro.chain, vec![t("B")]);
        assert_eq!(g.reputation_of(&t("C"), &t("A")).unwrap().value(), 0.4);
    }

    #[test]
    fn establish_with_empty_chain_uses_default() {
        let mut g = graph_with(&["A", "C"]);
        let edge = g.establish_edge(&t("C"), &t("A"), &[], 0).unwrap();
        assert_eq!(edge.score.value(), DEFAULT_GLOBAL_SCORE);
        assert!(edge.intro.chain.is_empty());
    }

    #[test]
    fn establish_propagates_zero() {
        let mut g = graph_with(&["A", "B", "C"]);
        set_score(&mut g, "C", "B", 0.0);
        let edge = g.establish_edge(&t("C"), &t("A"), &[t("B")], 0).unwrap();
        assert_eq!(edge.score.value(), 0.0);
    }

    #[test]
    fn establish_requires_every_chain_link() {
        let mut g = graph_with(&["A", "B", "C", "D"]);
        set_score(&mut g, "D", "C", 0.5);
        // D -> C exists but C -> B does not.
        let err = g
            .establish_edge(&t("D"), &t("A"), &[t("C"), t("B")], 0)
            .unwrap_err();
        assert_eq!(
            err,
            GraphError::MissingIntroducerEdge {
                owner: t("C"),
                introducer: t("B"),
            }
        );
    }

    #[test]
    fn establish_rejects_unknown_tenant_and_bad_chains() {
        let mut g = graph_with(&["A", "C"]);
        assert!(matches!(
            g.establish_edge(&t("C"), &t("X"), &[], 0),
            Err(GraphError::UnknownTenant { .. })
        ));
        assert!(matches!(
            g.establish_edge(&t("C"), &t("A"), &[t("C")], 0),
            Err(GraphError::InvalidChain { .. })
        ));
        assert!(matches!(
            g.establish_edge(&t("C"), &t("C"), &[], 0),
            Err(GraphError::InvalidChain { .. })
        ));
    }

    #[test]
    fn feedback_attenuates_along_the_chain() {
        let mut g = graph_with(&["A", "C", "D"]);
        set_score(&mut g, "D", "C", 0.8);
        set_score(&mut g, "D", "A", 0.5);
        let key = (t("D"), t("A"));
        g.edges.get_mut(&key).unwrap().intro.chain = vec![t("C")];
        g.edges.get_mut(&key).unwrap().score = ReputationScore::new(0.9).unwrap();

        let event = FeedbackEvent::new(t("D"), t("A"), -1.0, 7, "port-scan").unwrap();
        let receipt = g.apply_feedback(&event, 0.2).unwrap();

        let r_da = g.reputation_of(&t("D"), &t("A")).unwrap().value();
        let r_dc = g.reputation_of(&t("D"), &t("C")).unwrap().value();
        assert!((r_da - 0.7).abs() < 1e-12, "direct edge moved by delta*q");
        assert!((r_dc - 0.7).abs() < 1e-12, "chain edge moved by delta*q*gamma");
        assert_eq!(receipt.touched.len(), 2);
        assert_eq!(receipt.touched[0].position, 0);
        assert_eq!(receipt.touched[1].position, 1);
        assert_eq!(g.feedback_log().len(), 1);
    }

    #[test]
    fn zero_feedback_changes_nothing_but_is_receipted() {
        let mut g = graph_with(&["A", "D"]);
        set_score(&mut g, "D", "A", 0.6);
        let event = FeedbackEvent::new(t("D"), t("A"), 0.0, 0, "idle").unwrap();
        let receipt = g.apply_feedback(&event, 0.2).unwrap();
        assert_eq!(receipt.touched.len(), 1);
        assert_eq!(receipt.touched[0].old, receipt.touched[0].new);
        assert_eq!(g.reputation_of(&t("D"), &t("A")).unwrap().value(), 0.6);
    }

    #[test]
    fn feedback_clamps_at_zero() {
        let mut g = graph_with(&["A", "D"]);
        set_score(&mut g, "D", "A", 0.05);
        let event = FeedbackEvent::new(t("D"), t("A"), -1.0, 0, "flood").unwrap();
        g.apply_feedback(&event, 0.2).unwrap();
        assert_eq!(g.reputation_of(&t("D"), &t("A")).unwrap().value(), 0.0);
    }

    #[test]
    fn feedback_clamps_at_one() {
        let mut g = graph_with(&["A", "D"]);
        set_score(&mut g, "D", "A", 0.95);
        let event = FeedbackEvent::new(t("D"), t("A"), 1.0, 0, "good-session").unwrap();
        g.apply_feedback(&event, 0.2).unwrap();
        assert_eq!(g.reputation_of(&t("D"), &t("A")).unwrap().value(), 1.0);
    }

    #[test]
    fn feedback_requires_the_direct_edge() {
        let mut g = graph_with(&["A", "D"]);
        let event = FeedbackEvent::new(t("D"), t("A"), -0.5, 0, "x").unwrap();
        assert!(matches!(
            g.apply_feedback(&event, 0.2),
            Err(GraphError::UnknownEdge { .. })
        ));
    }

    #[test]
    fn feedback_rejects_out_of_range_q() {
        assert!(matches!(
            FeedbackEvent::new(t("D"), t("A"), -1.5, 0, "x"),
            Err(GraphError::FeedbackOutOfRange { .. })
        ));
        let mut g = graph_with(&["A", "D"]);
        set_score(&mut g, "D", "A", 0.5);
        let mut event = FeedbackEvent::new(t("D"), t("A"), -1.0, 0, "x").unwrap();
        event.q = 1.5;
        assert!(matches!(
            g.apply_feedback(&event, 0.2),
            Err(GraphError::FeedbackOutOfRange { .. })
        ));
    }

    #[test]
    fn missing_chain_edges_are_skipped() {
        let mut g = graph_with(&["A", "B", "C", "D"]);
        set_score(&mut g, "D", "C", 0.8);
        set_score(&mut g, "C", "B", 0.8);
        // Chain [C, B] recorded on D -> A, but D holds no edge to B.
        g.establish_edge(&t("D"), &t("A"), &[t("C"), t("B")], 0)
            .unwrap();
        let event = FeedbackEvent::new(t("D"), t("A"), -1.0, 1, "x").unwrap();
        let receipt = g.apply_feedback(&event, 0.2).unwrap();
        let positions: Vec<usize> = receipt.touched.iter().map(|e| e.position).collect();
        assert_eq!(positions, vec![0, 1]);
        assert_eq!(g.reputation_of(&t("D"), &t("B")), None);
    }

    #[test]
    fn reputation_of_self_pair_is_none() {
        let g = graph_with(&["A"]);
        assert_eq!(g.reputation_of(&t("A"), &t("A")), None);
    }

    #[test]
    fn reputation_of_unknown_pair_is_none() {
        let g = graph_with(&["A", "B"]);
        assert_eq!(g.reputation_of(&t("A"), &t("B")), None);
    }

    #[test]
    fn cascade_touches_each_responsible_introducer() {
        // Linear topology A - B - C - D with mutual bootstrap edges, then
        // A introduced to C via [B] and to D via [C, B].
        let mut g = graph_with(&["A", "B", "C", "D"]);
        for (o, s) in [("A", "B"), ("B", "A"), ("B", "C"), ("C", "B"), ("C", "D"), ("D", "C")] {
            g.establish_edge(&t(o), &t(s), &[], 0).unwrap();
        }
        g.establish_edge(&t("C"), &t("A"), &[t("B")], 1).unwrap();
        g.establish_edge(&t("D"), &t("A"), &[t("C"), t("B")], 1)
            .unwrap();

        let before = g.clone();
        let event = FeedbackEvent::new(t("D"), t("A"), -1.0, 2, "malicious-packets").unwrap();
        let receipts = g.cascade_feedback(&event, 0.2).unwrap();

        let mut changed: Vec<(TenantId, TenantId)> = Vec::new();
        for edge in g.edges() {
            let old = before.reputation_of(&edge.owner, &edge.subject).unwrap();
            if old != edge.score {
                changed.push((edge.owner.clone(), edge.subject.clone()));
            }
        }
        changed.sort();
        let expected = vec![
            (t("B"), t("A")),
            (t("C"), t("A")),
            (t("C"), t("B")),
            (t("D"), t("A")),
            (t("D"), t("C")),
        ];
        assert_eq!(changed, expected);
        assert_eq!(receipts.len(), 3);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut g = graph_with(&["A", "B", "C"]);
        set_score(&mut g, "C", "B", 0.8);
        g.establish_edge(&t("C"), &t("A"), &[t("B")], 3).unwrap();
        let event = FeedbackEvent::new(t("C"), t("A"), -0.25, 4, "drop").unwrap();
        g.apply_feedback(&event, 0.2).unwrap();

        let json = serde_json::to_string(&g).unwrap();
        let restored: ReputationGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(g, restored);
    }
}

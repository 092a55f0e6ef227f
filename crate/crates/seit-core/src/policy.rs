//! Score-driven policy: per-application action bands and component shims.
//!
//! A `PolicyProfile` partitions [0, 1] into half-open bands (the top band
//! closed at 1.0), each mapped to an action. Shims wrap simulated
//! components: inbound logic turns a reputation update into a component
//! command, outbound logic turns a component event into feedback.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{FeedbackEvent, GraphError, TenantId};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("malformed profile: {reason}")]
    MalformedProfile { reason: String },
    #[error("shim kind {kind:?} does not implement {logic} logic")]
    UnsupportedKind { kind: ComponentKind, logic: String },
    #[error("outbound weight {weight} for tag {tag:?} outside [-1, 1]")]
    WeightOutOfRange { tag: String, weight: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// What a policy does with traffic in a score band. Ordered from most to
/// least restrictive.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Block,
    ForwardToIds,
    ForwardToProxy,
    Allow,
}

/// One score interval. `[lower, upper)`, except the profile's top band
/// which includes 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
    pub action: Action,
}

/// An application's mapping from score bands to actions. Bands partition
/// [0, 1] with no gaps or overlaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileRepr")]
pub struct PolicyProfile {
    pub application: String,
    pub bands: Vec<Band>,
}

#[derive(Deserialize)]
struct ProfileRepr {
    application: String,
    bands: Vec<Band>,
}

impl TryFrom<ProfileRepr> for PolicyProfile {
    type Error = String;

    fn try_from(repr: ProfileRepr) -> Result<Self, Self::Error> {
        PolicyProfile::new(repr.application, repr.bands).map_err(|e| e.to_string())
    }
}

impl PolicyProfile {
    /// Validates the band partition at construction; lookups never fail.
    pub fn new(application: impl Into<String>, bands: Vec<Band>) -> Result<Self, PolicyError> {
        if bands.is_empty() {
            return Err(PolicyError::MalformedProfile {
                reason: "no bands".into(),
            });
        }
        if bands[0].lower != 0.0 {
            return Err(PolicyError::MalformedProfile {
                reason: format!("first band starts at {}, not 0", bands[0].lower),
            });
        }
        if bands[bands.len() - 1].upper != 1.0 {
            return Err(PolicyError::MalformedProfile {
                reason: format!(
                    "last band ends at {}, not 1",
                    bands[bands.len() - 1].upper
                ),
            });
        }
        for band in &bands {
            if !(band.lower < band.upper) {
                return Err(PolicyError::MalformedProfile {
                    reason: format!("empty band [{}, {})", band.lower, band.upper),
                });
            }
        }
        for pair in bands.windows(2) {
            if pair[0].upper != pair[1].lower {
                return Err(PolicyError::MalformedProfile {
                    reason: format!(
                        "gap or overlap between {} and {}",
                        pair[0].upper, pair[1].lower
                    ),
                });
            }
        }
        Ok(PolicyProfile {
            application: application.into(),
            bands,
        })
    }

    /// The action for a score. The unique matching band is `[lower, upper)`
    /// except the top band, which also matches 1.0.
    pub fn action_for(&self, score: f64) -> Action {
        let score = score.clamp(0.0, 1.0);
        for (i, band) in self.bands.iter().enumerate() {
            let top = i == self.bands.len() - 1;
            if score >= band.lower && (score < band.upper || (top && score <= band.upper)) {
                return band.action;
            }
        }
        unreachable!("bands partition [0, 1]")
    }

    /// Band pairs where a higher score maps to a strictly more restrictive
    /// action. Empty for monotone profiles; reported as warnings, not
    /// errors, since cautious applications may deliberately cap high scores.
    pub fn monotonicity_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for pair in self.bands.windows(2) {
            if pair[1].action < pair[0].action {
                out.push(format!(
                    "{}: [{}, {}) {:?} is more restrictive than the band below it",
                    self.application, pair[1].lower, pair[1].upper, pair[1].action,
                ));
            }
        }
        out
    }

    /// Three-way banding used by flow controllers: block below
    /// `block_below`, route through the inspection middlebox below
    /// `bypass_at`, direct connection above.
    pub fn middlebox_banding(
        application: impl Into<String>,
        block_below: f64,
        bypass_at: f64,
    ) -> Result<Self, PolicyError> {
        let mut bands = Vec::new();
        if block_below > 0.0 {
            bands.push(Band {
                lower: 0.0,
                upper: block_below,
                action: Action::Block,
            });
        }
        if bypass_at > block_below {
            bands.push(Band {
                lower: block_below,
                upper: bypass_at,
                action: Action::ForwardToIds,
            });
        }
        bands.push(Band {
            lower: bypass_at.max(block_below),
            upper: 1.0,
            action: Action::Allow,
        });
        PolicyProfile::new(application, bands)
    }

    /// Sample mail-server profile: conservative, never a direct path.
    pub fn mail() -> Self {
        PolicyProfile::new(
            "Mail",
            vec![
                Band { lower: 0.0, upper: 0.1, action: Action::Block },
                Band { lower: 0.1, upper: 0.2, action: Action::Block },
                Band { lower: 0.2, upper: 0.5, action: Action::Block },
                Band { lower: 0.5, upper: 0.8, action: Action::ForwardToIds },
                Band { lower: 0.8, upper: 1.0, action: Action::ForwardToIds },
            ],
        )
        .expect("static profile is well formed")
    }

    /// Sample web-server profile.
    pub fn web_server() -> Self {
        PolicyProfile::new(
            "WebServer",
            vec![
                Band { lower: 0.0, upper: 0.1, action: Action::Block },
                Band { lower: 0.1, upper: 0.2, action: Action::Block },
                Band { lower: 0.2, upper: 0.5, action: Action::ForwardToIds },
                Band { lower: 0.5, upper: 0.8, action: Action::ForwardToProxy },
                Band { lower: 0.8, upper: 1.0, action: Action::Allow },
            ],
        )
        .expect("static profile is well formed")
    }

    /// Sample CDN profile.
    pub fn cdn() -> Self {
        PolicyProfile::new(
            "CDN",
            vec![
                Band { lower: 0.0, upper: 0.1, action: Action::Block },
                Band { lower: 0.1, upper: 0.2, action: Action::ForwardToIds },
                Band { lower: 0.2, upper: 0.5, action: Action::ForwardToIds },
                Band { lower: 0.5, upper: 0.8, action: Action::ForwardToIds },
                Band { lower: 0.8, upper: 1.0, action: Action::Allow },
            ],
        )
        .expect("static profile is well formed")
    }
}

/// The kind of component a shim wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    FlowController,
    LoadBalancer,
    Broker,
    IdsSensor,
    Monitor,
}

/// Kind-specific inbound configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InboundRules {
    /// Install flow rules from a banding profile.
    FlowControl { profile: PolicyProfile },
    /// Split clients across trusted/untrusted server pools.
    LoadBalance { trust_threshold: f64 },
    /// Re-rank cached discovery results; providers below the floor are
    /// filtered out.
    Broker { min_reputation: f64 },
    /// Watch own collective reputation and alert below the threshold.
    Monitor { alert_threshold: f64 },
    /// Outbound-only components.
    None,
}

/// A shim wrapping one component: inbound rules plus a map from component
/// event tags to feedback weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimSpec {
    pub component_kind: ComponentKind,
    pub inbound_rules: InboundRules,
    pub outbound_weights: BTreeMap<String, f64>,
}

impl ShimSpec {
    pub fn new(
        component_kind: ComponentKind,
        inbound_rules: InboundRules,
        outbound_weights: BTreeMap<String, f64>,
    ) -> Result<Self, PolicyError> {
        for (tag, weight) in &outbound_weights {
            if !weight.is_finite() || weight.abs() > 1.0 {
                return Err(PolicyError::WeightOutOfRange {
                    tag: tag.clone(),
                    weight: *weight,
                });
            }
        }
        Ok(ShimSpec {
            component_kind,
            inbound_rules,
            outbound_weights,
        })
    }
}

/// A reputation change delivered to a shim's inbound logic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationUpdate {
    pub subject: TenantId,
    pub score: f64,
}

/// Traffic treatment a flow controller installs for a subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowTreatment {
    Block,
    RouteThroughMiddlebox,
    RouteThroughProxy,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerPool {
    Trusted,
    Untrusted,
}

/// The command a shim's inbound logic issues to its component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentCommand {
    InstallFlowRule {
        subject: TenantId,
        treatment: FlowTreatment,
    },
    AssignPool {
        subject: TenantId,
        pool: ServerPool,
    },
    ReRankResults,
    RecordSentiment {
        value: f64,
    },
    RaiseAlert {
        sentiment: f64,
        threshold: f64,
    },
}

/// An event raised by a component, to be translated into feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEvent {
    pub reporter: TenantId,
    pub subject: TenantId,
    pub tag: String,
    pub tick: u64,
}

fn flow_treatment(action: Action) -> FlowTreatment {
    match action {
        Action::Block => FlowTreatment::Block,
        Action::ForwardToIds => FlowTreatment::RouteThroughMiddlebox,
        Action::ForwardToProxy => FlowTreatment::RouteThroughProxy,
        Action::Allow => FlowTreatment::Direct,
    }
}

/// Interprets a reputation update as a command for the wrapped component.
pub fn shim_inbound(
    spec: &ShimSpec,
    update: &ReputationUpdate,
) -> Result<ComponentCommand, PolicyError> {
    match &spec.inbound_rules {
        InboundRules::FlowControl { profile } => Ok(ComponentCommand::InstallFlowRule {
            subject: update.subject.clone(),
            treatment: flow_treatment(profile.action_for(update.score)),
        }),
        InboundRules::LoadBalance { trust_threshold } => Ok(ComponentCommand::AssignPool {
            subject: update.subject.clone(),
            pool: if update.score >= *trust_threshold {
                ServerPool::Trusted
            } else {
                ServerPool::Untrusted
            },
        }),
        InboundRules::Broker { .. } => Ok(ComponentCommand::ReRankResults),
        InboundRules::Monitor { alert_threshold } => {
            if update.score < *alert_threshold {
                Ok(ComponentCommand::RaiseAlert {
                    sentiment: update.score,
                    threshold: *alert_threshold,
                })
            } else {
                Ok(ComponentCommand::RecordSentiment {
                    value: update.score,
                })
            }
        }
        InboundRules::None => Err(PolicyError::UnsupportedKind {
            kind: spec.component_kind,
            logic: "inbound".into(),
        }),
    }
}

/// Translates a component event into a feedback event via the shim's
/// outbound weights. Unmapped tags produce no feedback.
pub fn shim_outbound(
    spec: &ShimSpec,
    event: &ComponentEvent,
) -> Result<Option<FeedbackEvent>, PolicyError> {
    match spec.outbound_weights.get(&event.tag) {
        Some(weight) => Ok(Some(FeedbackEvent::new(
            event.reporter.clone(),
            event.subject.clone(),
            *weight,
            event.tick,
            event.tag.clone(),
        )?)),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(id: &str) -> TenantId {
        TenantId::from(id)
    }

    #[test]
    fn score_table_examples() {
        assert_eq!(PolicyProfile::mail().action_for(0.15), Action::Block);
        assert_eq!(PolicyProfile::web_server().action_for(0.9), Action::Allow);
        assert_eq!(PolicyProfile::cdn().action_for(0.5), Action::ForwardToIds);
    }

    #[test]
    fn top_band_includes_one() {
        assert_eq!(PolicyProfile::web_server().action_for(1.0), Action::Allow);
        assert_eq!(PolicyProfile::web_server().action_for(0.0), Action::Block);
    }

    #[test]
    fn malformed_profiles_rejected_at_construction() {
        let gap = PolicyProfile::new(
            "X",
            vec![
                Band { lower: 0.0, upper: 0.4, action: Action::Block },
                Band { lower: 0.5, upper: 1.0, action: Action::Allow },
            ],
        );
        assert!(matches!(gap, Err(PolicyError::MalformedProfile { .. })));
        let overlap = PolicyProfile::new(
            "X",
            vec![
                Band { lower: 0.0, upper: 0.6, action: Action::Block },
                Band { lower: 0.5, upper: 1.0, action: Action::Allow },
            ],
        );
        assert!(matches!(overlap, Err(PolicyError::MalformedProfile { .. })));
        let short = PolicyProfile::new(
            "X",
            vec![Band { lower: 0.0, upper: 0.9, action: Action::Block }],
        );
        assert!(matches!(short, Err(PolicyError::MalformedProfile { .. })));
    }

    #[test]
    fn band_totality_sweep() {
        for profile in [
            PolicyProfile::mail(),
            PolicyProfile::web_server(),
            PolicyProfile::cdn(),
        ] {
            let mut score = 0.0;
            while score <= 1.0 {
                let matches = profile
                    .bands
                    .iter()
                    .enumerate()
                    .filter(|(i, b)| {
                        let top = *i == profile.bands.len() - 1;
                        score >= b.lower && (score < b.upper || (top && score <= b.upper))
                    })
                    .count();
                assert_eq!(matches, 1, "score {score} in {}", profile.application);
                score += 0.001;
            }
        }
    }

    #[test]
    fn sample_profiles_are_monotone() {
        assert!(PolicyProfile::mail().monotonicity_violations().is_empty());
        assert!(PolicyProfile::web_server().monotonicity_violations().is_empty());
        assert!(PolicyProfile::cdn().monotonicity_violations().is_empty());
    }

    #[test]
    fn monotonicity_violation_is_reported() {
        let profile = PolicyProfile::new(
            "X",
            vec![
                Band { lower: 0.0, upper: 0.5, action: Action::Allow },
                Band { lower: 0.5, upper: 1.0, action: Action::Block },
            ],
        )
        .unwrap();
        assert_eq!(profile.monotonicity_violations().len(), 1);
    }

    #[test]
    fn load_balancer_assigns_pools_by_threshold() {
        let shim = ShimSpec::new(
            ComponentKind::LoadBalancer,
            InboundRules::LoadBalance { trust_threshold: 0.5 },
            BTreeMap::new(),
        )
        .unwrap();
        let cmd = shim_inbound(&shim, &ReputationUpdate { subject: t("T2"), score: 0.7 }).unwrap();
        assert_eq!(
            cmd,
            ComponentCommand::AssignPool { subject: t("T2"), pool: ServerPool::Trusted }
        );
        let cmd = shim_inbound(&shim, &ReputationUpdate { subject: t("T2"), score: 0.3 }).unwrap();
        assert_eq!(
            cmd,
            ComponentCommand::AssignPool { subject: t("T2"), pool: ServerPool::Untrusted }
        );
    }

    #[test]
    fn flow_controller_routes_mid_scores_through_middlebox() {
        let shim = ShimSpec::new(
            ComponentKind::FlowController,
            InboundRules::FlowControl {
                profile: PolicyProfile::middlebox_banding("sdn", 0.0, 0.8).unwrap(),
            },
            BTreeMap::new(),
        )
        .unwrap();
        let cmd = shim_inbound(&shim, &ReputationUpdate { subject: t("T1"), score: 0.4 }).unwrap();
        assert_eq!(
            cmd,
            ComponentCommand::InstallFlowRule {
                subject: t("T1"),
                treatment: FlowTreatment::RouteThroughMiddlebox,
            }
        );
    }

    #[test]
    fn monitor_alerts_when_sentiment_drops() {
        let shim = ShimSpec::new(
            ComponentKind::Monitor,
            InboundRules::Monitor { alert_threshold: 0.4 },
            BTreeMap::new(),
        )
        .unwrap();
        let cmd = shim_inbound(&shim, &ReputationUpdate { subject: t("self"), score: 0.3 }).unwrap();
        assert_eq!(
            cmd,
            ComponentCommand::RaiseAlert { sentiment: 0.3, threshold: 0.4 }
        );
        let cmd = shim_inbound(&shim, &ReputationUpdate { subject: t("self"), score: 0.6 }).unwrap();
        assert_eq!(cmd, ComponentCommand::RecordSentiment { value: 0.6 });
    }

    #[test]
    fn ids_sensor_has_no_inbound_logic() {
        let shim = ShimSpec::new(
            ComponentKind::IdsSensor,
            InboundRules::None,
            BTreeMap::from([("port-scan".to_string(), -0.5)]),
        )
        .unwrap();
        assert!(matches!(
            shim_inbound(&shim, &ReputationUpdate { subject: t("T1"), score: 0.4 }),
            Err(PolicyError::UnsupportedKind { .. })
        ));
    }

    #[test]
    fn outbound_maps_alert_tags_to_feedback() {
        let shim = ShimSpec::new(
            ComponentKind::IdsSensor,
            InboundRules::None,
            BTreeMap::from([
                ("connection-drop".to_string(), -0.1),
                ("port-scan".to_string(), -0.5),
            ]),
        )
        .unwrap();
        let event = |tag: &str| ComponentEvent {
            reporter: t("T1"),
            subject: t("T2"),
            tag: tag.to_string(),
            tick: 3,
        };
        let fb = shim_outbound(&shim, &event("connection-drop")).unwrap().unwrap();
        assert_eq!(fb.q, -0.1);
        let fb = shim_outbound(&shim, &event("port-scan")).unwrap().unwrap();
        assert_eq!(fb.q, -0.5);
        assert_eq!(fb.cause, "port-scan");
        assert!(shim_outbound(&shim, &event("heartbeat")).unwrap().is_none());
    }

    #[test]
    fn outbound_weights_validated_at_construction() {
        let err = ShimSpec::new(
            ComponentKind::IdsSensor,
            InboundRules::None,
            BTreeMap::from([("x".to_string(), -1.5)]),
        );
        assert!(matches!(err, Err(PolicyError::WeightOutOfRange { .. })));
    }
}

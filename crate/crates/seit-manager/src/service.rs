//! Message dispatch over the reputation graph and query engine.
//!
//! All mutations funnel through one `ManagerState`; the server feeds it
//! messages from a single dispatcher thread, which makes every observable
//! state a result of some total order over the incoming messages. Error
//! paths never mutate state: decoding, validation, and path search all
//! happen before the first write.

use std::collections::BTreeMap;

use seit_core::graph::{
    FeedbackEvent, GraphError, ReputationGraph, ReputationScore, TenantId, DEFAULT_FEEDBACK_STEP,
};
use seit_core::query::{
    CrossingDirection, QueryConfig, QueryEngine, QueryError, RateLimit, SubjectFilter,
};

use crate::proto::{
    decode_message, ComponentDescriptor, Direction, Message, ProtoError, RateLimitConfig,
};

/// Identifies one client connection; assigned by the transport layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SessionId(pub u64);

/// Where an outbound message should be delivered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Destination {
    /// The session the inbound message arrived on.
    Sender,
    /// The session currently registered for a tenant, if any.
    Tenant(TenantId),
}

pub type Outbound = Vec<(Destination, Message)>;

/// The manager's full mutable state: reputation graph, query engine,
/// session bindings, and registered component descriptors.
#[derive(Debug, Default)]
pub struct ManagerState {
    graph: ReputationGraph,
    engine: QueryEngine,
    sessions: BTreeMap<TenantId, SessionId>,
    components: BTreeMap<TenantId, Vec<ComponentDescriptor>>,
    clock: u64,
    feedback_step: f64,
}

impl ManagerState {
    pub fn new() -> Self {
        ManagerState {
            feedback_step: DEFAULT_FEEDBACK_STEP,
            ..ManagerState::default()
        }
    }

    /// Manager whose unconfigured tenants use the given selectivity and
    /// rate limit (typically taken from a proxy config).
    pub fn with_defaults(selectivity: f64, rate_limit: RateLimit) -> Self {
        ManagerState {
            engine: QueryEngine::with_defaults(selectivity, rate_limit),
            feedback_step: DEFAULT_FEEDBACK_STEP,
            ..ManagerState::default()
        }
    }

    /// Manager running over an existing graph, e.g. a snapshot loaded at
    /// startup. Initial (pre-introduction) connections are administrative
    /// state: the wire protocol itself only creates edges through
    /// introductions.
    pub fn with_graph(graph: ReputationGraph) -> Self {
        ManagerState {
            graph,
            feedback_step: DEFAULT_FEEDBACK_STEP,
            ..ManagerState::default()
        }
    }

    pub fn graph(&self) -> &ReputationGraph {
        &self.graph
    }

    /// Administrative access for bootstrap tooling; protocol handlers never
    /// use this.
    pub fn graph_mut(&mut self) -> &mut ReputationGraph {
        &mut self.graph
    }

    pub fn engine(&self) -> &QueryEngine {
        &self.engine
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn session_of(&self, tenant: &TenantId) -> Option<SessionId> {
        self.sessions.get(tenant).copied()
    }

    pub fn components_of(&self, tenant: &TenantId) -> &[ComponentDescriptor] {
        self.components
            .get(tenant)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Drops the session bindings held by a disconnected transport.
    pub fn drop_session(&mut self, session: SessionId) {
        self.sessions.retain(|_, s| *s != session);
    }

    /// Decodes one frame and dispatches it. Frames that fail to decode
    /// produce an error reply and leave all state untouched.
    pub fn handle_line(&mut self, session: SessionId, line: &[u8]) -> Outbound {
        match decode_message(line) {
            Ok(msg) => self.handle_message(session, msg),
            Err(err) => vec![(Destination::Sender, error_reply(None, &err))],
        }
    }

    /// Dispatches one decoded message, returning the outbound messages it
    /// produced. The logical clock advances by one per message, or jumps
    /// forward to a caller-supplied tick.
    pub fn handle_message(&mut self, session: SessionId, msg: Message) -> Outbound {
        match msg {
            Message::Register { tenant, component } => {
                self.advance_clock(None);
                self.register(session, tenant, component)
            }
            Message::ConnectRequest {
                request_id,
                src,
                dst,
                tick,
            } => {
                self.advance_clock(tick);
                if let Err(out) = self.require_registered_session(session, Some(&request_id)) {
                    return out;
                }
                self.connect(request_id, src, dst)
            }
            Message::Feedback {
                reporter,
                subject,
                q,
                cause,
                tick,
            } => {
                self.advance_clock(tick);
                if let Err(out) = self.require_registered_session(session, None) {
                    return out;
                }
                self.feedback(reporter, subject, q, cause)
            }
            Message::Configure {
                tenant,
                selectivity_threshold,
                rate_limit,
                subscription,
            } => {
                self.advance_clock(None);
                if let Err(out) = self.require_registered_session(session, None) {
                    return out;
                }
                self.configure(tenant, selectivity_threshold, rate_limit, subscription)
            }
            Message::ConnectApprove { .. }
            | Message::ConnectReject { .. }
            | Message::ReputationUpdate { .. }
            | Message::Error { .. } => vec![(
                Destination::Sender,
                Message::Error {
                    request_id: None,
                    code: "unexpected_message".into(),
                    detail: "message type is only sent by the manager".into(),
                },
            )],
        }
    }

    fn advance_clock(&mut self, tick: Option<u64>) {
        self.clock = (self.clock + 1).max(tick.unwrap_or(0));
    }

    fn require_registered_session(
        &self,
        session: SessionId,
        request_id: Option<&str>,
    ) -> Result<(), Outbound> {
        if self.sessions.values().any(|s| *s == session) {
            Ok(())
        } else {
            Err(vec![(
                Destination::Sender,
                Message::Error {
                    request_id: request_id.map(str::to_string),
                    code: "unregistered_session".into(),
                    detail: "register before sending other messages".into(),
                },
            )])
        }
    }

    fn register(
        &mut self,
        session: SessionId,
        tenant: String,
        component: Option<ComponentDescriptor>,
    ) -> Outbound {
        let id = TenantId::new(tenant);
        if !self.graph.is_registered(&id) {
            self.graph
                .register_tenant(id.clone())
                .expect("registration checked above");
        }
        // Re-registration replaces the transport handle (proxy restart).
        self.sessions.insert(id.clone(), session);
        if let Some(descriptor) = component {
            let list = self.components.entry(id).or_default();
            list.retain(|c| c.name != descriptor.name);
            list.push(descriptor);
        }
        Vec::new()
    }

    fn connect(&mut self, request_id: String, src: String, dst: String) -> Outbound {
        let src_id = TenantId::new(src.clone());
        let dst_id = TenantId::new(dst.clone());
        let reject = |reason: String| {
            vec![(
                Destination::Sender,
                Message::ConnectReject {
                    request_id: request_id.clone(),
                    src: src.clone(),
                    dst: dst.clone(),
                    reason,
                },
            )]
        };
        let found = match self
            .engine
            .find_introduction_path(&self.graph, &src_id, &dst_id, self.clock)
        {
            Ok(Some(result)) => result,
            Ok(None) => return reject("no_path".into()),
            Err(err) => return reject(query_error_code(&err)),
        };

        // Introduce the source along the path: every hop that does not yet
        // know the source gets an edge derived from its nearest introducer.
        let mut hops = vec![src_id.clone()];
        hops.extend(found.path.iter().cloned());
        hops.push(dst_id.clone());
        for k in 1..hops.len() {
            if self.graph.edge(&hops[k], &src_id).is_some() {
                continue;
            }
            let chain: Vec<TenantId> = hops[1..k].iter().rev().cloned().collect();
            self.graph
                .establish_edge(&hops[k], &src_id, &chain, self.clock)
                .expect("path hops satisfy establishment preconditions");
        }
        let score = self
            .graph
            .reputation_of(&dst_id, &src_id)
            .expect("destination edge established above");

        let approve = Message::ConnectApprove {
            request_id,
            src,
            dst,
            score: score.value(),
            path: found.path.iter().map(|t| t.to_string()).collect(),
        };
        vec![
            (Destination::Tenant(src_id), approve.clone()),
            (Destination::Tenant(dst_id), approve),
        ]
    }

    fn feedback(
        &mut self,
        reporter: String,
        subject: String,
        q: f64,
        cause: Option<String>,
    ) -> Outbound {
        let event = match FeedbackEvent::new(
            TenantId::new(reporter),
            TenantId::new(subject),
            q,
            self.clock,
            cause.unwrap_or_default(),
        ) {
            Ok(event) => event,
            Err(err) => return vec![(Destination::Sender, graph_error_reply(&err))],
        };
        let receipts = match self.graph.cascade_feedback(&event, self.feedback_step) {
            Ok(receipts) => receipts,
            Err(err) => return vec![(Destination::Sender, graph_error_reply(&err))],
        };

        let mut out = Vec::new();
        for receipt in &receipts {
            for touched in &receipt.touched {
                if touched.old == touched.new {
                    continue;
                }
                let crossings = self.engine.process_edge_update(
                    &touched.owner,
                    &touched.subject,
                    touched.old,
                    touched.new,
                    self.clock,
                );
                for crossing in crossings {
                    out.push((
                        Destination::Tenant(crossing.subscriber.clone()),
                        Message::ReputationUpdate {
                            subscriber: crossing.subscriber.to_string(),
                            subject: crossing.subject.to_string(),
                            threshold: crossing.threshold.value(),
                            direction: match crossing.direction {
                                CrossingDirection::Rising => Direction::Rising,
                                CrossingDirection::Falling => Direction::Falling,
                            },
                            new_score: crossing.new_score.value(),
                            tick: crossing.tick,
                        },
                    ));
                }
            }
        }
        out
    }

    fn configure(
        &mut self,
        tenant: String,
        selectivity_threshold: Option<f64>,
        rate_limit: Option<RateLimitConfig>,
        subscription: Option<crate::proto::SubscriptionConfig>,
    ) -> Outbound {
        let id = TenantId::new(tenant);
        if !self.graph.is_registered(&id) {
            return vec![(
                Destination::Sender,
                Message::Error {
                    request_id: None,
                    code: "unknown_tenant".into(),
                    detail: format!("{id} is not registered"),
                },
            )];
        }
        // Validate the subscription before touching any state so a bad
        // configure message has no partial effect.
        if let Some(sub) = subscription {
            let filter = match &sub.subject {
                Some(subject) => SubjectFilter::Tenant(TenantId::new(subject.clone())),
                None => SubjectFilter::Any,
            };
            if let Err(err) = self.engine.subscribe(id.clone(), filter, sub.thresholds) {
                return vec![(
                    Destination::Sender,
                    Message::Error {
                        request_id: None,
                        code: query_error_code(&err),
                        detail: err.to_string(),
                    },
                )];
            }
        }
        if selectivity_threshold.is_some() || rate_limit.is_some() {
            let current = self.engine.config(&id).cloned();
            let threshold = selectivity_threshold
                .map(ReputationScore::clamped)
                .or(current.as_ref().map(|c| c.selectivity_threshold))
                .unwrap_or(ReputationScore::clamped(0.0));
            let limit = rate_limit
                .map(|l| RateLimit {
                    max_introductions: l.max,
                    window: l.window_ticks,
                })
                .or(current.map(|c| c.rate_limit))
                .unwrap_or_else(RateLimit::unlimited);
            self.engine.set_config(QueryConfig {
                owner: id,
                selectivity_threshold: threshold,
                rate_limit: limit,
            });
        }
        Vec::new()
    }
}

fn error_reply(request_id: Option<String>, err: &ProtoError) -> Message {
    let code = match err {
        ProtoError::MalformedFrame { .. } => "malformed_frame",
        ProtoError::UnknownMessageType { .. } => "unknown_message_type",
        ProtoError::SchemaViolation { .. } => "schema_violation",
    };
    Message::Error {
        request_id,
        code: code.into(),
        detail: err.to_string(),
    }
}

fn graph_error_reply(err: &GraphError) -> Message {
    let code = match err {
        GraphError::DuplicateTenant { .. } => "duplicate_tenant",
        GraphError::UnknownTenant { .. } => "unknown_tenant",
        GraphError::UnknownEdge { .. } => "unknown_edge",
        GraphError::MissingIntroducerEdge { .. } => "missing_introducer_edge",
        GraphError::FeedbackOutOfRange { .. } => "feedback_out_of_range",
        GraphError::SelfFeedback { .. } => "self_feedback",
        _ => "graph_error",
    };
    Message::Error {
        request_id: None,
        code: code.into(),
        detail: err.to_string(),
    }
}

fn query_error_code(err: &QueryError) -> String {
    match err {
        QueryError::UnknownTenant { .. } => "unknown_tenant".into(),
        QueryError::SameEndpoints { .. } => "same_endpoints".into(),
        QueryError::InvalidThresholds { .. } => "invalid_thresholds".into(),
        QueryError::InvalidRateLimit => "invalid_rate_limit".into(),
    }
}

//! Core engine for the Seit reputation manager: the introduction-based
//! reputation graph, its timeslot update dynamics, the path/threshold query
//! engine, and score-driven policy actions.

pub mod dynamics;
pub mod graph;
pub mod policy;
pub mod query;

pub use graph::{
    Edge, FeedbackEvent, FeedbackReceipt, GraphError, IntroductionRecord, IntroductionScale,
    ReputationGraph, ReputationScore, TenantId,
};
pub use query::{PathResult, QueryConfig, QueryEngine, RateLimit};

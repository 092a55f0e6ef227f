//! Wire protocol: newline-delimited UTF-8 JSON frames.
//!
//! Every frame is one JSON object with a `type` field selecting the message
//! variant. Decoding is strict: unknown types, missing fields, extra
//! fields, and out-of-range values are all rejected, each with a distinct
//! error, and never panic on arbitrary bytes.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProtoError {
    #[error("malformed frame: {reason}")]
    MalformedFrame { reason: String },
    #[error("unknown message type {found:?}")]
    UnknownMessageType { found: String },
    #[error("schema violation: {reason}")]
    SchemaViolation { reason: String },
}

/// Role a registered component plays within a tenant's deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentRole {
    Service,
    Executor,
    Sensor,
}

/// Component metadata carried by registration messages and proxy configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDescriptor {
    pub name: String,
    pub address: String,
    pub kind: ComponentRole,
    pub description: String,
    pub tasks: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateLimitConfig {
    pub max: u32,
    pub window_ticks: u64,
}

/// Threshold subscription carried by configure messages. A missing subject
/// subscribes to every subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriptionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Rising,
    Falling,
}

/// All messages exchanged between proxies and the reputation manager.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Register {
        tenant: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        component: Option<ComponentDescriptor>,
    },
    ConnectRequest {
        request_id: String,
        src: String,
        dst: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tick: Option<u64>,
    },
    ConnectApprove {
        request_id: String,
        src: String,
        dst: String,
        score: f64,
        path: Vec<String>,
    },
    ConnectReject {
        request_id: String,
        src: String,
        dst: String,
        reason: String,
    },
    Feedback {
        reporter: String,
        subject: String,
        q: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cause: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tick: Option<u64>,
    },
    Configure {
        tenant: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        selectivity_threshold: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate_limit: Option<RateLimitConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subscription: Option<SubscriptionConfig>,
    },
    ReputationUpdate {
        subscriber: String,
        subject: String,
        threshold: f64,
        direction: Direction,
        new_score: f64,
        tick: u64,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_id: Option<String>,
        code: String,
        detail: String,
    },
}

/// Required and optional field names per message type. Serde's internally
/// tagged representation cannot reject unknown fields itself, so decode
/// checks the field set against these tables.
fn field_schema(msg_type: &str) -> Option<(&'static [&'static str], &'static [&'static str])> {
    match msg_type {
        "register" => Some((&["tenant"], &["component"])),
        "connect_request" => Some((&["request_id", "src", "dst"], &["tick"])),
        "connect_approve" => Some((&["request_id", "src", "dst", "score", "path"], &[])),
        "connect_reject" => Some((&["request_id", "src", "dst", "reason"], &[])),
        "feedback" => Some((&["reporter", "subject", "q"], &["cause", "tick"])),
        "configure" => Some((
            &["tenant"],
            &["selectivity_threshold", "rate_limit", "subscription"],
        )),
        "reputation_update" => Some((
            &["subscriber", "subject", "threshold", "direction", "new_score", "tick"],
            &[],
        )),
        "error" => Some((&["code", "detail"], &["request_id"])),
        _ => None,
    }
}

fn check_unit_interval(name: &str, value: f64) -> Result<(), ProtoError> {
    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
        return Err(ProtoError::SchemaViolation {
            reason: format!("{name} {value} outside [0, 1]"),
        });
    }
    Ok(())
}

fn validate(msg: &Message) -> Result<(), ProtoError> {
    match msg {
        Message::Feedback { q, .. } => {
            if !q.is_finite() || !(-1.0..=1.0).contains(q) {
                return Err(ProtoError::SchemaViolation {
                    reason: format!("q {q} outside [-1, 1]"),
                });
            }
        }
        Message::ConnectApprove { score, .. } => check_unit_interval("score", *score)?,
        Message::Configure {
            selectivity_threshold,
            rate_limit,
            subscription,
            ..
        } => {
            if let Some(threshold) = selectivity_threshold {
                check_unit_interval("selectivity_threshold", *threshold)?;
            }
            if let Some(limit) = rate_limit {
                if limit.window_ticks == 0 {
                    return Err(ProtoError::SchemaViolation {
                        reason: "rate_limit.window_ticks must be >= 1".into(),
                    });
                }
            }
            if let Some(sub) = subscription {
                for threshold in &sub.thresholds {
                    check_unit_interval("subscription threshold", *threshold)?;
                }
            }
        }
        Message::ReputationUpdate {
            threshold,
            new_score,
            ..
        } => {
            check_unit_interval("threshold", *threshold)?;
            check_unit_interval("new_score", *new_score)?;
        }
        _ => {}
    }
    Ok(())
}

/// Serializes a message as one JSON frame, without the trailing newline.
pub fn encode_message(msg: &Message) -> Vec<u8> {
    serde_json::to_vec(msg).expect("messages always serialize")
}

/// Parses one complete frame. The input must be exactly one JSON object;
/// the trailing newline, if any, is tolerated.
pub fn decode_message(bytes: &[u8]) -> Result<Message, ProtoError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ProtoError::MalformedFrame {
        reason: format!("invalid UTF-8: {e}"),
    })?;
    let value: Value =
        serde_json::from_str(text.trim_end_matches(['\r', '\n'])).map_err(|e| {
            ProtoError::MalformedFrame {
                reason: e.to_string(),
            }
        })?;
    let object = value.as_object().ok_or_else(|| ProtoError::MalformedFrame {
        reason: "frame is not a JSON object".into(),
    })?;
    let msg_type = object
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| ProtoError::SchemaViolation {
            reason: "missing string field \"type\"".into(),
        })?;
    let (required, optional) =
        field_schema(msg_type).ok_or_else(|| ProtoError::UnknownMessageType {
            found: msg_type.to_string(),
        })?;
    for field in required {
        if !object.contains_key(*field) {
            return Err(ProtoError::SchemaViolation {
                reason: format!("{msg_type} is missing field {field:?}"),
            });
        }
    }
    for field in object.keys() {
        if field != "type"
            && !required.contains(&field.as_str())
            && !optional.contains(&field.as_str())
        {
            return Err(ProtoError::SchemaViolation {
                reason: format!("{msg_type} has unexpected field {field:?}"),
            });
        }
    }
    let msg: Message =
        serde_json::from_value(value).map_err(|e| ProtoError::SchemaViolation {
            reason: e.to_string(),
        })?;
    validate(&msg)?;
    Ok(msg)
}

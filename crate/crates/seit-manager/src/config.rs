//! Tenant proxy configuration file.
//!
//! A proxy config is a JSON document with three sections: the component
//! list, the edge selectivity threshold, and the query rate limit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::proto::{ComponentDescriptor, RateLimitConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("field {field}: {reason}")]
    Invalid { field: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    pub components: Vec<ComponentDescriptor>,
    pub edge_selectivity_threshold: f64,
    pub query_rate_limit: RateLimitConfig,
}

/// Parses and validates a proxy configuration. Component names must be
/// unique; thresholds must sit in [0, 1]; the rate-limit window must be at
/// least one tick.
pub fn load_proxy_config(text: &str) -> Result<ProxyConfig, ConfigError> {
    let config: ProxyConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if !config.edge_selectivity_threshold.is_finite()
        || !(0.0..=1.0).contains(&config.edge_selectivity_threshold)
    {
        return Err(ConfigError::Invalid {
            field: "edge_selectivity_threshold".into(),
            reason: format!(
                "{} outside [0, 1]",
                config.edge_selectivity_threshold
            ),
        });
    }
    if config.query_rate_limit.window_ticks == 0 {
        return Err(ConfigError::Invalid {
            field: "query_rate_limit.window_ticks".into(),
            reason: "must be >= 1".into(),
        });
    }
    let mut names = std::collections::BTreeSet::new();
    for component in &config.components {
        if component.name.is_empty() {
            return Err(ConfigError::Invalid {
                field: "components.name".into(),
                reason: "component names must be non-empty".into(),
            });
        }
        if !names.insert(component.name.as_str()) {
            return Err(ConfigError::Invalid {
                field: "components.name".into(),
                reason: format!("duplicate component name {:?}", component.name),
            });
        }
    }
    Ok(config)
}

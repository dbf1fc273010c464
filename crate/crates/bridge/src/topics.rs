//! Standard topic names and payload schemas.

use navsim_core::procgen::EnvironmentSpec;
use navsim_core::Twist;
use serde_json::Value;

pub const TWIST: &str = "navsim/Twist";
pub const ODOMETRY: &str = "navsim/Odometry";
pub const LASER_SCAN: &str = "navsim/LaserScan";
pub const STRING: &str = "navsim/String";
pub const ENVIRONMENT_SPEC: &str = "navsim/EnvironmentSpec";
pub const WORLD_STATE: &str = "navsim/WorldState";
pub const TRACE: &str = "navsim/Trace";

pub const AREAS_DESCRIPTION: &str = "/areas_description";
pub const PLAN: &str = "/plan";
pub const COMMAND: &str = "/command";
pub const ENV_SPEC: &str = "/env/spec";
pub const ENV_WORLD: &str = "/env/world";
pub const ENV_REGENERATE: &str = "/env/regenerate";
pub const TRACE_TOPIC: &str = "/trace";

pub fn cmd_vel(agent: usize) -> String {
    format!("/agent{agent}/cmd_vel")
}

pub fn odom(agent: usize) -> String {
    format!("/agent{agent}/odom")
}

pub fn scan(agent: usize) -> String {
    format!("/agent{agent}/scan")
}

/// Agent id and suffix of an `/agent{i}/...` topic.
pub fn agent_topic(topic: &str) -> Option<(usize, &str)> {
    let rest = topic.strip_prefix("/agent")?;
    let (id, suffix) = rest.split_once('/')?;
    if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) || (id.len() > 1 && id.starts_with('0')) {
        return None;
    }
    Some((id.parse().ok()?, suffix))
}

/// Checks an inbound payload against its schema. Types this bridge does
/// not define are accepted as-is.
pub fn check_payload(type_name: &str, msg: &Value) -> Result<(), String> {
    match type_name {
        TWIST => serde_json::from_value::<Twist>(msg.clone())
            .map_err(|e| e.to_string())
            .and_then(|t| if t.is_finite() { Ok(()) } else { Err("twist must be finite".into()) }),
        STRING => match msg.get("data") {
            Some(Value::String(_)) => match msg.get("agent") {
                None => Ok(()),
                Some(a) if a.as_u64().is_some_and(|a| a <= u32::MAX as u64) => Ok(()),
                Some(_) => Err("'agent' must be a non-negative integer".into()),
            },
            _ => Err("expected {\"data\": string}".into()),
        },
        ENVIRONMENT_SPEC => serde_json::from_value::<EnvironmentSpec>(msg.clone())
            .map(|_| ())
            .map_err(|e| e.to_string()),
        _ => Ok(()),
    }
}

//! Wire envelope and codec.
//!
//! Every frame is one JSON object with the fields `op`, `topic`, `type`,
//! `msg` and `id`. Over a stream socket frames are separated by `\n`; over
//! a WebSocket each text message is one frame. Payload bytes are the same
//! in both cases.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const STATUS_TYPE: &str = "navsim/Status";
/// Topic used on status frames that are not tied to a valid topic.
pub const STATUS_TOPIC: &str = "/status";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Advertise,
    Unadvertise,
    Publish,
    Subscribe,
    Unsubscribe,
    Status,
}

impl Op {
    fn parse(s: &str) -> Option<Op> {
        Some(match s {
            "advertise" => Op::Advertise,
            "unadvertise" => Op::Unadvertise,
            "publish" => Op::Publish,
            "subscribe" => Op::Subscribe,
            "unsubscribe" => Op::Unsubscribe,
            "status" => Op::Status,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusMessage {
    pub op: Op,
    pub topic: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub type_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msg: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Info,
    Warning,
    Error,
}

impl BusMessage {
    pub fn new(op: Op, topic: impl Into<String>) -> Self {
        Self {
            op,
            topic: topic.into(),
            type_name: None,
            msg: None,
            id: None,
        }
    }

    pub fn publish(topic: impl Into<String>, type_name: impl Into<String>, msg: Value) -> Self {
        Self {
            type_name: Some(type_name.into()),
            msg: Some(msg),
            ..Self::new(Op::Publish, topic)
        }
    }

    pub fn with_id(mut self, id: Option<String>) -> Self {
        self.id = id;
        self
    }

    /// `msg` is `{"level", "code", "detail"}`.
    pub fn status(topic: Option<&str>, level: Level, code: &str, detail: impl Into<String>) -> Self {
        let topic = topic.filter(|t| valid_topic(t)).unwrap_or(STATUS_TOPIC);
        Self {
            type_name: Some(STATUS_TYPE.into()),
            msg: Some(json!({"level": level, "code": code, "detail": detail.into()})),
            ..Self::new(Op::Status, topic)
        }
    }

    /// Status code of a status frame.
    pub fn status_code(&self) -> Option<&str> {
        (self.op == Op::Status).then(|| self.msg.as_ref()?.get("code")?.as_str()).flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown op '{0}'")]
    UnknownOp(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

impl DecodeError {
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::MalformedFrame(_) => "MalformedFrame",
            DecodeError::UnknownOp(_) => "UnknownOp",
            DecodeError::SchemaViolation(_) => "SchemaViolation",
        }
    }

    pub fn to_status(&self, topic: Option<&str>, id: Option<String>) -> BusMessage {
        BusMessage::status(topic, Level::Error, self.code(), self.to_string()).with_id(id)
    }
}

/// `(/[a-z0-9_]+)+`
pub fn valid_topic(topic: &str) -> bool {
    topic.strip_prefix('/').is_some_and(|rest| {
        rest.split('/').all(|seg| {
            !seg.is_empty()
                && seg
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        })
    })
}

/// Serialized frame without a trailing separator.
pub fn encode(msg: &BusMessage) -> String {
    serde_json::to_string(msg).expect("bus message serializes")
}

pub fn decode(bytes: &[u8]) -> Result<BusMessage, DecodeError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DecodeError::MalformedFrame(format!("invalid UTF-8: {e}")))?;
    let value: Value = serde_json::from_str(text).map_err(|e| DecodeError::MalformedFrame(e.to_string()))?;
    let Value::Object(obj) = &value else {
        return Err(DecodeError::MalformedFrame("frame is not a JSON object".into()));
    };
    match obj.get("op") {
        None => return Err(DecodeError::SchemaViolation("missing field 'op'".into())),
        Some(Value::String(op)) if Op::parse(op).is_none() => return Err(DecodeError::UnknownOp(op.clone())),
        Some(Value::String(_)) => {}
        Some(_) => return Err(DecodeError::SchemaViolation("'op' must be a string".into())),
    }
    let msg: BusMessage = serde_json::from_value(value).map_err(|e| DecodeError::SchemaViolation(e.to_string()))?;
    if !valid_topic(&msg.topic) {
        return Err(DecodeError::SchemaViolation(format!("invalid topic name '{}'", msg.topic)));
    }
    match msg.op {
        Op::Advertise if msg.type_name.is_none() => {
            Err(DecodeError::SchemaViolation("advertise requires 'type'".into()))
        }
        Op::Publish if msg.msg.is_none() => Err(DecodeError::SchemaViolation("publish requires 'msg'".into())),
        _ => Ok(msg),
    }
}

/// Topic and id of a frame that failed to decode, when they can be read.
pub fn salvage(bytes: &[u8]) -> (Option<String>, Option<String>) {
    let Ok(Value::Object(obj)) = serde_json::from_slice::<Value>(bytes) else {
        return (None, None);
    };
    let get = |k: &str| obj.get(k).and_then(Value::as_str).map(str::to_string);
    (get("topic"), get("id"))
}

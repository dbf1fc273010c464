//! Topic registry and the dispatch rules for client requests.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use crate::protocol::{BusMessage, Level, Op};
use crate::topics::check_payload;

pub type ClientId = u64;

/// The simulator's own endpoint in the table.
pub const SERVER: ClientId = 0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopicEntry {
    /// Fixed by the first advertise (or a server declaration).
    pub schema: Option<String>,
    pub publishers: BTreeSet<ClientId>,
    pub subscribers: BTreeSet<ClientId>,
    pub latched: bool,
    pub latch: Option<BusMessage>,
}

/// A frame and the clients it goes to. `from` is the client whose request
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub from: ClientId,
    pub to: Vec<ClientId>,
    pub msg: BusMessage,
}

#[derive(Debug, Clone, Default)]
pub struct TopicTable {
    topics: BTreeMap<String, TopicEntry>,
}

impl TopicTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, topic: &str) -> Option<&TopicEntry> {
        self.topics.get(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = (&String, &TopicEntry)> {
        self.topics.iter()
    }

    /// Server-side topic: `SERVER` publishes (outbound) or subscribes
    /// (inbound), with a fixed schema.
    pub fn declare(&mut self, topic: &str, schema: &str, latched: bool, inbound: bool) {
        let e = self.topics.entry(topic.to_string()).or_default();
        e.schema = Some(schema.to_string());
        e.latched |= latched;
        if inbound {
            e.subscribers.insert(SERVER);
        } else {
            e.publishers.insert(SERVER);
        }
    }

    /// Applies one request from `from`. Returns the frames to deliver,
    /// including any status reply to the sender. Requests carrying an `id`
    /// are acknowledged with an `Ok` status once their effects are queued.
    pub fn dispatch(&mut self, from: ClientId, msg: BusMessage) -> Vec<Outgoing> {
        let id = msg.id.clone();
        let topic = msg.topic.clone();
        let mut out = Vec::new();
        let result = match msg.op {
            Op::Advertise => self.advertise(from, &msg),
            Op::Unadvertise => {
                if let Some(e) = self.topics.get_mut(&topic) {
                    e.publishers.remove(&from);
                }
                Ok(())
            }
            Op::Publish => self.publish(from, msg, &mut out),
            Op::Subscribe => self.subscribe(from, &msg, &mut out),
            Op::Unsubscribe => {
                if let Some(e) = self.topics.get_mut(&topic) {
                    e.subscribers.remove(&from);
                }
                Ok(())
            }
            // Client status reports carry no request.
            Op::Status => return out,
        };
        self.prune(&topic);
        let status = match result {
            Ok(()) if id.is_some() => Some(BusMessage::status(Some(&topic), Level::Info, "Ok", "")),
            Ok(()) => None,
            Err((code, detail)) => Some(BusMessage::status(Some(&topic), Level::Error, code, detail)),
        };
        if let Some(s) = status {
            out.push(Outgoing {
                from,
                to: vec![from],
                msg: s.with_id(id),
            });
        }
        out
    }

    fn advertise(&mut self, from: ClientId, msg: &BusMessage) -> Result<(), (&'static str, String)> {
        let ty = msg.type_name.clone().unwrap_or_default();
        let e = self.topics.entry(msg.topic.clone()).or_default();
        match &e.schema {
            Some(s) if *s != ty => {
                return Err(("SchemaMismatch", format!("{} carries {s}, not {ty}", msg.topic)));
            }
            Some(_) => {}
            None => e.schema = Some(ty),
        }
        if msg.msg.as_ref().and_then(|m| m.get("latch")).and_then(Value::as_bool) == Some(true) {
            e.latched = true;
        }
        e.publishers.insert(from);
        Ok(())
    }

    fn publish(&mut self, from: ClientId, msg: BusMessage, out: &mut Vec<Outgoing>) -> Result<(), (&'static str, String)> {
        let Some(e) = self.topics.get_mut(&msg.topic).filter(|e| e.publishers.contains(&from)) else {
            return Err(("NotAdvertised", format!("advertise {} before publishing", msg.topic)));
        };
        let schema = e.schema.clone().unwrap_or_default();
        if let Some(ty) = msg.type_name.as_deref().filter(|ty| *ty != schema) {
            return Err(("SchemaMismatch", format!("{} carries {schema}, not {ty}", msg.topic)));
        }
        let payload = msg.msg.unwrap_or(Value::Null);
        check_payload(&schema, &payload).map_err(|d| ("SchemaMismatch", format!("{schema}: {d}")))?;
        let frame = BusMessage::publish(msg.topic, schema, payload);
        if e.latched {
            e.latch = Some(frame.clone());
        }
        if !e.subscribers.is_empty() {
            out.push(Outgoing {
                from,
                to: e.subscribers.iter().copied().collect(),
                msg: frame,
            });
        }
        Ok(())
    }

    fn subscribe(&mut self, from: ClientId, msg: &BusMessage, out: &mut Vec<Outgoing>) -> Result<(), (&'static str, String)> {
        let e = self.topics.entry(msg.topic.clone()).or_default();
        if let (Some(ty), Some(schema)) = (&msg.type_name, &e.schema) {
            if ty != schema {
                return Err(("SchemaMismatch", format!("{} carries {schema}, not {ty}", msg.topic)));
            }
        }
        e.subscribers.insert(from);
        if let Some(latch) = &e.latch {
            out.push(Outgoing {
                from,
                to: vec![from],
                msg: latch.clone(),
            });
        }
        Ok(())
    }

    /// Forgets a disconnected client.
    pub fn remove_client(&mut self, client: ClientId) {
        let names: Vec<String> = self.topics.keys().cloned().collect();
        for name in names {
            if let Some(e) = self.topics.get_mut(&name) {
                e.publishers.remove(&client);
                e.subscribers.remove(&client);
            }
            self.prune(&name);
        }
    }

    /// Drops entries nobody uses any more.
    fn prune(&mut self, topic: &str) {
        if self
            .topics
            .get(topic)
            .is_some_and(|e| e.publishers.is_empty() && e.subscribers.is_empty() && e.latch.is_none())
        {
            self.topics.remove(topic);
        }
    }
}

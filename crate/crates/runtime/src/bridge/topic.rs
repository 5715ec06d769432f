//! Topic naming: `/<ns>/bsk/<in|out>/<topic>`, plus the global `/clock`.

use std::fmt;

use super::BridgeError;

pub const CLOCK_TOPIC: &str = "/clock";

/// `In` flows controller → simulator, `Out` simulator → controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::In => "in",
            Direction::Out => "out",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopicRegistration {
    pub namespace: String,
    pub direction: Direction,
    pub topic: String,
    pub schema: String,
    /// Free-form identifier of the registering handler, used in diagnostics.
    pub id: String,
}

fn valid_ns(ns: &str) -> bool {
    ns.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn valid_topic(topic: &str) -> bool {
    !topic.is_empty()
        && !topic.starts_with('/')
        && !topic.ends_with('/')
        && !topic.contains("//")
        && topic.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '/')
}

impl TopicRegistration {
    pub fn new(namespace: &str, direction: Direction, topic: &str, schema: &str) -> Self {
        Self {
            namespace: namespace.into(),
            direction,
            topic: topic.into(),
            schema: schema.into(),
            id: format!("{namespace}:{direction}:{topic}"),
        }
    }

    /// The simulation clock, published by the simulator side.
    pub fn clock() -> Self {
        Self::new("", Direction::Out, "clock", "Clock")
    }

    pub fn is_clock(&self) -> bool {
        self.namespace.is_empty() && self.topic == "clock"
    }

    pub fn path(&self) -> String {
        if self.is_clock() {
            CLOCK_TOPIC.to_string()
        } else {
            format!("/{}/bsk/{}/{}", self.namespace, self.direction, self.topic)
        }
    }

    pub fn validate(&self) -> Result<(), BridgeError> {
        if !valid_ns(&self.namespace) || !valid_topic(&self.topic) {
            return Err(BridgeError::InvalidTopic(self.path()));
        }
        Ok(())
    }
}

/// Splits a rendered path back into `(namespace, direction, topic)`.
pub fn parse_path(path: &str) -> Option<(String, Direction, String)> {
    if path == CLOCK_TOPIC {
        return Some((String::new(), Direction::Out, "clock".into()));
    }
    let rest = path.strip_prefix('/')?;
    let (ns, rest) = rest.split_once('/')?;
    let rest = rest.strip_prefix("bsk/")?;
    let (dir, topic) = rest.split_once('/')?;
    let direction = match dir {
        "in" => Direction::In,
        "out" => Direction::Out,
        _ => return None,
    };
    (valid_ns(ns) && valid_topic(topic)).then(|| (ns.to_string(), direction, topic.to_string()))
}

//! Per-topic traffic counters and inter-arrival statistics.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TopicStats {
    pub sent: u64,
    pub received: u64,
    pub dropped_unknown: u64,
    pub dropped_malformed: u64,
    pub dropped_overflow: u64,
    pub interarrival_mean_ms: f64,
    pub interarrival_std_ms: f64,
}

impl TopicStats {
    pub fn dropped(&self) -> u64 {
        self.dropped_unknown + self.dropped_malformed + self.dropped_overflow
    }
}

#[derive(Debug, Default)]
struct Counter {
    stats: TopicStats,
    last: Option<Instant>,
    n: u64,
    mean: f64,
    m2: f64,
}

impl Counter {
    fn arrival(&mut self, now: Instant) {
        if let Some(last) = self.last {
            let dt = now.duration_since(last).as_secs_f64() * 1e3;
            self.n += 1;
            let delta = dt - self.mean;
            self.mean += delta / self.n as f64;
            self.m2 += delta * (dt - self.mean);
        }
        self.last = Some(now);
    }

    fn snapshot(&self) -> TopicStats {
        let mut s = self.stats.clone();
        s.interarrival_mean_ms = self.mean;
        s.interarrival_std_ms = if self.n > 1 { (self.m2 / (self.n - 1) as f64).sqrt() } else { 0.0 };
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Sent,
    Received,
    DroppedUnknown,
    DroppedMalformed,
    DroppedOverflow,
}

/// Thread-safe collection of per-topic counters.
#[derive(Debug, Default)]
pub struct StatsBook {
    topics: Mutex<BTreeMap<String, Counter>>,
}

impl StatsBook {
    pub fn record(&self, topic: &str, event: Event) {
        self.record_n(topic, event, 1);
    }

    pub fn record_n(&self, topic: &str, event: Event, n: u64) {
        let mut map = self.topics.lock().unwrap();
        let c = match map.get_mut(topic) {
            Some(c) => c,
            None => map.entry(topic.to_string()).or_default(),
        };
        let s = &mut c.stats;
        match event {
            Event::Sent => s.sent += n,
            Event::Received => {
                s.received += n;
                c.arrival(Instant::now());
            }
            Event::DroppedUnknown => s.dropped_unknown += n,
            Event::DroppedMalformed => s.dropped_malformed += n,
            Event::DroppedOverflow => s.dropped_overflow += n,
        }
    }

    pub fn snapshot(&self) -> BTreeMap<String, TopicStats> {
        self.topics
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.snapshot()))
            .collect()
    }

    pub fn topic(&self, topic: &str) -> TopicStats {
        self.topics
            .lock()
            .unwrap()
            .get(topic)
            .map(Counter::snapshot)
            .unwrap_or_default()
    }
}

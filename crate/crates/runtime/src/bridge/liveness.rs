use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkState {
    /// Last heartbeat within two periods.
    Connected,
    /// Heartbeats late but the timeout has not elapsed.
    Degraded,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectionState {
    pub state: LinkState,
    pub last_counter: Option<i64>,
    pub last_heartbeat: Option<Instant>,
}

/// Heartbeat bookkeeping for one peer.
#[derive(Debug, Clone)]
pub struct Liveness {
    period: Duration,
    timeout: Duration,
    last_counter: Option<i64>,
    last_heartbeat: Option<Instant>,
}

impl Liveness {
    pub fn new(period: Duration, timeout: Duration) -> Self {
        Self {
            period,
            timeout,
            last_counter: None,
            last_heartbeat: None,
        }
    }

    /// Counters may restart after a peer reboots; any heartbeat refreshes liveness.
    pub fn beat(&mut self, counter: i64, now: Instant) {
        self.last_counter = Some(counter);
        self.last_heartbeat = Some(now);
    }

    pub fn state_at(&self, now: Instant) -> ConnectionState {
        let state = match self.last_heartbeat {
            None => LinkState::Lost,
            Some(t) => {
                let age = now.saturating_duration_since(t);
                if age >= self.timeout {
                    LinkState::Lost
                } else if age < 2 * self.period {
                    LinkState::Connected
                } else {
                    LinkState::Degraded
                }
            }
        };
        ConnectionState {
            state,
            last_counter: self.last_counter,
            last_heartbeat: self.last_heartbeat,
        }
    }
}

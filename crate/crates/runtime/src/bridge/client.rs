//! Endpoint side of the bridge: registration, publishing, delivery and heartbeats.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use formation_core::msgs::convert::{clock, heartbeat, heartbeat_from};
use formation_core::msgs::{Codec, MessageValue, SchemaRegistry};
use log::{debug, info, warn};

use super::frame::{envelope, parse_envelope, read_frame, write_frame};
use super::liveness::{ConnectionState, LinkState, Liveness};
use super::server::{control_frame, Advertise, Subscribe, SUBSCRIBED_TOPIC, UNPARSED};
use super::stats::{Event, StatsBook, TopicStats};
use super::topic::{Direction, TopicRegistration, CLOCK_TOPIC};
use super::{BridgeConfig, BridgeError, ADVERTISE_TOPIC, SUBSCRIBE_TOPIC};

pub(crate) const HEARTBEAT_TOPIC: &str = "/_bridge/heartbeat";
const RECONNECT_DELAY: Duration = Duration::from_millis(100);

/// Which side of the bridge an endpoint sits on; fixes the direction it may publish.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndpointRole {
    /// Publishes `out` topics and `/clock`.
    Simulator,
    /// Publishes `in` topics.
    Controller,
    /// Tooling; may publish anything.
    Monitor,
}

impl EndpointRole {
    fn may_publish(self, reg: &TopicRegistration) -> bool {
        match self {
            EndpointRole::Simulator => reg.direction == Direction::Out,
            EndpointRole::Controller => reg.direction == Direction::In && !reg.is_clock(),
            EndpointRole::Monitor => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publisher {
    path: Arc<str>,
    schema: Arc<str>,
}

impl Publisher {
    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn schema(&self) -> &str {
        &self.schema
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    path: Arc<str>,
}

impl Subscription {
    pub fn path(&self) -> &str {
        &self.path
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub topic: String,
    pub stamp_ns: i64,
    pub value: MessageValue,
}

type Sink = Arc<Mutex<Box<dyn FnMut(Delivery) + Send>>>;
type Watcher = Box<dyn FnMut(LinkState) + Send>;

struct Shared {
    name: String,
    role: EndpointRole,
    config: BridgeConfig,
    codec: Codec,
    publishers: Mutex<HashMap<String, String>>,
    subscriptions: RwLock<HashMap<String, (String, Sink)>>,
    acked: Mutex<HashSet<String>>,
    ack_wake: Condvar,
    writer: Mutex<Option<BufWriter<TcpStream>>>,
    tx_ctl: Mutex<Option<TcpStream>>,
    sockets: Mutex<Vec<TcpStream>>,
    stats: StatsBook,
    liveness: Mutex<Liveness>,
    watchers: Mutex<Vec<Watcher>>,
    last_clock_sent: Mutex<Option<i64>>,
    last_clock_seen: Mutex<Option<i64>>,
    closed: AtomicBool,
}

fn connect_once(addr: &str, timeout: Duration) -> io::Result<TcpStream> {
    let sa = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
    let s = TcpStream::connect_timeout(&sa, timeout)?;
    s.set_nodelay(true)?;
    Ok(s)
}

fn connect_retry(addr: &str, deadline: Instant) -> Result<TcpStream, BridgeError> {
    loop {
        match connect_once(addr, Duration::from_millis(200)) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => {
                return Err(BridgeError::Connect {
                    addr: addr.to_string(),
                    source: e,
                })
            }
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

impl Shared {
    fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Acquire)
    }

    fn track(&self, s: &TcpStream) {
        if let Ok(c) = s.try_clone() {
            let mut socks = self.sockets.lock().unwrap();
            socks.retain(|s| s.peer_addr().is_ok());
            socks.push(c);
        }
    }

    fn advertise_frame(&self, path: &str, schema: &str) -> Vec<u8> {
        control_frame(
            ADVERTISE_TOPIC,
            &Advertise {
                client: self.name.clone(),
                topic: path.to_string(),
                schema: schema.to_string(),
            },
        )
    }

    /// Opens the rx connection and re-advertises every publisher.
    fn open_writer(&self) -> Result<BufWriter<TcpStream>, BridgeError> {
        let s = connect_once(&self.config.addr(self.config.rx_port), Duration::from_millis(200))
            .map_err(|_| BridgeError::Disconnected)?;
        self.track(&s);
        let mut w = BufWriter::new(s);
        for (path, schema) in self.publishers.lock().unwrap().iter() {
            write_frame(&mut w, &self.advertise_frame(path, schema))?;
        }
        w.flush()?;
        Ok(w)
    }

    fn send(&self, body: &[u8]) -> Result<(), BridgeError> {
        let mut guard = self.writer.lock().unwrap();
        if self.is_closed() {
            return Err(BridgeError::TransportClosed);
        }
        if guard.is_none() {
            *guard = Some(self.open_writer()?);
            info!("{}: publisher connection re-established", self.name);
        }
        let w = guard.as_mut().expect("writer present");
        if let Err(e) = write_frame(w, body).and_then(|_| w.flush()) {
            debug!("{}: publish failed: {e}", self.name);
            *guard = None;
            return Err(if self.is_closed() {
                BridgeError::TransportClosed
            } else {
                BridgeError::Disconnected
            });
        }
        Ok(())
    }

    fn send_subscribe(&self, path: &str) {
        let frame = control_frame(SUBSCRIBE_TOPIC, &Subscribe { topic: path.into() });
        let mut guard = self.tx_ctl.lock().unwrap();
        if let Some(s) = guard.as_mut() {
            if write_frame(s, &frame).is_err() {
                *guard = None;
            }
        }
    }

    fn dispatch(&self, body: &[u8]) {
        let env = match parse_envelope(body) {
            Ok(e) => e,
            Err(_) => {
                self.stats.record(UNPARSED, Event::DroppedMalformed);
                return;
            }
        };
        if env.topic == SUBSCRIBED_TOPIC {
            if let Ok(s) = serde_json::from_str::<Subscribe>(env.payload.get()) {
                self.acked.lock().unwrap().insert(s.topic);
                self.ack_wake.notify_all();
            }
            return;
        }
        let entry = self
            .subscriptions
            .read()
            .unwrap()
            .get(&env.topic)
            .map(|(schema, sink)| (schema.clone(), sink.clone()));
        let Some((schema, sink)) = entry else {
            self.stats.record(&env.topic, Event::DroppedUnknown);
            return;
        };
        let value = match self.codec.decode(env.payload.get().as_bytes(), &schema) {
            Ok(v) => v,
            Err(e) => {
                debug!("{}: dropping frame on {}: {e}", self.name, env.topic);
                self.stats.record(&env.topic, Event::DroppedMalformed);
                return;
            }
        };
        if env.topic == CLOCK_TOPIC {
            let t = value.get("sim_ns").and_then(|v| v.as_i64()).unwrap_or(i64::MIN);
            let mut last = self.last_clock_seen.lock().unwrap();
            if last.is_some_and(|l| t < l) {
                warn!("{}: /clock went backwards ({t} after {last:?})", self.name);
                self.stats.record(&env.topic, Event::DroppedMalformed);
                return;
            }
            *last = Some(t);
        }
        self.stats.record(&env.topic, Event::Received);
        let delivery = Delivery {
            topic: env.topic,
            stamp_ns: env.stamp_ns,
            value,
        };
        (sink.lock().unwrap())(delivery);
    }

    fn state(&self) -> ConnectionState {
        self.liveness.lock().unwrap().state_at(Instant::now())
    }
}

fn reconnect(shared: &Shared, port: u16) -> Option<TcpStream> {
    let addr = shared.config.addr(port);
    while !shared.is_closed() {
        thread::sleep(RECONNECT_DELAY);
        if let Ok(s) = connect_once(&addr, Duration::from_millis(200)) {
            if shared.is_closed() {
                let _ = s.shutdown(Shutdown::Both);
                return None;
            }
            shared.track(&s);
            return Some(s);
        }
    }
    None
}

fn subscriber_loop(shared: Arc<Shared>, mut stream: TcpStream) {
    loop {
        let mut reader = BufReader::new(stream);
        while let Ok(Some(body)) = read_frame(&mut reader) {
            shared.dispatch(&body);
        }
        *shared.tx_ctl.lock().unwrap() = None;
        if shared.is_closed() {
            return;
        }
        warn!("{}: subscriber connection lost, reconnecting", shared.name);
        let Some(s) = reconnect(&shared, shared.config.tx_port) else { return };
        let Ok(ctl) = s.try_clone() else { return };
        *shared.tx_ctl.lock().unwrap() = Some(ctl);
        let paths: Vec<String> = shared.subscriptions.read().unwrap().keys().cloned().collect();
        for p in paths {
            shared.send_subscribe(&p);
        }
        stream = s;
    }
}

fn heartbeat_reader(shared: Arc<Shared>, stream: TcpStream) {
    let mut reader = BufReader::new(stream);
    while let Ok(Some(body)) = read_frame(&mut reader) {
        let beat = parse_envelope(&body)
            .ok()
            .and_then(|env| shared.codec.decode(env.payload.get().as_bytes(), "Heartbeat").ok())
            .and_then(|m| heartbeat_from(&m).ok());
        if let Some((_, counter)) = beat {
            shared.liveness.lock().unwrap().beat(counter, Instant::now());
        }
    }
}

fn heartbeat_loop(shared: Arc<Shared>, stream: TcpStream) {
    let period = shared.config.heartbeat_period;
    let mut writer = None;
    let attach = |s: TcpStream, writer: &mut Option<BufWriter<TcpStream>>| {
        if let Ok(r) = s.try_clone() {
            let sh = shared.clone();
            thread::spawn(move || heartbeat_reader(sh, r));
        }
        *writer = Some(BufWriter::new(s));
    };
    attach(stream, &mut writer);
    let mut counter = 0i64;
    let mut next = Instant::now();
    while !shared.is_closed() {
        if writer.is_none() {
            match connect_once(&shared.config.addr(shared.config.heartbeat_port), period) {
                Ok(s) => {
                    shared.track(&s);
                    attach(s, &mut writer);
                }
                Err(_) => debug!("{}: heartbeat reconnect failed", shared.name),
            }
        }
        if let Some(w) = writer.as_mut() {
            let msg = shared
                .codec
                .encode(&heartbeat(&shared.name, counter))
                .expect("heartbeat encodes");
            if write_frame(w, &envelope(HEARTBEAT_TOPIC, 0, &msg)).and_then(|_| w.flush()).is_err() {
                writer = None;
            }
            counter += 1;
        }
        next += period;
        let now = Instant::now();
        if next > now {
            thread::sleep(next - now);
        } else {
            next = now;
        }
    }
}

fn monitor_loop(shared: Arc<Shared>) {
    let poll = shared.config.heartbeat_period / 4;
    let mut last = shared.state().state;
    while !shared.is_closed() {
        thread::sleep(poll);
        let s = shared.state().state;
        if s != last {
            info!("{}: bridge link {last:?} -> {s:?}", shared.name);
            for w in shared.watchers.lock().unwrap().iter_mut() {
                w(s);
            }
            last = s;
        }
    }
}

/// A connection to a [`BridgeServer`](super::BridgeServer).
///
/// Delivery callbacks run on the client's receive thread, one at a time and in arrival
/// order; they must not call [`BridgeClient::subscribe`].
pub struct BridgeClient {
    shared: Arc<Shared>,
}

impl BridgeClient {
    /// Connects all three channels, retrying until `config.connect_timeout` elapses.
    pub fn connect(
        config: &BridgeConfig,
        name: &str,
        role: EndpointRole,
        registry: SchemaRegistry,
    ) -> Result<Self, BridgeError> {
        config.validate()?;
        let deadline = Instant::now() + config.connect_timeout;
        let rx = connect_retry(&config.addr(config.rx_port), deadline)?;
        let tx = connect_retry(&config.addr(config.tx_port), deadline)?;
        let hb = connect_retry(&config.addr(config.heartbeat_port), deadline)?;

        let shared = Arc::new(Shared {
            name: name.to_string(),
            role,
            config: config.clone(),
            codec: Codec::new(registry).with_mode(config.decode_mode),
            publishers: Mutex::new(HashMap::new()),
            subscriptions: RwLock::new(HashMap::new()),
            acked: Mutex::new(HashSet::new()),
            ack_wake: Condvar::new(),
            writer: Mutex::new(None),
            tx_ctl: Mutex::new(None),
            sockets: Mutex::new(Vec::new()),
            stats: StatsBook::default(),
            liveness: Mutex::new(Liveness::new(config.heartbeat_period, config.liveness_timeout)),
            watchers: Mutex::new(Vec::new()),
            last_clock_sent: Mutex::new(None),
            last_clock_seen: Mutex::new(None),
            closed: AtomicBool::new(false),
        });
        for s in [&rx, &tx, &hb] {
            shared.track(s);
        }
        *shared.writer.lock().unwrap() = Some(BufWriter::new(rx));
        *shared.tx_ctl.lock().unwrap() = Some(tx.try_clone()?);

        let sh = shared.clone();
        thread::spawn(move || subscriber_loop(sh, tx));
        let sh = shared.clone();
        thread::spawn(move || heartbeat_loop(sh, hb));
        let sh = shared.clone();
        thread::spawn(move || monitor_loop(sh));
        debug!("{name}: connected to bridge at {}", config.host);
        Ok(Self { shared })
    }

    pub fn name(&self) -> &str {
        &self.shared.name
    }

    pub fn role(&self) -> EndpointRole {
        self.shared.role
    }

    pub fn register_publisher(&self, reg: TopicRegistration) -> Result<Publisher, BridgeError> {
        reg.validate()?;
        let path = reg.path();
        if !self.shared.role.may_publish(&reg) {
            return Err(BridgeError::WrongDirection {
                path,
                role: self.shared.role,
            });
        }
        if !self.shared.codec.registry.contains(&reg.schema) {
            return Err(BridgeError::UnknownSchema(reg.schema));
        }
        {
            let mut pubs = self.shared.publishers.lock().unwrap();
            if pubs.contains_key(&path) {
                return Err(BridgeError::DuplicateRegistration(path));
            }
            pubs.insert(path.clone(), reg.schema.clone());
        }
        // A failed advertisement is repeated when the connection is re-established.
        match self.shared.send(&self.shared.advertise_frame(&path, &reg.schema)) {
            Ok(()) | Err(BridgeError::Disconnected) => {}
            Err(e) => {
                self.shared.publishers.lock().unwrap().remove(&path);
                return Err(e);
            }
        }
        Ok(Publisher {
            path: path.into(),
            schema: reg.schema.into(),
        })
    }

    pub fn publish(&self, handle: &Publisher, value: &MessageValue, stamp_ns: i64) -> Result<(), BridgeError> {
        if self.shared.is_closed() {
            return Err(BridgeError::TransportClosed);
        }
        if value.schema != *handle.schema {
            return Err(BridgeError::SchemaMismatch {
                path: handle.path.to_string(),
                expected: handle.schema.to_string(),
                found: value.schema.clone(),
            });
        }
        let payload = self.shared.codec.encode(value)?;
        self.shared.send(&envelope(&handle.path, stamp_ns, &payload))?;
        self.shared.stats.record(&handle.path, Event::Sent);
        Ok(())
    }

    /// Publishes simulation time on `/clock`, registering the topic on first use.
    pub fn publish_clock(&self, sim_ns: i64) -> Result<(), BridgeError> {
        let mut last = self.shared.last_clock_sent.lock().unwrap();
        if let Some(l) = *last {
            if sim_ns < l {
                return Err(BridgeError::NonMonotonicClock { last: l, requested: sim_ns });
            }
        }
        let handle = Publisher {
            path: CLOCK_TOPIC.into(),
            schema: "Clock".into(),
        };
        if !self.shared.publishers.lock().unwrap().contains_key(CLOCK_TOPIC) {
            self.register_publisher(TopicRegistration::clock())?;
        }
        self.publish(&handle, &clock(sim_ns), sim_ns)?;
        *last = Some(sim_ns);
        Ok(())
    }

    /// Subscribes and waits until the hub has acknowledged the subscription.
    pub fn subscribe<F>(&self, reg: TopicRegistration, sink: F) -> Result<Subscription, BridgeError>
    where
        F: FnMut(Delivery) + Send + 'static,
    {
        reg.validate()?;
        let path = reg.path();
        if !self.shared.codec.registry.contains(&reg.schema) {
            return Err(BridgeError::UnknownSchema(reg.schema));
        }
        {
            let mut subs = self.shared.subscriptions.write().unwrap();
            if subs.contains_key(&path) {
                return Err(BridgeError::DuplicateRegistration(path));
            }
            let sink: Sink = Arc::new(Mutex::new(Box::new(sink)));
            subs.insert(path.clone(), (reg.schema, sink));
        }
        if self.shared.is_closed() {
            return Err(BridgeError::TransportClosed);
        }
        self.shared.send_subscribe(&path);
        let deadline = Instant::now() + self.shared.config.connect_timeout;
        let mut acked = self.shared.acked.lock().unwrap();
        while !acked.contains(&path) {
            let now = Instant::now();
            if now >= deadline {
                warn!("{}: no acknowledgement for subscription {path}", self.shared.name);
                break;
            }
            acked = self.shared.ack_wake.wait_timeout(acked, deadline - now).unwrap().0;
        }
        Ok(Subscription { path: path.into() })
    }

    /// Called on every change of the hub link state, from the client's monitor thread.
    pub fn on_state_change<F: FnMut(LinkState) + Send + 'static>(&self, f: F) {
        self.shared.watchers.lock().unwrap().push(Box::new(f));
    }

    /// Liveness of the hub as seen from this endpoint.
    pub fn connection_state(&self) -> ConnectionState {
        self.shared.state()
    }

    pub fn stats(&self) -> BTreeMap<String, TopicStats> {
        self.shared.stats.snapshot()
    }

    pub fn topic_stats(&self, path: &str) -> TopicStats {
        self.shared.stats.topic(path)
    }

    pub fn is_closed(&self) -> bool {
        self.shared.is_closed()
    }

    /// Stops heartbeats and closes every channel; later publishes fail with `TransportClosed`.
    pub fn close(&self) {
        if self.shared.closed.swap(true, Ordering::AcqRel) {
            return;
        }
        let writer = self.shared.writer.lock().unwrap().take();
        if let Some(mut w) = writer {
            let _ = w.flush();
        }
        for s in self.shared.sockets.lock().unwrap().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        self.shared.ack_wake.notify_all();
        debug!("{}: closed", self.shared.name);
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        self.close();
    }
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("name", &self.shared.name)
            .field("role", &self.shared.role)
            .finish()
    }
}

//! The hub: accepts publisher, subscriber and heartbeat connections and relays frames.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use formation_core::msgs::convert::{heartbeat, heartbeat_from};
use formation_core::msgs::{Codec, SchemaRegistry};
use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use super::frame::{envelope, parse_envelope, read_frame, write_frame};
use super::liveness::{ConnectionState, LinkState, Liveness};
use super::stats::{Event, StatsBook, TopicStats};
use super::topic::parse_path;
use super::{BridgeConfig, BridgeError, ADVERTISE_TOPIC, CONTROL_PREFIX, SUBSCRIBE_TOPIC};

pub(crate) const SUBSCRIBED_TOPIC: &str = "/_bridge/subscribed";
pub(crate) const HUB_NAME: &str = "bridge";
/// Stats key for frames whose envelope could not be parsed.
pub(crate) const UNPARSED: &str = "(unparsed)";
const ACCEPT_POLL: Duration = Duration::from_millis(5);
const WRITE_BATCH: usize = 256;

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct Advertise {
    pub client: String,
    pub topic: String,
    pub schema: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct Subscribe {
    pub topic: String,
}

pub(crate) fn control_frame<T: Serialize>(topic: &str, body: &T) -> Vec<u8> {
    let payload = serde_json::to_vec(body).expect("control payloads serialize");
    envelope(topic, 0, &payload)
}

struct TopicEntry {
    schema: String,
    owner: String,
}

#[derive(Default)]
struct Outbox {
    queues: HashMap<String, VecDeque<Arc<[u8]>>>,
    /// Topics with pending frames, served round-robin.
    ready: VecDeque<String>,
}

struct Subscriber {
    topics: RwLock<HashSet<String>>,
    outbox: Mutex<Outbox>,
    wake: Condvar,
    alive: AtomicBool,
}

impl Subscriber {
    fn new() -> Self {
        Self {
            topics: RwLock::new(HashSet::new()),
            outbox: Mutex::new(Outbox::default()),
            wake: Condvar::new(),
            alive: AtomicBool::new(true),
        }
    }

    /// Queues a frame; returns `true` if the oldest frame of the topic was evicted.
    fn push(&self, topic: &str, frame: Arc<[u8]>, depth: usize) -> bool {
        let mut ob = self.outbox.lock().unwrap();
        let q = match ob.queues.get_mut(topic) {
            Some(q) => q,
            None => ob.queues.entry(topic.to_string()).or_default(),
        };
        let was_empty = q.is_empty();
        let evicted = q.len() >= depth && q.pop_front().is_some();
        q.push_back(frame);
        if was_empty {
            ob.ready.push_back(topic.to_string());
        }
        drop(ob);
        self.wake.notify_one();
        evicted
    }

    fn pop_batch(&self, out: &mut Vec<(String, Arc<[u8]>)>) -> bool {
        let mut ob = self.outbox.lock().unwrap();
        while ob.ready.is_empty() {
            if !self.alive.load(Ordering::Acquire) {
                return false;
            }
            ob = self.wake.wait_timeout(ob, Duration::from_millis(100)).unwrap().0;
        }
        while out.len() < WRITE_BATCH {
            let Some(topic) = ob.ready.pop_front() else { break };
            let q = ob.queues.get_mut(&topic).expect("ready topics have queues");
            if let Some(f) = q.pop_front() {
                let more = !q.is_empty();
                out.push((topic.clone(), f));
                if more {
                    ob.ready.push_back(topic);
                }
            }
        }
        true
    }

    fn close(&self) {
        self.alive.store(false, Ordering::Release);
        self.wake.notify_all();
    }
}

struct Hub {
    config: BridgeConfig,
    codec: Codec,
    topics: RwLock<HashMap<String, TopicEntry>>,
    subscribers: RwLock<Vec<Arc<Subscriber>>>,
    peers: Mutex<BTreeMap<String, Liveness>>,
    stats: StatsBook,
    shutdown: AtomicBool,
    streams: Mutex<Vec<TcpStream>>,
}

impl Hub {
    fn stopping(&self) -> bool {
        self.shutdown.load(Ordering::Acquire)
    }

    fn track(&self, stream: &TcpStream) {
        if let Ok(s) = stream.try_clone() {
            let mut streams = self.streams.lock().unwrap();
            streams.retain(|s| s.peer_addr().is_ok());
            streams.push(s);
        }
    }

    fn advertise(&self, body: &[u8], conn_name: &mut Option<String>) {
        let adv: Advertise = match parse_envelope(body).and_then(|e| {
            serde_json::from_str(e.payload.get()).map_err(|e| BridgeError::Frame(e.to_string()))
        }) {
            Ok(a) => a,
            Err(e) => {
                warn!("ignoring malformed advertisement: {e}");
                return;
            }
        };
        if parse_path(&adv.topic).is_none() {
            warn!("{} advertised invalid topic '{}'", adv.client, adv.topic);
            return;
        }
        if !self.codec.registry.contains(&adv.schema) {
            warn!("{} advertised '{}' with unknown schema '{}'", adv.client, adv.topic, adv.schema);
            return;
        }
        *conn_name = Some(adv.client.clone());
        let mut topics = self.topics.write().unwrap();
        match topics.get(&adv.topic) {
            Some(e) if e.owner != adv.client => {
                warn!("{} tried to take over '{}' owned by {}", adv.client, adv.topic, e.owner);
            }
            Some(e) if e.schema != adv.schema => {
                warn!("{} re-advertised '{}' with a different schema", adv.client, adv.topic);
            }
            _ => {
                debug!("{} publishes {} [{}]", adv.client, adv.topic, adv.schema);
                topics.insert(
                    adv.topic,
                    TopicEntry {
                        schema: adv.schema,
                        owner: adv.client,
                    },
                );
            }
        }
    }

    fn ingress(&self, body: Vec<u8>, conn_name: &mut Option<String>) {
        let topic = match parse_envelope(&body) {
            Ok(env) => env.topic,
            Err(_) => {
                self.stats.record(UNPARSED, Event::DroppedMalformed);
                return;
            }
        };
        if topic.starts_with(CONTROL_PREFIX) {
            if topic == ADVERTISE_TOPIC {
                self.advertise(&body, conn_name);
            }
            return;
        }
        let known = {
            let topics = self.topics.read().unwrap();
            topics
                .get(&topic)
                .is_some_and(|e| conn_name.as_deref() == Some(e.owner.as_str()))
        };
        if !known {
            self.stats.record(&topic, Event::DroppedUnknown);
            return;
        }
        self.stats.record(&topic, Event::Received);
        let frame: Arc<[u8]> = body.into();
        for sub in self.subscribers.read().unwrap().iter() {
            if sub.topics.read().unwrap().contains(&topic)
                && sub.push(&topic, frame.clone(), self.config.queue_depth)
            {
                self.stats.record(&topic, Event::DroppedOverflow);
            }
        }
    }
}

fn accept_loop(listener: TcpListener, hub: Arc<Hub>, serve: fn(Arc<Hub>, TcpStream)) {
    while !hub.stopping() {
        match listener.accept() {
            Ok((stream, peer)) => {
                debug!("accepted {peer} on {:?}", listener.local_addr());
                if stream.set_nonblocking(false).is_err() {
                    continue;
                }
                let _ = stream.set_nodelay(true);
                hub.track(&stream);
                let hub = hub.clone();
                thread::spawn(move || serve(hub, stream));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn serve_publisher(hub: Arc<Hub>, stream: TcpStream) {
    let mut reader = BufReader::new(stream);
    let mut name = None;
    while let Ok(Some(body)) = read_frame(&mut reader) {
        hub.ingress(body, &mut name);
    }
    debug!("publisher {name:?} disconnected");
}

fn serve_subscriber(hub: Arc<Hub>, stream: TcpStream) {
    let sub = Arc::new(Subscriber::new());
    hub.subscribers.write().unwrap().push(sub.clone());

    let writer = stream.try_clone().map(|w| {
        let (hub, sub) = (hub.clone(), sub.clone());
        thread::spawn(move || {
            let mut w = BufWriter::new(w);
            let mut batch = Vec::with_capacity(WRITE_BATCH);
            while sub.pop_batch(&mut batch) {
                let mut ok = true;
                for (_, f) in &batch {
                    if write_frame(&mut w, f).is_err() {
                        ok = false;
                        break;
                    }
                }
                if !ok || w.flush().is_err() {
                    break;
                }
                for (topic, _) in batch.drain(..) {
                    if !topic.starts_with(CONTROL_PREFIX) {
                        hub.stats.record(&topic, Event::Sent);
                    }
                }
            }
            sub.close();
        })
    });

    let mut reader = BufReader::new(stream);
    while let Ok(Some(body)) = read_frame(&mut reader) {
        let Ok(env) = parse_envelope(&body) else { continue };
        if env.topic != SUBSCRIBE_TOPIC {
            continue;
        }
        match serde_json::from_str::<Subscribe>(env.payload.get()) {
            Ok(s) => {
                sub.topics.write().unwrap().insert(s.topic.clone());
                let ack = control_frame(SUBSCRIBED_TOPIC, &s);
                sub.push(SUBSCRIBED_TOPIC, ack.into(), usize::MAX);
            }
            Err(e) => warn!("ignoring malformed subscription: {e}"),
        }
    }
    sub.close();
    hub.subscribers.write().unwrap().retain(|s| !Arc::ptr_eq(s, &sub));
    if let Ok(w) = writer {
        let _ = w.join();
    }
}

fn serve_heartbeat(hub: Arc<Hub>, stream: TcpStream) {
    let done = Arc::new(AtomicBool::new(false));
    let writer = stream.try_clone().map(|w| {
        let (hub, done) = (hub.clone(), done.clone());
        thread::spawn(move || {
            let mut w = BufWriter::new(w);
            let period = hub.config.heartbeat_period;
            let mut next = Instant::now();
            let mut counter = 0i64;
            while !done.load(Ordering::Acquire) && !hub.stopping() {
                let msg = hub.codec.encode(&heartbeat(HUB_NAME, counter)).expect("heartbeat encodes");
                let body = envelope(super::client::HEARTBEAT_TOPIC, 0, &msg);
                if write_frame(&mut w, &body).and_then(|_| w.flush()).is_err() {
                    break;
                }
                counter += 1;
                next += period;
                let now = Instant::now();
                if next > now {
                    thread::sleep(next - now);
                } else {
                    next = now;
                }
            }
        })
    });
    let mut reader = BufReader::new(stream);
    while let Ok(Some(body)) = read_frame(&mut reader) {
        let beat = parse_envelope(&body)
            .ok()
            .and_then(|env| hub.codec.decode(env.payload.get().as_bytes(), "Heartbeat").ok())
            .and_then(|m| heartbeat_from(&m).ok());
        if let Some((sender, counter)) = beat {
            let mut peers = hub.peers.lock().unwrap();
            peers
                .entry(sender)
                .or_insert_with(|| Liveness::new(hub.config.heartbeat_period, hub.config.liveness_timeout))
                .beat(counter, Instant::now());
        }
    }
    done.store(true, Ordering::Release);
    if let Ok(w) = writer {
        let _ = w.join();
    }
}

fn monitor(hub: Arc<Hub>) {
    let poll = hub.config.heartbeat_period / 4;
    let mut last: BTreeMap<String, LinkState> = BTreeMap::new();
    while !hub.stopping() {
        let now = Instant::now();
        for (name, l) in hub.peers.lock().unwrap().iter() {
            let s = l.state_at(now).state;
            if last.insert(name.clone(), s) != Some(s) {
                info!("peer {name}: {s:?}");
            }
        }
        thread::sleep(poll);
    }
}

/// A running hub. Dropping it shuts every connection down.
pub struct BridgeServer {
    config: BridgeConfig,
    hub: Arc<Hub>,
    threads: Vec<JoinHandle<()>>,
}

fn bind(config: &BridgeConfig, port: u16) -> Result<TcpListener, BridgeError> {
    let listener = TcpListener::bind(config.addr(port)).map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => BridgeError::PortInUse { port },
        _ => BridgeError::Io(e),
    })?;
    listener.set_nonblocking(true)?;
    Ok(listener)
}

impl BridgeServer {
    pub fn start(config: BridgeConfig, registry: SchemaRegistry) -> Result<Self, BridgeError> {
        config.validate()?;
        let rx = bind(&config, config.rx_port)?;
        let tx = bind(&config, config.tx_port)?;
        let hb = bind(&config, config.heartbeat_port)?;
        let config = BridgeConfig {
            rx_port: rx.local_addr()?.port(),
            tx_port: tx.local_addr()?.port(),
            heartbeat_port: hb.local_addr()?.port(),
            ..config
        };
        let hub = Arc::new(Hub {
            codec: Codec::new(registry).with_mode(config.decode_mode),
            config: config.clone(),
            topics: RwLock::new(HashMap::new()),
            subscribers: RwLock::new(Vec::new()),
            peers: Mutex::new(BTreeMap::new()),
            stats: StatsBook::default(),
            shutdown: AtomicBool::new(false),
            streams: Mutex::new(Vec::new()),
        });
        let mut threads = Vec::new();
        for (listener, serve) in [
            (rx, serve_publisher as fn(Arc<Hub>, TcpStream)),
            (tx, serve_subscriber),
            (hb, serve_heartbeat),
        ] {
            let hub = hub.clone();
            threads.push(thread::spawn(move || accept_loop(listener, hub, serve)));
        }
        let h = hub.clone();
        threads.push(thread::spawn(move || monitor(h)));
        info!(
            "bridge listening on {} (rx {}, tx {}, heartbeat {})",
            config.host, config.rx_port, config.tx_port, config.heartbeat_port
        );
        Ok(Self { config, hub, threads })
    }

    /// The configuration with the ports actually bound.
    pub fn config(&self) -> &BridgeConfig {
        &self.config
    }

    pub fn stats(&self) -> BTreeMap<String, TopicStats> {
        self.hub.stats.snapshot()
    }

    /// Advertised topics and their schemas.
    pub fn topics(&self) -> BTreeMap<String, String> {
        self.hub
            .topics
            .read()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.schema.clone()))
            .collect()
    }

    pub fn peer_state(&self, name: &str) -> Option<ConnectionState> {
        let now = Instant::now();
        self.hub.peers.lock().unwrap().get(name).map(|l| l.state_at(now))
    }

    pub fn peer_states(&self) -> BTreeMap<String, ConnectionState> {
        let now = Instant::now();
        self.hub
            .peers
            .lock()
            .unwrap()
            .iter()
            .map(|(k, l)| (k.clone(), l.state_at(now)))
            .collect()
    }

    pub fn shutdown(&mut self) {
        if self.hub.shutdown.swap(true, Ordering::AcqRel) {
            return;
        }
        for s in self.hub.streams.lock().unwrap().drain(..) {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        for s in self.hub.subscribers.read().unwrap().iter() {
            s.close();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        info!("bridge stopped");
    }
}

impl Drop for BridgeServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outbox_drops_oldest_and_round_robins() {
        let s = Subscriber::new();
        let f = |b: u8| -> Arc<[u8]> { vec![b].into() };
        assert!(!s.push("/a", f(1), 2));
        assert!(!s.push("/a", f(2), 2));
        assert!(s.push("/a", f(3), 2));
        assert!(!s.push("/b", f(9), 2));
        let mut out = Vec::new();
        assert!(s.pop_batch(&mut out));
        let got: Vec<(String, u8)> = out.iter().map(|(t, f)| (t.clone(), f[0])).collect();
        assert_eq!(
            got,
            vec![("/a".into(), 2), ("/b".into(), 9), ("/a".into(), 3)]
        );
        s.close();
        out.clear();
        assert!(!s.pop_batch(&mut out));
    }

    #[test]
    fn port_collision_is_reported() {
        let first = BridgeServer::start(BridgeConfig::ephemeral(), SchemaRegistry::builtin()).unwrap();
        let taken = BridgeConfig {
            rx_port: first.config().rx_port,
            ..BridgeConfig::ephemeral()
        };
        match BridgeServer::start(taken, SchemaRegistry::builtin()) {
            Err(BridgeError::PortInUse { port }) => assert_eq!(port, first.config().rx_port),
            other => panic!("expected PortInUse, got {:?}", other.map(|_| ())),
        }
    }
}

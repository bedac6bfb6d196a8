//! The manager daemon: HTTP API and push ingress on one port, datagram
//! ingress on the same port number over UDP, stream-attach clients toward
//! agents, the polling engine, the clock prober and the interpreter ticker.
//! All manager state sits behind one lock, so events reach the correlator in
//! one total order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufReader, Read, Write};
use std::net::{IpAddr, Shutdown, SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use mf_core::manager::{
    Action, ActionRunner, CollectorStats, Event, EventHandlerDef, FeedItem, ManagerCore, ManagerSettings, MapClient,
    PollingDefinition, ReportSpec, SubscriptionRecord, DEFAULT_MASK_WINDOW_MS, DEFAULT_MISS_FACTOR_MILLI,
    FLUSH_INTERVAL_MS,
};
use mf_core::subscription::{Endpoint, Transport};
use mf_core::wire::{self, Body, Deframer, ManagementMessage, MessageKind, Status};
use mf_core::Oid;
use serde::{Deserialize, Serialize};

use crate::agentd::wall_clock_ms;
use crate::config::{parse_host_port, ConfigError, KeyValues};
use crate::http::{self, Connection, Request, Response, JSON, REQUEST_ID_HEADER};
use crate::repository::{subscription_key, Filter, Record, RepoError, Repository, StoreName, TopologyNode};
use crate::simnet::meter::TrafficClass;
use crate::tap::NetTap;

const POLL_INTERVAL: Duration = Duration::from_millis(20);
const IO_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq)]
pub struct ManagerConfig {
    pub name: String,
    pub bind: IpAddr,
    /// TCP for HTTP, UDP for datagrams. 0 picks a free port.
    pub listen_port: u16,
    /// Host agents are told to deliver to; defaults to the bind address.
    pub endpoint_host: Option<String>,
    pub repo: PathBuf,
    pub sync_interval_ms: u64,
    pub keepalive_ms: u64,
    pub reconnect_ms: u64,
    pub miss_factor_milli: u64,
    pub mask_window_ms: u64,
    /// Agents to put in the topology store at start-up.
    pub agents: Vec<(String, String)>,
}

impl ManagerConfig {
    pub fn new(name: &str, repo: impl Into<PathBuf>) -> Self {
        ManagerConfig {
            name: name.into(),
            bind: IpAddr::from([127, 0, 0, 1]),
            listen_port: 0,
            endpoint_host: None,
            repo: repo.into(),
            sync_interval_ms: mf_core::timesync::DEFAULT_SYNC_INTERVAL_MS,
            keepalive_ms: 15_000,
            reconnect_ms: 1_000,
            miss_factor_milli: DEFAULT_MISS_FACTOR_MILLI,
            mask_window_ms: DEFAULT_MASK_WINDOW_MS,
            agents: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ManagerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid manager configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

const KEYS: &[&str] = &[
    "name",
    "bind",
    "listen_port",
    "endpoint_host",
    "repo",
    "sync_interval_ms",
    "keepalive_ms",
    "reconnect_ms",
    "miss_factor_milli",
    "mask_window_ms",
    "agent",
];

impl ManagerConfig {
    pub fn parse(text: &str) -> Result<Self, ManagerError> {
        let kv = KeyValues::parse(text)?;
        if let Some((key, line)) = kv.keys().find(|(k, _)| !KEYS.contains(k)) {
            return Err(ConfigError::Syntax { line, message: format!("unknown key `{key}`") }.into());
        }
        if let Some((_, line)) = kv.directives().next() {
            return Err(ConfigError::Syntax { line, message: "expected key=value".into() }.into());
        }
        let d = ManagerConfig::new("manager", kv.require("repo")?);
        let mut agents = Vec::new();
        for a in kv.get_all("agent") {
            let mut words = a.split_whitespace();
            let (Some(id), Some(addr), None) = (words.next(), words.next(), words.next()) else {
                return Err(ManagerError::Invalid(format!("agent line `{a}`: expected `<id> <host:port>`")));
            };
            parse_host_port(addr).map_err(ManagerError::Invalid)?;
            agents.push((id.to_string(), addr.to_string()));
        }
        let cfg = ManagerConfig {
            name: kv.get("name").unwrap_or(&d.name).to_string(),
            bind: kv.parse_or("bind", d.bind)?,
            listen_port: kv.parse_or("listen_port", d.listen_port)?,
            endpoint_host: kv.get("endpoint_host").map(String::from),
            sync_interval_ms: kv.parse_or("sync_interval_ms", d.sync_interval_ms)?,
            keepalive_ms: kv.parse_or("keepalive_ms", d.keepalive_ms)?,
            reconnect_ms: kv.parse_or("reconnect_ms", d.reconnect_ms)?,
            miss_factor_milli: kv.parse_or("miss_factor_milli", d.miss_factor_milli)?,
            mask_window_ms: kv.parse_or("mask_window_ms", d.mask_window_ms)?,
            agents,
            repo: d.repo,
        };
        if cfg.sync_interval_ms == 0 || cfg.reconnect_ms == 0 {
            return Err(ManagerError::Invalid("intervals must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ManagerError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }
}

/// Runs handler actions that leave the process.
#[derive(Debug, Clone, Default)]
pub struct ProcessRunner;

impl ActionRunner for ProcessRunner {
    fn run(&mut self, handler: &EventHandlerDef, event: &Event) -> Result<(), String> {
        match &handler.action {
            Action::Log => {
                log::info!(
                    "event {} {} {} sev {} (handler {})",
                    event.id,
                    event.source,
                    event.kind,
                    event.severity,
                    handler.id
                );
                Ok(())
            }
            Action::MapUpdate => Ok(()),
            Action::Webhook { url } => post_webhook(url, event),
            Action::Command { argv } => {
                let (prog, args) = argv.split_first().ok_or("empty command")?;
                let status = Command::new(prog)
                    .args(args)
                    .env("MF_EVENT_ID", event.id.to_string())
                    .env("MF_EVENT_SOURCE", &event.source)
                    .env("MF_EVENT_KIND", &event.kind)
                    .env("MF_EVENT_SEVERITY", event.severity.to_string())
                    .status()
                    .map_err(|e| format!("{prog}: {e}"))?;
                if status.success() {
                    Ok(())
                } else {
                    Err(format!("{prog} exited with {status}"))
                }
            }
        }
    }
}

fn post_webhook(url: &str, event: &Event) -> Result<(), String> {
    let rest = url.strip_prefix("http://").ok_or_else(|| format!("unsupported url {url}"))?;
    let (authority, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, "/"),
    };
    let addr = http::resolve(authority).map_err(|e| e.to_string())?;
    let body = serde_json::to_vec(event).map_err(|e| e.to_string())?;
    let resp = http::call(addr, &Request::new("POST", path).with_body(JSON, body), IO_TIMEOUT).map_err(|e| e.to_string())?;
    if (200..300).contains(&resp.status) {
        Ok(())
    } else {
        Err(format!("webhook answered {}", resp.status))
    }
}

/// Pulled-data counters the core does not keep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PollStats {
    pub cycles_completed: u64,
    pub cycles_failed: u64,
    pub order_violations: u64,
    pub connections_opened: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ManagerStats {
    pub collector: CollectorStats,
    pub poll: PollStats,
    pub sync_replies: u64,
    pub offsets: BTreeMap<String, Option<i64>>,
    pub events: usize,
    pub map_clients: usize,
}

struct State {
    core: ManagerCore,
    repo: Repository,
    runner: ProcessRunner,
    poll: PollStats,
    sync_replies: u64,
}

struct Shared {
    cfg: ManagerConfig,
    tap: NetTap,
    endpoint_host: String,
    port: u16,
    running: AtomicBool,
    state: Mutex<State>,
    open: Mutex<BTreeMap<u64, TcpStream>>,
    next_conn: AtomicU64,
    next_rid: AtomicU64,
    /// Live stream-attach clients by (agent, subscription).
    streams: Mutex<BTreeMap<(String, String), (u64, TcpStream)>>,
    last_attach: Mutex<BTreeMap<(String, String), Instant>>,
    /// Attachments the agent has acknowledged.
    acked: Mutex<BTreeSet<(String, String)>>,
    wake_streams: AtomicBool,
}

pub struct ManagerHandle {
    pub addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

fn bind_both(ip: IpAddr, port: u16) -> io::Result<(TcpListener, UdpSocket)> {
    if port != 0 {
        return Ok((TcpListener::bind((ip, port))?, UdpSocket::bind((ip, port))?));
    }
    for _ in 0..64 {
        let tcp = TcpListener::bind((ip, 0))?;
        if let Ok(udp) = UdpSocket::bind((ip, tcp.local_addr()?.port())) {
            return Ok((tcp, udp));
        }
    }
    Err(io::Error::new(io::ErrorKind::AddrInUse, "no port free for both TCP and UDP"))
}

pub fn start_manager(cfg: ManagerConfig, tap: NetTap) -> Result<ManagerHandle, ManagerError> {
    let mut repo = Repository::open(&cfg.repo)?;
    let (listener, udp) = bind_both(cfg.bind, cfg.listen_port)?;
    let addr = listener.local_addr()?;
    let endpoint_host = cfg.endpoint_host.clone().unwrap_or_else(|| cfg.bind.to_string());
    for (id, a) in &cfg.agents {
        let (host, port) = parse_host_port(a).map_err(ManagerError::Invalid)?;
        let mut node = match repo.get(StoreName::Topology, id) {
            Ok(Record::Topology(n)) => n,
            _ => TopologyNode { device: id.clone(), host: String::new(), port: 0, x: 0, y: 0, links: Vec::new() },
        };
        node.host = host;
        node.port = port;
        repo.put(StoreName::Topology, Record::Topology(node))?;
    }
    let settings = ManagerSettings {
        miss_factor_milli: cfg.miss_factor_milli,
        mask_window_ms: cfg.mask_window_ms,
        ..ManagerSettings::default()
    };
    let mut core = ManagerCore::new(settings);
    let now = wall_clock_ms();
    for node in repo.topology() {
        core.add_device(&node.device, now);
    }
    core.correlator.set_handlers(repo.handler_defs());
    core.set_polls(repo.polling_defs());
    let shared = Arc::new(Shared {
        tap,
        endpoint_host,
        port: addr.port(),
        running: AtomicBool::new(true),
        state: Mutex::new(State { core, repo, runner: ProcessRunner, poll: PollStats::default(), sync_replies: 0 }),
        open: Mutex::new(BTreeMap::new()),
        next_conn: AtomicU64::new(1),
        next_rid: AtomicU64::new(1),
        streams: Mutex::new(BTreeMap::new()),
        last_attach: Mutex::new(BTreeMap::new()),
        acked: Mutex::new(BTreeSet::new()),
        wake_streams: AtomicBool::new(true),
        cfg,
    });
    {
        let mut st = shared.lock();
        let records = st.repo.subscriptions();
        for r in records {
            if shared.is_mine_any(&r) {
                st.core.add_subscription(r, now);
            }
        }
    }
    let mut threads = Vec::new();
    let spawn = |threads: &mut Vec<JoinHandle<()>>, f: fn(Arc<Shared>)| {
        let s = shared.clone();
        threads.push(thread::spawn(move || f(s)));
    };
    {
        let s = shared.clone();
        threads.push(thread::spawn(move || accept_loop(s, listener)));
    }
    {
        let s = shared.clone();
        threads.push(thread::spawn(move || datagram_loop(s, udp)));
    }
    spawn(&mut threads, stream_supervisor);
    spawn(&mut threads, sync_loop);
    spawn(&mut threads, poll_loop);
    spawn(&mut threads, tick_loop);
    log::info!("{} listening on {addr}", shared.cfg.name);
    Ok(ManagerHandle { addr, shared, threads })
}

impl ManagerHandle {
    pub fn name(&self) -> &str {
        &self.shared.cfg.name
    }

    /// The endpoint agents should deliver to over `transport`.
    pub fn endpoint(&self, transport: Transport) -> Endpoint {
        Endpoint::new(&self.shared.endpoint_host, self.shared.port, transport)
    }

    pub fn stats(&self) -> ManagerStats {
        self.shared.stats()
    }

    /// Stream subscriptions with a live attach connection.
    pub fn attached_streams(&self) -> usize {
        self.shared.acked.lock().expect("acked lock").len()
    }

    /// Runs `f` on the manager state under its lock.
    pub fn inspect<T>(&self, f: impl FnOnce(&mut ManagerCore, &mut Repository) -> T) -> T {
        let mut st = self.shared.lock();
        let st = &mut *st;
        f(&mut st.core, &mut st.repo)
    }

    /// Stops all threads, flushing buffered samples first.
    pub fn stop(self) {
        {
            let mut st = self.shared.lock();
            let st = &mut *st;
            st.core.collector.flush(&mut st.repo);
        }
        self.shared.running.store(false, Ordering::SeqCst);
        for s in self.shared.open.lock().expect("open lock").values() {
            let _ = s.shutdown(Shutdown::Both);
        }
        for (_, s) in self.shared.streams.lock().expect("streams lock").values() {
            let _ = s.shutdown(Shutdown::Both);
        }
        for t in self.threads {
            let _ = t.join();
        }
    }

    pub fn wait(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("manager state lock")
    }

    fn running(&self) -> bool {
        self.running.load(Ordering::SeqCst)
    }

    fn me(&self) -> &str {
        &self.cfg.name
    }

    fn rid(&self) -> u64 {
        self.next_rid.fetch_add(1, Ordering::SeqCst)
    }

    fn is_mine(&self, ep: &Endpoint) -> bool {
        ep.host == self.endpoint_host && ep.port == self.port
    }

    fn is_mine_any(&self, r: &SubscriptionRecord) -> bool {
        r.subscription.endpoints.iter().any(|e| self.is_mine(e))
    }

    fn register(&self, stream: &TcpStream) -> u64 {
        let id = self.next_conn.fetch_add(1, Ordering::SeqCst);
        if let Ok(c) = stream.try_clone() {
            self.open.lock().expect("open lock").insert(id, c);
        }
        id
    }

    fn unregister(&self, id: u64) {
        self.open.lock().expect("open lock").remove(&id);
    }

    fn stats(&self) -> ManagerStats {
        let st = self.lock();
        let offsets = st.repo.topology().into_iter().map(|n| {
            let o = st.core.offsets.offset(&n.device);
            (n.device, o)
        });
        ManagerStats {
            collector: st.core.collector.stats(),
            poll: st.poll,
            sync_replies: st.sync_replies,
            offsets: offsets.collect(),
            events: st.core.correlator.events().len(),
            map_clients: st.core.registry.len(),
        }
    }

    fn agent_addr(&self, agent: &str) -> Option<SocketAddr> {
        let node = match self.lock().repo.get(StoreName::Topology, agent) {
            Ok(Record::Topology(n)) => n,
            _ => return None,
        };
        http::resolve(&format!("{}:{}", node.host, node.port)).ok()
    }

    fn on_push_payload(&self, payload: &[u8]) {
        let now = wall_clock_ms();
        let mut st = self.lock();
        let st = &mut *st;
        match wire::decode_message(payload) {
            Ok(msg) if matches!(msg.kind, MessageKind::PushReport | MessageKind::Notification) => {
                st.core.on_push(&msg, now, &mut st.runner, &mut st.repo);
            }
            Ok(_) => {}
            Err(_) => st.core.collector.record_decode_failure(),
        }
    }

    /// One request on a fresh connection to an agent, metered.
    fn agent_call(&self, agent: &str, addr: SocketAddr, req: &Request, class: TrafficClass) -> io::Result<Response> {
        self.tap.connection(self.me(), agent, class);
        let mut c = Connection::open(addr, IO_TIMEOUT)?;
        let req = req.clone().with_header("Connection", "close");
        let n = c.send(&req)?;
        self.tap.stream_sent(self.me(), agent, class, n, true);
        let resp = c.receive()?;
        self.tap.stream_sent(agent, self.me(), class, resp.to_bytes(false).len(), true);
        Ok(resp)
    }

    /// Sends subscribe-requests to an agent over one pipelined connection.
    fn send_subscriptions(&self, agent: &str, msgs: &[ManagementMessage]) -> io::Result<Vec<ManagementMessage>> {
        let addr = self.agent_addr(agent).ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("unknown agent {agent}")))?;
        self.tap.connection(self.me(), agent, TrafficClass::Control);
        let mut c = Connection::open(addr, IO_TIMEOUT)?;
        let reqs: Vec<Request> = msgs
            .iter()
            .map(|m| {
                Request::new("POST", "/mgmt/subscriptions")
                    .with_header(REQUEST_ID_HEADER, &m.request_id.unwrap_or(0).to_string())
                    .with_message(m)
            })
            .collect();
        for n in c.send_all(&reqs)? {
            self.tap.stream_sent(self.me(), agent, TrafficClass::Control, n, true);
        }
        let mut acks = Vec::new();
        for _ in &reqs {
            let resp = c.receive()?;
            self.tap.stream_sent(agent, self.me(), TrafficClass::Control, resp.to_bytes(true).len(), true);
            acks.push(resp.decode_message()?);
        }
        Ok(acks)
    }

    fn track(&self, record: SubscriptionRecord) -> Result<(), RepoError> {
        let now = wall_clock_ms();
        let mut st = self.lock();
        st.repo.put(StoreName::Subscriptions, Record::Subscription(record.clone()))?;
        if self.is_mine_any(&record) {
            st.core.add_subscription(record, now);
        }
        self.wake_streams.store(true, Ordering::SeqCst);
        Ok(())
    }

    fn resend(&self, agent: &str) -> usize {
        let now = wall_clock_ms();
        let msgs = {
            let st = self.lock();
            let records = st.repo.subscriptions();
            mf_core::manager::resend_subscriptions(records.iter(), agent, self.rid(), now)
        };
        if msgs.is_empty() {
            return 0;
        }
        match self.send_subscriptions(agent, &msgs) {
            Ok(acks) => acks.iter().filter(|a| a.status.as_ref().is_some_and(Status::is_ok)).count(),
            Err(e) => {
                log::warn!("{}: resend to {agent}: {e}", self.me());
                0
            }
        }
    }
}

fn accept_loop(shared: Arc<Shared>, listener: TcpListener) {
    if listener.set_nonblocking(true).is_err() {
        return;
    }
    while shared.running() {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                let id = shared.register(&stream);
                let s = shared.clone();
                thread::spawn(move || {
                    serve_http(s.clone(), stream);
                    s.unregister(id);
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL_INTERVAL),
            Err(_) => thread::sleep(POLL_INTERVAL),
        }
    }
}

fn serve_http(shared: Arc<Shared>, stream: TcpStream) {
    let _ = stream.set_read_timeout(Some(Duration::from_millis(shared.cfg.keepalive_ms.max(1))));
    let Ok(mut writer) = stream.try_clone() else { return };
    let mut reader = BufReader::new(stream);
    while shared.running() {
        let req = match http::read_request(&mut reader) {
            Ok(Some(r)) => r,
            _ => break,
        };
        let keep = req.keep_alive();
        if req.method == "GET" && req.split_query().0 == "/api/stream" {
            feed(&shared, writer, reader);
            return;
        }
        let resp = shared.route(&req);
        if http::write_response(&mut writer, &resp, keep).is_err() || !keep {
            break;
        }
    }
}

struct FeedClient {
    out: TcpStream,
}

impl MapClient for FeedClient {
    fn deliver(&mut self, item: &FeedItem) -> bool {
        let mut line = serde_json::to_vec(item).expect("feed items serialize");
        line.push(b'\n');
        self.out.write_all(&line).is_ok()
    }
}

/// Holds the connection open and streams feed items as JSON lines until
/// the viewer goes away.
fn feed(shared: &Arc<Shared>, mut out: TcpStream, mut reader: BufReader<TcpStream>) {
    let head = "HTTP/1.1 200 OK\r\nContent-Type: application/x-ndjson\r\nCache-Control: no-cache\r\nConnection: close\r\n\r\n";
    if out.write_all(head.as_bytes()).is_err() {
        return;
    }
    let _ = out.set_write_timeout(Some(IO_TIMEOUT));
    let Ok(client_out) = out.try_clone() else { return };
    let id = shared.lock().core.register_map_client(Box::new(FeedClient { out: client_out }));
    let Some(id) = id else { return };
    let _ = reader.get_ref().set_read_timeout(Some(Duration::from_millis(200)));
    let mut buf = [0u8; 256];
    while shared.running() {
        match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    shared.lock().core.registry.unregister(id);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub device: String,
    pub host: String,
    pub port: u16,
    pub color: String,
    pub subscriptions: usize,
    pub offset_ms: Option<i64>,
}

fn error_json(status: u16, message: impl std::fmt::Display) -> Response {
    Response::json(status, &serde_json::json!({ "error": message.to_string() }))
}

fn parse_json<T: for<'de> Deserialize<'de>>(req: &Request) -> Result<T, Response> {
    serde_json::from_slice(&req.body).map_err(|e| error_json(400, e))
}

fn query_u64(q: &[(String, String)], key: &str) -> Result<Option<u64>, Response> {
    match q.iter().find(|(k, _)| k == key) {
        None => Ok(None),
        Some((_, v)) => v.parse().map(Some).map_err(|_| error_json(400, format!("bad {key}"))),
    }
}

impl Shared {
    fn route(self: &Arc<Self>, req: &Request) -> Response {
        let (path, query) = req.split_query();
        let segs: Vec<&str> = path.trim_matches('/').split('/').collect();
        let r = match (req.method.as_str(), segs.as_slice()) {
            ("POST", ["push", "report"]) => {
                self.on_push_payload(&req.body);
                Ok(Response::text(200, "ok"))
            }
            ("POST", ["push", "resend"]) => self.api_resend(req),
            ("GET", ["api", "agents"]) => Ok(self.api_agents()),
            ("POST", ["api", "agents"]) => self.api_put_agent(req),
            ("GET", ["api", "agents", id, "publish-index"]) => self.api_publish_index(id),
            ("GET", ["api", "subscriptions"]) => Ok(self.api_list_subscriptions(&query)),
            ("POST", ["api", "subscriptions"]) => self.api_subscribe(req, &query),
            ("DELETE", ["api", "subscriptions", agent, id]) => self.api_unsubscribe(agent, id),
            ("GET", ["api", "map"]) => Ok(Response::json(200, &self.lock().core.correlator.map().snapshot())),
            ("GET", ["api", "events"]) => Ok(Response::json(200, &self.lock().core.correlator.events())),
            ("GET", ["api", "report"]) => self.api_report(&query),
            ("GET", ["api", "stats"]) => Ok(Response::json(200, &self.stats())),
            ("GET", ["api", "polls"]) => Ok(Response::json(200, &self.lock().repo.polling_defs())),
            ("POST", ["api", "polls"]) => self.api_put_poll(req),
            ("DELETE", ["api", "polls", id]) => self.api_delete(StoreName::PollingDefs, id),
            ("GET", ["api", "handlers"]) => Ok(Response::json(200, &self.lock().repo.handler_defs())),
            ("POST", ["api", "handlers"]) => self.api_put_handler(req),
            ("DELETE", ["api", "handlers", id]) => self.api_delete(StoreName::HandlerDefs, id),
            (_, ["api", ..]) | (_, ["push", ..]) => Err(error_json(404, format!("no route {} {path}", req.method))),
            _ => Err(error_json(404, format!("no route {} {path}", req.method))),
        };
        r.unwrap_or_else(|e| e)
    }

    fn api_resend(self: &Arc<Self>, req: &Request) -> Result<Response, Response> {
        let msg = wire::decode_message(&req.body).map_err(|e| error_json(400, e))?;
        let agent = match (msg.kind, msg.device) {
            (MessageKind::ResendRequest, Some(d)) => d,
            _ => return Err(error_json(400, "expected resend-request naming a device")),
        };
        let s = self.clone();
        let a = agent.clone();
        thread::spawn(move || {
            let n = s.resend(&a);
            log::info!("{}: resent {n} subscriptions to {a}", s.me());
        });
        Ok(Response::json(200, &serde_json::json!({ "agent": agent })))
    }

    fn api_agents(&self) -> Response {
        let st = self.lock();
        let subs = st.repo.subscriptions();
        let infos: Vec<AgentInfo> = st
            .repo
            .topology()
            .into_iter()
            .map(|n| AgentInfo {
                color: st.core.correlator.map().color(&n.device).map(|c| c.as_str()).unwrap_or("green").to_string(),
                subscriptions: subs.iter().filter(|r| r.agent == n.device).count(),
                offset_ms: st.core.offsets.offset(&n.device),
                device: n.device,
                host: n.host,
                port: n.port,
            })
            .collect();
        Response::json(200, &infos)
    }

    fn api_put_agent(&self, req: &Request) -> Result<Response, Response> {
        let node: TopologyNode = parse_json(req)?;
        let now = wall_clock_ms();
        let mut st = self.lock();
        st.repo.put(StoreName::Topology, Record::Topology(node.clone())).map_err(|e| error_json(500, e))?;
        st.core.add_device(&node.device, now);
        Ok(Response::json(201, &node))
    }

    fn api_publish_index(&self, agent: &str) -> Result<Response, Response> {
        let addr = self.agent_addr(agent).ok_or_else(|| error_json(404, format!("unknown agent {agent}")))?;
        let resp = self.agent_call(agent, addr, &Request::new("GET", "/mgmt/mibs"), TrafficClass::Control).map_err(|e| error_json(502, e))?;
        let msg = resp.decode_message().map_err(|e| error_json(502, e))?;
        match msg.body {
            Body::Index(schemas) => Ok(Response::json(200, &schemas)),
            _ => Err(error_json(502, "agent did not answer with an index")),
        }
    }

    fn api_list_subscriptions(&self, query: &[(String, String)]) -> Response {
        let agent = query.iter().find(|(k, _)| k == "agent").map(|(_, v)| v.clone());
        let mut records = self.lock().repo.subscriptions();
        if let Some(a) = agent {
            records.retain(|r| r.agent == a);
        }
        Response::json(200, &records)
    }

    /// Installs a subscription on the agent and records it. With
    /// `install=false` the manager only records and tracks it (a standby
    /// listed as a second endpoint).
    fn api_subscribe(&self, req: &Request, query: &[(String, String)]) -> Result<Response, Response> {
        let mut record: SubscriptionRecord = parse_json(req)?;
        let install = !query.iter().any(|(k, v)| k == "install" && v == "false");
        let now = wall_clock_ms();
        if record.subscription.id.is_empty() {
            record.subscription.id = format!("{}-{now}-{}", self.me(), self.rid());
        }
        if record.subscription.created_at == 0 {
            record.subscription.created_at = now;
        }
        record.subscription.validate().map_err(|e| error_json(422, e))?;
        if install {
            let msg = ManagementMessage::subscribe_request(self.rid(), record.subscription.clone(), now);
            let acks = self.send_subscriptions(&record.agent, &[msg]).map_err(|e| match e.kind() {
                io::ErrorKind::NotFound => error_json(404, e),
                _ => error_json(502, e),
            })?;
            match acks.first().and_then(|a| a.status.clone()) {
                Some(Status::Ok) => {}
                Some(Status::Error { code, reason }) => return Err(error_json(422, format!("{code}: {reason}"))),
                None => return Err(error_json(502, "agent sent no status")),
            }
        }
        self.track(record.clone()).map_err(|e| error_json(500, e))?;
        Ok(Response::json(201, &record))
    }

    fn api_unsubscribe(&self, agent: &str, id: &str) -> Result<Response, Response> {
        let key = subscription_key(agent, id);
        let removed = {
            let mut st = self.lock();
            if st.repo.get(StoreName::Subscriptions, &key).is_err() {
                return Err(error_json(404, format!("no subscription {key}")));
            }
            st.repo.delete(StoreName::Subscriptions, &key).map_err(|e| error_json(500, e))?;
            st.core.remove_subscription(id)
        };
        if let Some((_, s)) = self.streams.lock().expect("streams lock").remove(&(agent.to_string(), id.to_string())) {
            let _ = s.shutdown(Shutdown::Both);
        }
        let mut agent_ok = false;
        if let Some(addr) = self.agent_addr(agent) {
            let path = format!("/mgmt/subscriptions/{}", mf_core::pct::encode_str(id));
            agent_ok = self
                .agent_call(agent, addr, &Request::new("DELETE", &path), TrafficClass::Control)
                .is_ok_and(|r| r.status == 200);
        }
        Ok(Response::json(200, &serde_json::json!({ "removed": removed.is_some(), "agent_acknowledged": agent_ok })))
    }

    fn api_report(&self, q: &[(String, String)]) -> Result<Response, Response> {
        let devices: Vec<String> = q.iter().filter(|(k, _)| k == "device").map(|(_, v)| v.clone()).collect();
        let oids = q
            .iter()
            .filter(|(k, _)| k == "oid")
            .map(|(_, v)| Oid::parse(v).map_err(|e| error_json(400, e)))
            .collect::<Result<Vec<_>, _>>()?;
        let from = query_u64(q, "from")?.ok_or_else(|| error_json(400, "from is required"))?;
        let to = query_u64(q, "to")?.ok_or_else(|| error_json(400, "to is required"))?;
        let resolution_ms = query_u64(q, "resolution")?.unwrap_or(1_000);
        if resolution_ms == 0 {
            return Err(error_json(400, "resolution must be positive"));
        }
        let spec = ReportSpec { devices, oids, from, to, resolution_ms };
        let mut st = self.lock();
        let st = &mut *st;
        st.core.collector.flush(&mut st.repo);
        let samples = st.repo.samples(&Filter { from: Some(from), to: Some(to), ..Filter::default() });
        Ok(Response::json(200, &mf_core::manager::generate_report(&spec, &samples)))
    }

    fn api_put_poll(&self, req: &Request) -> Result<Response, Response> {
        let def: PollingDefinition = parse_json(req)?;
        def.validate().map_err(|e| error_json(422, e))?;
        self.lock().repo.put(StoreName::PollingDefs, Record::PollingDef(def.clone())).map_err(|e| error_json(500, e))?;
        Ok(Response::json(201, &def))
    }

    fn api_put_handler(&self, req: &Request) -> Result<Response, Response> {
        let def: EventHandlerDef = parse_json(req)?;
        let mut st = self.lock();
        st.repo.put(StoreName::HandlerDefs, Record::HandlerDef(def.clone())).map_err(|e| error_json(500, e))?;
        let handlers = st.repo.handler_defs();
        st.core.correlator.set_handlers(handlers);
        Ok(Response::json(201, &def))
    }

    fn api_delete(&self, store: StoreName, id: &str) -> Result<Response, Response> {
        let mut st = self.lock();
        st.repo.delete(store, id).map_err(|e| match e {
            RepoError::MissingKey { .. } => error_json(404, e),
            e => error_json(500, e),
        })?;
        if store == StoreName::HandlerDefs {
            let handlers = st.repo.handler_defs();
            st.core.correlator.set_handlers(handlers);
        }
        Ok(Response::json(200, &serde_json::json!({ "deleted": id })))
    }
}

fn datagram_loop(shared: Arc<Shared>, udp: UdpSocket) {
    let _ = udp.set_read_timeout(Some(Duration::from_millis(100)));
    let mut buf = vec![0u8; 65_536];
    while shared.running() {
        match udp.recv_from(&mut buf) {
            Ok((n, _)) => shared.on_push_payload(&buf[..n]),
            Err(_) => continue,
        }
    }
}

/// Keeps one attach connection per stream subscription this manager is an
/// endpoint of, re-attaching `reconnect_ms` after a drop.
fn stream_supervisor(shared: Arc<Shared>) {
    let reconnect = Duration::from_millis(shared.cfg.reconnect_ms);
    let mut last_scan = Instant::now() - reconnect;
    while shared.running() {
        if !shared.wake_streams.swap(false, Ordering::SeqCst) && last_scan.elapsed() < reconnect.min(Duration::from_millis(200)) {
            thread::sleep(POLL_INTERVAL);
            continue;
        }
        last_scan = Instant::now();
        let wanted: BTreeSet<(String, String)> = shared
            .lock()
            .core
            .subscriptions()
            .filter(|r| r.subscription.endpoints.iter().any(|e| e.transport == Transport::Stream && shared.is_mine(e)))
            .map(|r| (r.agent.clone(), r.subscription.id.clone()))
            .collect();
        let live: BTreeSet<(String, String)> = shared.streams.lock().expect("streams lock").keys().cloned().collect();
        for key in wanted.difference(&live) {
            let mut attempts = shared.last_attach.lock().expect("attach lock");
            if attempts.get(key).is_some_and(|t| t.elapsed() < reconnect) {
                continue;
            }
            attempts.insert(key.clone(), Instant::now());
            drop(attempts);
            let Some(addr) = shared.agent_addr(&key.0) else { continue };
            let stream_addr = SocketAddr::new(addr.ip(), addr.port() + 1);
            let s = shared.clone();
            let key = key.clone();
            thread::spawn(move || stream_client(s, key, stream_addr));
        }
    }
}

fn stream_client(shared: Arc<Shared>, key: (String, String), addr: SocketAddr) {
    let (agent, sub) = (key.0.clone(), key.1.clone());
    let me = shared.me().to_string();
    shared.tap.connection(&me, &agent, TrafficClass::Control);
    let Ok(mut stream) = TcpStream::connect_timeout(&addr, IO_TIMEOUT) else { return };
    let _ = stream.set_nodelay(true);
    // no read timeout: a quiet stream is not a dead one
    let conn = shared.next_conn.fetch_add(1, Ordering::SeqCst);
    let Ok(registered) = stream.try_clone() else { return };
    {
        let mut streams = shared.streams.lock().expect("streams lock");
        if streams.contains_key(&key) {
            return;
        }
        streams.insert(key.clone(), (conn, registered));
    }
    let attach = ManagementMessage::stream_attach(shared.rid(), &sub, wall_clock_ms());
    let frame = wire::frame(&wire::encode_auto(&attach).expect("attach encodes")).expect("attach fits");
    let sent = stream.write_all(&frame);
    shared.tap.stream_sent(&me, &agent, TrafficClass::Control, frame.len(), sent.is_ok());
    if sent.is_ok() {
        read_stream(&shared, &mut stream, &key, &me);
    }
    shared.acked.lock().expect("acked lock").remove(&key);
    let mut streams = shared.streams.lock().expect("streams lock");
    if streams.get(&key).is_some_and(|(c, _)| *c == conn) {
        streams.remove(&key);
    }
    drop(streams);
    shared.last_attach.lock().expect("attach lock").insert(key, Instant::now());
    shared.wake_streams.store(true, Ordering::SeqCst);
}

fn read_stream(shared: &Shared, stream: &mut TcpStream, key: &(String, String), me: &str) {
    let agent = key.0.as_str();
    let mut deframer = Deframer::new();
    let mut buf = [0u8; 8192];
    while shared.running() {
        let n = match stream.read(&mut buf) {
            Ok(0) | Err(_) => return,
            Ok(n) => n,
        };
        deframer.push(&buf[..n]);
        loop {
            let frame = match deframer.next_frame() {
                Ok(Some(f)) => f,
                Ok(None) => break,
                Err(_) => {
                    shared.lock().core.collector.record_decode_failure();
                    return;
                }
            };
            let size = frame.len() + 4;
            match wire::decode_message(&frame) {
                Ok(msg) if msg.kind == MessageKind::SubscribeAck => {
                    shared.tap.stream_sent(agent, me, TrafficClass::Control, size, true);
                    if !msg.status.as_ref().is_some_and(Status::is_ok) {
                        log::warn!("{me}: {agent} refused attach: {:?}", msg.status);
                        return;
                    }
                    shared.acked.lock().expect("acked lock").insert(key.clone());
                }
                _ => {
                    shared.tap.stream_sent(agent, me, TrafficClass::Data, size, true);
                    shared.on_push_payload(&frame);
                }
            }
        }
    }
}

/// Sleeps in short steps so shutdown is prompt. False once stopped.
fn sleep_until(shared: &Shared, deadline: Instant) -> bool {
    while shared.running() {
        let now = Instant::now();
        if now >= deadline {
            return true;
        }
        thread::sleep((deadline - now).min(POLL_INTERVAL));
    }
    false
}

fn sync_loop(shared: Arc<Shared>) {
    let interval = Duration::from_millis(shared.cfg.sync_interval_ms);
    let mut next = Instant::now();
    while sleep_until(&shared, next) {
        next += interval;
        let agents = shared.lock().repo.topology();
        for node in agents {
            let Ok(addr) = http::resolve(&format!("{}:{}", node.host, node.port)) else { continue };
            let me = shared.me();
            shared.tap.connection(me, &node.device, TrafficClass::Sync);
            let Ok(mut conn) = Connection::open(addr, IO_TIMEOUT) else { continue };
            // t1 is taken once the connection is up so set-up time does not skew the estimate
            let probe = ManagementMessage::sync_probe(shared.rid(), wall_clock_ms());
            let req = Request::new("POST", "/mgmt/sync").with_message(&probe).with_header("Connection", "close");
            let Ok(n) = conn.send(&req) else { continue };
            shared.tap.stream_sent(me, &node.device, TrafficClass::Sync, n, true);
            let Ok(resp) = conn.receive() else { continue };
            let t4 = wall_clock_ms();
            shared.tap.stream_sent(&node.device, me, TrafficClass::Sync, resp.to_bytes(false).len(), true);
            if let Ok(reply) = resp.decode_message() {
                let mut st = shared.lock();
                if st.core.on_sync_reply(&node.device, &reply, t4).is_some() {
                    st.sync_replies += 1;
                }
            }
        }
    }
}

struct PollConn {
    conn: Connection,
    agent: String,
}

fn poll_loop(shared: Arc<Shared>) {
    let keepalive = Duration::from_millis(shared.cfg.keepalive_ms);
    let mut conns: BTreeMap<String, PollConn> = BTreeMap::new();
    let mut due: BTreeMap<String, Instant> = BTreeMap::new();
    while shared.running() {
        // definitions are re-read at every cycle boundary
        let defs: Vec<PollingDefinition> = {
            let mut st = shared.lock();
            let defs = st.repo.polling_defs();
            st.core.set_polls(defs.clone());
            defs
        };
        due.retain(|id, _| defs.iter().any(|d| &d.id == id));
        conns.retain(|id, _| defs.iter().any(|d| &d.id == id));
        let now = Instant::now();
        for def in &defs {
            let at = *due.entry(def.id.clone()).or_insert(now);
            if at > now {
                continue;
            }
            let period = Duration::from_millis(def.period_ms);
            let mut next = at + period;
            if next <= now {
                next = now + period;
            }
            due.insert(def.id.clone(), next);
            run_cycle(&shared, def, &mut conns, keepalive);
        }
        let wake = due.values().min().copied().unwrap_or(now + Duration::from_millis(100));
        if !sleep_until(&shared, wake.min(Instant::now() + Duration::from_millis(100))) {
            break;
        }
    }
}

fn run_cycle(shared: &Shared, def: &PollingDefinition, conns: &mut BTreeMap<String, PollConn>, keepalive: Duration) {
    let me = shared.me().to_string();
    let reusable = conns.get(&def.id).is_some_and(|c| c.conn.last_used.elapsed() <= keepalive && c.agent == def.agent);
    if !reusable {
        conns.remove(&def.id);
    }
    let mut result = cycle_on(shared, def, conns, &me);
    if result.is_err() && reusable {
        // the agent may have timed the idle connection out; one fresh try
        conns.remove(&def.id);
        result = cycle_on(shared, def, conns, &me);
    }
    let now = wall_clock_ms();
    let mut st = shared.lock();
    let st = &mut *st;
    match &result {
        Ok(_) => st.poll.cycles_completed += 1,
        Err(e) => {
            conns.remove(&def.id);
            st.poll.cycles_failed += 1;
            log::debug!("{me}: poll {} failed: {e}", def.id);
        }
    }
    st.core.on_poll_result(&def.id, result.map_err(|e| e.to_string()), now, &mut st.runner, &mut st.repo);
}

fn cycle_on(
    shared: &Shared,
    def: &PollingDefinition,
    conns: &mut BTreeMap<String, PollConn>,
    me: &str,
) -> io::Result<Vec<ManagementMessage>> {
    if !conns.contains_key(&def.id) {
        let addr = http::resolve(&format!("{}:{}", def.host, def.port))?;
        shared.tap.connection(me, &def.agent, TrafficClass::Data);
        let conn = Connection::open(addr, IO_TIMEOUT)?;
        shared.lock().poll.connections_opened += 1;
        conns.insert(def.id.clone(), PollConn { conn, agent: def.agent.clone() });
    }
    let pc = conns.get_mut(&def.id).expect("inserted above");
    let rids: Vec<u64> = def.request_paths().iter().map(|_| shared.rid()).collect();
    let reqs: Vec<Request> = def
        .request_paths()
        .iter()
        .zip(&rids)
        .map(|(p, rid)| Request::new("GET", p).with_header(REQUEST_ID_HEADER, &rid.to_string()))
        .collect();
    for n in pc.conn.send_all(&reqs)? {
        shared.tap.stream_sent(me, &def.agent, TrafficClass::Data, n, true);
    }
    let mut out = Vec::new();
    for rid in &rids {
        let resp = pc.conn.receive()?;
        shared.tap.stream_sent(&def.agent, me, TrafficClass::Data, resp.to_bytes(true).len(), true);
        let got: u64 = resp.header(REQUEST_ID_HEADER).and_then(|v| v.parse().ok()).unwrap_or(0);
        if got != *rid {
            shared.lock().poll.order_violations += 1;
        }
        out.push(resp.decode_message()?);
    }
    Ok(out)
}

fn tick_loop(shared: Arc<Shared>) {
    let mut next = Instant::now();
    loop {
        let interval = shared.lock().core.interpreter.tick_interval().unwrap_or(FLUSH_INTERVAL_MS).min(FLUSH_INTERVAL_MS);
        next += Duration::from_millis(interval.max(1));
        if !sleep_until(&shared, next) {
            return;
        }
        let now = wall_clock_ms();
        let mut st = shared.lock();
        let st = &mut *st;
        st.core.tick(now, &mut st.runner, &mut st.repo);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parse() {
        let c = ManagerConfig::parse("repo=/tmp/r\nname=m1\nagent=a1 127.0.0.1:8161\nsync_interval_ms=500\n").unwrap();
        assert_eq!(c.name, "m1");
        assert_eq!(c.agents, vec![("a1".to_string(), "127.0.0.1:8161".to_string())]);
        assert_eq!(c.sync_interval_ms, 500);
        assert!(ManagerConfig::parse("name=m1\n").is_err());
        assert!(ManagerConfig::parse("repo=r\nagent=a1\n").is_err());
        assert!(ManagerConfig::parse("repo=r\nwhat=1\n").is_err());
    }
}

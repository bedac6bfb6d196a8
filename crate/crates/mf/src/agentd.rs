//! The agent daemon: HTTP management server on `listen_port`, raw stream
//! port on `listen_port + 1`, push scheduler thread, datagram socket and
//! one sender thread per http-push endpoint, all around one `AgentCore`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader, Read, Write};
use std::net::{IpAddr, Shutdown, SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use mf_core::agent::{AgentCore, Method, Outgoing, ReportBuffer, StorageMode, StoreChange, STREAM_BUFFER_LIMIT};
use mf_core::mib::VirtualMib;
use mf_core::subscription::{Endpoint, Subscription, Transport};
use mf_core::wire::{self, Body, Deframer, ErrorCode, ManagementMessage, MessageKind, Status, VarBind};

use crate::config::{parse_host_port, ConfigError, KeyValues};
use crate::http::{self, Connection, Request, Response, REQUEST_ID_HEADER};
use crate::repository::{file_stem, write_atomic};
use crate::simnet::meter::TrafficClass;
use crate::tap::NetTap;

const POLL_INTERVAL: Duration = Duration::from_millis(20);
const PUSH_RETRY: Duration = Duration::from_secs(1);
const IO_TIMEOUT: Duration = Duration::from_secs(2);
const STORE_EXT: &str = "sub";

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub device_id: String,
    pub bind: IpAddr,
    /// 0 picks a free pair of consecutive ports.
    pub listen_port: u16,
    pub storage_path: Option<PathBuf>,
    pub storage_mode: StorageMode,
    pub schema_files: Vec<PathBuf>,
    /// `host:port` of a manager accepting resend-requests.
    pub manager_resend_endpoint: Option<String>,
    /// Start from the built-in schemas and a populated interface table.
    pub builtin_schemas: bool,
    pub if_count: u32,
    pub seed: u64,
    pub keepalive_ms: u64,
    /// Added to the wall clock, for exercising clock correction.
    pub clock_skew_ms: i64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            device_id: "agent".into(),
            bind: IpAddr::from([127, 0, 0, 1]),
            listen_port: 0,
            storage_path: None,
            storage_mode: StorageMode::Volatile,
            schema_files: Vec::new(),
            manager_resend_endpoint: None,
            builtin_schemas: true,
            if_count: 4,
            seed: 1,
            keepalive_ms: 15_000,
            clock_skew_ms: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid agent configuration: {0}")]
    Invalid(String),
    #[error("schema {path}: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

const KEYS: &[&str] = &[
    "device_id",
    "bind",
    "listen_port",
    "storage_path",
    "storage_mode",
    "schema_file",
    "manager_resend_endpoint",
    "builtin_schemas",
    "if_count",
    "seed",
    "keepalive_ms",
    "clock_skew_ms",
];

impl AgentConfig {
    pub fn parse(text: &str) -> Result<Self, AgentError> {
        let kv = KeyValues::parse(text)?;
        if let Some((key, line)) = kv.keys().find(|(k, _)| !KEYS.contains(k)) {
            return Err(ConfigError::Syntax { line, message: format!("unknown key `{key}`") }.into());
        }
        if let Some((_, line)) = kv.directives().next() {
            return Err(ConfigError::Syntax { line, message: "expected key=value".into() }.into());
        }
        let d = AgentConfig::default();
        let storage_mode = match kv.get("storage_mode") {
            None | Some("volatile") => StorageMode::Volatile,
            Some("durable") => StorageMode::Durable,
            Some(other) => return Err(AgentError::Invalid(format!("unknown storage_mode `{other}`"))),
        };
        let cfg = AgentConfig {
            device_id: kv.require("device_id")?.to_string(),
            bind: kv.parse_or("bind", d.bind)?,
            listen_port: kv.parse_or("listen_port", d.listen_port)?,
            storage_path: kv.get("storage_path").map(PathBuf::from),
            storage_mode,
            schema_files: kv.get_all("schema_file").map(PathBuf::from).collect(),
            manager_resend_endpoint: kv.get("manager_resend_endpoint").map(String::from),
            builtin_schemas: kv.parse_or("builtin_schemas", d.builtin_schemas)?,
            if_count: kv.parse_or("if_count", d.if_count)?,
            seed: kv.parse_or("seed", d.seed)?,
            keepalive_ms: kv.parse_or("keepalive_ms", d.keepalive_ms)?,
            clock_skew_ms: kv.parse_or("clock_skew_ms", d.clock_skew_ms)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.device_id.is_empty() {
            return Err(AgentError::Invalid("empty device_id".into()));
        }
        if self.storage_mode == StorageMode::Volatile && self.manager_resend_endpoint.is_none() {
            return Err(AgentError::Invalid("volatile storage needs manager_resend_endpoint".into()));
        }
        if self.storage_mode == StorageMode::Durable && self.storage_path.is_none() {
            return Err(AgentError::Invalid("durable storage needs storage_path".into()));
        }
        if let Some(ep) = &self.manager_resend_endpoint {
            parse_host_port(ep).map_err(AgentError::Invalid)?;
        }
        if self.listen_port == u16::MAX {
            return Err(AgentError::Invalid("listen_port + 1 must be a port".into()));
        }
        Ok(())
    }

    pub fn build_mib(&self) -> Result<VirtualMib, AgentError> {
        let mut mib = if self.builtin_schemas {
            VirtualMib::simulated_device(&self.device_id, self.if_count, self.seed)
        } else {
            VirtualMib::new(self.seed)
        };
        for path in &self.schema_files {
            let schema_err = |message: String| AgentError::Schema { path: path.display().to_string(), message };
            let text = fs::read_to_string(path).map_err(|e| schema_err(e.to_string()))?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("schema");
            mib.load_schema_text(&text, stem).map_err(|e| schema_err(e.to_string()))?;
        }
        Ok(mib)
    }
}

/// Durable subscription store: one file per subscription holding the
/// encoded subscribe-request.
#[derive(Debug, Clone)]
pub struct SubscriptionStore {
    dir: PathBuf,
}

impl SubscriptionStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SubscriptionStore { dir: dir.into() }
    }

    fn path(&self, id: &str) -> String {
        format!("{}.{STORE_EXT}", file_stem(id))
    }

    pub fn put(&self, sub: &Subscription) -> io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let msg = ManagementMessage::subscribe_request(0, sub.clone(), 0);
        let bytes = wire::encode_auto(&msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        write_atomic(&self.dir, &self.path(&sub.id), &bytes)
    }

    pub fn delete(&self, id: &str) -> io::Result<()> {
        match fs::remove_file(self.dir.join(self.path(id))) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }

    /// Every stored subscription in id order. Any undecodable file makes
    /// the whole store unreadable.
    pub fn load(&self) -> Result<Vec<Subscription>, String> {
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.to_string()),
        };
        let mut subs = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(STORE_EXT) {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| e.to_string())?;
            let msg = wire::decode_message(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
            match msg.body {
                Body::Subscription(s) => subs.push(s),
                _ => return Err(format!("{}: not a subscribe-request", path.display())),
            }
        }
        subs.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(subs)
    }
}

pub fn wall_clock_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

struct Attached {
    conn: u64,
    stream: TcpStream,
}

struct State {
    core: AgentCore,
    attached: BTreeMap<(String, Endpoint), Attached>,
    buffers: BTreeMap<(String, Endpoint), ReportBuffer>,
    push: BTreeMap<Endpoint, Sender<ManagementMessage>>,
}

struct Shared {
    cfg: AgentConfig,
    tap: NetTap,
    running: AtomicBool,
    state: Mutex<State>,
    wake: Condvar,
    udp: UdpSocket,
    store: Option<SubscriptionStore>,
    open: Mutex<BTreeMap<u64, TcpStream>>,
    next_conn: AtomicU64,
    senders: Mutex<Vec<JoinHandle<()>>>,
}

pub struct AgentHandle {
    pub http_addr: SocketAddr,
    pub stream_addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

/// Binds the HTTP port and the stream port right above it.
fn bind_pair(ip: IpAddr, port: u16) -> io::Result<(TcpListener, TcpListener)> {
    if port != 0 {
        let http = TcpListener::bind((ip, port))?;
        let stream = TcpListener::bind((ip, port + 1))?;
        return Ok((http, stream));
    }
    for _ in 0..64 {
        let http = TcpListener::bind((ip, 0))?;
        let p = http.local_addr()?.port();
        if p == u16::MAX {
            continue;
        }
        if let Ok(stream) = TcpListener::bind((ip, p + 1)) {
            return Ok((http, stream));
        }
    }
    Err(io::Error::new(io::ErrorKind::AddrInUse, "no free consecutive port pair"))
}

/// Starts an agent. Subscriptions are recovered before the ports accept.
pub fn start_agent(cfg: AgentConfig, tap: NetTap) -> Result<AgentHandle, AgentError> {
    cfg.validate()?;
    let mib = cfg.build_mib()?;
    let (http_listener, stream_listener) = bind_pair(cfg.bind, cfg.listen_port)?;
    let http_addr = http_listener.local_addr()?;
    let stream_addr = stream_listener.local_addr()?;
    let udp = UdpSocket::bind((cfg.bind, 0))?;
    let store = match cfg.storage_mode {
        StorageMode::Durable => cfg.storage_path.clone().map(SubscriptionStore::new),
        StorageMode::Volatile => None,
    };
    let now = wall_clock_ms().saturating_add_signed(cfg.clock_skew_ms);
    let mut core = AgentCore::new(&cfg.device_id, mib, cfg.storage_mode, now);
    let stored = match &store {
        Some(s) => s.load().map_err(|e| log::warn!("{}: subscription store unreadable: {e}", cfg.device_id)),
        None => Ok(Vec::new()),
    };
    let recovery = core.recover_on_boot(stored, now);
    log::info!("{}: recovered {} subscriptions", cfg.device_id, recovery.recovered);
    let shared = Arc::new(Shared {
        tap,
        running: AtomicBool::new(true),
        state: Mutex::new(State { core, attached: BTreeMap::new(), buffers: BTreeMap::new(), push: BTreeMap::new() }),
        wake: Condvar::new(),
        udp,
        store,
        open: Mutex::new(BTreeMap::new()),
        next_conn: AtomicU64::new(1),
        senders: Mutex::new(Vec::new()),
        cfg,
    });
    let mut threads = Vec::new();
    {
        let s = shared.clone();
        threads.push(thread::spawn(move || accept_loop(s, http_listener, serve_http)));
    }
    {
        let s = shared.clone();
        threads.push(thread::spawn(move || accept_loop(s, stream_listener, serve_stream)));
    }
    {
        let s = shared.clone();
        threads.push(thread::spawn(move || scheduler_loop(s)));
    }
    if let Some(msg) = recovery.resend_request {
        match shared.cfg.manager_resend_endpoint.clone() {
            Some(ep) => {
                let s = shared.clone();
                threads.push(thread::spawn(move || request_resend(s, &ep, msg)));
            }
            None => log::warn!("{}: no manager to ask for subscriptions", shared.cfg.device_id),
        }
    }
    Ok(AgentHandle { http_addr, stream_addr, shared, threads })
}

impl AgentHandle {
    pub fn device_id(&self) -> &str {
        &self.shared.cfg.device_id
    }

    pub fn subscriptions(&self) -> Vec<Subscription> {
        self.shared.lock().core.subscriptions().cloned().collect()
    }

    /// Raises a notification as if the device had detected `name`.
    pub fn notify(&self, name: &str, bindings: Vec<VarBind>) -> usize {
        self.shared.notify(name, bindings)
    }

    /// Stops every thread and closes every connection. Stored
    /// subscriptions stay on disk.
    pub fn stop(self) {
        self.shared.running.store(false, Ordering::SeqCst);
        self.shared.wake.notify_all();
        for s in self.shared.open.lock().expect("open lock").values() {
            let _ = s.shutdown(Shutdown::Both);
        }
        {
            let mut st = self.shared.lock();
            st.push.clear();
            for a in st.attached.values() {
                let _ = a.stream.shutdown(Shutdown::Both);
            }
            st.attached.clear();
        }
        for t in self.threads {
            let _ = t.join();
        }
        let senders = std::mem::take(&mut *self.shared.senders.lock().expect("senders lock"));
        for t in senders {
            let _ = t.join();
        }
    }

    /// Blocks until the agent is stopped from another thread (never, for the CLI).
    pub fn wait(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("agent state lock")
    }

    fn running(&self) -> bool {
        self.running.load(Ordering::SeqCst)
    }

    fn now(&self) -> u64 {
        wall_clock_ms().saturating_add_signed(self.cfg.clock_skew_ms)
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

    fn persist(&self, st: &mut State) {
        for change in st.core.take_store_changes() {
            let Some(store) = &self.store else { continue };
            let r = match &change {
                StoreChange::Put(sub) => store.put(sub),
                StoreChange::Delete(id) => store.delete(id),
            };
            if let Err(e) = r {
                log::error!("{}: subscription store: {e}", self.cfg.device_id);
            }
        }
    }

    fn notify(self: &Arc<Self>, name: &str, bindings: Vec<VarBind>) -> usize {
        let now = self.now();
        let mut st = self.lock();
        let out = st.core.generate_notification(name, bindings, now);
        let n = out.len();
        for o in out {
            self.dispatch(&mut st, o);
        }
        n
    }

    fn dispatch(self: &Arc<Self>, st: &mut State, o: Outgoing) {
        let sub = o.message.subscription_id.clone().unwrap_or_default();
        match o.endpoint.transport {
            Transport::Stream => {
                let key = (sub, o.endpoint);
                if let Some(a) = st.attached.get_mut(&key) {
                    if write_frame(&mut a.stream, &o.message).is_ok() {
                        return;
                    }
                    let _ = a.stream.shutdown(Shutdown::Both);
                    st.attached.remove(&key);
                }
                st.buffers.entry(key).or_insert_with(|| ReportBuffer::with_limit(STREAM_BUFFER_LIMIT)).push(o.message);
            }
            Transport::Datagram => {
                let Ok(bytes) = wire::encode_auto(&o.message) else { return };
                let Ok(addr) = http::resolve(&format!("{}:{}", o.endpoint.host, o.endpoint.port)) else {
                    log::warn!("{}: cannot resolve {}", self.cfg.device_id, o.endpoint);
                    return;
                };
                if self.tap.datagram(&self.cfg.device_id, &self.tap.resolve(addr), bytes.len()) {
                    if let Err(e) = self.udp.send_to(&bytes, addr) {
                        log::debug!("{}: datagram to {addr}: {e}", self.cfg.device_id);
                    }
                }
            }
            Transport::HttpPush => {
                let ep = o.endpoint.clone();
                let msg = o.message;
                let tx = st.push.entry(ep.clone()).or_insert_with(|| {
                    let (tx, rx) = mpsc::channel();
                    let s = self.clone();
                    let h = thread::spawn(move || push_sender(s, ep, rx));
                    self.senders.lock().expect("senders lock").push(h);
                    tx
                });
                let _ = tx.send(msg);
            }
        }
    }
}

fn write_frame(stream: &mut TcpStream, msg: &ManagementMessage) -> io::Result<usize> {
    let bytes = wire::frame(&wire::encode_auto(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    stream.write_all(&bytes)?;
    Ok(bytes.len())
}

fn accept_loop(shared: Arc<Shared>, listener: TcpListener, serve: fn(Arc<Shared>, TcpStream, u64)) {
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
                    serve(s.clone(), stream, id);
                    s.unregister(id);
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL_INTERVAL),
            Err(e) => {
                log::warn!("{}: accept: {e}", shared.cfg.device_id);
                thread::sleep(POLL_INTERVAL);
            }
        }
    }
}

/// HTTP status for a management reply; the body always carries the message.
pub fn http_status(reply: &ManagementMessage) -> u16 {
    match &reply.status {
        None | Some(Status::Ok) => 200,
        Some(Status::Error { code: ErrorCode::NotFound, .. }) => 404,
        Some(Status::Error { code: ErrorCode::BadRequest, .. }) => 400,
        Some(Status::Error { .. }) => 422,
    }
}

fn serve_http(shared: Arc<Shared>, stream: TcpStream, _id: u64) {
    let keepalive = Duration::from_millis(shared.cfg.keepalive_ms.max(1));
    if stream.set_read_timeout(Some(keepalive)).is_err() {
        return;
    }
    let Ok(mut writer) = stream.try_clone() else { return };
    let mut reader = BufReader::new(stream);
    while shared.running() {
        let req = match http::read_request(&mut reader) {
            Ok(Some(r)) => r,
            Ok(None) => break,
            Err(e) => {
                if e.kind() == io::ErrorKind::InvalidData {
                    let _ = http::write_response(&mut writer, &Response::text(400, &e.to_string()), false);
                }
                break;
            }
        };
        let keep = req.keep_alive();
        let resp = shared.handle_http(&req);
        if http::write_response(&mut writer, &resp, keep).is_err() || !keep {
            break;
        }
    }
}

impl Shared {
    fn handle_http(self: &Arc<Self>, req: &Request) -> Response {
        let rid = req.request_id();
        let now = self.now();
        let body = if req.body.is_empty() {
            None
        } else {
            match wire::decode_message(&req.body) {
                Ok(m) => Some(m),
                Err(e) => {
                    let reply = ManagementMessage::response(
                        rid,
                        Status::error(ErrorCode::BadRequest, e.to_string()),
                        Body::Empty,
                        now,
                    );
                    return reply_response(&reply, rid);
                }
            }
        };
        let method = match req.method.as_str() {
            "GET" => Method::Get,
            "POST" => Method::Post,
            "DELETE" => Method::Delete,
            _ => return Response::text(405, "method not allowed"),
        };
        let (path, _) = req.split_query();
        if let (Method::Post, Some(name)) = (method, path.strip_prefix("/mgmt/notify/")) {
            let bindings = body.map(|m| m.body.bindings().to_vec()).unwrap_or_default();
            let sent = self.notify(name, bindings);
            let known = self.lock().core.notification_names().contains(name);
            let status = if known { Status::Ok } else { Status::error(ErrorCode::NotFound, format!("no notification {name}")) };
            let reply = ManagementMessage::response(rid, status, Body::Empty, now);
            log::debug!("{}: notification {name} sent to {sent} endpoints", self.cfg.device_id);
            return reply_response(&reply, rid);
        }
        let reply = {
            let mut st = self.lock();
            let reply = st.core.handle_pull(method, path, body.as_ref(), rid, now);
            self.persist(&mut st);
            if reply.kind == MessageKind::SubscribeAck || method == Method::Delete {
                self.wake.notify_all();
            }
            reply
        };
        reply_response(&reply, rid)
    }
}

fn reply_response(reply: &ManagementMessage, rid: u64) -> Response {
    let mut resp = Response::message(reply);
    resp.status = http_status(reply);
    resp.headers.push((REQUEST_ID_HEADER.into(), rid.to_string()));
    resp
}

fn serve_stream(shared: Arc<Shared>, stream: TcpStream, conn: u64) {
    let peer_host = stream.peer_addr().map(|a| a.ip().to_string()).unwrap_or_default();
    let Ok(mut reader) = stream.try_clone() else { return };
    let _ = stream.set_write_timeout(Some(IO_TIMEOUT));
    let mut deframer = Deframer::new();
    let mut buf = [0u8; 4096];
    'read: while shared.running() {
        let n = match reader.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        deframer.push(&buf[..n]);
        loop {
            let frame = match deframer.next_frame() {
                Ok(Some(f)) => f,
                Ok(None) => break,
                Err(_) => break 'read,
            };
            let Ok(msg) = wire::decode_message(&frame) else { continue };
            if !msg.is_stream_attach() {
                continue;
            }
            shared.attach(&msg, &stream, conn, &peer_host);
        }
    }
    let mut st = shared.lock();
    st.attached.retain(|_, a| a.conn != conn);
}

impl Shared {
    fn attach(&self, msg: &ManagementMessage, stream: &TcpStream, conn: u64, peer_host: &str) {
        let now = self.now();
        let mut st = self.lock();
        let ack = st.core.handle_subscribe_request(msg, now);
        let Ok(mut out) = stream.try_clone() else { return };
        let ok = ack.status.as_ref().is_some_and(Status::is_ok);
        let sub = msg.subscription_id.clone().unwrap_or_default();
        let ep = if ok {
            let attached = &st.attached;
            st.core.match_stream_endpoint(&sub, peer_host, |ep| attached.contains_key(&(sub.clone(), ep.clone())))
        } else {
            None
        };
        if write_frame(&mut out, &ack).is_err() {
            return;
        }
        let Some(ep) = ep else { return };
        let key = (sub, ep);
        if let Some(old) = st.attached.remove(&key) {
            if old.conn != conn {
                let _ = old.stream.shutdown(Shutdown::Both);
            }
        }
        let buffered: Vec<ManagementMessage> = st.buffers.get_mut(&key).map(|b| b.drain().collect()).unwrap_or_default();
        for m in &buffered {
            if write_frame(&mut out, m).is_err() {
                return;
            }
        }
        st.attached.insert(key, Attached { conn, stream: out });
    }
}

fn scheduler_loop(shared: Arc<Shared>) {
    let mut st = shared.lock();
    while shared.running() {
        let now = shared.now();
        let out = st.core.scheduler_step(now);
        for o in out {
            shared.dispatch(&mut st, o);
        }
        let wait = match st.core.next_due() {
            Some(due) => Duration::from_millis(due.saturating_sub(shared.now()).clamp(1, 1_000)),
            None => Duration::from_secs(1),
        };
        st = shared.wake.wait_timeout(st, wait).expect("agent state lock").0;
    }
}

/// Delivers http-push messages for one endpoint in order over one
/// persistent connection, retrying each message every second until it is
/// accepted or the agent stops.
fn push_sender(shared: Arc<Shared>, ep: Endpoint, rx: Receiver<ManagementMessage>) {
    let me = shared.cfg.device_id.clone();
    let mut conn: Option<Connection> = None;
    let mut peer = String::new();
    while shared.running() {
        let msg = match rx.recv_timeout(Duration::from_millis(200)) {
            Ok(m) => m,
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        let req = Request::new("POST", "/push/report").with_message(&msg);
        while shared.running() {
            if conn.is_none() {
                let opened = http::resolve(&format!("{}:{}", ep.host, ep.port))
                    .and_then(|addr| Connection::open(addr, IO_TIMEOUT).map(|c| (addr, c)));
                match opened {
                    Ok((addr, c)) => {
                        peer = shared.tap.resolve(addr);
                        shared.tap.connection(&me, &peer, TrafficClass::Data);
                        conn = Some(c);
                    }
                    Err(e) => {
                        log::debug!("{me}: http-push to {ep}: {e}");
                        thread::sleep(PUSH_RETRY);
                        continue;
                    }
                }
            }
            let c = conn.as_mut().expect("connected above");
            let sent = c.send(&req);
            let got = sent.as_ref().ok().map(|_| c.receive());
            match (sent, got) {
                (Ok(n), Some(Ok(resp))) => {
                    shared.tap.stream_sent(&me, &peer, TrafficClass::Data, n, true);
                    shared.tap.stream_sent(&peer, &me, TrafficClass::Data, resp.to_bytes(true).len(), true);
                    break;
                }
                (Ok(n), _) => shared.tap.stream_sent(&me, &peer, TrafficClass::Data, n, false),
                (Err(_), _) => {}
            }
            conn = None;
            thread::sleep(PUSH_RETRY);
        }
    }
}

/// Asks the manager to resend this agent's subscriptions, retrying every
/// second until the request is accepted.
fn request_resend(shared: Arc<Shared>, endpoint: &str, msg: ManagementMessage) {
    let me = shared.cfg.device_id.clone();
    let req = Request::new("POST", "/push/resend").with_message(&msg);
    while shared.running() {
        match http::resolve(endpoint).and_then(|addr| {
            let peer = shared.tap.resolve(addr);
            shared.tap.connection(&me, &peer, TrafficClass::Control);
            let mut c = Connection::open(addr, IO_TIMEOUT)?;
            let req = req.clone().with_header("Connection", "close");
            let n = c.send(&req)?;
            shared.tap.stream_sent(&me, &peer, TrafficClass::Control, n, true);
            let resp = c.receive()?;
            shared.tap.stream_sent(&peer, &me, TrafficClass::Control, resp.to_bytes(false).len(), true);
            Ok(resp)
        }) {
            Ok(resp) if resp.status == 200 => return,
            Ok(resp) => log::warn!("{me}: resend refused with {}", resp.status),
            Err(e) => log::debug!("{me}: resend to {endpoint}: {e}"),
        }
        thread::sleep(PUSH_RETRY);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_invariants() {
        assert!(AgentConfig::parse("device_id=a\nstorage_mode=volatile\n").is_err());
        assert!(AgentConfig::parse("device_id=a\nstorage_mode=durable\n").is_err());
        let c = AgentConfig::parse("device_id=a\nstorage_mode=volatile\nmanager_resend_endpoint=127.0.0.1:9\n").unwrap();
        assert_eq!(c.storage_mode, StorageMode::Volatile);
        assert!(AgentConfig::parse("device_id=a\nbogus=1\n").is_err());
    }

    #[test]
    fn store_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let store = SubscriptionStore::new(dir.path());
        assert_eq!(store.load().unwrap(), vec![]);
        let sub = Subscription::new("s/1", Endpoint::new("m", 7, Transport::Datagram))
            .select(mf_core::mib::well_known::sys_up_time(), 1000);
        store.put(&sub).unwrap();
        assert_eq!(store.load().unwrap(), vec![sub.clone()]);
        store.delete("s/1").unwrap();
        assert!(store.load().unwrap().is_empty());
        store.put(&sub).unwrap();
        fs::write(dir.path().join("junk.sub"), b"garbage").unwrap();
        assert!(store.load().is_err());
    }
}

//! Deterministic in-process fleet: N agents and one or two managers on a
//! virtual clock, joined by metered links. Messages cross links as the same
//! bytes the daemons put on sockets (HTTP requests, length-prefixed stream
//! frames, raw datagrams), so the meter counts real encodings.

pub mod meter;
pub mod metrics;
pub mod scenario;
pub mod variables;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use mf_core::agent::{AgentCore, Method, Outgoing, ReportBuffer, StorageMode, StoreChange, STREAM_BUFFER_LIMIT};
use mf_core::manager::{
    generate_report, CollectorStats, Event, ManagerCore, MemorySink, NoopRunner, PollingDefinition, ReportSpec,
    SubscriptionRecord, FLUSH_INTERVAL_MS,
};
use mf_core::subscription::{Endpoint, Subscription, Transport};
use mf_core::wire::{self, Body, ManagementMessage, MessageKind, Status};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::http::{self, Request, Response, REQUEST_ID_HEADER};
use meter::{Direction, TrafficClass, TrafficMeter};
use metrics::*;
use scenario::{FaultAction, Model, Role, Scenario};
use variables::{device_mib, variable_oids};

/// Manager clock reading at virtual time zero. Agent clocks add their skew.
pub const CLOCK_BASE: u64 = 1_000_000_000;
/// Port the simulated managers claim in subscription endpoints.
pub const SIM_MANAGER_PORT: u16 = 7000;
/// Port the simulated agents listen on.
pub const SIM_AGENT_PORT: u16 = 8161;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Node {
    Agent(usize),
    Manager(usize),
}

impl Node {
    pub fn name(self) -> String {
        match self {
            Node::Agent(i) => format!("agent-{}", i + 1),
            Node::Manager(i) => format!("manager-{}", i + 1),
        }
    }

    fn ordinal(self) -> u64 {
        match self {
            Node::Agent(i) => i as u64,
            Node::Manager(i) => (1 << 20) + i as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Carrier {
    Datagram,
    Stream,
    HttpRequest,
    HttpResponse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Purpose {
    Control,
    Sync,
    Poll,
    Stream { agent: usize, sub: String },
    HttpPush,
}

#[derive(Debug, Clone)]
struct Conn {
    initiator: Node,
    acceptor: Node,
    open: bool,
    last_used: u64,
    purpose: Purpose,
}

impl Conn {
    fn class(&self) -> TrafficClass {
        match self.purpose {
            Purpose::Control | Purpose::Stream { .. } => TrafficClass::Control,
            Purpose::Sync => TrafficClass::Sync,
            Purpose::Poll | Purpose::HttpPush => TrafficClass::Data,
        }
    }

    fn peer(&self, of: Node) -> Node {
        if self.initiator == of {
            self.acceptor
        } else {
            self.initiator
        }
    }
}

#[derive(Debug)]
enum Ev {
    Setup,
    AgentStep { agent: usize, gen: u64 },
    Deliver { from: Node, to: Node, conn: Option<u64>, carrier: Carrier, bytes: Vec<u8> },
    PeerClosed { conn: u64, node: Node },
    ManagerTick { manager: usize, gen: u64 },
    PollCycle,
    SyncRound,
    Reconnect { manager: usize, agent: usize, sub: String },
    PushRetry { agent: usize, endpoint: Endpoint },
    Fault(usize),
}

struct Scheduled {
    time: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug, Clone)]
enum Pending {
    Subscribe,
    Poll { poll_id: String, cycle: u64, request_id: u64 },
    Sync { agent: usize, request_id: u64 },
}

#[derive(Debug, Default)]
struct CycleState {
    expected: usize,
    got: Vec<ManagementMessage>,
}

struct ManagerNode {
    alive: bool,
    core: ManagerCore,
    disk: MemorySink,
    tick_gen: u64,
    next_rid: u64,
    pending: BTreeMap<u64, VecDeque<Pending>>,
    poll_conns: BTreeMap<String, u64>,
    cycles: BTreeMap<(String, u64), CycleState>,
    stream_conns: BTreeMap<(usize, String), u64>,
    /// Push payloads in arrival order.
    received: Vec<(u64, Vec<u8>)>,
    archived_events: Vec<Event>,
    archived_stats: CollectorStats,
    poll: PollMetrics,
}

#[derive(Debug, Clone)]
struct Boot {
    killed_at: Option<u64>,
    restored_at: u64,
    subscriptions_before: usize,
    converged_at: Option<u64>,
}

struct AgentNode {
    alive: bool,
    skew: i64,
    core: Option<AgentCore>,
    /// Survives restarts: subscription id to encoded subscribe-request.
    disk: BTreeMap<String, Vec<u8>>,
    step_gen: u64,
    attached: BTreeMap<(String, Endpoint), u64>,
    buffers: BTreeMap<(String, Endpoint), ReportBuffer>,
    push_conns: BTreeMap<Endpoint, u64>,
    push_queue: BTreeMap<Endpoint, VecDeque<ManagementMessage>>,
    retry_armed: BTreeSet<Endpoint>,
    installed_at: Option<u64>,
    killed_at: Option<u64>,
    subs_at_kill: usize,
    boots: Vec<Boot>,
}

/// Everything a run produced, beyond the metrics document.
pub struct SimOutcome {
    pub metrics: Metrics,
    /// Stored samples and notifications per manager.
    pub stored: Vec<MemorySink>,
    /// Push payloads per manager, in arrival order, with virtual arrival time.
    pub received: Vec<Vec<(u64, Vec<u8>)>>,
    /// Live subscriptions per agent at the end.
    pub agent_subscriptions: Vec<Vec<Subscription>>,
    pub repository: Vec<SubscriptionRecord>,
    /// Virtual time the first subscription took effect on each agent.
    pub installed_at: Vec<Option<u64>>,
}

pub struct Simulator {
    s: Scenario,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    agents: Vec<AgentNode>,
    managers: Vec<ManagerNode>,
    conns: BTreeMap<u64, Conn>,
    next_conn: u64,
    links: BTreeMap<(u64, u64), ChaCha8Rng>,
    repository: BTreeMap<String, SubscriptionRecord>,
    meter: TrafficMeter,
    ops: BTreeMap<Role, OpCounts>,
    last_ack: Option<u64>,
    datagrams_sent: u64,
    datagrams_dropped: u64,
    sync_probes: u64,
    sync_replies: u64,
    oids: Vec<mf_core::Oid>,
}

pub fn run_scenario(s: &Scenario) -> SimOutcome {
    Simulator::new(s.clone()).run()
}

fn new_manager_core() -> ManagerCore {
    ManagerCore::default()
}

impl Simulator {
    pub fn new(s: Scenario) -> Self {
        let agents = (0..s.agents)
            .map(|i| AgentNode {
                alive: true,
                skew: s.agent_skew(i),
                core: None,
                disk: BTreeMap::new(),
                step_gen: 0,
                attached: BTreeMap::new(),
                buffers: BTreeMap::new(),
                push_conns: BTreeMap::new(),
                push_queue: BTreeMap::new(),
                retry_armed: BTreeSet::new(),
                installed_at: None,
                killed_at: None,
                subs_at_kill: 0,
                boots: Vec::new(),
            })
            .collect();
        let managers = (0..s.managers)
            .map(|_| ManagerNode {
                alive: true,
                core: new_manager_core(),
                disk: MemorySink::default(),
                tick_gen: 0,
                next_rid: 1,
                pending: BTreeMap::new(),
                poll_conns: BTreeMap::new(),
                cycles: BTreeMap::new(),
                stream_conns: BTreeMap::new(),
                received: Vec::new(),
                archived_events: Vec::new(),
                archived_stats: CollectorStats::default(),
                poll: PollMetrics::default(),
            })
            .collect();
        let oids = variable_oids(s.variables);
        let mut sim = Simulator {
            s,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            agents,
            managers,
            conns: BTreeMap::new(),
            next_conn: 1,
            links: BTreeMap::new(),
            repository: BTreeMap::new(),
            meter: TrafficMeter::new(),
            ops: BTreeMap::new(),
            last_ack: None,
            datagrams_sent: 0,
            datagrams_dropped: 0,
            sync_probes: 0,
            sync_replies: 0,
            oids,
        };
        for i in 0..sim.s.agents {
            sim.boot_agent(i);
        }
        for m in 0..sim.s.managers {
            let now = sim.mclock();
            for i in 0..sim.s.agents {
                sim.managers[m].core.add_device(&Node::Agent(i).name(), now);
            }
        }
        sim
    }

    // ---- clocks and scheduling ----

    fn mclock(&self) -> u64 {
        CLOCK_BASE + self.now
    }

    fn aclock(&self, agent: usize) -> u64 {
        (CLOCK_BASE as i64 + self.now as i64 + self.agents[agent].skew) as u64
    }

    fn agent_to_virtual(&self, agent: usize, t: u64) -> u64 {
        (t as i64 - CLOCK_BASE as i64 - self.agents[agent].skew).max(self.now as i64) as u64
    }

    fn at(&mut self, time: u64, ev: Ev) {
        self.seq += 1;
        self.queue.push(Scheduled { time, seq: self.seq, ev });
    }

    fn latency(&self, from: Node, to: Node) -> u64 {
        match (from, to) {
            (Node::Agent(_), _) => self.s.latency_up_ms,
            _ => self.s.latency_down_ms,
        }
    }

    fn op(&mut self, node: Node, marshalled: u64, parsed: u64) {
        let role = match node {
            Node::Agent(_) => Role::Agent,
            Node::Manager(_) => Role::Manager,
        };
        let c = self.ops.entry(role).or_default();
        c.marshalled += marshalled;
        c.parsed += parsed;
    }

    fn alive(&self, n: Node) -> bool {
        match n {
            Node::Agent(i) => self.agents[i].alive,
            Node::Manager(i) => self.managers[i].alive,
        }
    }

    // ---- links and connections ----

    fn open_conn(&mut self, from: Node, to: Node, purpose: Purpose) -> Option<u64> {
        if !self.alive(to) {
            return None;
        }
        let id = self.next_conn;
        self.next_conn += 1;
        let conn = Conn { initiator: from, acceptor: to, open: true, last_used: self.now, purpose };
        self.meter.connection_opened(&from.name(), &to.name(), conn.class());
        self.conns.insert(id, conn);
        Some(id)
    }

    fn close_conn(&mut self, id: u64) {
        if let Some(c) = self.conns.get_mut(&id) {
            c.open = false;
        }
    }

    fn conn_open(&self, id: u64) -> bool {
        self.conns.get(&id).is_some_and(|c| c.open)
    }

    fn send(&mut self, from: Node, to: Node, conn: Option<u64>, carrier: Carrier, class: TrafficClass, bytes: Vec<u8>) {
        let direction = match from {
            Node::Manager(_) => Direction::ManagerToAgent,
            Node::Agent(_) => Direction::AgentToManager,
        };
        let (fname, tname) = (from.name(), to.name());
        self.meter.sent(self.now, &fname, &tname, direction, class, bytes.len());
        if let Some(c) = conn.and_then(|id| self.conns.get_mut(&id)) {
            c.last_used = self.now;
        }
        if carrier == Carrier::Datagram {
            self.datagrams_sent += 1;
            let seed = self.s.seed;
            let key = (from.ordinal(), to.ordinal());
            let rng = self.links.entry(key).or_insert_with(|| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream((key.0 << 32) | key.1);
                r
            });
            if self.s.loss > 0.0 && rng.random::<f64>() < self.s.loss {
                self.datagrams_dropped += 1;
                self.meter.dropped(&fname, &tname);
                return;
            }
        }
        let t = self.now + self.latency(from, to);
        self.at(t, Ev::Deliver { from, to, conn, carrier, bytes });
    }

    fn kill_connections_of(&mut self, node: Node) {
        let ids: Vec<u64> = self
            .conns
            .iter()
            .filter(|(_, c)| c.open && (c.initiator == node || c.acceptor == node))
            .map(|(id, _)| *id)
            .collect();
        for id in ids {
            let peer = self.conns[&id].peer(node);
            self.close_conn(id);
            let t = self.now + self.latency(node, peer);
            self.at(t, Ev::PeerClosed { conn: id, node: peer });
        }
    }

    // ---- run loop ----

    pub fn run(mut self) -> SimOutcome {
        self.at(0, Ev::Setup);
        self.at(0, Ev::SyncRound);
        if self.s.model == Model::Pull {
            self.at(0, Ev::PollCycle);
        }
        for m in 0..self.s.managers {
            self.arm_tick(m);
        }
        for (i, f) in self.s.faults.clone().iter().enumerate() {
            self.at(f.at_ms, Ev::Fault(i));
        }
        while let Some(Scheduled { time, ev, .. }) = self.queue.pop() {
            self.now = time;
            self.handle(ev);
        }
        for m in 0..self.s.managers {
            let node = &mut self.managers[m];
            if node.alive {
                node.core.collector.flush(&mut node.disk);
            }
        }
        self.finish()
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Setup => self.setup(),
            Ev::AgentStep { agent, gen } => self.agent_step(agent, gen),
            Ev::Deliver { from, to, conn, carrier, bytes } => self.deliver(from, to, conn, carrier, bytes),
            Ev::PeerClosed { conn, node } => self.peer_closed(conn, node),
            Ev::ManagerTick { manager, gen } => self.manager_tick(manager, gen),
            Ev::PollCycle => self.poll_cycle(),
            Ev::SyncRound => self.sync_round(),
            Ev::Reconnect { manager, agent, sub } => self.reconnect(manager, agent, &sub),
            Ev::PushRetry { agent, endpoint } => {
                self.agents[agent].retry_armed.remove(&endpoint);
                if self.agents[agent].alive {
                    self.flush_http_push(agent, &endpoint);
                }
            }
            Ev::Fault(i) => self.fault(i),
        }
    }

    fn setup(&mut self) {
        if self.s.model != Model::Push {
            let defs: Vec<PollingDefinition> = (0..self.s.agents)
                .map(|i| PollingDefinition {
                    id: format!("poll-{}", Node::Agent(i).name()),
                    agent: Node::Agent(i).name(),
                    host: Node::Agent(i).name(),
                    port: SIM_AGENT_PORT,
                    oids: self.oids.clone(),
                    table_oids: Vec::new(),
                    period_ms: self.s.period_ms,
                })
                .collect();
            for m in &mut self.managers {
                m.core.set_polls(defs.clone());
            }
            return;
        }
        for i in 0..self.s.agents {
            let mut sub = Subscription {
                id: format!("sub-{}", Node::Agent(i).name()),
                endpoints: (0..self.s.managers)
                    .map(|m| Endpoint::new(&Node::Manager(m).name(), SIM_MANAGER_PORT, self.s.transport))
                    .collect(),
                selections: Vec::new(),
                notification_filter: Default::default(),
                durable: true,
                created_at: self.mclock(),
            };
            for oid in &self.oids {
                sub = sub.select(oid.clone(), self.s.period_ms);
            }
            let record = SubscriptionRecord { agent: Node::Agent(i).name(), subscription: sub };
            self.repository.insert(format!("{}/{}", record.agent, record.subscription.id), record.clone());
            self.send_subscribe(0, i, vec![record.subscription]);
        }
    }

    fn send_subscribe(&mut self, m: usize, agent: usize, subs: Vec<Subscription>) {
        if subs.is_empty() {
            return;
        }
        let Some(conn) = self.open_conn(Node::Manager(m), Node::Agent(agent), Purpose::Control) else { return };
        for sub in subs {
            let rid = self.rid(m);
            let msg = ManagementMessage::subscribe_request(rid, sub, self.mclock());
            self.send_request(m, agent, conn, Request::new("POST", "/mgmt/subscriptions").with_message(&msg), rid, Pending::Subscribe);
        }
    }

    fn rid(&mut self, m: usize) -> u64 {
        let r = self.managers[m].next_rid;
        self.managers[m].next_rid += 1;
        r
    }

    fn send_request(&mut self, m: usize, agent: usize, conn: u64, req: Request, rid: u64, pending: Pending) {
        let req = req.with_header(REQUEST_ID_HEADER, &rid.to_string());
        let bytes = req.to_bytes(&Node::Agent(agent).name());
        self.op(Node::Manager(m), 1, 0);
        self.managers[m].pending.entry(conn).or_default().push_back(pending);
        let class = self.conns[&conn].class();
        self.send(Node::Manager(m), Node::Agent(agent), Some(conn), Carrier::HttpRequest, class, bytes);
    }

    // ---- agents ----

    fn boot_agent(&mut self, i: usize) {
        let name = Node::Agent(i).name();
        let now = self.aclock(i);
        let mib = device_mib(&name, self.s.seed.wrapping_add(i as u64));
        self.agents[i].core = Some(AgentCore::new(&name, mib, self.s.storage, now));
    }

    fn agent_core(&mut self, i: usize) -> &mut AgentCore {
        self.agents[i].core.as_mut().expect("live agent has a core")
    }

    fn arm_step(&mut self, i: usize) {
        self.agents[i].step_gen += 1;
        let gen = self.agents[i].step_gen;
        let Some(due) = self.agents[i].core.as_ref().and_then(|c| c.next_due()) else { return };
        let t = self.agent_to_virtual(i, due);
        if t <= self.s.duration_ms {
            self.at(t, Ev::AgentStep { agent: i, gen });
        }
    }

    fn agent_step(&mut self, i: usize, gen: u64) {
        if !self.agents[i].alive || self.agents[i].step_gen != gen {
            return;
        }
        let now = self.aclock(i);
        let out = self.agent_core(i).scheduler_step(now);
        for o in out {
            self.dispatch(i, o);
        }
        self.arm_step(i);
    }

    fn persist(&mut self, i: usize) {
        let changes = self.agent_core(i).take_store_changes();
        for c in changes {
            match c {
                StoreChange::Put(sub) => {
                    let msg = ManagementMessage::subscribe_request(0, sub.clone(), 0);
                    let bytes = wire::encode_auto(&msg).expect("valid subscription");
                    self.agents[i].disk.insert(sub.id, bytes);
                }
                StoreChange::Delete(id) => {
                    self.agents[i].disk.remove(&id);
                }
            }
        }
    }

    fn manager_of(&self, ep: &Endpoint) -> Option<usize> {
        let n: usize = ep.host.strip_prefix("manager-")?.parse().ok()?;
        (1..=self.s.managers).contains(&n).then(|| n - 1)
    }

    fn dispatch(&mut self, i: usize, o: Outgoing) {
        let Some(m) = self.manager_of(&o.endpoint) else { return };
        let sub = o.message.subscription_id.clone().unwrap_or_default();
        match o.endpoint.transport {
            Transport::Stream => {
                let key = (sub, o.endpoint);
                match self.agents[i].attached.get(&key).copied().filter(|c| self.conn_open(*c)) {
                    Some(conn) => self.send_stream(i, m, conn, &o.message, TrafficClass::Data),
                    None => self.agents[i]
                        .buffers
                        .entry(key)
                        .or_insert_with(|| ReportBuffer::with_limit(STREAM_BUFFER_LIMIT))
                        .push(o.message),
                }
            }
            Transport::Datagram => {
                let bytes = wire::encode_auto(&o.message).expect("valid report");
                self.op(Node::Agent(i), 1, 0);
                self.send(Node::Agent(i), Node::Manager(m), None, Carrier::Datagram, TrafficClass::Data, bytes);
            }
            Transport::HttpPush => {
                self.agents[i].push_queue.entry(o.endpoint.clone()).or_default().push_back(o.message);
                self.flush_http_push(i, &o.endpoint);
            }
        }
    }

    fn send_stream(&mut self, i: usize, m: usize, conn: u64, msg: &ManagementMessage, class: TrafficClass) {
        let bytes = wire::frame(&wire::encode_auto(msg).expect("valid message")).expect("frame fits");
        self.op(Node::Agent(i), 1, 0);
        self.send(Node::Agent(i), Node::Manager(m), Some(conn), Carrier::Stream, class, bytes);
    }

    fn flush_http_push(&mut self, i: usize, ep: &Endpoint) {
        let Some(m) = self.manager_of(ep) else { return };
        let conn = match self.agents[i].push_conns.get(ep).copied().filter(|c| self.conn_open(*c)) {
            Some(c) => c,
            None => match self.open_conn(Node::Agent(i), Node::Manager(m), Purpose::HttpPush) {
                Some(c) => {
                    self.agents[i].push_conns.insert(ep.clone(), c);
                    c
                }
                None => {
                    let retry = self.now + 1_000;
                    if retry <= self.s.duration_ms && self.agents[i].retry_armed.insert(ep.clone()) {
                        self.at(retry, Ev::PushRetry { agent: i, endpoint: ep.clone() });
                    }
                    return;
                }
            },
        };
        let queued: Vec<ManagementMessage> = self.agents[i].push_queue.get_mut(ep).map(|q| q.drain(..).collect()).unwrap_or_default();
        for msg in queued {
            let bytes = Request::new("POST", "/push/report").with_message(&msg).to_bytes(&ep.host);
            self.op(Node::Agent(i), 1, 0);
            self.send(Node::Agent(i), Node::Manager(m), Some(conn), Carrier::HttpRequest, TrafficClass::Data, bytes);
        }
    }

    fn agent_http(&mut self, i: usize, conn: u64, from: Node, bytes: &[u8]) {
        let Ok(Some(req)) = http::read_request(&mut &bytes[..]) else { return };
        let body = if req.body.is_empty() { None } else { wire::decode_message(&req.body).ok() };
        self.op(Node::Agent(i), 0, 1);
        let method = match req.method.as_str() {
            "GET" => Method::Get,
            "DELETE" => Method::Delete,
            _ => Method::Post,
        };
        let now = self.aclock(i);
        let reply = self.agent_core(i).handle_pull(method, &req.path, body.as_ref(), req.request_id(), now);
        self.persist(i);
        if reply.kind == MessageKind::SubscribeAck {
            self.arm_step(i);
            if self.agents[i].installed_at.is_none() && reply.status.as_ref().is_some_and(Status::is_ok) {
                self.agents[i].installed_at = Some(self.now);
            }
            self.check_converged(i);
        }
        let mut resp = Response::message(&reply);
        resp.headers.push((REQUEST_ID_HEADER.into(), req.request_id().to_string()));
        self.op(Node::Agent(i), 1, 0);
        let class = self.conns[&conn].class();
        self.send(Node::Agent(i), from, Some(conn), Carrier::HttpResponse, class, resp.to_bytes(true));
    }

    fn agent_stream(&mut self, i: usize, conn: u64, from: Node, bytes: &[u8]) {
        let Node::Manager(m) = from else { return };
        let Ok(frames) = wire::deframe_all(bytes) else { return };
        for f in frames {
            self.op(Node::Agent(i), 0, 1);
            let Ok(msg) = wire::decode_message(&f) else { continue };
            if !msg.is_stream_attach() {
                continue;
            }
            let now = self.aclock(i);
            let ack = self.agent_core(i).handle_subscribe_request(&msg, now);
            if ack.status.as_ref().is_some_and(Status::is_ok) {
                let sub = msg.subscription_id.clone().unwrap_or_default();
                if let Some(ep) = self.match_stream_endpoint(i, &sub, &from.name()) {
                    self.agents[i].attached.insert((sub.clone(), ep.clone()), conn);
                    self.send_stream(i, m, conn, &ack, TrafficClass::Control);
                    let buffered: Vec<ManagementMessage> = self.agents[i]
                        .buffers
                        .get_mut(&(sub, ep))
                        .map(|b| b.drain().collect())
                        .unwrap_or_default();
                    for msg in buffered {
                        self.send_stream(i, m, conn, &msg, TrafficClass::Data);
                    }
                    continue;
                }
            }
            self.send_stream(i, m, conn, &ack, TrafficClass::Control);
        }
    }

    fn match_stream_endpoint(&self, i: usize, sub: &str, peer: &str) -> Option<Endpoint> {
        let a = &self.agents[i];
        a.core.as_ref()?.match_stream_endpoint(sub, peer, |ep| {
            a.attached.get(&(sub.to_string(), ep.clone())).is_some_and(|c| self.conn_open(*c))
        })
    }

    fn check_converged(&mut self, i: usize) {
        let name = Node::Agent(i).name();
        let Some(boot) = self.agents[i].boots.last() else { return };
        if boot.converged_at.is_some() {
            return;
        }
        if self.agent_matches_repository(i, &name) {
            let now = self.now;
            self.agents[i].boots.last_mut().expect("checked").converged_at = Some(now);
        }
    }

    fn agent_matches_repository(&self, i: usize, name: &str) -> bool {
        let Some(core) = self.agents[i].core.as_ref() else { return false };
        let live: Vec<&Subscription> = core.subscriptions().collect();
        let mut want: Vec<&Subscription> =
            self.repository.values().filter(|r| r.agent == name).map(|r| &r.subscription).collect();
        want.sort_by(|a, b| a.id.cmp(&b.id));
        live == want
    }

    // ---- managers ----

    fn arm_tick(&mut self, m: usize) {
        self.managers[m].tick_gen += 1;
        let gen = self.managers[m].tick_gen;
        let interval = self.managers[m].core.interpreter.tick_interval().unwrap_or(FLUSH_INTERVAL_MS).min(FLUSH_INTERVAL_MS);
        let t = self.now + interval;
        if t <= self.s.duration_ms {
            self.at(t, Ev::ManagerTick { manager: m, gen });
        }
    }

    fn manager_tick(&mut self, m: usize, gen: u64) {
        if !self.managers[m].alive || self.managers[m].tick_gen != gen {
            return;
        }
        let now = self.mclock();
        let node = &mut self.managers[m];
        node.core.tick(now, &mut NoopRunner, &mut node.disk);
        self.arm_tick(m);
    }

    fn on_push_payload(&mut self, m: usize, payload: Vec<u8>) {
        self.op(Node::Manager(m), 0, 1);
        let now = self.mclock();
        let node = &mut self.managers[m];
        match wire::decode_message(&payload) {
            Ok(msg) if msg.kind == MessageKind::SubscribeAck => {
                if msg.status.as_ref().is_some_and(Status::is_ok) {
                    self.last_ack = Some(self.now);
                }
            }
            Ok(msg) => {
                node.received.push((self.now, payload));
                node.core.on_push(&msg, now, &mut NoopRunner, &mut node.disk);
            }
            Err(_) => node.core.collector.record_decode_failure(),
        }
    }

    fn manager_http_request(&mut self, m: usize, conn: u64, from: Node, bytes: &[u8]) {
        let Node::Agent(agent) = from else { return };
        let Ok(Some(req)) = http::read_request(&mut &bytes[..]) else { return };
        let (path, _) = req.split_query();
        match path {
            "/push/report" => self.on_push_payload(m, req.body.clone()),
            "/push/resend" => {
                self.op(Node::Manager(m), 0, 1);
                let subs: Vec<Subscription> = self.managers[m]
                    .core
                    .resend_subscriptions(&from.name(), 0, self.mclock())
                    .into_iter()
                    .filter_map(|msg| match msg.body {
                        Body::Subscription(s) => Some(s),
                        _ => None,
                    })
                    .collect();
                self.send_subscribe(m, agent, subs);
            }
            _ => {}
        }
        let resp = Response::text(200, "ok");
        self.op(Node::Manager(m), 1, 0);
        let class = self.conns[&conn].class();
        self.send(Node::Manager(m), from, Some(conn), Carrier::HttpResponse, class, resp.to_bytes(true));
    }

    fn manager_http_response(&mut self, m: usize, conn: u64, from: Node, bytes: &[u8]) {
        let Node::Agent(agent) = from else { return };
        let Ok(resp) = http::read_response(&mut &bytes[..]) else { return };
        self.op(Node::Manager(m), 0, 1);
        let Some(pending) = self.managers[m].pending.get_mut(&conn).and_then(VecDeque::pop_front) else { return };
        let got_rid: u64 = resp.header(REQUEST_ID_HEADER).and_then(|v| v.parse().ok()).unwrap_or(0);
        let msg = resp.decode_message().ok();
        let now = self.mclock();
        match pending {
            Pending::Subscribe => {
                if let Some(ack) = msg.filter(|a| a.status.as_ref().is_some_and(Status::is_ok)) {
                    self.last_ack = Some(self.now);
                    let id = ack.subscription_id.unwrap_or_default();
                    self.subscription_live(agent, &id);
                }
            }
            Pending::Poll { poll_id, cycle, request_id } => {
                if got_rid != request_id {
                    self.managers[m].poll.order_violations += 1;
                }
                let key = (poll_id.clone(), cycle);
                let done = match self.managers[m].cycles.get_mut(&key) {
                    Some(st) => {
                        if let Some(msg) = msg {
                            st.got.push(msg);
                        }
                        st.got.len() == st.expected
                    }
                    None => false,
                };
                if done {
                    let st = self.managers[m].cycles.remove(&key).expect("present");
                    let node = &mut self.managers[m];
                    node.poll.cycles_completed += 1;
                    node.core.on_poll_result(&poll_id, Ok(st.got), now, &mut NoopRunner, &mut node.disk);
                }
            }
            Pending::Sync { agent, request_id } => {
                if got_rid == request_id {
                    if let Some(reply) = msg {
                        self.sync_replies += 1;
                        self.managers[m].core.on_sync_reply(&Node::Agent(agent).name(), &reply, now);
                    }
                }
            }
        }
        let idle = self.managers[m].pending.get(&conn).is_none_or(VecDeque::is_empty);
        if idle && matches!(self.conns[&conn].purpose, Purpose::Control | Purpose::Sync) {
            self.managers[m].pending.remove(&conn);
            self.close_conn(conn);
        }
    }

    /// A subscription is installed on `agent`: every manager it names starts
    /// expecting its data and, for streams, attaches.
    fn subscription_live(&mut self, agent: usize, id: &str) {
        let key = format!("{}/{}", Node::Agent(agent).name(), id);
        let Some(record) = self.repository.get(&key).cloned() else { return };
        let now = self.mclock();
        for ep in &record.subscription.endpoints {
            let Some(m) = self.manager_of(ep) else { continue };
            if !self.managers[m].alive {
                continue;
            }
            self.managers[m].core.add_subscription(record.clone(), now);
            if ep.transport == Transport::Stream {
                self.ensure_stream(m, agent, id);
            }
            self.arm_tick(m);
        }
    }

    fn ensure_stream(&mut self, m: usize, agent: usize, sub: &str) {
        let key = (agent, sub.to_string());
        if self.managers[m].stream_conns.get(&key).is_some_and(|c| self.conn_open(*c)) {
            return;
        }
        let purpose = Purpose::Stream { agent, sub: sub.to_string() };
        match self.open_conn(Node::Manager(m), Node::Agent(agent), purpose) {
            Some(conn) => {
                self.managers[m].stream_conns.insert(key, conn);
                let rid = self.rid(m);
                let attach = ManagementMessage::stream_attach(rid, sub, self.mclock());
                let bytes = wire::frame(&wire::encode_auto(&attach).expect("valid")).expect("fits");
                self.op(Node::Manager(m), 1, 0);
                self.send(Node::Manager(m), Node::Agent(agent), Some(conn), Carrier::Stream, TrafficClass::Control, bytes);
            }
            None => self.schedule_reconnect(m, agent, sub),
        }
    }

    fn schedule_reconnect(&mut self, m: usize, agent: usize, sub: &str) {
        let t = self.now + self.s.reconnect_ms;
        if t <= self.s.duration_ms {
            self.at(t, Ev::Reconnect { manager: m, agent, sub: sub.to_string() });
        }
    }

    fn reconnect(&mut self, m: usize, agent: usize, sub: &str) {
        if self.managers[m].alive {
            self.ensure_stream(m, agent, sub);
        }
    }

    fn manager_stream(&mut self, m: usize, conn: u64, bytes: &[u8]) {
        let Ok(frames) = wire::deframe_all(bytes) else {
            self.managers[m].core.collector.record_decode_failure();
            return;
        };
        for f in frames {
            if let Ok(msg) = wire::decode_message(&f) {
                if msg.kind == MessageKind::SubscribeAck && !msg.status.as_ref().is_some_and(Status::is_ok) {
                    // attach refused: drop the connection and try again later
                    self.op(Node::Manager(m), 0, 1);
                    if let Some(Purpose::Stream { agent, sub }) = self.conns.get(&conn).map(|c| c.purpose.clone()) {
                        self.close_conn(conn);
                        self.managers[m].stream_conns.remove(&(agent, sub.clone()));
                        self.schedule_reconnect(m, agent, &sub);
                    }
                    continue;
                }
            }
            self.on_push_payload(m, f);
        }
    }

    fn poll_cycle(&mut self) {
        if self.now >= self.s.duration_ms {
            return;
        }
        for m in 0..self.s.managers {
            if !self.managers[m].alive {
                continue;
            }
            let defs: Vec<PollingDefinition> = self.managers[m].core.polls().cloned().collect();
            for def in defs {
                self.start_cycle(m, &def);
            }
        }
        let next = self.now + self.s.period_ms;
        if next < self.s.duration_ms {
            self.at(next, Ev::PollCycle);
        }
    }

    fn start_cycle(&mut self, m: usize, def: &PollingDefinition) {
        let Some(agent) = def.agent.strip_prefix("agent-").and_then(|n| n.parse::<usize>().ok()).map(|n| n - 1) else {
            return;
        };
        let cycle = self.now / def.period_ms;
        let reusable = self.managers[m].poll_conns.get(&def.id).copied().filter(|c| {
            self.conns.get(c).is_some_and(|conn| conn.open && self.now - conn.last_used <= self.s.keepalive_ms)
        });
        let conn = match reusable {
            Some(c) => Some(c),
            None => {
                if let Some(stale) = self.managers[m].poll_conns.remove(&def.id) {
                    // the agent has timed the idle connection out
                    self.close_conn(stale);
                    self.managers[m].pending.remove(&stale);
                }
                self.open_conn(Node::Manager(m), Node::Agent(agent), Purpose::Poll)
            }
        };
        let Some(conn) = conn else {
            let now = self.mclock();
            let node = &mut self.managers[m];
            node.poll.cycles_failed += 1;
            node.core.on_poll_result(&def.id, Err("connection refused".into()), now, &mut NoopRunner, &mut node.disk);
            return;
        };
        self.managers[m].poll_conns.insert(def.id.clone(), conn);
        let paths = def.request_paths();
        self.managers[m].cycles.insert((def.id.clone(), cycle), CycleState { expected: paths.len(), got: Vec::new() });
        for path in paths {
            let rid = self.rid(m);
            let pending = Pending::Poll { poll_id: def.id.clone(), cycle, request_id: rid };
            self.send_request(m, agent, conn, Request::new("GET", &path), rid, pending);
        }
    }

    fn sync_round(&mut self) {
        if self.now >= self.s.duration_ms {
            return;
        }
        for m in 0..self.s.managers {
            if !self.managers[m].alive {
                continue;
            }
            for agent in 0..self.s.agents {
                let Some(conn) = self.open_conn(Node::Manager(m), Node::Agent(agent), Purpose::Sync) else { continue };
                let rid = self.rid(m);
                let probe = ManagementMessage::sync_probe(rid, self.mclock());
                self.sync_probes += 1;
                let req = Request::new("POST", "/mgmt/sync").with_message(&probe);
                self.send_request(m, agent, conn, req, rid, Pending::Sync { agent, request_id: rid });
            }
        }
        let next = self.now + self.s.sync_interval_ms;
        if next < self.s.duration_ms {
            self.at(next, Ev::SyncRound);
        }
    }

    // ---- delivery, closure, faults ----

    fn deliver(&mut self, from: Node, to: Node, conn: Option<u64>, carrier: Carrier, bytes: Vec<u8>) {
        let (fname, tname) = (from.name(), to.name());
        if !self.alive(to) || conn.is_some_and(|c| !self.conn_open(c)) {
            self.meter.dropped(&fname, &tname);
            return;
        }
        self.meter.delivered(&fname, &tname);
        if let Some(c) = conn.and_then(|id| self.conns.get_mut(&id)) {
            c.last_used = self.now;
        }
        match (to, carrier) {
            (Node::Agent(i), Carrier::HttpRequest) => self.agent_http(i, conn.expect("http on a connection"), from, &bytes),
            (Node::Agent(i), Carrier::Stream) => self.agent_stream(i, conn.expect("stream connection"), from, &bytes),
            (Node::Agent(i), Carrier::HttpResponse) => {
                if http::read_response(&mut &bytes[..]).is_ok() {
                    self.op(Node::Agent(i), 0, 1);
                }
            }
            (Node::Agent(_), Carrier::Datagram) => {}
            (Node::Manager(m), Carrier::HttpResponse) => {
                self.manager_http_response(m, conn.expect("http on a connection"), from, &bytes)
            }
            (Node::Manager(m), Carrier::HttpRequest) => {
                self.manager_http_request(m, conn.expect("http on a connection"), from, &bytes)
            }
            (Node::Manager(m), Carrier::Stream) => self.manager_stream(m, conn.expect("stream connection"), &bytes),
            (Node::Manager(m), Carrier::Datagram) => self.on_push_payload(m, bytes),
        }
    }

    fn peer_closed(&mut self, conn: u64, node: Node) {
        if !self.alive(node) {
            return;
        }
        match node {
            Node::Agent(i) => {
                self.agents[i].attached.retain(|_, c| *c != conn);
                self.agents[i].push_conns.retain(|_, c| *c != conn);
            }
            Node::Manager(m) => {
                let purpose = self.conns.get(&conn).map(|c| c.purpose.clone());
                if let Some(Purpose::Stream { agent, sub }) = purpose {
                    if self.managers[m].stream_conns.get(&(agent, sub.clone())) == Some(&conn) {
                        self.managers[m].stream_conns.remove(&(agent, sub.clone()));
                        self.schedule_reconnect(m, agent, &sub);
                    }
                }
                let pending = self.managers[m].pending.remove(&conn).unwrap_or_default();
                let failed: BTreeSet<(String, u64)> = pending
                    .into_iter()
                    .filter_map(|p| match p {
                        Pending::Poll { poll_id, cycle, .. } => Some((poll_id, cycle)),
                        _ => None,
                    })
                    .collect();
                let now = self.mclock();
                for key in failed {
                    let node = &mut self.managers[m];
                    if node.cycles.remove(&key).is_some() {
                        node.poll.cycles_failed += 1;
                        node.core.on_poll_result(&key.0, Err("connection lost".into()), now, &mut NoopRunner, &mut node.disk);
                    }
                }
            }
        }
    }

    fn fault(&mut self, index: usize) {
        let f = self.s.faults[index].clone();
        let Some((role, i)) = self.s.node_index(&f.who) else { return };
        match (role, f.action) {
            (Role::Agent, FaultAction::Kill) if self.agents[i].alive => {
                let subs = self.agents[i].core.as_ref().map_or(0, |c| c.subscriptions().count());
                let a = &mut self.agents[i];
                a.alive = false;
                a.core = None;
                a.step_gen += 1;
                a.attached.clear();
                a.buffers.clear();
                a.push_conns.clear();
                a.push_queue.clear();
                a.killed_at = Some(self.now);
                a.subs_at_kill = subs;
                self.kill_connections_of(Node::Agent(i));
            }
            (Role::Agent, FaultAction::Restore) if !self.agents[i].alive => {
                self.agents[i].alive = true;
                self.boot_agent(i);
                let stored: Vec<Subscription> = self.agents[i]
                    .disk
                    .values()
                    .filter_map(|b| wire::decode_message(b).ok())
                    .filter_map(|m| match m.body {
                        Body::Subscription(s) => Some(s),
                        _ => None,
                    })
                    .collect();
                let now = self.aclock(i);
                let recovery = self.agent_core(i).recover_on_boot(Ok(stored), now);
                self.persist(i);
                let boot = Boot {
                    killed_at: self.agents[i].killed_at.take(),
                    restored_at: self.now,
                    subscriptions_before: self.agents[i].subs_at_kill,
                    converged_at: None,
                };
                self.agents[i].boots.push(boot);
                self.check_converged(i);
                self.arm_step(i);
                if let Some(resend) = recovery.resend_request {
                    self.send_resend(i, &resend);
                }
            }
            (Role::Manager, FaultAction::Kill) if self.managers[i].alive => {
                let node = &mut self.managers[i];
                node.alive = false;
                let old = std::mem::replace(&mut node.core, new_manager_core());
                node.archived_events.extend(old.correlator.events().iter().cloned());
                add_stats(&mut node.archived_stats, &old.collector.stats());
                node.pending.clear();
                node.poll_conns.clear();
                node.cycles.clear();
                node.stream_conns.clear();
                node.tick_gen += 1;
                self.kill_connections_of(Node::Manager(i));
            }
            (Role::Manager, FaultAction::Restore) if !self.managers[i].alive => {
                self.managers[i].alive = true;
                let now = self.mclock();
                let name = Node::Manager(i).name();
                for a in 0..self.s.agents {
                    self.managers[i].core.add_device(&Node::Agent(a).name(), now);
                }
                if self.s.model == Model::Pull {
                    let defs: Vec<PollingDefinition> =
                        self.managers[(i + 1) % self.s.managers].core.polls().cloned().collect();
                    self.managers[i].core.set_polls(defs);
                }
                let records: Vec<SubscriptionRecord> = self
                    .repository
                    .values()
                    .filter(|r| r.subscription.endpoints.iter().any(|e| e.host == name))
                    .cloned()
                    .collect();
                for r in records {
                    self.managers[i].core.add_subscription(r.clone(), now);
                    let agent: usize = r.agent.strip_prefix("agent-").and_then(|n| n.parse().ok()).unwrap_or(1) - 1;
                    let streams = r.subscription.endpoints.iter().any(|e| e.host == name && e.transport == Transport::Stream);
                    if streams {
                        self.ensure_stream(i, agent, &r.subscription.id);
                    }
                }
                self.arm_tick(i);
            }
            _ => {}
        }
    }

    fn send_resend(&mut self, i: usize, msg: &ManagementMessage) {
        let Some(m) = (0..self.s.managers).find(|m| self.managers[*m].alive) else { return };
        let Some(conn) = self.open_conn(Node::Agent(i), Node::Manager(m), Purpose::Control) else { return };
        let bytes = Request::new("POST", "/push/resend").with_message(msg).to_bytes(&Node::Manager(m).name());
        self.op(Node::Agent(i), 1, 0);
        self.send(Node::Agent(i), Node::Manager(m), Some(conn), Carrier::HttpRequest, TrafficClass::Control, bytes);
    }

    // ---- results ----

    fn availability(&self, m: usize) -> Availability {
        let p = self.s.period_ms;
        let mut samples = self.managers[m].disk.samples.clone();
        samples.sort_by(|a, b| (&a.device, &a.oid, a.time).cmp(&(&b.device, &b.oid, b.time)));
        let mut received = 0;
        let mut expected = 0;
        for i in 0..self.s.agents {
            // first due instant and number of firings within the run, in virtual time
            let (first, count) = match self.s.model {
                Model::Push => match self.agents[i].installed_at {
                    Some(t) => (t + p, self.s.duration_ms.saturating_sub(t) / p),
                    None => continue,
                },
                Model::Pull => (self.s.latency_down_ms + self.s.latency_up_ms, self.s.duration_ms.div_ceil(p)),
            };
            if count == 0 {
                continue;
            }
            let from = CLOCK_BASE + first - p / 2;
            let spec = ReportSpec {
                devices: vec![Node::Agent(i).name()],
                oids: self.oids.clone(),
                from,
                to: from + count * p,
                resolution_ms: p,
            };
            for series in generate_report(&spec, &samples).series {
                received += series.received;
                expected += series.expected;
            }
        }
        let ratio = if expected == 0 { 0.0 } else { received as f64 / expected as f64 };
        Availability { received_slots: received, expected_slots: expected, ratio }
    }

    fn finish(self) -> SimOutcome {
        let end = self.now.max(self.s.duration_ms);
        let seconds = end.div_ceil(1000) as usize;
        let mut totals = Totals::default();
        for ((from, _), l) in self.meter.links() {
            let d = if from.starts_with("manager-") { &mut totals.manager_to_agent } else { &mut totals.agent_to_manager };
            d.bytes += l.bytes;
            d.messages += l.messages;
            d.sync_bytes += l.sync_bytes;
            d.sync_messages += l.sync_messages;
            d.connections += l.connections;
            d.sync_connections += l.sync_connections;
        }
        let start = self.last_ack.unwrap_or(0);
        let mut steady = SteadyState { start_ms: start, ..Default::default() };
        for t in self.meter.transmissions().iter().filter(|t| t.time > start || (self.last_ack.is_none() && t.time >= start)) {
            match t.direction {
                Direction::ManagerToAgent => {
                    steady.manager_to_agent_messages += 1;
                    if t.class == TrafficClass::Sync {
                        steady.manager_to_agent_sync_messages += 1;
                    } else {
                        steady.manager_to_agent_bytes_excluding_sync += t.bytes;
                    }
                }
                Direction::AgentToManager => steady.agent_to_manager_bytes += t.bytes,
            }
        }
        let series = ByteSeries {
            manager_to_agent_bytes_per_s: self.meter.per_second(Direction::ManagerToAgent, false, seconds),
            agent_to_manager_bytes_per_s: self.meter.per_second(Direction::AgentToManager, false, seconds),
            sync_bytes_per_s: {
                let all_down = self.meter.per_second(Direction::ManagerToAgent, true, seconds);
                let all_up = self.meter.per_second(Direction::AgentToManager, true, seconds);
                let down = self.meter.per_second(Direction::ManagerToAgent, false, seconds);
                let up = self.meter.per_second(Direction::AgentToManager, false, seconds);
                (0..seconds).map(|s| all_down[s] - down[s] + all_up[s] - up[s]).collect()
            },
        };
        let links = self.meter.links().iter().map(|((f, t), l)| (format!("{f}->{t}"), l.clone())).collect();

        // sync messages per (manager, agent, interval)
        let mut per_interval: BTreeMap<(String, String, u64), u64> = BTreeMap::new();
        for t in self.meter.transmissions().iter().filter(|t| t.class == TrafficClass::Sync) {
            let (m, a) = if t.direction == Direction::ManagerToAgent { (&t.from, &t.to) } else { (&t.to, &t.from) };
            *per_interval.entry((m.clone(), a.clone(), t.time / self.s.sync_interval_ms)).or_default() += 1;
        }

        let mut managers = BTreeMap::new();
        let mut events = Vec::new();
        for (m, node) in self.managers.iter().enumerate() {
            let mut stats = node.archived_stats;
            add_stats(&mut stats, &node.core.collector.stats());
            let all_events: Vec<&Event> = node.archived_events.iter().chain(node.core.correlator.events()).collect();
            for e in &all_events {
                events.push(EventLine {
                    manager: Node::Manager(m).name(),
                    time_ms: e.timestamp.saturating_sub(CLOCK_BASE),
                    source: e.source.clone(),
                    kind: e.kind.clone(),
                    severity: e.severity,
                    subject: e.subject.as_ref().map(ToString::to_string),
                    masked: e.masked_by.is_some(),
                });
            }
            managers.insert(
                Node::Manager(m).name(),
                ManagerMetrics {
                    alive_at_end: node.alive,
                    collector: stats,
                    samples_stored: node.disk.samples.iter().filter(|s| !s.pulled).count() as u64,
                    pulled_samples_stored: node.disk.samples.iter().filter(|s| s.pulled).count() as u64,
                    notifications_stored: node.disk.notifications.len() as u64,
                    availability: self.availability(m),
                    poll: node.poll.clone(),
                    events_raised: all_events.len() as u64,
                },
            );
        }
        events.sort_by(|a, b| (a.time_ms, &a.manager).cmp(&(b.time_ms, &b.manager)));

        let clocks = (0..self.s.agents)
            .map(|i| {
                let name = Node::Agent(i).name();
                let est = self
                    .managers
                    .iter()
                    .enumerate()
                    .map(|(m, node)| (Node::Manager(m).name(), node.core.offsets.offset(&name)))
                    .collect();
                (name, ClockMetrics { true_offset_ms: self.agents[i].skew, estimated_offset_ms: est })
            })
            .collect();

        let mut reboots = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            let name = Node::Agent(i).name();
            for (b, boot) in a.boots.iter().enumerate() {
                let until = a.boots.get(b + 1).and_then(|n| n.killed_at).or(a.killed_at).unwrap_or(u64::MAX);
                let manager_messages = self
                    .meter
                    .transmissions()
                    .iter()
                    .filter(|t| {
                        t.to == name
                            && t.direction == Direction::ManagerToAgent
                            && t.class != TrafficClass::Sync
                            && t.time >= boot.restored_at
                            && t.time < until
                    })
                    .count() as u64;
                reboots.push(RebootMetrics {
                    agent: name.clone(),
                    killed_at_ms: boot.killed_at,
                    restored_at_ms: boot.restored_at,
                    storage: match self.s.storage {
                        StorageMode::Durable => "durable".into(),
                        StorageMode::Volatile => "volatile".into(),
                    },
                    subscriptions_before: boot.subscriptions_before,
                    converged_after_ms: boot.converged_at.map(|c| c - boot.restored_at),
                    round_trip_ms: self.s.latency_down_ms + self.s.latency_up_ms,
                    manager_messages_after_restore: manager_messages,
                    subscriptions_match_repository: a.alive && self.agent_matches_repository(i, &name),
                });
            }
        }

        let hot_standby = self.hot_standby();
        let realized = if self.datagrams_sent == 0 { 0.0 } else { self.datagrams_dropped as f64 / self.datagrams_sent as f64 };
        let metrics = Metrics {
            scenario: self.s.clone(),
            end_ms: end,
            totals,
            steady_state: steady,
            series,
            links,
            conservation: self.meter.conserved(),
            operations: self.ops.iter().map(|(r, c)| (r.to_string(), *c)).collect(),
            managers,
            clocks,
            sync: SyncMetrics {
                interval_ms: self.s.sync_interval_ms,
                probes: self.sync_probes,
                replies: self.sync_replies,
                max_messages_per_agent_per_interval: per_interval.values().copied().max().unwrap_or(0),
            },
            loss: LossMetrics {
                configured: self.s.loss,
                datagrams_sent: self.datagrams_sent,
                datagrams_dropped: self.datagrams_dropped,
                realized,
            },
            reboots,
            hot_standby,
            events,
        };
        SimOutcome {
            metrics,
            stored: self.managers.iter().map(|m| m.disk.clone()).collect(),
            received: self.managers.iter().map(|m| m.received.clone()).collect(),
            agent_subscriptions: self
                .agents
                .iter()
                .map(|a| a.core.as_ref().map(|c| c.subscriptions().cloned().collect()).unwrap_or_default())
                .collect(),
            repository: self.repository.values().cloned().collect(),
            installed_at: self.agents.iter().map(|a| a.installed_at).collect(),
        }
    }

    fn hot_standby(&self) -> Option<HotStandbyMetrics> {
        if self.s.managers != 2 || self.s.model != Model::Push {
            return None;
        }
        let kill = self.s.faults.iter().find(|f| {
            f.action == FaultAction::Kill && matches!(self.s.node_index(&f.who), Some((Role::Manager, _)))
        })?;
        let Some((_, p)) = self.s.node_index(&kill.who) else { return None };
        let sb = 1 - p;
        let primary = &self.managers[p];
        let standby = &self.managers[sb];
        let pre_kill: Vec<&Vec<u8>> = primary.received.iter().filter(|(t, _)| *t <= kill.at_ms).map(|(_, b)| b).collect();
        let standby_pre: Vec<&Vec<u8>> = standby.received.iter().filter(|(t, _)| *t <= kill.at_ms).map(|(_, b)| b).collect();
        let key = |s: &mf_core::manager::Sample| (s.device.clone(), s.oid.clone(), s.agent_time, s.value.clone());
        let standby_set: BTreeSet<_> = standby.disk.samples.iter().map(key).collect();
        Some(HotStandbyMetrics {
            primary: Node::Manager(p).name(),
            standby: Node::Manager(sb).name(),
            killed_at_ms: kill.at_ms,
            pre_kill_identical: pre_kill == standby_pre,
            standby_superset: primary.disk.samples.iter().all(|s| standby_set.contains(&key(s))),
            standby_availability: self.availability(sb).ratio,
        })
    }
}

fn add_stats(into: &mut CollectorStats, s: &CollectorStats) {
    into.accepted += s.accepted;
    into.lost += s.lost;
    into.duplicates += s.duplicates;
    into.unknown_subscription += s.unknown_subscription;
    into.decode_failures += s.decode_failures;
    into.restarts += s.restarts;
    into.flushes += s.flushes;
    into.store_failures += s.store_failures;
}

//! Agent-side state: the MIB gateway behind the pull paths, the publish
//! index, the subscription store, the push scheduler and the notification
//! generator. Delivery of what the scheduler produces is left to the caller.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::mib::{MibError, VirtualMib};
use crate::oid::Oid;
use crate::subscription::{Endpoint, Subscription, Transport};
use crate::wire::{Body, ErrorCode, ManagementMessage, MessageKind, Status, VarBind};

/// Reports held for a detached stream endpoint before the oldest are dropped.
pub const STREAM_BUFFER_LIMIT: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StorageMode {
    Durable,
    Volatile,
}

/// Schedule state of one selected variable. The k-th firing is due at
/// `anchor + k * period`, so late steps never accumulate drift.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionCursor {
    pub oid: Oid,
    pub period_ms: u64,
    pub anchor: u64,
    pub fired: u64,
}

impl SelectionCursor {
    pub fn next_due(&self) -> u64 {
        self.anchor + (self.fired + 1) * self.period_ms
    }
}

/// Per-subscription scheduler state: variable cursors and per-endpoint sequence numbers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PushCursor {
    pub subscription_id: String,
    pub selections: Vec<SelectionCursor>,
    pub report_seq: BTreeMap<Endpoint, u64>,
    pub notification_seq: BTreeMap<Endpoint, u64>,
}

impl PushCursor {
    fn next_seq(map: &mut BTreeMap<Endpoint, u64>, ep: &Endpoint) -> u64 {
        let seq = map.entry(ep.clone()).or_insert(0);
        *seq += 1;
        *seq
    }
}

/// One message the agent wants delivered to one endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub endpoint: Endpoint,
    pub message: ManagementMessage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreChange {
    Put(Subscription),
    Delete(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovery {
    pub recovered: usize,
    /// Present when the manager has to resend the definitions.
    pub resend_request: Option<ManagementMessage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubscribeError {
    #[error("{0}")]
    Invalid(String),
    #[error("unknown oid {0}")]
    UnknownOid(Oid),
}

#[derive(Debug)]
pub struct AgentCore {
    device_id: String,
    mib: VirtualMib,
    boot_time: u64,
    storage: StorageMode,
    subscriptions: BTreeMap<String, Subscription>,
    cursors: BTreeMap<String, PushCursor>,
    store_changes: Vec<StoreChange>,
    unknown_notifications: u64,
    local_log: VecDeque<String>,
}

impl AgentCore {
    pub fn new(device_id: &str, mib: VirtualMib, storage: StorageMode, boot_time: u64) -> Self {
        AgentCore {
            device_id: device_id.into(),
            mib,
            boot_time,
            storage,
            subscriptions: BTreeMap::new(),
            cursors: BTreeMap::new(),
            store_changes: Vec::new(),
            unknown_notifications: 0,
            local_log: VecDeque::new(),
        }
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn mib(&self) -> &VirtualMib {
        &self.mib
    }

    pub fn mib_mut(&mut self) -> &mut VirtualMib {
        &mut self.mib
    }

    pub fn storage_mode(&self) -> StorageMode {
        self.storage
    }

    /// Brings the simulated MIB up to `now` (agent clock).
    pub fn advance_clock(&mut self, now: u64) {
        self.mib.advance_to(now.saturating_sub(self.boot_time));
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &Subscription> {
        self.subscriptions.values()
    }

    pub fn subscription(&self, id: &str) -> Option<&Subscription> {
        self.subscriptions.get(id)
    }

    pub fn cursor(&self, id: &str) -> Option<&PushCursor> {
        self.cursors.get(id)
    }

    /// Store mutations since the last call, for the caller to persist.
    pub fn take_store_changes(&mut self) -> Vec<StoreChange> {
        core::mem::take(&mut self.store_changes)
    }

    pub fn unknown_notification_count(&self) -> u64 {
        self.unknown_notifications
    }

    pub fn local_log(&self) -> impl Iterator<Item = &String> {
        self.local_log.iter()
    }

    fn log_locally(&mut self, line: String) {
        if self.local_log.len() == 256 {
            self.local_log.pop_front();
        }
        self.local_log.push_back(line);
    }

    fn publish_index(&self) -> Body {
        Body::Index(self.mib.schemas().to_vec())
    }

    /// The publish phase: every schema, its variables and notifications.
    pub fn serve_publish_index(&self, request_id: u64, now: u64) -> ManagementMessage {
        ManagementMessage::response(request_id, Status::Ok, self.publish_index(), now)
    }

    /// Installs or atomically replaces a subscription. Sequence counters of
    /// endpoints that survive a replacement continue where they were, and
    /// unchanged selections keep their schedule.
    pub fn subscribe(&mut self, mut sub: Subscription, now: u64) -> Result<(), SubscribeError> {
        sub.validate().map_err(SubscribeError::Invalid)?;
        self.advance_clock(now);
        for sel in &sub.selections {
            if self.mib.get(&sel.oid).is_err() {
                return Err(SubscribeError::UnknownOid(sel.oid.clone()));
            }
        }
        if sub.created_at == 0 {
            sub.created_at = now;
        }
        let previous = self.cursors.remove(&sub.id);
        let selections = sub
            .selections
            .iter()
            .map(|sel| {
                previous
                    .as_ref()
                    .and_then(|p| p.selections.iter().find(|c| c.oid == sel.oid && c.period_ms == sel.period_ms))
                    .cloned()
                    .unwrap_or(SelectionCursor { oid: sel.oid.clone(), period_ms: sel.period_ms, anchor: now, fired: 0 })
            })
            .collect();
        let (report_seq, notification_seq) = match previous {
            Some(p) => (p.report_seq, p.notification_seq),
            None => (BTreeMap::new(), BTreeMap::new()),
        };
        self.cursors.insert(
            sub.id.clone(),
            PushCursor { subscription_id: sub.id.clone(), selections, report_seq, notification_seq },
        );
        if self.storage == StorageMode::Durable && sub.durable {
            self.store_changes.push(StoreChange::Put(sub.clone()));
        }
        self.subscriptions.insert(sub.id.clone(), sub);
        Ok(())
    }

    pub fn unsubscribe(&mut self, id: &str) -> bool {
        self.cursors.remove(id);
        let removed = self.subscriptions.remove(id).is_some();
        if removed && self.storage == StorageMode::Durable {
            self.store_changes.push(StoreChange::Delete(id.into()));
        }
        removed
    }

    /// Handles a subscribe-request message: a full document installs the
    /// subscription, an empty one is a stream attach to an existing id.
    pub fn handle_subscribe_request(&mut self, msg: &ManagementMessage, now: u64) -> ManagementMessage {
        let request_id = msg.request_id.unwrap_or(0);
        match &msg.body {
            Body::Subscription(sub) => {
                let status = match self.subscribe(sub.clone(), now) {
                    Ok(()) => Status::Ok,
                    Err(e) => Status::error(ErrorCode::SubscribeRejected, e.to_string()),
                };
                ManagementMessage::subscribe_ack(request_id, &sub.id, status, now)
            }
            _ => {
                let id = msg.subscription_id.clone().unwrap_or_default();
                let status = if self.subscriptions.contains_key(&id) {
                    Status::Ok
                } else {
                    Status::error(ErrorCode::NotFound, format!("no subscription {id}"))
                };
                ManagementMessage::subscribe_ack(request_id, &id, status, now)
            }
        }
    }

    /// Earliest pending firing across all subscriptions.
    pub fn next_due(&self) -> Option<u64> {
        self.cursors.values().flat_map(|c| c.selections.iter().map(SelectionCursor::next_due)).min()
    }

    /// Fires every selection due at or before `now`. Co-due variables of one
    /// subscription are coalesced into a single report per endpoint.
    pub fn scheduler_step(&mut self, now: u64) -> Vec<Outgoing> {
        self.advance_clock(now);
        let mut out = Vec::new();
        for (id, cursor) in self.cursors.iter_mut() {
            let mut due: Vec<Oid> = Vec::new();
            for sel in cursor.selections.iter_mut() {
                if sel.next_due() <= now {
                    sel.fired = (now - sel.anchor) / sel.period_ms;
                    if !due.contains(&sel.oid) {
                        due.push(sel.oid.clone());
                    }
                }
            }
            if due.is_empty() {
                continue;
            }
            let bindings: Vec<VarBind> = due
                .into_iter()
                .map(|oid| match self.mib.get(&oid) {
                    Ok(v) => VarBind::new(oid, v),
                    Err(e) => {
                        let code = ErrorCode::from(&e);
                        VarBind::error(oid, code)
                    }
                })
                .collect();
            let sub = &self.subscriptions[id];
            for ep in &sub.endpoints {
                let seq = PushCursor::next_seq(&mut cursor.report_seq, ep);
                out.push(Outgoing {
                    endpoint: ep.clone(),
                    message: ManagementMessage::push_report(id, seq, &self.device_id, bindings.clone(), now),
                });
            }
        }
        out
    }

    /// Emits a notification to every subscription whose filter names it.
    /// Unknown names are logged locally and nothing is sent.
    pub fn generate_notification(&mut self, name: &str, bindings: Vec<VarBind>, now: u64) -> Vec<Outgoing> {
        let known = self.mib.schemas().iter().any(|s| s.notification(name).is_some());
        if !known {
            self.unknown_notifications += 1;
            self.log_locally(format!("{now}: unknown notification {name}"));
            return Vec::new();
        }
        let mut out = Vec::new();
        for (id, sub) in &self.subscriptions {
            if !sub.notification_filter.contains(name) {
                continue;
            }
            let cursor = self.cursors.get_mut(id).expect("cursor for every subscription");
            for ep in &sub.endpoints {
                let seq = PushCursor::next_seq(&mut cursor.notification_seq, ep);
                out.push(Outgoing {
                    endpoint: ep.clone(),
                    message: ManagementMessage::notification(id, seq, &self.device_id, name, bindings.clone(), now),
                });
            }
        }
        out
    }

    /// Restores subscriptions after a restart. `stored` is what local storage
    /// yielded (`Err` when it could not be read).
    pub fn recover_on_boot(&mut self, stored: Result<Vec<Subscription>, ()>, now: u64) -> Recovery {
        let resend = Some(ManagementMessage::resend_request(&self.device_id, now));
        match (self.storage, stored) {
            (StorageMode::Durable, Ok(subs)) => {
                let mut recovered = 0;
                for sub in subs {
                    let id = sub.id.clone();
                    // fresh cursors; the stored copy is already on disk
                    match self.subscribe(sub, now) {
                        Ok(()) => recovered += 1,
                        Err(e) => self.log_locally(format!("{now}: dropping stored subscription {id}: {e}")),
                    }
                }
                self.store_changes.clear();
                Recovery { recovered, resend_request: None }
            }
            (StorageMode::Durable, Err(())) => {
                self.log_locally(format!("{now}: subscription store unreadable, asking manager"));
                Recovery { recovered: 0, resend_request: resend }
            }
            (StorageMode::Volatile, _) => Recovery { recovered: 0, resend_request: resend },
        }
    }

    /// Stream endpoints of a subscription, for matching attaching connections.
    pub fn stream_endpoints(&self, id: &str) -> Vec<Endpoint> {
        self.subscriptions
            .get(id)
            .map(|s| s.endpoints.iter().filter(|e| e.transport == Transport::Stream).cloned().collect())
            .unwrap_or_default()
    }

    /// Endpoint an attaching stream connection from `peer_host` will serve:
    /// an unattached endpoint naming the peer, else the first unattached
    /// one, else an attached one naming the peer (which it replaces).
    pub fn match_stream_endpoint(
        &self,
        id: &str,
        peer_host: &str,
        attached: impl Fn(&Endpoint) -> bool,
    ) -> Option<Endpoint> {
        let eps = self.stream_endpoints(id);
        eps.iter()
            .find(|e| !attached(e) && e.host == peer_host)
            .or_else(|| eps.iter().find(|e| !attached(e)))
            .or_else(|| eps.iter().find(|e| e.host == peer_host))
            .cloned()
    }

    /// Answers a clock probe. `received` and `sent` are agent-clock times.
    pub fn handle_sync_probe(&self, probe: &ManagementMessage, received: u64, sent: u64) -> ManagementMessage {
        let t1 = probe.sync.map(|s| s.t1).unwrap_or(0);
        ManagementMessage::sync_reply(probe.request_id.unwrap_or(0), t1, received, sent)
    }

    fn mib_response(&self, request_id: u64, now: u64, result: Result<Body, MibError>) -> ManagementMessage {
        match result {
            Ok(body) => ManagementMessage::response(request_id, Status::Ok, body, now),
            Err(e) => ManagementMessage::response(request_id, Status::error(ErrorCode::from(&e), e.to_string()), Body::Empty, now),
        }
    }

    fn bad_request(request_id: u64, now: u64, reason: &str) -> ManagementMessage {
        ManagementMessage::response(request_id, Status::error(ErrorCode::BadRequest, reason), Body::Empty, now)
    }

    /// Executes a request message (get, get-table, set) against the MIB.
    pub fn handle_request(&mut self, msg: &ManagementMessage, now: u64) -> ManagementMessage {
        self.advance_clock(now);
        let rid = msg.request_id.unwrap_or(0);
        match (msg.kind, &msg.body) {
            (MessageKind::GetRequest, Body::Oids(oids)) => {
                let result = oids
                    .iter()
                    .map(|oid| self.mib.get(oid).map(|v| VarBind::new(oid.clone(), v)))
                    .collect::<Result<Vec<_>, _>>()
                    .map(Body::Bindings);
                self.mib_response(rid, now, result)
            }
            (MessageKind::GetTableRequest, Body::Oids(tables)) => {
                let mut rows = Vec::new();
                for t in tables {
                    match self.mib.get_table(t) {
                        Ok(r) => rows.extend(r),
                        Err(e) => return self.mib_response(rid, now, Err(e)),
                    }
                }
                ManagementMessage::response(rid, Status::Ok, Body::Rows(rows), now)
            }
            (MessageKind::SetRequest, Body::Bindings(bindings)) => self.apply_sets(rid, bindings, now),
            (MessageKind::SyncProbe, _) => self.handle_sync_probe(msg, now, now),
            (MessageKind::SubscribeRequest, _) => self.handle_subscribe_request(msg, now),
            _ => Self::bad_request(rid, now, "unsupported request kind"),
        }
    }

    /// All-or-nothing: every binding is checked before any is written.
    fn apply_sets(&mut self, rid: u64, bindings: &[VarBind], now: u64) -> ManagementMessage {
        let mut trial = self.mib.clone();
        let mut previous = Vec::new();
        for vb in bindings {
            let Some(value) = vb.mib_value() else {
                return Self::bad_request(rid, now, "set binding carries no value");
            };
            match trial.set(&vb.oid, value.clone()) {
                Ok(old) => previous.push(VarBind::new(vb.oid.clone(), old)),
                Err(e) => return self.mib_response(rid, now, Err(e)),
            }
        }
        for vb in bindings {
            let value = vb.mib_value().cloned().expect("checked above");
            self.mib.set(&vb.oid, value).expect("validated on trial copy");
        }
        ManagementMessage::response(rid, Status::Ok, Body::Bindings(previous), now)
    }

    /// Maps a URL-addressed pull request onto MIB operations.
    ///
    /// | path | method | operation |
    /// |---|---|---|
    /// | `/mgmt/mibs` | GET | publish index |
    /// | `/mgmt/mib/<oid>` | GET | get |
    /// | `/mgmt/mib/<oid>` | POST | set (body: set-request) |
    /// | `/mgmt/next/<oid>` | GET | get-next |
    /// | `/mgmt/table/<oid>` | GET | get-table |
    /// | `/mgmt/request` | POST | any request message |
    /// | `/mgmt/subscriptions` | POST | subscribe (returns subscribe-ack) |
    /// | `/mgmt/subscriptions/<id>` | DELETE | unsubscribe |
    /// | `/mgmt/sync` | POST | clock probe (returns sync-reply) |
    pub fn handle_pull(
        &mut self,
        method: Method,
        path: &str,
        body: Option<&ManagementMessage>,
        request_id: u64,
        now: u64,
    ) -> ManagementMessage {
        self.advance_clock(now);
        let path = path.split('?').next().unwrap_or(path);
        let Some(rest) = path.strip_prefix("/mgmt/") else {
            return ManagementMessage::response(request_id, Status::error(ErrorCode::NotFound, path), Body::Empty, now);
        };
        let (head, tail) = rest.split_once('/').unwrap_or((rest, ""));
        let oid = || Oid::parse(tail);
        match (method, head) {
            (Method::Get, "mibs" | "mibs.html") if tail.is_empty() => self.serve_publish_index(request_id, now),
            (Method::Get, "mib") => match oid() {
                Ok(oid) => {
                    let r = self.mib.get(&oid).map(|v| Body::Bindings(vec![VarBind::new(oid, v)]));
                    self.mib_response(request_id, now, r)
                }
                Err(e) => Self::bad_request(request_id, now, &e.to_string()),
            },
            (Method::Get, "next") => match oid() {
                Ok(oid) => {
                    let r = self.mib.get_next(&oid).map(|(o, v)| Body::Bindings(vec![VarBind::new(o, v)]));
                    self.mib_response(request_id, now, r)
                }
                Err(e) => Self::bad_request(request_id, now, &e.to_string()),
            },
            (Method::Get, "table") => match oid() {
                Ok(oid) => {
                    let r = self.mib.get_table(&oid).map(Body::Rows);
                    self.mib_response(request_id, now, r)
                }
                Err(e) => Self::bad_request(request_id, now, &e.to_string()),
            },
            (Method::Post, "mib") => {
                let Ok(oid) = oid() else {
                    return Self::bad_request(request_id, now, "bad oid in path");
                };
                let Some(msg) = body else {
                    return Self::bad_request(request_id, now, "set needs a binding body");
                };
                let bindings = msg.body.bindings();
                if bindings.len() != 1 || bindings[0].oid != oid {
                    return Self::bad_request(request_id, now, "body must carry exactly the addressed binding");
                }
                self.apply_sets(request_id, bindings, now)
            }
            (Method::Post, "request") => match body {
                Some(msg) => self.handle_request(msg, now),
                None => Self::bad_request(request_id, now, "missing request body"),
            },
            (Method::Post, "subscriptions") if tail.is_empty() => match body {
                Some(msg) if msg.kind == MessageKind::SubscribeRequest => self.handle_subscribe_request(msg, now),
                _ => Self::bad_request(request_id, now, "expected subscribe-request"),
            },
            (Method::Delete, "subscriptions") if !tail.is_empty() => {
                let id = crate::pct::decode_str(tail).unwrap_or_else(|_| tail.to_string());
                if self.unsubscribe(&id) {
                    ManagementMessage::response(request_id, Status::Ok, Body::Empty, now)
                } else {
                    ManagementMessage::response(request_id, Status::error(ErrorCode::NotFound, id), Body::Empty, now)
                }
            }
            (Method::Post, "sync") => match body {
                Some(msg) if msg.kind == MessageKind::SyncProbe => self.handle_sync_probe(msg, now, now),
                _ => Self::bad_request(request_id, now, "expected sync-probe"),
            },
            _ => ManagementMessage::response(request_id, Status::error(ErrorCode::NotFound, path), Body::Empty, now),
        }
    }

    /// Names of every notification the agent's schemas declare.
    pub fn notification_names(&self) -> BTreeSet<String> {
        self.mib.schemas().iter().flat_map(|s| s.notifications.iter().map(|n| n.name.clone())).collect()
    }
}

/// Bounded FIFO for reports whose stream endpoint is not attached. Beyond
/// the limit the oldest report is dropped.
#[derive(Debug, Clone)]
pub struct ReportBuffer {
    limit: usize,
    queue: VecDeque<ManagementMessage>,
    dropped: u64,
}

impl Default for ReportBuffer {
    fn default() -> Self {
        Self::with_limit(STREAM_BUFFER_LIMIT)
    }
}

impl ReportBuffer {
    pub fn with_limit(limit: usize) -> Self {
        ReportBuffer { limit, queue: VecDeque::new(), dropped: 0 }
    }

    pub fn push(&mut self, msg: ManagementMessage) {
        if self.queue.len() == self.limit {
            self.queue.pop_front();
            self.dropped += 1;
        }
        self.queue.push_back(msg);
    }

    pub fn drain(&mut self) -> impl Iterator<Item = ManagementMessage> + '_ {
        self.queue.drain(..)
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

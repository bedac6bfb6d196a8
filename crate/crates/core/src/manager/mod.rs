//! Manager-side state: collector, interpreter, correlator, map registry,
//! polling health, report generation and the subscription resend service.

mod collector;
mod correlator;
mod event;
mod interpreter;
mod map;
mod polling;
mod report;

pub use collector::*;
pub use correlator::*;
pub use event::*;
pub use interpreter::*;
pub use map::*;
pub use polling::*;
pub use report::*;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::subscription::Subscription;
use crate::timesync::{OffsetTable, SyncSample};
use crate::wire::{Body, ManagementMessage, MessageKind};

/// A subscription as the manager stores it: which agent it was sent to.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubscriptionRecord {
    pub agent: String,
    pub subscription: Subscription,
}

/// Storage for everything the manager appends.
pub trait RecordSink: SampleSink {
    fn store_invocations(&mut self, records: &[Invocation]) -> Result<(), String>;
}

impl RecordSink for MemorySink {
    fn store_invocations(&mut self, _: &[Invocation]) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManagerSettings {
    pub miss_factor_milli: u64,
    pub mask_window_ms: u64,
    /// Severity of `notification:<name>` events; names not listed get 2.
    pub notification_severity: BTreeMap<String, Severity>,
}

impl Default for ManagerSettings {
    fn default() -> Self {
        ManagerSettings {
            miss_factor_milli: DEFAULT_MISS_FACTOR_MILLI,
            mask_window_ms: DEFAULT_MASK_WINDOW_MS,
            notification_severity: BTreeMap::new(),
        }
    }
}

#[derive(Debug)]
pub struct ManagerCore {
    settings: ManagerSettings,
    pub offsets: OffsetTable,
    pub collector: Collector,
    pub interpreter: Interpreter,
    pub correlator: Correlator,
    pub registry: MapRegistry,
    subscriptions: BTreeMap<String, SubscriptionRecord>,
    polls: BTreeMap<String, (PollingDefinition, PollHealth)>,
}

impl Default for ManagerCore {
    fn default() -> Self {
        Self::new(ManagerSettings::default())
    }
}

impl ManagerCore {
    pub fn new(settings: ManagerSettings) -> Self {
        ManagerCore {
            offsets: OffsetTable::new(),
            collector: Collector::new(),
            interpreter: Interpreter::new(settings.miss_factor_milli),
            correlator: Correlator::new(settings.mask_window_ms),
            registry: MapRegistry::new(),
            subscriptions: BTreeMap::new(),
            polls: BTreeMap::new(),
            settings,
        }
    }

    pub fn settings(&self) -> &ManagerSettings {
        &self.settings
    }

    /// Makes a topology device visible on the map before any event.
    pub fn add_device(&mut self, device: &str, now: u64) {
        self.correlator.map_mut().add_device(device, now);
    }

    pub fn register_map_client(&mut self, client: Box<dyn MapClient + Send>) -> Option<u64> {
        self.registry.register(client, self.correlator.map())
    }

    /// Tracks a subscription the agent acknowledged: its reports become
    /// known to the collector and every selection is heartbeat-supervised.
    pub fn add_subscription(&mut self, record: SubscriptionRecord, now: u64) {
        if let Some(old) = self.subscriptions.get(&record.subscription.id).cloned() {
            for sel in &old.subscription.selections {
                if !record.subscription.selections.iter().any(|s| s.oid == sel.oid) {
                    self.interpreter.unwatch(&old.agent, &sel.oid);
                }
            }
        }
        self.collector.know(&record.subscription.id, &record.agent);
        self.add_device(&record.agent, now);
        for sel in &record.subscription.selections {
            self.interpreter.watch(&record.agent, &sel.oid, sel.period_ms, now);
        }
        self.subscriptions.insert(record.subscription.id.clone(), record);
    }

    pub fn remove_subscription(&mut self, id: &str) -> Option<SubscriptionRecord> {
        let record = self.subscriptions.remove(id)?;
        self.collector.forget(id);
        for sel in &record.subscription.selections {
            let still_used = self
                .subscriptions
                .values()
                .any(|r| r.agent == record.agent && r.subscription.selections.iter().any(|s| s.oid == sel.oid));
            if !still_used {
                self.interpreter.unwatch(&record.agent, &sel.oid);
            }
        }
        Some(record)
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &SubscriptionRecord> {
        self.subscriptions.values()
    }

    /// Subscribe-requests re-sending every known subscription of `agent`.
    pub fn resend_subscriptions(&self, agent: &str, first_request_id: u64, now: u64) -> Vec<ManagementMessage> {
        resend_subscriptions(self.subscriptions.values(), agent, first_request_id, now)
    }

    pub fn set_polls(&mut self, defs: Vec<PollingDefinition>) {
        let mut old = core::mem::take(&mut self.polls);
        for def in defs {
            let health = old.remove(&def.id).map(|(_, h)| h).unwrap_or_default();
            self.add_device(&def.agent, 0);
            self.polls.insert(def.id.clone(), (def, health));
        }
    }

    pub fn polls(&self) -> impl Iterator<Item = &PollingDefinition> {
        self.polls.values().map(|(d, _)| d)
    }

    pub fn poll_health(&self, id: &str) -> Option<&PollHealth> {
        self.polls.get(id).map(|(_, h)| h)
    }

    /// Runs an event through the correlator, persists invocations and
    /// broadcasts the event and any map changes.
    pub fn raise(&mut self, event: Event, runner: &mut dyn ActionRunner, sink: &mut dyn RecordSink) -> CorrelateOutcome {
        let outcome = self.correlator.correlate(event, runner);
        if !outcome.new_invocations.is_empty() {
            // a failing store must not stop correlation
            let _ = sink.store_invocations(&outcome.new_invocations);
        }
        self.registry.broadcast(&FeedItem::Event { event: outcome.event.clone() });
        for status in &outcome.map_changes {
            self.registry.broadcast(&FeedItem::Delta { status: status.clone() });
        }
        outcome
    }

    fn raise_all(&mut self, events: Vec<Event>, runner: &mut dyn ActionRunner, sink: &mut dyn RecordSink) {
        for e in events {
            self.raise(e, runner, sink);
        }
    }

    /// Ingress for push-reports and notifications arriving at `arrival`.
    pub fn on_push(
        &mut self,
        msg: &ManagementMessage,
        arrival: u64,
        runner: &mut dyn ActionRunner,
        sink: &mut dyn RecordSink,
    ) -> Collected {
        let collected = self.collector.collect(msg, arrival, &self.offsets, sink);
        if let Collected::Accepted { device, samples, notification, restarted, .. } = &collected {
            let mut events = Vec::new();
            if *restarted {
                events.push(Event::new(device, AGENT_REBOOTED, 2, arrival));
            }
            for s in samples {
                events.extend(self.interpreter.on_sample(device, &s.oid, &s.value, arrival));
            }
            if let Some(n) = notification {
                let sev = self.settings.notification_severity.get(&n.name).copied().unwrap_or(2);
                events.push(
                    Event::new(device, &format!("{NOTIFICATION_PREFIX}{}", n.name), sev, arrival)
                        .with_payload(n.payload.clone()),
                );
            }
            self.raise_all(events, runner, sink);
        }
        collected
    }

    /// Records a completed clock probe; `t4` is the manager receive time.
    pub fn on_sync_reply(&mut self, agent: &str, reply: &ManagementMessage, t4: u64) -> Option<SyncSample> {
        if reply.kind != MessageKind::SyncReply {
            return None;
        }
        let s = reply.sync?;
        let sample = SyncSample::from_timestamps(s.t1, s.t2?, s.t3?, t4);
        self.offsets.record(agent, sample).then_some(sample)
    }

    /// Periodic work: heartbeat checks and the collector's flush timer.
    pub fn tick(&mut self, now: u64, runner: &mut dyn ActionRunner, sink: &mut dyn RecordSink) {
        let events = self.interpreter.tick(now);
        self.raise_all(events, runner, sink);
        self.collector.tick(now, sink);
    }

    /// Outcome of one polling cycle: the responses in request order, or the
    /// reason the cycle failed.
    pub fn on_poll_result(
        &mut self,
        poll_id: &str,
        result: Result<Vec<ManagementMessage>, String>,
        now: u64,
        runner: &mut dyn ActionRunner,
        sink: &mut dyn RecordSink,
    ) {
        let Some((def, health)) = self.polls.get_mut(poll_id) else { return };
        let agent = def.agent.clone();
        let mut events = Vec::new();
        match result {
            Ok(responses) => {
                events.extend(health.on_success(&agent, now));
                for resp in &responses {
                    let rows: &[_] = match &resp.body {
                        Body::Rows(r) => r,
                        _ => &[],
                    };
                    let samples = self.collector.ingest_pulled(&agent, resp.body.bindings(), rows, now, sink);
                    for s in samples {
                        events.extend(self.interpreter.on_sample(&agent, &s.oid, &s.value, now));
                    }
                }
            }
            Err(_) => events.push(health.on_failure(&agent, now)),
        }
        self.raise_all(events, runner, sink);
    }
}

/// Subscribe-requests for every stored subscription of `agent`, in id order.
pub fn resend_subscriptions<'a>(
    records: impl IntoIterator<Item = &'a SubscriptionRecord>,
    agent: &str,
    first_request_id: u64,
    now: u64,
) -> Vec<ManagementMessage> {
    let mut subs: Vec<&Subscription> =
        records.into_iter().filter(|r| r.agent == agent).map(|r| &r.subscription).collect();
    subs.sort_by(|a, b| a.id.cmp(&b.id));
    subs.into_iter()
        .enumerate()
        .map(|(i, s)| ManagementMessage::subscribe_request(first_request_id + i as u64, s.clone(), now))
        .collect()
}

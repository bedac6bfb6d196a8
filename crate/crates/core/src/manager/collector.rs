//! Pushed data collector: sequence accounting, clock correction and
//! buffered hand-off to storage.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::mib::{MibValue, TableRow};
use crate::oid::Oid;
use crate::timesync::OffsetTable;
use crate::wire::{ManagementMessage, MessageKind, VarBind};

/// Buffered records that trigger a flush.
pub const FLUSH_RECORDS: usize = 100;
/// Longest time a record waits in the buffer.
pub const FLUSH_INTERVAL_MS: u64 = 1_000;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sample {
    pub device: String,
    pub oid: Oid,
    /// Manager-clock time (corrected when an offset is known).
    pub time: u64,
    /// Timestamp as sent by the agent.
    pub agent_time: u64,
    pub value: MibValue,
    /// False when no clock offset was known and `time` is the raw agent time.
    pub corrected: bool,
    /// Retrieved by polling rather than pushed.
    #[cfg_attr(feature = "serde", serde(default))]
    pub pulled: bool,
    #[cfg_attr(feature = "serde", serde(default))]
    pub subscription: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NotificationRecord {
    pub device: String,
    pub name: String,
    pub time: u64,
    pub agent_time: u64,
    pub corrected: bool,
    pub subscription: String,
    pub seq: u64,
    pub payload: Vec<(Oid, MibValue)>,
}

/// Destination of collected records; each call is one bulk append.
pub trait SampleSink {
    fn store_samples(&mut self, samples: &[Sample]) -> Result<(), String>;
    fn store_notifications(&mut self, records: &[NotificationRecord]) -> Result<(), String>;
}

/// Sink that keeps everything in memory and counts calls.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub samples: Vec<Sample>,
    pub notifications: Vec<NotificationRecord>,
    pub calls: usize,
}

impl SampleSink for MemorySink {
    fn store_samples(&mut self, samples: &[Sample]) -> Result<(), String> {
        self.calls += 1;
        self.samples.extend_from_slice(samples);
        Ok(())
    }

    fn store_notifications(&mut self, records: &[NotificationRecord]) -> Result<(), String> {
        self.calls += 1;
        self.notifications.extend_from_slice(records);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CollectorStats {
    pub accepted: u64,
    pub lost: u64,
    pub duplicates: u64,
    pub unknown_subscription: u64,
    pub decode_failures: u64,
    pub restarts: u64,
    pub flushes: u64,
    pub store_failures: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Channel {
    Report,
    Notification,
}

#[derive(Debug, Clone, Copy)]
struct SeqState {
    last_seq: u64,
    last_timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Collected {
    Accepted {
        device: String,
        samples: Vec<Sample>,
        notification: Option<NotificationRecord>,
        /// Sequence numbers skipped since the previous message.
        gap: u64,
        /// The sequence restarted with a newer timestamp: the agent rebooted.
        restarted: bool,
    },
    Duplicate,
    UnknownSubscription,
    NotPush,
}

#[derive(Debug, Default)]
pub struct Collector {
    known: BTreeMap<String, String>,
    streams: BTreeMap<(String, Channel), SeqState>,
    stats: CollectorStats,
    samples: Vec<Sample>,
    notifications: Vec<NotificationRecord>,
    oldest_buffered: Option<u64>,
}

fn values_of(bindings: &[VarBind]) -> impl Iterator<Item = (Oid, MibValue)> + '_ {
    bindings.iter().filter_map(|b| b.mib_value().map(|v| (b.oid.clone(), v.clone())))
}

impl Collector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a subscription id and the device it belongs to.
    pub fn know(&mut self, subscription: &str, device: &str) {
        self.known.insert(subscription.into(), device.into());
    }

    pub fn forget(&mut self, subscription: &str) {
        self.known.remove(subscription);
        self.streams.retain(|(id, _), _| id != subscription);
    }

    pub fn is_known(&self, subscription: &str) -> bool {
        self.known.contains_key(subscription)
    }

    pub fn stats(&self) -> CollectorStats {
        self.stats
    }

    pub fn record_decode_failure(&mut self) {
        self.stats.decode_failures += 1;
    }

    pub fn buffered(&self) -> usize {
        self.samples.len() + self.notifications.len()
    }

    /// Accepts a push-report or notification that arrived at `arrival`
    /// (manager clock).
    pub fn collect(
        &mut self,
        msg: &ManagementMessage,
        arrival: u64,
        offsets: &OffsetTable,
        sink: &mut dyn SampleSink,
    ) -> Collected {
        let channel = match msg.kind {
            MessageKind::PushReport => Channel::Report,
            MessageKind::Notification => Channel::Notification,
            _ => return Collected::NotPush,
        };
        let Some(sub) = msg.subscription_id.as_deref() else {
            return Collected::NotPush;
        };
        let Some(known_device) = self.known.get(sub) else {
            self.stats.unknown_subscription += 1;
            return Collected::UnknownSubscription;
        };
        let device = msg.device.clone().unwrap_or_else(|| known_device.clone());
        let seq = msg.seq.unwrap_or(0);

        let state = self
            .streams
            .entry((sub.into(), channel))
            .or_insert(SeqState { last_seq: 0, last_timestamp: 0 });
        let mut restarted = false;
        let mut gap = 0;
        if seq <= state.last_seq {
            if msg.timestamp > state.last_timestamp {
                restarted = true;
                self.stats.restarts += 1;
            } else {
                self.stats.duplicates += 1;
                return Collected::Duplicate;
            }
        } else {
            gap = seq - state.last_seq - 1;
        }
        state.last_seq = seq;
        state.last_timestamp = msg.timestamp;
        self.stats.lost += gap;
        self.stats.accepted += 1;

        let (time, corrected) = offsets.correct(&device, msg.timestamp);
        let mut samples = Vec::new();
        let mut notification = None;
        match channel {
            Channel::Report => {
                samples = values_of(msg.body.bindings())
                    .map(|(oid, value)| Sample {
                        device: device.clone(),
                        oid,
                        time,
                        agent_time: msg.timestamp,
                        value,
                        corrected,
                        pulled: false,
                        subscription: sub.into(),
                        seq,
                    })
                    .collect();
                self.samples.extend(samples.iter().cloned());
            }
            Channel::Notification => {
                let record = NotificationRecord {
                    device: device.clone(),
                    name: msg.notification.clone().unwrap_or_default(),
                    time,
                    agent_time: msg.timestamp,
                    corrected,
                    subscription: sub.into(),
                    seq,
                    payload: values_of(msg.body.bindings()).collect(),
                };
                self.notifications.push(record.clone());
                notification = Some(record);
            }
        }
        self.after_buffering(arrival, sink);
        Collected::Accepted { device, samples, notification, gap, restarted }
    }

    /// Buffers polled values. Pull timestamps are manager-clock already.
    pub fn ingest_pulled(
        &mut self,
        device: &str,
        bindings: &[VarBind],
        rows: &[TableRow],
        time: u64,
        sink: &mut dyn SampleSink,
    ) -> Vec<Sample> {
        let cells = values_of(bindings).chain(rows.iter().flat_map(|r| r.columns.iter().cloned()));
        let samples: Vec<Sample> = cells
            .map(|(oid, value)| Sample {
                device: device.into(),
                oid,
                time,
                agent_time: time,
                value,
                corrected: true,
                pulled: true,
                subscription: String::new(),
                seq: 0,
            })
            .collect();
        self.samples.extend(samples.iter().cloned());
        self.after_buffering(time, sink);
        samples
    }

    fn after_buffering(&mut self, now: u64, sink: &mut dyn SampleSink) {
        if self.oldest_buffered.is_none() && self.buffered() > 0 {
            self.oldest_buffered = Some(now);
        }
        if self.buffered() >= FLUSH_RECORDS {
            self.flush(sink);
        }
    }

    /// Time-based flush; call periodically.
    pub fn tick(&mut self, now: u64, sink: &mut dyn SampleSink) {
        if let Some(oldest) = self.oldest_buffered {
            if now.saturating_sub(oldest) >= FLUSH_INTERVAL_MS {
                self.flush(sink);
            }
        }
    }

    /// Time at which `tick` will next flush, if anything is buffered.
    pub fn flush_due(&self) -> Option<u64> {
        self.oldest_buffered.map(|t| t + FLUSH_INTERVAL_MS)
    }

    pub fn flush(&mut self, sink: &mut dyn SampleSink) {
        if !self.samples.is_empty() {
            self.stats.flushes += 1;
            if sink.store_samples(&self.samples).is_err() {
                self.stats.store_failures += 1;
            }
            self.samples.clear();
        }
        if !self.notifications.is_empty() {
            self.stats.flushes += 1;
            if sink.store_notifications(&self.notifications).is_err() {
                self.stats.store_failures += 1;
            }
            self.notifications.clear();
        }
        self.oldest_buffered = None;
    }
}

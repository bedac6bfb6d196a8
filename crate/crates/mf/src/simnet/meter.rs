//! Per-link traffic accounting. Every message handed to a link is `sent`,
//! and later exactly one of `delivered` or `dropped`.

use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrafficClass {
    /// Subscription set-up, stream attach, resend.
    Control,
    /// Reports, notifications, poll requests and responses.
    Data,
    /// Clock probes and replies.
    Sync,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    ManagerToAgent,
    AgentToManager,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LinkCounters {
    pub bytes: u64,
    pub messages: u64,
    pub connections: u64,
    pub sync_bytes: u64,
    pub sync_messages: u64,
    pub sync_connections: u64,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmission {
    pub time: u64,
    pub from: String,
    pub to: String,
    pub direction: Direction,
    pub class: TrafficClass,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default)]
pub struct TrafficMeter {
    links: BTreeMap<(String, String), LinkCounters>,
    log: Vec<Transmission>,
}

impl TrafficMeter {
    pub fn new() -> Self {
        Self::default()
    }

    fn link(&mut self, from: &str, to: &str) -> &mut LinkCounters {
        self.links.entry((from.to_string(), to.to_string())).or_default()
    }

    pub fn connection_opened(&mut self, from: &str, to: &str, class: TrafficClass) {
        let l = self.link(from, to);
        match class {
            TrafficClass::Sync => l.sync_connections += 1,
            _ => l.connections += 1,
        }
    }

    pub fn sent(&mut self, time: u64, from: &str, to: &str, direction: Direction, class: TrafficClass, bytes: usize) {
        let bytes = bytes as u64;
        let l = self.link(from, to);
        l.sent += 1;
        l.bytes += bytes;
        l.messages += 1;
        if class == TrafficClass::Sync {
            l.sync_bytes += bytes;
            l.sync_messages += 1;
        }
        self.log.push(Transmission { time, from: from.into(), to: to.into(), direction, class, bytes });
    }

    pub fn delivered(&mut self, from: &str, to: &str) {
        self.link(from, to).delivered += 1;
    }

    pub fn dropped(&mut self, from: &str, to: &str) {
        self.link(from, to).dropped += 1;
    }

    pub fn links(&self) -> &BTreeMap<(String, String), LinkCounters> {
        &self.links
    }

    pub fn transmissions(&self) -> &[Transmission] {
        &self.log
    }

    /// `delivered + dropped == sent` on every link.
    pub fn conserved(&self) -> bool {
        self.links.values().all(|l| l.delivered + l.dropped == l.sent)
    }

    pub fn totals(&self, direction: Direction, include_sync: bool) -> (u64, u64) {
        self.log
            .iter()
            .filter(|t| t.direction == direction && (include_sync || t.class != TrafficClass::Sync))
            .fold((0, 0), |(b, m), t| (b + t.bytes, m + 1))
    }

    /// Bytes per whole second of virtual time, `[0, seconds)`.
    pub fn per_second(&self, direction: Direction, include_sync: bool, seconds: usize) -> Vec<u64> {
        let mut series = vec![0; seconds];
        for t in &self.log {
            if t.direction != direction || (!include_sync && t.class == TrafficClass::Sync) {
                continue;
            }
            if let Some(slot) = series.get_mut((t.time / 1000) as usize) {
                *slot += t.bytes;
            }
        }
        series
    }
}

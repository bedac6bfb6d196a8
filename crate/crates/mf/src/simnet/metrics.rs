//! The metrics document written by `simulate`. Field order is fixed by the
//! struct layout and every map is a `BTreeMap`, so equal runs serialize to
//! equal bytes.

use std::collections::BTreeMap;

use mf_core::manager::CollectorStats;
use serde::Serialize;

use super::meter::LinkCounters;
use super::scenario::Scenario;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DirectionTotals {
    pub bytes: u64,
    pub messages: u64,
    pub sync_bytes: u64,
    pub sync_messages: u64,
    pub connections: u64,
    pub sync_connections: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub manager_to_agent: DirectionTotals,
    pub agent_to_manager: DirectionTotals,
}

/// Traffic after the last subscribe-ack reached a manager (from 0 when
/// nothing was subscribed).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SteadyState {
    pub start_ms: u64,
    pub manager_to_agent_bytes_excluding_sync: u64,
    pub manager_to_agent_messages: u64,
    pub manager_to_agent_sync_messages: u64,
    pub agent_to_manager_bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ByteSeries {
    /// Excluding clock-sync traffic.
    pub manager_to_agent_bytes_per_s: Vec<u64>,
    pub agent_to_manager_bytes_per_s: Vec<u64>,
    pub sync_bytes_per_s: Vec<u64>,
}

/// Messages marshalled and parsed, the portable stand-in for CPU burden.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    pub marshalled: u64,
    pub parsed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Availability {
    pub received_slots: u64,
    pub expected_slots: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PollMetrics {
    pub cycles_completed: u64,
    pub cycles_failed: u64,
    pub order_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManagerMetrics {
    pub alive_at_end: bool,
    pub collector: CollectorStats,
    pub samples_stored: u64,
    pub pulled_samples_stored: u64,
    pub notifications_stored: u64,
    pub availability: Availability,
    pub poll: PollMetrics,
    pub events_raised: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClockMetrics {
    pub true_offset_ms: i64,
    pub estimated_offset_ms: BTreeMap<String, Option<i64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SyncMetrics {
    pub interval_ms: u64,
    pub probes: u64,
    pub replies: u64,
    /// Largest count of sync messages (both directions) exchanged between one
    /// manager and one agent within one interval.
    pub max_messages_per_agent_per_interval: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LossMetrics {
    pub configured: f64,
    pub datagrams_sent: u64,
    pub datagrams_dropped: u64,
    pub realized: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RebootMetrics {
    pub agent: String,
    pub killed_at_ms: Option<u64>,
    pub restored_at_ms: u64,
    pub storage: String,
    pub subscriptions_before: usize,
    pub converged_after_ms: Option<u64>,
    pub round_trip_ms: u64,
    /// Manager to agent messages (clock sync excluded) from restore to the next kill or the end.
    pub manager_messages_after_restore: u64,
    pub subscriptions_match_repository: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HotStandbyMetrics {
    pub primary: String,
    pub standby: String,
    pub killed_at_ms: u64,
    /// Report payloads the standby received up to the kill equal, byte for byte and in order, those the primary received.
    pub pre_kill_identical: bool,
    /// Every sample the primary stored is also stored by the standby.
    pub standby_superset: bool,
    pub standby_availability: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventLine {
    pub manager: String,
    pub time_ms: u64,
    pub source: String,
    pub kind: String,
    pub severity: u8,
    pub subject: Option<String>,
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub scenario: Scenario,
    pub end_ms: u64,
    pub totals: Totals,
    pub steady_state: SteadyState,
    pub series: ByteSeries,
    pub links: BTreeMap<String, LinkCounters>,
    pub conservation: bool,
    pub operations: BTreeMap<String, OpCounts>,
    pub managers: BTreeMap<String, ManagerMetrics>,
    pub clocks: BTreeMap<String, ClockMetrics>,
    pub sync: SyncMetrics,
    pub loss: LossMetrics,
    pub reboots: Vec<RebootMetrics>,
    pub hot_standby: Option<HotStandbyMetrics>,
    pub events: Vec<EventLine>,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

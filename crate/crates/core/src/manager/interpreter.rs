//! Turns incoming samples (pushed or polled) into events: heartbeat
//! supervision and threshold rules.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::event::*;
use crate::mib::MibValue;
use crate::oid::Oid;

/// Silence longer than this many periods (in thousandths) is an outage.
pub const DEFAULT_MISS_FACTOR_MILLI: u64 = 2_500;

/// Interpreter tick: half the shortest supervised period, within [100 ms, 5 s].
pub fn tick_interval(min_period_ms: u64) -> u64 {
    (min_period_ms / 2).clamp(100, 5_000)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ThresholdOp {
    #[cfg_attr(feature = "serde", serde(rename = ">"))]
    Above,
    #[cfg_attr(feature = "serde", serde(rename = "<"))]
    Below,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdRule {
    /// `None` applies the rule to every device.
    pub device: Option<String>,
    pub oid: Oid,
    pub op: ThresholdOp,
    pub bound: f64,
}

impl ThresholdRule {
    fn applies(&self, device: &str, oid: &Oid) -> bool {
        self.oid == *oid && self.device.as_deref().is_none_or(|d| d == device)
    }

    fn breached(&self, v: f64) -> bool {
        match self.op {
            ThresholdOp::Above => v > self.bound,
            ThresholdOp::Below => v < self.bound,
        }
    }
}

#[derive(Debug, Clone)]
struct Watch {
    period_ms: u64,
    last: u64,
    in_outage: bool,
}

#[derive(Debug)]
pub struct Interpreter {
    miss_factor_milli: u64,
    watches: BTreeMap<(String, Oid), Watch>,
    rules: Vec<ThresholdRule>,
    breached: BTreeSet<(String, usize)>,
}

impl Default for Interpreter {
    fn default() -> Self {
        Self::new(DEFAULT_MISS_FACTOR_MILLI)
    }
}

impl Interpreter {
    pub fn new(miss_factor_milli: u64) -> Self {
        Interpreter { miss_factor_milli, watches: BTreeMap::new(), rules: Vec::new(), breached: BTreeSet::new() }
    }

    pub fn set_rules(&mut self, rules: Vec<ThresholdRule>) {
        self.rules = rules;
        self.breached.clear();
    }

    /// Starts supervising a variable expected every `period_ms`; silence is
    /// measured from `now` until the first sample arrives.
    pub fn watch(&mut self, device: &str, oid: &Oid, period_ms: u64, now: u64) {
        self.watches
            .entry((device.into(), oid.clone()))
            .and_modify(|w| w.period_ms = period_ms)
            .or_insert(Watch { period_ms, last: now, in_outage: false });
    }

    pub fn unwatch(&mut self, device: &str, oid: &Oid) {
        self.watches.remove(&(device.into(), oid.clone()));
    }

    pub fn min_period(&self) -> Option<u64> {
        self.watches.values().map(|w| w.period_ms).min()
    }

    pub fn tick_interval(&self) -> Option<u64> {
        self.min_period().map(tick_interval)
    }

    fn overdue(&self, w: &Watch, now: u64) -> bool {
        now.saturating_sub(w.last) * 1_000 > self.miss_factor_milli * w.period_ms
    }

    fn missed(device: &str, oid: &Oid, now: u64) -> Event {
        Event::new(device, HEARTBEAT_MISSED, 4, now).with_subject(oid.clone())
    }

    /// Feeds one sample arriving at `now` (manager clock).
    pub fn on_sample(&mut self, device: &str, oid: &Oid, value: &MibValue, now: u64) -> Vec<Event> {
        let mut events = Vec::new();
        let key = (String::from(device), oid.clone());
        if let Some(w) = self.watches.get(&key) {
            let late = !w.in_outage && self.overdue(w, now);
            let w = self.watches.get_mut(&key).expect("present");
            if late {
                // the outage ended before a tick saw it
                events.push(Self::missed(device, oid, now));
                w.in_outage = true;
            }
            if w.in_outage {
                events.push(Event::new(device, DEVICE_RECOVERED, 1, now).with_subject(oid.clone()));
                w.in_outage = false;
            }
            w.last = w.last.max(now);
        }
        if let Some(v) = value.as_f64() {
            for (i, rule) in self.rules.iter().enumerate() {
                if !rule.applies(device, oid) {
                    continue;
                }
                let key = (String::from(device), i);
                let payload = vec![(oid.clone(), value.clone())];
                if rule.breached(v) {
                    if self.breached.insert(key) {
                        events.push(Event::new(device, THRESHOLD_BREACH, 3, now).with_subject(oid.clone()).with_payload(payload));
                    }
                } else if self.breached.remove(&key) {
                    events.push(Event::new(device, THRESHOLD_CLEARED, 1, now).with_subject(oid.clone()).with_payload(payload));
                }
            }
        }
        events
    }

    /// Periodic check: one heartbeat-missed per variable per outage.
    pub fn tick(&mut self, now: u64) -> Vec<Event> {
        let mut events = Vec::new();
        let factor = self.miss_factor_milli;
        for ((device, oid), w) in self.watches.iter_mut() {
            if !w.in_outage && now.saturating_sub(w.last) * 1_000 > factor * w.period_ms {
                w.in_outage = true;
                events.push(Self::missed(device, oid, now));
            }
        }
        events
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mib::well_known;

    fn beat() -> (Oid, MibValue) {
        (well_known::sys_object_id(), MibValue::Oid(Oid::parse("1.3.6.1.4.1.99999.2.1").unwrap()))
    }

    /// Drives ticks at the interpreter interval interleaved with arrivals.
    fn run(arrivals: &[u64], end: u64, period: u64) -> Vec<Event> {
        let (oid, v) = beat();
        let mut it = Interpreter::default();
        it.watch("r1", &oid, period, 0);
        let step = it.tick_interval().unwrap();
        let mut events = Vec::new();
        let mut next_tick = step;
        let mut arrivals = arrivals.iter().peekable();
        loop {
            let next_arrival = arrivals.peek().copied().copied();
            match next_arrival {
                Some(a) if a <= next_tick => {
                    events.extend(it.on_sample("r1", &oid, &v, a));
                    arrivals.next();
                }
                _ if next_tick <= end => {
                    events.extend(it.tick(next_tick));
                    next_tick += step;
                }
                _ => break,
            }
        }
        events
    }

    #[test]
    fn tick_bounds() {
        assert_eq!(tick_interval(50), 100);
        assert_eq!(tick_interval(3_000), 1_500);
        assert_eq!(tick_interval(300_000), 5_000);
    }

    #[test]
    fn jitter_never_alarms() {
        // 299 s / 301 s alternation around a 300 s period
        let mut t = 0;
        let arrivals: Vec<u64> = (0..100)
            .map(|i| {
                t += if i % 2 == 0 { 299_000 } else { 301_000 };
                t
            })
            .collect();
        assert!(run(&arrivals, t, 300_000).is_empty());
    }

    #[test]
    fn one_alarm_per_outage() {
        let arrivals: Vec<u64> = (1..=5).map(|k| k * 1000).chain((15..=20).map(|k| k * 1000)).collect();
        let events = run(&arrivals, 20_000, 1000);
        let kinds: Vec<&str> = events.iter().map(|e| e.kind.as_str()).collect();
        assert_eq!(kinds, [HEARTBEAT_MISSED, DEVICE_RECOVERED]);
        // detected within one tick after 2.5 periods of silence
        assert!(events[0].timestamp > 7_500 && events[0].timestamp <= 7_500 + 500);
    }

    #[test]
    fn gap_just_over_limit_detected_on_arrival() {
        // period 1 s, tick 500 ms, last beat at 1000, next at 3501: no tick lands in (3500, 3501]
        let events = run(&[1000, 3501], 3501, 1000);
        let kinds: Vec<&str> = events.iter().map(|e| e.kind.as_str()).collect();
        assert_eq!(kinds, [HEARTBEAT_MISSED, DEVICE_RECOVERED]);
        assert_eq!(events[0].timestamp, 3501);
        // exactly 2.5 periods is not an outage
        assert!(run(&[1000, 3500], 3500, 1000).is_empty());
    }

    #[test]
    fn thresholds_edge_triggered() {
        let mut it = Interpreter::default();
        let cpu = well_known::vs_cpu_load();
        it.set_rules(vec![ThresholdRule { device: None, oid: cpu.clone(), op: ThresholdOp::Above, bound: 90.0 }]);
        let mut kinds = Vec::new();
        for v in [50u32, 95, 97, 80, 91] {
            kinds.extend(it.on_sample("r1", &cpu, &MibValue::Gauge(v), 0).into_iter().map(|e| (e.kind, e.severity)));
        }
        assert_eq!(
            kinds,
            [(THRESHOLD_BREACH.into(), 3), (THRESHOLD_CLEARED.into(), 1), (THRESHOLD_BREACH.into(), 3)]
        );
        let below = ThresholdRule { device: Some("r2".into()), oid: cpu.clone(), op: ThresholdOp::Below, bound: 10.0 };
        it.set_rules(vec![below]);
        assert!(it.on_sample("r1", &cpu, &MibValue::Gauge(1), 0).is_empty());
        assert_eq!(it.on_sample("r2", &cpu, &MibValue::Gauge(1), 0).len(), 1);
    }
}

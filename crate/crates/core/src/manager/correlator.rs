//! Event correlation: masking, handler dispatch, invocation logging and map status.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use super::event::*;
use super::map::{colors_from_open, DeviceStatus, MapState};

pub const DEFAULT_MASK_WINDOW_MS: u64 = 10_000;
const RECENT_PER_SOURCE: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "kebab-case"))]
pub enum Action {
    Log,
    MapUpdate,
    Webhook { url: String },
    Command { argv: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventHandlerDef {
    pub id: String,
    pub source_glob: String,
    pub kind_glob: String,
    pub min_severity: Severity,
    pub action: Action,
}

impl EventHandlerDef {
    pub fn new(id: &str, source_glob: &str, kind_glob: &str, min_severity: Severity, action: Action) -> Self {
        EventHandlerDef {
            id: id.into(),
            source_glob: source_glob.into(),
            kind_glob: kind_glob.into(),
            min_severity,
            action,
        }
    }

    pub fn matches(&self, event: &Event) -> bool {
        event.severity >= self.min_severity
            && glob_match(&self.source_glob, &event.source)
            && glob_match(&self.kind_glob, &event.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Invocation {
    pub event_id: u64,
    pub handler_id: String,
    pub timestamp: u64,
    pub ok: bool,
    #[cfg_attr(feature = "serde", serde(default))]
    pub detail: String,
}

/// Executes handler actions that leave the process (log lines, webhooks, commands).
pub trait ActionRunner {
    fn run(&mut self, handler: &EventHandlerDef, event: &Event) -> Result<(), String>;
}

/// Runner that does nothing and always succeeds.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoopRunner;

impl ActionRunner for NoopRunner {
    fn run(&mut self, _: &EventHandlerDef, _: &Event) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Disposition {
    Delivered { event_id: u64, invocations: usize },
    Masked { event_id: u64, by: u64 },
}

#[derive(Debug, Clone)]
pub struct CorrelateOutcome {
    pub disposition: Disposition,
    pub event: Event,
    pub new_invocations: Vec<Invocation>,
    pub map_changes: Vec<DeviceStatus>,
}

/// Which open kinds a severity-1 kind closes, and whether the subject
/// variable must match.
const CLEARS: &[(&str, &str, bool)] = &[
    (DEVICE_RECOVERED, HEARTBEAT_MISSED, true),
    (THRESHOLD_CLEARED, THRESHOLD_BREACH, true),
    (POLL_RECOVERED, POLL_FAILED, false),
];

/// Kinds that stay open (and color the map) until cleared.
pub fn is_stateful(kind: &str) -> bool {
    CLEARS.iter().any(|(_, open, _)| *open == kind)
}

#[derive(Debug, Clone, Copy)]
struct Recent {
    id: u64,
    severity: Severity,
    timestamp: u64,
}

#[derive(Debug)]
pub struct Correlator {
    mask_window_ms: u64,
    next_id: u64,
    log: Vec<Event>,
    recent: BTreeMap<String, VecDeque<Recent>>,
    open: BTreeMap<u64, Event>,
    handlers: Vec<EventHandlerDef>,
    invocations: Vec<Invocation>,
    map: MapState,
}

impl Default for Correlator {
    fn default() -> Self {
        Self::new(DEFAULT_MASK_WINDOW_MS)
    }
}

impl Correlator {
    pub fn new(mask_window_ms: u64) -> Self {
        Correlator {
            mask_window_ms,
            next_id: 0,
            log: Vec::new(),
            recent: BTreeMap::new(),
            open: BTreeMap::new(),
            handlers: Vec::new(),
            invocations: Vec::new(),
            map: MapState::new(),
        }
    }

    pub fn set_handlers(&mut self, handlers: Vec<EventHandlerDef>) {
        self.handlers = handlers;
    }

    pub fn handlers(&self) -> &[EventHandlerDef] {
        &self.handlers
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    pub fn invocations(&self) -> &[Invocation] {
        &self.invocations
    }

    pub fn open_events(&self) -> impl Iterator<Item = &Event> {
        self.open.values()
    }

    pub fn map(&self) -> &MapState {
        &self.map
    }

    pub fn map_mut(&mut self) -> &mut MapState {
        &mut self.map
    }

    fn masker(&self, event: &Event) -> Option<u64> {
        let recent = self.recent.get(&event.source)?;
        recent
            .iter()
            .rev()
            .find(|a| {
                a.severity > event.severity
                    && event.timestamp >= a.timestamp
                    && event.timestamp - a.timestamp <= self.mask_window_ms
            })
            .map(|a| a.id)
    }

    fn clear_for(&mut self, event: &Event) {
        for (clearing, cleared, by_subject) in CLEARS {
            if event.kind != *clearing {
                continue;
            }
            self.open.retain(|_, open| {
                !(open.source == event.source
                    && open.kind == *cleared
                    && (!by_subject || event.subject.is_none() || open.subject == event.subject))
            });
        }
    }

    /// Runs one event through masking, handlers and map recomputation.
    /// Handler failures are logged and never stop other handlers.
    pub fn correlate(&mut self, mut event: Event, runner: &mut dyn ActionRunner) -> CorrelateOutcome {
        self.next_id += 1;
        event.id = self.next_id;
        event.masked_by = self.masker(&event);

        let mut new_invocations = Vec::new();
        let disposition = match event.masked_by {
            Some(by) => Disposition::Masked { event_id: event.id, by },
            None => {
                let recent = self.recent.entry(event.source.clone()).or_default();
                if recent.len() == RECENT_PER_SOURCE {
                    recent.pop_front();
                }
                recent.push_back(Recent { id: event.id, severity: event.severity, timestamp: event.timestamp });
                for handler in &self.handlers {
                    if !handler.matches(&event) {
                        continue;
                    }
                    let result = match handler.action {
                        Action::MapUpdate => Ok(()),
                        _ => runner.run(handler, &event),
                    };
                    let (ok, detail) = match result {
                        Ok(()) => (true, String::new()),
                        Err(e) => (false, e),
                    };
                    new_invocations.push(Invocation {
                        event_id: event.id,
                        handler_id: handler.id.clone(),
                        timestamp: event.timestamp,
                        ok,
                        detail,
                    });
                }
                Disposition::Delivered { event_id: event.id, invocations: new_invocations.len() }
            }
        };

        // masking suppresses handlers only; a masked recovery still closes its outage
        if event.severity == 1 {
            self.clear_for(&event);
        } else if event.masked_by.is_none() && is_stateful(&event.kind) {
            self.open.insert(event.id, event.clone());
        }
        self.map.add_device(&event.source, event.timestamp);
        let colors = colors_from_open(self.open.values());
        let map_changes = self.map.apply(&colors, event.timestamp);

        self.invocations.extend(new_invocations.iter().cloned());
        self.log.push(event.clone());
        CorrelateOutcome { disposition, event, new_invocations, map_changes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manager::map::Color;
    use crate::oid::Oid;
    use alloc::vec;
    use proptest::prelude::*;

    struct Failing;
    impl ActionRunner for Failing {
        fn run(&mut self, h: &EventHandlerDef, _: &Event) -> Result<(), String> {
            if h.id == "bad" { Err("boom".into()) } else { Ok(()) }
        }
    }

    #[test]
    fn breach_masked_by_recent_heartbeat() {
        let mut c = Correlator::default();
        c.set_handlers(vec![EventHandlerDef::new("all", "*", "*", 1, Action::Log)]);
        let a = c.correlate(Event::new("r1", HEARTBEAT_MISSED, 4, 10_000), &mut NoopRunner);
        let b = c.correlate(Event::new("r1", THRESHOLD_BREACH, 3, 12_000), &mut NoopRunner);
        assert!(matches!(a.disposition, Disposition::Delivered { invocations: 1, .. }));
        assert_eq!(b.disposition, Disposition::Masked { event_id: 2, by: 1 });
        assert_eq!(c.invocations().len(), 1);
        // outside the window nothing is masked
        let late = c.correlate(Event::new("r1", THRESHOLD_BREACH, 3, 20_001), &mut NoopRunner);
        assert!(matches!(late.disposition, Disposition::Delivered { .. }));
    }

    #[test]
    fn different_sources_never_mask() {
        let mut c = Correlator::default();
        c.correlate(Event::new("r1", HEARTBEAT_MISSED, 5, 0), &mut NoopRunner);
        let other = c.correlate(Event::new("r2", THRESHOLD_BREACH, 2, 1), &mut NoopRunner);
        assert!(other.event.masked_by.is_none());
    }

    #[test]
    fn three_handlers_three_records() {
        let mut c = Correlator::default();
        c.set_handlers(vec![
            EventHandlerDef::new("h1", "*", "*", 1, Action::Log),
            EventHandlerDef::new("bad", "r*", "heartbeat-*", 4, Action::Webhook { url: "http://x".into() }),
            EventHandlerDef::new("h3", "r1", "*", 2, Action::MapUpdate),
            EventHandlerDef::new("never", "r2", "*", 1, Action::Log),
        ]);
        let out = c.correlate(Event::new("r1", HEARTBEAT_MISSED, 4, 0), &mut Failing);
        assert_eq!(out.new_invocations.len(), 3);
        assert!(!out.new_invocations[1].ok);
        assert_eq!(out.new_invocations[1].detail, "boom");
        assert!(out.new_invocations[2].ok);
    }

    #[test]
    fn recovery_clears_and_recolors() {
        let mut c = Correlator::default();
        let hb = Oid::parse("1.3.6.1.2.1.1.2.0").unwrap();
        let down = c.correlate(Event::new("r1", HEARTBEAT_MISSED, 4, 0).with_subject(hb.clone()), &mut NoopRunner);
        assert_eq!(down.map_changes[0].color, Color::Red);
        let up = c.correlate(Event::new("r1", DEVICE_RECOVERED, 1, 5).with_subject(hb), &mut NoopRunner);
        assert_eq!(up.map_changes[0].color, Color::Green);
        assert_eq!(c.open_events().count(), 0);
        c.correlate(Event::new("r1", POLL_FAILED, 2, 50_000), &mut NoopRunner);
        assert_eq!(c.map().color("r1"), Some(Color::Yellow));
        c.correlate(Event::new("r1", POLL_RECOVERED, 1, 50_001), &mut NoopRunner);
        assert_eq!(c.map().color("r1"), Some(Color::Green));
    }

    fn arb_event() -> impl Strategy<Value = Event> {
        let kinds = prop::sample::select(vec![
            HEARTBEAT_MISSED,
            DEVICE_RECOVERED,
            THRESHOLD_BREACH,
            THRESHOLD_CLEARED,
            POLL_FAILED,
            POLL_RECOVERED,
            "notification:linkDown",
        ]);
        (prop::sample::select(vec!["a", "b", "c"]), kinds, 1u8..=5, 0u64..3_000)
            .prop_map(|(s, k, sev, dt)| Event::new(s, k, sev, dt))
    }

    proptest! {
        #[test]
        fn correlator_invariants(mut events in prop::collection::vec(arb_event(), 1..60)) {
            // arrival order = timestamp order, built from gaps
            let mut t = 0;
            for e in events.iter_mut() {
                t += e.timestamp;
                e.timestamp = t;
            }
            let handlers = vec![
                EventHandlerDef::new("any", "*", "*", 1, Action::Log),
                EventHandlerDef::new("crit", "*", "*", 4, Action::Log),
                EventHandlerDef::new("hb", "a", "heartbeat-*", 1, Action::Log),
            ];
            let mut c = Correlator::default();
            c.set_handlers(handlers.clone());
            for e in events {
                c.correlate(e, &mut NoopRunner);
            }
            let by_id: BTreeMap<u64, &Event> = c.events().iter().map(|e| (e.id, e)).collect();
            let mut expected_invocations = 0;
            for e in c.events() {
                match e.masked_by {
                    Some(m) => {
                        let a = by_id[&m];
                        prop_assert!(a.masked_by.is_none());
                        prop_assert!(a.id < e.id && a.timestamp <= e.timestamp);
                        prop_assert!(a.severity > e.severity && a.source == e.source);
                    }
                    None => expected_invocations += handlers.iter().filter(|h| h.matches(e)).count(),
                }
            }
            prop_assert_eq!(c.invocations().len(), expected_invocations);

            let scratch = colors_from_open(c.open_events());
            for status in c.map().snapshot() {
                let want = scratch.get(&status.device).copied().unwrap_or(Color::Green);
                prop_assert_eq!(status.color, want);
            }
        }
    }
}

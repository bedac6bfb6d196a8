//! Polling definitions and per-definition health accounting for the pull model.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::event::*;
use crate::oid::Oid;
use crate::subscription::MIN_PERIOD_MS;

/// Consecutive failed cycles after which poll-failed escalates to severity 4.
pub const ESCALATE_AFTER: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PollingDefinition {
    pub id: String,
    /// Device id of the polled agent.
    pub agent: String,
    pub host: String,
    pub port: u16,
    #[cfg_attr(feature = "serde", serde(default))]
    pub oids: Vec<Oid>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub table_oids: Vec<Oid>,
    pub period_ms: u64,
}

impl PollingDefinition {
    pub fn validate(&self) -> Result<(), String> {
        if self.period_ms < MIN_PERIOD_MS {
            return Err(format!("period {} ms below the {MIN_PERIOD_MS} ms floor", self.period_ms));
        }
        if self.oids.is_empty() && self.table_oids.is_empty() {
            return Err(String::from("nothing to poll"));
        }
        Ok(())
    }

    /// Request paths for one cycle, in the order they are pipelined.
    pub fn request_paths(&self) -> Vec<String> {
        self.oids
            .iter()
            .map(|o| format!("/mgmt/mib/{o}"))
            .chain(self.table_oids.iter().map(|o| format!("/mgmt/table/{o}")))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PollHealth {
    pub consecutive_failures: u32,
    pub cycles: u64,
}

impl PollHealth {
    pub fn on_success(&mut self, agent: &str, now: u64) -> Option<Event> {
        self.cycles += 1;
        let was_failing = self.consecutive_failures > 0;
        self.consecutive_failures = 0;
        was_failing.then(|| Event::new(agent, POLL_RECOVERED, 1, now))
    }

    pub fn on_failure(&mut self, agent: &str, now: u64) -> Event {
        self.cycles += 1;
        self.consecutive_failures += 1;
        let severity = if self.consecutive_failures >= ESCALATE_AFTER { 4 } else { 2 };
        Event::new(agent, POLL_FAILED, severity, now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn escalation_at_third_failure() {
        let mut h = PollHealth::default();
        let sev: Vec<u8> = (0..4).map(|i| h.on_failure("r1", i).severity).collect();
        assert_eq!(sev, [2, 2, 4, 4]);
        assert_eq!(h.on_success("r1", 9).unwrap().kind, POLL_RECOVERED);
        assert!(h.on_success("r1", 10).is_none());
    }

    #[test]
    fn paths_in_order() {
        let def = PollingDefinition {
            id: "p".into(),
            agent: "r1".into(),
            host: "r1".into(),
            port: 8161,
            oids: vec![Oid::parse("1.3.6.1.2.1.1.3.0").unwrap()],
            table_oids: vec![Oid::parse("1.3.6.1.2.1.2.2").unwrap()],
            period_ms: 1000,
        };
        assert_eq!(def.request_paths(), ["/mgmt/mib/1.3.6.1.2.1.1.3.0", "/mgmt/table/1.3.6.1.2.1.2.2"]);
        assert!(def.validate().is_ok());
        let empty = PollingDefinition { oids: vec![], table_oids: vec![], ..def.clone() };
        assert!(empty.validate().is_err());
        assert!(PollingDefinition { period_ms: 99, ..def }.validate().is_err());
    }
}

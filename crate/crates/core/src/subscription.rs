//! Push data definitions: what a manager subscribes to, how often, and where
//! the agent should deliver it.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::oid::Oid;

/// Lowest accepted push period.
pub const MIN_PERIOD_MS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Transport {
    /// Framed reports over a persistent connection the manager opened.
    Stream,
    /// One message per datagram, fire-and-forget.
    Datagram,
    /// The agent POSTs each report to the manager's `/push/report`.
    HttpPush,
}

impl Transport {
    pub fn as_str(self) -> &'static str {
        match self {
            Transport::Stream => "stream",
            Transport::Datagram => "datagram",
            Transport::HttpPush => "http-push",
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stream" => Ok(Transport::Stream),
            "datagram" => Ok(Transport::Datagram),
            "http-push" => Ok(Transport::HttpPush),
            other => Err(format!("unknown transport `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
    pub transport: Transport,
}

impl Endpoint {
    pub fn new(host: &str, port: u16, transport: Transport) -> Self {
        Endpoint { host: host.into(), port, transport }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}://{}:{}", self.transport, self.host, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Selection {
    pub oid: Oid,
    pub period_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Subscription {
    pub id: String,
    pub endpoints: Vec<Endpoint>,
    pub selections: Vec<Selection>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub notification_filter: BTreeSet<String>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub durable: bool,
    #[cfg_attr(feature = "serde", serde(default))]
    pub created_at: u64,
}

impl Subscription {
    pub fn new(id: &str, endpoint: Endpoint) -> Self {
        Subscription {
            id: id.into(),
            endpoints: alloc::vec![endpoint],
            selections: Vec::new(),
            notification_filter: BTreeSet::new(),
            durable: true,
            created_at: 0,
        }
    }

    pub fn select(mut self, oid: Oid, period_ms: u64) -> Self {
        self.selections.push(Selection { oid, period_ms });
        self
    }

    pub fn filter(mut self, notification: &str) -> Self {
        self.notification_filter.insert(notification.into());
        self
    }

    /// Structural checks that need no MIB: id, endpoints and period floor.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("subscription id is empty".into());
        }
        if self.endpoints.is_empty() {
            return Err("subscription has no endpoints".into());
        }
        for sel in &self.selections {
            if sel.period_ms < MIN_PERIOD_MS {
                return Err(format!(
                    "period {} ms for {} is below the {} ms floor",
                    sel.period_ms, sel.oid, MIN_PERIOD_MS
                ));
            }
        }
        Ok(())
    }

    /// Smallest selection period, if any.
    pub fn min_period_ms(&self) -> Option<u64> {
        self.selections.iter().map(|s| s.period_ms).min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let ep = Endpoint::new("m", 1, Transport::Stream);
        let ok = Subscription::new("hb", ep.clone()).select(Oid::from_slice(&[1, 3]), 300_000);
        assert!(ok.validate().is_ok());
        let fast = Subscription::new("hb", ep.clone()).select(Oid::from_slice(&[1, 3]), 10);
        assert!(fast.validate().unwrap_err().contains("floor"));
        let mut none = ok.clone();
        none.endpoints.clear();
        assert!(none.validate().is_err());
    }

    #[test]
    fn transport_names() {
        for t in [Transport::Stream, Transport::Datagram, Transport::HttpPush] {
            assert_eq!(t.as_str().parse::<Transport>().unwrap(), t);
        }
        assert!("multicast".parse::<Transport>().is_err());
    }
}

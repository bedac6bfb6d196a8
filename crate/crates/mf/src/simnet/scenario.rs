use std::fmt;
use std::path::Path;
use std::str::FromStr;

use mf_core::agent::StorageMode;
use mf_core::subscription::{Transport, MIN_PERIOD_MS};
use serde::Serialize;

use super::variables::MAX_VARIABLES;
use crate::config::{ConfigError, KeyValues};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Pull,
    Push,
}

impl FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pull" => Ok(Model::Pull),
            "push" => Ok(Model::Push),
            _ => Err(format!("unknown model `{s}` (pull|push)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultAction {
    Kill,
    Restore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fault {
    pub action: FaultAction,
    /// `agent-<i>` or `manager-<i>`, 1-based.
    pub who: String,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub model: Model,
    pub agents: usize,
    pub variables: usize,
    pub period_ms: u64,
    pub duration_ms: u64,
    #[serde(serialize_with = "ser_transport")]
    pub transport: Transport,
    pub managers: usize,
    pub loss: f64,
    /// Manager to agent.
    pub latency_down_ms: u64,
    /// Agent to manager.
    pub latency_up_ms: u64,
    pub seed: u64,
    pub sync_interval_ms: u64,
    /// Agent clocks run `+skew` (odd agents) or `-skew` (even agents) off true time.
    pub skew_ms: i64,
    pub keepalive_ms: u64,
    #[serde(serialize_with = "ser_storage")]
    pub storage: StorageMode,
    pub reconnect_ms: u64,
    pub faults: Vec<Fault>,
}

fn ser_transport<S: serde::Serializer>(t: &Transport, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(t.as_str())
}

fn ser_storage<S: serde::Serializer>(m: &StorageMode, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(match m {
        StorageMode::Durable => "durable",
        StorageMode::Volatile => "volatile",
    })
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "default".into(),
            model: Model::Push,
            agents: 10,
            variables: 5,
            period_ms: 1_000,
            duration_ms: 60_000,
            transport: Transport::Stream,
            managers: 1,
            loss: 0.0,
            latency_down_ms: 5,
            latency_up_ms: 5,
            seed: 1,
            sync_interval_ms: mf_core::timesync::DEFAULT_SYNC_INTERVAL_MS,
            skew_ms: 0,
            keepalive_ms: 15_000,
            storage: StorageMode::Durable,
            reconnect_ms: 1_000,
            faults: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("line {line}: {message}")]
    Directive { line: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

const KEYS: &[&str] = &[
    "name",
    "model",
    "agents",
    "variables",
    "period_ms",
    "duration_ms",
    "transport",
    "managers",
    "loss",
    "latency_ms",
    "latency_down_ms",
    "latency_up_ms",
    "seed",
    "sync_interval_ms",
    "skew_ms",
    "keepalive_ms",
    "storage",
    "reconnect_ms",
];

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let kv = KeyValues::parse(text)?;
        for (key, line) in kv.keys() {
            if !KEYS.contains(&key) {
                return Err(ScenarioError::Directive { line, message: format!("unknown key `{key}`") });
            }
        }
        let d = Scenario::default();
        let latency: u64 = kv.parse_or("latency_ms", d.latency_down_ms)?;
        let transport = match kv.get("transport") {
            None => d.transport,
            Some(t) => Transport::from_str(t).map_err(|_| ScenarioError::Invalid(format!("unknown transport `{t}`")))?,
        };
        let storage = match kv.get("storage") {
            None | Some("durable") => StorageMode::Durable,
            Some("volatile") => StorageMode::Volatile,
            Some(other) => return Err(ScenarioError::Invalid(format!("unknown storage `{other}`"))),
        };
        let mut s = Scenario {
            name: kv.get("name").unwrap_or(&d.name).to_string(),
            model: kv.parse_or("model", d.model)?,
            agents: kv.parse_or("agents", d.agents)?,
            variables: kv.parse_or("variables", d.variables)?,
            period_ms: kv.parse_or("period_ms", d.period_ms)?,
            duration_ms: kv.parse_or("duration_ms", d.duration_ms)?,
            transport,
            managers: kv.parse_or("managers", d.managers)?,
            loss: kv.parse_or("loss", d.loss)?,
            latency_down_ms: kv.parse_or("latency_down_ms", latency)?,
            latency_up_ms: kv.parse_or("latency_up_ms", latency)?,
            seed: kv.parse_or("seed", d.seed)?,
            sync_interval_ms: kv.parse_or("sync_interval_ms", d.sync_interval_ms)?,
            skew_ms: kv.parse_or("skew_ms", d.skew_ms)?,
            keepalive_ms: kv.parse_or("keepalive_ms", d.keepalive_ms)?,
            storage,
            reconnect_ms: kv.parse_or("reconnect_ms", d.reconnect_ms)?,
            faults: Vec::new(),
        };
        for (words, line) in kv.directives() {
            let action = match words.first().map(String::as_str) {
                Some("kill") => FaultAction::Kill,
                Some("restore") => FaultAction::Restore,
                _ => return Err(ScenarioError::Directive { line, message: format!("unknown directive `{}`", words.join(" ")) }),
            };
            let [_, who, at] = words else {
                return Err(ScenarioError::Directive { line, message: "expected `<kill|restore> <who> <t-ms>`".into() });
            };
            let at_ms = at
                .parse()
                .map_err(|_| ScenarioError::Directive { line, message: format!("bad time `{at}`") })?;
            s.faults.push(Fault { action, who: who.clone(), at_ms });
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.agents == 0 {
            return bad("at least one agent".into());
        }
        if self.variables == 0 || self.variables > MAX_VARIABLES {
            return bad(format!("variables must be 1..={MAX_VARIABLES}"));
        }
        if self.period_ms < MIN_PERIOD_MS {
            return bad(format!("period below {MIN_PERIOD_MS} ms"));
        }
        if !(1..=2).contains(&self.managers) {
            return bad("managers must be 1 or 2".into());
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return bad("loss must be within [0, 1]".into());
        }
        if self.sync_interval_ms == 0 || self.reconnect_ms == 0 {
            return bad("intervals must be positive".into());
        }
        for f in &self.faults {
            if self.node_index(&f.who).is_none() {
                return bad(format!("fault names unknown node `{}`", f.who));
            }
        }
        Ok(())
    }

    /// Resolves `agent-<i>` / `manager-<i>` to a role and 0-based index.
    pub fn node_index(&self, who: &str) -> Option<(Role, usize)> {
        let (role, n, max) = if let Some(n) = who.strip_prefix("agent-") {
            (Role::Agent, n, self.agents)
        } else {
            let n = who.strip_prefix("manager-")?;
            (Role::Manager, n, self.managers)
        };
        let i: usize = n.parse().ok()?;
        (1..=max).contains(&i).then_some((role, i - 1))
    }

    /// Skew of agent `i` (0-based).
    pub fn agent_skew(&self, i: usize) -> i64 {
        if i.is_multiple_of(2) {
            self.skew_ms
        } else {
            -self.skew_ms
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Agent,
    Manager,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Agent => "agent",
            Role::Manager => "manager",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_faults() {
        let s = Scenario::parse(
            "model=pull\nagents=3\ntransport=datagram\nlatency_ms=7\nloss=0.2\nkill agent-2 3000\nrestore agent-2 5000\n",
        )
        .unwrap();
        assert_eq!(s.model, Model::Pull);
        assert_eq!((s.latency_down_ms, s.latency_up_ms), (7, 7));
        assert_eq!(s.faults.len(), 2);
        assert_eq!(s.node_index("agent-2"), Some((Role::Agent, 1)));
        assert_eq!(s.node_index("agent-4"), None);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Scenario::parse("period_ms=10").is_err());
        assert!(Scenario::parse("bogus=1").is_err());
        assert!(Scenario::parse("kill agent-11 100").is_err());
        assert!(Scenario::parse("explode agent-1 100").is_err());
        assert!(Scenario::parse("managers=3").is_err());
    }
}

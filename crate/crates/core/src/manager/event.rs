use alloc::string::String;
use alloc::vec::Vec;

use crate::mib::MibValue;
use crate::oid::Oid;

pub const HEARTBEAT_MISSED: &str = "heartbeat-missed";
pub const DEVICE_RECOVERED: &str = "device-recovered";
pub const THRESHOLD_BREACH: &str = "threshold-breach";
pub const THRESHOLD_CLEARED: &str = "threshold-cleared";
pub const POLL_FAILED: &str = "poll-failed";
pub const POLL_RECOVERED: &str = "poll-recovered";
pub const AGENT_REBOOTED: &str = "agent-rebooted";
pub const NOTIFICATION_PREFIX: &str = "notification:";

/// Severity 1 (informational, clears) to 5 (worst).
pub type Severity = u8;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Event {
    /// Assigned by the correlator; zero until then.
    pub id: u64,
    pub source: String,
    pub kind: String,
    pub severity: Severity,
    pub timestamp: u64,
    /// The variable the event is about, when it names one.
    #[cfg_attr(feature = "serde", serde(default))]
    pub subject: Option<Oid>,
    pub payload: Vec<(Oid, MibValue)>,
    pub masked_by: Option<u64>,
}

impl Event {
    pub fn new(source: &str, kind: &str, severity: Severity, timestamp: u64) -> Self {
        Event {
            id: 0,
            source: source.into(),
            kind: kind.into(),
            severity: severity.clamp(1, 5),
            timestamp,
            subject: None,
            payload: Vec::new(),
            masked_by: None,
        }
    }

    pub fn with_payload(mut self, payload: Vec<(Oid, MibValue)>) -> Self {
        self.payload = payload;
        self
    }

    pub fn with_subject(mut self, oid: Oid) -> Self {
        self.subject = Some(oid);
        self
    }
}

/// Shell-style wildcard match: `*` any run, `?` one character.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use proptest::prelude::*;

    #[test]
    fn globs() {
        assert!(glob_match("*", ""));
        assert!(glob_match("r*", "r12"));
        assert!(glob_match("notification:link*", "notification:linkDown"));
        assert!(!glob_match("notification:link*", "threshold-breach"));
        assert!(glob_match("r?", "r1"));
        assert!(!glob_match("r?", "r12"));
        assert!(glob_match("*-missed", "heartbeat-missed"));
        assert!(glob_match("a*b*c", "aXXbYYc"));
        assert!(!glob_match("a*b*c", "aXXbYY"));
    }

    /// Exponential reference matcher.
    fn naive(p: &[char], t: &[char]) -> bool {
        match p.first() {
            None => t.is_empty(),
            Some('*') => (0..=t.len()).any(|k| naive(&p[1..], &t[k..])),
            Some(&c) => !t.is_empty() && (c == '?' || c == t[0]) && naive(&p[1..], &t[1..]),
        }
    }

    proptest! {
        #[test]
        fn agrees_with_reference(p in "[ab*?]{0,7}", t in "[ab]{0,9}") {
            let pc: Vec<char> = p.chars().collect();
            let tc: Vec<char> = t.chars().collect();
            prop_assert_eq!(glob_match(&p, &t), naive(&pc, &tc));
        }

        #[test]
        fn literal_matches_itself(t in "[a-z:-]{0,12}") {
            prop_assert!(glob_match(&t, &t));
            let (p, x) = (format!("*{t}"), format!("x{t}"));
            prop_assert!(glob_match(&p, &x));
            prop_assert!(glob_match("*", &t.to_string()));
        }
    }
}

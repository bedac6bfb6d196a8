use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::oid::Oid;
use crate::pct;

/// The value syntaxes a variable may declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Syntax {
    Integer,
    Counter32,
    Gauge,
    TimeTicks,
    OctetString,
    Oid,
}

impl Syntax {
    pub const ALL: [Syntax; 6] = [
        Syntax::Integer,
        Syntax::Counter32,
        Syntax::Gauge,
        Syntax::TimeTicks,
        Syntax::OctetString,
        Syntax::Oid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Syntax::Integer => "integer",
            Syntax::Counter32 => "counter32",
            Syntax::Gauge => "gauge",
            Syntax::TimeTicks => "timeticks",
            Syntax::OctetString => "octet-string",
            Syntax::Oid => "oid",
        }
    }

    /// Syntaxes whose values are plain unsigned or signed numbers.
    pub fn is_numeric(self) -> bool {
        !matches!(self, Syntax::OctetString | Syntax::Oid)
    }
}

impl fmt::Display for Syntax {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValueError {
    #[error("unknown syntax `{0}`")]
    UnknownSyntax(String),
    #[error("cannot parse `{text}` as {syntax}")]
    BadValue { syntax: Syntax, text: String },
}

impl FromStr for Syntax {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Syntax::ALL
            .iter()
            .copied()
            .find(|syn| syn.as_str() == s)
            .ok_or_else(|| ValueError::UnknownSyntax(s.to_string()))
    }
}

/// A typed MIB value. Counter32 wraps modulo 2^32; TimeTicks count hundredths of a second.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "syntax", content = "value", rename_all = "kebab-case"))]
pub enum MibValue {
    Integer(i32),
    Counter32(u32),
    Gauge(u32),
    TimeTicks(u32),
    OctetString(Vec<u8>),
    Oid(Oid),
}

impl MibValue {
    pub fn syntax(&self) -> Syntax {
        match self {
            MibValue::Integer(_) => Syntax::Integer,
            MibValue::Counter32(_) => Syntax::Counter32,
            MibValue::Gauge(_) => Syntax::Gauge,
            MibValue::TimeTicks(_) => Syntax::TimeTicks,
            MibValue::OctetString(_) => Syntax::OctetString,
            MibValue::Oid(_) => Syntax::Oid,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            MibValue::Integer(v) => Some(f64::from(v)),
            MibValue::Counter32(v) | MibValue::Gauge(v) | MibValue::TimeTicks(v) => Some(f64::from(v)),
            _ => None,
        }
    }

    pub fn text(s: &str) -> Self {
        MibValue::OctetString(s.as_bytes().to_vec())
    }

    /// Wire text form: numbers in decimal, OIDs dotted, octet strings percent-encoded.
    pub fn encode_text(&self) -> String {
        match self {
            MibValue::Integer(v) => v.to_string(),
            MibValue::Counter32(v) | MibValue::Gauge(v) | MibValue::TimeTicks(v) => v.to_string(),
            MibValue::OctetString(bytes) => pct::encode(bytes),
            MibValue::Oid(oid) => oid.to_string(),
        }
    }

    pub fn decode_text(syntax: Syntax, text: &str) -> Result<Self, ValueError> {
        let bad = || ValueError::BadValue { syntax, text: text.to_string() };
        Ok(match syntax {
            Syntax::Integer => MibValue::Integer(text.parse().map_err(|_| bad())?),
            Syntax::Counter32 => MibValue::Counter32(text.parse().map_err(|_| bad())?),
            Syntax::Gauge => MibValue::Gauge(text.parse().map_err(|_| bad())?),
            Syntax::TimeTicks => MibValue::TimeTicks(text.parse().map_err(|_| bad())?),
            Syntax::OctetString => MibValue::OctetString(pct::decode(text).map_err(|_| bad())?),
            Syntax::Oid => MibValue::Oid(Oid::parse(text).map_err(|_| bad())?),
        })
    }
}

impl fmt::Display for MibValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MibValue::OctetString(bytes) => match core::str::from_utf8(bytes) {
                Ok(s) => write!(f, "{s:?}"),
                Err(_) => write!(f, "{}", pct::encode(bytes)),
            },
            other => write!(f, "{}", other.encode_text()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_per_syntax() {
        let values = [
            MibValue::Integer(-7),
            MibValue::Counter32(u32::MAX),
            MibValue::Gauge(12),
            MibValue::TimeTicks(500),
            MibValue::OctetString(b"eth0 \x00\xff".to_vec()),
            MibValue::Oid(Oid::from_slice(&[1, 3, 6])),
        ];
        for v in values {
            let back = MibValue::decode_text(v.syntax(), &v.encode_text()).unwrap();
            assert_eq!(back, v);
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(MibValue::decode_text(Syntax::Counter32, "4294967296").is_err());
        assert!(MibValue::decode_text(Syntax::Gauge, "-1").is_err());
        assert!("float".parse::<Syntax>().is_err());
    }
}

//! Object identifiers: dotted sequences of non-negative integer arcs.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

/// A non-empty sequence of arcs naming a MIB object or instance.
///
/// Ordering is lexicographic over the arcs, so a prefix sorts before any of
/// its extensions. This is the order `get_next` walks in.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Oid(Vec<u32>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OidError {
    #[error("empty object identifier")]
    Empty,
    #[error("malformed object identifier at position {position}")]
    Malformed { position: usize },
    #[error("arc overflows 32 bits at position {position}")]
    Overflow { position: usize },
}

impl Oid {
    pub fn new(arcs: Vec<u32>) -> Result<Self, OidError> {
        if arcs.is_empty() {
            return Err(OidError::Empty);
        }
        Ok(Oid(arcs))
    }

    /// Builds an OID from a static arc slice. Panics on an empty slice.
    pub fn from_slice(arcs: &[u32]) -> Self {
        assert!(!arcs.is_empty(), "object identifier needs at least one arc");
        Oid(arcs.to_vec())
    }

    pub fn parse(text: &str) -> Result<Self, OidError> {
        if text.is_empty() {
            return Err(OidError::Empty);
        }
        let mut arcs = Vec::new();
        let mut current: Option<u32> = None;
        for (position, byte) in text.bytes().enumerate() {
            match byte {
                b'0'..=b'9' => {
                    // leading zeros would break exact text round-trips
                    if current == Some(0) {
                        return Err(OidError::Malformed { position });
                    }
                    let digit = u32::from(byte - b'0');
                    let next = current
                        .unwrap_or(0)
                        .checked_mul(10)
                        .and_then(|v| v.checked_add(digit))
                        .ok_or(OidError::Overflow { position })?;
                    current = Some(next);
                }
                b'.' => match current.take() {
                    Some(arc) => arcs.push(arc),
                    None => return Err(OidError::Malformed { position }),
                },
                _ => return Err(OidError::Malformed { position }),
            }
        }
        match current {
            Some(arc) => arcs.push(arc),
            None => return Err(OidError::Malformed { position: text.len() }),
        }
        Ok(Oid(arcs))
    }

    pub fn arcs(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last_arc(&self) -> u32 {
        self.0[self.0.len() - 1]
    }

    /// True when `self` is a prefix of (or equal to) `other`.
    pub fn is_prefix_of(&self, other: &Oid) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    pub fn child(&self, arc: u32) -> Oid {
        let mut arcs = self.0.clone();
        arcs.push(arc);
        Oid(arcs)
    }

    pub fn parent(&self) -> Option<Oid> {
        if self.0.len() < 2 {
            return None;
        }
        Some(Oid(self.0[..self.0.len() - 1].to_vec()))
    }
}

/// Lexicographic comparison; a strict prefix orders before its extensions.
pub fn compare_oid(a: &Oid, b: &Oid) -> Ordering {
    a.0.cmp(&b.0)
}

impl fmt::Display for Oid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, arc) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{arc}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Oid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Oid({self})")
    }
}

impl FromStr for Oid {
    type Err = OidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Oid::parse(s)
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Oid {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Oid {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = <alloc::string::String as serde::Deserialize>::deserialize(deserializer)?;
        Oid::parse(&text).map_err(serde::de::Error::custom)
    }
}

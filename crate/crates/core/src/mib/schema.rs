//! Schema declarations and the line-oriented schema file format.
//!
//! ```text
//! schema MIB-II-lite
//! var 1.3.6.1.2.1.1.3 sysUpTime timeticks ro
//! var 1.3.6.1.2.1.2.2.1.10 ifInOctets counter32 ro table
//! notif linkDown 1.3.6.1.2.1.2.2.1.1,1.3.6.1.2.1.2.2.1.8
//! val 1.3.6.1.2.1.1.5.0 router-1
//! dyn 1.3.6.1.2.1.1.3.0 counter:100
//! ```
//!
//! `var` and `notif` lines declare the schema; `val` and `dyn` lines seed
//! instances of a virtual MIB and are ignored when only the schema is wanted.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::value::Syntax;
use crate::oid::Oid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Access {
    ReadOnly,
    ReadWrite,
}

impl Access {
    pub fn as_str(self) -> &'static str {
        match self {
            Access::ReadOnly => "ro",
            Access::ReadWrite => "rw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VariableDef {
    pub oid: Oid,
    pub name: String,
    pub syntax: Syntax,
    pub access: Access,
    pub is_table_column: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NotificationDef {
    pub name: String,
    pub payload: Vec<Oid>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MibSchema {
    pub name: String,
    pub variables: Vec<VariableDef>,
    pub notifications: Vec<NotificationDef>,
}

/// How a stored instance evolves as simulated time passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    Constant,
    /// Increments by `rate_per_s` per simulated second, wrapping modulo 2^32.
    Counter { rate_per_s: u32 },
    /// Seeded random walk, one step of at most `step` per whole simulated second, clamped to `[lo, hi]`.
    GaugeWalk { lo: u32, hi: u32, step: u32 },
}

impl fmt::Display for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::Constant => f.write_str("constant"),
            Dynamics::Counter { rate_per_s } => write!(f, "counter:{rate_per_s}"),
            Dynamics::GaugeWalk { lo, hi, step } => write!(f, "gauge:{lo}:{hi}:{step}"),
        }
    }
}

impl FromStr for Dynamics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let num = |p: Option<&str>| -> Result<u32, String> {
            p.ok_or_else(|| format!("incomplete dynamics rule `{s}`"))?
                .parse::<u32>()
                .map_err(|_| format!("bad number in dynamics rule `{s}`"))
        };
        let rule = match parts.next() {
            Some("constant") => Dynamics::Constant,
            Some("counter") => Dynamics::Counter { rate_per_s: num(parts.next())? },
            Some("gauge") => {
                let (lo, hi, step) = (num(parts.next())?, num(parts.next())?, num(parts.next())?);
                if lo > hi {
                    return Err(format!("gauge bounds inverted in `{s}`"));
                }
                Dynamics::GaugeWalk { lo, hi, step }
            }
            _ => return Err(format!("unknown dynamics rule `{s}`")),
        };
        if parts.next().is_some() {
            return Err(format!("trailing fields in dynamics rule `{s}`"));
        }
        Ok(rule)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("schema line {line}: {message}")]
pub struct SchemaError {
    pub line: usize,
    pub message: String,
}

impl SchemaError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        SchemaError { line, message: message.into() }
    }
}

/// A parsed schema file: the schema itself plus optional instance seeds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaFile {
    pub schema: MibSchema,
    /// Instance OID and its value text, interpreted against the variable's syntax.
    pub values: Vec<(Oid, String)>,
    pub dynamics: Vec<(Oid, Dynamics)>,
}

impl MibSchema {
    pub fn empty(name: &str) -> Self {
        MibSchema { name: name.to_string(), variables: Vec::new(), notifications: Vec::new() }
    }

    pub fn variable(&self, oid: &Oid) -> Option<&VariableDef> {
        self.variables.iter().find(|v| &v.oid == oid)
    }

    pub fn notification(&self, name: &str) -> Option<&NotificationDef> {
        self.notifications.iter().find(|n| n.name == name)
    }

    /// Checks uniqueness of OIDs and notification names, and that no variable
    /// OID is a prefix of another.
    pub fn validate(&self) -> Result<(), String> {
        let mut oids = BTreeSet::new();
        for var in &self.variables {
            if !oids.insert(var.oid.clone()) {
                return Err(format!("duplicate variable oid {}", var.oid));
            }
        }
        for a in &self.variables {
            for b in &self.variables {
                if a.oid != b.oid && a.oid.is_prefix_of(&b.oid) {
                    return Err(format!("variable {} is nested under variable {}", b.oid, a.oid));
                }
            }
            if a.is_table_column && a.oid.len() < 2 {
                return Err(format!("table column {} has no table prefix", a.oid));
            }
        }
        let mut names = BTreeSet::new();
        for n in &self.notifications {
            if !names.insert(n.name.as_str()) {
                return Err(format!("duplicate notification {}", n.name));
            }
        }
        Ok(())
    }

    /// Renders the declaration lines (`schema`, `var`, `notif`) in declaration order.
    pub fn to_text(&self) -> String {
        let mut out = format!("schema {}\n", self.name);
        for v in &self.variables {
            out.push_str(&format!(
                "var {} {} {} {}{}\n",
                v.oid,
                v.name,
                v.syntax,
                v.access.as_str(),
                if v.is_table_column { " table" } else { "" }
            ));
        }
        for n in &self.notifications {
            let payload: Vec<String> = n.payload.iter().map(|o| o.to_string()).collect();
            out.push_str(&format!("notif {} {}\n", n.name, payload.join(",")));
        }
        out
    }
}

fn parse_oid_field(line: usize, text: Option<&str>) -> Result<Oid, SchemaError> {
    let text = text.ok_or_else(|| SchemaError::new(line, "missing oid"))?;
    Oid::parse(text).map_err(|e| SchemaError::new(line, format!("{e}")))
}

/// Parses one or more schemas from text. Each `schema <name>` line starts a new
/// schema; declarations before the first `schema` line go to a schema named
/// `default_name`.
pub fn parse_schema_text(text: &str, default_name: &str) -> Result<Vec<SchemaFile>, SchemaError> {
    let mut files: Vec<SchemaFile> = Vec::new();
    let fresh = |name: &str| SchemaFile {
        schema: MibSchema::empty(name),
        values: Vec::new(),
        dynamics: Vec::new(),
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        let keyword = fields.next().unwrap_or("");
        if keyword == "schema" {
            let name = fields.next().ok_or_else(|| SchemaError::new(line, "missing schema name"))?;
            files.push(fresh(name));
            continue;
        }
        if files.is_empty() {
            files.push(fresh(default_name));
        }
        let current = files.last_mut().expect("at least one schema");
        match keyword {
            "var" => {
                let oid = parse_oid_field(line, fields.next())?;
                let name = fields.next().ok_or_else(|| SchemaError::new(line, "missing name"))?;
                let syntax: Syntax = fields
                    .next()
                    .ok_or_else(|| SchemaError::new(line, "missing syntax"))?
                    .parse()
                    .map_err(|e| SchemaError::new(line, format!("{e}")))?;
                let access = match fields.next() {
                    Some("ro") => Access::ReadOnly,
                    Some("rw") => Access::ReadWrite,
                    other => {
                        return Err(SchemaError::new(line, format!("bad access {:?}", other.unwrap_or(""))))
                    }
                };
                let is_table_column = match fields.next() {
                    None => false,
                    Some("table") => true,
                    Some(other) => return Err(SchemaError::new(line, format!("unexpected `{other}`"))),
                };
                current.schema.variables.push(VariableDef {
                    oid,
                    name: name.to_string(),
                    syntax,
                    access,
                    is_table_column,
                    description: String::new(),
                });
            }
            "notif" => {
                let name = fields.next().ok_or_else(|| SchemaError::new(line, "missing name"))?;
                let payload = match fields.next() {
                    None => Vec::new(),
                    Some(list) => list
                        .split(',')
                        .map(|o| Oid::parse(o).map_err(|e| SchemaError::new(line, format!("{e}"))))
                        .collect::<Result<Vec<_>, _>>()?,
                };
                current.schema.notifications.push(NotificationDef { name: name.to_string(), payload });
            }
            "dyn" => {
                let oid = parse_oid_field(line, fields.next())?;
                let rule: Dynamics = fields
                    .next()
                    .ok_or_else(|| SchemaError::new(line, "missing dynamics rule"))?
                    .parse()
                    .map_err(|e: String| SchemaError::new(line, e))?;
                current.dynamics.push((oid, rule));
            }
            "val" => {
                let oid = parse_oid_field(line, fields.next())?;
                let value = fields.next().unwrap_or("");
                current.values.push((oid, value.to_string()));
            }
            other => return Err(SchemaError::new(line, format!("unknown directive `{other}`"))),
        }
        if fields.next().is_some() {
            return Err(SchemaError::new(line, "trailing fields"));
        }
    }
    for file in &files {
        file.schema.validate().map_err(|m| SchemaError::new(0, m))?;
    }
    Ok(files)
}

/// Built-in MIB-II-like subset: system group plus the interfaces table.
pub const MIB2_LITE: &str = include_str!("../../schemas/mib2-lite.schema");

/// Built-in vendor-specific schema for simulated devices.
pub const VENDOR_SIM: &str = include_str!("../../schemas/vendor-sim.schema");

pub fn builtin_schemas() -> Vec<MibSchema> {
    [MIB2_LITE, VENDOR_SIM]
        .iter()
        .flat_map(|text| parse_schema_text(text, "builtin").expect("built-in schema parses"))
        .map(|f| f.schema)
        .collect()
}

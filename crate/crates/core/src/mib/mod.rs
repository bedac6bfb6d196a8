//! The MIB data model and the simulated, in-memory "virtual MIB".

mod schema;
mod value;
mod virtual_mib;

use alloc::string::String;

pub use schema::{
    builtin_schemas, parse_schema_text, Access, Dynamics, MibSchema, NotificationDef, SchemaError, SchemaFile,
    VariableDef, MIB2_LITE, VENDOR_SIM,
};
pub use value::{MibValue, Syntax, ValueError};
pub use virtual_mib::{TableRow, VirtualMib};

use crate::oid::Oid;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MibError {
    #[error("no such instance: {0}")]
    NoSuchInstance(Oid),
    #[error("end of MIB")]
    EndOfMib,
    #[error("access denied: {0} is read-only")]
    AccessDenied(Oid),
    #[error("wrong type for {oid}: expected {expected}, got {got}")]
    WrongType { oid: Oid, expected: Syntax, got: Syntax },
    #[error("not a table: {0}")]
    NotATable(Oid),
    #[error("schema error: {0}")]
    Schema(String),
}

/// Well-known instance OIDs of the built-in schemas.
pub mod well_known {
    use crate::oid::Oid;

    pub fn sys_descr() -> Oid {
        Oid::from_slice(&[1, 3, 6, 1, 2, 1, 1, 1, 0])
    }
    pub fn sys_object_id() -> Oid {
        Oid::from_slice(&[1, 3, 6, 1, 2, 1, 1, 2, 0])
    }
    pub fn sys_up_time() -> Oid {
        Oid::from_slice(&[1, 3, 6, 1, 2, 1, 1, 3, 0])
    }
    pub fn sys_name() -> Oid {
        Oid::from_slice(&[1, 3, 6, 1, 2, 1, 1, 5, 0])
    }
    pub fn if_table() -> Oid {
        Oid::from_slice(&[1, 3, 6, 1, 2, 1, 2, 2])
    }
    pub fn if_admin_status(index: u32) -> Oid {
        Oid::from_slice(&[1, 3, 6, 1, 2, 1, 2, 2, 1, 7, index])
    }
    pub fn if_in_octets(index: u32) -> Oid {
        Oid::from_slice(&[1, 3, 6, 1, 2, 1, 2, 2, 1, 10, index])
    }
    pub fn vs_cpu_load() -> Oid {
        Oid::from_slice(&[1, 3, 6, 1, 4, 1, 99999, 1, 1, 0])
    }
    pub fn vs_temperature() -> Oid {
        Oid::from_slice(&[1, 3, 6, 1, 4, 1, 99999, 1, 3, 0])
    }
}

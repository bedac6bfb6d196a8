//! IO-free core of a collapsed network management platform.
//!
//! Everything here is pure state and computation: the MIB model, the
//! management message codec, and the agent- and manager-side state machines
//! for both the pull (request/response polling) and push
//! (publish/subscribe/distribute) management models. Sockets, files and
//! clocks live in the `mf` companion crate, which drives these types.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod agent;
pub mod manager;
pub mod mib;
pub mod oid;
pub mod pct;
pub mod subscription;
pub mod timesync;
pub mod wire;

pub use oid::{compare_oid, Oid, OidError};

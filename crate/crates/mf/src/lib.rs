//! Runtime companion of `mf-core`: configuration files, the persistent
//! repository, HTTP plumbing, the agent and manager daemons and the
//! deterministic fleet simulator.

pub mod agentd;
pub mod config;
pub mod http;
pub mod managerd;
pub mod realnet;
pub mod repository;
pub mod simnet;
pub mod tap;

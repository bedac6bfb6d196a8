//! Which instances a simulated agent offers for collection.

use mf_core::mib::VirtualMib;
use mf_core::Oid;

/// Interface rows on every simulated device.
pub const SIM_INTERFACES: u32 = 16;
/// Scalars plus three counters per interface.
pub const MAX_VARIABLES: usize = 4 + 3 * SIM_INTERFACES as usize;

/// The first `n` collectable instances, in a fixed order: vendor gauges,
/// uptime, then per-interface octet and error counters.
pub fn variable_oids(n: usize) -> Vec<Oid> {
    let vendor = |arc: u32| Oid::from_slice(&[1, 3, 6, 1, 4, 1, 99999, 1, arc, 0]);
    let mut out = vec![vendor(1), vendor(2), vendor(3), Oid::from_slice(&[1, 3, 6, 1, 2, 1, 1, 3, 0])];
    for i in 1..=SIM_INTERFACES {
        for col in [10, 16, 14] {
            out.push(Oid::from_slice(&[1, 3, 6, 1, 2, 1, 2, 2, 1, col, i]));
        }
    }
    out.truncate(n);
    out
}

pub fn device_mib(device: &str, seed: u64) -> VirtualMib {
    VirtualMib::simulated_device(device, SIM_INTERFACES, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variable_exists() {
        let mib = device_mib("d", 1);
        let oids = variable_oids(MAX_VARIABLES);
        assert_eq!(oids.len(), MAX_VARIABLES);
        for oid in &oids {
            assert!(mib.get(oid).is_ok(), "{oid}");
        }
    }
}

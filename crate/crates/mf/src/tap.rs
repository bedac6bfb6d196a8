//! Optional traffic metering for the daemons. A disabled tap costs one
//! branch per send; an enabled one feeds the same `TrafficMeter` the
//! simulator uses, keyed by node names instead of socket addresses.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::simnet::meter::{Direction, TrafficClass, TrafficMeter};

#[derive(Default)]
struct Inner {
    meter: TrafficMeter,
    names: BTreeMap<SocketAddr, String>,
    loss: f64,
    seed: u64,
    rngs: BTreeMap<(String, String), ChaCha8Rng>,
    datagrams: (u64, u64),
}

#[derive(Clone, Default)]
pub struct NetTap {
    inner: Option<Arc<(Instant, Mutex<Inner>)>>,
}

impl NetTap {
    pub fn disabled() -> Self {
        Self::default()
    }

    /// A recording tap. Datagrams are dropped with probability `loss`,
    /// decided per link by a generator seeded from `seed`.
    pub fn recording(loss: f64, seed: u64) -> Self {
        let inner = Inner { loss, seed, ..Inner::default() };
        NetTap { inner: Some(Arc::new((Instant::now(), Mutex::new(inner)))) }
    }

    pub fn is_enabled(&self) -> bool {
        self.inner.is_some()
    }

    /// Names the node listening on `addr`.
    pub fn name(&self, addr: SocketAddr, name: &str) {
        if let Some(inner) = &self.inner {
            inner.1.lock().expect("tap lock").names.insert(addr, name.to_string());
        }
    }

    pub fn resolve(&self, addr: SocketAddr) -> String {
        match &self.inner {
            Some(inner) => inner.1.lock().expect("tap lock").names.get(&addr).cloned().unwrap_or_else(|| addr.to_string()),
            None => addr.to_string(),
        }
    }

    fn direction(from: &str) -> Direction {
        if from.starts_with("manager") {
            Direction::ManagerToAgent
        } else {
            Direction::AgentToManager
        }
    }

    pub fn connection(&self, from: &str, to: &str, class: TrafficClass) {
        if let Some(inner) = &self.inner {
            inner.1.lock().expect("tap lock").meter.connection_opened(from, to, class);
        }
    }

    /// Records a message written to a connection that accepted it.
    pub fn stream_sent(&self, from: &str, to: &str, class: TrafficClass, bytes: usize, ok: bool) {
        if let Some(inner) = &self.inner {
            let t = inner.0.elapsed().as_millis() as u64;
            let mut g = inner.1.lock().expect("tap lock");
            g.meter.sent(t, from, to, Self::direction(from), class, bytes);
            if ok {
                g.meter.delivered(from, to);
            } else {
                g.meter.dropped(from, to);
            }
        }
    }

    /// Records a datagram and decides whether the link loses it. `true` means send it.
    pub fn datagram(&self, from: &str, to: &str, bytes: usize) -> bool {
        let Some(inner) = &self.inner else { return true };
        let t = inner.0.elapsed().as_millis() as u64;
        let mut g = inner.1.lock().expect("tap lock");
        g.meter.sent(t, from, to, Self::direction(from), TrafficClass::Data, bytes);
        let (loss, seed) = (g.loss, g.seed);
        let rng = g.rngs.entry((from.to_string(), to.to_string())).or_insert_with(|| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(crc32fast::hash(format!("{from}->{to}").as_bytes()) as u64);
            r
        });
        let lost = loss > 0.0 && rng.random::<f64>() < loss;
        g.datagrams.0 += 1;
        g.datagrams.1 += lost as u64;
        if lost {
            g.meter.dropped(from, to);
        } else {
            g.meter.delivered(from, to);
        }
        !lost
    }

    /// Datagrams sent and dropped so far.
    pub fn datagrams(&self) -> (u64, u64) {
        self.inner.as_ref().map(|i| i.1.lock().expect("tap lock").datagrams).unwrap_or_default()
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.inner.as_ref().map(|i| i.0.elapsed().as_millis() as u64).unwrap_or(0)
    }

    pub fn meter(&self) -> Option<TrafficMeter> {
        self.inner.as_ref().map(|i| i.1.lock().expect("tap lock").meter.clone())
    }
}

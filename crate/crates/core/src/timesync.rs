//! Clock-offset estimation from two-message probe exchanges.
//!
//! A probe records four timestamps: manager send (`t1`), agent receive
//! (`t2`), agent send (`t3`) and manager receive (`t4`). The offset is the
//! agent clock minus the manager clock; it is exact whenever both directions
//! of the link have equal latency.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;

/// Number of recent samples kept per agent.
pub const WINDOW: usize = 8;

/// Default probe interval: one hour.
pub const DEFAULT_SYNC_INTERVAL_MS: u64 = 3_600_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyncSample {
    pub t1: i64,
    pub t2: i64,
    pub t3: i64,
    pub t4: i64,
    pub offset: i64,
    pub delay: i64,
}

impl SyncSample {
    pub fn from_timestamps(t1: u64, t2: u64, t3: u64, t4: u64) -> Self {
        let (t1, t2, t3, t4) = (t1 as i64, t2 as i64, t3 as i64, t4 as i64);
        let delay = (t4 - t1) - (t3 - t2);
        // floor division keeps the estimate within half a millisecond
        let offset = ((t2 - t1) + (t3 - t4)).div_euclid(2);
        SyncSample { t1, t2, t3, t4, offset, delay }
    }

    /// False when the round trip came out negative, i.e. the timestamps are not sane.
    pub fn is_sane(&self) -> bool {
        self.delay >= 0
    }
}

/// Offset of the minimum-delay sample in the window, or `None` for an empty window.
pub fn best_offset<'a>(samples: impl IntoIterator<Item = &'a SyncSample>) -> Option<i64> {
    samples.into_iter().min_by_key(|s| s.delay).map(|s| s.offset)
}

/// Per-agent sliding windows of sync samples.
#[derive(Debug, Clone, Default)]
pub struct OffsetTable {
    windows: BTreeMap<String, VecDeque<SyncSample>>,
}

impl OffsetTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a sample; insane samples (negative delay) are discarded.
    pub fn record(&mut self, agent: &str, sample: SyncSample) -> bool {
        if !sample.is_sane() {
            return false;
        }
        let window = self.windows.entry(agent.into()).or_default();
        if window.len() == WINDOW {
            window.pop_front();
        }
        window.push_back(sample);
        true
    }

    pub fn offset(&self, agent: &str) -> Option<i64> {
        self.windows.get(agent).and_then(|w| best_offset(w.iter()))
    }

    /// Maps an agent-clock timestamp onto the manager clock. Returns the
    /// uncorrected time and `false` when no offset is known yet.
    pub fn correct(&self, agent: &str, agent_time: u64) -> (u64, bool) {
        match self.offset(agent) {
            Some(offset) => ((agent_time as i64 - offset).max(0) as u64, true),
            None => (agent_time, false),
        }
    }

    pub fn samples(&self, agent: &str) -> impl Iterator<Item = &SyncSample> {
        self.windows.get(agent).into_iter().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        // hand-evaluated: delay = (5-0)-(11-10) = 4; offset = ((10-0)+(11-5))/2 = 8
        let s = SyncSample::from_timestamps(0, 10, 11, 5);
        assert_eq!(s.delay, 4);
        assert_eq!(s.offset, 8);
    }

    #[test]
    fn zero_skew_symmetric() {
        let s = SyncSample::from_timestamps(1000, 1005, 1005, 1010);
        assert_eq!((s.offset, s.delay), (0, 10));
    }

    #[test]
    fn argmin_delay() {
        let mk = |delay: u64, offset: i64| {
            // build timestamps with the requested delay/offset on symmetric legs
            let t1 = 10_000u64;
            let leg = delay / 2;
            let t2 = (t1 as i64 + leg as i64 + offset) as u64;
            let t3 = t2;
            let t4 = t1 + delay;
            SyncSample::from_timestamps(t1, t2, t3, t4)
        };
        let samples = [mk(4, 100), mk(2, 50), mk(9, 7)];
        assert_eq!(best_offset(samples.iter()), Some(50));
        assert_eq!(best_offset(samples[..1].iter()), Some(100));
        assert_eq!(best_offset(core::iter::empty()), None);
    }

    #[test]
    fn window_keeps_last_eight() {
        let mut table = OffsetTable::new();
        for i in 0..20u64 {
            table.record("a", SyncSample::from_timestamps(i, i + 1, i + 1, i + 2));
        }
        assert_eq!(table.samples("a").count(), WINDOW);
        assert!(!table.record("a", SyncSample::from_timestamps(10, 0, 50, 11)));
        assert_eq!(table.correct("nobody", 77), (77, false));
    }

    proptest! {
        #[test]
        fn exact_under_symmetric_latency(skew in -10_000_000i64..10_000_000, latency in 0u64..5000, hold in 0u64..100) {
            let t1 = 1_000_000_000u64;
            let t2 = (t1 as i64 + latency as i64 + skew) as u64;
            let t3 = t2 + hold;
            let t4 = t1 + latency + hold + latency;
            let s = SyncSample::from_timestamps(t1, t2, t3, t4);
            prop_assert_eq!(s.offset, skew);
            prop_assert_eq!(s.delay, 2 * latency as i64);
        }

        #[test]
        fn bounded_by_half_asymmetry(skew in -100_000i64..100_000, up in 0u64..500, down in 0u64..500) {
            let t1 = 1_000_000u64;
            let t2 = (t1 as i64 + up as i64 + skew) as u64;
            let t4 = t1 + up + down;
            let s = SyncSample::from_timestamps(t1, t2, t2, t4);
            let bound = (up as i64 - down as i64).abs() / 2 + 1;
            prop_assert!((s.offset - skew).abs() <= bound);
        }

        #[test]
        fn correction_is_monotone(offsets in prop::collection::vec(-500i64..500, 1..8), times in prop::collection::vec(0u64..1_000_000, 2..20)) {
            let mut table = OffsetTable::new();
            for o in offsets {
                table.record("a", SyncSample::from_timestamps(5000, (5001 + o) as u64, (5001 + o) as u64, 5002));
            }
            let mut sorted: Vec<u64> = times;
            sorted.sort();
            let corrected: Vec<u64> = sorted.iter().map(|&t| table.correct("a", t).0).collect();
            prop_assert!(corrected.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

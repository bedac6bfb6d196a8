use mf_core::timesync::{OffsetTable, SyncSample, WINDOW};
use proptest::prelude::*;

/// t1..t4 for a probe sent at manager time `t`, with one-way delays and agent offset.
fn exchange(t: u64, offset: i64, up: u64, down: u64, hold: u64) -> SyncSample {
    let t2 = (t + down) as i64 + offset;
    let t3 = t2 + hold as i64;
    let t4 = (t3 - offset) as u64 + up;
    SyncSample::from_timestamps(t, t2 as u64, t3 as u64, t4)
}

proptest! {
    #[test]
    fn symmetric_links_give_the_offset_within_a_millisecond(
        offset in -250i64..=250,
        delay in 0u64..200,
        hold in 0u64..20,
        t in 1_000_000u64..2_000_000,
    ) {
        let s = exchange(t, offset, delay, delay, hold);
        prop_assert!((s.offset - offset).abs() <= 1);
        prop_assert_eq!(s.delay as u64, 2 * delay);
    }

    #[test]
    fn asymmetry_error_is_half_the_difference(offset in -1000i64..1000, up in 0u64..100, down in 0u64..100) {
        let s = exchange(1_000_000, offset, up, down, 0);
        let err = s.offset - offset;
        let bound = (up as i64 - down as i64).abs() / 2 + 1;
        prop_assert!(err.abs() <= bound);
    }
}

#[test]
fn minimum_delay_sample_wins() {
    let mut table = OffsetTable::new();
    table.record("a", exchange(0, 250, 40, 2, 0));
    table.record("a", exchange(100, 250, 3, 3, 0));
    table.record("a", exchange(200, 250, 2, 60, 0));
    assert_eq!(table.offset("a"), Some(250));
    for i in 0..WINDOW as u64 {
        table.record("a", exchange(300 + i, 250, 30, 10, 0));
    }
    // the exact sample has left the window
    assert_eq!(table.offset("a"), Some(240));
}

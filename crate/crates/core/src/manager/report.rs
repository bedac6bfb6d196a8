//! Report generation over stored samples: fixed-resolution slots, earliest
//! sample kept per slot, linear interpolation of interior gaps.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::collector::Sample;
use crate::oid::Oid;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReportSpec {
    pub devices: Vec<String>,
    pub oids: Vec<Oid>,
    pub from: u64,
    pub to: u64,
    pub resolution_ms: u64,
}

impl ReportSpec {
    pub fn slot_count(&self) -> u64 {
        if self.resolution_ms == 0 || self.to <= self.from {
            return 0;
        }
        (self.to - self.from).div_ceil(self.resolution_ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Slot {
    pub start: u64,
    pub value: Option<f64>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub interpolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Series {
    pub device: String,
    pub oid: Oid,
    pub slots: Vec<Slot>,
    /// Over received (not interpolated) values.
    pub min: Option<f64>,
    pub avg: Option<f64>,
    pub max: Option<f64>,
    pub received: u64,
    pub expected: u64,
    pub availability: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Report {
    pub spec: ReportSpec,
    pub series: Vec<Series>,
}

pub fn generate_report(spec: &ReportSpec, samples: &[Sample]) -> Report {
    let n = spec.slot_count() as usize;
    let mut series = Vec::new();
    for device in &spec.devices {
        for oid in &spec.oids {
            // earliest sample per slot
            let mut first: Vec<Option<(u64, f64)>> = vec![None; n];
            for s in samples {
                if s.device != *device || s.oid != *oid || s.time < spec.from || s.time >= spec.to {
                    continue;
                }
                let Some(v) = s.value.as_f64() else { continue };
                let i = ((s.time - spec.from) / spec.resolution_ms) as usize;
                if first[i].is_none_or(|(t, _)| s.time < t) {
                    first[i] = Some((s.time, v));
                }
            }
            let filled: Vec<usize> = (0..n).filter(|&i| first[i].is_some()).collect();
            let mut slots: Vec<Slot> = (0..n)
                .map(|i| Slot {
                    start: spec.from + i as u64 * spec.resolution_ms,
                    value: first[i].map(|(_, v)| v),
                    interpolated: false,
                })
                .collect();
            for pair in filled.windows(2) {
                let (j, k) = (pair[0], pair[1]);
                let (vj, vk) = (slots[j].value.unwrap(), slots[k].value.unwrap());
                for (i, slot) in slots.iter_mut().enumerate().take(k).skip(j + 1) {
                    slot.value = Some(vj + (vk - vj) * (i - j) as f64 / (k - j) as f64);
                    slot.interpolated = true;
                }
            }
            let received: Vec<f64> = filled.iter().map(|&i| slots[i].value.unwrap()).collect();
            let (min, avg, max) = if received.is_empty() {
                (None, None, None)
            } else {
                let sum: f64 = received.iter().sum();
                (
                    received.iter().copied().reduce(f64::min),
                    Some(sum / received.len() as f64),
                    received.iter().copied().reduce(f64::max),
                )
            };
            let availability = if n == 0 { 0.0 } else { received.len() as f64 / n as f64 };
            series.push(Series {
                device: device.clone(),
                oid: oid.clone(),
                slots,
                min,
                avg,
                max,
                received: received.len() as u64,
                expected: n as u64,
                availability,
            });
        }
    }
    Report { spec: spec.clone(), series }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mib::{well_known, MibValue};

    fn sample(t: u64, v: u32) -> Sample {
        Sample {
            device: "r1".into(),
            oid: well_known::vs_cpu_load(),
            time: t,
            agent_time: t,
            value: MibValue::Gauge(v),
            corrected: true,
            pulled: false,
            subscription: "s".into(),
            seq: 0,
        }
    }

    fn spec(from: u64, to: u64) -> ReportSpec {
        ReportSpec { devices: vec!["r1".into()], oids: vec![well_known::vs_cpu_load()], from, to, resolution_ms: 1000 }
    }

    #[test]
    fn lossless_full_availability() {
        let samples: Vec<Sample> = (0..10).map(|i| sample(i * 1000 + 500, i as u32)).collect();
        let r = generate_report(&spec(0, 10_000), &samples);
        let s = &r.series[0];
        assert_eq!(s.availability, 1.0);
        assert!(s.slots.iter().all(|slot| !slot.interpolated));
        assert_eq!((s.min, s.max, s.avg), (Some(0.0), Some(9.0), Some(4.5)));
    }

    #[test]
    fn earliest_kept() {
        let r = generate_report(&spec(0, 1000), &[sample(900, 9), sample(100, 1)]);
        assert_eq!(r.series[0].slots[0].value, Some(1.0));
    }

    #[test]
    fn interior_gap_interpolated() {
        let r = generate_report(&spec(0, 5000), &[sample(0, 10), sample(3000, 40)]);
        let s = &r.series[0];
        let vals: Vec<(Option<f64>, bool)> = s.slots.iter().map(|x| (x.value, x.interpolated)).collect();
        assert_eq!(vals, [(Some(10.0), false), (Some(20.0), true), (Some(30.0), true), (Some(40.0), false), (None, false)]);
        assert_eq!(s.received, 2);
        assert_eq!(s.availability, 0.4);
    }

    #[test]
    fn empty_store_zero_availability() {
        let r = generate_report(&spec(0, 3000), &[]);
        assert_eq!(r.series[0].availability, 0.0);
        assert_eq!(r.series[0].min, None);
    }
}

//! Network map status and the registry that fans it out to viewers.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::event::{Event, Severity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Color {
    Green,
    Yellow,
    Red,
}

impl Color {
    /// Color for the highest open severity of a device.
    pub fn for_severity(worst: Option<Severity>) -> Color {
        match worst {
            None => Color::Green,
            Some(s) if s <= 3 => Color::Yellow,
            Some(_) => Color::Red,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Color::Green => "green",
            Color::Yellow => "yellow",
            Color::Red => "red",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviceStatus {
    pub device: String,
    pub color: Color,
    pub last_change: u64,
}

/// Colors derived from an open-event set: a pure function, recomputable from scratch.
pub fn colors_from_open<'a>(open: impl IntoIterator<Item = &'a Event>) -> BTreeMap<String, Color> {
    let mut worst: BTreeMap<String, Severity> = BTreeMap::new();
    for e in open {
        let w = worst.entry(e.source.clone()).or_insert(0);
        *w = (*w).max(e.severity);
    }
    worst.into_iter().map(|(d, s)| (d, Color::for_severity(Some(s)))).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MapState {
    devices: BTreeMap<String, DeviceStatus>,
}

impl MapState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes a device visible (green) before any event mentions it.
    pub fn add_device(&mut self, device: &str, now: u64) {
        self.devices.entry(device.into()).or_insert_with(|| DeviceStatus {
            device: device.into(),
            color: Color::Green,
            last_change: now,
        });
    }

    /// Applies freshly computed colors and returns the statuses that changed.
    pub fn apply(&mut self, colors: &BTreeMap<String, Color>, now: u64) -> Vec<DeviceStatus> {
        let mut changed = Vec::new();
        for device in colors.keys() {
            self.add_device(device, now);
        }
        for status in self.devices.values_mut() {
            let color = colors.get(&status.device).copied().unwrap_or(Color::Green);
            if status.color != color {
                status.color = color;
                status.last_change = now;
                changed.push(status.clone());
            }
        }
        changed
    }

    pub fn snapshot(&self) -> Vec<DeviceStatus> {
        self.devices.values().cloned().collect()
    }

    pub fn color(&self, device: &str) -> Option<Color> {
        self.devices.get(device).map(|s| s.color)
    }
}

/// What a registered viewer receives.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "kebab-case"))]
pub enum FeedItem {
    Snapshot { devices: Vec<DeviceStatus> },
    Delta { status: DeviceStatus },
    Event { event: Event },
}

/// A map viewer. Returning `false` from `deliver` marks it dead.
pub trait MapClient {
    fn deliver(&mut self, item: &FeedItem) -> bool;
}

/// Broker between status changes and zero or more viewers.
#[derive(Default)]
pub struct MapRegistry {
    clients: BTreeMap<u64, Box<dyn MapClient + Send>>,
    next_id: u64,
}

impl core::fmt::Debug for MapRegistry {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("MapRegistry").field("clients", &self.clients.len()).finish()
    }
}

impl MapRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a viewer; it first receives the full current snapshot.
    pub fn register(&mut self, mut client: Box<dyn MapClient + Send>, map: &MapState) -> Option<u64> {
        if !client.deliver(&FeedItem::Snapshot { devices: map.snapshot() }) {
            return None;
        }
        self.next_id += 1;
        self.clients.insert(self.next_id, client);
        Some(self.next_id)
    }

    pub fn unregister(&mut self, id: u64) -> bool {
        self.clients.remove(&id).is_some()
    }

    pub fn broadcast(&mut self, item: &FeedItem) {
        self.clients.retain(|_, c| c.deliver(item));
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }
}

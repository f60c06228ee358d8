use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::ids::{BleId, Timestamp, Window};

use super::LocationFix;

type RowId = u64;

/// A facility's Locations table: at most one fix per device per timestamp.
///
/// Hashed by device (each device's fixes kept time-ordered) with a global
/// time index for range queries.
#[derive(Debug, Default, Clone)]
pub struct LocationTable {
    rows: HashMap<RowId, LocationFix>,
    next_row: RowId,
    by_device: HashMap<BleId, BTreeMap<Timestamp, RowId>>,
    by_time: BTreeSet<(Timestamp, RowId)>,
}

impl LocationTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false (and stores nothing) if the device already has a fix
    /// at that time.
    pub fn insert(&mut self, fix: LocationFix) -> bool {
        let per_device = self.by_device.entry(fix.device.clone()).or_default();
        if per_device.contains_key(&fix.time) {
            return false;
        }
        let row = self.next_row;
        self.next_row += 1;
        per_device.insert(fix.time, row);
        self.by_time.insert((fix.time, row));
        self.rows.insert(row, fix);
        true
    }

    /// Fixes of `device` inside `window`, time-ordered.
    pub fn fixes_for(&self, device: &BleId, window: Window) -> Vec<&LocationFix> {
        self.by_device
            .get(device)
            .map(|m| m.range(window.start..=window.end).map(|(_, r)| &self.rows[r]).collect())
            .unwrap_or_default()
    }

    /// All fixes inside `window`, ordered by (time, insertion).
    pub fn fixes_in(&self, window: Window) -> impl Iterator<Item = &LocationFix> {
        self.by_time
            .range((window.start, 0)..=(window.end, RowId::MAX))
            .map(|(_, r)| &self.rows[r])
    }

    pub fn wipe_before(&mut self, cutoff: Timestamp) -> usize {
        let before = self.rows.len();
        let keep = self.by_time.split_off(&(cutoff, 0));
        for (_, row) in std::mem::replace(&mut self.by_time, keep) {
            self.rows.remove(&row);
        }
        for m in self.by_device.values_mut() {
            *m = m.split_off(&cutoff);
        }
        self.by_device.retain(|_, m| !m.is_empty());
        before - self.rows.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LocationFix> {
        self.rows.values()
    }

    pub fn sorted(&self) -> Vec<&LocationFix> {
        self.by_time.iter().map(|(_, r)| &self.rows[r]).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn min_time(&self) -> Option<Timestamp> {
        self.by_time.first().map(|(t, _)| *t)
    }

    pub fn is_coherent(&self) -> bool {
        let dev_total: usize = self.by_device.values().map(BTreeMap::len).sum();
        dev_total == self.rows.len()
            && self.by_time.len() == self.rows.len()
            && self.rows.iter().all(|(row, f)| {
                self.by_time.contains(&(f.time, *row))
                    && self.by_device.get(&f.device).and_then(|m| m.get(&f.time)) == Some(row)
            })
    }
}

use std::collections::{BTreeSet, HashMap};

use crate::ids::{BleId, Timestamp, Window};

use super::ContactEvent;

type RowId = u64;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Sighting {
    time: Timestamp,
    distance: f64,
}

#[derive(Debug, Clone)]
struct StoredContact {
    event: ContactEvent,
    /// Sighting reported by `device_a` (slot 0) and by `device_b` (slot 1).
    sightings: [Option<Sighting>; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SightingOutcome {
    /// A new contact event was created.
    Stored,
    /// Merged with the counterpart's sighting of the same encounter.
    Merged,
    /// The same sighting is already in the table.
    Duplicate,
}

/// A facility's Contacts table.
///
/// Each event is indexed under both devices, so a query keyed by either one
/// finds it. A pair index supports merging mutual sightings.
#[derive(Debug, Default, Clone)]
pub struct ContactTable {
    rows: HashMap<RowId, StoredContact>,
    next_row: RowId,
    by_device: HashMap<BleId, BTreeSet<(Timestamp, RowId)>>,
    by_pair: HashMap<(BleId, BleId), BTreeSet<(Timestamp, RowId)>>,
}

fn ordered(a: &BleId, b: &BleId) -> (BleId, BleId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

impl ContactTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records that `observer` sighted `observed` at `time`, `distance`
    /// meters away.
    ///
    /// When the counterpart already reported the same encounter within
    /// `merge_window` seconds and that event has no sighting from `observer`
    /// yet, the two merge: the event keeps the earlier time and the mean
    /// distance. Re-recording an identical sighting is a no-op.
    pub fn record_sighting(
        &mut self,
        observer: &BleId,
        observed: &BleId,
        time: Timestamp,
        distance: f64,
        merge_window: u64,
    ) -> SightingOutcome {
        debug_assert!(observer != observed);
        let pair = ordered(observer, observed);
        let slot = usize::from(observer != &pair.0);
        let incoming = Sighting { time, distance };
        let range = (time.saturating_sub(merge_window), 0)..=(time.saturating_add(merge_window), RowId::MAX);

        let mut best: Option<(u64, Timestamp, RowId)> = None;
        if let Some(set) = self.by_pair.get(&pair) {
            for &(_, row) in set.range(range) {
                let stored = &self.rows[&row];
                match (stored.sightings[slot], stored.sightings[1 - slot]) {
                    (Some(s), _) if s.time == time && s.distance.to_bits() == distance.to_bits() => {
                        return SightingOutcome::Duplicate;
                    }
                    (None, Some(other)) if other.time.abs_diff(time) <= merge_window => {
                        let key = (other.time.abs_diff(time), other.time, row);
                        if best.is_none_or(|b| key < b) {
                            best = Some(key);
                        }
                    }
                    _ => {}
                }
            }
        }

        if let Some((_, _, row)) = best {
            let stored = self.rows.get_mut(&row).expect("indexed row");
            let old_time = stored.event.time;
            stored.sightings[slot] = Some(incoming);
            stored.event.distance = (stored.event.distance + distance) / 2.0;
            stored.event.time = old_time.min(time);
            let new_time = stored.event.time;
            if new_time != old_time {
                let (a, b) = (stored.event.device_a.clone(), stored.event.device_b.clone());
                for key in [&a, &b] {
                    let set = self.by_device.get_mut(key).expect("indexed device");
                    set.remove(&(old_time, row));
                    set.insert((new_time, row));
                }
                let set = self.by_pair.get_mut(&pair).expect("indexed pair");
                set.remove(&(old_time, row));
                set.insert((new_time, row));
            }
            return SightingOutcome::Merged;
        }

        let mut sightings = [None, None];
        sightings[slot] = Some(incoming);
        self.push(
            ContactEvent {
                device_a: pair.0,
                device_b: pair.1,
                time,
                distance,
            },
            sightings,
        );
        SightingOutcome::Stored
    }

    /// Inserts a finished event (e.g. from a snapshot). It will not merge
    /// with later sightings.
    pub fn insert(&mut self, event: ContactEvent) {
        let (a, b) = ordered(&event.device_a, &event.device_b);
        let s = Some(Sighting {
            time: event.time,
            distance: event.distance,
        });
        self.push(
            ContactEvent {
                device_a: a,
                device_b: b,
                ..event
            },
            [s, s],
        );
    }

    fn push(&mut self, event: ContactEvent, sightings: [Option<Sighting>; 2]) {
        let row = self.next_row;
        self.next_row += 1;
        let key = (event.time, row);
        self.by_device.entry(event.device_a.clone()).or_default().insert(key);
        self.by_device.entry(event.device_b.clone()).or_default().insert(key);
        self.by_pair
            .entry((event.device_a.clone(), event.device_b.clone()))
            .or_default()
            .insert(key);
        self.rows.insert(row, StoredContact { event, sightings });
    }

    /// Events involving `device` with time inside `window`, oldest first.
    pub fn events_for(&self, device: &BleId, window: Window) -> Vec<&ContactEvent> {
        let Some(set) = self.by_device.get(device) else {
            return Vec::new();
        };
        set.range((window.start, 0)..=(window.end, RowId::MAX))
            .map(|(_, row)| &self.rows[row].event)
            .collect()
    }

    pub fn wipe_before(&mut self, cutoff: Timestamp) -> usize {
        let before = self.rows.len();
        self.rows.retain(|_, c| c.event.time >= cutoff);
        for set in self.by_device.values_mut().chain(self.by_pair.values_mut()) {
            *set = set.split_off(&(cutoff, 0));
        }
        self.by_device.retain(|_, s| !s.is_empty());
        self.by_pair.retain(|_, s| !s.is_empty());
        before - self.rows.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ContactEvent> {
        self.rows.values().map(|c| &c.event)
    }

    /// Events in insertion order.
    pub fn sorted(&self) -> Vec<&ContactEvent> {
        let mut rows: Vec<_> = self.rows.iter().collect();
        rows.sort_by_key(|(row, _)| **row);
        rows.into_iter().map(|(_, c)| &c.event).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn min_time(&self) -> Option<Timestamp> {
        self.rows.values().map(|c| c.event.time).min()
    }

    pub fn is_coherent(&self) -> bool {
        let dev_total: usize = self.by_device.values().map(BTreeSet::len).sum();
        let pair_total: usize = self.by_pair.values().map(BTreeSet::len).sum();
        dev_total == 2 * self.rows.len()
            && pair_total == self.rows.len()
            && self.rows.iter().all(|(row, c)| {
                let key = (c.event.time, *row);
                let e = &c.event;
                e.device_a < e.device_b
                    && self.by_device.get(&e.device_a).is_some_and(|s| s.contains(&key))
                    && self.by_device.get(&e.device_b).is_some_and(|s| s.contains(&key))
                    && self
                        .by_pair
                        .get(&(e.device_a.clone(), e.device_b.clone()))
                        .is_some_and(|s| s.contains(&key))
            })
    }
}

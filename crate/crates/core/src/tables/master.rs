use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ids::{BleId, Timestamp, VisitorId, Window};

use super::MasterRecord;

/// A facility's Master table, hashed by visitor and by device.
///
/// Per device the visit windows are kept sorted by `time_in` and never
/// overlap: a new visit must start strictly after the previous one ended.
#[derive(Debug, Default, Clone)]
pub struct MasterTable {
    rows: HashMap<VisitorId, MasterRecord>,
    by_device: HashMap<BleId, Vec<VisitorId>>,
}

impl MasterTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts an open visit of `visitor` holding `device` from `time_in`.
    pub fn open(&mut self, visitor: VisitorId, device: BleId, time_in: Timestamp) -> Result<()> {
        self.insert(MasterRecord {
            visitor,
            device,
            time_in,
            time_out: None,
        })
    }

    /// Inserts a complete record, checking every table invariant.
    pub fn insert(&mut self, rec: MasterRecord) -> Result<()> {
        if self.rows.contains_key(&rec.visitor) {
            return Err(Error::DuplicateVisitor(rec.visitor));
        }
        if let Some(out) = rec.time_out {
            if out < rec.time_in {
                return Err(Error::SignOutBeforeSignIn {
                    time_in: rec.time_in,
                    now: out,
                });
            }
        }
        let window = rec.time_out.map(|out| Window::new(rec.time_in, out));
        let list = self.by_device.get(&rec.device).map(Vec::as_slice).unwrap_or(&[]);
        // Records may arrive out of order from snapshots, so check all of them.
        for v in list {
            let other = &self.rows[v];
            if other.time_out.is_none() && rec.time_out.is_none() {
                return Err(Error::DeviceBusy(rec.device.clone()));
            }
            let other_end = other.time_out.unwrap_or(Timestamp::MAX);
            let end = window.map_or(Timestamp::MAX, |w| w.end);
            if Window::new(other.time_in, other_end).intersects(&Window::new(rec.time_in, end)) {
                return Err(if other.time_out.is_none() {
                    Error::DeviceBusy(rec.device.clone())
                } else {
                    Error::WindowOverlap {
                        device: rec.device.clone(),
                        time: rec.time_in,
                    }
                });
            }
        }
        let list = self.by_device.entry(rec.device.clone()).or_default();
        let rows = &self.rows;
        let pos = list.partition_point(|v| rows[v].time_in < rec.time_in);
        list.insert(pos, rec.visitor);
        self.rows.insert(rec.visitor, rec);
        Ok(())
    }

    /// Closes the open visit on `device`, returning its visitor.
    pub fn close(&mut self, device: &BleId, now: Timestamp) -> Result<VisitorId> {
        let rec = self
            .open_record(device)
            .ok_or_else(|| Error::DeviceNotAssigned(device.clone()))?;
        if now < rec.time_in {
            return Err(Error::SignOutBeforeSignIn {
                time_in: rec.time_in,
                now,
            });
        }
        let visitor = rec.visitor;
        self.rows.get_mut(&visitor).expect("indexed row").time_out = Some(now);
        Ok(visitor)
    }

    pub fn open_record(&self, device: &BleId) -> Option<&MasterRecord> {
        let last = self.by_device.get(device)?.last()?;
        let rec = &self.rows[last];
        rec.time_out.is_none().then_some(rec)
    }

    pub fn get(&self, visitor: &VisitorId) -> Option<&MasterRecord> {
        self.rows.get(visitor)
    }

    /// Device and visit window of `visitor`. An open visit ends at `now`.
    pub fn lookup(&self, visitor: &VisitorId, now: Timestamp) -> Option<(BleId, Window)> {
        let rec = self.rows.get(visitor)?;
        let end = rec.time_out.unwrap_or(now.max(rec.time_in));
        Some((rec.device.clone(), Window::new(rec.time_in, end)))
    }

    /// Visitor holding `device` at `time`, if any.
    pub fn reverse_lookup(&self, device: &BleId, time: Timestamp) -> Option<VisitorId> {
        let list = self.by_device.get(device)?;
        let idx = list.partition_point(|v| self.rows[v].time_in <= time);
        let candidate = &self.rows[list.get(idx.checked_sub(1)?)?];
        match candidate.time_out {
            Some(out) if time > out => None,
            _ => Some(candidate.visitor),
        }
    }

    pub fn wipe_before(&mut self, cutoff: Timestamp) -> usize {
        let before = self.rows.len();
        self.rows.retain(|_, r| r.retention_time() >= cutoff);
        let rows = &self.rows;
        self.by_device.retain(|_, list| {
            list.retain(|v| rows.contains_key(v));
            !list.is_empty()
        });
        before - self.rows.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MasterRecord> {
        self.rows.values()
    }

    pub fn sorted(&self) -> Vec<&MasterRecord> {
        let mut v: Vec<_> = self.rows.values().collect();
        v.sort_by(|a, b| (a.time_in, &a.device).cmp(&(b.time_in, &b.device)));
        v
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn min_time(&self) -> Option<Timestamp> {
        self.rows.values().map(MasterRecord::retention_time).min()
    }

    pub fn is_coherent(&self) -> bool {
        let indexed: usize = self.by_device.values().map(Vec::len).sum();
        indexed == self.rows.len()
            && self.by_device.iter().all(|(device, list)| {
                list.iter().all(|v| self.rows.get(v).is_some_and(|r| &r.device == device))
                    && list
                        .windows(2)
                        .all(|w| self.rows[&w[0]].time_in <= self.rows[&w[1]].time_in)
            })
    }
}

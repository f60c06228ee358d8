use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ids::{PhoneId, Timestamp, VisitorId, Window};

use super::VisitRecord;

/// The registry's visit table, hashed by visitor and by phone.
#[derive(Debug, Default, Clone)]
pub struct VisitTable {
    rows: HashMap<VisitorId, VisitRecord>,
    by_phone: HashMap<PhoneId, Vec<VisitorId>>,
}

impl VisitTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, rec: VisitRecord) -> Result<()> {
        if self.rows.contains_key(&rec.visitor) {
            return Err(Error::DuplicateVisitor(rec.visitor));
        }
        self.by_phone
            .entry(rec.phone.clone())
            .or_default()
            .push(rec.visitor);
        self.rows.insert(rec.visitor, rec);
        Ok(())
    }

    pub fn remove(&mut self, visitor: &VisitorId) -> Option<VisitRecord> {
        let rec = self.rows.remove(visitor)?;
        if let Some(list) = self.by_phone.get_mut(&rec.phone) {
            list.retain(|v| v != visitor);
            if list.is_empty() {
                self.by_phone.remove(&rec.phone);
            }
        }
        Some(rec)
    }

    /// Visits of `phone` with time inside the closed `period`, oldest first.
    pub fn lookup_by_phone(&self, phone: &PhoneId, period: Window) -> Vec<VisitRecord> {
        let mut out: Vec<VisitRecord> = self
            .by_phone
            .get(phone)
            .into_iter()
            .flatten()
            .filter_map(|v| self.rows.get(v))
            .filter(|r| period.contains(r.time))
            .cloned()
            .collect();
        out.sort_by_key(|r| (r.time, r.visitor));
        out
    }

    pub fn lookup_by_visitor(&self, visitor: &VisitorId) -> Option<&VisitRecord> {
        self.rows.get(visitor)
    }

    pub fn wipe_before(&mut self, cutoff: Timestamp) -> usize {
        let before = self.rows.len();
        self.rows.retain(|_, r| r.time >= cutoff);
        let rows = &self.rows;
        self.by_phone.retain(|_, list| {
            list.retain(|v| rows.contains_key(v));
            !list.is_empty()
        });
        before - self.rows.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &VisitRecord> {
        self.rows.values()
    }

    /// Rows ordered by (time, visitor), for stable snapshots.
    pub fn sorted(&self) -> Vec<&VisitRecord> {
        let mut v: Vec<_> = self.rows.values().collect();
        v.sort_by_key(|r| (r.time, r.visitor));
        v
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn min_time(&self) -> Option<Timestamp> {
        self.rows.values().map(|r| r.time).min()
    }

    pub fn is_coherent(&self) -> bool {
        let indexed: usize = self.by_phone.values().map(Vec::len).sum();
        indexed == self.rows.len()
            && self.rows.values().all(|r| {
                self.by_phone
                    .get(&r.phone)
                    .is_some_and(|l| l.iter().filter(|v| **v == r.visitor).count() == 1)
            })
    }
}

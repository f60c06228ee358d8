//! Record schemas for the registry and facility tables, their hash-indexed
//! stores, and the retention wipe shared by both sides.
//!
//! Every store keeps its base rows plus the hash indexes named for it, and
//! deletes physically. `is_coherent` on each store re-derives the indexes
//! from the base rows; tests call it after randomized insert/wipe sequences.

mod contacts;
mod locations;
mod master;
pub mod snapshot;
mod visits;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ids::{BleId, FacilityId, PhoneId, Timestamp, VisitorId};

pub use contacts::{ContactTable, SightingOutcome};
pub use locations::LocationTable;
pub use master::MasterTable;
pub use visits::VisitTable;

/// Registry row: this phone visited this facility under this pseudonym.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub phone: PhoneId,
    pub facility: FacilityId,
    pub visitor: VisitorId,
    pub time: Timestamp,
}

/// Facility row: this device was held by this pseudonym over a time window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MasterRecord {
    pub visitor: VisitorId,
    pub device: BleId,
    pub time_in: Timestamp,
    pub time_out: Option<Timestamp>,
}

impl MasterRecord {
    /// Timestamp used for retention. Open visits age by `time_in`.
    pub fn retention_time(&self) -> Timestamp {
        self.time_out.unwrap_or(self.time_in)
    }
}

/// Two devices were within `distance` meters of each other at `time`.
///
/// `device_a` is always the lexicographically smaller id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub device_a: BleId,
    pub device_b: BleId,
    pub time: Timestamp,
    pub distance: f64,
}

impl ContactEvent {
    pub fn other(&self, device: &BleId) -> Option<&BleId> {
        if &self.device_a == device {
            Some(&self.device_b)
        } else if &self.device_b == device {
            Some(&self.device_a)
        } else {
            None
        }
    }
}

/// Grid cell plus zone label on a facility map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicLocation {
    pub zone: Arc<str>,
    pub col: u32,
    pub row: u32,
    /// Meters per grid cell.
    pub resolution: f64,
}

impl SymbolicLocation {
    pub fn center(&self) -> (f64, f64) {
        (
            (self.col as f64 + 0.5) * self.resolution,
            (self.row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn center_distance(&self, other: &SymbolicLocation) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }

    pub fn same_cell(&self, other: &SymbolicLocation) -> bool {
        self.col == other.col && self.row == other.row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationFix {
    pub device: BleId,
    pub location: SymbolicLocation,
    pub time: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    /// Seconds.
    pub horizon: u64,
}

impl RetentionPolicy {
    pub const TWO_WEEKS: u64 = 14 * 24 * 3600;

    pub fn new(horizon: u64) -> crate::Result<Self> {
        if horizon == 0 {
            return Err(crate::Error::InvalidParameter(
                "retention horizon must be positive".into(),
            ));
        }
        Ok(RetentionPolicy { horizon })
    }

    /// Records strictly older than this are wiped.
    pub fn cutoff(&self, now: Timestamp) -> Timestamp {
        now.saturating_sub(self.horizon)
    }
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        RetentionPolicy {
            horizon: Self::TWO_WEEKS,
        }
    }
}

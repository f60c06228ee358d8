//! Surface-contact detection: a later visitor settling in a cell the patient
//! had dwelt in.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{BleId, Timestamp, VisitorId, Window};
use crate::location::Trajectory;
use crate::tables::{LocationFix, LocationTable, MasterTable, SymbolicLocation};

/// Fixes further apart than this end a stay.
pub const STAY_GAP: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceParams {
    /// Minimum seconds in a cell for both the patient and the visitor.
    pub dwell: u64,
    /// Maximum seconds between the patient leaving and the visitor arriving.
    pub lag: u64,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        SurfaceParams { dwell: 60, lag: 1800 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceContact {
    pub visitor: VisitorId,
    pub cell: SymbolicLocation,
    pub patient_leave: Timestamp,
    pub visitor_arrive: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stay {
    pub location: SymbolicLocation,
    pub arrive: Timestamp,
    pub leave: Timestamp,
}

impl Stay {
    pub fn dwell(&self) -> u64 {
        self.leave - self.arrive
    }
}

/// Maximal same-cell runs of a time-ordered fix sequence.
pub fn stays<'a>(fixes: impl IntoIterator<Item = &'a LocationFix>) -> Vec<Stay> {
    let mut out: Vec<Stay> = Vec::new();
    for f in fixes {
        match out.last_mut() {
            Some(s) if s.location.same_cell(&f.location) && f.time - s.leave <= STAY_GAP => s.leave = f.time,
            _ => out.push(Stay { location: f.location.clone(), arrive: f.time, leave: f.time }),
        }
    }
    out
}

/// Visitors who dwelt at least `params.dwell` in a cell the patient had
/// dwelt in, arriving within `params.lag` seconds after the patient left.
/// A visitor already there when the patient left is a proximity contact,
/// not a surface contact.
pub fn surface_contacts(
    trajectory: &Trajectory,
    master: &MasterTable,
    table: &LocationTable,
    params: &SurfaceParams,
) -> Vec<SurfaceContact> {
    let patient_stays: Vec<Stay> = stays(&trajectory.fixes).into_iter().filter(|s| s.dwell() >= params.dwell).collect();
    let (Some(first), Some(last)) = (
        patient_stays.iter().map(|s| s.leave).min(),
        patient_stays.iter().map(|s| s.leave).max(),
    ) else {
        return Vec::new();
    };

    // Enough history before the earliest leave to see whether a run was
    // already under way, and enough after the last arrival to measure dwell.
    let span = Window::new(
        first.saturating_sub(STAY_GAP),
        last.saturating_add(params.lag).saturating_add(params.dwell).saturating_add(STAY_GAP),
    );
    let mut runs: BTreeMap<(BleId, VisitorId), Vec<&LocationFix>> = BTreeMap::new();
    for f in table.fixes_in(span) {
        if let Some(v) = master.reverse_lookup(&f.device, f.time) {
            if v != trajectory.visitor {
                runs.entry((f.device.clone(), v)).or_default().push(f);
            }
        }
    }

    let mut found: BTreeMap<(Timestamp, VisitorId, u32, u32), SurfaceContact> = BTreeMap::new();
    for ((_, visitor), mut fixes) in runs {
        fixes.sort_by_key(|f| f.time);
        for stay in stays(fixes) {
            if stay.dwell() < params.dwell {
                continue;
            }
            // latest qualifying patient departure from this cell
            let leave = patient_stays
                .iter()
                .filter(|p| {
                    p.location.same_cell(&stay.location) && stay.arrive > p.leave && stay.arrive - p.leave <= params.lag
                })
                .map(|p| p.leave)
                .max();
            if let Some(patient_leave) = leave {
                found.insert(
                    (stay.arrive, visitor, stay.location.col, stay.location.row),
                    SurfaceContact {
                        visitor,
                        cell: stay.location.clone(),
                        patient_leave,
                        visitor_arrive: stay.arrive,
                    },
                );
            }
        }
    }
    found.into_values().collect()
}

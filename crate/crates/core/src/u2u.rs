//! User-to-user mode: visitors carry BLE gateways that log each other.
//!
//! Device logs are uploaded in batches, each sighting converted to meters
//! and stored symmetrically in the Contacts table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{BleId, Timestamp, VisitorId};
use crate::positioning::PathLossModel;
use crate::tables::{ContactTable, MasterTable, SightingOutcome};

/// Mutual sightings closer than this many seconds are one encounter.
pub const MERGE_WINDOW: u64 = 5;

/// One line of a device's sighting log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReading {
    pub observer: BleId,
    pub observed: BleId,
    pub time: Timestamp,
    /// dBm.
    pub rssi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactHit {
    pub visitor: VisitorId,
    pub time: Timestamp,
    pub estimated_distance: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactIngestStats {
    /// New contact events.
    pub stored: usize,
    pub merged: usize,
    pub duplicates: usize,
    pub self_sightings: usize,
    pub invalid: usize,
}

/// Converts a batch of device logs into contact events.
///
/// The batch is processed in (time, observer, observed) order so the result
/// does not depend on how the uploader ordered it.
pub fn ingest_device_logs(
    table: &mut ContactTable,
    readings: &[RawReading],
    model: &PathLossModel,
) -> ContactIngestStats {
    let mut order: Vec<&RawReading> = readings.iter().collect();
    order.sort_by(|a, b| {
        (a.time, &a.observer, &a.observed)
            .cmp(&(b.time, &b.observer, &b.observed))
            .then(a.rssi.total_cmp(&b.rssi))
    });
    let mut stats = ContactIngestStats::default();
    for r in order {
        if r.observer == r.observed {
            stats.self_sightings += 1;
            continue;
        }
        if !r.rssi.is_finite() {
            stats.invalid += 1;
            continue;
        }
        let distance = model.distance_from_rssi(r.rssi);
        match table.record_sighting(&r.observer, &r.observed, r.time, distance, MERGE_WINDOW) {
            SightingOutcome::Stored => stats.stored += 1,
            SightingOutcome::Merged => stats.merged += 1,
            SightingOutcome::Duplicate => stats.duplicates += 1,
        }
    }
    stats
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactAnswer {
    pub hits: Vec<ContactHit>,
    /// Events whose counterpart device was not assigned at the event time.
    pub unmapped: usize,
}

/// Everyone the visitor's device was in contact with during the visit,
/// re-keyed by the counterpart's pseudonym at the event time.
pub fn query_contacts(
    master: &MasterTable,
    contacts: &ContactTable,
    visitor: &VisitorId,
    now: Timestamp,
) -> Result<ContactAnswer> {
    let (device, window) = master
        .lookup(visitor, now)
        .ok_or(Error::UnknownVisitor(*visitor))?;
    let mut answer = ContactAnswer::default();
    for event in contacts.events_for(&device, window) {
        let other = event.other(&device).expect("indexed under this device");
        match master.reverse_lookup(other, event.time) {
            Some(v) if v != *visitor => answer.hits.push(ContactHit {
                visitor: v,
                time: event.time,
                estimated_distance: event.distance,
            }),
            _ => answer.unmapped += 1,
        }
    }
    answer.hits.sort_by(|a, b| {
        (a.time, a.visitor)
            .cmp(&(b.time, b.visitor))
            .then(a.estimated_distance.total_cmp(&b.estimated_distance))
    });
    Ok(answer)
}

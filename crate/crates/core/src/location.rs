//! Location-based mode: visitors carry beacons, fixed gateways hear them,
//! and trilateration fills the Locations table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{BleId, Timestamp, VisitorId};
use crate::positioning::{
    st_range_query, trilaterate, FacilityLayout, GatewayReading, Geometry, PathLossModel, ProximityParams,
    TrilaterationError, EPOCH_SECONDS,
};
use crate::tables::{LocationFix, LocationTable, MasterTable, SymbolicLocation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityHit {
    pub visitor: VisitorId,
    pub location: SymbolicLocation,
    pub time: Timestamp,
    /// Meters.
    pub spatial_proximity: f64,
    /// Seconds, absolute.
    pub temporal_proximity: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub visitor: VisitorId,
    /// Strictly increasing in time.
    pub fixes: Vec<LocationFix>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationIngestStats {
    pub fixes: usize,
    /// Epochs where fewer than three gateways heard the device.
    pub no_fix: usize,
    pub unknown_gateway: usize,
    pub degenerate: usize,
    /// Epochs that already had a fix for the device.
    pub duplicates: usize,
}

/// Buckets readings into per-device epochs, trilaterates each and appends
/// the fixes.
///
/// A fix is stamped with the earliest reading time of its epoch, so it
/// always falls inside the interval the beacon was actually broadcasting.
pub fn ingest_gateway_readings(
    table: &mut LocationTable,
    layout: &FacilityLayout,
    model: &PathLossModel,
    readings: &[GatewayReading],
) -> LocationIngestStats {
    let mut stats = LocationIngestStats::default();
    let mut epochs: BTreeMap<(&BleId, Timestamp), Vec<GatewayReading>> = BTreeMap::new();
    for r in readings {
        if layout.gateway(&r.gateway).is_none() {
            stats.unknown_gateway += 1;
            continue;
        }
        epochs
            .entry((&r.device, r.time / EPOCH_SECONDS))
            .or_default()
            .push(r.clone());
    }
    for ((device, _), group) in epochs {
        let time = group.iter().map(|r| r.time).min().expect("non-empty epoch");
        match trilaterate(&group, layout, model) {
            Ok(fix) => {
                if fix.geometry == Geometry::CentroidFallback {
                    stats.degenerate += 1;
                }
                let stored = table.insert(LocationFix {
                    device: device.clone(),
                    location: fix.location,
                    time,
                });
                if stored {
                    stats.fixes += 1;
                } else {
                    stats.duplicates += 1;
                }
            }
            Err(TrilaterationError::TooFewGateways(_)) => stats.no_fix += 1,
            Err(TrilaterationError::UnknownGateway(_)) => unreachable!("filtered above"),
        }
    }
    stats
}

pub fn get_trajectory(
    master: &MasterTable,
    table: &LocationTable,
    visitor: &VisitorId,
    now: Timestamp,
) -> Result<Trajectory> {
    let (device, window) = master
        .lookup(visitor, now)
        .ok_or(Error::UnknownVisitor(*visitor))?;
    Ok(Trajectory {
        visitor: *visitor,
        fixes: table.fixes_for(&device, window).into_iter().cloned().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityAnswer {
    pub hits: Vec<ProximityHit>,
    pub trajectory: Trajectory,
    /// Nearby fixes of devices nobody held at the time.
    pub unmapped: usize,
}

/// Visitors whose fixes came within `params` of the visitor's trajectory,
/// one hit per qualifying fix.
pub fn query_proximity(
    master: &MasterTable,
    table: &LocationTable,
    visitor: &VisitorId,
    params: &ProximityParams,
    now: Timestamp,
) -> Result<ProximityAnswer> {
    params.validate()?;
    let trajectory = get_trajectory(master, table, visitor, now)?;
    let mut hits = Vec::new();
    let mut unmapped = 0;
    for m in st_range_query(table, &trajectory.fixes, params) {
        match master.reverse_lookup(&m.fix.device, m.fix.time) {
            Some(v) if v != *visitor => hits.push(ProximityHit {
                visitor: v,
                location: m.fix.location,
                time: m.fix.time,
                spatial_proximity: m.spatial_gap,
                temporal_proximity: m.temporal_gap,
            }),
            Some(_) => {}
            None => unmapped += 1,
        }
    }
    hits.sort_by_key(|h| (h.time, h.visitor));
    Ok(ProximityAnswer {
        hits,
        trajectory,
        unmapped,
    })
}

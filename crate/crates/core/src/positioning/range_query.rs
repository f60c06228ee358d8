use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{BleId, Window};
use crate::tables::{LocationFix, LocationTable};

/// Spatio-temporal closeness thresholds, both inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProximityParams {
    /// Meters between cell centers.
    pub radius: f64,
    /// Seconds.
    pub window: u64,
}

impl Default for ProximityParams {
    fn default() -> Self {
        ProximityParams {
            radius: 10.0,
            window: 600,
        }
    }
}

impl ProximityParams {
    pub fn new(radius: f64, window: u64) -> Result<Self> {
        let p = ProximityParams { radius, window };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) || self.window == 0 {
            return Err(Error::InvalidParameter(format!(
                "proximity radius {} and window {} must be positive",
                self.radius, self.window
            )));
        }
        Ok(())
    }
}

/// A fix of another device that came within range of the reference
/// trajectory, with the smallest spatial and temporal gaps over all
/// qualifying reference fixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeMatch {
    pub fix: LocationFix,
    pub spatial_gap: f64,
    pub temporal_gap: u64,
}

/// Fixes of other devices within `params.radius` meters (cell-center
/// distance) and `params.window` seconds of some fix of `trajectory`.
///
/// The trajectory's own fixes are excluded; fixes of the same device outside
/// the trajectory (a later holder of the device) are not. Output is ordered
/// by (time, device).
pub fn st_range_query(table: &LocationTable, trajectory: &[LocationFix], params: &ProximityParams) -> Vec<RangeMatch> {
    if trajectory.is_empty() {
        return Vec::new();
    }
    let mut path: Vec<&LocationFix> = trajectory.iter().collect();
    path.sort_by_key(|f| f.time);
    let own: HashSet<(&BleId, u64)> = path.iter().map(|f| (&f.device, f.time)).collect();
    let span = Window::new(
        path[0].time.saturating_sub(params.window),
        path[path.len() - 1].time.saturating_add(params.window),
    );

    let mut out = Vec::new();
    for fix in table.fixes_in(span) {
        if own.contains(&(&fix.device, fix.time)) {
            continue;
        }
        let lo = path.partition_point(|p| p.time < fix.time.saturating_sub(params.window));
        let mut best: Option<(f64, u64)> = None;
        for p in &path[lo..] {
            let dt = p.time.abs_diff(fix.time);
            if p.time > fix.time && dt > params.window {
                break;
            }
            if dt > params.window {
                continue;
            }
            let ds = p.location.center_distance(&fix.location);
            if ds <= params.radius {
                best = Some(match best {
                    None => (ds, dt),
                    Some((bs, bt)) => (bs.min(ds), bt.min(dt)),
                });
            }
        }
        if let Some((spatial_gap, temporal_gap)) = best {
            out.push(RangeMatch {
                fix: fix.clone(),
                spatial_gap,
                temporal_gap,
            });
        }
    }
    out.sort_by(|a, b| (a.fix.time, &a.fix.device).cmp(&(b.fix.time, &b.fix.device)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::SymbolicLocation;

    fn fix(device: &str, col: u32, row: u32, time: u64) -> LocationFix {
        LocationFix {
            device: device.into(),
            location: SymbolicLocation { zone: "z".into(), col, row, resolution: 1.0 },
            time,
        }
    }

    fn table(fixes: &[LocationFix]) -> LocationTable {
        let mut t = LocationTable::new();
        for f in fixes {
            t.insert(f.clone());
        }
        t
    }

    #[test]
    fn same_cell_same_time() {
        let p = fix("P", 3, 3, 100);
        let t = table(&[p.clone(), fix("Q", 3, 3, 100)]);
        let got = st_range_query(&t, &[p], &ProximityParams::default());
        assert_eq!(got.len(), 1);
        assert_eq!((got[0].spatial_gap, got[0].temporal_gap), (0.0, 0));
        assert_eq!(got[0].fix.device.as_str(), "Q");
    }

    #[test]
    fn thresholds_are_inclusive() {
        let p = fix("P", 0, 0, 1000);
        let t = table(&[fix("Q", 10, 0, 1600), fix("R", 11, 0, 1000), fix("S", 0, 0, 1601)]);
        let got = st_range_query(&t, &[p], &ProximityParams::default());
        let devices: Vec<_> = got.iter().map(|m| m.fix.device.as_str()).collect();
        assert_eq!(devices, vec!["Q"]);
        assert_eq!((got[0].spatial_gap, got[0].temporal_gap), (10.0, 600));
    }

    #[test]
    fn gaps_are_minimised_independently() {
        let traj = vec![fix("P", 0, 0, 100), fix("P", 5, 0, 150)];
        let t = table(&[fix("Q", 5, 0, 100)]);
        let got = st_range_query(&t, &traj, &ProximityParams::default());
        assert_eq!((got[0].spatial_gap, got[0].temporal_gap), (0.0, 0));
    }

    #[test]
    fn empty_trajectory() {
        let t = table(&[fix("Q", 5, 0, 100)]);
        assert!(st_range_query(&t, &[], &ProximityParams::default()).is_empty());
    }

    #[test]
    fn params_validated() {
        assert!(ProximityParams::new(0.0, 10).is_err());
        assert!(ProximityParams::new(1.0, 0).is_err());
        assert!(ProximityParams::new(f64::NAN, 1).is_err());
    }
}

//! Context-aware filters applied to facility answers.
//!
//! Each filter is a predicate: the signal and wall filters judge single
//! hits, the persistence filter judges a visitor's whole hit series. The
//! pipeline evaluates every enabled predicate against the raw answer and
//! keeps the hits that pass all of them, so stage order cannot matter.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{Timestamp, VisitorId};
use crate::location::{ProximityHit, Trajectory};
use crate::positioning::{FacilityLayout, ProximityParams};
use crate::u2u::ContactHit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FacilityType {
    Stadium,
    Restaurant,
    Mall,
    Office,
    #[default]
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextProfile {
    pub facility_type: FacilityType,
    /// Meters; `None` is unbounded.
    pub max_distance: Option<f64>,
    /// Seconds.
    pub min_persistence: u64,
    /// Largest gap (seconds) between hits that still continues a run.
    pub persistence_gap: u64,
    pub use_wall_occlusion: bool,
    /// Seconds a visitor must stay in a cell for surface-contact analysis.
    pub surface_dwell: u64,
    /// Seconds after the patient leaves a cell during which later
    /// occupants count as surface contacts.
    pub surface_lag: u64,
}

impl ContextProfile {
    pub fn for_type(facility_type: FacilityType) -> Self {
        let base = ContextProfile {
            facility_type,
            max_distance: None,
            min_persistence: 0,
            persistence_gap: 120,
            use_wall_occlusion: false,
            surface_dwell: 60,
            surface_lag: 1800,
        };
        match facility_type {
            FacilityType::Stadium => ContextProfile { max_distance: Some(2.0), ..base },
            FacilityType::Restaurant => ContextProfile { min_persistence: 600, ..base },
            FacilityType::Mall => ContextProfile { max_distance: Some(5.0), ..base },
            FacilityType::Office => ContextProfile { min_persistence: 300, ..base },
            FacilityType::Generic => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.max_distance {
            if d.is_nan() || d <= 0.0 {
                return Err(Error::InvalidParameter(format!("max_distance {d} must be positive")));
            }
        }
        Ok(())
    }
}

impl Default for ContextProfile {
    fn default() -> Self {
        Self::for_type(FacilityType::Generic)
    }
}

/// What the filters need to know about a hit.
pub trait Hit: Clone {
    fn visitor(&self) -> VisitorId;
    fn time(&self) -> Timestamp;
    /// Meters.
    fn distance(&self) -> f64;
}

impl Hit for ContactHit {
    fn visitor(&self) -> VisitorId {
        self.visitor
    }

    fn time(&self) -> Timestamp {
        self.time
    }

    fn distance(&self) -> f64 {
        self.estimated_distance
    }
}

impl Hit for ProximityHit {
    fn visitor(&self) -> VisitorId {
        self.visitor
    }

    fn time(&self) -> Timestamp {
        self.time
    }

    fn distance(&self) -> f64 {
        self.spatial_proximity
    }
}

fn within_distance<H: Hit>(hit: &H, profile: &ContextProfile) -> bool {
    profile.max_distance.is_none_or(|d| hit.distance() <= d)
}

/// Keeps hits no farther than `profile.max_distance`.
pub fn filter_signal_profile<H: Hit>(hits: &[H], profile: &ContextProfile) -> Vec<H> {
    hits.iter().filter(|h| within_distance(*h, profile)).cloned().collect()
}

/// Visitors with a run of hits (consecutive gaps at most `persistence_gap`)
/// spanning at least `min_persistence` seconds.
pub fn persistent_visitors<H: Hit>(hits: &[H], profile: &ContextProfile) -> BTreeSet<VisitorId> {
    let mut times: BTreeMap<VisitorId, Vec<Timestamp>> = BTreeMap::new();
    for h in hits {
        times.entry(h.visitor()).or_default().push(h.time());
    }
    times
        .into_iter()
        .filter(|(_, ts)| longest_run(ts, profile.persistence_gap) >= profile.min_persistence)
        .map(|(v, _)| v)
        .collect()
}

fn longest_run(times: &[Timestamp], max_gap: u64) -> u64 {
    let mut ts = times.to_vec();
    ts.sort_unstable();
    let mut best = 0;
    let mut start = ts[0];
    for w in ts.windows(2) {
        if w[1] - w[0] > max_gap {
            start = w[1];
        }
        best = best.max(w[1] - start);
    }
    best
}

/// Keeps every hit of visitors whose contact was persistent.
pub fn filter_persistence<H: Hit>(hits: &[H], profile: &ContextProfile) -> Vec<H> {
    let keep = persistent_visitors(hits, profile);
    hits.iter().filter(|h| keep.contains(&h.visitor())).cloned().collect()
}

/// Whether every patient fix that put `hit` in range sees it through a wall.
fn occluded(hit: &ProximityHit, trajectory: &Trajectory, layout: &FacilityLayout, params: &ProximityParams) -> bool {
    let target = hit.location.center();
    let mut qualifying = trajectory
        .fixes
        .iter()
        .filter(|p| p.time.abs_diff(hit.time) <= params.window && p.location.center_distance(&hit.location) <= params.radius)
        .peekable();
    if qualifying.peek().is_none() {
        return false;
    }
    qualifying.all(|p| !p.location.same_cell(&hit.location) && layout.wall_between(p.location.center(), target))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionOutcome {
    pub hits: Vec<ProximityHit>,
    /// Set when no layout was available and the hits passed through.
    pub warning: Option<String>,
}

/// Drops hits separated from the patient by a wall at every qualifying
/// moment.
pub fn filter_wall_occlusion(
    hits: &[ProximityHit],
    trajectory: &Trajectory,
    layout: Option<&FacilityLayout>,
    params: &ProximityParams,
) -> OcclusionOutcome {
    match layout {
        None => OcclusionOutcome {
            hits: hits.to_vec(),
            warning: Some("no facility layout; wall occlusion skipped".into()),
        },
        Some(layout) => OcclusionOutcome {
            hits: hits.iter().filter(|h| !occluded(h, trajectory, layout, params)).cloned().collect(),
            warning: None,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    Signal,
    Persistence,
    WallOcclusion,
}

impl Filter {
    pub const ALL: [Filter; 3] = [Filter::Signal, Filter::Persistence, Filter::WallOcclusion];
}

/// Inputs the wall filter needs; absent for user-to-user answers.
pub struct Geometry<'a> {
    pub trajectory: &'a Trajectory,
    pub layout: Option<&'a FacilityLayout>,
    pub params: &'a ProximityParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filtered<H> {
    pub hits: Vec<H>,
    pub warnings: Vec<String>,
}

/// Per-hit verdict of the wall stage.
pub struct WallVerdict {
    pub keep: Vec<bool>,
    pub warning: Option<String>,
}

impl WallVerdict {
    fn pass(n: usize, warning: &str) -> Self {
        WallVerdict { keep: vec![true; n], warning: Some(warning.into()) }
    }
}

/// Applies the stages in `order`, each judged against `raw`.
pub fn apply_filters<H: Hit>(
    raw: &[H],
    profile: &ContextProfile,
    order: &[Filter],
    wall: impl Fn(&[H]) -> WallVerdict,
) -> Filtered<H> {
    let mut keep = vec![true; raw.len()];
    let mut warnings = Vec::new();
    for stage in order {
        let passed: Vec<bool> = match stage {
            Filter::Signal => raw.iter().map(|h| within_distance(h, profile)).collect(),
            Filter::Persistence => {
                let visitors = persistent_visitors(raw, profile);
                raw.iter().map(|h| visitors.contains(&h.visitor())).collect()
            }
            Filter::WallOcclusion => {
                let out = wall(raw);
                warnings.extend(out.warning);
                out.keep
            }
        };
        for (k, p) in keep.iter_mut().zip(passed) {
            *k &= p;
        }
    }
    Filtered {
        hits: raw.iter().zip(keep).filter(|(_, k)| *k).map(|(h, _)| h.clone()).collect(),
        warnings,
    }
}

/// Enabled stages of a profile, in a fixed default order.
pub fn stages(profile: &ContextProfile, has_geometry: bool) -> Vec<Filter> {
    let mut out = Vec::new();
    if profile.max_distance.is_some() {
        out.push(Filter::Signal);
    }
    if profile.min_persistence > 0 {
        out.push(Filter::Persistence);
    }
    if profile.use_wall_occlusion && has_geometry {
        out.push(Filter::WallOcclusion);
    }
    out
}

pub fn filter_contact_hits(raw: &[ContactHit], profile: &ContextProfile, order: &[Filter]) -> Filtered<ContactHit> {
    apply_filters(raw, profile, order, |h| WallVerdict::pass(h.len(), "user-to-user hits carry no location; wall occlusion skipped"))
}

pub fn filter_proximity_hits(
    raw: &[ProximityHit],
    profile: &ContextProfile,
    order: &[Filter],
    geometry: Option<&Geometry<'_>>,
) -> Filtered<ProximityHit> {
    apply_filters(raw, profile, order, |hits| match geometry {
        Some(Geometry { trajectory, layout: Some(layout), params }) => WallVerdict {
            keep: hits.iter().map(|h| !occluded(h, trajectory, layout, params)).collect(),
            warning: None,
        },
        _ => WallVerdict::pass(hits.len(), "no facility layout; wall occlusion skipped"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::positioning::{Gateway, Wall};
    use crate::tables::{LocationFix, SymbolicLocation};

    fn vid(n: u8) -> VisitorId {
        VisitorId::from_bytes([n; 16])
    }

    fn ch(v: u8, t: Timestamp, d: f64) -> ContactHit {
        ContactHit { visitor: vid(v), time: t, estimated_distance: d }
    }

    fn cell(col: u32, row: u32) -> SymbolicLocation {
        SymbolicLocation { zone: "z".into(), col, row, resolution: 1.0 }
    }

    #[test]
    fn stadium_keeps_close_hits() {
        let p = ContextProfile::for_type(FacilityType::Stadium);
        assert_eq!(p.max_distance, Some(2.0));
        let got = filter_signal_profile(&[ch(1, 0, 1.5), ch(2, 0, 3.0)], &p);
        assert_eq!(got, vec![ch(1, 0, 1.5)]);
    }

    #[test]
    fn unbounded_distance_is_identity() {
        let hits = vec![ch(1, 0, 1.5), ch(2, 0, 300.0)];
        assert_eq!(filter_signal_profile(&hits, &ContextProfile::default()), hits);
    }

    #[test]
    fn restaurant_persistence() {
        let p = ContextProfile::for_type(FacilityType::Restaurant);
        // 12 minutes of hits every 30 s
        let long: Vec<_> = (0..=24).map(|i| ch(1, 1000 + 30 * i, 1.0)).collect();
        assert_eq!(filter_persistence(&long, &p).len(), long.len());
        assert!(filter_persistence(&[ch(2, 1000, 1.0)], &p).is_empty());
        // the same span broken by a 5 minute gap never reaches 600 s
        let broken: Vec<_> = (0..10).map(|i| ch(3, 30 * i, 1.0)).chain((0..10).map(|i| ch(3, 570 + 30 * i, 1.0))).collect();
        assert!(filter_persistence(&broken, &p).is_empty());
    }

    #[test]
    fn zero_persistence_is_identity() {
        let hits = vec![ch(1, 5, 1.0), ch(2, 9, 4.0)];
        assert_eq!(filter_persistence(&hits, &ContextProfile::default()), hits);
    }

    fn hall_layout(walls: Vec<Wall>) -> FacilityLayout {
        let gws = vec![
            Gateway { id: "a".into(), x: 0.0, y: 0.0 },
            Gateway { id: "b".into(), x: 10.0, y: 0.0 },
            Gateway { id: "c".into(), x: 0.0, y: 10.0 },
        ];
        FacilityLayout::new(10.0, 10.0, 1.0, vec![], walls, gws).unwrap()
    }

    fn occlusion_case(walls: Vec<Wall>) -> usize {
        let traj = Trajectory {
            visitor: vid(1),
            fixes: vec![LocationFix { device: "P".into(), location: cell(1, 5), time: 100 }],
        };
        let hit = ProximityHit {
            visitor: vid(2),
            location: cell(6, 5),
            time: 100,
            spatial_proximity: 5.0,
            temporal_proximity: 0,
        };
        let layout = hall_layout(walls);
        filter_wall_occlusion(&[hit], &traj, Some(&layout), &ProximityParams::default()).hits.len()
    }

    #[test]
    fn wall_occlusion_geometry() {
        // wall at x = 4 crossing the segment (1.5,5.5)-(6.5,5.5)
        assert_eq!(occlusion_case(vec![Wall { a: (4.0, 0.0), b: (4.0, 10.0) }]), 0);
        assert_eq!(occlusion_case(vec![]), 1);
        // parallel wall below the segment
        assert_eq!(occlusion_case(vec![Wall { a: (0.0, 3.0), b: (10.0, 3.0) }]), 1);
        // short wall ending before the segment
        assert_eq!(occlusion_case(vec![Wall { a: (4.0, 0.0), b: (4.0, 5.0) }]), 1);
    }

    #[test]
    fn occlusion_requires_every_qualifying_fix_blocked() {
        let layout = hall_layout(vec![Wall { a: (4.0, 0.0), b: (4.0, 10.0) }]);
        let traj = Trajectory {
            visitor: vid(1),
            fixes: vec![
                LocationFix { device: "P".into(), location: cell(1, 5), time: 100 },
                LocationFix { device: "P".into(), location: cell(7, 5), time: 110 },
            ],
        };
        let hit = ProximityHit { visitor: vid(2), location: cell(6, 5), time: 100, spatial_proximity: 1.0, temporal_proximity: 10 };
        let out = filter_wall_occlusion(&[hit], &traj, Some(&layout), &ProximityParams::default());
        assert_eq!(out.hits.len(), 1);
        let none = filter_wall_occlusion(&out.hits, &traj, None, &ProximityParams::default());
        assert!(none.warning.is_some());
        assert_eq!(none.hits.len(), 1);
    }

    #[test]
    fn pipeline_order_independent_even_when_sequential_is_not() {
        // Signal-then-persistence would break the run; the pipeline judges
        // persistence on the raw answer.
        let p = ContextProfile { max_distance: Some(2.0), min_persistence: 100, persistence_gap: 30, ..Default::default() };
        let hits: Vec<_> = (0..10).map(|i| ch(1, 20 * i, if i % 2 == 0 { 1.0 } else { 3.0 })).collect();
        let a = filter_contact_hits(&hits, &p, &[Filter::Signal, Filter::Persistence]);
        let b = filter_contact_hits(&hits, &p, &[Filter::Persistence, Filter::Signal]);
        assert_eq!(a, b);
        assert_eq!(a.hits.len(), 5);
    }

    #[test]
    fn profile_validation() {
        assert!(ContextProfile { max_distance: Some(0.0), ..Default::default() }.validate().is_err());
        assert!(ContextProfile::for_type(FacilityType::Office).validate().is_ok());
        let json = serde_json::to_string(&ContextProfile::for_type(FacilityType::Mall)).unwrap();
        assert!(json.contains("\"mall\""));
    }
}

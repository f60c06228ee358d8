use std::collections::BTreeSet;

use super::{GroundTruth, TruthVisit};
use crate::ids::FacilityId;

/// `(facility, a, b)` with `a < b`.
pub type OraclePair = (FacilityId, usize, usize);

fn within(a: &TruthVisit, b: &TruthVisit, radius: f64, window: u64) -> bool {
    if a.facility != b.facility || a.visitor == b.visitor {
        return false;
    }
    let lo = a.time_in.max(b.time_in.saturating_sub(window));
    let hi = a.time_out.min(b.time_out + window);
    if lo > hi {
        return false;
    }
    let r2 = radius * radius;
    (lo..=hi).any(|t1| {
        let p = a.position(t1).expect("inside visit");
        let from = t1.saturating_sub(window).max(b.time_in);
        let to = (t1 + window).min(b.time_out);
        (from..=to).any(|t2| {
            let q = b.position(t2).expect("inside visit");
            (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2) <= r2
        })
    })
}

fn key(a: &TruthVisit, b: &TruthVisit) -> OraclePair {
    (a.facility.clone(), a.visitor.min(b.visitor), a.visitor.max(b.visitor))
}

/// Every pair of visitors that were, at some pair of instants at most
/// `window` seconds apart, within `radius` meters of each other in the same
/// facility. Exhaustive over true positions.
pub fn oracle_contacts(truth: &GroundTruth, radius: f64, window: u64) -> BTreeSet<OraclePair> {
    let mut out = BTreeSet::new();
    for (i, a) in truth.visits.iter().enumerate() {
        for b in &truth.visits[i + 1..] {
            if !out.contains(&key(a, b)) && within(a, b, radius, window) {
                out.insert(key(a, b));
            }
        }
    }
    out
}

/// As [`oracle_contacts`], restricted to pairs involving `visitor`.
pub fn oracle_contacts_of(truth: &GroundTruth, visitor: usize, radius: f64, window: u64) -> BTreeSet<OraclePair> {
    let mut out = BTreeSet::new();
    for a in truth.visits.iter().filter(|v| v.visitor == visitor) {
        for b in &truth.visits {
            if !out.contains(&key(a, b)) && within(a, b, radius, window) {
                out.insert(key(a, b));
            }
        }
    }
    out
}

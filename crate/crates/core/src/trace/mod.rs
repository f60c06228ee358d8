//! Server-side trace procedure: fan out to the facilities a patient visited,
//! filter the answers by facility context and re-identify the contacts.

mod context;
mod heatmap;
mod surface;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use context::{
    apply_filters, filter_contact_hits, filter_persistence, filter_proximity_hits, filter_signal_profile,
    filter_wall_occlusion, persistent_visitors, stages, ContextProfile, FacilityType, Filter, Filtered, Geometry, Hit,
    OcclusionOutcome, WallVerdict,
};
pub use heatmap::{build_heatmap, cell_counts, Heatmap};
pub use surface::{stays, surface_contacts, Stay, SurfaceContact, SurfaceParams, STAY_GAP};

use crate::error::{Error, Result};
use crate::facility::FacilityMode;
use crate::ids::{FacilityId, PhoneId, Timestamp, VisitorId, Window};
use crate::location::{ProximityHit, Trajectory};
use crate::positioning::ProximityParams;
use crate::protocol::{ErrorBody, FacilityQueryMessage, FacilityResponseMessage, Hits, QueryMode, QueryParams};
use crate::registration::Registry;
use crate::tables::VisitRecord;
use crate::u2u::ContactHit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRequest {
    pub patient: PhoneId,
    /// Defaults to the retention horizon ending at `as_of`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<Window>,
    #[serde(default)]
    pub proximity: ProximityParams,
    /// Per-facility replacements for the facility type's default profile.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub context: BTreeMap<FacilityId, ContextProfile>,
    /// Reference time for open visits and the default period; the caller's
    /// clock when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_of: Option<Timestamp>,
}

impl TraceRequest {
    pub fn new(patient: PhoneId) -> Self {
        TraceRequest {
            patient,
            period: None,
            proximity: ProximityParams::default(),
            context: BTreeMap::new(),
            as_of: None,
        }
    }

    /// Fixes `as_of` and the period, checking both against the horizon.
    pub fn resolve(&self, now: Timestamp, horizon: u64) -> Result<(Window, Timestamp)> {
        self.proximity.validate()?;
        for p in self.context.values() {
            p.validate()?;
        }
        let as_of = self.as_of.unwrap_or(now);
        let period = self.period.unwrap_or(Window::new(as_of.saturating_sub(horizon), as_of));
        if period.start > period.end {
            return Err(Error::InvalidParameter(format!("period starts at {} after it ends at {}", period.start, period.end)));
        }
        if period.end - period.start > horizon {
            return Err(Error::InvalidParameter(format!(
                "period of {} s exceeds the {horizon} s retention horizon",
                period.end - period.start
            )));
        }
        Ok((period, as_of))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceKind {
    U2u,
    Location,
    Surface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionHits {
    pub u2u: Vec<ContactHit>,
    pub location: Vec<ProximityHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionError {
    pub mode: QueryMode,
    pub code: String,
    pub message: String,
}

/// Everything learned from one visit of the patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilitySection {
    pub facility: FacilityId,
    pub mode: Option<FacilityMode>,
    /// The patient's pseudonym for this visit.
    pub visitor: VisitorId,
    pub visit_time: Timestamp,
    pub profile: ContextProfile,
    pub raw: SectionHits,
    pub filtered: SectionHits,
    pub surface_contacts: Vec<SurfaceContact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Trajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<Heatmap>,
    pub unmapped: usize,
    pub warnings: Vec<String>,
    pub errors: Vec<SectionError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub first_time: Timestamp,
    pub last_time: Timestamp,
    pub hits: usize,
    /// Meters; absent when only surface evidence exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_distance: Option<f64>,
    pub kinds: BTreeSet<EvidenceKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactEntry {
    pub phone: PhoneId,
    pub facility: FacilityId,
    pub visitor: VisitorId,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub patient: PhoneId,
    pub period: Window,
    pub as_of: Timestamp,
    pub sections: Vec<FacilitySection>,
    pub contacts: Vec<ContactEntry>,
}

impl TraceReport {
    /// Distinct contact phones, sorted.
    pub fn phones(&self) -> BTreeSet<PhoneId> {
        self.contacts.iter().map(|c| c.phone.clone()).collect()
    }

    pub fn has_errors(&self) -> bool {
        self.sections.iter().any(|s| !s.errors.is_empty())
    }
}

fn profile_for(req: &TraceRequest, facility: &FacilityId, facility_type: FacilityType) -> ContextProfile {
    req.context
        .get(facility)
        .cloned()
        .unwrap_or_else(|| ContextProfile::for_type(facility_type))
}

fn query_section(
    registry: &Registry,
    req: &TraceRequest,
    visit: &VisitRecord,
    index: usize,
    trace_id: &str,
    period: Window,
    as_of: Timestamp,
) -> FacilitySection {
    let entry = registry.directory().get(&visit.facility);
    let profile = profile_for(req, &visit.facility, entry.map_or(FacilityType::Generic, |e| e.facility_type));
    let mut section = FacilitySection {
        facility: visit.facility.clone(),
        mode: entry.map(|e| e.mode),
        visitor: visit.visitor,
        visit_time: visit.time,
        profile: profile.clone(),
        raw: SectionHits { u2u: Vec::new(), location: Vec::new() },
        filtered: SectionHits { u2u: Vec::new(), location: Vec::new() },
        surface_contacts: Vec::new(),
        trajectory: None,
        heatmap: None,
        unmapped: 0,
        warnings: Vec::new(),
        errors: Vec::new(),
    };
    let Some(entry) = entry else {
        section.errors.push(SectionError {
            mode: QueryMode::U2u,
            code: "unknown_facility".into(),
            message: format!("facility {} is not in the directory", visit.facility),
        });
        return section;
    };

    for &mode in entry.mode.query_modes() {
        let location = mode == QueryMode::Location;
        let msg = FacilityQueryMessage {
            request_id: format!("{trace_id}/{index}/{}", mode.as_str()),
            visitor: visit.visitor,
            mode,
            as_of,
            params: QueryParams {
                proximity: req.proximity,
                surface: location.then_some(SurfaceParams { dwell: profile.surface_dwell, lag: profile.surface_lag }),
                heatmap_period: location.then_some(period),
                ..QueryParams::default()
            },
        };
        match entry.link.trace_query(&msg) {
            Ok(resp) => absorb(&mut section, resp, &req.proximity),
            Err(e) => {
                let body = ErrorBody::from(&e.into_error(&visit.facility));
                section.errors.push(SectionError { mode, code: body.code, message: body.message });
            }
        }
    }
    section
}

fn absorb(section: &mut FacilitySection, resp: FacilityResponseMessage, proximity: &ProximityParams) {
    section.unmapped += resp.diagnostics.unmapped;
    let profile = section.profile.clone();
    match resp.hits {
        Hits::U2u(raw) => {
            let out = filter_contact_hits(&raw, &profile, &stages(&profile, false));
            section.warnings.extend(out.warnings);
            section.raw.u2u = raw;
            section.filtered.u2u = out.hits;
        }
        Hits::Location(raw) => {
            let out = match &resp.trajectory {
                Some(trajectory) => {
                    let geometry = Geometry { trajectory, layout: resp.layout.as_ref(), params: proximity };
                    filter_proximity_hits(&raw, &profile, &stages(&profile, true), Some(&geometry))
                }
                None => filter_proximity_hits(&raw, &profile, &stages(&profile, true), None),
            };
            section.warnings.extend(out.warnings);
            section.raw.location = raw;
            section.filtered.location = out.hits;
            section.surface_contacts = resp.surface_contacts;
            if let (Some(layout), Some(counts)) = (&resp.layout, &resp.cell_counts) {
                section.heatmap = Some(build_heatmap(&section.facility, layout, counts, resp.trajectory.as_ref()));
            }
            section.trajectory = resp.trajectory;
        }
    }
}

struct Tally {
    first: Timestamp,
    last: Timestamp,
    hits: usize,
    min_distance: Option<f64>,
    kinds: BTreeSet<EvidenceKind>,
}

impl Tally {
    fn add(&mut self, time: Timestamp, distance: Option<f64>, kind: EvidenceKind) {
        self.first = self.first.min(time);
        self.last = self.last.max(time);
        self.hits += 1;
        if let Some(d) = distance {
            self.min_distance = Some(self.min_distance.map_or(d, |m| m.min(d)));
        }
        self.kinds.insert(kind);
    }
}

/// Runs the full trace for `req` against the registry's facilities.
///
/// Facility queries run concurrently; a facility that fails contributes an
/// error marker to its section and the rest of the trace proceeds.
pub fn run_trace(registry: &Registry, req: &TraceRequest, trace_id: &str, now: Timestamp) -> Result<TraceReport> {
    let (period, as_of) = req.resolve(now, registry.policy().horizon)?;
    let visits = registry.visits().lookup_by_phone(&req.patient, period);

    let mut sections: Vec<FacilitySection> = std::thread::scope(|scope| {
        let handles: Vec<_> = visits
            .iter()
            .enumerate()
            .map(|(i, v)| scope.spawn(move || query_section(registry, req, v, i, trace_id, period, as_of)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("facility query thread panicked")).collect()
    });
    sections.sort_by(|a, b| (&a.facility, a.visit_time, a.visitor).cmp(&(&b.facility, b.visit_time, b.visitor)));

    let mut tallies: BTreeMap<(FacilityId, VisitorId), Tally> = BTreeMap::new();
    for s in &sections {
        let mut add = |v: VisitorId, t: Timestamp, d: Option<f64>, k: EvidenceKind| {
            tallies
                .entry((s.facility.clone(), v))
                .or_insert(Tally { first: t, last: t, hits: 0, min_distance: None, kinds: BTreeSet::new() })
                .add(t, d, k);
        };
        for h in &s.filtered.u2u {
            add(h.visitor, h.time, Some(h.estimated_distance), EvidenceKind::U2u);
        }
        for h in &s.filtered.location {
            add(h.visitor, h.time, Some(h.spatial_proximity), EvidenceKind::Location);
        }
        for c in &s.surface_contacts {
            add(c.visitor, c.visitor_arrive, None, EvidenceKind::Surface);
        }
    }

    let mut contacts = Vec::new();
    for ((facility, visitor), t) in tallies {
        match registry.visits().lookup_by_visitor(&visitor) {
            Some(rec) if rec.phone == req.patient => {}
            Some(rec) => contacts.push(ContactEntry {
                phone: rec.phone.clone(),
                facility,
                visitor,
                evidence: Evidence {
                    first_time: t.first,
                    last_time: t.last,
                    hits: t.hits,
                    min_distance: t.min_distance,
                    kinds: t.kinds,
                },
            }),
            None => {
                if let Some(s) = sections.iter_mut().find(|s| s.facility == facility) {
                    s.warnings.push(format!("visitor {visitor} has no registry record"));
                }
            }
        }
    }
    contacts.sort_by(|a, b| {
        (&a.facility, a.evidence.first_time, a.visitor).cmp(&(&b.facility, b.evidence.first_time, b.visitor))
    });

    Ok(TraceReport {
        patient: req.patient.clone(),
        period,
        as_of,
        sections,
        contacts,
    })
}

/// Human-readable summary of a report.
pub fn render_text(report: &TraceReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "patient {} period [{}, {}]", report.patient, report.period.start, report.period.end);
    for s in &report.sections {
        let _ = writeln!(
            out,
            "facility {} visit at {}: {} u2u / {} location hits raw, {} / {} after filters, {} surface",
            s.facility,
            s.visit_time,
            s.raw.u2u.len(),
            s.raw.location.len(),
            s.filtered.u2u.len(),
            s.filtered.location.len(),
            s.surface_contacts.len()
        );
        for e in &s.errors {
            let _ = writeln!(out, "  error ({}): {}", e.code, e.message);
        }
        for w in &s.warnings {
            let _ = writeln!(out, "  warning: {w}");
        }
    }
    let _ = writeln!(out, "{} contacts", report.contacts.len());
    for c in &report.contacts {
        let kinds: Vec<&str> = c
            .evidence
            .kinds
            .iter()
            .map(|k| match k {
                EvidenceKind::U2u => "u2u",
                EvidenceKind::Location => "location",
                EvidenceKind::Surface => "surface",
            })
            .collect();
        let dist = c.evidence.min_distance.map_or("-".to_string(), |d| format!("{d:.2} m"));
        let _ = writeln!(
            out,
            "{}\t{}\t{}..{}\t{} hits\t{}\t{}",
            c.phone,
            c.facility,
            c.evidence.first_time,
            c.evidence.last_time,
            c.evidence.hits,
            dist,
            kinds.join(",")
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facility::{Facility, FacilityConfig, WipeCounts};
    use crate::ids::BleId;
    use crate::protocol::{
        ExchangeRequest, ExchangeResponse, FacilityDirectory, FacilityLink, LinkError, LocalFacility, OfflineFacility,
    };
    use std::sync::atomic::{AtomicBool, Ordering};
    use crate::tables::RetentionPolicy;
    use crate::u2u::RawReading;
    use std::sync::Arc;

    fn phone(i: u64) -> PhoneId {
        PhoneId::parse(&(5_550_000_000 + i).to_string()).unwrap()
    }

    /// A facility link that can be cut.
    struct Flaky {
        inner: LocalFacility,
        online: AtomicBool,
    }

    impl FacilityLink for Flaky {
        fn exchange(&self, req: &ExchangeRequest) -> Result<ExchangeResponse, LinkError> {
            self.inner.exchange(req)
        }

        fn trace_query(&self, msg: &FacilityQueryMessage) -> Result<FacilityResponseMessage, LinkError> {
            if self.online.load(Ordering::SeqCst) {
                self.inner.trace_query(msg)
            } else {
                OfflineFacility.trace_query(msg)
            }
        }

        fn wipe(&self, now: Timestamp) -> Result<WipeCounts, LinkError> {
            self.inner.wipe(now)
        }
    }

    fn world() -> (Registry, LocalFacility, Arc<Flaky>) {
        let f1 = LocalFacility::new(Facility::new(FacilityConfig::new("F1", FacilityMode::U2u).with_pool(10)).unwrap());
        let f2 = Arc::new(Flaky {
            inner: LocalFacility::new(Facility::new(FacilityConfig::new("F2", FacilityMode::U2u).with_pool(10)).unwrap()),
            online: AtomicBool::new(true),
        });
        let mut dir = FacilityDirectory::new();
        dir.insert("F1".into(), FacilityMode::U2u, FacilityType::Generic, Arc::new(f1.clone()));
        dir.insert("F2".into(), FacilityMode::U2u, FacilityType::Generic, f2.clone());
        (Registry::with_seed(dir, RetentionPolicy::default(), 1), f1, f2)
    }

    fn contact(f: &LocalFacility, a: &BleId, b: &BleId, t: Timestamp) {
        f.0.write()
            .ingest_device_logs(&[RawReading { observer: a.clone(), observed: b.clone(), time: t, rssi: -65.0 }])
            .unwrap();
    }

    #[test]
    fn no_visits_empty_report() {
        let (r, _, _) = world();
        let rep = run_trace(&r, &TraceRequest::new(phone(0)), "t1", 10_000).unwrap();
        assert!(rep.sections.is_empty() && rep.contacts.is_empty());
    }

    #[test]
    fn offline_facility_gives_partial_report() {
        let (mut r, f1, f2) = world();
        let (a, _) = r.sign_in(&phone(0), &"F1".into(), 100, None).unwrap();
        let (b, _) = r.sign_in(&phone(1), &"F1".into(), 100, None).unwrap();
        let (c, _) = r.sign_in(&phone(0), &"F2".into(), 500, None).unwrap();
        let (d, _) = r.sign_in(&phone(2), &"F2".into(), 500, None).unwrap();
        contact(&f1, &a.device, &b.device, 120);
        contact(&f2.inner, &c.device, &d.device, 520);
        let req = TraceRequest { as_of: Some(9000), ..TraceRequest::new(phone(0)) };
        let full = run_trace(&r, &req, "t1", 0).unwrap();
        assert_eq!(full.phones(), BTreeSet::from([phone(1), phone(2)]));

        f2.online.store(false, Ordering::SeqCst);
        let partial = run_trace(&r, &req, "t2", 0).unwrap();
        assert_eq!(partial.phones(), BTreeSet::from([phone(1)]));
        let marked: Vec<_> = partial.sections.iter().filter(|s| !s.errors.is_empty()).map(|s| s.facility.as_str()).collect();
        assert_eq!(marked, vec!["F2"]);
        assert_eq!(partial.sections[1].errors[0].code, "facility_unreachable");
    }

    #[test]
    fn deterministic_and_ordered() {
        let (mut r, f1, f2) = world();
        let mut pairs = Vec::new();
        for i in 0..6u64 {
            let fac: FacilityId = if i % 2 == 0 { "F2".into() } else { "F1".into() };
            let t = 100 + 10 * i;
            let (p, _) = r.sign_in(&phone(0), &fac, t, None).unwrap();
            let (q, _) = r.sign_in(&phone(10 + i), &fac, t, None).unwrap();
            pairs.push((fac, p.device, q.device, t));
        }
        for (fac, p, q, t) in &pairs {
            let link = if fac.as_str() == "F1" { &f1 } else { &f2.inner };
            contact(link, p, q, t + 1);
        }
        let req = TraceRequest { as_of: Some(9000), ..TraceRequest::new(phone(0)) };
        let a = run_trace(&r, &req, "t", 1).unwrap();
        let b = run_trace(&r, &req, "t", 2).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        let keys: Vec<_> = a.contacts.iter().map(|c| (c.facility.clone(), c.evidence.first_time)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(a.contacts.len(), 6);
        for c in &a.contacts {
            assert_eq!(r.visits().lookup_by_visitor(&c.visitor).unwrap().phone, c.phone);
        }
    }

    #[test]
    fn period_validation() {
        let req = TraceRequest { period: Some(Window::new(0, RetentionPolicy::TWO_WEEKS + 1)), ..TraceRequest::new(phone(0)) };
        assert!(req.resolve(0, RetentionPolicy::TWO_WEEKS).is_err());
        let req = TraceRequest::new(phone(0));
        let (p, as_of) = req.resolve(2_000_000, RetentionPolicy::TWO_WEEKS).unwrap();
        assert_eq!((p.start, p.end, as_of), (2_000_000 - RetentionPolicy::TWO_WEEKS, 2_000_000, 2_000_000));
    }
}

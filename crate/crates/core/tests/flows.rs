use std::collections::{BTreeMap, BTreeSet};

use fctrace_core::facility::FacilityMode;
use fctrace_core::location::query_proximity;
use fctrace_core::positioning::ProximityParams;
use fctrace_core::sim::{oracle_contacts, phone_of, run_scenario, FacilitySpec, InfectionPlan, PlantedContact, ScenarioSpec};
use fctrace_core::trace::{build_heatmap, cell_counts, TraceRequest};
use fctrace_core::u2u::{ingest_device_logs, query_contacts, RawReading};
use fctrace_core::{Deployment, Facility, FacilityConfig, PathLossModel, RetentionPolicy, VisitorId, Window};
use proptest::prelude::*;

fn scenario(seed: u64, visitors: usize) -> ScenarioSpec {
    let mut s = ScenarioSpec::new(
        seed,
        vec![FacilitySpec::new("U", FacilityMode::U2u), FacilitySpec::new("L", FacilityMode::Location)],
        visitors,
        1800,
    );
    s.visit_mean = 600.0;
    s.infection = Some(InfectionPlan {
        patient: 0,
        contacts: vec![
            PlantedContact { visitor: 1, facility: "U".into(), seconds: 120, distance: 2.0 },
            PlantedContact { visitor: 2, facility: "L".into(), seconds: 120, distance: 2.0 },
        ],
    });
    s
}

fn with_facility<T>(d: &Deployment, id: &str, f: impl FnOnce(&Facility) -> T) -> T {
    f(&d.facility(&id.into()).unwrap().0.read())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn facility_state_never_holds_a_phone(seed in any::<u64>(), visitors in 3usize..25) {
        let (d, truth) = run_scenario(&scenario(seed, visitors)).unwrap();
        let phones: BTreeSet<String> = truth.visits.iter().map(|v| v.phone.to_string()).collect();
        for id in ["U", "L"] {
            let bytes = with_facility(&d, id, |f| f.state_bytes().unwrap());
            let text = String::from_utf8_lossy(&bytes);
            for p in &phones {
                prop_assert!(!text.contains(p.as_str()), "{p} found in {id}");
            }
        }
    }

    #[test]
    fn u2u_hits_reciprocal_and_inside_visit(seed in any::<u64>()) {
        let (d, _) = run_scenario(&scenario(seed, 15)).unwrap();
        with_facility(&d, "U", |f| {
            let now = u64::MAX;
            let mut seen: BTreeMap<(VisitorId, VisitorId), Vec<(u64, u64)>> = BTreeMap::new();
            for rec in f.master.iter() {
                let window = Window::new(rec.time_in, rec.time_out.unwrap());
                for h in query_contacts(&f.master, &f.contacts, &rec.visitor, now).unwrap().hits {
                    assert!(window.contains(h.time));
                    seen.entry((rec.visitor, h.visitor)).or_default().push((h.time, h.estimated_distance.to_bits()));
                }
            }
            for ((a, b), hits) in &seen {
                assert_eq!(Some(hits), seen.get(&(*b, *a)));
            }
        });
    }

    #[test]
    fn proximity_monotone_and_never_self(seed in any::<u64>(), r in 1.0f64..8.0, w in 1u64..300) {
        let (d, _) = run_scenario(&scenario(seed, 15)).unwrap();
        with_facility(&d, "L", |f| {
            for rec in f.master.iter() {
                let small = query_proximity(&f.master, &f.locations, &rec.visitor, &ProximityParams::new(r, w).unwrap(), u64::MAX).unwrap();
                let large = query_proximity(&f.master, &f.locations, &rec.visitor, &ProximityParams::new(r + 2.0, w * 2).unwrap(), u64::MAX).unwrap();
                let keys = |hs: &[fctrace_core::ProximityHit]| hs.iter().map(|h| (h.visitor, h.time)).collect::<BTreeSet<_>>();
                assert!(small.hits.iter().all(|h| h.visitor != rec.visitor));
                assert!(keys(&small.hits).is_subset(&keys(&large.hits)));
            }
        });
    }
}

#[test]
fn exchange_consistency_and_fresh_pseudonyms() {
    let mut d = Deployment::new(vec![FacilityConfig::new("F", FacilityMode::U2u).with_pool(50)], RetentionPolicy::default(), Some(1)).unwrap();
    let p = phone_of(0);
    let mut issued = BTreeSet::new();
    for i in 0..50 {
        let (a, _) = d.registry.sign_in(&p, &"F".into(), 100 + i / 10, None).unwrap();
        assert!(issued.insert(a.visitor));
    }
    with_facility(&d, "F", |f| {
        for rec in f.master.iter().filter(|r| r.time_out.is_none()) {
            let matching: Vec<_> = d.registry.visits().iter().filter(|v| v.visitor == rec.visitor).collect();
            assert_eq!(matching.len(), 1);
            assert_eq!(matching[0].time, rec.time_in);
        }
    });
}

#[test]
fn reingesting_logs_changes_nothing() {
    let s = scenario(5, 12);
    let (events, _) = fctrace_core::sim::generate_scenario(&s).unwrap();
    let readings: Vec<RawReading> = events
        .into_iter()
        .filter_map(|e| match e {
            fctrace_core::sim::Event::Sighting { reading, .. } => Some(reading),
            _ => None,
        })
        .collect();
    let model = PathLossModel::default();
    let mut once = fctrace_core::tables::ContactTable::new();
    ingest_device_logs(&mut once, &readings, &model);
    let mut twice = once.clone();
    let again = ingest_device_logs(&mut twice, &readings, &model);
    assert_eq!(again.stored + again.merged, 0);
    assert_eq!(once.sorted(), twice.sorted());
}

#[test]
fn trace_is_deterministic_and_reidentifies() {
    let s = scenario(11, 20);
    let report = || {
        let (d, _) = run_scenario(&s).unwrap();
        let mut req = TraceRequest::new(phone_of(0));
        req.as_of = Some(s.end());
        let r = d.trace(&req, "t1", s.end()).unwrap();
        (serde_json::to_vec(&r).unwrap(), r, d)
    };
    let (a, r, d) = report();
    let (b, _, _) = report();
    assert_eq!(a, b);
    let phones: BTreeSet<_> = r.contacts.iter().map(|c| c.phone.clone()).collect();
    assert!(phones.contains(&phone_of(1)) && phones.contains(&phone_of(2)));
    assert!(!phones.contains(&phone_of(0)));
    for c in &r.contacts {
        assert_eq!(d.registry.visits().lookup_by_visitor(&c.visitor).map(|v| &v.phone), Some(&c.phone));
    }
}

#[test]
fn heatmap_counts_every_fix() {
    let s = scenario(3, 20);
    let (d, _) = run_scenario(&s).unwrap();
    with_facility(&d, "L", |f| {
        for period in [Window::new(s.start, s.end()), Window::new(s.start + 300, s.start + 900)] {
            let counts = cell_counts(&f.locations, f.layout().unwrap(), period);
            let map = build_heatmap(f.id(), f.layout().unwrap(), &counts, None);
            assert_eq!(map.total(), f.locations.fixes_in(period).count() as u64);
        }
    });
}

#[test]
fn oracle_grows_with_radius_and_window() {
    let (_, truth) = run_scenario(&scenario(8, 20)).unwrap();
    let small = oracle_contacts(&truth, 3.0, 0);
    let wider = oracle_contacts(&truth, 6.0, 0);
    let longer = oracle_contacts(&truth, 3.0, 60);
    assert!(small.is_subset(&wider) && small.is_subset(&longer));
    assert!(small.contains(&("U".into(), 0, 1)) && small.contains(&("L".into(), 0, 2)));
}

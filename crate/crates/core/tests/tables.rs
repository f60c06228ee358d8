use fctrace_core::ids::{BleId, PhoneId, VisitorId, Window};
use fctrace_core::tables::{ContactTable, LocationFix, LocationTable, MasterTable, SymbolicLocation, VisitRecord, VisitTable};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Open { visitor: u8, device: u8, time: u64 },
    Close { device: u8, time: u64 },
    Sight { a: u8, b: u8, time: u64, distance: f64 },
    Fix { device: u8, col: u32, time: u64 },
    Visit { visitor: u8, phone: u8, time: u64 },
    Wipe { cutoff: u64 },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (any::<u8>(), 0u8..6, 0u64..1000).prop_map(|(visitor, device, time)| Op::Open { visitor, device, time }),
        (0u8..6, 0u64..1000).prop_map(|(device, time)| Op::Close { device, time }),
        (0u8..6, 0u8..6, 0u64..1000, 0.1f64..20.0).prop_map(|(a, b, time, distance)| Op::Sight { a, b, time, distance }),
        (0u8..6, 0u32..10, 0u64..1000).prop_map(|(device, col, time)| Op::Fix { device, col, time }),
        (any::<u8>(), 0u8..4, 0u64..1000).prop_map(|(visitor, phone, time)| Op::Visit { visitor, phone, time }),
        (0u64..1000).prop_map(|cutoff| Op::Wipe { cutoff }),
    ]
}

fn dev(n: u8) -> BleId {
    BleId::new(format!("D{n}"))
}

fn vid(n: u8) -> VisitorId {
    VisitorId::from_bytes([n; 16])
}

struct Tables {
    visits: VisitTable,
    master: MasterTable,
    contacts: ContactTable,
    locations: LocationTable,
}

fn run(ops: &[Op]) -> (Tables, Option<u64>) {
    let mut t = Tables {
        visits: VisitTable::new(),
        master: MasterTable::new(),
        contacts: ContactTable::new(),
        locations: LocationTable::new(),
    };
    let mut last_cutoff = None;
    for op in ops {
        match *op {
            Op::Open { visitor, device, time } => {
                let _ = t.master.open(vid(visitor), dev(device), time);
            }
            Op::Close { device, time } => {
                let _ = t.master.close(&dev(device), time);
            }
            Op::Sight { a, b, time, distance } => {
                if a != b {
                    t.contacts.record_sighting(&dev(a), &dev(b), time, distance, 5);
                }
            }
            Op::Fix { device, col, time } => {
                t.locations.insert(LocationFix {
                    device: dev(device),
                    location: SymbolicLocation { zone: "z".into(), col, row: 0, resolution: 1.0 },
                    time,
                });
            }
            Op::Visit { visitor, phone, time } => {
                let _ = t.visits.insert(VisitRecord {
                    phone: PhoneId::parse(&format!("555000000{phone}")).unwrap(),
                    facility: "F".into(),
                    visitor: vid(visitor),
                    time,
                });
            }
            Op::Wipe { cutoff } => {
                t.visits.wipe_before(cutoff);
                t.master.wipe_before(cutoff);
                t.contacts.wipe_before(cutoff);
                t.locations.wipe_before(cutoff);
                last_cutoff = Some(cutoff);
            }
        }
    }
    (t, last_cutoff)
}

proptest! {
    #[test]
    fn indexes_stay_coherent(ops in prop::collection::vec(op(), 0..120)) {
        let (t, _) = run(&ops);
        prop_assert!(t.visits.is_coherent());
        prop_assert!(t.master.is_coherent());
        prop_assert!(t.contacts.is_coherent());
        prop_assert!(t.locations.is_coherent());
    }

    #[test]
    fn device_windows_never_overlap(ops in prop::collection::vec(op(), 0..120)) {
        let (t, _) = run(&ops);
        let recs = t.master.sorted();
        for (i, a) in recs.iter().enumerate() {
            for b in &recs[i + 1..] {
                if a.device == b.device {
                    let wa = Window::new(a.time_in, a.time_out.unwrap_or(u64::MAX));
                    let wb = Window::new(b.time_in, b.time_out.unwrap_or(u64::MAX));
                    prop_assert!(!wa.intersects(&wb), "{a:?} {b:?}");
                }
            }
        }
    }

    #[test]
    fn contacts_found_from_both_sides(ops in prop::collection::vec(op(), 0..120)) {
        let (t, _) = run(&ops);
        let all = Window::new(0, u64::MAX);
        for e in t.contacts.iter() {
            for d in [&e.device_a, &e.device_b] {
                prop_assert!(t.contacts.events_for(d, all).contains(&e));
            }
        }
    }

    #[test]
    fn wipe_leaves_nothing_older(ops in prop::collection::vec(op(), 1..120), cutoff in 0u64..1000) {
        let mut ops = ops;
        ops.push(Op::Wipe { cutoff });
        let (t, _) = run(&ops);
        for m in [t.visits.min_time(), t.master.min_time(), t.contacts.min_time(), t.locations.min_time()].into_iter().flatten() {
            prop_assert!(m >= cutoff);
        }
    }
}

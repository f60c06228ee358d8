//! Seeded inputs shared by the benchmarks.

use fctrace_core::facility::FacilityMode;
use fctrace_core::positioning::{FacilityLayout, GatewayReading, PathLossModel};
use fctrace_core::sim::{FacilitySpec, InfectionPlan, PlantedContact, ScenarioSpec};
use fctrace_core::tables::{LocationFix, LocationTable, SymbolicLocation};
use fctrace_core::ids::BleId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One reading per gateway of the default layout for a device at `(x, y)`.
pub fn gateway_readings(x: f64, y: f64) -> (FacilityLayout, PathLossModel, Vec<GatewayReading>) {
    let layout = FacilityLayout::default_30x30();
    let model = PathLossModel::default();
    let readings = layout
        .gateways
        .iter()
        .map(|g| GatewayReading {
            gateway: g.id.clone(),
            device: "B".into(),
            time: 0,
            rssi: model.rssi_from_distance((g.x - x).hypot(g.y - y), 0.0),
        })
        .collect();
    (layout, model, readings)
}

/// A table of `n` random fixes over `devices` devices, plus device 0's path.
pub fn location_table(n: usize, devices: u32, seed: u64) -> (LocationTable, Vec<LocationFix>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = LocationTable::new();
    let mut path = Vec::new();
    for _ in 0..n {
        let f = LocationFix {
            device: BleId::new(format!("D{}", rng.random_range(0..devices))),
            location: SymbolicLocation { zone: "z".into(), col: rng.random_range(0..30), row: rng.random_range(0..30), resolution: 1.0 },
            time: rng.random_range(0..86_400),
        };
        if table.insert(f.clone()) && f.device.as_str() == "D0" {
            path.push(f);
        }
    }
    path.sort_by_key(|f| f.time);
    (table, path)
}

/// A two-facility scenario with contacts planted around visitor 0.
pub fn scenario(visitors: usize, duration: u64) -> ScenarioSpec {
    let mut s = ScenarioSpec::new(
        1,
        vec![FacilitySpec::new("U", FacilityMode::U2u), FacilitySpec::new("L", FacilityMode::Location)],
        visitors,
        duration,
    );
    s.infection = Some(InfectionPlan {
        patient: 0,
        contacts: vec![
            PlantedContact { visitor: 1, facility: "U".into(), seconds: 300, distance: 1.0 },
            PlantedContact { visitor: 2, facility: "L".into(), seconds: 300, distance: 2.0 },
        ],
    });
    s
}

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use fctrace_cli::client::{HttpFacility, RegistryClient, WireBackend};
use fctrace_cli::service::{facility_router, registry_router, spawn, FacilityService, RegistryService, Running, Tap};
use fctrace_core::protocol::FacilityDirectory;
use fctrace_core::sim::{generate_scenario_with, GroundTruth, Replay, ScenarioSpec};
use fctrace_core::{Facility, FacilityId, LocalFacility, Registry, RetentionPolicy};
use parking_lot::Mutex;

pub const REGISTRY_TOKEN: &str = "registry-token";

pub fn facility_token(id: &FacilityId) -> String {
    format!("token-{id}")
}

pub struct Node {
    pub server: Running,
    pub service: FacilityService,
    pub tap: Tap,
}

/// A registry and one server per facility, all on loopback.
pub struct Cluster {
    pub facilities: BTreeMap<FacilityId, Node>,
    pub registry: RegistryService,
    pub registry_server: Running,
}

impl Cluster {
    /// Servers for the scenario's facilities, registry pseudonyms seeded
    /// from the scenario seed.
    pub fn start(spec: &ScenarioSpec) -> Cluster {
        let mut facilities = BTreeMap::new();
        let mut directory = FacilityDirectory::new();
        for config in spec.facility_configs() {
            let id = config.id.clone();
            let (mode, ty) = (config.mode, config.facility_type);
            let service = FacilityService::new(LocalFacility::new(Facility::new(config).unwrap()));
            let tap: Tap = Arc::new(Mutex::new(Vec::new()));
            let router = facility_router(service.clone(), Some(facility_token(&id)), Some(tap.clone()));
            let server = spawn(router, "127.0.0.1:0").unwrap();
            directory.insert(id.clone(), mode, ty, Arc::new(HttpFacility::new(server.url(), Some(facility_token(&id)))));
            facilities.insert(id, Node { server, service, tap });
        }
        let registry = RegistryService::new(Registry::with_seed(directory, RetentionPolicy::default(), spec.seed));
        let registry_server = spawn(registry_router(registry.clone(), Some(REGISTRY_TOKEN.into()), None), "127.0.0.1:0").unwrap();
        Cluster { facilities, registry, registry_server }
    }

    pub fn client(&self) -> RegistryClient {
        RegistryClient::new(self.registry_server.url(), Some(REGISTRY_TOKEN.into()))
    }

    pub fn facility_client(&self, id: &FacilityId) -> HttpFacility {
        HttpFacility::new(self.facilities[id].server.url(), Some(facility_token(id)))
    }

    pub fn backend(&self) -> WireBackend {
        WireBackend {
            registry: self.client(),
            facilities: self.facilities.keys().map(|id| (id.clone(), self.facility_client(id))).collect(),
        }
    }

    /// Generates the scenario and replays it over HTTP.
    pub fn replay(&self, spec: &ScenarioSpec) -> GroundTruth {
        let mut backend = self.backend();
        let mut replay = Replay::new(&mut backend);
        let mut failure = None;
        let truth = generate_scenario_with(spec, |ev| {
            if failure.is_none() {
                if let Err(e) = replay.feed(ev) {
                    failure = Some(e.to_string());
                }
            }
            Ok(())
        })
        .unwrap();
        if let Err(e) = replay.finish() {
            failure.get_or_insert(e.to_string());
        }
        if let Some(e) = failure {
            panic!("wire replay failed: {e}");
        }
        truth
    }

    pub fn start_and_replay(spec: &ScenarioSpec) -> (Cluster, GroundTruth) {
        let c = Cluster::start(spec);
        let truth = c.replay(spec);
        (c, truth)
    }
}

/// Maximal digit runs in `bytes` that equal a phone in `phones`: how a
/// phone travels in JSON or TSV.
pub fn phones_in(bytes: &[u8], phones: &HashSet<String>) -> Vec<String> {
    digit_runs(bytes).filter(|run| phones.contains(*run)).map(String::from).collect()
}

/// Phones occurring strictly inside longer digit runs, such as the fraction
/// digits of a float. Coincidences, reported but not failures.
pub fn phones_embedded(bytes: &[u8], phones: &HashSet<String>) -> usize {
    let lens: HashSet<usize> = phones.iter().map(|p| p.len()).collect();
    digit_runs(bytes)
        .map(|run| {
            lens.iter()
                .filter(|&&n| run.len() > n)
                .map(|&n| (0..=run.len() - n).filter(|&i| phones.contains(&run[i..i + n])).count())
                .sum::<usize>()
        })
        .sum()
}

fn digit_runs(bytes: &[u8]) -> impl Iterator<Item = &str> {
    bytes
        .split(|b| !b.is_ascii_digit())
        .filter(|r| !r.is_empty())
        .map(|r| std::str::from_utf8(r).expect("ascii digits"))
}

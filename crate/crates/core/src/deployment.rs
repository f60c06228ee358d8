//! A registry and its facilities wired together in one process, with
//! on-disk persistence as a data directory:
//!
//! ```text
//! <dir>/deployment.json
//! <dir>/registry/visits.tsv, links.json
//! <dir>/facilities/<id>/facility.json, master.tsv, contacts.tsv, locations.tsv
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facility::{Facility, FacilityConfig, WipeCounts};
use crate::ids::{FacilityId, Timestamp};
use crate::protocol::{FacilityDirectory, LocalFacility};
use crate::registration::Registry;
use crate::tables::RetentionPolicy;
use crate::trace::{run_trace, TraceReport, TraceRequest};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Manifest {
    retention_horizon: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WipeSummary {
    pub registry: usize,
    pub facilities: BTreeMap<FacilityId, WipeCounts>,
}

impl WipeSummary {
    pub fn total(&self) -> usize {
        self.registry + self.facilities.values().map(WipeCounts::total).sum::<usize>()
    }
}

pub struct Deployment {
    pub registry: Registry,
    pub facilities: BTreeMap<FacilityId, LocalFacility>,
}

fn directory_for(facilities: &BTreeMap<FacilityId, LocalFacility>) -> FacilityDirectory {
    let mut dir = FacilityDirectory::new();
    for (id, f) in facilities {
        let (mode, ty) = {
            let g = f.0.read();
            (g.mode(), g.config().facility_type)
        };
        dir.insert(id.clone(), mode, ty, Arc::new(f.clone()));
    }
    dir
}

impl Deployment {
    /// `seed` makes pseudonyms reproducible; `None` seeds from the OS.
    pub fn new(configs: Vec<FacilityConfig>, policy: RetentionPolicy, seed: Option<u64>) -> Result<Self> {
        let mut facilities = BTreeMap::new();
        for c in configs {
            let id = c.id.clone();
            if facilities.insert(id.clone(), LocalFacility::new(Facility::new(c)?)).is_some() {
                return Err(Error::InvalidParameter(format!("facility {id} configured twice")));
            }
        }
        let directory = directory_for(&facilities);
        let registry = match seed {
            Some(s) => Registry::with_seed(directory, policy, s),
            None => Registry::new(directory, policy),
        };
        Ok(Deployment { registry, facilities })
    }

    pub fn facility(&self, id: &FacilityId) -> Result<&LocalFacility> {
        self.facilities.get(id).ok_or_else(|| Error::UnknownFacility(id.clone()))
    }

    pub fn trace(&self, req: &TraceRequest, trace_id: &str, now: Timestamp) -> Result<TraceReport> {
        run_trace(&self.registry, req, trace_id, now)
    }

    pub fn wipe_expired(&mut self, now: Timestamp) -> WipeSummary {
        WipeSummary {
            registry: self.registry.wipe_expired(now),
            facilities: self.facilities.iter().map(|(id, f)| (id.clone(), f.0.write().wipe_expired(now))).collect(),
        }
    }

    /// Oldest timestamp held anywhere.
    pub fn min_time(&self) -> Option<Timestamp> {
        let facility_min = self.facilities.values().filter_map(|f| f.0.read().min_time()).min();
        [self.registry.visits().min_time(), facility_min].into_iter().flatten().min()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        serde_json::to_writer_pretty(
            BufWriter::new(File::create(dir.join("deployment.json"))?),
            &Manifest { retention_horizon: self.registry.policy().horizon },
        )?;
        self.registry.save(&dir.join("registry"))?;
        for (id, f) in &self.facilities {
            f.0.read().save(&dir.join("facilities").join(id.as_str()))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(dir.join("deployment.json"))?))?;
        let policy = RetentionPolicy::new(manifest.retention_horizon)?;
        let mut facilities = BTreeMap::new();
        let fdir = dir.join("facilities");
        if fdir.exists() {
            for entry in fs::read_dir(&fdir)? {
                let path = entry?.path();
                if path.is_dir() {
                    let f = Facility::load(&path)?;
                    facilities.insert(f.id().clone(), LocalFacility::new(f));
                }
            }
        }
        let registry = Registry::load(&dir.join("registry"), directory_for(&facilities), policy)?;
        Ok(Deployment { registry, facilities })
    }
}

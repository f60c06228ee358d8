//! Deterministic scenario engine: layouts, visitor mobility, sign-in and
//! sign-out flows and radio readings for both facility modes, plus the
//! brute-force ground-truth oracle.

mod generate;
mod oracle;
mod replay;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use generate::{
    generate_scenario, generate_scenario_with, write_event, write_event_stream, Event, GroundTruth, PlantedTruth,
    TruthPair, TruthVisit,
};
pub use oracle::{oracle_contacts, oracle_contacts_of, OraclePair};
pub use replay::{percentile, positioning_errors, run_scenario, Backend, Replay, GATEWAY_BATCH_SECONDS};

use crate::error::{Error, Result};
use crate::facility::{FacilityConfig, FacilityMode};
use crate::ids::{FacilityId, PhoneId, Timestamp};
use crate::positioning::{FacilityLayout, PathLossModel};
use crate::trace::FacilityType;

/// Shortest generated visit, seconds.
pub const MIN_VISIT: u64 = 120;
/// Seconds a returned device rests before it is handed out again.
pub const DEVICE_COOLDOWN: u64 = 60;
/// First synthetic phone number; visitor `i` gets `PHONE_BASE + i`.
pub const PHONE_BASE: u64 = 5_550_000_000;

pub fn phone_of(visitor: usize) -> PhoneId {
    PhoneId::parse(&(PHONE_BASE + visitor as u64).to_string()).expect("synthetic phones are 10 digits")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenFloor {
    pub width: f64,
    pub height: f64,
    /// Gateways per side.
    pub gateway_grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilitySpec {
    pub id: FacilityId,
    pub mode: FacilityMode,
    #[serde(default)]
    pub facility_type: FacilityType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<FacilityLayout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open_floor: Option<OpenFloor>,
}

impl FacilitySpec {
    pub fn new(id: impl Into<FacilityId>, mode: FacilityMode) -> Self {
        FacilitySpec {
            id: id.into(),
            mode,
            facility_type: FacilityType::Generic,
            layout: None,
            open_floor: None,
        }
    }

    /// The explicit layout, else the open floor, else the default 30 m
    /// square.
    pub fn resolved_layout(&self) -> FacilityLayout {
        match (&self.layout, self.open_floor) {
            (Some(l), _) => l.clone(),
            (None, Some(o)) => FacilityLayout::open_floor(o.width, o.height, o.gateway_grid),
            (None, None) => FacilityLayout::default_30x30(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mobility {
    /// Mean pause at each waypoint, seconds.
    pub waypoint_dwell_mean: f64,
    /// Meters per second.
    pub speed: f64,
}

impl Default for Mobility {
    fn default() -> Self {
        Mobility {
            waypoint_dwell_mean: 60.0,
            speed: 1.0,
        }
    }
}

/// A contact forced onto the patient: `visitor` stays `distance` meters
/// from the patient for `seconds` during the patient's visit to `facility`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedContact {
    pub visitor: usize,
    pub facility: FacilityId,
    pub seconds: u64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfectionPlan {
    pub patient: usize,
    #[serde(default)]
    pub contacts: Vec<PlantedContact>,
}

fn default_start() -> Timestamp {
    1_700_000_000
}

fn default_visit_mean() -> f64 {
    1800.0
}

fn default_sampling() -> u64 {
    1
}

fn default_radio_range() -> f64 {
    15.0
}

fn default_gateway_range() -> f64 {
    25.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start: Timestamp,
    pub facilities: Vec<FacilitySpec>,
    pub visitors: usize,
    /// Seconds.
    pub duration: u64,
    #[serde(default)]
    pub mobility: Mobility,
    /// Mean visit length, seconds.
    #[serde(default = "default_visit_mean")]
    pub visit_mean: f64,
    /// Seconds between radio emissions.
    #[serde(default = "default_sampling")]
    pub sampling: u64,
    #[serde(default)]
    pub model: PathLossModel,
    /// Devices hear each other up to this many meters.
    #[serde(default = "default_radio_range")]
    pub radio_range: f64,
    /// Gateways hear beacons up to this many meters.
    #[serde(default = "default_gateway_range")]
    pub gateway_range: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infection: Option<InfectionPlan>,
}

impl ScenarioSpec {
    pub fn new(seed: u64, facilities: Vec<FacilitySpec>, visitors: usize, duration: u64) -> Self {
        ScenarioSpec {
            seed,
            start: default_start(),
            facilities,
            visitors,
            duration,
            mobility: Mobility::default(),
            visit_mean: default_visit_mean(),
            sampling: default_sampling(),
            model: PathLossModel::default(),
            radio_range: default_radio_range(),
            gateway_range: default_gateway_range(),
            infection: None,
        }
    }

    pub fn end(&self) -> Timestamp {
        self.start + self.duration
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        self.model.validate()?;
        if self.sampling == 0 {
            return bad("sampling must be at least 1 s".into());
        }
        if !(self.mobility.speed > 0.0 && self.mobility.waypoint_dwell_mean > 0.0 && self.visit_mean > 0.0) {
            return bad("speed, waypoint dwell and visit mean must be positive".into());
        }
        if !(self.radio_range > 0.0 && self.gateway_range > 0.0) {
            return bad("radio ranges must be positive".into());
        }
        let ids: BTreeSet<&FacilityId> = self.facilities.iter().map(|f| &f.id).collect();
        if ids.len() != self.facilities.len() {
            return bad("facility ids must be unique".into());
        }
        for f in &self.facilities {
            if let Some(o) = f.open_floor {
                if !(o.width > 0.0 && o.height > 0.0) || o.gateway_grid < 2 {
                    return bad(format!("facility {}: open floor needs positive size and a gateway grid of at least 2", f.id));
                }
            }
        }
        if self.visitors > 0 {
            if self.facilities.is_empty() {
                return bad("visitors need at least one facility".into());
            }
            if self.duration < MIN_VISIT {
                return bad(format!("duration must be at least {MIN_VISIT} s"));
            }
        }
        if (self.visitors as u64) >= 1_000_000_000 {
            return bad("too many visitors for synthetic phone numbers".into());
        }
        let Some(plan) = &self.infection else {
            return Ok(());
        };
        if plan.patient >= self.visitors {
            return bad(format!("patient {} out of range", plan.patient));
        }
        if plan.contacts.len() >= self.visitors {
            return bad(format!(
                "{} planted contacts need more than {} visitors",
                plan.contacts.len(),
                self.visitors
            ));
        }
        let mut seen = BTreeSet::new();
        for c in &plan.contacts {
            if c.visitor >= self.visitors || c.visitor == plan.patient || !seen.insert(c.visitor) {
                return bad(format!("planted contact visitor {} is invalid or repeated", c.visitor));
            }
            let Some(f) = self.facilities.iter().find(|f| f.id == c.facility) else {
                return bad(format!("planted contact names unknown facility {}", c.facility));
            };
            let layout = f.resolved_layout();
            if !(c.distance > 0.0 && c.distance <= layout.width.min(layout.height) / 2.0) || c.seconds == 0 {
                return bad(format!("planted contact {}: distance or duration out of range", c.visitor));
            }
            if c.seconds > self.patient_visit_len() {
                return bad(format!(
                    "planted contact {} lasts {} s, longer than the patient's {} s visit",
                    c.visitor,
                    c.seconds,
                    self.patient_visit_len()
                ));
            }
        }
        if self.patient_visit_len() < MIN_VISIT && !plan.contacts.is_empty() {
            return bad("duration too short for the patient's visits".into());
        }
        Ok(())
    }

    /// Facilities the patient visits, in plan order.
    pub(crate) fn patient_facilities(&self) -> Vec<FacilityId> {
        let mut out: Vec<FacilityId> = Vec::new();
        for c in self.infection.iter().flat_map(|p| &p.contacts) {
            if !out.contains(&c.facility) {
                out.push(c.facility.clone());
            }
        }
        out
    }

    pub(crate) fn patient_visit_len(&self) -> u64 {
        let k = self.patient_facilities().len().max(1) as u64;
        self.duration / k / 2
    }

    /// Facility configurations matching the scenario, with device pools
    /// large enough for every visit.
    pub fn facility_configs(&self) -> Vec<FacilityConfig> {
        self.facilities
            .iter()
            .map(|f| {
                let mut c = FacilityConfig::new(f.id.clone(), f.mode).with_type(f.facility_type).with_pool(self.visitors.max(1));
                c.model = self.model;
                if f.mode != FacilityMode::U2u {
                    c.layout = Some(f.resolved_layout());
                }
                c
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ScenarioSpec {
        let mut s = ScenarioSpec::new(1, vec![FacilitySpec::new("F1", FacilityMode::U2u)], 10, 3600);
        s.infection = Some(InfectionPlan {
            patient: 0,
            contacts: vec![PlantedContact { visitor: 1, facility: "F1".into(), seconds: 120, distance: 2.0 }],
        });
        s
    }

    #[test]
    fn valid_spec_passes() {
        spec().validate().unwrap();
    }

    #[test]
    fn infeasible_plans_rejected() {
        let mut s = spec();
        s.visitors = 1;
        assert!(s.validate().is_err());
        let mut s = spec();
        s.infection.as_mut().unwrap().contacts[0].visitor = 0;
        assert!(s.validate().is_err());
        let mut s = spec();
        s.infection.as_mut().unwrap().contacts[0].facility = "nope".into();
        assert!(s.validate().is_err());
        let mut s = spec();
        s.infection.as_mut().unwrap().contacts[0].seconds = 4000;
        assert!(s.validate().is_err());
        let mut s = spec();
        s.sampling = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn json_defaults() {
        let s: ScenarioSpec = serde_json::from_str(
            r#"{"seed":5,"facilities":[{"id":"A","mode":"location","open_floor":{"width":40,"height":20,"gateway_grid":3}}],"visitors":3,"duration":600}"#,
        )
        .unwrap();
        assert_eq!((s.sampling, s.start, s.radio_range), (1, 1_700_000_000, 15.0));
        assert_eq!(s.facilities[0].resolved_layout().width, 40.0);
        assert_eq!(phone_of(3).as_str(), "5550000003");
    }
}

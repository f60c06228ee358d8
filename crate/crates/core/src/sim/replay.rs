use std::collections::BTreeMap;

use super::{generate_scenario_with, Event, GroundTruth, ScenarioSpec};
use crate::deployment::Deployment;
use crate::error::{Error, Result};
use crate::facility::Facility;
use crate::ids::{BleId, FacilityId, PhoneId, Timestamp};
use crate::positioning::GatewayReading;
use crate::tables::RetentionPolicy;
use crate::u2u::RawReading;

/// Gateway readings are uploaded in batches covering this many seconds.
pub const GATEWAY_BATCH_SECONDS: u64 = 300;

/// Where a replayed scenario goes: an in-process deployment or a set of
/// remote services.
pub trait Backend {
    type Error: From<Error>;

    fn sign_in(&mut self, phone: &PhoneId, facility: &FacilityId, time: Timestamp, device: &BleId) -> Result<(), Self::Error>;
    fn sign_out(&mut self, facility: &FacilityId, device: &BleId, time: Timestamp) -> Result<(), Self::Error>;
    fn upload_device_log(&mut self, facility: &FacilityId, readings: &[RawReading]) -> Result<(), Self::Error>;
    fn upload_gateway_readings(&mut self, facility: &FacilityId, readings: &[GatewayReading]) -> Result<(), Self::Error>;
}

impl<B: Backend + ?Sized> Backend for &mut B {
    type Error = B::Error;

    fn sign_in(&mut self, phone: &PhoneId, facility: &FacilityId, time: Timestamp, device: &BleId) -> Result<(), B::Error> {
        (**self).sign_in(phone, facility, time, device)
    }

    fn sign_out(&mut self, facility: &FacilityId, device: &BleId, time: Timestamp) -> Result<(), B::Error> {
        (**self).sign_out(facility, device, time)
    }

    fn upload_device_log(&mut self, facility: &FacilityId, readings: &[RawReading]) -> Result<(), B::Error> {
        (**self).upload_device_log(facility, readings)
    }

    fn upload_gateway_readings(&mut self, facility: &FacilityId, readings: &[GatewayReading]) -> Result<(), B::Error> {
        (**self).upload_gateway_readings(facility, readings)
    }
}

impl Backend for Deployment {
    type Error = Error;

    fn sign_in(&mut self, phone: &PhoneId, facility: &FacilityId, time: Timestamp, device: &BleId) -> Result<()> {
        self.registry.sign_in(phone, facility, time, Some(device.clone()))?;
        self.registry.drain_sms();
        Ok(())
    }

    fn sign_out(&mut self, facility: &FacilityId, device: &BleId, time: Timestamp) -> Result<()> {
        self.facility(facility)?.0.write().sign_out(device, time)?;
        Ok(())
    }

    fn upload_device_log(&mut self, facility: &FacilityId, readings: &[RawReading]) -> Result<()> {
        self.facility(facility)?.0.write().ingest_device_logs(readings)?;
        Ok(())
    }

    fn upload_gateway_readings(&mut self, facility: &FacilityId, readings: &[GatewayReading]) -> Result<()> {
        self.facility(facility)?.0.write().ingest_gateway_readings(readings)?;
        Ok(())
    }
}

/// Feeds an event stream to a backend the way devices and gateways would:
/// a device's log is uploaded when it is returned, gateway readings go up in
/// fixed time batches.
pub struct Replay<B: Backend> {
    backend: B,
    logs: BTreeMap<(FacilityId, BleId), Vec<RawReading>>,
    gateway: BTreeMap<FacilityId, Vec<GatewayReading>>,
    batch: Option<Timestamp>,
}

impl<B: Backend> Replay<B> {
    pub fn new(backend: B) -> Self {
        Replay {
            backend,
            logs: BTreeMap::new(),
            gateway: BTreeMap::new(),
            batch: None,
        }
    }

    fn flush_gateways(&mut self) -> Result<(), B::Error> {
        for (facility, readings) in std::mem::take(&mut self.gateway) {
            self.backend.upload_gateway_readings(&facility, &readings)?;
        }
        Ok(())
    }

    pub fn feed(&mut self, ev: Event) -> Result<(), B::Error> {
        let batch = ev.time() / GATEWAY_BATCH_SECONDS;
        if self.batch.is_some_and(|b| b != batch) {
            self.flush_gateways()?;
        }
        self.batch = Some(batch);
        match ev {
            Event::SignIn { time, facility, phone, device } => self.backend.sign_in(&phone, &facility, time, &device),
            Event::SignOut { time, facility, device } => {
                if let Some(log) = self.logs.remove(&(facility.clone(), device.clone())) {
                    self.backend.upload_device_log(&facility, &log)?;
                }
                self.backend.sign_out(&facility, &device, time)
            }
            Event::Sighting { facility, reading } => {
                self.logs.entry((facility, reading.observer.clone())).or_default().push(reading);
                Ok(())
            }
            Event::Gateway { facility, reading } => {
                self.gateway.entry(facility).or_default().push(reading);
                Ok(())
            }
        }
    }

    /// Uploads whatever is still buffered and hands the backend back.
    pub fn finish(mut self) -> Result<B, B::Error> {
        self.flush_gateways()?;
        for ((facility, _), log) in std::mem::take(&mut self.logs) {
            self.backend.upload_device_log(&facility, &log)?;
        }
        Ok(self.backend)
    }
}

/// Generates the scenario and replays it into a fresh in-process deployment
/// whose pseudonyms are seeded from the scenario seed.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<(Deployment, GroundTruth)> {
    let deployment = Deployment::new(spec.facility_configs(), RetentionPolicy::default(), Some(spec.seed))?;
    let mut replay = Replay::new(deployment);
    let truth = generate_scenario_with(spec, |e| replay.feed(e))?;
    Ok((replay.finish()?, truth))
}

/// Distance from each stored fix's cell centre to the device's true
/// position at the fix time.
pub fn positioning_errors(truth: &GroundTruth, facility: &Facility) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(facility.locations.len());
    for fix in facility.locations.sorted() {
        let visit = truth
            .visits
            .iter()
            .find(|v| &v.facility == facility.id() && v.device == fix.device && v.window().contains(fix.time))
            .ok_or_else(|| Error::InvalidScenario(format!("fix for {} at {} has no visit", fix.device, fix.time)))?;
        let (x, y) = visit.position(fix.time).expect("inside visit");
        let (cx, cy) = fix.location.center();
        out.push((cx - x).hypot(cy - y));
    }
    Ok(out)
}

/// Nearest-rank percentile, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize).max(1);
    Some(v[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facility::FacilityMode;
    use crate::sim::{FacilitySpec, InfectionPlan, PlantedContact};

    fn spec() -> ScenarioSpec {
        let mut s = ScenarioSpec::new(
            9,
            vec![FacilitySpec::new("F1", FacilityMode::U2u), FacilitySpec::new("F2", FacilityMode::Location)],
            20,
            1800,
        );
        s.visit_mean = 600.0;
        s.infection = Some(InfectionPlan {
            patient: 0,
            contacts: vec![PlantedContact { visitor: 1, facility: "F1".into(), seconds: 120, distance: 1.5 }],
        });
        s
    }

    #[test]
    fn replay_fills_every_table() {
        let (d, truth) = run_scenario(&spec()).unwrap();
        assert_eq!(d.registry.visits().len(), truth.visits.len());
        let f1 = d.facility(&"F1".into()).unwrap().0.read();
        let f2 = d.facility(&"F2".into()).unwrap().0.read();
        assert!(!f1.contacts.is_empty());
        assert!(!f2.locations.is_empty());
        assert!(f1.is_coherent() && f2.is_coherent());
        assert!(f1.master.iter().chain(f2.master.iter()).all(|r| r.time_out.is_some()));
    }

    #[test]
    fn fixes_land_near_truth() {
        let median = |sigma: f64| {
            let mut s = spec();
            s.model.noise_sigma = sigma;
            let (d, truth) = run_scenario(&s).unwrap();
            let errors = positioning_errors(&truth, &d.facility(&"F2".into()).unwrap().0.read()).unwrap();
            percentile(&errors, 0.5).unwrap()
        };
        // strongest-of-epoch selection biases noisy ranges short
        assert!(median(0.0) < 1.0);
        assert!(median(2.0) < 5.0);
    }

    #[test]
    fn nearest_rank() {
        assert_eq!(percentile(&[], 0.5), None);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.5), Some(2.0));
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 1.0), Some(3.0));
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.0), Some(1.0));
    }
}

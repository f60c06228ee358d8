//! The registry: sign-in at facility entrances, pseudonym issuance,
//! frequent-visitor badges and the server-side visit table.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ids::{BleId, FacilityId, PhoneId, Timestamp, VisitorId};
use crate::protocol::{ExchangeRequest, FacilityDirectory};
use crate::tables::snapshot::{read_tsv, write_tsv};
use crate::tables::{RetentionPolicy, VisitRecord, VisitTable};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SmsDestination {
    Phone(PhoneId),
    /// The entrance machine, for visitors who signed in with a government ID.
    Machine,
}

impl fmt::Display for SmsDestination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmsDestination::Phone(p) => f.write_str(p.as_str()),
            SmsDestination::Machine => f.write_str("machine"),
        }
    }
}

impl Serialize for SmsDestination {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SmsDestination {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "machine" {
            Ok(SmsDestination::Machine)
        } else {
            PhoneId::parse(&s).map(SmsDestination::Phone).map_err(serde::de::Error::custom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmsEvent {
    pub destination: SmsDestination,
    pub body: String,
    pub time: Timestamp,
}

impl SmsEvent {
    fn for_visit(destination: SmsDestination, facility: &FacilityId, visitor: VisitorId, time: Timestamp) -> Self {
        SmsEvent {
            destination,
            body: format!("Your visitor ID at {facility} is {visitor}"),
            time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceAssignment {
    pub visitor: VisitorId,
    pub device: BleId,
    pub facility: FacilityId,
    pub issued_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequentVisitorLink {
    pub phone: PhoneId,
    pub facility: FacilityId,
    pub badge: BleId,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct LinkFile {
    links: Vec<FrequentVisitorLink>,
}

pub struct Registry {
    visits: VisitTable,
    rng: ChaCha20Rng,
    frequent: BTreeMap<(PhoneId, FacilityId), BleId>,
    badges: BTreeMap<(FacilityId, BleId), PhoneId>,
    outbox: Vec<SmsEvent>,
    policy: RetentionPolicy,
    directory: FacilityDirectory,
}

impl Registry {
    /// Pseudonyms drawn from an OS-seeded generator.
    pub fn new(directory: FacilityDirectory, policy: RetentionPolicy) -> Self {
        Self::with_rng(directory, policy, ChaCha20Rng::from_os_rng())
    }

    /// Reproducible pseudonyms, for simulations and fixtures.
    pub fn with_seed(directory: FacilityDirectory, policy: RetentionPolicy, seed: u64) -> Self {
        Self::with_rng(directory, policy, ChaCha20Rng::seed_from_u64(seed))
    }

    fn with_rng(directory: FacilityDirectory, policy: RetentionPolicy, rng: ChaCha20Rng) -> Self {
        Registry {
            visits: VisitTable::new(),
            rng,
            frequent: BTreeMap::new(),
            badges: BTreeMap::new(),
            outbox: Vec::new(),
            policy,
            directory,
        }
    }

    pub fn visits(&self) -> &VisitTable {
        &self.visits
    }

    pub fn directory(&self) -> &FacilityDirectory {
        &self.directory
    }

    pub fn policy(&self) -> RetentionPolicy {
        self.policy
    }

    fn fresh_visitor(&mut self) -> VisitorId {
        loop {
            let v = VisitorId::generate(&mut self.rng);
            if self.visits.lookup_by_visitor(&v).is_none() {
                return v;
            }
        }
    }

    fn enter(
        &mut self,
        phone: PhoneId,
        facility: &FacilityId,
        now: Timestamp,
        device: Option<BleId>,
        destination: SmsDestination,
    ) -> Result<(DeviceAssignment, SmsEvent)> {
        let link = self
            .directory
            .get(facility)
            .ok_or_else(|| Error::UnknownFacility(facility.clone()))?
            .link
            .clone();
        let visitor = self.fresh_visitor();
        self.visits.insert(VisitRecord {
            phone,
            facility: facility.clone(),
            visitor,
            time: now,
        })?;
        let response = match link.exchange(&ExchangeRequest { visitor, device, time: now }) {
            Ok(r) => r,
            Err(e) => {
                self.visits.remove(&visitor);
                return Err(e.into_error(facility));
            }
        };
        let sms = SmsEvent::for_visit(destination, facility, visitor, now);
        self.outbox.push(sms.clone());
        Ok((
            DeviceAssignment {
                visitor,
                device: response.device,
                facility: facility.clone(),
                issued_at: now,
            },
            sms,
        ))
    }

    /// Issues a pseudonym for `phone` and has the facility bind it to a
    /// device. `device = None` lets the facility choose from its pool.
    pub fn sign_in(
        &mut self,
        phone: &PhoneId,
        facility: &FacilityId,
        now: Timestamp,
        device: Option<BleId>,
    ) -> Result<(DeviceAssignment, SmsEvent)> {
        self.enter(phone.clone(), facility, now, device, SmsDestination::Phone(phone.clone()))
    }

    /// As [`Registry::sign_in`], the SMS going to the entrance machine.
    pub fn sign_in_by_gov_id(
        &mut self,
        gov_id: &PhoneId,
        facility: &FacilityId,
        now: Timestamp,
        device: Option<BleId>,
    ) -> Result<(DeviceAssignment, SmsEvent)> {
        self.enter(gov_id.clone(), facility, now, device, SmsDestination::Machine)
    }

    /// Links a phone to a long-lived badge at one facility, replacing any
    /// earlier badge for that pair.
    pub fn register_frequent(&mut self, phone: &PhoneId, facility: &FacilityId, badge: &BleId) -> Result<FrequentVisitorLink> {
        if self.directory.get(facility).is_none() {
            return Err(Error::UnknownFacility(facility.clone()));
        }
        if let Some(owner) = self.badges.get(&(facility.clone(), badge.clone())) {
            if owner != phone {
                return Err(Error::DeviceBusy(badge.clone()));
            }
        }
        if let Some(old) = self.frequent.insert((phone.clone(), facility.clone()), badge.clone()) {
            self.badges.remove(&(facility.clone(), old));
        }
        self.badges.insert((facility.clone(), badge.clone()), phone.clone());
        Ok(FrequentVisitorLink {
            phone: phone.clone(),
            facility: facility.clone(),
            badge: badge.clone(),
        })
    }

    /// A frequent visitor scanning their badge at the entrance.
    pub fn badge_scan(&mut self, badge: &BleId, facility: &FacilityId, now: Timestamp) -> Result<DeviceAssignment> {
        let phone = self
            .badges
            .get(&(facility.clone(), badge.clone()))
            .cloned()
            .ok_or_else(|| Error::UnknownBadge(badge.clone()))?;
        let (assignment, _) = self.sign_in(&phone, facility, now, Some(badge.clone()))?;
        Ok(assignment)
    }

    pub fn links(&self) -> Vec<FrequentVisitorLink> {
        self.frequent
            .iter()
            .map(|((phone, facility), badge)| FrequentVisitorLink {
                phone: phone.clone(),
                facility: facility.clone(),
                badge: badge.clone(),
            })
            .collect()
    }

    /// Takes the SMS messages emitted since the last drain.
    pub fn drain_sms(&mut self) -> Vec<SmsEvent> {
        std::mem::take(&mut self.outbox)
    }

    pub fn wipe_expired(&mut self, now: Timestamp) -> usize {
        let cutoff = self.policy.cutoff(now);
        self.outbox.retain(|s| s.time >= cutoff);
        self.visits.wipe_before(cutoff)
    }

    /// Writes `visits.tsv` and `links.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_tsv(BufWriter::new(File::create(dir.join("visits.tsv"))?), self.visits.sorted())?;
        serde_json::to_writer_pretty(
            BufWriter::new(File::create(dir.join("links.json"))?),
            &LinkFile { links: self.links() },
        )?;
        Ok(())
    }

    /// Restores tables saved by [`Registry::save`]; the pseudonym generator
    /// is reseeded from the OS.
    pub fn load(dir: &Path, directory: FacilityDirectory, policy: RetentionPolicy) -> Result<Self> {
        let mut r = Registry::new(directory, policy);
        for rec in read_tsv::<VisitRecord, _>(BufReader::new(File::open(dir.join("visits.tsv"))?), "visits.tsv")? {
            r.visits.insert(rec)?;
        }
        let links_path = dir.join("links.json");
        if links_path.exists() {
            let file: LinkFile = serde_json::from_reader(BufReader::new(File::open(links_path)?))?;
            for l in file.links {
                r.frequent.insert((l.phone.clone(), l.facility.clone()), l.badge.clone());
                r.badges.insert((l.facility, l.badge), l.phone);
            }
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facility::{Facility, FacilityConfig, FacilityMode};
    use crate::protocol::LocalFacility;
    use crate::trace::FacilityType;
    use std::sync::Arc;

    fn setup() -> (Registry, LocalFacility) {
        let f = LocalFacility::new(Facility::new(FacilityConfig::new("F1", FacilityMode::U2u).with_pool(2)).unwrap());
        let mut dir = FacilityDirectory::new();
        dir.insert("F1".into(), FacilityMode::U2u, FacilityType::Generic, Arc::new(f.clone()));
        (Registry::with_seed(dir, RetentionPolicy::default(), 7), f)
    }

    fn phone(s: &str) -> PhoneId {
        PhoneId::parse(s).unwrap()
    }

    #[test]
    fn sign_in_happy_path() {
        let (mut r, f) = setup();
        let (a, sms) = r.sign_in(&phone("555123400"), &"F1".into(), 1000, Some("D7".into())).unwrap();
        assert_eq!(sms.destination, SmsDestination::Phone(phone("555123400")));
        assert_eq!(sms.body.matches(&a.visitor.to_hex()).count(), 1);
        assert_eq!(a.device.as_str(), "D7");
        let fac = f.0.read();
        let rec = fac.master.open_record(&"D7".into()).unwrap();
        assert_eq!((rec.visitor, rec.time_in), (a.visitor, 1000));
        assert_eq!(r.visits().lookup_by_visitor(&a.visitor).unwrap().time, 1000);
    }

    #[test]
    fn busy_device_rolls_back_visit() {
        let (mut r, _) = setup();
        r.sign_in(&phone("555123400"), &"F1".into(), 1000, Some("D7".into())).unwrap();
        let e = r.sign_in(&phone("555123499"), &"F1".into(), 1001, Some("D7".into())).unwrap_err();
        assert!(matches!(e, Error::FacilityRejected { ref code, .. } if code == "device_busy"));
        assert_eq!(r.visits().len(), 1);
        assert!(r.sign_in(&phone("555123400"), &"F9".into(), 1, None).is_err());
    }

    #[test]
    fn fresh_pseudonym_per_visit() {
        let (mut r, f) = setup();
        let p = phone("555123400");
        let (a, _) = r.sign_in(&p, &"F1".into(), 1000, Some("D7".into())).unwrap();
        f.0.write().sign_out(&"D7".into(), 4600).unwrap();
        let (b, _) = r.sign_in(&p, &"F1".into(), 90000, Some("D7".into())).unwrap();
        assert_ne!(a.visitor, b.visitor);
        assert_eq!(r.visits().lookup_by_phone(&p, crate::ids::Window::new(0, 100_000)).len(), 2);
    }

    #[test]
    fn gov_id_goes_to_machine() {
        let (mut r, _) = setup();
        let g = phone("99887766");
        let (a, sms) = r.sign_in_by_gov_id(&g, &"F1".into(), 5, None).unwrap();
        assert_eq!(sms.destination, SmsDestination::Machine);
        assert_eq!(serde_json::to_string(&sms.destination).unwrap(), "\"machine\"");
        let recs = r.visits().lookup_by_phone(&g, crate::ids::Window::new(0, 10));
        assert_eq!(recs[0].visitor, a.visitor);
    }

    #[test]
    fn badge_scans_match_manual_sign_ins() {
        let (mut r, f) = setup();
        let p = phone("555123400");
        let link = r.register_frequent(&p, &"F1".into(), &"B1".into()).unwrap();
        let a = r.badge_scan(&"B1".into(), &"F1".into(), 1000).unwrap();
        assert!(r.badge_scan(&"B1".into(), &"F1".into(), 1001).is_err());
        f.0.write().sign_out(&"B1".into(), 2000).unwrap();
        let b = r.badge_scan(&"B1".into(), &"F1".into(), 90000).unwrap();
        assert_ne!(a.visitor, b.visitor);
        assert_eq!(r.links(), vec![link]);
        let recs = r.visits().lookup_by_phone(&p, crate::ids::Window::new(0, 100_000));
        assert_eq!(recs.iter().map(|v| v.visitor).collect::<Vec<_>>(), vec![a.visitor, b.visitor]);
        assert!(matches!(r.badge_scan(&"nope".into(), &"F1".into(), 5), Err(Error::UnknownBadge(_))));
        let state = f.0.read().state_bytes().unwrap();
        let text = String::from_utf8_lossy(&state);
        assert!(!text.contains(p.as_str()));
        assert!(text.contains("B1"));
    }

    #[test]
    fn sms_destination_serde() {
        let d: SmsDestination = serde_json::from_str("\"555123400\"").unwrap();
        assert_eq!(d, SmsDestination::Phone(phone("555123400")));
        assert!(serde_json::from_str::<SmsDestination>("\"abc\"").is_err());
    }

    #[test]
    fn save_and_load() {
        let (mut r, _) = setup();
        r.sign_in(&phone("555123400"), &"F1".into(), 10, None).unwrap();
        r.register_frequent(&phone("555123401"), &"F1".into(), &"B2".into()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.save(dir.path()).unwrap();
        let back = Registry::load(dir.path(), r.directory().clone(), r.policy()).unwrap();
        assert_eq!(back.visits().sorted(), r.visits().sorted());
        assert_eq!(back.links(), r.links());
    }
}

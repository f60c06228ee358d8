//! One facility's deployment: its device pool, the Master, Contacts and
//! Locations tables, and the answers it gives the registry.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{BleId, FacilityId, Timestamp, VisitorId};
use crate::location::{self, LocationIngestStats, ProximityHit};
use crate::positioning::{FacilityLayout, GatewayReading, PathLossModel};
use crate::protocol::{
    ExchangeRequest, ExchangeResponse, FacilityQueryMessage, FacilityResponseMessage, Hits, QueryDiagnostics, QueryMode,
};
use crate::tables::snapshot::{read_tsv, write_tsv};
use crate::tables::{ContactEvent, ContactTable, LocationFix, LocationTable, MasterRecord, MasterTable, RetentionPolicy};
use crate::trace::{
    cell_counts, filter_contact_hits, filter_proximity_hits, stages, surface_contacts, ContextProfile, FacilityType,
};
use crate::u2u::{self, ContactHit, ContactIngestStats, RawReading};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FacilityMode {
    U2u,
    Location,
    Both,
}

impl FacilityMode {
    pub fn supports(self, q: QueryMode) -> bool {
        matches!(
            (self, q),
            (FacilityMode::Both, _) | (FacilityMode::U2u, QueryMode::U2u) | (FacilityMode::Location, QueryMode::Location)
        )
    }

    /// Queries the registry sends for one visit, in a fixed order.
    pub fn query_modes(self) -> &'static [QueryMode] {
        match self {
            FacilityMode::U2u => &[QueryMode::U2u],
            FacilityMode::Location => &[QueryMode::Location],
            FacilityMode::Both => &[QueryMode::U2u, QueryMode::Location],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityConfig {
    pub id: FacilityId,
    pub mode: FacilityMode,
    #[serde(default)]
    pub facility_type: FacilityType,
    /// Required for location mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<FacilityLayout>,
    #[serde(default)]
    pub model: PathLossModel,
    /// Devices the facility hands out when the registry does not name one.
    #[serde(default)]
    pub devices: Vec<BleId>,
    #[serde(default)]
    pub retention: RetentionPolicy,
}

impl FacilityConfig {
    pub fn new(id: impl Into<FacilityId>, mode: FacilityMode) -> Self {
        FacilityConfig {
            id: id.into(),
            mode,
            facility_type: FacilityType::Generic,
            layout: None,
            model: PathLossModel::default(),
            devices: Vec::new(),
            retention: RetentionPolicy::default(),
        }
    }

    /// Pool of `n` devices named `<id>-D001`, `<id>-D002`, ...
    pub fn with_pool(mut self, n: usize) -> Self {
        self.devices = (1..=n).map(|i| BleId::new(format!("{}-D{i:03}", self.id))).collect();
        self
    }

    pub fn with_layout(mut self, layout: FacilityLayout) -> Self {
        self.layout = Some(layout);
        self
    }

    pub fn with_type(mut self, facility_type: FacilityType) -> Self {
        self.facility_type = facility_type;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.retention.horizon == 0 {
            return Err(Error::InvalidParameter("retention horizon must be positive".into()));
        }
        if self.mode != FacilityMode::U2u && self.layout.is_none() {
            return Err(Error::InvalidLayout(format!("facility {} needs a layout for location mode", self.id)));
        }
        let unique: BTreeSet<&BleId> = self.devices.iter().collect();
        if unique.len() != self.devices.len() {
            return Err(Error::InvalidParameter(format!("facility {} lists a device twice", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacilityDiagnostics {
    pub contacts: ContactIngestStats,
    pub locations: LocationIngestStats,
}

fn add_contact(a: &mut ContactIngestStats, b: ContactIngestStats) {
    a.stored += b.stored;
    a.merged += b.merged;
    a.duplicates += b.duplicates;
    a.self_sightings += b.self_sightings;
    a.invalid += b.invalid;
}

fn add_location(a: &mut LocationIngestStats, b: LocationIngestStats) {
    a.fixes += b.fixes;
    a.no_fix += b.no_fix;
    a.unknown_gateway += b.unknown_gateway;
    a.degenerate += b.degenerate;
    a.duplicates += b.duplicates;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WipeCounts {
    pub master: usize,
    pub contacts: usize,
    pub locations: usize,
}

impl WipeCounts {
    pub fn total(&self) -> usize {
        self.master + self.contacts + self.locations
    }
}

#[derive(Debug, Clone)]
pub struct Facility {
    config: FacilityConfig,
    pub master: MasterTable,
    pub contacts: ContactTable,
    pub locations: LocationTable,
    diagnostics: FacilityDiagnostics,
}

impl Facility {
    pub fn new(config: FacilityConfig) -> Result<Self> {
        config.validate()?;
        Ok(Facility {
            config,
            master: MasterTable::new(),
            contacts: ContactTable::new(),
            locations: LocationTable::new(),
            diagnostics: FacilityDiagnostics::default(),
        })
    }

    pub fn id(&self) -> &FacilityId {
        &self.config.id
    }

    pub fn mode(&self) -> FacilityMode {
        self.config.mode
    }

    pub fn config(&self) -> &FacilityConfig {
        &self.config
    }

    pub fn layout(&self) -> Option<&FacilityLayout> {
        self.config.layout.as_ref()
    }

    pub fn diagnostics(&self) -> FacilityDiagnostics {
        self.diagnostics
    }

    /// First pool device with no open visit that can start one at `now`.
    pub fn free_device(&self, now: Timestamp) -> Result<BleId> {
        self.config
            .devices
            .iter()
            .find(|d| self.reissuable(d, now))
            .cloned()
            .ok_or_else(|| Error::PoolExhausted(self.config.id.clone()))
    }

    fn reissuable(&self, device: &BleId, now: Timestamp) -> bool {
        self.master
            .iter()
            .filter(|r| &r.device == device)
            .all(|r| r.time_out.is_some_and(|out| out < now))
    }

    /// Opens a visit binding the registry's pseudonym to a device.
    pub fn exchange(&mut self, req: &ExchangeRequest) -> Result<ExchangeResponse> {
        let device = match &req.device {
            Some(d) => d.clone(),
            None => self.free_device(req.time)?,
        };
        self.master.open(req.visitor, device.clone(), req.time)?;
        Ok(ExchangeResponse { device })
    }

    /// The device is handed back.
    pub fn sign_out(&mut self, device: &BleId, now: Timestamp) -> Result<VisitorId> {
        self.master.close(device, now)
    }

    fn require(&self, q: QueryMode) -> Result<()> {
        if self.config.mode.supports(q) {
            Ok(())
        } else {
            Err(Error::UnsupportedMode {
                facility: self.config.id.clone(),
                requested: q.as_str(),
            })
        }
    }

    pub fn ingest_device_logs(&mut self, readings: &[RawReading]) -> Result<ContactIngestStats> {
        self.require(QueryMode::U2u)?;
        let stats = u2u::ingest_device_logs(&mut self.contacts, readings, &self.config.model);
        add_contact(&mut self.diagnostics.contacts, stats);
        Ok(stats)
    }

    pub fn ingest_gateway_readings(&mut self, readings: &[GatewayReading]) -> Result<LocationIngestStats> {
        self.require(QueryMode::Location)?;
        let layout = self.config.layout.as_ref().expect("validated: location mode has a layout");
        let stats = location::ingest_gateway_readings(&mut self.locations, layout, &self.config.model, readings);
        add_location(&mut self.diagnostics.locations, stats);
        Ok(stats)
    }

    /// Answers one registry query for one visitor.
    pub fn handle_query(&self, msg: &FacilityQueryMessage) -> Result<FacilityResponseMessage> {
        self.require(msg.mode)?;
        let p = &msg.params;
        let profile = ContextProfile {
            max_distance: p.max_distance,
            min_persistence: p.min_contact.unwrap_or(0),
            ..ContextProfile::default()
        };
        profile.validate()?;
        let mut response = FacilityResponseMessage {
            request_id: msg.request_id.clone(),
            facility: self.config.id.clone(),
            hits: Hits::U2u(Vec::new()),
            trajectory: None,
            surface_contacts: Vec::new(),
            cell_counts: None,
            layout: None,
            diagnostics: QueryDiagnostics::default(),
        };
        match msg.mode {
            QueryMode::U2u => {
                let answer = u2u::query_contacts(&self.master, &self.contacts, &msg.visitor, msg.as_of)?;
                let raw = answer.hits.len();
                let hits: Vec<ContactHit> = filter_contact_hits(&answer.hits, &profile, &stages(&profile, false)).hits;
                response.diagnostics = QueryDiagnostics {
                    unmapped: answer.unmapped,
                    filtered_out: raw - hits.len(),
                };
                response.hits = Hits::U2u(hits);
            }
            QueryMode::Location => {
                let layout = self.config.layout.as_ref().expect("validated: location mode has a layout");
                let answer = location::query_proximity(&self.master, &self.locations, &msg.visitor, &p.proximity, msg.as_of)?;
                let raw = answer.hits.len();
                let mut hits: Vec<ProximityHit> = filter_proximity_hits(&answer.hits, &profile, &stages(&profile, false), None).hits;
                if let Some(label) = &p.location_label {
                    hits.retain(|h| &*h.location.zone == label.as_str());
                }
                response.diagnostics = QueryDiagnostics {
                    unmapped: answer.unmapped,
                    filtered_out: raw - hits.len(),
                };
                if let Some(s) = &p.surface {
                    response.surface_contacts = surface_contacts(&answer.trajectory, &self.master, &self.locations, s);
                }
                if let Some(period) = p.heatmap_period {
                    response.cell_counts = Some(cell_counts(&self.locations, layout, period));
                }
                response.hits = Hits::Location(hits);
                response.trajectory = Some(answer.trajectory);
                response.layout = Some(layout.clone());
            }
        }
        Ok(response)
    }

    pub fn wipe_expired(&mut self, now: Timestamp) -> WipeCounts {
        let cutoff = self.config.retention.cutoff(now);
        WipeCounts {
            master: self.master.wipe_before(cutoff),
            contacts: self.contacts.wipe_before(cutoff),
            locations: self.locations.wipe_before(cutoff),
        }
    }

    /// Oldest timestamp held in any table.
    pub fn min_time(&self) -> Option<Timestamp> {
        [self.master.min_time(), self.contacts.min_time(), self.locations.min_time()]
            .into_iter()
            .flatten()
            .min()
    }

    pub fn is_coherent(&self) -> bool {
        self.master.is_coherent() && self.contacts.is_coherent() && self.locations.is_coherent()
    }

    /// Writes `facility.json`, `master.tsv`, `contacts.tsv` and
    /// `locations.tsv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(File::create(dir.join("facility.json"))?);
        serde_json::to_writer_pretty(&mut out, &self.config)?;
        out.write_all(b"\n")?;
        out.flush()?;
        write_tsv(BufWriter::new(File::create(dir.join("master.tsv"))?), self.master.sorted())?;
        write_tsv(BufWriter::new(File::create(dir.join("contacts.tsv"))?), self.contacts.sorted())?;
        write_tsv(BufWriter::new(File::create(dir.join("locations.tsv"))?), self.locations.sorted())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: FacilityConfig = serde_json::from_reader(BufReader::new(File::open(dir.join("facility.json"))?))?;
        let mut f = Facility::new(config)?;
        let table = |name: &str| -> Result<BufReader<File>> { Ok(BufReader::new(File::open(dir.join(name))?)) };
        for rec in read_tsv::<MasterRecord, _>(table("master.tsv")?, "master.tsv")? {
            f.master.insert(rec)?;
        }
        for ev in read_tsv::<ContactEvent, _>(table("contacts.tsv")?, "contacts.tsv")? {
            f.contacts.insert(ev);
        }
        for fix in read_tsv::<LocationFix, _>(table("locations.tsv")?, "locations.tsv")? {
            f.locations.insert(fix);
        }
        Ok(f)
    }

    /// Every byte of facility-held state, as the snapshot files would hold it.
    pub fn state_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.config)?;
        write_tsv(&mut out, self.master.sorted())?;
        write_tsv(&mut out, self.contacts.sorted())?;
        write_tsv(&mut out, self.locations.sorted())?;
        out.extend(serde_json::to_vec(&self.diagnostics)?);
        Ok(out)
    }
}

/// Per-table row counts, for reports and logs.
pub fn table_sizes(f: &Facility) -> BTreeMap<&'static str, usize> {
    BTreeMap::from([
        ("master", f.master.len()),
        ("contacts", f.contacts.len()),
        ("locations", f.locations.len()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::positioning::ProximityParams;
    use crate::protocol::QueryParams;

    fn vid(n: u8) -> VisitorId {
        VisitorId::from_bytes([n; 16])
    }

    fn u2u_facility() -> Facility {
        Facility::new(FacilityConfig::new("F1", FacilityMode::U2u).with_pool(3)).unwrap()
    }

    fn query(mode: QueryMode, v: VisitorId) -> FacilityQueryMessage {
        FacilityQueryMessage {
            request_id: "r".into(),
            visitor: v,
            mode,
            as_of: 10_000,
            params: QueryParams::default(),
        }
    }

    #[test]
    fn exchange_picks_free_devices_then_exhausts() {
        let mut f = u2u_facility();
        let mut got = Vec::new();
        for i in 0..3 {
            got.push(f.exchange(&ExchangeRequest { visitor: vid(i), device: None, time: 100 }).unwrap().device);
        }
        assert_eq!(got.iter().map(|d| d.as_str()).collect::<Vec<_>>(), ["F1-D001", "F1-D002", "F1-D003"]);
        assert!(matches!(
            f.exchange(&ExchangeRequest { visitor: vid(9), device: None, time: 100 }),
            Err(Error::PoolExhausted(_))
        ));
        f.sign_out(&"F1-D002".into(), 150).unwrap();
        // same second as the return is not reissuable
        assert!(f.exchange(&ExchangeRequest { visitor: vid(9), device: None, time: 150 }).is_err());
        let d = f.exchange(&ExchangeRequest { visitor: vid(9), device: None, time: 151 }).unwrap().device;
        assert_eq!(d.as_str(), "F1-D002");
    }

    #[test]
    fn explicit_device_busy() {
        let mut f = u2u_facility();
        f.exchange(&ExchangeRequest { visitor: vid(1), device: Some("D7".into()), time: 1000 }).unwrap();
        assert!(matches!(
            f.exchange(&ExchangeRequest { visitor: vid(2), device: Some("D7".into()), time: 1001 }),
            Err(Error::DeviceBusy(_))
        ));
    }

    #[test]
    fn wrong_mode_is_unsupported() {
        let mut f = u2u_facility();
        f.exchange(&ExchangeRequest { visitor: vid(1), device: None, time: 1 }).unwrap();
        let e = f.handle_query(&query(QueryMode::Location, vid(1))).unwrap_err();
        assert_eq!(e.code(), "unsupported_mode");
        assert!(f.ingest_gateway_readings(&[]).is_err());
        assert!(f.handle_query(&query(QueryMode::U2u, vid(1))).is_ok());
    }

    #[test]
    fn location_needs_layout() {
        assert!(Facility::new(FacilityConfig::new("F2", FacilityMode::Location)).is_err());
        assert!(Facility::new(FacilityConfig::new("F2", FacilityMode::Both).with_layout(FacilityLayout::default_30x30())).is_ok());
    }

    #[test]
    fn facility_side_parameters() {
        let mut f = u2u_facility();
        f.exchange(&ExchangeRequest { visitor: vid(1), device: Some("A".into()), time: 0 }).unwrap();
        f.exchange(&ExchangeRequest { visitor: vid(2), device: Some("B".into()), time: 0 }).unwrap();
        f.exchange(&ExchangeRequest { visitor: vid(3), device: Some("C".into()), time: 0 }).unwrap();
        let r = |o: &str, s: &str, t, rssi| RawReading { observer: o.into(), observed: s.into(), time: t, rssi };
        f.ingest_device_logs(&[r("A", "B", 100, -59.0), r("A", "C", 100, -79.0)]).unwrap();
        let mut q = query(QueryMode::U2u, vid(1));
        q.params.max_distance = Some(2.0);
        let resp = f.handle_query(&q).unwrap();
        assert_eq!(resp.hits.len(), 1);
        assert_eq!(resp.diagnostics.filtered_out, 1);
        q.params = QueryParams { proximity: ProximityParams::default(), ..Default::default() };
        assert_eq!(f.handle_query(&q).unwrap().hits.len(), 2);
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = Facility::new(
            FacilityConfig::new("F3", FacilityMode::Both).with_layout(FacilityLayout::default_30x30()).with_pool(2),
        )
        .unwrap();
        f.exchange(&ExchangeRequest { visitor: vid(1), device: None, time: 10 }).unwrap();
        f.exchange(&ExchangeRequest { visitor: vid(2), device: None, time: 12 }).unwrap();
        f.sign_out(&"F3-D001".into(), 90).unwrap();
        let r = RawReading { observer: "F3-D001".into(), observed: "F3-D002".into(), time: 20, rssi: -70.0 };
        f.ingest_device_logs(&[r]).unwrap();
        let layout = f.layout().unwrap().clone();
        let m = f.config().model;
        let readings: Vec<GatewayReading> = layout
            .gateways
            .iter()
            .map(|g| GatewayReading {
                gateway: g.id.clone(),
                device: "F3-D002".into(),
                time: 30,
                rssi: m.rssi_from_distance((g.x - 4.0).hypot(g.y - 9.0), 0.0),
            })
            .collect();
        f.ingest_gateway_readings(&readings).unwrap();
        f.save(dir.path()).unwrap();
        let g = Facility::load(dir.path()).unwrap();
        assert_eq!(g.config(), f.config());
        assert_eq!(g.master.sorted(), f.master.sorted());
        assert_eq!(g.contacts.sorted(), f.contacts.sorted());
        assert_eq!(g.locations.sorted(), f.locations.sorted());
        assert!(g.is_coherent());
    }

    #[test]
    fn wipe_by_own_timestamp() {
        let mut f = u2u_facility();
        f.exchange(&ExchangeRequest { visitor: vid(1), device: Some("A".into()), time: 0 }).unwrap();
        f.sign_out(&"A".into(), 50).unwrap();
        f.exchange(&ExchangeRequest { visitor: vid(2), device: Some("B".into()), time: 0 }).unwrap();
        f.contacts.record_sighting(&"A".into(), &"B".into(), 40, 1.0, 0);
        let h = RetentionPolicy::TWO_WEEKS;
        // open visit of B is wiped by time_in
        let w = f.wipe_expired(h + 41);
        assert_eq!((w.master, w.contacts), (1, 1));
        assert_eq!(f.min_time(), Some(50));
    }
}

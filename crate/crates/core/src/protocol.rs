//! Messages exchanged between the registry and facilities, and the link
//! abstraction that carries them (in-process or over HTTP).
//!
//! Nothing in a facility-bound message identifies a person: the registry
//! sends pseudonyms, devices and timestamps only.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::facility::{Facility, FacilityMode, WipeCounts};
use crate::ids::{BleId, FacilityId, Timestamp, VisitorId, Window};
use crate::location::{ProximityHit, Trajectory};
use crate::positioning::{FacilityLayout, ProximityParams};
use crate::trace::{FacilityType, SurfaceContact, SurfaceParams};
use crate::u2u::ContactHit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    U2u,
    Location,
}

impl QueryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryMode::U2u => "u2u",
            QueryMode::Location => "location",
        }
    }
}

/// Sign-in completion: the facility binds a fresh pseudonym to a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRequest {
    pub visitor: VisitorId,
    /// `None` lets the facility pick a free device from its pool.
    #[serde(default)]
    pub device: Option<BleId>,
    pub time: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeResponse {
    pub device: BleId,
}

/// Optional facility-side refinements. Unset fields leave the raw answer
/// untouched; the registry normally filters on its side instead.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryParams {
    #[serde(default)]
    pub proximity: ProximityParams,
    /// Meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_distance: Option<f64>,
    /// Seconds of persistent contact required per visitor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_contact: Option<u64>,
    /// Keep only location hits in this zone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<SurfaceParams>,
    /// Period for per-cell fix counts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap_period: Option<Window>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityQueryMessage {
    pub request_id: String,
    pub visitor: VisitorId,
    pub mode: QueryMode,
    /// Reference time for visits still open.
    pub as_of: Timestamp,
    #[serde(default)]
    pub params: QueryParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "hits", rename_all = "lowercase")]
pub enum Hits {
    U2u(Vec<ContactHit>),
    Location(Vec<ProximityHit>),
}

impl Hits {
    pub fn mode(&self) -> QueryMode {
        match self {
            Hits::U2u(_) => QueryMode::U2u,
            Hits::Location(_) => QueryMode::Location,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Hits::U2u(h) => h.len(),
            Hits::Location(h) => h.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueryDiagnostics {
    /// Counterpart devices nobody held at the time.
    pub unmapped: usize,
    /// Hits removed by facility-side parameters.
    pub filtered_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityResponseMessage {
    pub request_id: String,
    pub facility: FacilityId,
    #[serde(flatten)]
    pub hits: Hits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Trajectory>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub surface_contacts: Vec<SurfaceContact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_counts: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<FacilityLayout>,
    #[serde(default)]
    pub diagnostics: QueryDiagnostics,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        ErrorBody {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LinkError {
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("{code}: {message}")]
    Rejected { code: String, message: String },
}

impl LinkError {
    pub fn into_error(self, facility: &FacilityId) -> Error {
        match self {
            LinkError::Unreachable(message) => Error::FacilityUnreachable {
                facility: facility.clone(),
                message,
            },
            LinkError::Rejected { code, message } => Error::FacilityRejected {
                facility: facility.clone(),
                code,
                message,
            },
        }
    }
}

impl From<Error> for LinkError {
    fn from(e: Error) -> Self {
        let body = ErrorBody::from(&e);
        LinkError::Rejected {
            code: body.code,
            message: body.message,
        }
    }
}

/// The registry's channel to one facility.
pub trait FacilityLink: Send + Sync {
    fn exchange(&self, req: &ExchangeRequest) -> Result<ExchangeResponse, LinkError>;
    fn trace_query(&self, msg: &FacilityQueryMessage) -> Result<FacilityResponseMessage, LinkError>;
    /// Asks the facility to drop its expired records.
    fn wipe(&self, now: Timestamp) -> Result<WipeCounts, LinkError>;
}

/// A facility in the same process.
#[derive(Clone)]
pub struct LocalFacility(pub Arc<RwLock<Facility>>);

impl LocalFacility {
    pub fn new(facility: Facility) -> Self {
        LocalFacility(Arc::new(RwLock::new(facility)))
    }
}

impl FacilityLink for LocalFacility {
    fn exchange(&self, req: &ExchangeRequest) -> Result<ExchangeResponse, LinkError> {
        Ok(self.0.write().exchange(req)?)
    }

    fn trace_query(&self, msg: &FacilityQueryMessage) -> Result<FacilityResponseMessage, LinkError> {
        Ok(self.0.read().handle_query(msg)?)
    }

    fn wipe(&self, now: Timestamp) -> Result<WipeCounts, LinkError> {
        Ok(self.0.write().wipe_expired(now))
    }
}

/// A facility that is known but cannot be reached.
pub struct OfflineFacility;

impl FacilityLink for OfflineFacility {
    fn exchange(&self, _: &ExchangeRequest) -> Result<ExchangeResponse, LinkError> {
        Err(LinkError::Unreachable("facility offline".into()))
    }

    fn trace_query(&self, _: &FacilityQueryMessage) -> Result<FacilityResponseMessage, LinkError> {
        Err(LinkError::Unreachable("facility offline".into()))
    }

    fn wipe(&self, _: Timestamp) -> Result<WipeCounts, LinkError> {
        Err(LinkError::Unreachable("facility offline".into()))
    }
}

#[derive(Clone)]
pub struct DirectoryEntry {
    pub mode: FacilityMode,
    pub facility_type: FacilityType,
    pub link: Arc<dyn FacilityLink>,
}

/// Static map of the facilities the registry serves.
#[derive(Clone, Default)]
pub struct FacilityDirectory {
    entries: BTreeMap<FacilityId, DirectoryEntry>,
}

impl FacilityDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: FacilityId, mode: FacilityMode, facility_type: FacilityType, link: Arc<dyn FacilityLink>) {
        self.entries.insert(id, DirectoryEntry { mode, facility_type, link });
    }

    pub fn get(&self, id: &FacilityId) -> Option<&DirectoryEntry> {
        self.entries.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &FacilityId> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

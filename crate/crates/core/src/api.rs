//! Request and response bodies of the registry and facility HTTP
//! endpoints that are not protocol messages in their own right.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::facility::WipeCounts;
use crate::ids::{BleId, FacilityId, PhoneId, Timestamp};
use crate::location::LocationIngestStats;
use crate::positioning::GatewayReading;
use crate::protocol::ErrorBody;
use crate::registration::{DeviceAssignment, SmsEvent};
use crate::trace::TraceReport;
use crate::u2u::{ContactIngestStats, RawReading};

/// `POST /signin` on the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignInRequest {
    /// A phone number, or a government ID number when `gov_id` is set.
    pub phone: PhoneId,
    pub facility: FacilityId,
    /// The server clock when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<Timestamp>,
    /// A specific device; the facility picks from its pool when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<BleId>,
    #[serde(default)]
    pub gov_id: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignInResponse {
    pub assignment: DeviceAssignment,
    pub sms: SmsEvent,
}

/// `POST /frequent` on the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequentRequest {
    pub phone: PhoneId,
    pub facility: FacilityId,
    pub badge: BleId,
}

/// `POST /badge-scan` on the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BadgeScanRequest {
    pub badge: BleId,
    pub facility: FacilityId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<Timestamp>,
}

/// `POST /case` answer. The request body is a `TraceRequest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResponse {
    pub trace_id: String,
    pub report: TraceReport,
}

/// `POST /wipe` on either service.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WipeRequest {
    /// The server clock when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub now: Option<Timestamp>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryWipeResponse {
    pub now: Timestamp,
    pub registry: usize,
    pub reports: usize,
    pub facilities: BTreeMap<FacilityId, WipeCounts>,
    /// Facilities that could not be reached or refused.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<FacilityId, ErrorBody>,
}

/// `POST /return` on a facility: a device handed back at the exit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReturnRequest {
    pub device: BleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnResponse {
    pub device: BleId,
    pub time: Timestamp,
}

/// `POST /ingest` on a facility.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub device_logs: Vec<RawReading>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gateway_readings: Vec<GatewayReading>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contacts: Option<ContactIngestStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locations: Option<LocationIngestStats>,
}

/// `GET /health` on either service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub service: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facility: Option<FacilityId>,
}

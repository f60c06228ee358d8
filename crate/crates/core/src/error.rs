use crate::ids::{BleId, FacilityId, GatewayId, Timestamp, VisitorId};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed phone or ID number {0:?} (expected 8-15 digits)")]
    MalformedPhone(String),
    #[error("malformed visitor id {0:?}")]
    MalformedVisitor(String),
    #[error("visitor id {0} already issued (pseudonym collision)")]
    DuplicateVisitor(VisitorId),
    #[error("device {0} is already assigned")]
    DeviceBusy(BleId),
    #[error("device {device} cannot start a visit at {time}: overlaps an earlier window")]
    WindowOverlap { device: BleId, time: Timestamp },
    #[error("device {0} has no open assignment")]
    DeviceNotAssigned(BleId),
    #[error("device {0} is not in this facility's pool")]
    UnknownDevice(BleId),
    #[error("device pool of facility {0} is exhausted")]
    PoolExhausted(FacilityId),
    #[error("badge {0} has no frequent-visitor link")]
    UnknownBadge(BleId),
    #[error("sign-out at {now} precedes sign-in at {time_in}")]
    SignOutBeforeSignIn { time_in: Timestamp, now: Timestamp },
    #[error("unknown visitor {0}")]
    UnknownVisitor(VisitorId),
    #[error("unknown facility {0}")]
    UnknownFacility(FacilityId),
    #[error("unknown gateway {0}")]
    UnknownGateway(GatewayId),
    #[error("facility {facility} does not support {requested} queries")]
    UnsupportedMode {
        facility: FacilityId,
        requested: &'static str,
    },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("snapshot {file} line {line}: {message}")]
    Snapshot {
        file: String,
        line: usize,
        message: String,
    },
    #[error("facility {facility} unreachable: {message}")]
    FacilityUnreachable { facility: FacilityId, message: String },
    #[error("facility {facility} rejected the request ({code}): {message}")]
    FacilityRejected {
        facility: FacilityId,
        code: String,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code used in wire error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedPhone(_) => "malformed_phone",
            Error::MalformedVisitor(_) => "malformed_visitor",
            Error::DuplicateVisitor(_) => "duplicate_visitor",
            Error::DeviceBusy(_) => "device_busy",
            Error::WindowOverlap { .. } => "window_overlap",
            Error::DeviceNotAssigned(_) => "device_not_assigned",
            Error::UnknownDevice(_) => "unknown_device",
            Error::PoolExhausted(_) => "pool_exhausted",
            Error::UnknownBadge(_) => "unknown_badge",
            Error::SignOutBeforeSignIn { .. } => "sign_out_before_sign_in",
            Error::UnknownVisitor(_) => "unknown_visitor",
            Error::UnknownFacility(_) => "unknown_facility",
            Error::UnknownGateway(_) => "unknown_gateway",
            Error::UnsupportedMode { .. } => "unsupported_mode",
            Error::InvalidLayout(_) => "invalid_layout",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::InvalidScenario(_) => "invalid_scenario",
            Error::Snapshot { .. } => "snapshot",
            Error::FacilityUnreachable { .. } => "facility_unreachable",
            Error::FacilityRejected { .. } => "facility_rejected",
            Error::Io(_) => "io",
            Error::Json(_) => "malformed_json",
        }
    }

    /// Whether the caller, not the server, is at fault.
    pub fn is_client_error(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::FacilityUnreachable { .. } | Error::Snapshot { .. } | Error::DuplicateVisitor(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

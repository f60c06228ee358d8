//! Facility-owned contact tracing.
//!
//! A central registry knows phone numbers and the pseudonymous visitor ids
//! it issued; each facility knows only pseudonyms, devices and what its
//! radios heard. A trace asks every facility the patient visited for the
//! pseudonyms near the patient and maps them back to phones at the
//! registry.

pub mod api;
pub mod deployment;
pub mod error;
pub mod facility;
pub mod ids;
pub mod location;
pub mod positioning;
pub mod protocol;
pub mod registration;
pub mod sim;
pub mod tables;
pub mod trace;
pub mod u2u;

pub use deployment::{Deployment, WipeSummary};
pub use error::{Error, Result};
pub use facility::{Facility, FacilityConfig, FacilityMode, WipeCounts};
pub use ids::{BleId, FacilityId, GatewayId, PhoneId, Timestamp, VisitorId, Window};
pub use location::{ProximityHit, Trajectory};
pub use positioning::{FacilityLayout, GatewayReading, PathLossModel, ProximityParams};
pub use protocol::{
    FacilityDirectory, FacilityLink, FacilityQueryMessage, FacilityResponseMessage, LinkError, LocalFacility, QueryMode,
};
pub use registration::Registry;
pub use tables::{LocationFix, RetentionPolicy, SymbolicLocation};
pub use trace::{render_text, run_trace, ContextProfile, FacilityType, TraceReport, TraceRequest};
pub use u2u::{ContactHit, RawReading};

//! Signal model, facility map, trilateration and the spatio-temporal range
//! query. Everything here is a pure function of its inputs.

pub mod layout;
mod pathloss;
mod range_query;
mod trilateration;

pub use layout::{FacilityLayout, Gateway, Rect, Wall, Zone};
pub use pathloss::PathLossModel;
pub use range_query::{st_range_query, ProximityParams, RangeMatch};
pub use trilateration::{trilaterate, Fix, GatewayReading, Geometry, TrilaterationError};

/// Gateway readings are bucketed into epochs of this many seconds; each
/// device gets at most one fix per epoch.
pub const EPOCH_SECONDS: u64 = 5;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-distance path-loss model.
///
/// `rssi(d) = reference_power - 10 * exponent * log10(d)`, with `d` clamped
/// to `min_distance`. `noise_sigma` is only used by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathLossModel {
    /// dBm measured at 1 m.
    pub reference_power: f64,
    pub exponent: f64,
    /// dBm.
    pub noise_sigma: f64,
    /// Meters.
    pub min_distance: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        PathLossModel {
            reference_power: -59.0,
            exponent: 2.0,
            noise_sigma: 2.0,
            min_distance: 0.1,
        }
    }
}

impl PathLossModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.exponent > 0.0
            && self.min_distance > 0.0
            && self.noise_sigma >= 0.0
            && self.reference_power.is_finite()
            && self.exponent.is_finite()
            && self.min_distance.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("path-loss model {self:?}")))
        }
    }

    /// Signal strength a receiver `distance` meters away would report, plus
    /// an already-sampled `noise` term in dBm.
    pub fn rssi_from_distance(&self, distance: f64, noise: f64) -> f64 {
        let d = distance.max(self.min_distance);
        self.reference_power - 10.0 * self.exponent * d.log10() + noise
    }

    pub fn distance_from_rssi(&self, rssi: f64) -> f64 {
        10f64
            .powf((self.reference_power - rssi) / (10.0 * self.exponent))
            .max(self.min_distance)
    }
}

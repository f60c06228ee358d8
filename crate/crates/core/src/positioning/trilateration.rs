use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{BleId, GatewayId, Timestamp};
use crate::tables::SymbolicLocation;

use super::{FacilityLayout, PathLossModel};

/// A beacon broadcast as heard by a fixed gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayReading {
    pub gateway: GatewayId,
    pub device: BleId,
    pub time: Timestamp,
    /// dBm.
    pub rssi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    LeastSquares,
    /// Gateways too close to collinear; the point is the centroid of the
    /// three strongest gateways.
    CentroidFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fix {
    pub x: f64,
    pub y: f64,
    pub location: SymbolicLocation,
    pub geometry: Geometry,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrilaterationError {
    #[error("device heard by {0} gateways, need 3")]
    TooFewGateways(usize),
    #[error("unknown gateway {0}")]
    UnknownGateway(GatewayId),
}

/// Positions one device from its gateway readings of one epoch.
///
/// The strongest reading per gateway is used. Circle equations are
/// linearised against the strongest gateway and solved by weighted least
/// squares; each row is weighted by the inverse square of its estimated
/// range, since range error grows with distance under log-normal noise.
/// The point is clamped to the layout and mapped to its cell and zone.
pub fn trilaterate(
    readings: &[GatewayReading],
    layout: &FacilityLayout,
    model: &PathLossModel,
) -> Result<Fix, TrilaterationError> {
    let mut strongest: BTreeMap<&GatewayId, f64> = BTreeMap::new();
    for r in readings {
        let e = strongest.entry(&r.gateway).or_insert(r.rssi);
        if r.rssi > *e {
            *e = r.rssi;
        }
    }
    if strongest.len() < 3 {
        return Err(TrilaterationError::TooFewGateways(strongest.len()));
    }
    // (x, y, range), strongest first; ties broken by gateway id for determinism
    let mut anchors = Vec::with_capacity(strongest.len());
    for (id, rssi) in &strongest {
        let g = layout
            .gateway(id)
            .ok_or_else(|| TrilaterationError::UnknownGateway((*id).clone()))?;
        anchors.push((*rssi, g.x, g.y, model.distance_from_rssi(*rssi)));
    }
    anchors.sort_by(|a, b| b.0.total_cmp(&a.0));
    let anchors: Vec<(f64, f64, f64)> = anchors.into_iter().map(|(_, x, y, d)| (x, y, d)).collect();

    let (x, y, geometry) = match solve(&anchors) {
        Some((x, y)) => (x, y, Geometry::LeastSquares),
        None => {
            let n = 3.0;
            let cx = anchors[..3].iter().map(|a| a.0).sum::<f64>() / n;
            let cy = anchors[..3].iter().map(|a| a.1).sum::<f64>() / n;
            (cx, cy, Geometry::CentroidFallback)
        }
    };
    let (x, y) = layout.clamp(x, y);
    Ok(Fix {
        x,
        y,
        location: layout.locate(x, y),
        geometry,
    })
}

/// Weighted linear least squares on circle differences. `None` when the
/// anchors are (numerically) collinear.
fn solve(anchors: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    let (x0, y0, d0) = anchors[0];
    let (mut m00, mut m01, mut m11, mut b0, mut b1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(xi, yi, di) in &anchors[1..] {
        let ax = 2.0 * (xi - x0);
        let ay = 2.0 * (yi - y0);
        let c = d0 * d0 - di * di - x0 * x0 + xi * xi - y0 * y0 + yi * yi;
        let w = 1.0 / (di * di).max(1e-6);
        m00 += w * ax * ax;
        m01 += w * ax * ay;
        m11 += w * ay * ay;
        b0 += w * ax * c;
        b1 += w * ay * c;
    }
    let det = m00 * m11 - m01 * m01;
    if !(det.is_finite() && det > 1e-9 * m00 * m11) {
        return None;
    }
    Some(((m11 * b0 - m01 * b1) / det, (m00 * b1 - m01 * b0) / det))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::positioning::layout::Gateway;

    fn triangle_layout() -> FacilityLayout {
        let gws = vec![
            Gateway { id: "g0".into(), x: 0.0, y: 0.0 },
            Gateway { id: "g1".into(), x: 10.0, y: 0.0 },
            Gateway { id: "g2".into(), x: 0.0, y: 10.0 },
        ];
        FacilityLayout::new(20.0, 20.0, 1.0, vec![], vec![], gws).unwrap()
    }

    fn reading(g: &str, d: f64, model: &PathLossModel) -> GatewayReading {
        GatewayReading {
            gateway: g.into(),
            device: "B".into(),
            time: 0,
            rssi: model.rssi_from_distance(d, 0.0),
        }
    }

    #[test]
    fn equidistant_point() {
        let m = PathLossModel::default();
        let l = triangle_layout();
        let r50 = 50f64.sqrt();
        let fix = trilaterate(&[reading("g0", r50, &m), reading("g1", r50, &m), reading("g2", r50, &m)], &l, &m).unwrap();
        assert!((fix.x - 5.0).abs() < 1e-9 && (fix.y - 5.0).abs() < 1e-9, "{fix:?}");
        assert_eq!((fix.location.col, fix.location.row), (5, 5));
        assert_eq!(&*fix.location.zone, "corridor");
        assert_eq!(fix.geometry, Geometry::LeastSquares);
    }

    #[test]
    fn device_on_a_gateway() {
        let m = PathLossModel::default();
        let l = triangle_layout();
        let fix = trilaterate(&[reading("g0", 0.0, &m), reading("g1", 10.0, &m), reading("g2", 10.0, &m)], &l, &m).unwrap();
        // Hand solution of the two difference equations with r0 = 0.1, r1 = r2 = 10:
        // 20x = 0.01 - 100 + 100  =>  x = y = 0.0005
        assert!((fix.x - 0.0005).abs() < 1e-9 && (fix.y - 0.0005).abs() < 1e-9, "{fix:?}");
        assert_eq!((fix.location.col, fix.location.row), (0, 0));
    }

    #[test]
    fn two_gateways_is_no_fix() {
        let m = PathLossModel::default();
        let l = triangle_layout();
        let mut rs = vec![reading("g0", 3.0, &m), reading("g1", 4.0, &m)];
        rs.push(reading("g1", 2.0, &m));
        assert_eq!(trilaterate(&rs, &l, &m), Err(TrilaterationError::TooFewGateways(2)));
    }

    #[test]
    fn unknown_gateway() {
        let m = PathLossModel::default();
        let l = triangle_layout();
        let rs = vec![reading("g0", 3.0, &m), reading("g1", 4.0, &m), reading("zz", 4.0, &m)];
        assert!(matches!(trilaterate(&rs, &l, &m), Err(TrilaterationError::UnknownGateway(_))));
    }

    #[test]
    fn collinear_falls_back_to_centroid() {
        let gws = vec![
            Gateway { id: "g0".into(), x: 0.0, y: 5.0 },
            Gateway { id: "g1".into(), x: 5.0, y: 5.0 },
            Gateway { id: "g2".into(), x: 10.0, y: 5.0 },
        ];
        let l = FacilityLayout::new(10.0, 10.0, 1.0, vec![], vec![], gws).unwrap();
        let m = PathLossModel::default();
        let fix = trilaterate(&[reading("g0", 5.0, &m), reading("g1", 1.0, &m), reading("g2", 5.0, &m)], &l, &m).unwrap();
        assert_eq!(fix.geometry, Geometry::CentroidFallback);
        assert!((fix.x - 5.0).abs() < 1e-12 && (fix.y - 5.0).abs() < 1e-12);
    }

    #[test]
    fn uses_strongest_reading_per_gateway() {
        let m = PathLossModel::default();
        let l = triangle_layout();
        let r50 = 50f64.sqrt();
        let mut rs = vec![reading("g0", r50, &m), reading("g1", r50, &m), reading("g2", r50, &m)];
        rs.push(reading("g0", 40.0, &m));
        let fix = trilaterate(&rs, &l, &m).unwrap();
        assert!((fix.x - 5.0).abs() < 1e-9 && (fix.y - 5.0).abs() < 1e-9);
    }
}

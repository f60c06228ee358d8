use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::GatewayId;
use crate::tables::SymbolicLocation;

pub const CORRIDOR: &str = "corridor";

/// Axis-aligned rectangle `[x_min, y_min, x_max, y_max]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Rect { x_min, y_min, x_max, y_max }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x_min <= x && x <= self.x_max && self.y_min <= y && y <= self.y_max
    }
}

impl From<[f64; 4]> for Rect {
    fn from(a: [f64; 4]) -> Self {
        Rect::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x_min, r.y_min, r.x_max, r.y_max]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub label: String,
    pub rect: Rect,
}

/// Wall segment `[x1, y1, x2, y2]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Wall {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl From<[f64; 4]> for Wall {
    fn from(a: [f64; 4]) -> Self {
        Wall { a: (a[0], a[1]), b: (a[2], a[3]) }
    }
}

impl From<Wall> for [f64; 4] {
    fn from(w: Wall) -> Self {
        [w.a.0, w.a.1, w.b.0, w.b.1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gateway {
    pub id: GatewayId,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayoutFile {
    width: f64,
    height: f64,
    #[serde(default = "default_resolution")]
    resolution: f64,
    #[serde(default)]
    zones: Vec<Zone>,
    #[serde(default)]
    walls: Vec<Wall>,
    gateways: Vec<Gateway>,
}

fn default_resolution() -> f64 {
    1.0
}

/// Facility map: a grid of `resolution`-meter cells, labelled zones, wall
/// segments and fixed gateway positions.
///
/// Constructed only through [`FacilityLayout::new`] (or deserialization,
/// which goes through it), so a value in hand is always valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayoutFile", into = "LayoutFile")]
pub struct FacilityLayout {
    pub width: f64,
    pub height: f64,
    pub resolution: f64,
    pub zones: Vec<Zone>,
    pub walls: Vec<Wall>,
    pub gateways: Vec<Gateway>,
    cols: u32,
    rows: u32,
    cell_zone: Vec<Arc<str>>,
}

impl TryFrom<LayoutFile> for FacilityLayout {
    type Error = Error;

    fn try_from(f: LayoutFile) -> Result<Self> {
        FacilityLayout::new(f.width, f.height, f.resolution, f.zones, f.walls, f.gateways)
    }
}

impl From<FacilityLayout> for LayoutFile {
    fn from(l: FacilityLayout) -> Self {
        LayoutFile {
            width: l.width,
            height: l.height,
            resolution: l.resolution,
            zones: l.zones,
            walls: l.walls,
            gateways: l.gateways,
        }
    }
}

impl FacilityLayout {
    pub fn new(
        width: f64,
        height: f64,
        resolution: f64,
        zones: Vec<Zone>,
        walls: Vec<Wall>,
        gateways: Vec<Gateway>,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidLayout(m));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(width) && positive(height) && positive(resolution)) {
            return bad(format!("width {width}, height {height}, resolution {resolution} must be positive"));
        }
        if gateways.len() < 3 {
            return bad(format!("need at least 3 gateways, got {}", gateways.len()));
        }
        let bounds = Rect::new(0.0, 0.0, width, height);
        for g in &gateways {
            if !bounds.contains(g.x, g.y) {
                return bad(format!("gateway {} at ({}, {}) outside the layout", g.id, g.x, g.y));
            }
        }
        for (i, g) in gateways.iter().enumerate() {
            if gateways[..i].iter().any(|o| o.id == g.id) {
                return bad(format!("duplicate gateway id {}", g.id));
            }
        }
        for z in &zones {
            if z.label.is_empty() || z.label.contains(['\t', '\n', '\r']) {
                return bad(format!("zone label {:?} must be non-empty without tabs or newlines", z.label));
            }
        }
        let cols = (width / resolution).ceil() as u32;
        let rows = (height / resolution).ceil() as u32;
        let corridor: Arc<str> = Arc::from(CORRIDOR);
        let labels: Vec<Arc<str>> = zones.iter().map(|z| Arc::from(z.label.as_str())).collect();
        let mut cell_zone = Vec::with_capacity((cols * rows) as usize);
        for row in 0..rows {
            for col in 0..cols {
                let cx = (col as f64 + 0.5) * resolution;
                let cy = (row as f64 + 0.5) * resolution;
                let label = zones
                    .iter()
                    .position(|z| z.rect.contains(cx, cy))
                    .map_or_else(|| corridor.clone(), |i| labels[i].clone());
                cell_zone.push(label);
            }
        }
        Ok(FacilityLayout {
            width,
            height,
            resolution,
            zones,
            walls,
            gateways,
            cols,
            rows,
            cell_zone,
        })
    }

    /// 30 m x 30 m floor, 1 m cells, a 3 x 3 gateway grid and no walls.
    pub fn default_30x30() -> Self {
        Self::open_floor(30.0, 30.0, 3)
    }

    /// Open floor with a `grid` x `grid` array of gateways at cell-aligned
    /// positions and three zones: an entrance strip along y = 0, a hall and
    /// a food court on the right third.
    pub fn open_floor(width: f64, height: f64, grid: usize) -> Self {
        let zones = vec![
            Zone { label: "entrance".into(), rect: Rect::new(0.0, 0.0, width, height * 0.2) },
            Zone { label: "food court".into(), rect: Rect::new(width * 2.0 / 3.0, height * 0.2, width, height) },
            Zone { label: "hall".into(), rect: Rect::new(0.0, height * 0.2, width * 2.0 / 3.0, height) },
        ];
        let grid = grid.max(2);
        let mut gateways = Vec::new();
        for j in 0..grid {
            for i in 0..grid {
                // centres of a grid x grid partition of the floor
                let x = width * (2 * i + 1) as f64 / (2 * grid) as f64;
                let y = height * (2 * j + 1) as f64 / (2 * grid) as f64;
                gateways.push(Gateway { id: GatewayId::new(format!("G{}", j * grid + i + 1)), x, y });
            }
        }
        FacilityLayout::new(width, height, 1.0, zones, Vec::new(), gateways).expect("static layout is valid")
    }

    pub fn with_walls(self, walls: Vec<Wall>) -> Self {
        FacilityLayout { walls, ..self }
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cell_count(&self) -> usize {
        (self.cols * self.rows) as usize
    }

    pub fn gateway(&self, id: &GatewayId) -> Option<&Gateway> {
        self.gateways.iter().find(|g| &g.id == id)
    }

    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(0.0, self.width), y.clamp(0.0, self.height))
    }

    /// Grid cell containing the point; points on the far edge belong to the
    /// last cell.
    pub fn cell_of(&self, x: f64, y: f64) -> (u32, u32) {
        let (x, y) = self.clamp(x, y);
        let col = ((x / self.resolution).floor() as u32).min(self.cols - 1);
        let row = ((y / self.resolution).floor() as u32).min(self.rows - 1);
        (col, row)
    }

    pub fn zone_of_cell(&self, col: u32, row: u32) -> &Arc<str> {
        &self.cell_zone[(row * self.cols + col) as usize]
    }

    pub fn locate(&self, x: f64, y: f64) -> SymbolicLocation {
        let (col, row) = self.cell_of(x, y);
        self.cell(col, row)
    }

    pub fn cell(&self, col: u32, row: u32) -> SymbolicLocation {
        SymbolicLocation {
            zone: self.zone_of_cell(col, row).clone(),
            col,
            row,
            resolution: self.resolution,
        }
    }

    pub fn in_grid(&self, loc: &SymbolicLocation) -> bool {
        loc.col < self.cols && loc.row < self.rows
    }

    /// Whether any wall touches or crosses the segment between two points.
    pub fn wall_between(&self, p: (f64, f64), q: (f64, f64)) -> bool {
        self.walls.iter().any(|w| segments_intersect(p, q, w.a, w.b))
    }
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

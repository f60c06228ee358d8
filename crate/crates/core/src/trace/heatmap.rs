use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ids::{FacilityId, Window};
use crate::location::Trajectory;
use crate::positioning::FacilityLayout;
use crate::tables::LocationTable;

/// Fix counts per cell, row-major (`row * cols + col`).
pub fn cell_counts(table: &LocationTable, layout: &FacilityLayout, period: Window) -> Vec<u64> {
    let cols = layout.cols() as usize;
    let mut counts = vec![0u64; layout.cell_count()];
    for f in table.fixes_in(period) {
        if layout.in_grid(&f.location) {
            counts[f.location.row as usize * cols + f.location.col as usize] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub facility: FacilityId,
    pub cols: u32,
    pub rows: u32,
    /// `counts[row][col]`.
    pub counts: Vec<Vec<u64>>,
    /// Cells the patient was positioned in, as `[col, row]`.
    pub patient_cells: Vec<[u32; 2]>,
}

impl Heatmap {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn build_heatmap(
    facility: &FacilityId,
    layout: &FacilityLayout,
    counts: &[u64],
    trajectory: Option<&Trajectory>,
) -> Heatmap {
    let cols = layout.cols();
    let rows = layout.rows();
    let mut grid = vec![vec![0u64; cols as usize]; rows as usize];
    for (i, &c) in counts.iter().enumerate().take(grid.len() * cols as usize) {
        grid[i / cols as usize][i % cols as usize] = c;
    }
    let patient: BTreeSet<[u32; 2]> = trajectory
        .into_iter()
        .flat_map(|t| &t.fixes)
        .map(|f| [f.location.col, f.location.row])
        .collect();
    Heatmap {
        facility: facility.clone(),
        cols,
        rows,
        counts: grid,
        patient_cells: patient.into_iter().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::LocationFix;

    fn layout() -> FacilityLayout {
        FacilityLayout::default_30x30()
    }

    #[test]
    fn empty_is_all_zero() {
        let l = layout();
        let counts = cell_counts(&LocationTable::new(), &l, Window::new(0, 100));
        let h = build_heatmap(&"F".into(), &l, &counts, None);
        assert_eq!((h.rows, h.cols), (30, 30));
        assert_eq!(h.counts.len(), 30);
        assert_eq!(h.total(), 0);
    }

    #[test]
    fn ten_fixes_one_cell_and_conservation() {
        let l = layout();
        let mut t = LocationTable::new();
        for s in 0..10 {
            t.insert(LocationFix { device: "A".into(), location: l.cell(4, 7), time: 100 + s });
        }
        for s in 0..25 {
            t.insert(LocationFix { device: "B".into(), location: l.cell(s % 30, 29), time: 100 + 3 * s as u64 });
        }
        t.insert(LocationFix { device: "C".into(), location: l.cell(0, 0), time: 5000 });
        let period = Window::new(100, 200);
        let counts = cell_counts(&t, &l, period);
        let h = build_heatmap(&"F".into(), &l, &counts, None);
        assert_eq!(h.counts[7][4], 10);
        assert_eq!(h.total(), t.fixes_in(period).count() as u64);
        assert_eq!(h.counts[0][0], 0);
    }

    #[test]
    fn patient_cells_flagged() {
        let l = layout();
        let traj = Trajectory {
            visitor: crate::ids::VisitorId::from_bytes([1; 16]),
            fixes: vec![
                LocationFix { device: "P".into(), location: l.cell(2, 3), time: 1 },
                LocationFix { device: "P".into(), location: l.cell(2, 3), time: 6 },
                LocationFix { device: "P".into(), location: l.cell(5, 1), time: 11 },
            ],
        };
        let h = build_heatmap(&"F".into(), &l, &vec![0; l.cell_count()], Some(&traj));
        assert_eq!(h.patient_cells, vec![[2, 3], [5, 1]]);
    }
}

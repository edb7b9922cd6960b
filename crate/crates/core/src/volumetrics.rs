//! Volume change between map snapshots, over the cells both snapshots hold.
//!
//! Sign convention: positive volume means material was removed between the
//! earlier and the later snapshot.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::terrain_map::{MapSnapshot, SnapshotCell};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeReport<T> {
    pub k1: u64,
    pub k2: u64,
    pub common_cell_count: usize,
    /// Cells held by only one of the two snapshots.
    pub excluded_cell_count: usize,
    pub removed_volume: T,
    pub added_volume: T,
    pub net_change: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellChange<T> {
    pub ix: i64,
    pub iy: i64,
    /// Later height minus earlier height.
    pub dh: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeGrid<T> {
    pub k1: u64,
    pub k2: u64,
    pub cells: Vec<CellChange<T>>,
}

/// `(h_k1 - h_k2) * delta^2`.
#[inline]
pub fn cell_volume_change<T: Scalar>(h_k1: T, h_k2: T, delta: T) -> T {
    (h_k1 - h_k2) * delta * delta
}

/// Walks two sorted snapshots and yields matching cells. Returns the number
/// of unmatched cells.
fn for_common<T: Scalar>(
    s1: &MapSnapshot<T>,
    s2: &MapSnapshot<T>,
    mut f: impl FnMut(&SnapshotCell<T>, &SnapshotCell<T>),
) -> usize {
    use std::cmp::Ordering::*;
    let (a, b) = (&s1.cells, &s2.cells);
    let (mut i, mut j, mut unmatched) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].key().cmp(&b[j].key()) {
            Less => {
                unmatched += 1;
                i += 1;
            }
            Greater => {
                unmatched += 1;
                j += 1;
            }
            Equal => {
                f(&a[i], &b[j]);
                i += 1;
                j += 1;
            }
        }
    }
    unmatched + (a.len() - i) + (b.len() - j)
}

pub fn volume_between<T: Scalar>(s1: &MapSnapshot<T>, s2: &MapSnapshot<T>, delta: T) -> VolumeReport<T> {
    let mut removed = T::zero();
    let mut added = T::zero();
    let mut common = 0;
    let excluded = for_common(s1, s2, |c1, c2| {
        common += 1;
        let dv = cell_volume_change(c1.height, c2.height, delta);
        if dv > T::zero() {
            removed += dv;
        } else {
            added -= dv;
        }
    });
    VolumeReport {
        k1: s1.scan_index,
        k2: s2.scan_index,
        common_cell_count: common,
        excluded_cell_count: excluded,
        removed_volume: removed,
        added_volume: added,
        net_change: removed - added,
    }
}

/// Per-cell height change over common cells; unchanged cells are omitted.
pub fn change_grid<T: Scalar>(s1: &MapSnapshot<T>, s2: &MapSnapshot<T>) -> ChangeGrid<T> {
    let mut cells = Vec::new();
    for_common(s1, s2, |c1, c2| {
        let dh = c2.height - c1.height;
        if dh != T::zero() {
            cells.push(CellChange { ix: c1.ix, iy: c1.iy, dh });
        }
    });
    ChangeGrid { k1: s1.scan_index, k2: s2.scan_index, cells }
}

/// Net change of every snapshot against `snapshots[baseline]`.
pub fn volume_timeseries<T: Scalar>(
    snapshots: &[MapSnapshot<T>],
    delta: T,
    baseline: usize,
) -> Result<Vec<VolumeReport<T>>> {
    let base = snapshots
        .get(baseline)
        .ok_or(Error::BaselineOutOfRange { baseline, len: snapshots.len() })?;
    Ok(snapshots[baseline..].iter().map(|s| volume_between(base, s, delta)).collect())
}

/// Index of the latest snapshot at least `window` scans older than
/// `snapshots[t]`, if any.
pub fn window_start<T>(snapshots: &[MapSnapshot<T>], t: usize, window: u64) -> Option<usize> {
    let target = snapshots.get(t)?.scan_index.checked_sub(window)?;
    snapshots[..t].iter().rposition(|s| s.scan_index <= target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(k: u64, cells: &[(i64, i64, f64)]) -> MapSnapshot<f64> {
        MapSnapshot {
            scan_index: k,
            cells: cells.iter().map(|&(ix, iy, height)| SnapshotCell { ix, iy, height, confidence: 1.0 }).collect(),
        }
    }

    #[test]
    fn cell_volume_examples() {
        assert_eq!(cell_volume_change(2.0, 1.0, 0.25), 0.0625);
        assert_eq!(cell_volume_change(1.0, 2.0, 0.25), -0.0625);
        assert_eq!(cell_volume_change(3.3, 3.3, 0.25), 0.0);
    }

    #[test]
    fn volume_examples() {
        let a = snap(0, &[(0, 0, 2.0)]);
        let b = snap(1, &[(5, 5, 1.0)]);
        let r = volume_between(&a, &b, 0.25);
        assert_eq!((r.common_cell_count, r.excluded_cell_count, r.net_change), (0, 2, 0.0));

        let b = snap(1, &[(0, 0, 1.0)]);
        let r = volume_between(&a, &b, 0.25);
        assert_eq!((r.removed_volume, r.added_volume, r.net_change), (0.0625, 0.0, 0.0625));
    }

    #[test]
    fn change_grid_examples() {
        let a = snap(0, &[(0, 0, 2.0), (1, 0, 2.0)]);
        assert!(change_grid(&a, &a).cells.is_empty());
        let b = snap(9, &[(0, 0, 2.0), (1, 0, 1.75), (2, 0, 0.0)]);
        let g = change_grid(&a, &b);
        assert_eq!(g.cells, vec![CellChange { ix: 1, iy: 0, dh: -0.25 }]);
        assert_eq!((g.k1, g.k2), (0, 9));
    }

    #[test]
    fn timeseries_examples() {
        let s = vec![snap(0, &[(0, 0, 2.0)]), snap(10, &[(0, 0, 1.0)]), snap(20, &[(0, 0, 0.5)])];
        let ts = volume_timeseries(&s, 0.25, 0).unwrap();
        assert_eq!(ts.iter().map(|r| r.net_change).collect::<Vec<_>>(), vec![0.0, 0.0625, 0.09375]);
        let ts = volume_timeseries(&s, 0.25, 2).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].net_change, 0.0);
        assert!(matches!(volume_timeseries(&s, 0.25, 3), Err(Error::BaselineOutOfRange { .. })));
    }

    #[test]
    fn receding_window_lookup() {
        let s = vec![snap(0, &[]), snap(500, &[]), snap(1000, &[]), snap(1500, &[])];
        assert_eq!(window_start(&s, 3, 1000), Some(1));
        assert_eq!(window_start(&s, 2, 1000), Some(0));
        assert_eq!(window_start(&s, 1, 1000), None);
    }
}

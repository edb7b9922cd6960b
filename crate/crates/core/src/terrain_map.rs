//! The global height grid: one [`CellHmm`] per observed cell.

use rustc_hash::FxHashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hmm_grid::{
    build_transition_matrix, gaussian_likelihood, nearest_state, state_center, CellHmm, GridConfig,
    TransitionMatrix,
};
use crate::observation::{CellKey, HeightObservation};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct GlobalMap<T> {
    cfg: GridConfig<T>,
    n: usize,
    transition: TransitionMatrix<T>,
    cells: FxHashMap<CellKey, CellHmm<T>>,
    /// Scans elapsed: one past the last applied scan index.
    scan_counter: u64,
}

/// Per-call bookkeeping returned by [`GlobalMap::apply_observations`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateReport {
    pub created: usize,
    pub updated: usize,
    pub state_changed: usize,
    pub skipped_out_of_range: usize,
    pub duplicates: usize,
}

impl std::ops::AddAssign for UpdateReport {
    fn add_assign(&mut self, o: Self) {
        self.created += o.created;
        self.updated += o.updated;
        self.state_changed += o.state_changed;
        self.skipped_out_of_range += o.skipped_out_of_range;
        self.duplicates += o.duplicates;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotCell<T> {
    pub ix: i64,
    pub iy: i64,
    pub height: T,
    pub confidence: T,
}

impl<T> SnapshotCell<T> {
    pub fn key(&self) -> CellKey {
        CellKey::new(self.ix, self.iy)
    }
}

/// Reported heights of every cell at one instant, sorted by `(ix, iy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSnapshot<T> {
    pub scan_index: u64,
    pub cells: Vec<SnapshotCell<T>>,
}

impl<T: Scalar> GlobalMap<T> {
    /// An empty grid.
    pub fn new(cfg: GridConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n();
        let transition = build_transition_matrix(n, cfg.a_self)?;
        Ok(Self { cfg, n, transition, cells: FxHashMap::default(), scan_counter: 0 })
    }

    /// A grid seeded from surveyed heights; each cell starts one-hot at the
    /// nearest state.
    pub fn from_survey(cfg: GridConfig<T>, survey: &[(CellKey, T)]) -> Result<Self> {
        let mut map = Self::new(cfg)?;
        for &(key, h) in survey {
            map.check_height(h)?;
            let cell = CellHmm::one_hot(map.n, nearest_state(&map.cfg, h), 0)?;
            map.cells.insert(key, cell);
        }
        Ok(map)
    }

    fn check_height(&self, h: T) -> Result<()> {
        if !(h >= self.cfg.h_min && h <= self.cfg.h_max) {
            return Err(Error::OutOfRangeHeight {
                height: h.to_f64_lossy(),
                h_min: self.cfg.h_min.to_f64_lossy(),
                h_max: self.cfg.h_max.to_f64_lossy(),
            });
        }
        Ok(())
    }

    pub fn config(&self) -> &GridConfig<T> {
        &self.cfg
    }

    pub fn num_states(&self) -> usize {
        self.n
    }

    pub fn transition(&self) -> &TransitionMatrix<T> {
        &self.transition
    }

    pub fn scan_counter(&self) -> u64 {
        self.scan_counter
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, key: CellKey) -> Option<&CellHmm<T>> {
        self.cells.get(&key)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &CellHmm<T>)> {
        self.cells.iter()
    }

    /// Reported height of a cell, if it exists.
    pub fn reported_height(&self, key: CellKey) -> Option<T> {
        self.cells.get(&key).map(|c| self.center(c.reported_state_index))
    }

    fn center(&self, l: usize) -> T {
        self.cfg.h_min + T::from_usize_lossy(l) * self.cfg.delta
    }

    /// True once at least `m_init` scans have elapsed.
    pub fn is_initialized(&self) -> bool {
        self.scan_counter >= self.cfg.m_init as u64
    }

    /// Fuses one scan's observations. New cells start one-hot at the nearest
    /// state; existing cells run one filter step. Cells not observed are left
    /// untouched.
    pub fn apply_observations(&mut self, obs: &[HeightObservation<T>], scan_index: u64) -> Result<UpdateReport> {
        if scan_index < self.scan_counter {
            return Err(Error::InvalidArgument(format!(
                "scan {scan_index} arrives after scan counter {}",
                self.scan_counter
            )));
        }
        let mut report = UpdateReport::default();
        let mut latest: FxHashMap<CellKey, T> = FxHashMap::with_capacity_and_hasher(obs.len(), Default::default());
        for o in obs {
            if !o.height.is_finite() || self.check_height(o.height).is_err() {
                report.skipped_out_of_range += 1;
                continue;
            }
            if latest.insert(o.cell, o.height).is_some() {
                report.duplicates += 1;
            }
        }

        let cfg = self.cfg;
        let a = self.transition;
        let updates: Vec<Result<bool>> = self
            .cells
            .par_iter_mut()
            .filter_map(|(key, cell)| latest.get(key).map(|&h| (cell, h)))
            .map(|(cell, h)| {
                let b = gaussian_likelihood(&cfg, h)?;
                cell.observe(&a, &b, cfg.p_min, scan_index)
            })
            .collect();
        for u in updates {
            report.updated += 1;
            if u? {
                report.state_changed += 1;
            }
        }

        for (key, h) in latest {
            if let std::collections::hash_map::Entry::Vacant(e) = self.cells.entry(key) {
                e.insert(CellHmm::one_hot(self.n, nearest_state(&cfg, h), scan_index)?);
                report.created += 1;
            }
        }
        self.scan_counter = scan_index + 1;
        Ok(report)
    }

    /// Reported heights and confidences of all cells.
    pub fn snapshot(&self) -> MapSnapshot<T> {
        let mut cells: Vec<SnapshotCell<T>> = self
            .cells
            .iter()
            .map(|(k, c)| SnapshotCell {
                ix: k.ix,
                iy: k.iy,
                height: self.center(c.reported_state_index),
                confidence: c.confidence(),
            })
            .collect();
        cells.sort_unstable_by_key(|c| c.key());
        MapSnapshot { scan_index: self.scan_counter, cells }
    }

    /// Height of state `l`; errors when out of range.
    pub fn state_height(&self, l: usize) -> Result<T> {
        state_center(&self.cfg, l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(ix: i64, iy: i64, h: f64) -> HeightObservation<f64> {
        HeightObservation { cell: CellKey::new(ix, iy), height: h }
    }

    #[test]
    fn init_examples() {
        let map = GlobalMap::new(GridConfig::<f64>::default()).unwrap();
        assert_eq!(map.num_states(), 81);
        assert!((map.transition().delta_off() - 0.000125).abs() < 1e-15);
        assert!(map.snapshot().cells.is_empty());

        let bad = GridConfig { h_max: -1.0, ..GridConfig::<f64>::default() };
        assert!(matches!(GlobalMap::new(bad), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn survey_examples() {
        let cfg = GridConfig::<f64>::default();
        let map = GlobalMap::from_survey(cfg, &[(CellKey::new(0, 0), 5.0), (CellKey::new(1, 0), 5.10)]).unwrap();
        assert_eq!(map.cell(CellKey::new(0, 0)).unwrap().reported_state_index, 20);
        assert_eq!(map.cell(CellKey::new(1, 0)).unwrap().reported_state_index, 20);
        assert_eq!(map.cell(CellKey::new(0, 0)).unwrap().state.probs()[20], 1.0);

        let empty = GlobalMap::from_survey(cfg, &[]).unwrap();
        assert_eq!(empty.snapshot(), GlobalMap::new(cfg).unwrap().snapshot());

        assert!(matches!(
            GlobalMap::from_survey(cfg, &[(CellKey::new(0, 0), 25.0)]),
            Err(Error::OutOfRangeHeight { .. })
        ));
    }

    #[test]
    fn creation_and_consistent_updates() {
        let mut map = GlobalMap::new(GridConfig::<f64>::default()).unwrap();
        let r = map.apply_observations(&[obs(0, 0, 2.9)], 0).unwrap();
        assert_eq!((r.created, r.updated), (1, 0));
        assert_eq!(map.reported_height(CellKey::new(0, 0)), Some(3.0));

        let mut prev = 1.0;
        for k in 1..30 {
            let r = map.apply_observations(&[obs(0, 0, 3.0)], k).unwrap();
            assert_eq!((r.created, r.updated, r.state_changed), (0, 1, 0));
            assert_eq!(map.reported_height(CellKey::new(0, 0)), Some(3.0));
            let c = map.cell(CellKey::new(0, 0)).unwrap().confidence();
            assert!(c <= prev + 1e-15);
            prev = c;
        }
        assert!(prev > 0.99);
    }

    #[test]
    fn untouched_cells_do_not_change() {
        let mut map = GlobalMap::new(GridConfig::<f64>::default()).unwrap();
        map.apply_observations(&[obs(0, 0, 2.0), obs(1, 0, 3.0)], 0).unwrap();
        map.apply_observations(&[obs(0, 0, 2.0), obs(1, 0, 3.0)], 1).unwrap();
        let before = map.cell(CellKey::new(1, 0)).unwrap().clone();
        map.apply_observations(&[obs(0, 0, 2.5)], 2).unwrap();
        assert_eq!(map.cell(CellKey::new(1, 0)).unwrap(), &before);
    }

    #[test]
    fn out_of_range_and_duplicates_are_counted() {
        let mut map = GlobalMap::new(GridConfig::<f64>::default()).unwrap();
        let r = map.apply_observations(&[obs(0, 0, 25.0), obs(1, 0, -1.0), obs(2, 0, 1.0), obs(2, 0, 2.0)], 0).unwrap();
        assert_eq!(r.skipped_out_of_range, 2);
        assert_eq!(r.duplicates, 1);
        assert_eq!(r.created, 1);
        assert_eq!(map.reported_height(CellKey::new(2, 0)), Some(2.0));
    }

    #[test]
    fn scans_must_move_forward() {
        let mut map = GlobalMap::new(GridConfig::<f64>::default()).unwrap();
        map.apply_observations(&[], 5).unwrap();
        assert_eq!(map.scan_counter(), 6);
        assert!(map.apply_observations(&[], 3).is_err());
    }

    #[test]
    fn initialisation_budget() {
        let mut map = GlobalMap::new(GridConfig::<f64>::default()).unwrap();
        map.apply_observations(&[], 998).unwrap();
        assert_eq!(map.scan_counter(), 999);
        assert!(!map.is_initialized());
        map.apply_observations(&[], 999).unwrap();
        assert!(map.is_initialized());

        let map = GlobalMap::new(GridConfig { m_init: 0, ..GridConfig::<f64>::default() }).unwrap();
        assert!(map.is_initialized());
    }

    #[test]
    fn snapshot_holds_reported_state_below_threshold() {
        let cfg = GridConfig { p_min: 0.99, ..GridConfig::<f64>::default() };
        let mut map = GlobalMap::new(cfg).unwrap();
        map.apply_observations(&[obs(0, 0, 2.0)], 0).unwrap();
        map.apply_observations(&[obs(0, 0, 3.0)], 1).unwrap();
        let s = map.snapshot();
        assert_eq!(s.cells[0].height, 2.0);
        assert!(s.cells[0].confidence < 0.99);
        assert_eq!(map.snapshot(), s);
    }

    #[test]
    fn snapshot_is_sorted() {
        let mut map = GlobalMap::new(GridConfig::<f64>::default()).unwrap();
        map.apply_observations(&[obs(3, 1, 2.0), obs(-1, 7, 2.0), obs(3, 0, 1.0)], 0).unwrap();
        let keys: Vec<_> = map.snapshot().cells.iter().map(|c| (c.ix, c.iy)).collect();
        assert_eq!(keys, vec![(-1, 7), (3, 0), (3, 1)]);
    }
}

//! Scan-to-height-grid pipeline.
//!
//! A labelled scan is moved into the map frame, voxelised at the grid
//! resolution and ray cast from the sensor origin to find observed space.
//! Each column of observed voxels is then reduced to at most one height:
//!
//! * a column whose lowest observed voxel is free is dropped (terrain cannot
//!   sit above observed free space, so the returns are dust or mislabelled);
//! * otherwise the run of vertically adjacent occupied voxels starting at the
//!   bottom is followed upwards and the highest raw `z` in the run is kept.
//!   A free voxel, an unobserved gap, or the end of the column stops the run.

use rustc_hash::{FxHashMap, FxHashSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Quaternion, RigidTransform, Vec3};
use crate::hmm_grid::GridConfig;
use crate::raycast::{traverse_segment, VoxelKey};
use crate::scalar::Scalar;

/// Semantic class attached to every scan point. Only `Terrain` reaches the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Terrain,
    Machine,
    Agent,
    Excluded,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Terrain => "terrain",
            Label::Machine => "machine",
            Label::Agent => "agent",
            Label::Excluded => "excluded",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "terrain" => Ok(Label::Terrain),
            "machine" => Ok(Label::Machine),
            "agent" => Ok(Label::Agent),
            "excluded" => Ok(Label::Excluded),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// Sensor pose in the map frame at the time of a scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorPose<T> {
    pub translation: Vec3<T>,
    pub rotation: Quaternion<T>,
    pub timestamp: f64,
    pub scan_index: u64,
}

impl<T: Scalar> SensorPose<T> {
    pub fn identity(scan_index: u64) -> Self {
        Self { translation: Vec3::zero(), rotation: Quaternion::identity(), timestamp: 0.0, scan_index }
    }
}

/// Points in the sensor frame with their semantic labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelledScan<T> {
    pub points: Vec<Vec3<T>>,
    pub labels: Vec<Label>,
    pub timestamp: f64,
}

impl<T: Scalar> LabelledScan<T> {
    pub fn new(points: Vec<Vec3<T>>, labels: Vec<Label>, timestamp: f64) -> Result<Self> {
        let scan = Self { points, labels, timestamp };
        scan.validate()?;
        Ok(scan)
    }

    /// All points labelled terrain.
    pub fn terrain(points: Vec<Vec3<T>>, timestamp: f64) -> Self {
        let labels = vec![Label::Terrain; points.len()];
        Self { points, labels, timestamp }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} labels",
                self.points.len(),
                self.labels.len()
            )));
        }
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteInput("scan point"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn terrain_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Terrain).count()
    }
}

/// Terrain points in the map frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MapFrameScan<T> {
    pub points: Vec<Vec3<T>>,
    pub scan_index: u64,
}

/// Horizontal grid cell index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub ix: i64,
    pub iy: i64,
}

impl CellKey {
    pub const fn new(ix: i64, iy: i64) -> Self {
        Self { ix, iy }
    }
}

impl From<VoxelKey> for CellKey {
    fn from(k: VoxelKey) -> Self {
        Self::new(k.ix, k.iy)
    }
}

/// Highest return inside an occupied voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelReturn<T> {
    /// Maximum unquantised `z` of the voxel's member points.
    pub max_z: T,
    /// The point that produced `max_z`; rays are cast to it.
    pub endpoint: Vec3<T>,
}

#[derive(Debug, Clone, Default)]
pub struct VoxelizedScan<T> {
    pub voxels: FxHashMap<VoxelKey, VoxelReturn<T>>,
    pub dropped_below: usize,
    pub dropped_above: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occupancy {
    Free,
    Occupied,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnEntry<T> {
    pub iz: i64,
    pub occupancy: Occupancy,
    /// Present for occupied entries only.
    pub max_z: Option<T>,
}

impl<T> ColumnEntry<T> {
    pub fn free(iz: i64) -> Self {
        Self { iz, occupancy: Occupancy::Free, max_z: None }
    }

    pub fn occupied(iz: i64, z: T) -> Self {
        Self { iz, occupancy: Occupancy::Occupied, max_z: Some(z) }
    }
}

/// Observed voxels of one column, strictly increasing in `iz`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnObservation<T> {
    pub cell: CellKey,
    pub entries: Vec<ColumnEntry<T>>,
}

/// The height extracted for one cell from one scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightObservation<T> {
    pub cell: CellKey,
    pub height: T,
}

/// Marks points inside any box as `Excluded`.
pub fn exclusion_filter<T: Scalar>(mut scan: LabelledScan<T>, boxes: &[Aabb<T>]) -> LabelledScan<T> {
    if boxes.is_empty() {
        return scan;
    }
    for (p, label) in scan.points.iter().zip(scan.labels.iter_mut()) {
        if boxes.iter().any(|b| b.contains(*p)) {
            *label = Label::Excluded;
        }
    }
    scan
}

/// Keeps the terrain points and maps them into the map frame.
pub fn transform_to_map<T: Scalar>(scan: &LabelledScan<T>, pose: &SensorPose<T>) -> Result<MapFrameScan<T>> {
    scan.validate()?;
    let tf = RigidTransform::new(&pose.rotation, pose.translation)?;
    let points = scan
        .points
        .iter()
        .zip(&scan.labels)
        .filter(|(_, l)| **l == Label::Terrain)
        .map(|(p, _)| tf.apply(*p))
        .collect();
    Ok(MapFrameScan { points, scan_index: pose.scan_index })
}

/// Bins points into voxels of size `cfg.delta`, keeping the highest point per
/// voxel. Points outside `[h_min, h_max)` are dropped and counted.
pub fn voxelize<T: Scalar>(scan: &MapFrameScan<T>, cfg: &GridConfig<T>) -> VoxelizedScan<T> {
    let mut out = VoxelizedScan { voxels: FxHashMap::with_capacity_and_hasher(scan.points.len() / 2, Default::default()), ..Default::default() };
    for &p in &scan.points {
        if p.z < cfg.h_min {
            out.dropped_below += 1;
            continue;
        }
        if p.z >= cfg.h_max {
            out.dropped_above += 1;
            continue;
        }
        let key = VoxelKey::of(p, cfg.delta);
        out.voxels
            .entry(key)
            .and_modify(|v| {
                if p.z > v.max_z {
                    *v = VoxelReturn { max_z: p.z, endpoint: p };
                }
            })
            .or_insert(VoxelReturn { max_z: p.z, endpoint: p });
    }
    out
}

fn free_voxels<T: Scalar>(
    origin: Vec3<T>,
    occupied: &FxHashMap<VoxelKey, VoxelReturn<T>>,
    delta: T,
    keep: impl Fn(VoxelKey) -> bool + Sync,
) -> FxHashSet<VoxelKey> {
    occupied
        .par_iter()
        .fold(FxHashSet::default, |mut set, (key, ret)| {
            traverse_segment(origin, ret.endpoint, delta, |k| {
                if k != *key && keep(k) && !occupied.contains_key(&k) {
                    set.insert(k);
                }
            });
            set
        })
        .reduce(FxHashSet::default, |a, b| {
            let (mut big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
            big.extend(small);
            big
        })
}

fn assemble_columns<T: Scalar>(
    occupied: &FxHashMap<VoxelKey, VoxelReturn<T>>,
    free: FxHashSet<VoxelKey>,
) -> Vec<ColumnObservation<T>> {
    let mut columns: FxHashMap<CellKey, Vec<ColumnEntry<T>>> = FxHashMap::default();
    for (k, r) in occupied {
        columns.entry(CellKey::from(*k)).or_default().push(ColumnEntry::occupied(k.iz, r.max_z));
    }
    for k in free {
        columns.entry(CellKey::from(k)).or_default().push(ColumnEntry::free(k.iz));
    }
    let mut out: Vec<ColumnObservation<T>> = columns
        .into_iter()
        .map(|(cell, mut entries)| {
            entries.sort_unstable_by_key(|e| e.iz);
            ColumnObservation { cell, entries }
        })
        .collect();
    out.sort_unstable_by_key(|c| c.cell);
    out
}

/// Casts a ray from `origin` to every occupied voxel's highest return. Every
/// traversed voxel except the terminal one is free; occupied wins whenever
/// another beam also crossed an occupied voxel. Columns are sorted by cell.
pub fn raycast_observed<T: Scalar>(
    origin: Vec3<T>,
    occupied: &FxHashMap<VoxelKey, VoxelReturn<T>>,
    delta: T,
) -> Vec<ColumnObservation<T>> {
    let free = free_voxels(origin, occupied, delta, |_| true);
    assemble_columns(occupied, free)
}

/// Like [`raycast_observed`], but only keeps columns holding at least one
/// occupied voxel, and within them only free voxels below the highest
/// occupied one. Nothing dropped can change the reduced height.
pub fn raycast_occupied_columns<T: Scalar>(
    origin: Vec3<T>,
    occupied: &FxHashMap<VoxelKey, VoxelReturn<T>>,
    delta: T,
) -> Vec<ColumnObservation<T>> {
    let mut tops: FxHashMap<CellKey, i64> = FxHashMap::default();
    for k in occupied.keys() {
        let top = tops.entry(CellKey::from(*k)).or_insert(k.iz);
        *top = (*top).max(k.iz);
    }
    let highest = tops.values().copied().max().unwrap_or(i64::MIN);
    let free = free_voxels(origin, occupied, delta, |k| {
        k.iz < highest && tops.get(&CellKey::from(k)).is_some_and(|&top| k.iz < top)
    });
    assemble_columns(occupied, free)
}

/// Height of one column, or `None` when it must not update the map.
pub fn reduce_column<T: Scalar>(column: &ColumnObservation<T>) -> Option<T> {
    let (first, rest) = column.entries.split_first()?;
    if first.occupancy == Occupancy::Free {
        return None;
    }
    let mut top = first;
    for e in rest {
        if e.occupancy != Occupancy::Occupied || e.iz != top.iz + 1 {
            break;
        }
        top = e;
    }
    top.max_z
}

pub fn reduce_columns<T: Scalar>(columns: &[ColumnObservation<T>]) -> Vec<HeightObservation<T>> {
    columns
        .iter()
        .filter_map(|c| reduce_column(c).map(|height| HeightObservation { cell: c.cell, height }))
        .collect()
}

/// Wall-clock time spent in each pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub transform: Duration,
    pub voxelize: Duration,
    pub raycast: Duration,
    pub reduce: Duration,
}

impl std::ops::AddAssign for StageTimings {
    fn add_assign(&mut self, o: Self) {
        self.transform += o.transform;
        self.voxelize += o.voxelize;
        self.raycast += o.raycast;
        self.reduce += o.reduce;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanDiagnostics {
    pub input_points: usize,
    pub terrain_points: usize,
    pub dropped_below: usize,
    pub dropped_above: usize,
    pub occupied_voxels: usize,
    pub columns: usize,
    pub dropped_columns: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ProcessedScan<T> {
    /// One observation per cell, sorted by cell.
    pub observations: Vec<HeightObservation<T>>,
    pub diagnostics: ScanDiagnostics,
    pub timings: StageTimings,
}

/// Full pipeline: exclusion, map-frame transform, voxelisation, ray casting
/// and column reduction.
pub fn process_scan<T: Scalar>(
    scan: LabelledScan<T>,
    pose: &SensorPose<T>,
    cfg: &GridConfig<T>,
    boxes: &[Aabb<T>],
) -> Result<ProcessedScan<T>> {
    let mut timings = StageTimings::default();
    let input_points = scan.len();

    let t0 = Instant::now();
    let scan = exclusion_filter(scan, boxes);
    let map_scan = transform_to_map(&scan, pose)?;
    timings.transform = t0.elapsed();

    let t1 = Instant::now();
    let vox = voxelize(&map_scan, cfg);
    timings.voxelize = t1.elapsed();

    let t2 = Instant::now();
    let columns = if vox.voxels.is_empty() {
        Vec::new()
    } else {
        raycast_occupied_columns(pose.translation, &vox.voxels, cfg.delta)
    };
    timings.raycast = t2.elapsed();

    let t3 = Instant::now();
    let observations = reduce_columns(&columns);
    timings.reduce = t3.elapsed();

    let diagnostics = ScanDiagnostics {
        input_points,
        terrain_points: map_scan.points.len(),
        dropped_below: vox.dropped_below,
        dropped_above: vox.dropped_above,
        occupied_voxels: vox.voxels.len(),
        columns: columns.len(),
        dropped_columns: columns.len() - observations.len(),
    };
    Ok(ProcessedScan { observations, diagnostics, timings })
}

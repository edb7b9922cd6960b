//! Probabilistic height-grid terrain mapping.
//!
//! Each cell of a 2.5D grid holds a hidden Markov model over discretised
//! heights. LiDAR scans are reduced to one height per observed column, with
//! returns above observed free space discarded, and fused into the cells
//! through a recursive filter. Snapshots of the reported heights are
//! differenced to estimate excavated volume.
//!
//! The mapping core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64`/`*F32` aliases below name the concrete instantiations. The
//! simulator, dataset I/O and the command-line pipeline work in `f64`.

pub mod commands;
pub mod error;
pub mod geometry;
pub mod hmm_grid;
pub mod io;
pub mod observation;
pub mod raycast;
pub mod scalar;
pub mod sim;
pub mod terrain_map;
pub mod volumetrics;

pub use error::{Error, Result};
pub use geometry::{Aabb, Quaternion, Vec3};
pub use hmm_grid::{
    build_transition_matrix, gaussian_likelihood, hmm_filter_update, num_states, report_state, state_center,
    CellHmm, GridConfig, LikelihoodMatrix, StateVector, TransitionMatrix,
};
pub use observation::{
    process_scan, CellKey, ColumnObservation, HeightObservation, Label, LabelledScan, MapFrameScan, SensorPose,
};
pub use raycast::VoxelKey;
pub use scalar::Scalar;
pub use terrain_map::{GlobalMap, MapSnapshot, SnapshotCell, UpdateReport};
pub use volumetrics::{change_grid, volume_between, volume_timeseries, ChangeGrid, VolumeReport};

pub type GridConfigF64 = GridConfig<f64>;
pub type GridConfigF32 = GridConfig<f32>;
pub type GlobalMapF64 = GlobalMap<f64>;
pub type GlobalMapF32 = GlobalMap<f32>;
pub type LabelledScanF64 = LabelledScan<f64>;
pub type LabelledScanF32 = LabelledScan<f32>;
pub type SensorPoseF64 = SensorPose<f64>;
pub type SensorPoseF32 = SensorPose<f32>;
pub type MapSnapshotF64 = MapSnapshot<f64>;
pub type MapSnapshotF32 = MapSnapshot<f32>;
pub type HeightObservationF64 = HeightObservation<f64>;
pub type HeightObservationF32 = HeightObservation<f32>;
pub type VolumeReportF64 = VolumeReport<f64>;
pub type VolumeReportF32 = VolumeReport<f32>;

//! Voxel traversal along a line segment (Amanatides & Woo).

use crate::geometry::Vec3;
use crate::scalar::{floor_index, Scalar};

/// Integer voxel coordinates at resolution `delta`: `i = floor(coord / delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl VoxelKey {
    pub const fn new(ix: i64, iy: i64, iz: i64) -> Self {
        Self { ix, iy, iz }
    }

    pub fn of<T: Scalar>(p: Vec3<T>, delta: T) -> Self {
        Self::new(floor_index(p.x / delta), floor_index(p.y / delta), floor_index(p.z / delta))
    }
}

#[derive(Clone, Copy)]
struct Axis<T> {
    step: i64,
    remaining: u64,
    t_max: T,
    t_delta: T,
}

impl<T: Scalar> Axis<T> {
    fn new(origin: T, dir: T, start: i64, end: i64, delta: T) -> Self {
        let remaining = end.abs_diff(start);
        if remaining == 0 || dir == T::zero() {
            return Self { step: 0, remaining: 0, t_max: T::infinity(), t_delta: T::infinity() };
        }
        let step = if end > start { 1 } else { -1 };
        let boundary = if step > 0 { start + 1 } else { start };
        let boundary = T::from_i64(boundary).unwrap_or(T::zero()) * delta;
        Self { step, remaining, t_max: (boundary - origin) / dir, t_delta: delta / dir.abs() }
    }
}

/// Visits every voxel the segment `origin -> end` passes through, in order,
/// starting with the voxel containing `origin` and finishing with the voxel
/// containing `end`. The walk takes exactly the Manhattan distance between
/// those two voxels in steps, so it always terminates in the end voxel.
pub fn traverse_segment<T: Scalar, F: FnMut(VoxelKey)>(origin: Vec3<T>, end: Vec3<T>, delta: T, mut visit: F) {
    let start = VoxelKey::of(origin, delta);
    let target = VoxelKey::of(end, delta);
    let dir = end - origin;
    let mut axes = [
        Axis::new(origin.x, dir.x, start.ix, target.ix, delta),
        Axis::new(origin.y, dir.y, start.iy, target.iy, delta),
        Axis::new(origin.z, dir.z, start.iz, target.iz, delta),
    ];
    let mut cur = [start.ix, start.iy, start.iz];
    visit(start);
    loop {
        let mut pick: Option<usize> = None;
        for (i, ax) in axes.iter().enumerate() {
            if ax.remaining == 0 {
                continue;
            }
            match pick {
                Some(p) if axes[p].t_max <= ax.t_max => {}
                _ => pick = Some(i),
            }
        }
        let Some(i) = pick else { break };
        let ax = &mut axes[i];
        cur[i] += ax.step;
        ax.remaining -= 1;
        ax.t_max = ax.t_max + ax.t_delta;
        visit(VoxelKey::new(cur[0], cur[1], cur[2]));
    }
}

/// Collects [`traverse_segment`] into a vector.
pub fn segment_voxels<T: Scalar>(origin: Vec3<T>, end: Vec3<T>, delta: T) -> Vec<VoxelKey> {
    let mut out = Vec::new();
    traverse_segment(origin, end, delta, |k| out.push(k));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_beam() {
        let v = segment_voxels(Vec3::new(0.1, 0.1, 0.1), Vec3::new(0.9, 0.1, 0.1), 0.25f64);
        assert_eq!(v, (0..4).map(|i| VoxelKey::new(i, 0, 0)).collect::<Vec<_>>());
    }

    #[test]
    fn negative_direction() {
        let v = segment_voxels(Vec3::new(0.1, 0.1, 0.1), Vec3::new(-0.6, 0.1, 0.1), 0.25f64);
        assert_eq!(v, vec![VoxelKey::new(0, 0, 0), VoxelKey::new(-1, 0, 0), VoxelKey::new(-2, 0, 0), VoxelKey::new(-3, 0, 0)]);
    }

    #[test]
    fn degenerate_segment() {
        let p = Vec3::new(1.3, 2.2, 0.7);
        assert_eq!(segment_voxels(p, p, 0.25f64), vec![VoxelKey::of(p, 0.25)]);
        let q = Vec3::new(1.31, 2.21, 0.71);
        assert_eq!(segment_voxels(p, q, 0.25f64).len(), 1);
    }

    #[test]
    fn diagonal_path_is_connected() {
        let v = segment_voxels(Vec3::new(0.3, -2.7, 9.9), Vec3::new(7.1, 4.4, 2.05), 0.25f64);
        for w in v.windows(2) {
            let d = (w[0].ix - w[1].ix).abs() + (w[0].iy - w[1].iy).abs() + (w[0].iz - w[1].iz).abs();
            assert_eq!(d, 1);
        }
        assert_eq!(*v.last().unwrap(), VoxelKey::of(Vec3::new(7.1, 4.4, 2.05), 0.25));
    }

    #[test]
    fn boundary_belongs_to_higher_voxel() {
        assert_eq!(VoxelKey::of(Vec3::new(0.25, -0.25, 0.0), 0.25f64), VoxelKey::new(1, -1, 0));
    }
}

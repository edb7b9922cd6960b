//! Synthetic scenes with known ground truth: a heightfield, scripted
//! excavation/spill events, and a virtual spinning LiDAR that can replace a
//! fraction of its returns with airborne dust.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Quaternion, Vec3};
use crate::observation::{LabelledScan, SensorPose};

fn spec_err(field: &str, msg: impl Into<String>) -> Error {
    Error::InvalidSpec { field: field.to_string(), msg: msg.into() }
}

/// Axis-aligned rectangle `[x0, x1) x [y0, y1)` in map coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerrainSpec {
    Flat { height: f64 },
    /// Floor up to `toe_x`, a planar face rising along +x at `slope_deg`, then the crest.
    BenchFace { floor: f64, crest: f64, slope_deg: f64, toe_x: f64 },
    /// Smoothly interpolated value noise around `base`.
    Rough { base: f64, amplitude: f64, wavelength: f64 },
}

/// Ground truth: a dense base heightfield sampled at `resolution` from the
/// origin, plus the applied events as exact rectangular edits with vertical
/// walls.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueTerrain {
    heights: Vec<f64>,
    nx: usize,
    ny: usize,
    resolution: f64,
    extent: (f64, f64),
    max_height: f64,
    min_height: f64,
    edits: Vec<TerrainEvent>,
}

impl TrueTerrain {
    fn from_fn(extent: (f64, f64), resolution: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(spec_err("resolution", "must be positive"));
        }
        if !(extent.0 > 0.0 && extent.1 > 0.0) {
            return Err(spec_err("extent", "must be positive"));
        }
        let nx = (extent.0 / resolution).round() as usize + 1;
        let ny = (extent.1 / resolution).round() as usize + 1;
        let mut heights = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                heights.push(f(i as f64 * resolution, j as f64 * resolution));
            }
        }
        let mut t = Self {
            heights,
            nx,
            ny,
            resolution,
            extent,
            max_height: 0.0,
            min_height: 0.0,
            edits: Vec::new(),
        };
        t.update_extrema();
        Ok(t)
    }

    /// Extrema over the sample nodes, counting an edit at every node its
    /// closed footprint touches. Bounds the interpolated surface.
    fn update_extrema(&mut self) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in 0..self.ny {
            for i in 0..self.nx {
                let (x, y) = (i as f64 * self.resolution, j as f64 * self.resolution);
                let base = self.sample(i, j);
                let (mut dlo, mut dhi) = (0.0, 0.0);
                for e in &self.edits {
                    let r = &e.footprint;
                    if x >= r.x0 && x <= r.x1 && y >= r.y0 && y <= r.y1 && r.area() > 0.0 {
                        let d = e.dh_at(x);
                        if d < 0.0 {
                            dlo += d;
                        } else {
                            dhi += d;
                        }
                    }
                }
                lo = lo.min(base + dlo);
                hi = hi.max(base + dhi);
            }
        }
        self.min_height = lo;
        self.max_height = hi;
    }

    fn edit_at(&self, x: f64, y: f64) -> f64 {
        self.edits.iter().filter(|e| e.footprint.contains(x, y)).map(|e| e.dh_at(x)).sum()
    }

    pub fn extent(&self) -> (f64, f64) {
        self.extent
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn max_height(&self) -> f64 {
        self.max_height
    }

    pub fn min_height(&self) -> f64 {
        self.min_height
    }

    pub fn inside(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= self.extent.0 && y <= self.extent.1
    }

    /// Base heightfield sample at grid node `(i, j)`, without edits.
    pub fn sample(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.nx + i]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Bilinear interpolation of the base plus the edits covering `(x, y)`;
    /// `None` outside the extent.
    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        if !self.inside(x, y) {
            return None;
        }
        let fx = (x / self.resolution).min((self.nx - 1) as f64);
        let fy = (y / self.resolution).min((self.ny - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let (u, v) = (fx - i as f64, fy - j as f64);
        let h00 = self.sample(i, j);
        let h10 = self.sample(i + 1, j);
        let h01 = self.sample(i, j + 1);
        let h11 = self.sample(i + 1, j + 1);
        let base = (h00 * (1.0 - u) + h10 * u) * (1.0 - v) + (h01 * (1.0 - u) + h11 * u) * v;
        Some(if self.edits.is_empty() { base } else { base + self.edit_at(x, y) })
    }

    /// Mean true height over grid cell `(ix, iy)` of size `delta`.
    pub fn cell_mean(&self, ix: i64, iy: i64, delta: f64) -> Option<f64> {
        let sub = (delta / self.resolution).round().max(1.0) as usize;
        let mut acc = 0.0;
        let mut n = 0usize;
        for a in 0..sub {
            for b in 0..sub {
                let x = (ix as f64) * delta + (a as f64 + 0.5) * delta / sub as f64;
                let y = (iy as f64) * delta + (b as f64 + 0.5) * delta / sub as f64;
                if let Some(h) = self.height_at(x, y) {
                    acc += h;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| acc / n as f64)
    }

    fn check_range(&self, h_min: f64, h_max: f64) -> Result<()> {
        for h in [self.min_height, self.max_height] {
            if !(h >= h_min && h <= h_max) {
                return Err(Error::OutOfRangeHeight { height: h, h_min, h_max });
            }
        }
        Ok(())
    }
}

fn lattice_value(seed: u64, i: i64, j: i64) -> f64 {
    // splitmix-style hash to [-1, 1]
    let mut z = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (i, j) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (u, v) = (smooth(x - fx), smooth(y - fy));
    let a = lattice_value(seed, i, j) * (1.0 - u) + lattice_value(seed, i + 1, j) * u;
    let b = lattice_value(seed, i, j + 1) * (1.0 - u) + lattice_value(seed, i + 1, j + 1) * u;
    a * (1.0 - v) + b * v
}

/// Builds a heightfield over `[0, extent.0] x [0, extent.1]`. Deterministic in `seed`.
pub fn generate_terrain(
    spec: &TerrainSpec,
    extent: (f64, f64),
    resolution: f64,
    h_range: (f64, f64),
    seed: u64,
) -> Result<TrueTerrain> {
    let terrain = match *spec {
        TerrainSpec::Flat { height } => TrueTerrain::from_fn(extent, resolution, |_, _| height)?,
        TerrainSpec::BenchFace { floor, crest, slope_deg, toe_x } => {
            if !(crest > floor) {
                return Err(spec_err("crest", "must exceed floor"));
            }
            if !(slope_deg > 0.0 && slope_deg < 90.0) {
                return Err(spec_err("slope_deg", "must lie in (0, 90)"));
            }
            let grade = slope_deg.to_radians().tan();
            TrueTerrain::from_fn(extent, resolution, |x, _| (floor + (x - toe_x).max(0.0) * grade).min(crest))?
        }
        TerrainSpec::Rough { base, amplitude, wavelength } => {
            if !(wavelength > 0.0) {
                return Err(spec_err("wavelength", "must be positive"));
            }
            if !(amplitude >= 0.0) {
                return Err(spec_err("amplitude", "must be non-negative"));
            }
            TrueTerrain::from_fn(extent, resolution, |x, y| {
                let coarse = value_noise(seed, x / wavelength, y / wavelength);
                let fine = value_noise(seed.wrapping_add(1), 2.0 * x / wavelength, 2.0 * y / wavelength);
                base + amplitude * (0.7 * coarse + 0.3 * fine)
            })?
        }
    };
    terrain.check_range(h_range.0, h_range.1)?;
    Ok(terrain)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Excavate,
    Spill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventShape {
    /// Uniform `dh` over the footprint.
    Flat,
    /// `dh` grows linearly from zero at `x0` to full at `x1`.
    Ramp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainEvent {
    pub at_scan: u64,
    pub kind: EventKind,
    pub footprint: Rect,
    pub dh: f64,
    pub shape: EventShape,
}

impl TerrainEvent {
    pub fn validate(&self, extent: (f64, f64)) -> Result<()> {
        let r = &self.footprint;
        if !(r.x0 <= r.x1 && r.y0 <= r.y1) {
            return Err(spec_err("event.footprint", "min corner exceeds max corner"));
        }
        if r.x0 < 0.0 || r.y0 < 0.0 || r.x1 > extent.0 || r.y1 > extent.1 {
            return Err(spec_err("event.footprint", format!("{r:?} outside terrain extent {extent:?}")));
        }
        match self.kind {
            EventKind::Excavate if !(self.dh < 0.0) => Err(spec_err("event.dh", "excavation needs dh < 0")),
            EventKind::Spill if !(self.dh > 0.0) => Err(spec_err("event.dh", "spill needs dh > 0")),
            _ => Ok(()),
        }
    }

    fn dh_at(&self, x: f64) -> f64 {
        match self.shape {
            EventShape::Flat => self.dh,
            EventShape::Ramp => {
                let w = self.footprint.x1 - self.footprint.x0;
                if w <= 0.0 {
                    0.0
                } else {
                    self.dh * ((x - self.footprint.x0) / w).clamp(0.0, 1.0)
                }
            }
        }
    }
}

/// Result of [`apply_event`]: the new terrain and the volume removed
/// (positive) or added (negative).
#[derive(Debug, Clone)]
pub struct EventOutcome {
    pub terrain: TrueTerrain,
    pub removed_volume: f64,
}

/// Adds the event to the terrain as an exact edit over its half-open
/// footprint. The removed volume is `-dh * area` for a flat event and half
/// that for a ramp.
pub fn apply_event(terrain: &TrueTerrain, event: &TerrainEvent, h_range: (f64, f64)) -> Result<EventOutcome> {
    event.validate(terrain.extent)?;
    let mut out = terrain.clone();
    let area = event.footprint.area();
    if area <= 0.0 {
        return Ok(EventOutcome { terrain: out, removed_volume: 0.0 });
    }
    out.edits.push(*event);
    out.update_extrema();
    out.check_range(h_range.0, h_range.1)?;
    let removed_volume = match event.shape {
        EventShape::Flat => -event.dh * area,
        EventShape::Ramp => -event.dh * area / 2.0,
    };
    Ok(EventOutcome { terrain: out, removed_volume })
}

/// Where the sensor sits over time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    /// Sensor positions (map frame), visited in turn.
    pub positions: Vec<Vec3<f64>>,
    /// Consecutive scans spent at each position.
    pub dwell: u64,
    /// Peak yaw excursion of the swing profile, degrees. Zero disables swinging.
    pub swing_amplitude_deg: f64,
    /// Swing period in scans.
    pub swing_period: u64,
    pub rate_hz: f64,
}

impl TrajectorySpec {
    pub fn pose(&self, scan_index: u64) -> SensorPose<f64> {
        let slot = (scan_index / self.dwell.max(1)) as usize % self.positions.len();
        let yaw = if self.swing_amplitude_deg != 0.0 && self.swing_period > 0 {
            let phase = (scan_index % self.swing_period) as f64 / self.swing_period as f64;
            self.swing_amplitude_deg.to_radians() * (TAU * phase).sin()
        } else {
            0.0
        };
        SensorPose {
            translation: self.positions[slot],
            rotation: Quaternion::from_yaw(yaw),
            timestamp: scan_index as f64 / self.rate_hz,
            scan_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSensor {
    pub trajectory: TrajectorySpec,
    pub azimuth_count: usize,
    /// Horizontal field of view centred on the sensor's +x axis, radians.
    pub azimuth_fov: f64,
    /// Beam elevations, radians (negative looks down).
    pub elevation_angles: Vec<f64>,
    pub range_noise_sigma: f64,
    pub dust_rate: f64,
    pub max_range: f64,
    /// Rotate the beam pattern by a sub-beam offset every scan so repeated
    /// scans from one pose cover the ground densely.
    pub pattern_jitter: bool,
}

impl VirtualSensor {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dust_rate) {
            return Err(spec_err("dust_rate", "must lie in [0, 1)"));
        }
        if !(self.range_noise_sigma >= 0.0) {
            return Err(spec_err("range_noise_sigma", "must be non-negative"));
        }
        if self.azimuth_count == 0 || self.elevation_angles.is_empty() {
            return Err(spec_err("azimuth_count", "sensor needs at least one beam"));
        }
        if !(self.max_range > 0.0) {
            return Err(spec_err("max_range", "must be positive"));
        }
        if !(self.azimuth_fov > 0.0 && self.azimuth_fov <= TAU) {
            return Err(spec_err("azimuth_fov_deg", "must lie in (0, 360]"));
        }
        if self.trajectory.positions.is_empty() {
            return Err(spec_err("positions", "at least one sensor position required"));
        }
        if !(self.trajectory.rate_hz > 0.0) {
            return Err(spec_err("rate_hz", "must be positive"));
        }
        Ok(())
    }

    pub fn beam_count(&self) -> usize {
        self.azimuth_count * self.elevation_angles.len()
    }

    /// Unit beam directions in the sensor frame for one scan.
    fn beam_directions(&self, scan_index: u64) -> Vec<Vec3<f64>> {
        const GOLDEN: f64 = 0.618_033_988_749_894_8;
        const PLASTIC: f64 = 0.754_877_666_246_692_7;
        let (fa, fe) = if self.pattern_jitter {
            ((scan_index as f64 * GOLDEN).fract(), (scan_index as f64 * PLASTIC).fract())
        } else {
            (0.0, 0.0)
        };
        let full_circle = (self.azimuth_fov - TAU).abs() < 1e-12;
        let az_step = if full_circle {
            TAU / self.azimuth_count as f64
        } else {
            self.azimuth_fov / self.azimuth_count.max(2).saturating_sub(1) as f64
        };
        let el_step = if self.elevation_angles.len() > 1 {
            (self.elevation_angles[1] - self.elevation_angles[0]).abs()
        } else {
            0.0
        };
        let az0 = if full_circle { -PI } else { -0.5 * self.azimuth_fov };
        let mut dirs = Vec::with_capacity(self.beam_count());
        for &el in &self.elevation_angles {
            let el = el + fe * el_step;
            let (se, ce) = el.sin_cos();
            for a in 0..self.azimuth_count {
                let az = az0 + (a as f64 + fa) * az_step;
                let (sa, ca) = az.sin_cos();
                dirs.push(Vec3::new(ce * ca, ce * sa, se));
            }
        }
        dirs
    }
}

fn beam_rng(seed: u64, scan_index: u64, beam: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((scan_index << 24) ^ beam as u64);
    rng
}

/// First intersection of the ray with the heightfield, as a range.
const HIT_OVERSHOOT: f64 = 1e-6;

fn march(terrain: &TrueTerrain, origin: Vec3<f64>, dir: Vec3<f64>, max_range: f64) -> Option<f64> {
    let step = terrain.resolution;
    let below = |t: f64| -> Option<bool> {
        let p = origin + dir * t;
        terrain.height_at(p.x, p.y).map(|h| p.z <= h)
    };
    // nothing can be hit above the highest sample
    let mut t = if origin.z > terrain.max_height {
        if dir.z >= 0.0 {
            return None;
        }
        ((terrain.max_height - origin.z) / dir.z - step).max(0.0)
    } else {
        0.0
    };
    let mut prev = t;
    while t <= max_range {
        match below(t) {
            None => return None,
            Some(true) => {
                if t == 0.0 {
                    return None;
                }
                let (mut lo, mut hi) = (prev, t);
                while hi - lo > 1e-7 {
                    let mid = 0.5 * (lo + hi);
                    if below(mid) == Some(true) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                // one micrometre past the crossing keeps returns off vertical
                // faces on the solid side once written at nine digits
                let hit = hi + HIT_OVERSHOOT;
                return (hit <= max_range).then_some(hit);
            }
            Some(false) => {}
        }
        prev = t;
        t += step;
    }
    None
}

/// Beam-level bookkeeping for a rendered scan.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub beams: usize,
    pub hits: usize,
    pub dust: usize,
}

/// One beam's outcome: range to terrain and the range actually reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamReturn {
    pub beam: usize,
    pub terrain_range: f64,
    pub range: f64,
    pub dust: bool,
}

/// Renders every beam of one scan. Output order follows beam order and is
/// independent of thread count.
pub fn render_beams(terrain: &TrueTerrain, sensor: &VirtualSensor, scan_index: u64, seed: u64) -> (Vec<BeamReturn>, SensorPose<f64>) {
    let pose = sensor.trajectory.pose(scan_index);
    let rot = pose.rotation.to_matrix();
    let to_map = |d: Vec3<f64>| {
        Vec3::new(
            rot[0][0] * d.x + rot[0][1] * d.y + rot[0][2] * d.z,
            rot[1][0] * d.x + rot[1][1] * d.y + rot[1][2] * d.z,
            rot[2][0] * d.x + rot[2][1] * d.y + rot[2][2] * d.z,
        )
    };
    let dirs = sensor.beam_directions(scan_index);
    let noise = Normal::new(0.0, sensor.range_noise_sigma.max(0.0)).expect("finite sigma");
    let returns = dirs
        .par_iter()
        .enumerate()
        .filter_map(|(beam, d)| {
            let terrain_range = march(terrain, pose.translation, to_map(*d), sensor.max_range)?;
            let mut rng = beam_rng(seed, scan_index, beam);
            let dust_draw: f64 = rng.random();
            let frac: f64 = rng.random();
            let eps = if sensor.range_noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            if dust_draw < sensor.dust_rate {
                // uniform along the beam, strictly short of the terrain
                let range = terrain_range * frac.min(1.0 - 1e-9);
                Some(BeamReturn { beam, terrain_range, range, dust: true })
            } else {
                Some(BeamReturn { beam, terrain_range, range: (terrain_range + eps).max(0.0), dust: false })
            }
        })
        .collect();
    (returns, pose)
}

/// Renders one scan as sensor-frame points, all labelled terrain (dust included).
pub fn render_scan(
    terrain: &TrueTerrain,
    sensor: &VirtualSensor,
    scan_index: u64,
    seed: u64,
) -> (LabelledScan<f64>, SensorPose<f64>, RenderStats) {
    let (returns, pose) = render_beams(terrain, sensor, scan_index, seed);
    let dirs = sensor.beam_directions(scan_index);
    let points: Vec<Vec3<f64>> = returns.iter().map(|r| dirs[r.beam] * r.range).collect();
    let stats = RenderStats {
        beams: sensor.beam_count(),
        hits: returns.len(),
        dust: returns.iter().filter(|r| r.dust).count(),
    };
    (LabelledScan::terrain(points, pose.timestamp), pose, stats)
}

/// Complete description of a synthetic run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub terrain: TerrainSpec,
    pub extent: (f64, f64),
    /// Heightfield sample spacing (defaults to a quarter of the map resolution).
    pub terrain_resolution: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub n_scans: u64,
    pub sensor: VirtualSensor,
    pub events: Vec<TerrainEvent>,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_max > self.h_min) {
            return Err(spec_err("h_max", "must exceed h_min"));
        }
        self.sensor.validate()?;
        for p in &self.sensor.trajectory.positions {
            if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= self.extent.0 && p.y <= self.extent.1) {
                return Err(spec_err("positions", format!("sensor position {p:?} outside terrain extent")));
            }
        }
        let mut last = 0;
        for e in &self.events {
            e.validate(self.extent)?;
            if e.at_scan < last {
                return Err(spec_err("event.at_scan", "events must be ordered by scan"));
            }
            last = e.at_scan;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub at_scan: u64,
    pub kind: EventKind,
    pub footprint: Rect,
    pub dh: f64,
    pub shape: EventShape,
    /// Positive when material was removed.
    pub true_volume_m3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub scan_index: u64,
    pub cumulative_removed_m3: f64,
    pub cumulative_added_m3: f64,
    /// `removed - added`.
    pub net_m3: f64,
    /// Relative path of the cell-averaged heightfield written with the dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heightfield: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLog {
    pub scenario: String,
    pub seed: u64,
    pub n_scans: u64,
    pub terrain_resolution: f64,
    pub events: Vec<EventRecord>,
    pub checkpoints: Vec<Checkpoint>,
}

/// Terrain state captured at a checkpoint.
#[derive(Debug, Clone)]
pub struct TerrainCheckpoint {
    pub scan_index: u64,
    pub terrain: TrueTerrain,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub truth: TruthLog,
    pub checkpoints: Vec<TerrainCheckpoint>,
    pub stats: RenderStats,
}

/// Runs a scenario, handing every rendered scan to `sink` in scan order.
/// Events scheduled at scan `k` are applied before scan `k` is rendered.
/// Checkpoints are recorded for the initial terrain and after every event.
pub fn run_scenario_with<F>(scenario: &Scenario, mut sink: F) -> Result<ScenarioOutcome>
where
    F: FnMut(u64, LabelledScan<f64>, SensorPose<f64>) -> Result<()>,
{
    scenario.validate()?;
    let h_range = (scenario.h_min, scenario.h_max);
    let mut terrain = generate_terrain(
        &scenario.terrain,
        scenario.extent,
        scenario.terrain_resolution,
        h_range,
        scenario.seed,
    )?;
    let mut events = scenario.events.iter().peekable();
    let mut records = Vec::new();
    let (mut removed, mut added) = (0.0, 0.0);
    let mut checkpoints = vec![Checkpoint {
        scan_index: 0,
        cumulative_removed_m3: 0.0,
        cumulative_added_m3: 0.0,
        net_m3: 0.0,
        heightfield: None,
    }];
    let mut terrain_checkpoints = vec![TerrainCheckpoint { scan_index: 0, terrain: terrain.clone() }];
    let mut stats = RenderStats::default();

    for k in 0..scenario.n_scans {
        let mut changed = false;
        while let Some(e) = events.next_if(|e| e.at_scan <= k) {
            let outcome = apply_event(&terrain, e, h_range)?;
            terrain = outcome.terrain;
            if outcome.removed_volume >= 0.0 {
                removed += outcome.removed_volume;
            } else {
                added -= outcome.removed_volume;
            }
            records.push(EventRecord {
                at_scan: e.at_scan,
                kind: e.kind,
                footprint: e.footprint,
                dh: e.dh,
                shape: e.shape,
                true_volume_m3: outcome.removed_volume,
            });
            changed = true;
        }
        if changed {
            checkpoints.push(Checkpoint {
                scan_index: k,
                cumulative_removed_m3: removed,
                cumulative_added_m3: added,
                net_m3: removed - added,
                heightfield: None,
            });
            terrain_checkpoints.push(TerrainCheckpoint { scan_index: k, terrain: terrain.clone() });
        }
        let (scan, pose, s) = render_scan(&terrain, &scenario.sensor, k, scenario.seed);
        stats.beams += s.beams;
        stats.hits += s.hits;
        stats.dust += s.dust;
        sink(k, scan, pose)?;
    }

    let truth = TruthLog {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        n_scans: scenario.n_scans,
        terrain_resolution: scenario.terrain_resolution,
        events: records,
        checkpoints,
    };
    Ok(ScenarioOutcome { truth, checkpoints: terrain_checkpoints, stats })
}

/// A rendered dataset held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub scans: Vec<LabelledScan<f64>>,
    pub poses: Vec<SensorPose<f64>>,
    pub outcome: ScenarioOutcome,
}

pub fn run_scenario(scenario: &Scenario) -> Result<Dataset> {
    let mut scans = Vec::with_capacity(scenario.n_scans as usize);
    let mut poses = Vec::with_capacity(scenario.n_scans as usize);
    let outcome = run_scenario_with(scenario, |_, s, p| {
        scans.push(s);
        poses.push(p);
        Ok(())
    })?;
    Ok(Dataset { scans, poses, outcome })
}

/// `count` evenly spaced angles from `lo_deg` to `hi_deg`, in radians.
pub fn elevation_fan(lo_deg: f64, hi_deg: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo_deg.to_radians()];
    }
    (0..count)
        .map(|i| (lo_deg + (hi_deg - lo_deg) * i as f64 / (count - 1) as f64).to_radians())
        .collect()
}

/// The four-dig staircase used by the end-to-end checks: flat 40 m x 40 m
/// terrain at 5.05 m and four sequential 4 m x 4 m x 1 m excavations
/// (64 m^3 in total), observed from four positions around the pit.
pub fn staircase_scenario(dust_rate: f64, seed: u64) -> Scenario {
    let digs = [(14.0, 14.0), (22.0, 14.0), (22.0, 22.0), (14.0, 22.0)];
    let events = digs
        .iter()
        .enumerate()
        .map(|(i, &(x0, y0))| TerrainEvent {
            at_scan: 60 + 50 * i as u64,
            kind: EventKind::Excavate,
            footprint: Rect { x0, y0, x1: x0 + 4.0, y1: y0 + 4.0 },
            dh: -1.0,
            shape: EventShape::Flat,
        })
        .collect();
    Scenario {
        name: "staircase".into(),
        terrain: TerrainSpec::Flat { height: 5.05 },
        extent: (40.0, 40.0),
        terrain_resolution: 0.0625,
        h_min: 0.0,
        h_max: 20.0,
        n_scans: 270,
        sensor: VirtualSensor {
            trajectory: TrajectorySpec {
                positions: vec![
                    Vec3::new(20.0, 6.0, 15.0),
                    Vec3::new(34.0, 20.0, 15.0),
                    Vec3::new(20.0, 34.0, 15.0),
                    Vec3::new(6.0, 20.0, 15.0),
                ],
                dwell: 1,
                swing_amplitude_deg: 0.0,
                swing_period: 0,
                rate_hz: 10.0,
            },
            azimuth_count: 480,
            azimuth_fov: TAU,
            elevation_angles: elevation_fan(-60.0, -20.0, 48),
            range_noise_sigma: 0.0,
            dust_rate,
            max_range: 60.0,
            pattern_jitter: true,
        },
        events,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(h: f64) -> TrueTerrain {
        generate_terrain(&TerrainSpec::Flat { height: h }, (40.0, 40.0), 0.0625, (0.0, 20.0), 1).unwrap()
    }

    fn sensor_at(p: Vec3<f64>) -> VirtualSensor {
        let mut s = staircase_scenario(0.0, 0).sensor;
        s.trajectory.positions = vec![p];
        s
    }

    #[test]
    fn terrain_examples() {
        let t = flat(2.0);
        assert!((t.min_height() - 2.0).abs() < 1e-15 && (t.max_height() - 2.0).abs() < 1e-15);

        let spec = TerrainSpec::BenchFace { floor: 0.0, crest: 15.0, slope_deg: 70.0, toe_x: 10.0 };
        let t = generate_terrain(&spec, (40.0, 40.0), 0.0625, (0.0, 20.0), 0).unwrap();
        assert_eq!(t.max_height(), 15.0);
        assert_eq!(t.min_height(), 0.0);

        let spec = TerrainSpec::Rough { base: 5.0, amplitude: 1.5, wavelength: 6.0 };
        let a = generate_terrain(&spec, (20.0, 20.0), 0.125, (0.0, 20.0), 7).unwrap();
        let b = generate_terrain(&spec, (20.0, 20.0), 0.125, (0.0, 20.0), 7).unwrap();
        let c = generate_terrain(&spec, (20.0, 20.0), 0.125, (0.0, 20.0), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);

        assert!(generate_terrain(&TerrainSpec::Flat { height: 30.0 }, (4.0, 4.0), 0.5, (0.0, 20.0), 0).is_err());
    }

    #[test]
    fn event_volumes() {
        let t = flat(5.0);
        let dig = TerrainEvent {
            at_scan: 0,
            kind: EventKind::Excavate,
            footprint: Rect { x0: 8.0, y0: 8.0, x1: 12.0, y1: 12.0 },
            dh: -1.0,
            shape: EventShape::Flat,
        };
        let out = apply_event(&t, &dig, (0.0, 20.0)).unwrap();
        assert!((out.removed_volume - 16.0).abs() < 1e-9);
        assert_eq!(out.terrain.height_at(10.0, 10.0), Some(4.0));

        let spill = TerrainEvent {
            kind: EventKind::Spill,
            footprint: Rect { x0: 1.0, y0: 1.0, x1: 3.0, y1: 3.0 },
            dh: 0.5,
            ..dig
        };
        let out = apply_event(&t, &spill, (0.0, 20.0)).unwrap();
        assert!((out.removed_volume + 2.0).abs() < 1e-9);

        let empty = TerrainEvent { footprint: Rect { x0: 5.0, y0: 5.0, x1: 5.0, y1: 9.0 }, ..dig };
        let out = apply_event(&t, &empty, (0.0, 20.0)).unwrap();
        assert_eq!(out.terrain, t);
        assert_eq!(out.removed_volume, 0.0);

        let outside = TerrainEvent { footprint: Rect { x0: 38.0, y0: 0.0, x1: 42.0, y1: 4.0 }, ..dig };
        assert!(matches!(apply_event(&t, &outside, (0.0, 20.0)), Err(Error::InvalidSpec { .. })));

        let too_deep = TerrainEvent { dh: -6.0, ..dig };
        assert!(matches!(apply_event(&t, &too_deep, (0.0, 20.0)), Err(Error::OutOfRangeHeight { .. })));
    }

    #[test]
    fn flat_scan_hits_the_plane() {
        let t = flat(2.0);
        let sensor = sensor_at(Vec3::new(20.0, 20.0, 10.0));
        let (scan, pose, stats) = render_scan(&t, &sensor, 0, 3);
        assert!(stats.hits > 0);
        assert!(stats.hits <= sensor.beam_count());
        for p in &scan.points {
            let z = p.z + pose.translation.z;
            assert!((z - 2.0).abs() <= t.resolution(), "{z}");
        }
    }

    #[test]
    fn beams_beyond_range_are_dropped() {
        let t = flat(2.0);
        let mut sensor = sensor_at(Vec3::new(20.0, 20.0, 10.0));
        sensor.max_range = 5.0;
        let (scan, _, _) = render_scan(&t, &sensor, 0, 3);
        assert!(scan.is_empty());
    }

    #[test]
    fn dust_returns_fall_short_of_terrain() {
        let t = flat(2.0);
        let mut sensor = sensor_at(Vec3::new(20.0, 20.0, 10.0));
        sensor.dust_rate = 0.1;
        let mut hits = 0usize;
        let mut dust = 0usize;
        for k in 0..5 {
            let (beams, _) = render_beams(&t, &sensor, k, 11);
            for b in &beams {
                if b.dust {
                    assert!(b.range < b.terrain_range);
                }
            }
            hits += beams.len();
            dust += beams.iter().filter(|b| b.dust).count();
        }
        let p = 0.1;
        let sd = (hits as f64 * p * (1.0 - p)).sqrt();
        assert!((dust as f64 - hits as f64 * p).abs() < 3.0 * sd, "{dust} of {hits}");
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = flat(2.0);
        let mut sensor = sensor_at(Vec3::new(20.0, 20.0, 10.0));
        sensor.range_noise_sigma = 0.02;
        sensor.dust_rate = 0.05;
        let a = render_scan(&t, &sensor, 4, 99).0;
        let b = render_scan(&t, &sensor, 4, 99).0;
        let c = render_scan(&t, &sensor, 4, 100).0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn swing_profile_changes_yaw() {
        let mut traj = staircase_scenario(0.0, 0).sensor.trajectory;
        traj.swing_amplitude_deg = 90.0;
        traj.swing_period = 40;
        let q = traj.pose(10).rotation;
        assert!((q.z - (std::f64::consts::FRAC_PI_4).sin()).abs() < 1e-12);
        assert_eq!(traj.pose(0).rotation, Quaternion::identity());
    }

    #[test]
    fn staircase_truth_log() {
        let mut sc = staircase_scenario(0.0, 0);
        sc.sensor.azimuth_count = 8;
        sc.sensor.elevation_angles = elevation_fan(-60.0, -30.0, 2);
        let out = run_scenario_with(&sc, |_, _, _| Ok(())).unwrap();
        let nets: Vec<f64> = out.truth.checkpoints.iter().map(|c| c.net_m3).collect();
        assert_eq!(nets.len(), 5);
        for (i, v) in nets.iter().enumerate() {
            assert!((v - 16.0 * i as f64).abs() < 1e-9);
        }
        assert_eq!(out.truth.events.len(), 4);
    }

    #[test]
    fn static_scenario_has_zero_truth() {
        let mut sc = staircase_scenario(0.0, 0);
        sc.events.clear();
        sc.n_scans = 3;
        sc.sensor.azimuth_count = 4;
        let out = run_scenario_with(&sc, |_, _, _| Ok(())).unwrap();
        assert!(out.truth.checkpoints.iter().all(|c| c.net_m3 == 0.0));
    }
}

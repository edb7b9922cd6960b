//! The four pipeline commands behind the CLI. Each returns a summary value so
//! the same code paths can be driven from tests; warnings are collected and
//! returned rather than printed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::io::{self, RunConfig, SnapshotIndexRow, VolumeRow};
use crate::observation::{process_scan, LabelledScan, SensorPose, StageTimings};
use crate::sim::{run_scenario_with, TrueTerrain};
use crate::terrain_map::{GlobalMap, MapSnapshot, UpdateReport};
use crate::volumetrics::{change_grid, volume_timeseries, window_start, VolumeReport};

/// Stage timings of the full per-scan path, including the map update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PipelineTimings {
    pub stages: StageTimings,
    pub update: Duration,
}

impl PipelineTimings {
    pub fn total(&self) -> Duration {
        let s = &self.stages;
        s.transform + s.voxelize + s.raycast + s.reduce + self.update
    }
}

/// Drives scans through the pipeline into a [`GlobalMap`], honouring the
/// stride and emitting snapshots on schedule.
#[derive(Debug)]
pub struct MapRunner {
    cfg: RunConfig,
    map: GlobalMap<f64>,
    pub totals: UpdateReport,
    pub timings: PipelineTimings,
    pub scans_read: u64,
    pub scans_processed: u64,
    last_scan: Option<u64>,
}

impl MapRunner {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::with_map(cfg, GlobalMap::new(cfg.grid)?))
    }

    pub fn with_map(cfg: &RunConfig, map: GlobalMap<f64>) -> Self {
        Self {
            cfg: cfg.clone(),
            map,
            totals: UpdateReport::default(),
            timings: PipelineTimings::default(),
            scans_read: 0,
            scans_processed: 0,
            last_scan: None,
        }
    }

    /// Feeds one scan. Scans whose index is not a multiple of the stride are
    /// counted but not processed. Returns a snapshot, tagged with the number
    /// of scans elapsed, when one is due.
    pub fn push(&mut self, scan: LabelledScan<f64>, pose: &SensorPose<f64>) -> Result<Option<MapSnapshot<f64>>> {
        let k = pose.scan_index;
        self.scans_read += 1;
        self.last_scan = Some(k);
        if k % self.cfg.stride == 0 {
            let processed = process_scan(scan, pose, &self.cfg.grid, &self.cfg.exclusion_boxes)?;
            let t = Instant::now();
            self.totals += self.map.apply_observations(&processed.observations, k)?;
            self.timings.update += t.elapsed();
            self.timings.stages += processed.timings;
            self.scans_processed += 1;
        }
        Ok(((k + 1) % self.cfg.snapshot_every == 0).then(|| self.snapshot_at(k + 1)))
    }

    /// Current reported map, tagged with `scan_index`.
    pub fn snapshot_at(&self, scan_index: u64) -> MapSnapshot<f64> {
        MapSnapshot { scan_index, ..self.map.snapshot() }
    }

    /// Scans elapsed so far (one past the last scan read).
    pub fn scans_elapsed(&self) -> u64 {
        self.last_scan.map_or(0, |k| k + 1)
    }

    pub fn map(&self) -> &GlobalMap<f64> {
        &self.map
    }

    pub fn into_map(self) -> GlobalMap<f64> {
        self.map
    }
}

#[derive(Debug, Clone)]
pub struct MapSummary {
    pub scans_read: u64,
    pub scans_processed: u64,
    pub snapshots: Vec<SnapshotIndexRow>,
    pub cells: usize,
    pub totals: UpdateReport,
    pub elapsed: Duration,
    pub warnings: Vec<String>,
}

impl MapSummary {
    pub fn scans_per_sec(&self) -> f64 {
        rate(self.scans_read, self.elapsed)
    }
}

fn rate(count: u64, elapsed: Duration) -> f64 {
    let s = elapsed.as_secs_f64();
    if count == 0 || s <= 0.0 {
        0.0
    } else {
        count as f64 / s
    }
}

fn require<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::InvalidConfig(format!("no {name} given")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";
pub const MAP_EXPORT: &str = "map.csv";
pub const METRICS_FILE: &str = "metrics.txt";

/// Builds a map from `cfg.dataset` and writes to `cfg.out`:
/// `snapshots/snapshot_NNNNNN.csv` with `snapshots/index.csv`, the final map
/// as `map.csv`, and `metrics.txt`. An `INCOMPLETE` marker stays behind if
/// the run fails part-way.
pub fn cmd_map(cfg: &RunConfig) -> Result<MapSummary> {
    cfg.validate()?;
    let dataset = require(&cfg.dataset, "dataset")?;
    let out = require(&cfg.out, "output directory")?;
    let snap_dir = out.join("snapshots");
    create_dir(&snap_dir)?;
    let marker = out.join(INCOMPLETE_MARKER);
    write(&marker, "map run did not finish; artifacts in this directory are partial\n")?;

    let started = Instant::now();
    let reader = io::load_dataset(dataset)?;
    let mut warnings = reader.warnings.clone();
    if reader.is_empty() {
        warnings.push(format!("dataset {} contains no scans", dataset.display()));
    }
    let delta = cfg.grid.delta;
    let mut runner = MapRunner::new(cfg)?;
    let mut index = Vec::new();
    let mut last_ts = None;
    let save = |s: &MapSnapshot<f64>, ts: Option<f64>, index: &mut Vec<SnapshotIndexRow>| -> Result<()> {
        let file = io::snapshot_file_name(s.scan_index);
        io::write_snapshot(&snap_dir.join(&file), s, delta)?;
        index.push(SnapshotIndexRow { scan_index: s.scan_index, timestamp: ts, file });
        Ok(())
    };
    for item in reader {
        let (scan, pose) = item?;
        last_ts = Some(pose.timestamp);
        if let Some(s) = runner.push(scan, &pose)? {
            save(&s, last_ts, &mut index)?;
        }
    }
    let final_snap = runner.snapshot_at(runner.scans_elapsed());
    if runner.scans_read > 0 && index.last().map(|r| r.scan_index) != Some(final_snap.scan_index) {
        save(&final_snap, last_ts, &mut index)?;
    }
    write(&snap_dir.join("index.csv"), &io::format_snapshot_index(&index))?;
    io::write_snapshot(&out.join(MAP_EXPORT), &final_snap, delta)?;

    let summary = MapSummary {
        scans_read: runner.scans_read,
        scans_processed: runner.scans_processed,
        snapshots: index,
        cells: runner.map().len(),
        totals: runner.totals,
        elapsed: started.elapsed(),
        warnings,
    };
    write(&out.join(METRICS_FILE), &format_map_metrics(&summary, runner.map()))?;
    fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    Ok(summary)
}

fn format_map_metrics(s: &MapSummary, map: &GlobalMap<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "n_states = {}", map.num_states());
    let _ = writeln!(out, "delta_off = {}", io::fmt_num(map.transition().delta_off()));
    let _ = writeln!(out, "scans_read = {}", s.scans_read);
    let _ = writeln!(out, "scans_processed = {}", s.scans_processed);
    let _ = writeln!(out, "snapshots = {}", s.snapshots.len());
    let _ = writeln!(out, "cells = {}", s.cells);
    let _ = writeln!(out, "cells_created = {}", s.totals.created);
    let _ = writeln!(out, "cells_updated = {}", s.totals.updated);
    let _ = writeln!(out, "state_changes = {}", s.totals.state_changed);
    let _ = writeln!(out, "skipped_out_of_range = {}", s.totals.skipped_out_of_range);
    let _ = writeln!(out, "elapsed_s = {}", io::fmt_num(s.elapsed.as_secs_f64()));
    let _ = writeln!(out, "scans_per_sec = {}", io::fmt_num(s.scans_per_sec()));
    let _ = writeln!(out, "warnings = {}", s.warnings.len());
    out
}

/// Reads a `key = value` metrics file into pairs.
pub fn read_metrics(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(io::parse_kv(&text)?.into_iter().map(|e| (e.key, e.value)).collect())
}

/// A snapshot on disk with its scan index and optional timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRef {
    pub path: PathBuf,
    pub scan_index: u64,
    pub timestamp: Option<f64>,
}

/// Snapshots listed in `<map_out>/snapshots/index.csv`.
pub fn snapshots_in(map_out: &Path) -> Result<Vec<SnapshotRef>> {
    let dir = map_out.join("snapshots");
    Ok(io::read_snapshot_index(&dir.join("index.csv"))?
        .into_iter()
        .map(|r| SnapshotRef { path: dir.join(&r.file), scan_index: r.scan_index, timestamp: r.timestamp })
        .collect())
}

/// Snapshot files named `snapshot_NNNNNN.csv`; the index comes from the name.
pub fn snapshot_refs_from_paths(paths: &[PathBuf]) -> Result<Vec<SnapshotRef>> {
    paths
        .iter()
        .map(|p| {
            let scan_index = io::snapshot_index_from_name(p).ok_or_else(|| {
                Error::InvalidArgument(format!("{}: expected a snapshot_NNNNNN.csv file name", p.display()))
            })?;
            Ok(SnapshotRef { path: p.clone(), scan_index, timestamp: None })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct VolumeSummary {
    pub baseline: usize,
    pub reports: Vec<VolumeReport<f64>>,
    pub change_grids: usize,
    pub warnings: Vec<String>,
}

/// Computes the volume series against the baseline snapshot and the
/// receding-window change grids. Writes `volume.csv` and
/// `change_grids/change_K1_K2.csv` under `out`.
pub fn cmd_volume(cfg: &RunConfig, snapshots: &[SnapshotRef], out: &Path) -> Result<VolumeSummary> {
    cfg.validate()?;
    if snapshots.len() < 2 {
        return Err(Error::TooFewSnapshots { needed: 2, got: snapshots.len() });
    }
    let mut refs = snapshots.to_vec();
    refs.sort_by_key(|r| r.scan_index);
    let snaps = refs.iter().map(|r| io::read_snapshot(&r.path, r.scan_index)).collect::<Result<Vec<_>>>()?;

    let mut warnings = Vec::new();
    let baseline = match cfg.baseline {
        Some(b) => b,
        None => match snaps.iter().position(|s| s.scan_index >= cfg.grid.m_init as u64) {
            Some(b) => b,
            None => {
                warnings.push(format!("no snapshot at or after the initialisation budget of {} scans", cfg.grid.m_init));
                0
            }
        },
    };
    let delta = cfg.grid.delta;
    let reports = volume_timeseries(&snaps, delta, baseline)?;
    if reports.iter().skip(1).any(|r| r.common_cell_count == 0) || (reports.len() == 1 && snaps[baseline].cells.is_empty()) {
        warnings.push("some snapshot pairs share no common cells; their volume change is zero".into());
    }

    let rows: Vec<VolumeRow> = reports
        .iter()
        .zip(&refs[baseline..])
        .map(|(r, s)| VolumeRow::from_report(r, s.timestamp))
        .collect();
    create_dir(out)?;
    write(&out.join("volume.csv"), &io::format_volume_timeseries(&rows))?;

    let grid_dir = out.join("change_grids");
    create_dir(&grid_dir)?;
    let mut change_grids = 0;
    for t in 0..snaps.len() {
        if let Some(s) = window_start(&snaps, t, cfg.window) {
            let g = change_grid(&snaps[s], &snaps[t]);
            let name = format!("change_{:06}_{:06}.csv", g.k1, g.k2);
            write(&grid_dir.join(name), &io::format_change_grid(&g))?;
            change_grids += 1;
        }
    }
    Ok(VolumeSummary { baseline, reports, change_grids, warnings })
}

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub scans: u64,
    pub events: usize,
    pub points: usize,
    pub dust_points: usize,
}

/// Cell means of the true terrain over the whole extent at map resolution.
pub fn truth_heightfield(terrain: &TrueTerrain, delta: f64) -> Vec<(i64, i64, f64)> {
    let (ex, ey) = terrain.extent();
    let (nx, ny) = ((ex / delta).floor() as i64, (ey / delta).floor() as i64);
    let mut out = Vec::with_capacity((nx * ny).max(0) as usize);
    for ix in 0..nx {
        for iy in 0..ny {
            if let Some(h) = terrain.cell_mean(ix, iy, delta) {
                out.push((ix, iy, h));
            }
        }
    }
    out
}

/// Renders the scenario in `spec_path` into a dataset under `out`. `seed`
/// overrides the scenario's own seed; `delta` sets the resolution of the
/// truth heightfields.
pub fn cmd_simulate(spec_path: &Path, seed: Option<u64>, out: &Path, delta: f64) -> Result<SimulateSummary> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let mut scenario = io::parse_scenario(&text)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig("delta must be positive".into()));
    }
    let mut writer = io::DatasetWriter::create(out)?;
    let mut points = 0;
    let outcome = run_scenario_with(&scenario, |k, scan, pose| {
        points += scan.len();
        writer.write_scan(k, &scan, &pose)
    })?;

    let truth_dir = out.join("truth");
    create_dir(&truth_dir)?;
    let mut truth = outcome.truth.clone();
    for (cp, tc) in truth.checkpoints.iter_mut().zip(&outcome.checkpoints) {
        let rel = format!("truth/heightfield_{:06}.csv", tc.scan_index);
        write(&out.join(&rel), &io::format_heightfield(&truth_heightfield(&tc.terrain, delta)))?;
        cp.heightfield = Some(rel);
    }
    writer.finish(Some(&truth))?;
    Ok(SimulateSummary {
        scans: scenario.n_scans,
        events: truth.events.len(),
        points,
        dust_points: outcome.stats.dust,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BenchSample {
    pub threads: usize,
    pub scans: u64,
    pub points: u64,
    pub wall: Duration,
    pub timings: PipelineTimings,
}

impl BenchSample {
    pub fn scans_per_sec(&self) -> f64 {
        rate(self.scans, self.wall)
    }

    /// Fraction of wall time covered by the five stage timings.
    pub fn stage_coverage(&self) -> f64 {
        let w = self.wall.as_secs_f64();
        if w <= 0.0 {
            0.0
        } else {
            self.timings.total().as_secs_f64() / w
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub single: BenchSample,
    pub parallel: BenchSample,
    pub warnings: Vec<String>,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, s) in [("single", &self.single), ("parallel", &self.parallel)] {
            let st = &s.timings.stages;
            let _ = writeln!(out, "{name}.threads = {}", s.threads);
            let _ = writeln!(out, "{name}.scans = {}", s.scans);
            let _ = writeln!(out, "{name}.points = {}", s.points);
            let _ = writeln!(out, "{name}.wall_s = {}", io::fmt_num(s.wall.as_secs_f64()));
            let _ = writeln!(out, "{name}.scans_per_sec = {}", io::fmt_num(s.scans_per_sec()));
            for (stage, d) in [
                ("transform", st.transform),
                ("voxelize", st.voxelize),
                ("raycast", st.raycast),
                ("reduce", st.reduce),
                ("update", s.timings.update),
            ] {
                let _ = writeln!(out, "{name}.{stage}_s = {}", io::fmt_num(d.as_secs_f64()));
            }
            let _ = writeln!(out, "{name}.stage_coverage = {}", io::fmt_num(s.stage_coverage()));
        }
        out
    }
}

/// Times the pipeline over at least `min_scans` scans, cycling through the
/// dataset, once on a single worker and once on the default pool.
pub fn bench_scans(cfg: &RunConfig, scans: &[(LabelledScan<f64>, SensorPose<f64>)], min_scans: u64) -> Result<BenchReport> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    if scans.is_empty() {
        warnings.push("dataset contains no scans; nothing to time".into());
        return Ok(BenchReport { single: BenchSample::default(), parallel: BenchSample::default(), warnings });
    }
    let parallel_threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let single = bench_once(cfg, scans, min_scans, 1)?;
    let parallel = bench_once(cfg, scans, min_scans, parallel_threads)?;
    if parallel_threads < 4 {
        warnings.push(format!("only {parallel_threads} hardware thread(s) available; parallel figures are not representative"));
    }
    Ok(BenchReport { single, parallel, warnings })
}

fn bench_once(
    cfg: &RunConfig,
    scans: &[(LabelledScan<f64>, SensorPose<f64>)],
    min_scans: u64,
    threads: usize,
) -> Result<BenchSample> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build thread pool: {e}")))?;
    let count = min_scans.max(scans.len() as u64);
    pool.install(|| {
        let mut map = GlobalMap::new(cfg.grid)?;
        let mut sample = BenchSample { threads, ..Default::default() };
        let mut inputs = Vec::with_capacity(count as usize);
        for i in 0..count {
            let (scan, pose) = &scans[(i % scans.len() as u64) as usize];
            inputs.push((scan.clone(), SensorPose { scan_index: i, ..*pose }));
        }
        let start = Instant::now();
        for (scan, pose) in inputs {
            sample.points += scan.len() as u64;
            let p = process_scan(scan, &pose, &cfg.grid, &cfg.exclusion_boxes)?;
            let t = Instant::now();
            map.apply_observations(&p.observations, pose.scan_index)?;
            sample.timings.update += t.elapsed();
            sample.timings.stages += p.timings;
        }
        sample.wall = start.elapsed();
        sample.scans = count;
        Ok(sample)
    })
}

/// Loads `cfg.dataset` into memory and benchmarks it; writes `bench.txt`
/// under `cfg.out` when one is given.
pub fn cmd_bench(cfg: &RunConfig, min_scans: u64) -> Result<BenchReport> {
    let dataset = require(&cfg.dataset, "dataset")?;
    let reader = io::load_dataset(dataset)?;
    let mut warnings = reader.warnings.clone();
    let scans = reader.collect::<Result<Vec<_>>>()?;
    let mut report = bench_scans(cfg, &scans, min_scans)?;
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    if let Some(out) = &cfg.out {
        create_dir(out)?;
        write(&out.join("bench.txt"), &report.to_text())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn runner_honours_stride_and_schedule() {
        let cfg = RunConfig { stride: 2, snapshot_every: 3, ..RunConfig::default() };
        let mut r = MapRunner::new(&cfg).unwrap();
        let mut snaps = Vec::new();
        for k in 0..7 {
            let scan = LabelledScan::terrain(vec![Vec3::new(0.0, 0.0, -8.0)], k as f64);
            let mut pose = SensorPose::identity(k);
            pose.translation = Vec3::new(0.1, 0.1, 10.0);
            if let Some(s) = r.push(scan, &pose).unwrap() {
                snaps.push(s.scan_index);
            }
        }
        assert_eq!((r.scans_read, r.scans_processed), (7, 4));
        assert_eq!(snaps, vec![3, 6]);
        assert_eq!(r.map().len(), 1);
    }

    #[test]
    fn bench_on_empty_dataset() {
        let rep = bench_scans(&RunConfig::default(), &[], 100).unwrap();
        assert_eq!(rep.single.scans, 0);
        assert_eq!(rep.single.scans_per_sec(), 0.0);
        assert_eq!(rep.parallel.stage_coverage(), 0.0);
        assert!(!rep.warnings.is_empty());
    }
}

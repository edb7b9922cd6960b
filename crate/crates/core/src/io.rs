//! File formats: dataset directories, map snapshots, volume exports and the
//! `key = value` configuration/scenario files.
//!
//! Every delimited file is comma separated, starts with a header row and
//! writes numbers with at most nine significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Quaternion, Vec3};
use crate::hmm_grid::GridConfig;
use crate::observation::{Label, LabelledScan, SensorPose};
use crate::sim::{
    elevation_fan, EventKind, EventShape, Rect, Scenario, TerrainEvent, TerrainSpec, TrajectorySpec, TruthLog,
    VirtualSensor,
};
use crate::terrain_map::{MapSnapshot, SnapshotCell};
use crate::volumetrics::{ChangeGrid, CellChange, VolumeReport};

pub const SNAPSHOT_HEADER: &str = "ix,iy,x_center,y_center,height,confidence";
pub const VOLUME_HEADER: &str = "scan_index,timestamp,net_m3,removed_m3,added_m3";
pub const CHANGE_HEADER: &str = "ix,iy,dh";
pub const SCAN_HEADER: &str = "x,y,z,label";
pub const POSE_HEADER: &str = "scan_index,timestamp,tx,ty,tz,qw,qx,qy,qz";
pub const SNAPSHOT_INDEX_HEADER: &str = "scan_index,timestamp,file";

/// Formats `v` with nine significant digits, no exponent for ordinary
/// magnitudes, trailing zeros trimmed.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..=15).contains(&exp) {
        return format!("{v:.8e}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let mut s = format!("{v:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::MalformedRow { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Data rows of a delimited file as `(line number, fields)`, after checking the header.
fn rows<'a>(path: &'a Path, text: &'a str, header: &str) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)> + 'a> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => return Err(malformed(path, 1, format!("expected header `{header}`, found `{h}`"))),
        None => return Err(malformed(path, 1, "missing header row")),
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect())))
}

fn field<T: FromStr>(path: &Path, line: usize, fields: &[&str], idx: usize, name: &str) -> Result<T> {
    let raw = fields.get(idx).ok_or_else(|| malformed(path, line, format!("missing field `{name}`")))?;
    raw.parse().map_err(|_| malformed(path, line, format!("field `{name}` is not valid: `{raw}`")))
}

fn expect_width(path: &Path, line: usize, fields: &[&str], width: usize) -> Result<()> {
    if fields.len() != width {
        return Err(malformed(path, line, format!("expected {width} fields, found {}", fields.len())));
    }
    Ok(())
}

// ---------------------------------------------------------------- snapshots

pub fn format_snapshot(s: &MapSnapshot<f64>, delta: f64) -> String {
    let mut out = String::with_capacity(48 * (s.cells.len() + 1));
    out.push_str(SNAPSHOT_HEADER);
    out.push('\n');
    for c in &s.cells {
        let xc = (c.ix as f64 + 0.5) * delta;
        let yc = (c.iy as f64 + 0.5) * delta;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.ix,
            c.iy,
            fmt_num(xc),
            fmt_num(yc),
            fmt_num(c.height),
            fmt_num(c.confidence)
        );
    }
    out
}

pub fn write_snapshot(path: &Path, s: &MapSnapshot<f64>, delta: f64) -> Result<()> {
    write_file(path, &format_snapshot(s, delta))
}

/// Reads a snapshot export. The scan index is not stored in the file and is
/// supplied by the caller.
pub fn read_snapshot(path: &Path, scan_index: u64) -> Result<MapSnapshot<f64>> {
    let text = read_to_string(path)?;
    let mut cells = Vec::new();
    for (line, f) in rows(path, &text, SNAPSHOT_HEADER)? {
        expect_width(path, line, &f, 6)?;
        cells.push(SnapshotCell {
            ix: field(path, line, &f, 0, "ix")?,
            iy: field(path, line, &f, 1, "iy")?,
            height: field(path, line, &f, 4, "height")?,
            confidence: field(path, line, &f, 5, "confidence")?,
        });
    }
    cells.sort_by_key(|c| c.key());
    Ok(MapSnapshot { scan_index, cells })
}

pub fn snapshot_file_name(scan_index: u64) -> String {
    format!("snapshot_{scan_index:06}.csv")
}

/// Scan index encoded in a `snapshot_NNNNNN.csv` file name.
pub fn snapshot_index_from_name(path: &Path) -> Option<u64> {
    path.file_stem()?.to_str()?.strip_prefix("snapshot_")?.parse().ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotIndexRow {
    pub scan_index: u64,
    pub timestamp: Option<f64>,
    pub file: String,
}

pub fn format_snapshot_index(rows_: &[SnapshotIndexRow]) -> String {
    let mut out = format!("{SNAPSHOT_INDEX_HEADER}\n");
    for r in rows_ {
        let ts = r.timestamp.map(fmt_num).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", r.scan_index, ts, r.file);
    }
    out
}

pub fn read_snapshot_index(path: &Path) -> Result<Vec<SnapshotIndexRow>> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (line, f) in rows(path, &text, SNAPSHOT_INDEX_HEADER)? {
        expect_width(path, line, &f, 3)?;
        let timestamp = if f[1].is_empty() { None } else { Some(field(path, line, &f, 1, "timestamp")?) };
        out.push(SnapshotIndexRow {
            scan_index: field(path, line, &f, 0, "scan_index")?,
            timestamp,
            file: f[2].to_string(),
        });
    }
    Ok(out)
}

// ------------------------------------------------------------ volume exports

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeRow {
    pub scan_index: u64,
    pub timestamp: Option<f64>,
    pub net_m3: f64,
    pub removed_m3: f64,
    pub added_m3: f64,
}

impl VolumeRow {
    pub fn from_report(r: &VolumeReport<f64>, timestamp: Option<f64>) -> Self {
        Self {
            scan_index: r.k2,
            timestamp,
            net_m3: r.net_change,
            removed_m3: r.removed_volume,
            added_m3: r.added_volume,
        }
    }
}

pub fn format_volume_timeseries(rows_: &[VolumeRow]) -> String {
    let mut out = format!("{VOLUME_HEADER}\n");
    for r in rows_ {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.scan_index,
            r.timestamp.map(fmt_num).unwrap_or_default(),
            fmt_num(r.net_m3),
            fmt_num(r.removed_m3),
            fmt_num(r.added_m3)
        );
    }
    out
}

pub fn read_volume_timeseries(path: &Path) -> Result<Vec<VolumeRow>> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (line, f) in rows(path, &text, VOLUME_HEADER)? {
        expect_width(path, line, &f, 5)?;
        let timestamp = if f[1].is_empty() { None } else { Some(field(path, line, &f, 1, "timestamp")?) };
        out.push(VolumeRow {
            scan_index: field(path, line, &f, 0, "scan_index")?,
            timestamp,
            net_m3: field(path, line, &f, 2, "net_m3")?,
            removed_m3: field(path, line, &f, 3, "removed_m3")?,
            added_m3: field(path, line, &f, 4, "added_m3")?,
        });
    }
    Ok(out)
}

pub fn format_change_grid(g: &ChangeGrid<f64>) -> String {
    let mut cells = g.cells.clone();
    cells.sort_by_key(|c| (c.ix, c.iy));
    let mut out = format!("{CHANGE_HEADER}\n");
    for c in &cells {
        let _ = writeln!(out, "{},{},{}", c.ix, c.iy, fmt_num(c.dh));
    }
    out
}

pub fn read_change_grid(path: &Path, k1: u64, k2: u64) -> Result<ChangeGrid<f64>> {
    let text = read_to_string(path)?;
    let mut cells = Vec::new();
    for (line, f) in rows(path, &text, CHANGE_HEADER)? {
        expect_width(path, line, &f, 3)?;
        cells.push(CellChange {
            ix: field(path, line, &f, 0, "ix")?,
            iy: field(path, line, &f, 1, "iy")?,
            dh: field(path, line, &f, 2, "dh")?,
        });
    }
    Ok(ChangeGrid { k1, k2, cells })
}

// ------------------------------------------------------------------ datasets

pub fn scan_file_name(scan_index: u64) -> String {
    format!("{scan_index:06}.csv")
}

pub fn format_scan(scan: &LabelledScan<f64>) -> String {
    let mut out = String::with_capacity(40 * (scan.len() + 1));
    out.push_str(SCAN_HEADER);
    out.push('\n');
    for (p, l) in scan.points.iter().zip(&scan.labels) {
        let _ = writeln!(out, "{},{},{},{}", fmt_num(p.x), fmt_num(p.y), fmt_num(p.z), l);
    }
    out
}

pub fn read_scan(path: &Path, timestamp: f64) -> Result<LabelledScan<f64>> {
    let text = read_to_string(path)?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (line, f) in rows(path, &text, SCAN_HEADER)? {
        expect_width(path, line, &f, 4)?;
        let p = Vec3::new(field(path, line, &f, 0, "x")?, field(path, line, &f, 1, "y")?, field(path, line, &f, 2, "z")?);
        if !p.is_finite() {
            return Err(malformed(path, line, "non-finite coordinate"));
        }
        points.push(p);
        labels.push(f[3].parse::<Label>().map_err(|m| malformed(path, line, m))?);
    }
    Ok(LabelledScan { points, labels, timestamp })
}

pub fn format_poses(poses: &[SensorPose<f64>]) -> String {
    let mut out = format!("{POSE_HEADER}\n");
    for p in poses {
        let (t, q) = (p.translation, p.rotation);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.scan_index,
            fmt_num(p.timestamp),
            fmt_num(t.x),
            fmt_num(t.y),
            fmt_num(t.z),
            fmt_num(q.w),
            fmt_num(q.x),
            fmt_num(q.y),
            fmt_num(q.z)
        );
    }
    out
}

pub fn read_poses(path: &Path) -> Result<Vec<SensorPose<f64>>> {
    let text = read_to_string(path).map_err(|_| Error::MissingPose(format!("cannot read {}", path.display())))?;
    let mut out = Vec::new();
    for (line, f) in rows(path, &text, POSE_HEADER)? {
        expect_width(path, line, &f, 9)?;
        let num = |i: usize, n: &str| field::<f64>(path, line, &f, i, n);
        out.push(SensorPose {
            scan_index: field(path, line, &f, 0, "scan_index")?,
            timestamp: num(1, "timestamp")?,
            translation: Vec3::new(num(2, "tx")?, num(3, "ty")?, num(4, "tz")?),
            rotation: Quaternion::new(num(5, "qw")?, num(6, "qx")?, num(7, "qy")?, num(8, "qz")?),
        });
    }
    Ok(out)
}

/// Writes a dataset directory incrementally.
#[derive(Debug)]
pub struct DatasetWriter {
    root: PathBuf,
    poses: Vec<SensorPose<f64>>,
}

impl DatasetWriter {
    pub fn create(root: &Path) -> Result<Self> {
        let scans = root.join("scans");
        fs::create_dir_all(&scans).map_err(|e| Error::io(&scans, e))?;
        Ok(Self { root: root.to_path_buf(), poses: Vec::new() })
    }

    pub fn write_scan(&mut self, scan_index: u64, scan: &LabelledScan<f64>, pose: &SensorPose<f64>) -> Result<()> {
        write_file(&self.root.join("scans").join(scan_file_name(scan_index)), &format_scan(scan))?;
        self.poses.push(SensorPose { scan_index, ..*pose });
        Ok(())
    }

    /// Writes `poses.csv` and `truth.json`.
    pub fn finish(self, truth: Option<&TruthLog>) -> Result<()> {
        write_file(&self.root.join("poses.csv"), &format_poses(&self.poses))?;
        if let Some(t) = truth {
            let mut json = serde_json::to_string_pretty(t)?;
            json.push('\n');
            write_file(&self.root.join("truth.json"), &json)?;
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

pub fn read_truth(root: &Path) -> Result<TruthLog> {
    let path = root.join("truth.json");
    Ok(serde_json::from_str(&read_to_string(&path)?)?)
}

/// Scans of a dataset directory in ascending index order, each paired with
/// its pose. Files are read lazily.
#[derive(Debug)]
pub struct DatasetReader {
    entries: Vec<(u64, PathBuf, SensorPose<f64>)>,
    next: usize,
    /// Non-fatal problems found while indexing (e.g. gaps in scan indices).
    pub warnings: Vec<String>,
}

impl DatasetReader {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scan_indices(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn timestamp_of(&self, scan_index: u64) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == scan_index).map(|e| e.2.timestamp)
    }
}

impl Iterator for DatasetReader {
    type Item = Result<(LabelledScan<f64>, SensorPose<f64>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let (_, path, pose) = self.entries.get(self.next)?;
        self.next += 1;
        Some(read_scan(path, pose.timestamp).map(|s| (s, *pose)))
    }
}

pub fn load_dataset(root: &Path) -> Result<DatasetReader> {
    let pose_path = root.join("poses.csv");
    if !pose_path.is_file() {
        return Err(Error::MissingPose(format!("{} not found", pose_path.display())));
    }
    let poses = read_poses(&pose_path)?;
    let scans_dir = root.join("scans");
    let mut files: Vec<(u64, PathBuf)> = Vec::new();
    if scans_dir.is_dir() {
        for entry in fs::read_dir(&scans_dir).map_err(|e| Error::io(&scans_dir, e))? {
            let path = entry.map_err(|e| Error::io(&scans_dir, e))?.path();
            let idx = path
                .extension()
                .filter(|e| *e == "csv")
                .and_then(|_| path.file_stem()?.to_str()?.parse::<u64>().ok());
            if let Some(idx) = idx {
                files.push((idx, path));
            }
        }
    }
    files.sort();

    let by_index: std::collections::HashMap<u64, SensorPose<f64>> = poses.iter().map(|p| (p.scan_index, *p)).collect();
    let mut warnings = Vec::new();
    let mut entries = Vec::with_capacity(files.len());
    let mut prev: Option<u64> = None;
    for (idx, path) in files {
        let pose = *by_index.get(&idx).ok_or_else(|| Error::MissingPose(format!("no pose for scan {idx}")))?;
        if let Some(p) = prev {
            if idx != p + 1 {
                warnings.push(format!("gap in scan indices between {p} and {idx}"));
            }
        }
        prev = Some(idx);
        entries.push((idx, path, pose));
    }
    Ok(DatasetReader { entries, next: 0, warnings })
}

/// Cell-averaged heightfield export (`ix,iy,height`).
pub fn format_heightfield(cells: &[(i64, i64, f64)]) -> String {
    let mut out = String::from("ix,iy,height\n");
    for &(ix, iy, h) in cells {
        let _ = writeln!(out, "{ix},{iy},{}", fmt_num(h));
    }
    out
}

pub fn read_heightfield(path: &Path) -> Result<Vec<(i64, i64, f64)>> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (line, f) in rows(path, &text, "ix,iy,height")? {
        expect_width(path, line, &f, 3)?;
        out.push((field(path, line, &f, 0, "ix")?, field(path, line, &f, 1, "iy")?, field(path, line, &f, 2, "height")?));
    }
    Ok(out)
}

// ------------------------------------------------------------ key = value

/// One `key = value` line; `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse_kv(text: &str) -> Result<Vec<KvEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::InvalidSpec {
            field: line.to_string(),
            msg: format!("line {}: expected `key = value`", i + 1),
        })?;
        out.push(KvEntry { key: k.trim().to_string(), value: v.trim().to_string(), line: i + 1 });
    }
    Ok(out)
}

fn kv_parse<T: FromStr>(e: &KvEntry) -> Result<T> {
    e.value.parse().map_err(|_| Error::InvalidSpec {
        field: e.key.clone(),
        msg: format!("line {}: cannot parse `{}`", e.line, e.value),
    })
}

fn kv_floats(e: &KvEntry, n: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = e
        .value
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::InvalidSpec { field: e.key.clone(), msg: format!("line {}: expected numbers", e.line) })?;
    if vals.len() != n {
        return Err(Error::InvalidSpec {
            field: e.key.clone(),
            msg: format!("line {}: expected {n} numbers, found {}", e.line, vals.len()),
        });
    }
    Ok(vals)
}

fn kv_bool(e: &KvEntry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidSpec { field: e.key.clone(), msg: format!("line {}: expected true/false", e.line) }),
    }
}

/// Settings for a mapping run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig<f64>,
    /// Process every `stride`-th scan.
    pub stride: u64,
    pub exclusion_boxes: Vec<Aabb<f64>>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub snapshot_every: u64,
    /// Receding window for change grids, in scans.
    pub window: u64,
    /// Baseline snapshot position for volume series; defaults to the first
    /// snapshot taken after initialisation.
    pub baseline: Option<usize>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            stride: 10,
            exclusion_boxes: Vec::new(),
            dataset: None,
            out: None,
            snapshot_every: 100,
            window: 1000,
            baseline: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.stride == 0 {
            return Err(Error::InvalidConfig("stride must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be at least 1".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::InvalidConfig("snapshot_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for e in parse_kv(text)? {
            match e.key.as_str() {
                "h_min" => cfg.grid.h_min = kv_parse(&e)?,
                "h_max" => cfg.grid.h_max = kv_parse(&e)?,
                "delta" => cfg.grid.delta = kv_parse(&e)?,
                "sigma" => cfg.grid.sigma = kv_parse(&e)?,
                "a_self" => cfg.grid.a_self = kv_parse(&e)?,
                "p_min" => cfg.grid.p_min = kv_parse(&e)?,
                "m_init" => cfg.grid.m_init = kv_parse(&e)?,
                "stride" => cfg.stride = kv_parse(&e)?,
                "snapshot_every" => cfg.snapshot_every = kv_parse(&e)?,
                "window" => cfg.window = kv_parse(&e)?,
                "baseline" => cfg.baseline = Some(kv_parse(&e)?),
                "seed" => cfg.seed = kv_parse(&e)?,
                "dataset" => cfg.dataset = Some(PathBuf::from(&e.value)),
                "out" => cfg.out = Some(PathBuf::from(&e.value)),
                "exclusion_box" => {
                    let v = kv_floats(&e, 6)?;
                    let b = Aabb::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])).map_err(|_| {
                        Error::InvalidSpec { field: e.key.clone(), msg: format!("line {}: min exceeds max", e.line) }
                    })?;
                    cfg.exclusion_boxes.push(b);
                }
                other => {
                    return Err(Error::InvalidSpec { field: other.into(), msg: format!("line {}: unknown key", e.line) })
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv_text(&read_to_string(path)?)
    }

    /// Canonical `key = value` rendering; parses back to an equal config.
    pub fn to_kv_text(&self) -> String {
        let g = &self.grid;
        let mut out = String::new();
        let _ = writeln!(out, "h_min = {}", fmt_num(g.h_min));
        let _ = writeln!(out, "h_max = {}", fmt_num(g.h_max));
        let _ = writeln!(out, "delta = {}", fmt_num(g.delta));
        let _ = writeln!(out, "sigma = {}", fmt_num(g.sigma));
        let _ = writeln!(out, "a_self = {}", fmt_num(g.a_self));
        let _ = writeln!(out, "p_min = {}", fmt_num(g.p_min));
        let _ = writeln!(out, "m_init = {}", g.m_init);
        let _ = writeln!(out, "stride = {}", self.stride);
        let _ = writeln!(out, "snapshot_every = {}", self.snapshot_every);
        let _ = writeln!(out, "window = {}", self.window);
        let _ = writeln!(out, "seed = {}", self.seed);
        if let Some(b) = self.baseline {
            let _ = writeln!(out, "baseline = {b}");
        }
        if let Some(d) = &self.dataset {
            let _ = writeln!(out, "dataset = {}", d.display());
        }
        if let Some(o) = &self.out {
            let _ = writeln!(out, "out = {}", o.display());
        }
        for b in &self.exclusion_boxes {
            let _ = writeln!(
                out,
                "exclusion_box = {} {} {} {} {} {}",
                fmt_num(b.min.x),
                fmt_num(b.min.y),
                fmt_num(b.min.z),
                fmt_num(b.max.x),
                fmt_num(b.max.y),
                fmt_num(b.max.z)
            );
        }
        out
    }
}

/// Parses a scenario file. Unknown keys and malformed values are rejected
/// with the offending key named.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let entries = parse_kv(text)?;
    let mut name = String::from("scenario");
    let mut terrain_kind = String::from("flat");
    let (mut base, mut floor, mut crest, mut slope, mut toe) = (5.0, 0.0, 15.0, 70.0, 10.0);
    let (mut amplitude, mut wavelength) = (1.0, 8.0);
    let (mut ex, mut ey) = (40.0, 40.0);
    let mut delta = 0.25;
    let mut terrain_resolution: Option<f64> = None;
    let (mut h_min, mut h_max) = (0.0, 20.0);
    let mut n_scans = 100u64;
    let mut seed = 0u64;
    let mut rate_hz = 10.0;
    let mut azimuth_count = 360usize;
    let mut azimuth_fov_deg: f64 = 360.0;
    let (mut el_min, mut el_max, mut el_count) = (-75.0, -15.0, 32usize);
    let mut range_noise_sigma = 0.0;
    let mut dust_rate = 0.0;
    let mut max_range = 60.0;
    let mut pattern_jitter = true;
    let mut positions = Vec::new();
    let mut dwell = 1u64;
    let mut swing_amplitude_deg = 0.0;
    let mut swing_period = 0u64;
    let mut events = Vec::new();

    for e in &entries {
        match e.key.as_str() {
            "name" => name = e.value.clone(),
            "terrain" => terrain_kind = e.value.clone(),
            "base_height" => base = kv_parse(e)?,
            "floor" => floor = kv_parse(e)?,
            "crest" => crest = kv_parse(e)?,
            "slope_deg" => slope = kv_parse(e)?,
            "toe_x" => toe = kv_parse(e)?,
            "amplitude" => amplitude = kv_parse(e)?,
            "wavelength" => wavelength = kv_parse(e)?,
            "extent_x" => ex = kv_parse(e)?,
            "extent_y" => ey = kv_parse(e)?,
            "delta" => delta = kv_parse(e)?,
            "terrain_resolution" => terrain_resolution = Some(kv_parse(e)?),
            "h_min" => h_min = kv_parse(e)?,
            "h_max" => h_max = kv_parse(e)?,
            "n_scans" => n_scans = kv_parse(e)?,
            "seed" => seed = kv_parse(e)?,
            "rate_hz" => rate_hz = kv_parse(e)?,
            "azimuth_count" => azimuth_count = kv_parse(e)?,
            "azimuth_fov_deg" => azimuth_fov_deg = kv_parse(e)?,
            "elevation_min_deg" => el_min = kv_parse(e)?,
            "elevation_max_deg" => el_max = kv_parse(e)?,
            "elevation_count" => el_count = kv_parse(e)?,
            "range_noise_sigma" => range_noise_sigma = kv_parse(e)?,
            "dust_rate" => dust_rate = kv_parse(e)?,
            "max_range" => max_range = kv_parse(e)?,
            "pattern_jitter" => pattern_jitter = kv_bool(e)?,
            "position" => {
                let v = kv_floats(e, 3)?;
                positions.push(Vec3::new(v[0], v[1], v[2]));
            }
            "dwell" => dwell = kv_parse(e)?,
            "swing_amplitude_deg" => swing_amplitude_deg = kv_parse(e)?,
            "swing_period" => swing_period = kv_parse(e)?,
            "event" => events.push(parse_event(e)?),
            other => {
                return Err(Error::InvalidSpec { field: other.into(), msg: format!("line {}: unknown key", e.line) })
            }
        }
    }

    let terrain = match terrain_kind.as_str() {
        "flat" => TerrainSpec::Flat { height: base },
        "bench-face" => TerrainSpec::BenchFace { floor, crest, slope_deg: slope, toe_x: toe },
        "rough" => TerrainSpec::Rough { base, amplitude, wavelength },
        other => {
            return Err(Error::InvalidSpec {
                field: "terrain".into(),
                msg: format!("unknown terrain `{other}` (flat, bench-face, rough)"),
            })
        }
    };
    if el_count == 0 {
        return Err(Error::InvalidSpec { field: "elevation_count".into(), msg: "must be at least 1".into() });
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidSpec { field: "delta".into(), msg: "must be positive".into() });
    }
    let scenario = Scenario {
        name,
        terrain,
        extent: (ex, ey),
        terrain_resolution: terrain_resolution.unwrap_or(delta / 4.0),
        h_min,
        h_max,
        n_scans,
        sensor: VirtualSensor {
            trajectory: TrajectorySpec { positions, dwell, swing_amplitude_deg, swing_period, rate_hz },
            azimuth_count,
            azimuth_fov: azimuth_fov_deg.to_radians(),
            elevation_angles: elevation_fan(el_min, el_max, el_count),
            range_noise_sigma,
            dust_rate,
            max_range,
            pattern_jitter,
        },
        events,
        seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn parse_event(e: &KvEntry) -> Result<TerrainEvent> {
    let parts: Vec<&str> = e.value.split_whitespace().collect();
    let bad = |msg: &str| Error::InvalidSpec { field: "event".into(), msg: format!("line {}: {msg}", e.line) };
    if parts.len() != 7 && parts.len() != 8 {
        return Err(bad("expected `at_scan kind x0 y0 x1 y1 dh [flat|ramp]`"));
    }
    let at_scan = parts[0].parse().map_err(|_| bad("at_scan is not an integer"))?;
    let kind = match parts[1] {
        "excavate" => EventKind::Excavate,
        "spill" => EventKind::Spill,
        _ => return Err(bad("kind must be excavate or spill")),
    };
    let nums: Vec<f64> = parts[2..7]
        .iter()
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad("footprint and dh must be numbers"))?;
    let shape = match parts.get(7).copied().unwrap_or("flat") {
        "flat" => EventShape::Flat,
        "ramp" => EventShape::Ramp,
        _ => return Err(bad("shape must be flat or ramp")),
    };
    Ok(TerrainEvent {
        at_scan,
        kind,
        footprint: Rect { x0: nums[0], y0: nums[1], x1: nums[2], y1: nums[3] },
        dh: nums[4],
        shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(5.0), "5");
        assert_eq!(fmt_num(0.0625), "0.0625");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_num(-123.456789012), "-123.456789");
        assert_eq!(fmt_num(0.000125), "0.000125");
        assert_eq!(fmt_num(1e-9), "1.00000000e-9");
        assert_eq!(fmt_num(1e-9).parse::<f64>().unwrap(), 1e-9);
    }

    #[test]
    fn kv_config_round_trip() {
        let text = "# run\nh_max = 30\nstride = 5\nexclusion_box = 0 0 0 1 1 1\nwindow=50\n";
        let cfg = RunConfig::from_kv_text(text).unwrap();
        assert_eq!(cfg.grid.h_max, 30.0);
        assert_eq!(cfg.stride, 5);
        assert_eq!(cfg.window, 50);
        assert_eq!(cfg.exclusion_boxes.len(), 1);
        assert_eq!(RunConfig::from_kv_text(&cfg.to_kv_text()).unwrap(), cfg);
    }

    #[test]
    fn kv_errors_name_the_field() {
        match RunConfig::from_kv_text("stride = many") {
            Err(Error::InvalidSpec { field, .. }) => assert_eq!(field, "stride"),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_kv_text("colour = red") {
            Err(Error::InvalidSpec { field, .. }) => assert_eq!(field, "colour"),
            other => panic!("{other:?}"),
        }
        assert!(parse_kv("no equals sign").is_err());
    }

    #[test]
    fn scenario_parsing() {
        let text = "name = t\nposition = 10 10 12\nn_scans = 3\nevent = 1 excavate 2 2 4 4 -1\nevent = 2 spill 5 5 6 6 0.5 ramp\n";
        let sc = parse_scenario(text).unwrap();
        assert_eq!(sc.events.len(), 2);
        assert_eq!(sc.events[1].shape, EventShape::Ramp);
        assert_eq!(sc.terrain_resolution, 0.0625);

        let bad = "position = 10 10 12\nevent = 1 excavate 38 0 42 4 -1\n";
        match parse_scenario(bad) {
            Err(Error::InvalidSpec { field, .. }) => assert_eq!(field, "event.footprint"),
            other => panic!("{other:?}"),
        }
        match parse_scenario("position = 10 10 12\ndust_rate = 1.5\n") {
            Err(Error::InvalidSpec { field, .. }) => assert_eq!(field, "dust_rate"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_scan_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("000000.csv");
        fs::write(&path, "x,y,z,label\n1,2,3,terrain\n1,abc,3,terrain\n").unwrap();
        match read_scan(&path, 0.0) {
            Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_poses_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingPose(_))));
    }
}

use std::fs;
use std::path::Path;

use proptest::prelude::*;
use terramap::io::{self, DatasetWriter, RunConfig, SnapshotIndexRow, VolumeRow};
use terramap::sim::{self, run_scenario};
use terramap::volumetrics::{CellChange, ChangeGrid};
use terramap::*;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-8 * a.abs().max(b.abs()) || a == b
}

fn small_scenario() -> sim::Scenario {
    let mut sc = sim::staircase_scenario(0.1, 11);
    sc.n_scans = 6;
    sc.sensor.azimuth_count = 48;
    sc.sensor.elevation_angles = sim::elevation_fan(-60.0, -20.0, 6);
    sc.sensor.range_noise_sigma = 0.02;
    sc.events.truncate(1);
    sc.events[0].at_scan = 3;
    sc
}

#[test]
fn simulated_dataset_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = run_scenario(&small_scenario()).unwrap();
    let mut w = DatasetWriter::create(dir.path()).unwrap();
    for (k, (s, p)) in data.scans.iter().zip(&data.poses).enumerate() {
        w.write_scan(k as u64, s, p).unwrap();
    }
    w.finish(Some(&data.outcome.truth)).unwrap();

    let reader = io::load_dataset(dir.path()).unwrap();
    assert!(reader.warnings.is_empty());
    assert_eq!(reader.scan_indices(), (0..6).collect::<Vec<_>>());
    let loaded: Vec<_> = reader.map(|r| r.unwrap()).collect();
    for ((s, p), (s0, p0)) in loaded.iter().zip(data.scans.iter().zip(&data.poses)) {
        assert_eq!(p.scan_index, p0.scan_index);
        assert!(close(p.timestamp, p0.timestamp));
        assert!(close(p.rotation.w, p0.rotation.w) && close(p.rotation.z, p0.rotation.z));
        assert!(close(p.translation.x, p0.translation.x) && close(p.translation.z, p0.translation.z));
        assert_eq!(s.labels, s0.labels);
        assert_eq!(s.points.len(), s0.points.len());
        for (a, b) in s.points.iter().zip(&s0.points) {
            assert!(close(a.x, b.x) && close(a.y, b.y) && close(a.z, b.z), "{a:?} vs {b:?}");
        }
    }
    assert_eq!(io::read_truth(dir.path()).unwrap(), data.outcome.truth);
}

#[test]
fn scan_gaps_warn_and_missing_pose_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = run_scenario(&small_scenario()).unwrap();
    let mut w = DatasetWriter::create(dir.path()).unwrap();
    for k in [0usize, 1, 4] {
        w.write_scan(k as u64, &data.scans[k], &data.poses[k]).unwrap();
    }
    w.finish(None).unwrap();
    let reader = io::load_dataset(dir.path()).unwrap();
    assert_eq!(reader.scan_indices(), vec![0, 1, 4]);
    assert_eq!(reader.warnings.len(), 1);

    fs::write(dir.path().join("scans").join(io::scan_file_name(9)), "x,y,z,label\n").unwrap();
    assert!(matches!(io::load_dataset(dir.path()), Err(Error::MissingPose(_))));
}

#[test]
fn malformed_pose_row_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("scans")).unwrap();
    fs::write(
        dir.path().join("poses.csv"),
        format!("{}\n0,0,0,0,0,1,0,0,0\n1,0.1,0,0,0,1,0,zero,0\n", io::POSE_HEADER),
    )
    .unwrap();
    match io::load_dataset(dir.path()) {
        Err(Error::MalformedRow { path, line, .. }) => {
            assert_eq!(line, 3);
            assert!(path.ends_with("poses.csv"));
        }
        other => panic!("{other:?}"),
    }
}

fn write_read<T>(dir: &Path, name: &str, text: String, read: impl Fn(&Path) -> T) -> T {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    read(&p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn number_format_round_trips(v in prop::num::f64::NORMAL) {
        let s = io::fmt_num(v);
        let back: f64 = s.parse().unwrap();
        prop_assert!(close(back, v), "{v} -> {s}");
        prop_assert!(!s.contains(' '));
    }

    #[test]
    fn snapshot_export_round_trips(cells in prop::collection::btree_map((-50i64..50, -50i64..50), (0usize..81, 0.0f64..1.0), 0..40)) {
        let dir = tempfile::tempdir().unwrap();
        let snap = MapSnapshot {
            scan_index: 70,
            cells: cells
                .iter()
                .map(|(&(ix, iy), &(l, c))| SnapshotCell { ix, iy, height: l as f64 * 0.25, confidence: c })
                .collect(),
        };
        let back = write_read(dir.path(), "s.csv", io::format_snapshot(&snap, 0.25), |p| io::read_snapshot(p, 70).unwrap());
        prop_assert_eq!(back.cells.len(), snap.cells.len());
        for (a, b) in back.cells.iter().zip(&snap.cells) {
            prop_assert_eq!((a.ix, a.iy, a.height), (b.ix, b.iy, b.height));
            prop_assert!(close(a.confidence, b.confidence));
        }
    }

    #[test]
    fn volume_and_change_exports_round_trip(
        rows in prop::collection::vec((0u64..10_000, prop::option::of(0.0f64..1e4), -1e3f64..1e3, 0.0f64..1e3), 0..20),
        grid in prop::collection::btree_map((-20i64..20, -20i64..20), -5.0f64..5.0, 0..30),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<VolumeRow> = rows
            .into_iter()
            .map(|(k, ts, net, added)| VolumeRow { scan_index: k, timestamp: ts, net_m3: net, removed_m3: net + added, added_m3: added })
            .collect();
        let back = write_read(dir.path(), "v.csv", io::format_volume_timeseries(&rows), |p| io::read_volume_timeseries(p).unwrap());
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            prop_assert_eq!(a.scan_index, b.scan_index);
            prop_assert_eq!(a.timestamp.is_some(), b.timestamp.is_some());
            prop_assert!(close(a.net_m3, b.net_m3) && close(a.removed_m3, b.removed_m3) && close(a.added_m3, b.added_m3));
        }

        let g = ChangeGrid { k1: 3, k2: 9, cells: grid.iter().map(|(&(ix, iy), &dh)| CellChange { ix, iy, dh }).collect() };
        let back = write_read(dir.path(), "g.csv", io::format_change_grid(&g), |p| io::read_change_grid(p, 3, 9).unwrap());
        prop_assert_eq!(back.cells.len(), g.cells.len());
        for (a, b) in back.cells.iter().zip(&g.cells) {
            prop_assert_eq!((a.ix, a.iy), (b.ix, b.iy));
            prop_assert!(close(a.dh, b.dh));
        }
    }
}

#[test]
fn index_heightfield_and_config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        SnapshotIndexRow { scan_index: 10, timestamp: Some(0.9), file: "snapshot_000010.csv".into() },
        SnapshotIndexRow { scan_index: 20, timestamp: None, file: "snapshot_000020.csv".into() },
    ];
    let back = write_read(dir.path(), "i.csv", io::format_snapshot_index(&rows), |p| io::read_snapshot_index(p).unwrap());
    assert_eq!(back, rows);

    let hf = vec![(0, 0, 5.05), (0, 1, 4.05), (3, 2, 0.125)];
    let back = write_read(dir.path(), "h.csv", io::format_heightfield(&hf), |p| io::read_heightfield(p).unwrap());
    assert_eq!(back, hf);

    let mut cfg = RunConfig::default();
    cfg.grid.p_min = 0.75;
    cfg.baseline = Some(2);
    cfg.dataset = Some("data/run1".into());
    cfg.exclusion_boxes.push(Aabb::new(Vec3::new(-1.0, -2.0, 0.0), Vec3::new(1.5, 2.0, 4.0)).unwrap());
    let back = write_read(dir.path(), "c.cfg", cfg.to_kv_text(), |p| RunConfig::load(p).unwrap());
    assert_eq!(back, cfg);
}

#[test]
fn exports_carry_headers() {
    let snap = MapSnapshot::<f64> { scan_index: 0, cells: vec![] };
    assert_eq!(io::format_snapshot(&snap, 0.25), format!("{}\n", io::SNAPSHOT_HEADER));
    assert_eq!(io::format_volume_timeseries(&[]), format!("{}\n", io::VOLUME_HEADER));
    let g = ChangeGrid::<f64> { k1: 0, k2: 1, cells: vec![] };
    assert_eq!(io::format_change_grid(&g), format!("{}\n", io::CHANGE_HEADER));
    assert_eq!(io::format_poses(&[]), format!("{}\n", io::POSE_HEADER));
}

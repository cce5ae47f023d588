//! Container round trips and sidecar validation.

use std::fs;
use std::path::Path;

use t1reg::io::{
    load_defs, load_mask, load_maps, load_series, pgm_bytes, save_defs, save_maps, save_mask, save_series, write_f32,
    IoError, MapSidecar, MapsManifest,
};
use t1reg_core::{DeformationSet, ImageSeries, Mask, ParameterMaps};

fn sidecar(dir: &Path, name: &str, w: usize, h: usize, times: &[f64], payload: &[f64]) -> std::path::PathBuf {
    let data_file = format!("{name}.f32");
    write_f32(&dir.join(&data_file), payload).unwrap();
    let json = serde_json::json!({
        "width": w,
        "height": h,
        "count": times.len(),
        "dtype": "f32le",
        "inversion_times_ms": times,
        "data_file": data_file,
    });
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, json.to_string()).unwrap();
    path
}

#[test]
fn smallest_container_loads() {
    let dir = tempfile::tempdir().unwrap();
    let payload: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect();
    let path = sidecar(dir.path(), "s", 2, 2, &[100.0, 200.0, 300.0], &payload);
    let s = load_series(&path).unwrap();
    assert_eq!((s.width(), s.height(), s.len()), (2, 2, 3));
    assert_eq!(s.times_ms(), &[100.0, 200.0, 300.0]);
    assert_eq!(s.data(), payload.as_slice());
}

#[test]
fn unsorted_times_are_sorted_with_their_images() {
    let dir = tempfile::tempdir().unwrap();
    let payload = [vec![2.0; 4], vec![1.0; 4], vec![3.0; 4]].concat();
    let path = sidecar(dir.path(), "s", 2, 2, &[200.0, 100.0, 300.0], &payload);
    let s = load_series(&path).unwrap();
    assert_eq!(s.times_ms(), &[100.0, 200.0, 300.0]);
    assert_eq!(s.image(0), &[1.0; 4]);
    assert_eq!(s.image(1), &[2.0; 4]);
    assert_eq!(s.permutation(), &[1, 0, 2]);
}

#[test]
fn full_sized_container_loads() {
    let dir = tempfile::tempdir().unwrap();
    let times: Vec<f64> = (0..11).map(|i| 100.0 + 300.0 * i as f64).collect();
    let payload = vec![1.0; 11 * 128 * 128];
    let s = load_series(&sidecar(dir.path(), "s", 128, 128, &times, &payload)).unwrap();
    assert_eq!((s.len(), s.width(), s.height()), (11, 128, 128));
}

#[test]
fn malformed_containers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(matches!(load_series(&d.join("missing.json")), Err(IoError::Io { .. })));

    // payload one image short
    let path = sidecar(d, "short", 2, 2, &[100.0, 200.0, 300.0], &[1.0; 8]);
    assert!(matches!(load_series(&path), Err(IoError::Format { .. })));

    let path = sidecar(d, "dup", 2, 2, &[100.0, 100.0, 300.0], &[1.0; 12]);
    assert!(matches!(load_series(&path), Err(IoError::Core(_))));

    let path = sidecar(d, "two", 2, 2, &[100.0, 200.0], &[1.0; 8]);
    assert!(matches!(load_series(&path), Err(IoError::Core(_))));

    let mut payload = vec![1.0; 12];
    payload[5] = f64::NAN;
    let path = sidecar(d, "nan", 2, 2, &[100.0, 200.0, 300.0], &payload);
    assert!(matches!(load_series(&path), Err(IoError::Core(_))));

    let bad = d.join("bad.json");
    fs::write(&bad, r#"{"width": 2, "height": "two"}"#).unwrap();
    match load_series(&bad) {
        Err(IoError::Json { at, .. }) => assert_eq!(at, "height"),
        other => panic!("{other:?}"),
    }
    fs::write(&bad, r#"{"width": 2, "height": 2, "count": 3, "dtype": "f32le", "inversion_times_ms": [1, 2, 3], "data_file": "x", "extra": 1}"#).unwrap();
    assert!(matches!(load_series(&bad), Err(IoError::Json { .. })));
}

#[test]
fn series_defs_and_masks_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // values already representable in f32 survive exactly
    let data: Vec<f64> = (0..3 * 4 * 5).map(|v| (v as f32 * 1.37 + 0.1) as f64).collect();
    let series = ImageSeries::new(4, 5, vec![300.0, 100.0, 200.0], data).unwrap();
    save_series(&series, &d.join("series.json")).unwrap();
    let back = load_series(&d.join("series.json")).unwrap();
    assert_eq!(back.times_ms(), series.times_ms());
    assert_eq!(back.data(), series.data());
    save_series(&back, &d.join("again.json")).unwrap();
    assert_eq!(fs::read(d.join("series.f32")).unwrap(), fs::read(d.join("again.f32")).unwrap());

    let field: Vec<f64> = (0..2 * 3 * 20).map(|v| (v as f32 * -0.21) as f64).collect();
    let defs = DeformationSet::from_vec(3, 4, 5, field).unwrap();
    save_defs(&defs, &d.join("defs.json")).unwrap();
    assert_eq!(load_defs(&d.join("defs.json")).unwrap(), defs);

    let mask = Mask::new(4, 5, "myocardium", (0..20).map(|q| q % 3 == 0).collect()).unwrap();
    save_mask(&mask, &d.join("mask.json")).unwrap();
    assert_eq!(load_mask(&d.join("mask.json")).unwrap(), mask);
}

fn small_maps() -> ParameterMaps {
    let mut maps = ParameterMaps::unfitted(2, 2);
    for q in 0..4 {
        maps.c[q] = 100.0 + q as f64;
        maps.k[q] = 1.5 + 0.125 * q as f64;
        maps.t1star[q] = 800.0 + 16.0 * q as f64;
        maps.t1[q] = (maps.k[q] - 1.0) * maps.t1star[q];
        maps.sd_t1[q] = 2.5 * q as f64;
        maps.converged[q] = true;
        maps.fitted[q] = true;
        maps.polarity[q] = q as u8;
    }
    maps
}

#[test]
fn maps_write_five_payloads_with_previews() {
    let dir = tempfile::tempdir().unwrap();
    let maps = small_maps();
    save_maps(&maps, dir.path()).unwrap();
    for name in ["c", "k", "t1star", "t1", "sd_t1"] {
        for ext in ["f32", "json", "pgm"] {
            assert!(dir.path().join(format!("{name}.{ext}")).is_file(), "{name}.{ext}");
        }
        let pgm = fs::read(dir.path().join(format!("{name}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n2 2\n255\n"));
    }
    assert_eq!(load_maps(dir.path()).unwrap(), maps);
    let manifest: MapsManifest = serde_json::from_slice(&fs::read(dir.path().join("maps.json")).unwrap()).unwrap();
    assert_eq!(manifest.converged_percent, 100.0);
}

#[test]
fn unconverged_maps_preview_as_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let maps = ParameterMaps::unfitted(3, 2);
    save_maps(&maps, dir.path()).unwrap();
    let pgm = fs::read(dir.path().join("t1.pgm")).unwrap();
    let header = b"P5\n3 2\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert!(pgm[header.len()..].iter().all(|&b| b == 0));
    let side: MapSidecar = serde_json::from_slice(&fs::read(dir.path().join("t1.json")).unwrap()).unwrap();
    assert_eq!(side.converged_percent, 0.0);
    let back = load_maps(dir.path()).unwrap();
    assert!(back.t1.iter().all(|v| *v == -1.0));
    assert!(back.sd_t1.iter().all(|v| *v == -1.0));
}

#[test]
fn preview_windows_over_included_pixels() {
    let bytes = pgm_bytes(3, 1, &[10.0, 20.0, 1000.0], &[true, true, false]);
    assert_eq!(&bytes[bytes.len() - 3..], &[0, 255, 0]);
    let flat = pgm_bytes(2, 1, &[5.0, 5.0], &[true, true]);
    assert_eq!(&flat[flat.len() - 2..], &[0, 0]);
}

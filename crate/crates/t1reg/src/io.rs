//! On-disk containers: raw little-endian `f32` payloads described by JSON
//! sidecars, plus 8-bit PGM previews.
//!
//! Values are held as `f64` in memory and stored as `f32`, so saving and
//! re-loading reproduces anything that was itself loaded from disk
//! bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use t1reg_core::{DeformationSet, ImageSeries, Mask, ParameterMaps};

pub const DTYPE_F32: &str = "f32le";
pub const DTYPE_U8: &str = "u8";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed or schema-violating JSON; `at` is the offending JSON path.
    #[error("{path}: invalid JSON at `{at}`: {message}")]
    Json { path: PathBuf, at: String, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] t1reg_core::Error),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Parses JSON text, reporting schema violations with their JSON path.
pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> IoResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        at: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> IoResult<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_json(&text, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> IoResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_f32(path: &Path, values: &[f64]) -> IoResult<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    write_bytes(path, &bytes)
}

pub fn read_f32(path: &Path, expected: usize) -> IoResult<Vec<f64>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != expected * 4 {
        return Err(format_err(
            path,
            format!("payload has {} bytes, sidecar implies {}", bytes.len(), expected * 4),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn sibling(sidecar: &Path, file: &str) -> PathBuf {
    sidecar.parent().unwrap_or_else(|| Path::new("")).join(file)
}

fn data_name(sidecar: &Path, ext: &str) -> String {
    let stem = sidecar.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    format!("{stem}.{ext}")
}

fn check_dtype(path: &Path, dtype: &str, want: &str) -> IoResult<()> {
    if dtype != want {
        return Err(format_err(path, format!("dtype must be \"{want}\", got \"{dtype}\"")));
    }
    Ok(())
}

/// Series sidecar. Keys are fixed: `width`, `height`, `count`, `dtype`,
/// `inversion_times_ms`, `data_file`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSidecar {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub dtype: String,
    pub inversion_times_ms: Vec<f64>,
    /// Relative to the sidecar's directory.
    pub data_file: String,
}

/// Loads a series; images are re-sorted by inversion time.
pub fn load_series(path: &Path) -> IoResult<ImageSeries> {
    let meta: SeriesSidecar = read_json(path)?;
    check_dtype(path, &meta.dtype, DTYPE_F32)?;
    if meta.inversion_times_ms.len() != meta.count {
        return Err(format_err(
            path,
            format!("{} inversion times for count {}", meta.inversion_times_ms.len(), meta.count),
        ));
    }
    let data = read_f32(&sibling(path, &meta.data_file), meta.count * meta.width * meta.height)?;
    Ok(ImageSeries::new(meta.width, meta.height, meta.inversion_times_ms, data)?)
}

/// Writes `path` (the sidecar) and `<stem>.f32` next to it, in sorted order.
pub fn save_series(series: &ImageSeries, path: &Path) -> IoResult<()> {
    let data_file = data_name(path, "f32");
    write_f32(&sibling(path, &data_file), series.data())?;
    write_json(
        path,
        &SeriesSidecar {
            width: series.width(),
            height: series.height(),
            count: series.len(),
            dtype: DTYPE_F32.into(),
            inversion_times_ms: series.times_ms().to_vec(),
            data_file,
        },
    )
}

/// Deformation sidecar; the payload interleaves `(dx, dy)` per pixel,
/// image-major then row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefsSidecar {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub dtype: String,
    pub layout: String,
    pub data_file: String,
}

const DEFS_LAYOUT: &str = "interleaved-dx-dy";

pub fn save_defs(defs: &DeformationSet, path: &Path) -> IoResult<()> {
    let data_file = data_name(path, "f32");
    write_f32(&sibling(path, &data_file), defs.data())?;
    write_json(
        path,
        &DefsSidecar {
            width: defs.width(),
            height: defs.height(),
            count: defs.len(),
            dtype: DTYPE_F32.into(),
            layout: DEFS_LAYOUT.into(),
            data_file,
        },
    )
}

pub fn load_defs(path: &Path) -> IoResult<DeformationSet> {
    let meta: DefsSidecar = read_json(path)?;
    check_dtype(path, &meta.dtype, DTYPE_F32)?;
    if meta.layout != DEFS_LAYOUT {
        return Err(format_err(path, format!("unsupported layout \"{}\"", meta.layout)));
    }
    let data = read_f32(&sibling(path, &meta.data_file), 2 * meta.count * meta.width * meta.height)?;
    Ok(DeformationSet::from_vec(meta.count, meta.width, meta.height, data)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSidecar {
    pub width: usize,
    pub height: usize,
    pub role: String,
    pub dtype: String,
    pub data_file: String,
}

pub fn save_mask(mask: &Mask, path: &Path) -> IoResult<()> {
    let data_file = data_name(path, "u8");
    let bytes: Vec<u8> = mask.data.iter().map(|&b| b as u8).collect();
    write_bytes(&sibling(path, &data_file), &bytes)?;
    write_json(
        path,
        &MaskSidecar {
            width: mask.width,
            height: mask.height,
            role: mask.role.clone(),
            dtype: DTYPE_U8.into(),
            data_file,
        },
    )
}

pub fn load_mask(path: &Path) -> IoResult<Mask> {
    let meta: MaskSidecar = read_json(path)?;
    check_dtype(path, &meta.dtype, DTYPE_U8)?;
    let file = sibling(path, &meta.data_file);
    let bytes = fs::read(&file).map_err(io_err(&file))?;
    if bytes.len() != meta.width * meta.height {
        return Err(format_err(&file, "mask payload size differs from sidecar"));
    }
    Ok(Mask::new(meta.width, meta.height, meta.role, bytes.iter().map(|&b| b != 0).collect())?)
}

/// Encodes a P5 PGM (maxval 255) with min–max windowing over the pixels
/// where `include` is set; excluded pixels are black. With nothing to
/// window the image is all zeros.
pub fn pgm_bytes(width: usize, height: usize, values: &[f64], include: &[bool]) -> Vec<u8> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (v, _) in values.iter().zip(include).filter(|(v, m)| **m && v.is_finite()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().zip(include).map(|(v, m)| {
        if !*m || !v.is_finite() || !(hi > lo) {
            0
        } else {
            (((v - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as u8
        }
    }));
    out
}

/// Per-map sidecar written by [`save_maps`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSidecar {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub dtype: String,
    pub unit: String,
    pub data_file: String,
    pub preview_file: String,
    /// Fraction of pixels whose fit converged, in percent.
    pub converged_percent: f64,
}

/// Directory manifest written by [`save_maps`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapsManifest {
    pub width: usize,
    pub height: usize,
    pub maps: Vec<String>,
    pub converged_file: String,
    pub fitted_file: String,
    pub polarity_file: String,
    pub converged_percent: f64,
}

const MAP_NAMES: [(&str, &str); 5] = [("c", "a.u."), ("k", "1"), ("t1star", "ms"), ("t1", "ms"), ("sd_t1", "ms")];

fn map_values<'a>(maps: &'a ParameterMaps, name: &str) -> &'a [f64] {
    match name {
        "c" => &maps.c,
        "k" => &maps.k,
        "t1star" => &maps.t1star,
        "t1" => &maps.t1,
        _ => &maps.sd_t1,
    }
}

/// Writes the five maps into `dir`: raw `f32`, a sidecar and a PGM preview
/// each, plus `maps.json` and the per-pixel status bytes.
pub fn save_maps(maps: &ParameterMaps, dir: &Path) -> IoResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let percent = 100.0 * maps.converged_fraction();
    for (name, unit) in MAP_NAMES {
        let values = map_values(maps, name);
        let data_file = format!("{name}.f32");
        let preview_file = format!("{name}.pgm");
        write_f32(&dir.join(&data_file), values)?;
        write_bytes(&dir.join(&preview_file), &pgm_bytes(maps.width, maps.height, values, &maps.converged))?;
        write_json(
            &dir.join(format!("{name}.json")),
            &MapSidecar {
                name: name.into(),
                width: maps.width,
                height: maps.height,
                dtype: DTYPE_F32.into(),
                unit: unit.into(),
                data_file,
                preview_file,
                converged_percent: percent,
            },
        )?;
    }
    let bools = |v: &[bool]| v.iter().map(|&b| b as u8).collect::<Vec<u8>>();
    write_bytes(&dir.join("converged.u8"), &bools(&maps.converged))?;
    write_bytes(&dir.join("fitted.u8"), &bools(&maps.fitted))?;
    write_bytes(&dir.join("polarity.u8"), &maps.polarity)?;
    write_json(
        &dir.join("maps.json"),
        &MapsManifest {
            width: maps.width,
            height: maps.height,
            maps: MAP_NAMES.iter().map(|(n, _)| n.to_string()).collect(),
            converged_file: "converged.u8".into(),
            fitted_file: "fitted.u8".into(),
            polarity_file: "polarity.u8".into(),
            converged_percent: percent,
        },
    )
}

pub fn load_maps(dir: &Path) -> IoResult<ParameterMaps> {
    let manifest_path = dir.join("maps.json");
    let manifest: MapsManifest = read_json(&manifest_path)?;
    let (w, h) = (manifest.width, manifest.height);
    let mut maps = ParameterMaps::unfitted(w, h);
    for (name, _) in MAP_NAMES {
        let side_path = dir.join(format!("{name}.json"));
        let side: MapSidecar = read_json(&side_path)?;
        check_dtype(&side_path, &side.dtype, DTYPE_F32)?;
        if side.width != w || side.height != h {
            return Err(format_err(&side_path, "map grid differs from manifest"));
        }
        let values = read_f32(&dir.join(&side.data_file), w * h)?;
        match name {
            "c" => maps.c = values,
            "k" => maps.k = values,
            "t1star" => maps.t1star = values,
            "t1" => maps.t1 = values,
            _ => maps.sd_t1 = values,
        }
    }
    let read_u8 = |file: &str| -> IoResult<Vec<u8>> {
        let path = dir.join(file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if bytes.len() != w * h {
            return Err(format_err(&path, "status payload size differs from manifest"));
        }
        Ok(bytes)
    };
    maps.converged = read_u8(&manifest.converged_file)?.iter().map(|&b| b != 0).collect();
    maps.fitted = read_u8(&manifest.fitted_file)?.iter().map(|&b| b != 0).collect();
    maps.polarity = read_u8(&manifest.polarity_file)?;
    Ok(maps)
}

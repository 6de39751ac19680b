//! On-disk formats.
//!
//! A clip is a JSON header (`shape`, `fps`, `dtype`, `endianness`, data file
//! name) next to a raw little-endian binary blob in planar `C×T×H×W` order.
//! Waveforms are two-column CSV (`time_s,value`). Every artifact the CLI
//! writes gets a `<name>.prov.json` sidecar carrying the config hash and seed
//! so outputs can be traced to their inputs.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tensor::Tensor;
use crate::video::{BvpSignal, VideoClip};
use crate::{Real, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipHeader {
    pub shape: [usize; 4],
    pub fps: f64,
    pub dtype: String,
    pub endianness: String,
    pub data_file: String,
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), msg: msg.into() }
}

/// Writes `<stem>.json` + `<stem>.raw` into `dir`; returns both paths.
pub fn write_clip<S: Real>(dir: &Path, stem: &str, clip: &VideoClip<S>) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let header_path = dir.join(format!("{stem}.json"));
    let blob_name = format!("{stem}.raw");
    let blob_path = dir.join(&blob_name);

    let sh = clip.frames().shape();
    let header = ClipHeader {
        shape: [sh[0], sh[1], sh[2], sh[3]],
        fps: clip.fps(),
        dtype: "f64".to_string(),
        endianness: "little".to_string(),
        data_file: blob_name,
    };
    fs::write(&header_path, serde_json::to_string_pretty(&header)?)?;

    let mut w = BufWriter::new(fs::File::create(&blob_path)?);
    for &v in clip.frames().data() {
        w.write_all(&v.f64().to_le_bytes())?;
    }
    w.flush()?;
    Ok((header_path, blob_path))
}

/// Loads a clip from its JSON header; the blob path is resolved relative to
/// the header's directory.
pub fn read_clip<S: Real>(header_path: &Path) -> Result<VideoClip<S>> {
    let header: ClipHeader = serde_json::from_str(&fs::read_to_string(header_path)?)?;
    if header.endianness != "little" {
        return Err(fmt_err(header_path, format!("endianness {:?} unsupported", header.endianness)));
    }
    let elem = match header.dtype.as_str() {
        "f64" => 8,
        "f32" => 4,
        other => return Err(fmt_err(header_path, format!("dtype {other:?} unsupported"))),
    };
    let blob_path = header_path.parent().unwrap_or(Path::new(".")).join(&header.data_file);
    let n: usize = header.shape.iter().product();
    let mut bytes = Vec::with_capacity(n * elem);
    fs::File::open(&blob_path)?.read_to_end(&mut bytes)?;
    if bytes.len() != n * elem {
        return Err(fmt_err(&blob_path, format!("blob holds {} bytes, header implies {}", bytes.len(), n * elem)));
    }
    let mut data = Vec::with_capacity(n);
    match elem {
        8 => {
            for c in bytes.chunks_exact(8) {
                data.push(S::of(f64::from_le_bytes(c.try_into().unwrap())));
            }
        }
        _ => {
            for c in bytes.chunks_exact(4) {
                data.push(S::of(f32::from_le_bytes(c.try_into().unwrap()) as f64));
            }
        }
    }
    let frames = Tensor::from_vec(&header.shape, data)?;
    VideoClip::new(frames, header.fps)
}

/// CSV with the exact header `time_s,value`; times are `i/fs`.
pub fn write_bvp<S: Real>(path: &Path, bvp: &BvpSignal<S>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "time_s,value")?;
    for (i, &v) in bvp.samples().iter().enumerate() {
        writeln!(w, "{:.9},{:.12e}", i as f64 / bvp.fs(), v.f64())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bvp<S: Real>(path: &Path) -> Result<BvpSignal<S>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    {
        let hdr = rdr.headers()?;
        if hdr.len() != 2 || &hdr[0] != "time_s" || &hdr[1] != "value" {
            return Err(fmt_err(path, format!("header {:?}, want time_s,value", hdr)));
        }
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let t: f64 = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt_err(path, format!("bad time at row {}", times.len() + 1)))?;
        let v: f64 = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt_err(path, format!("bad value at row {}", values.len() + 1)))?;
        times.push(t);
        values.push(S::of(v));
    }
    if values.len() < 2 {
        return Err(fmt_err(path, "need at least 2 samples"));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(fmt_err(path, "time column not increasing"));
    }
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-4 * dt.max(1e-9) {
            return Err(fmt_err(path, "time column not uniformly sampled"));
        }
    }
    BvpSignal::new(values, 1.0 / dt)
}

/// Provenance sidecar: enough to re-run the command that made the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

pub fn write_sidecar(output_path: &Path, prov: &Provenance) -> Result<PathBuf> {
    let mut name = output_path.file_name().unwrap_or_default().to_os_string();
    name.push(".prov.json");
    let sidecar = output_path.with_file_name(name);
    fs::write(&sidecar, serde_json::to_string_pretty(prov)?)?;
    Ok(sidecar)
}

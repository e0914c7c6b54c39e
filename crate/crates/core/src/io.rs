//! On-disk formats: the dataset container directory and the position CSVs
//! exchanged between CLI stages.
//!
//! A dataset directory holds `scenario.json`, `csi.bin` (little-endian `f32`
//! pairs `(re, im)` in `[L, B, M_row, M_col, N_sub]` order) and `meta.csv`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{CsiTensor, Datapoint, Dataset, Scenario, Vec2};

pub const SCENARIO_FILE: &str = "scenario.json";
pub const CSI_FILE: &str = "csi.bin";
pub const META_FILE: &str = "meta.csv";

pub fn write_dataset(dir: &Path, scenario: &Scenario, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let shape = scenario.csi_shape();
    if let Some(p) = dataset.points.iter().find(|p| p.csi.shape() != shape) {
        return Err(Error::shape(format!("datapoint CSI shape {:?} differs from scenario {shape:?}", p.csi.shape())));
    }
    fs::write(dir.join(SCENARIO_FILE), serde_json::to_string_pretty(scenario)? + "\n")?;

    let mut csi = BufWriter::new(fs::File::create(dir.join(CSI_FILE))?);
    for p in &dataset.points {
        for v in p.csi.values() {
            csi.write_all(&(v.re as f32).to_le_bytes())?;
            csi.write_all(&(v.im as f32).to_le_bytes())?;
        }
    }
    csi.flush()?;

    let mut meta = csv::Writer::from_path(dir.join(META_FILE))?;
    meta.write_record(["index", "t_s", "x1_m", "x2_m", "x3_m"])?;
    for (i, p) in dataset.points.iter().enumerate() {
        meta.write_record([i.to_string(), p.timestamp.to_string(), p.position[0].to_string(), p.position[1].to_string(), p.position[2].to_string()])?;
    }
    meta.flush()?;
    Ok(())
}

pub fn read_scenario(dir: &Path) -> Result<Scenario> {
    let path = dir.join(SCENARIO_FILE);
    let scenario: Scenario = serde_json::from_slice(&fs::read(&path)?).map_err(|e| Error::format(&path, e.to_string()))?;
    scenario.validate()?;
    Ok(scenario)
}

/// `(t, position)` rows of `meta.csv`.
pub fn read_meta(dir: &Path) -> Result<Vec<(f64, [f64; 3])>> {
    let path = dir.join(META_FILE);
    let mut reader = csv::Reader::from_path(&path)?;
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["index", "t_s", "x1_m", "x2_m", "x3_m"] {
        return Err(Error::format(&path, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> { rec.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| Error::format(&path, format!("bad value in row {i}"))) };
        if num(0)? as usize != i {
            return Err(Error::format(&path, format!("row {i} has index {}", &rec[0])));
        }
        rows.push((num(1)?, [num(2)?, num(3)?, num(4)?]));
    }
    Ok(rows)
}

pub fn read_dataset(dir: &Path) -> Result<(Scenario, Dataset)> {
    let scenario = read_scenario(dir)?;
    let meta = read_meta(dir)?;
    let path = dir.join(CSI_FILE);
    let bytes = fs::read(&path)?;
    let shape = scenario.csi_shape();
    let per_point: usize = shape.iter().product();
    if bytes.len() != meta.len() * per_point * 8 {
        return Err(Error::format(&path, format!("{} bytes for {} datapoints of shape {shape:?}", bytes.len(), meta.len())));
    }
    let f = |k: usize| f32::from_le_bytes([bytes[k], bytes[k + 1], bytes[k + 2], bytes[k + 3]]) as f64;
    let points = meta
        .iter()
        .enumerate()
        .map(|(l, (t, pos))| {
            let base = l * per_point * 8;
            let values = (0..per_point).map(|i| Complex64::new(f(base + 8 * i), f(base + 8 * i + 4))).collect();
            Ok(Datapoint { csi: CsiTensor::from_vec(shape, values)?, position: *pos, timestamp: *t })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((scenario, Dataset { points }))
}

pub fn sha256_hex(chunks: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for c in chunks {
        h.update((c.len() as u64).to_le_bytes());
        h.update(c);
    }
    hex::encode(h.finalize())
}

/// Checksum of the three container files.
pub fn dataset_checksum(dir: &Path) -> Result<String> {
    let files = [SCENARIO_FILE, CSI_FILE, META_FILE].map(|f| fs::read(dir.join(f)));
    let [a, b, c] = files;
    Ok(sha256_hex(&[&a?, &b?, &c?]))
}

/// Writes `index,x1_m,x2_m`.
pub fn write_positions_csv<W: Write>(out: W, positions: &[Vec2]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "x1_m", "x2_m"])?;
    for (i, p) in positions.iter().enumerate() {
        w.write_record([i.to_string(), p[0].to_string(), p[1].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads positions from any CSV with `index`, `x1_m` and `x2_m` columns.
/// Unparseable coordinates (failed estimates) come back as `None`.
pub fn read_positions_csv(path: &Path) -> Result<Vec<Option<Vec2>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| Error::format(path, format!("missing column {name}")));
    let (ci, cx, cy) = (col("index")?, col("x1_m")?, col("x2_m")?);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.get(ci).and_then(|s| s.parse::<usize>().ok()) != Some(i) {
            return Err(Error::format(path, format!("row {i} is out of order")));
        }
        let x: Option<f64> = rec.get(cx).and_then(|s| s.parse().ok());
        let y: Option<f64> = rec.get(cy).and_then(|s| s.parse().ok());
        out.push(match (x, y) {
            (Some(x), Some(y)) if x.is_finite() && y.is_finite() => Some(Vec2::new(x, y)),
            _ => None,
        });
    }
    Ok(out)
}

//! CSI dissimilarities for channel charting: angle-delay profiles, their
//! cosine-type distance, fusion with timestamps, geodesic completion and the
//! scale factor relating dissimilarities to meters.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CsiTensor, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdpConfig {
    pub n_beams: usize,
    pub n_delay_bins: usize,
}

impl Default for AdpConfig {
    fn default() -> Self {
        Self { n_beams: 16, n_delay_bins: 64 }
    }
}

/// Per-array angle-delay magnitude images, each `n_beams × n_delay_bins`
/// (row-major, beam index first) with unit Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct AdpFeature {
    pub n_beams: usize,
    pub n_delay_bins: usize,
    pub images: Vec<Vec<f64>>,
}

/// ADP of array `b`: inverse DFT over subcarriers (truncated to the first
/// `n_delay_bins` taps), zero-padded DFT over columns to `n_beams` beams
/// with the broadside beam at index `n_beams / 2`, and row-averaged power.
pub fn compute_adp(csi: &CsiTensor, b: usize, config: &AdpConfig) -> Result<Vec<f64>> {
    let [bc, rows, cols, n_sub] = csi.shape();
    if b >= bc {
        return Err(Error::shape(format!("array index {b} out of range ({bc} arrays)")));
    }
    if config.n_beams < cols || config.n_delay_bins == 0 || config.n_delay_bins > n_sub {
        return Err(Error::invalid(format!(
            "ADP needs n_beams >= {cols} and 1 <= n_delay_bins <= {n_sub}, got {config:?}"
        )));
    }
    let (nb, nd) = (config.n_beams, config.n_delay_bins);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_sub);
    // taps[c][d] for the current row
    let mut taps = vec![vec![Complex64::new(0.0, 0.0); n_sub]; cols];
    let steer: Vec<Vec<Complex64>> = (0..nb)
        .map(|k| {
            let u = 2.0 * PI * (k as f64 - (nb / 2) as f64) / nb as f64;
            (0..cols).map(|c| Complex64::from_polar(1.0, -u * c as f64)).collect()
        })
        .collect();
    let mut power = vec![0.0; nb * nd];
    for r in 0..rows {
        for (c, t) in taps.iter_mut().enumerate() {
            t.copy_from_slice(csi.element(b, r, c));
            ifft.process(t);
        }
        for (k, w) in steer.iter().enumerate() {
            for d in 0..nd {
                let v: Complex64 = (0..cols).map(|c| w[c] * taps[c][d]).sum();
                power[k * nd + d] += v.norm_sqr();
            }
        }
    }
    let mut image: Vec<f64> = power.iter().map(|p| (p / rows as f64).sqrt()).collect();
    let norm = image.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Numerical(format!("array {b} has no energy in the ADP window")));
    }
    image.iter_mut().for_each(|v| *v /= norm);
    Ok(image)
}

pub fn compute_adp_all(csi: &CsiTensor, config: &AdpConfig) -> Result<AdpFeature> {
    let images = (0..csi.shape()[0]).map(|b| compute_adp(csi, b, config)).collect::<Result<_>>()?;
    Ok(AdpFeature { n_beams: config.n_beams, n_delay_bins: config.n_delay_bins, images })
}

/// `1 − mean_b ⟨ADP_x^b, ADP_y^b⟩`.
pub fn csi_dissimilarity(x: &AdpFeature, y: &AdpFeature) -> Result<f64> {
    if x.images.len() != y.images.len() || x.images.iter().zip(&y.images).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::shape("ADP features differ in shape"));
    }
    if x.images.is_empty() {
        return Err(Error::shape("ADP features have no arrays"));
    }
    let sum: f64 = x.images.iter().zip(&y.images).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>()).sum();
    Ok(1.0 - sum / x.images.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    Fused,
    Geodesic,
    Scaled,
}

/// Symmetric `L × L` dissimilarities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    pub stage: Stage,
    n: usize,
    data: Vec<f64>,
}

impl DissimilarityMatrix {
    pub fn from_vec(stage: Stage, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape(format!("{} values for a {n}x{n} matrix", data.len())));
        }
        Ok(Self { stage, n, data })
    }

    pub fn from_fn(stage: Stage, n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { f(k / n, k % n) }).collect();
        Self { stage, n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Symmetry, non-negativity and zero diagonal.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(Error::invalid(format!("non-zero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (self.get(i, j), self.get(j, i));
                if !(a >= 0.0) || !a.is_finite() || (a - b).abs() > 1e-9 * a.abs().max(1.0) {
                    return Err(Error::invalid(format!("entry ({i}, {j}) is negative, non-finite or asymmetric")));
                }
            }
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { stage: Stage::Scaled, n: self.n, data: self.data.iter().map(|v| v * factor).collect() }
    }
}

/// Pairwise CSI dissimilarities of all features, rows in parallel.
pub fn raw_dissimilarity(features: &[AdpFeature]) -> Result<DissimilarityMatrix> {
    let n = features.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| if i == j { Ok(0.0) } else { csi_dissimilarity(&features[i], &features[j]).map(|d| d.max(0.0)) })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    // The inner product is evaluated in the same order both ways, so the
    // result is exactly symmetric.
    DissimilarityMatrix::from_vec(Stage::Raw, n, rows.concat())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Median of raw/(v_max·Δt) over temporally adjacent pairs.
    MedianAdjacent,
    /// Fixed dissimilarity units per meter.
    Fixed(f64),
}

/// Units of raw dissimilarity per meter, from consecutive datapoints.
pub fn calibrate_rho(raw: &DissimilarityMatrix, timestamps: &[f64], v_max_mps: f64) -> Result<f64> {
    let ratios: Vec<f64> = (1..raw.len())
        .filter_map(|i| {
            let dt = (timestamps[i] - timestamps[i - 1]).abs();
            (dt > 0.0).then(|| raw.get(i, i - 1) / (v_max_mps * dt))
        })
        .collect();
    let rho = crate::likelihood::median(&ratios);
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Numerical("timestamp calibration found no usable adjacent pairs".into()));
    }
    Ok(rho)
}

/// `min(raw, ρ·v_max·|Δt|)`.
pub fn fuse_with_timestamps(raw: &DissimilarityMatrix, timestamps: &[f64], v_max_mps: f64, calibration: Calibration) -> Result<DissimilarityMatrix> {
    if timestamps.len() != raw.len() {
        return Err(Error::shape(format!("{} timestamps for {} datapoints", timestamps.len(), raw.len())));
    }
    if !(v_max_mps > 0.0) {
        return Err(Error::invalid("v_max must be positive"));
    }
    let rho = match calibration {
        Calibration::Fixed(r) => r,
        Calibration::MedianAdjacent => calibrate_rho(raw, timestamps, v_max_mps)?,
    };
    let n = raw.len();
    Ok(DissimilarityMatrix::from_fn(Stage::Fused, n, |i, j| {
        raw.get(i, j).min(rho * v_max_mps * (timestamps[i] - timestamps[j]).abs())
    }))
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Symmetric k-nearest-neighbor adjacency lists.
pub fn knn_graph(d: &DissimilarityMatrix, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = d.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| d.get(i, a).total_cmp(&d.get(i, b)).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    adj.into_iter()
        .enumerate()
        .map(|(i, mut nb)| {
            nb.sort_unstable();
            nb.dedup();
            nb.into_iter().map(|j| (j, d.get(i, j))).collect()
        })
        .collect()
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem(0.0, source));
    while let Some(HeapItem(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapItem(nd, v));
            }
        }
    }
    dist
}

/// Shortest-path distances through the symmetric kNN graph.
pub fn geodesic_complete(fused: &DissimilarityMatrix, k_neighbors: usize) -> Result<DissimilarityMatrix> {
    if k_neighbors < 2 && fused.len() > 2 {
        return Err(Error::invalid("k_neighbors must be at least 2"));
    }
    let n = fused.len();
    let adj = knn_graph(fused, k_neighbors);
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(&adj, s)).collect();
    if n > 0 && rows[0].iter().any(|d| d.is_infinite()) {
        return Err(disconnected(&adj));
    }
    let mut data = rows.concat();
    // Enforce exact symmetry against rounding in different summation orders.
    for i in 0..n {
        for j in 0..i {
            let v = data[i * n + j].min(data[j * n + i]);
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    DissimilarityMatrix::from_vec(Stage::Geodesic, n, data)
}

fn disconnected(adj: &[Vec<(usize, f64)>]) -> Error {
    let mut comp = vec![usize::MAX; adj.len()];
    let mut sizes = Vec::new();
    for start in 0..adj.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut stack = vec![start];
        comp[start] = id;
        let mut size = 0;
        while let Some(u) = stack.pop() {
            size += 1;
            for &(v, _) in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = id;
                    stack.push(v);
                }
            }
        }
        sizes.push(size);
    }
    Error::Disconnected { components: sizes.len(), sizes }
}

/// Minimum estimated distance for a pair to enter the scale estimate.
pub const GAMMA_MIN_DISTANCE_M: f64 = 0.1;

/// Mean ratio of dissimilarity to distance between classical position
/// estimates, over all ordered pairs or `pair_sample = (count, seed)`
/// uniformly drawn ones.
pub fn estimate_scale_gamma(d: &DissimilarityMatrix, estimates: &[Vec2], pair_sample: Option<(usize, u64)>) -> Result<f64> {
    let n = d.len();
    if estimates.len() != n {
        return Err(Error::shape(format!("{} estimates for {n} datapoints", estimates.len())));
    }
    if estimates.iter().any(|x| !x.iter().all(|v| v.is_finite())) {
        return Err(Error::invalid("position estimates must be finite"));
    }
    let ratio = |i: usize, j: usize| {
        let dist = (estimates[j] - estimates[i]).norm();
        (dist >= GAMMA_MIN_DISTANCE_M).then(|| d.get(i, j) / dist)
    };
    let (sum, count) = match pair_sample {
        None => (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n).filter(|&j| j != i).filter_map(|j| ratio(i, j)).fold((0.0, 0usize), |(s, c), r| (s + r, c + 1))
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((0.0, 0usize), |(s, c), (s2, c2)| (s + s2, c + c2)),
        Some((samples, seed)) => {
            if n < 2 {
                (0.0, 0)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut acc = (0.0, 0usize);
                for _ in 0..samples {
                    let i = rng.random_range(0..n);
                    let mut j = rng.random_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    if let Some(r) = ratio(i, j) {
                        acc = (acc.0 + r, acc.1 + 1);
                    }
                }
                acc
            }
        }
    };
    if count == 0 {
        return Err(Error::invalid("no pair of estimates is far enough apart to estimate the scale"));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    stage: Stage,
    len: usize,
    params: serde_json::Value,
}

/// Writes `path` (little-endian f32, row-major) and `path.json`.
pub fn save_matrix(d: &DissimilarityMatrix, path: &Path, params: serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in &d.data {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    let sidecar = Sidecar { stage: d.stage, len: d.n, params };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<(DissimilarityMatrix, serde_json::Value)> {
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() != 4 * sidecar.len * sidecar.len {
        return Err(Error::format(path, format!("expected {} bytes, found {}", 4 * sidecar.len * sidecar.len, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok((DissimilarityMatrix::from_vec(sidecar.stage, sidecar.len, data)?, sidecar.params))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

//! Per-array time-of-arrival estimation with segmented root-MUSIC.
//!
//! The subcarriers are split into `U` interleaved segments of length `V`
//! (segment `u` holds subcarriers `u, u + U, u + 2U, ...`). Each segment of
//! each antenna is one snapshot of the delay steering vector, so the segment
//! count acts as frequency-domain spatial smoothing while every segment still
//! spans the whole bandwidth.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::rms_delay_spread;
use crate::model::{CsiTensor, Dataset, OfdmConfig, Scenario};
use crate::subspace::{
    estimate_autocorrelation, estimate_source_count_mdl, forward_backward_average, root_music, SourceEstimate,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToaConfig {
    /// Number of segments `U`.
    pub segments: usize,
    /// Segment length `V`; `U · V` must equal the subcarrier count.
    pub segment_len: usize,
    /// The earliest source is picked among this many strongest ones.
    pub strongest_subset_size: usize,
    /// Upper clamp for the MDL source count.
    pub max_sources: usize,
}

impl Default for ToaConfig {
    fn default() -> Self {
        Self { segments: 4, segment_len: 64, strongest_subset_size: 3, max_sources: 8 }
    }
}

impl ToaConfig {
    pub fn for_subcarriers(n_sub: usize) -> Self {
        Self { segment_len: n_sub / 4, ..Self::default() }
    }

    pub fn validate(&self, n_sub: usize) -> Result<()> {
        if self.segments == 0 || self.segment_len < 2 || self.segments * self.segment_len != n_sub {
            return Err(Error::invalid(format!(
                "segments ({}) x segment_len ({}) must equal the subcarrier count {n_sub}",
                self.segments, self.segment_len
            )));
        }
        if self.strongest_subset_size == 0 || self.max_sources == 0 {
            return Err(Error::invalid("strongest_subset_size and max_sources must be at least 1"));
        }
        Ok(())
    }

    /// Unambiguous delay range, `V / bandwidth`.
    pub fn delay_range(&self, ofdm: &OfdmConfig) -> f64 {
        1.0 / (self.segments as f64 * ofdm.subcarrier_spacing())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToaEstimate {
    pub tau_s: f64,
    /// Sources sorted by descending power.
    pub all_sources: Vec<SourceEstimate>,
    pub rms_delay_spread_s: f64,
}

pub fn estimate_toa(csi: &CsiTensor, b: usize, ofdm: &OfdmConfig, config: &ToaConfig) -> Result<ToaEstimate> {
    let [bc, rows, cols, n_sub] = csi.shape();
    if b >= bc || n_sub != ofdm.n_sub {
        return Err(Error::shape(format!(
            "CSI shape {:?} does not fit array {b} with {} subcarriers",
            csi.shape(),
            ofdm.n_sub
        )));
    }
    config.validate(n_sub)?;
    let (u, v) = (config.segments, config.segment_len);
    let mut snapshots: Vec<Vec<Complex64>> = Vec::with_capacity(rows * cols * u);
    for r in 0..rows {
        for c in 0..cols {
            let h = csi.element(b, r, c);
            for s in 0..u {
                snapshots.push((0..v).map(|i| h[s + u * i]).collect());
            }
        }
    }
    let cov = estimate_autocorrelation(snapshots.iter().map(|s| s.as_slice()))?;
    let cov = forward_backward_average(&cov)?;
    let (eigs, _) = cov.eigen_descending();
    let k = estimate_source_count_mdl(&eigs, cov.snapshots)?.clamp(1, config.max_sources.min(v - 1));

    // Phase step per snapshot element is -2π U Δf τ.
    let step = u as f64 * ofdm.subcarrier_spacing();
    let range = 1.0 / step;
    let sources = root_music(&cov, k, |phase| (-phase / (2.0 * PI * step)).rem_euclid(range))?;
    let tau_s = sources
        .iter()
        .take(config.strongest_subset_size)
        .map(|s| s.parameter)
        .fold(f64::INFINITY, f64::min);
    let spread = rms_delay_spread(csi, b, ofdm.bandwidth_hz)?;
    Ok(ToaEstimate { tau_s, all_sources: sources, rms_delay_spread_s: spread })
}

/// `[L][B]` estimates, computed in parallel with deterministic ordering.
pub fn estimate_toa_all(dataset: &Dataset, scenario: &Scenario, config: &ToaConfig) -> Result<Vec<Vec<ToaEstimate>>> {
    let b_count = scenario.arrays.b_count();
    dataset
        .points
        .par_iter()
        .map(|p| (0..b_count).map(|b| estimate_toa(&p.csi, b, &scenario.ofdm, config)).collect())
        .collect()
}

pub fn write_toa_csv<W: Write>(out: W, toa: &[Vec<ToaEstimate>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "b", "tau_s", "delay_spread_s"])?;
    for (l, row) in toa.iter().enumerate() {
        for (b, e) in row.iter().enumerate() {
            w.write_record([l.to_string(), b.to_string(), e.tau_s.to_string(), e.rms_delay_spread_s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

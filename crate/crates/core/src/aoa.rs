//! LoS component extraction and azimuth estimation.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CsiTensor, Dataset, OfdmConfig, Scenario};
use crate::subspace::{root_music, CovarianceEstimate};
use crate::toa::ToaEstimate;

#[derive(Debug, Clone, PartialEq)]
pub struct AoaEstimate {
    /// Azimuth in (-π/2, π/2); 0 is broadside, positive to the array's left.
    pub azimuth_rad: f64,
    /// LoS coefficients `[M_row × M_col]` the estimate was computed from.
    pub los: DMatrix<Complex64>,
    /// Set when the spatial phase fell outside the arcsin domain.
    pub clipped: bool,
}

/// Evaluates the band-limited channel impulse response of array `b` at delay
/// `tau_s`: `H'[r,c] = Σ_n exp(j2π τ f_n) H[b,r,c,n]`.
pub fn extract_los_component(csi: &CsiTensor, b: usize, tau_s: f64, ofdm: &OfdmConfig) -> DMatrix<Complex64> {
    let [_, rows, cols, n_sub] = csi.shape();
    // τ in samples of 1/bandwidth against the normalized index (n - N/2) / N.
    let tau_samples = tau_s * ofdm.bandwidth_hz;
    let weights: Vec<Complex64> = (0..n_sub)
        .map(|n| Complex64::from_polar(1.0, 2.0 * PI * tau_samples * (n as f64 - (n_sub / 2) as f64) / n_sub as f64))
        .collect();
    DMatrix::from_fn(rows, cols, |r, c| csi.element(b, r, c).iter().zip(&weights).map(|(h, w)| h * w).sum())
}

/// Maps the per-column phase step to an azimuth, clipping outside the
/// arcsin domain. Returns `(azimuth, clipped)`.
pub fn azimuth_from_spatial_phase(phase: f64) -> (f64, bool) {
    const LIMIT: f64 = FRAC_PI_2 - 1e-9;
    let s = phase / PI;
    if s.abs() >= 1.0 || !s.is_finite() {
        let sign = if s < 0.0 { -1.0 } else { 1.0 };
        (sign * LIMIT, true)
    } else {
        (s.asin().clamp(-LIMIT, LIMIT), false)
    }
}

/// Single-source root-MUSIC over the column dimension, using the sum of the
/// row outer products as covariance (no forward-backward averaging).
pub fn estimate_azimuth_aoa(los: &DMatrix<Complex64>) -> Result<AoaEstimate> {
    let (rows, cols) = los.shape();
    if cols < 2 {
        return Err(Error::shape(format!("azimuth estimation needs at least 2 columns, got {cols}")));
    }
    let scale = los.iter().map(|h| h.norm()).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Numerical("LoS component is zero or non-finite".into()));
    }
    let mut cov = DMatrix::<Complex64>::zeros(cols, cols);
    for r in 0..rows {
        let h = los.row(r).transpose() / Complex64::new(scale, 0.0);
        cov += &h * h.adjoint();
    }
    let cov = CovarianceEstimate { matrix: cov, snapshots: rows };
    let sources = root_music(&cov, 1, |p| p)?;
    let (azimuth_rad, clipped) = azimuth_from_spatial_phase(sources[0].phase);
    if clipped {
        warn!("spatial phase {} outside the arcsin domain; azimuth clipped", sources[0].phase);
    }
    Ok(AoaEstimate { azimuth_rad, los: los.clone(), clipped })
}

pub fn estimate_aoa_all(dataset: &Dataset, scenario: &Scenario, toa: &[Vec<ToaEstimate>]) -> Result<Vec<Vec<AoaEstimate>>> {
    if toa.len() != dataset.len() {
        return Err(Error::shape(format!("{} ToA rows for {} datapoints", toa.len(), dataset.len())));
    }
    dataset
        .points
        .par_iter()
        .zip(toa.par_iter())
        .map(|(p, row)| {
            row.iter()
                .enumerate()
                .map(|(b, t)| estimate_azimuth_aoa(&extract_los_component(&p.csi, b, t.tau_s, &scenario.ofdm)))
                .collect()
        })
        .collect()
}

pub fn write_aoa_csv<W: Write>(out: W, aoa: &[Vec<AoaEstimate>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "b", "azimuth_rad"])?;
    for (l, row) in aoa.iter().enumerate() {
        for (b, e) in row.iter().enumerate() {
            w.write_record([l.to_string(), b.to_string(), e.azimuth_rad.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

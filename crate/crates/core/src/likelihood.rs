//! Likelihood models for ToA, TDoA and AoA estimates, the RMS delay spread
//! and the heuristics mapping delay spread to σ and κ.
//!
//! Everything is evaluated in the log domain: with σ around a nanosecond the
//! Gaussian densities are far beyond `f64` range once multiplied over arrays.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CsiTensor, Scenario, Vec2, SPEED_OF_LIGHT};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// RMS delay spread (seconds) of array `b`.
///
/// The power delay profile is the element-averaged squared magnitude of the
/// inverse DFT over subcarriers. Only the shortest circular window holding at
/// least 90 % of the energy is kept, which suppresses the noise floor.
pub fn rms_delay_spread(csi: &CsiTensor, b: usize, bandwidth_hz: f64) -> Result<f64> {
    let [bc, rows, cols, n] = csi.shape();
    if b >= bc {
        return Err(Error::shape(format!("array index {b} out of range ({bc} arrays)")));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut pdp = vec![0.0; n];
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..rows {
        for c in 0..cols {
            buf.copy_from_slice(csi.element(b, r, c));
            fft.process(&mut buf);
            for (p, h) in pdp.iter_mut().zip(&buf) {
                *p += h.norm_sqr();
            }
        }
    }
    let spread = profile_rms_width(&pdp, 0.9)?;
    Ok(spread / bandwidth_hz)
}

/// RMS width (in samples) of a circular power profile restricted to its
/// shortest window carrying at least `fraction` of the energy.
pub fn profile_rms_width(pdp: &[f64], fraction: f64) -> Result<f64> {
    let n = pdp.len();
    let total: f64 = pdp.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numerical("power delay profile has no energy".into()));
    }
    let target = fraction * total;
    // Two pointers over the doubled profile.
    let mut best = (n, 0usize, f64::NEG_INFINITY);
    let mut end = 0usize;
    let mut acc = 0.0;
    for start in 0..n {
        while end < start + n && acc < target * (1.0 - 1e-12) {
            acc += pdp[end % n];
            end += 1;
        }
        if acc < target * (1.0 - 1e-12) {
            break;
        }
        let len = end - start;
        if len < best.0 || (len == best.0 && acc > best.2) {
            best = (len, start, acc);
        }
        acc -= pdp[start];
    }
    let (len, start, _) = best;
    let mut w = 0.0;
    let mut m1 = 0.0;
    for k in 0..len {
        let p = pdp[(start + k) % n];
        w += p;
        m1 += p * k as f64;
    }
    let mean = m1 / w;
    let var: f64 = (0..len).map(|k| pdp[(start + k) % n] * (k as f64 - mean).powi(2)).sum::<f64>() / w;
    Ok(var.max(0.0).sqrt())
}

/// Constants of the delay-spread → σ/κ heuristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityConfig {
    /// σ floor in seconds; `None` means half a delay-resolution cell.
    pub sigma_min_s: Option<f64>,
    pub c_sigma: f64,
    pub kappa_max: f64,
    pub c_kappa: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self { sigma_min_s: None, c_sigma: 1.0, kappa_max: 100.0, c_kappa: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityWeights {
    /// `[L][B]`
    pub sigma_toa_s: Vec<Vec<f64>>,
    /// `[L][B][B]`, symmetric; the diagonal is unused.
    pub sigma_tdoa_s: Vec<Vec<Vec<f64>>>,
    /// `[L][B]`
    pub kappa: Vec<Vec<f64>>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// σ grows linearly with the delay spread; κ shrinks with the spread
/// relative to the dataset median.
pub fn compute_quality_weights(delay_spread: &[Vec<f64>], config: &QualityConfig, bandwidth_hz: f64) -> Result<QualityWeights> {
    if delay_spread.iter().flatten().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::invalid("delay spreads must be finite and non-negative"));
    }
    let sigma_min = config.sigma_min_s.unwrap_or(0.5 / bandwidth_hz);
    if !(sigma_min > 0.0) {
        return Err(Error::invalid("sigma_min_s must be positive"));
    }
    let all: Vec<f64> = delay_spread.iter().flatten().copied().collect();
    let med = median(&all);
    let sigma_toa_s: Vec<Vec<f64>> = delay_spread
        .iter()
        .map(|row| row.iter().map(|s| sigma_min + config.c_sigma * s).collect())
        .collect();
    let sigma_tdoa_s = sigma_toa_s
        .iter()
        .map(|row| row.iter().map(|a| row.iter().map(|b| (a * a + b * b).sqrt()).collect()).collect())
        .collect();
    let kappa = delay_spread
        .iter()
        .map(|row| {
            row.iter()
                .map(|s| {
                    // An all-zero median means every spread is negligible.
                    let ratio = if med > 0.0 { s / med } else { 0.0 };
                    config.kappa_max / (1.0 + config.c_kappa * ratio)
                })
                .collect()
        })
        .collect();
    Ok(QualityWeights { sigma_toa_s, sigma_tdoa_s, kappa })
}

/// All per-datapoint, per-array estimates consumed by the likelihoods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateBundle {
    /// `[L][B]` ToA estimates, seconds.
    pub toa: Vec<Vec<f64>>,
    /// `[L][B]` azimuth estimates, radians.
    pub aoa: Vec<Vec<f64>>,
    /// `[L][B]` RMS delay spreads, seconds.
    pub delay_spread: Vec<Vec<f64>>,
    pub weights: QualityWeights,
}

impl EstimateBundle {
    pub fn new(toa: Vec<Vec<f64>>, aoa: Vec<Vec<f64>>, delay_spread: Vec<Vec<f64>>, weights: QualityWeights) -> Result<Self> {
        let bundle = Self { toa, aoa, delay_spread, weights };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn from_estimates(
        toa: &[Vec<crate::toa::ToaEstimate>],
        aoa: &[Vec<crate::aoa::AoaEstimate>],
        config: &QualityConfig,
        bandwidth_hz: f64,
    ) -> Result<Self> {
        let spread: Vec<Vec<f64>> = toa.iter().map(|r| r.iter().map(|e| e.rms_delay_spread_s).collect()).collect();
        let weights = compute_quality_weights(&spread, config, bandwidth_hz)?;
        Self::new(
            toa.iter().map(|r| r.iter().map(|e| e.tau_s).collect()).collect(),
            aoa.iter().map(|r| r.iter().map(|e| e.azimuth_rad).collect()).collect(),
            spread,
            weights,
        )
    }

    pub fn len(&self) -> usize {
        self.toa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.toa.is_empty()
    }

    pub fn b_count(&self) -> usize {
        self.toa.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.toa.len();
        let b = self.b_count();
        let rows_ok = |m: &Vec<Vec<f64>>| m.len() == l && m.iter().all(|r| r.len() == b);
        let w = &self.weights;
        if !rows_ok(&self.toa)
            || !rows_ok(&self.aoa)
            || !rows_ok(&self.delay_spread)
            || !rows_ok(&w.sigma_toa_s)
            || !rows_ok(&w.kappa)
            || w.sigma_tdoa_s.len() != l
            || w.sigma_tdoa_s.iter().any(|m| m.len() != b || m.iter().any(|r| r.len() != b))
        {
            return Err(Error::shape("estimate bundle matrices disagree in shape"));
        }
        if w.sigma_toa_s.iter().flatten().any(|s| !(*s > 0.0)) || w.kappa.iter().flatten().any(|k| !(*k >= 0.0)) {
            return Err(Error::invalid("σ must be positive and κ non-negative"));
        }
        Ok(())
    }
}

/// `ln I0(κ)`: power series for small arguments, Hankel expansion of the
/// scaled function beyond.
pub fn ln_bessel_i0(kappa: f64) -> f64 {
    let k = kappa.abs();
    if k < 30.0 {
        let q = 0.25 * k * k;
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 1..200 {
            term *= q / (j as f64 * j as f64);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        sum.ln()
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 1..60 {
            let next = term * ((2 * j - 1) as f64).powi(2) / (j as f64 * 8.0 * k);
            if next > term {
                break;
            }
            term = next;
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        k - 0.5 * (2.0 * PI * k).ln() + sum.ln()
    }
}

/// Log-density of a von Mises distribution with concentration `kappa`.
pub fn von_mises_log_density(error: f64, kappa: f64) -> f64 {
    kappa * error.cos() - (2.0 * PI).ln() - ln_bessel_i0(kappa)
}

fn gaussian_log_density(residual: f64, sigma: f64) -> f64 {
    -LN_SQRT_2PI - sigma.ln() - 0.5 * (residual / sigma).powi(2)
}

/// Distance from `x` (lifted to the transmitter height) to array `b` and its
/// gradient with respect to `x`.
fn distance_with_gradient(scenario: &Scenario, x: &Vec2, b: usize) -> (f64, Vec2) {
    let diff = scenario.lift(x) - scenario.arrays.center(b);
    let d = diff.norm();
    if d == 0.0 {
        return (0.0, Vec2::zeros());
    }
    (d, Vec2::new(diff[0] / d, diff[1] / d))
}

/// ToA log-likelihood and its gradient `(∂/∂x, ∂/∂τ_TX)`.
pub fn log_likelihood_toa_grad(x: &Vec2, tau_tx: f64, bundle: &EstimateBundle, l: usize, scenario: &Scenario) -> (f64, Vec2, f64) {
    let mut value = 0.0;
    let mut gx = Vec2::zeros();
    let mut gt = 0.0;
    for b in 0..bundle.b_count() {
        let sigma = bundle.weights.sigma_toa_s[l][b];
        let (d, dd) = distance_with_gradient(scenario, x, b);
        let r = d / SPEED_OF_LIGHT - bundle.toa[l][b] + tau_tx;
        value += gaussian_log_density(r, sigma);
        let w = -r / (sigma * sigma);
        gx += dd * (w / SPEED_OF_LIGHT);
        gt += w;
    }
    (value, gx, gt)
}

pub fn log_likelihood_toa(x: &Vec2, tau_tx: f64, bundle: &EstimateBundle, l: usize, scenario: &Scenario) -> f64 {
    log_likelihood_toa_grad(x, tau_tx, bundle, l, scenario).0
}

pub fn likelihood_toa(x: &Vec2, tau_tx: f64, bundle: &EstimateBundle, l: usize, scenario: &Scenario) -> f64 {
    log_likelihood_toa(x, tau_tx, bundle, l, scenario).exp()
}

/// TDoA log-likelihood over all pairs `b1 < b2` and its gradient.
pub fn log_likelihood_tdoa_grad(x: &Vec2, bundle: &EstimateBundle, l: usize, scenario: &Scenario) -> (f64, Vec2) {
    let bc = bundle.b_count();
    let dist: Vec<(f64, Vec2)> = (0..bc).map(|b| distance_with_gradient(scenario, x, b)).collect();
    let mut value = 0.0;
    let mut g = Vec2::zeros();
    for b1 in 0..bc {
        for b2 in b1 + 1..bc {
            let sigma = bundle.weights.sigma_tdoa_s[l][b1][b2];
            let r = (dist[b2].0 - dist[b1].0) / SPEED_OF_LIGHT - (bundle.toa[l][b2] - bundle.toa[l][b1]);
            value += gaussian_log_density(r, sigma);
            g += (dist[b2].1 - dist[b1].1) * (-r / (sigma * sigma) / SPEED_OF_LIGHT);
        }
    }
    (value, g)
}

pub fn log_likelihood_tdoa(x: &Vec2, bundle: &EstimateBundle, l: usize, scenario: &Scenario) -> f64 {
    log_likelihood_tdoa_grad(x, bundle, l, scenario).0
}

pub fn likelihood_tdoa(x: &Vec2, bundle: &EstimateBundle, l: usize, scenario: &Scenario) -> f64 {
    log_likelihood_tdoa(x, bundle, l, scenario).exp()
}

/// AoA (von Mises) log-likelihood and its gradient.
pub fn log_likelihood_aoa_grad(x: &Vec2, bundle: &EstimateBundle, l: usize, scenario: &Scenario) -> (f64, Vec2) {
    let mut value = 0.0;
    let mut g = Vec2::zeros();
    for b in 0..bundle.b_count() {
        let kappa = bundle.weights.kappa[l][b];
        let (az, daz) = scenario.arrays.frame(b).azimuth_with_gradient(x);
        let e = az - bundle.aoa[l][b];
        value += von_mises_log_density(e, kappa);
        g += daz * (-kappa * e.sin());
    }
    (value, g)
}

pub fn log_likelihood_aoa(x: &Vec2, bundle: &EstimateBundle, l: usize, scenario: &Scenario) -> f64 {
    log_likelihood_aoa_grad(x, bundle, l, scenario).0
}

pub fn likelihood_aoa(x: &Vec2, bundle: &EstimateBundle, l: usize, scenario: &Scenario) -> f64 {
    log_likelihood_aoa(x, bundle, l, scenario).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JointKind {
    AoaToa,
    AoaTdoa,
}

/// Joint log-likelihood; `tau_tx` is only used by [`JointKind::AoaToa`].
pub fn log_likelihood_joint(x: &Vec2, tau_tx: f64, bundle: &EstimateBundle, l: usize, scenario: &Scenario, which: JointKind) -> f64 {
    let aoa = log_likelihood_aoa(x, bundle, l, scenario);
    match which {
        JointKind::AoaToa => aoa + log_likelihood_toa(x, tau_tx, bundle, l, scenario),
        JointKind::AoaTdoa => aoa + log_likelihood_tdoa(x, bundle, l, scenario),
    }
}

pub fn likelihood_joint(x: &Vec2, tau_tx: f64, bundle: &EstimateBundle, l: usize, scenario: &Scenario, which: JointKind) -> f64 {
    log_likelihood_joint(x, tau_tx, bundle, l, scenario, which).exp()
}

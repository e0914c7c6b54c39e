//! Maximum-likelihood position estimation: coarse grid search followed by a
//! BFGS ascent on the log-likelihood.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{
    log_likelihood_aoa, log_likelihood_aoa_grad, log_likelihood_tdoa, log_likelihood_toa_grad, EstimateBundle,
};
use crate::model::{Rect, Scenario, SceneBounds, Vec2, SPEED_OF_LIGHT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub grid_resolution_m: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the log-likelihood gradient norm.
    pub gradient_tolerance: f64,
    /// Largest single step of the ascent, meters.
    pub max_step_m: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { grid_resolution_m: 0.5, max_iterations: 200, gradient_tolerance: 1e-8, max_step_m: 2.0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_resolution_m > 0.0) || !self.grid_resolution_m.is_finite() {
            return Err(Error::invalid("grid_resolution_m must be positive"));
        }
        if !(self.gradient_tolerance >= 0.0) || !(self.max_step_m > 0.0) {
            return Err(Error::invalid("gradient_tolerance must be >= 0 and max_step_m > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Toa,
    Aoa,
    AoaToa,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Toa => "ML:ToA",
            Method::Aoa => "ML:AoA",
            Method::AoaToa => "ML:AoA/ToA",
        }
    }
}

/// Evaluates `objective` on a regular grid with spacing `resolution` over the
/// bounding box of `bounds`, skipping nodes outside the region. Ties go to
/// the lowest `x1`, then the lowest `x2`.
pub fn grid_initialize<F>(objective: F, bounds: &SceneBounds, resolution: f64) -> Result<Vec2>
where
    F: Fn(&Vec2) -> f64,
{
    if !(resolution > 0.0) {
        return Err(Error::invalid("grid resolution must be positive"));
    }
    let bb = bounds.bounding_box();
    let nx = ((bb.max[0] - bb.min[0]) / resolution + 1e-9).floor() as usize + 1;
    let ny = ((bb.max[1] - bb.min[1]) / resolution + 1e-9).floor() as usize + 1;
    let mut best: Option<(Vec2, f64)> = None;
    for i in 0..nx {
        for j in 0..ny {
            let p = Vec2::new(bb.min[0] + i as f64 * resolution, bb.min[1] + j as f64 * resolution);
            if !bounds.contains(&p) {
                continue;
            }
            let v = objective(&p);
            if v.is_finite() && best.is_none_or(|(_, b)| v > b) {
                best = Some((p, v));
            }
        }
    }
    best.map(|(p, _)| p).ok_or_else(|| Error::Numerical("objective is non-finite on the whole grid".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentResult {
    pub params: DVector<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// BFGS ascent with Armijo backtracking on `objective`, which returns the
/// value and gradient.
pub fn maximize<F>(objective: F, init: &DVector<f64>, config: &SolverConfig) -> Result<AscentResult>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = init.len();
    let (mut f, mut g) = objective(init);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("objective is non-finite at the initial point".into()));
    }
    let mut p = init.clone();
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    for it in 0..config.max_iterations {
        let gnorm = g.norm();
        if gnorm <= config.gradient_tolerance {
            return Ok(AscentResult { params: p, value: f, converged: true, iterations: it });
        }
        let mut d = &h * &g;
        let mut slope = g.dot(&d);
        if !(slope > 0.0) {
            // Lost the ascent property: fall back to steepest ascent.
            h = DMatrix::identity(n, n);
            first = true;
            d = g.clone();
            slope = g.dot(&d);
        }
        let mut alpha = if first { (config.max_step_m / d.norm()).min(1.0) } else { 1.0 };
        if alpha * d.norm() > config.max_step_m {
            alpha = config.max_step_m / d.norm();
        }
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &p + &d * alpha;
            let (fc, gc) = objective(&cand);
            if fc.is_finite() && fc >= f + 1e-4 * alpha * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            // No further progress is possible at this precision.
            let converged = gnorm <= 1e-4_f64.max(config.gradient_tolerance);
            return Ok(AscentResult { params: p, value: f, converged, iterations: it });
        };
        let s = &cand - &p;
        let y = &g - &gc;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            if first {
                let scale = sy / y.dot(&y);
                h = DMatrix::identity(n, n) * scale;
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
            first = false;
        }
        let stalled = fc - f <= 1e-15 * f.abs().max(1.0) && s.norm() <= 1e-12 * p.norm().max(1.0);
        p = cand;
        f = fc;
        g = gc;
        if stalled {
            let converged = g.norm() <= 1e-4_f64.max(config.gradient_tolerance);
            return Ok(AscentResult { params: p, value: f, converged, iterations: it + 1 });
        }
    }
    let converged = g.norm() <= config.gradient_tolerance;
    Ok(AscentResult { params: p, value: f, converged, iterations: config.max_iterations })
}

/// Per-datapoint localization result. Failures are recorded, not raised.
#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub position: Option<Vec2>,
    pub tau_tx_s: Option<f64>,
    pub converged: bool,
    pub loglik: f64,
    /// Objective value at the grid initialization.
    pub init_loglik: f64,
    /// Set when the estimate left the scene bounding box scaled by 2.
    pub out_of_bounds: bool,
    pub error: Option<String>,
}

impl Localization {
    fn failed(msg: String) -> Self {
        Self {
            position: None,
            tau_tx_s: None,
            converged: false,
            loglik: f64::NAN,
            init_loglik: f64::NAN,
            out_of_bounds: false,
            error: Some(msg),
        }
    }
}

fn initial_tau(bundle: &EstimateBundle, l: usize, scenario: &Scenario, x: &Vec2) -> f64 {
    let b = bundle.b_count();
    (0..b).map(|i| bundle.toa[l][i] - scenario.distance(x, i) / SPEED_OF_LIGHT).sum::<f64>() / b as f64
}

/// Localizes datapoint `l` with the given method.
pub fn localize_point(bundle: &EstimateBundle, l: usize, scenario: &Scenario, method: Method, config: &SolverConfig) -> Result<Localization> {
    let grid_objective = |x: &Vec2| match method {
        Method::Toa => log_likelihood_tdoa(x, bundle, l, scenario),
        Method::Aoa => log_likelihood_aoa(x, bundle, l, scenario),
        Method::AoaToa => log_likelihood_aoa(x, bundle, l, scenario) + log_likelihood_tdoa(x, bundle, l, scenario),
    };
    let x0 = grid_initialize(grid_objective, &scenario.bounds, config.grid_resolution_m)?;

    let with_tau = method != Method::Aoa;
    // Third parameter is c0·τ_TX so that all coordinates are in meters.
    let objective = |p: &DVector<f64>| {
        let x = Vec2::new(p[0], p[1]);
        let mut value = 0.0;
        let mut g = DVector::zeros(p.len());
        if method != Method::Toa {
            let (v, gx) = log_likelihood_aoa_grad(&x, bundle, l, scenario);
            value += v;
            g[0] += gx[0];
            g[1] += gx[1];
        }
        if with_tau {
            let (v, gx, gt) = log_likelihood_toa_grad(&x, p[2] / SPEED_OF_LIGHT, bundle, l, scenario);
            value += v;
            g[0] += gx[0];
            g[1] += gx[1];
            g[2] += gt / SPEED_OF_LIGHT;
        }
        (value, g)
    };
    let init = if with_tau {
        DVector::from_vec(vec![x0[0], x0[1], initial_tau(bundle, l, scenario, &x0) * SPEED_OF_LIGHT])
    } else {
        DVector::from_vec(vec![x0[0], x0[1]])
    };
    let init_loglik = objective(&init).0;
    let res = maximize(objective, &init, config)?;
    let position = Vec2::new(res.params[0], res.params[1]);
    let outer: Rect = scenario.bounds.bounding_box().scaled(2.0);
    Ok(Localization {
        position: Some(position),
        tau_tx_s: with_tau.then(|| res.params[2] / SPEED_OF_LIGHT),
        converged: res.converged,
        loglik: res.value,
        init_loglik,
        out_of_bounds: !outer.contains(&position),
        error: None,
    })
}

/// Localizes every datapoint in parallel; output order matches the bundle.
pub fn localize_dataset(bundle: &EstimateBundle, scenario: &Scenario, method: Method, config: &SolverConfig) -> Result<Vec<Localization>> {
    config.validate()?;
    bundle.validate()?;
    if !bundle.is_empty() && bundle.b_count() != scenario.arrays.b_count() {
        return Err(Error::shape(format!(
            "bundle has {} arrays, scenario {}",
            bundle.b_count(),
            scenario.arrays.b_count()
        )));
    }
    Ok((0..bundle.len())
        .into_par_iter()
        .map(|l| localize_point(bundle, l, scenario, method, config).unwrap_or_else(|e| Localization::failed(e.to_string())))
        .collect())
}

pub fn write_localization_csv<W: Write>(out: W, results: &[Localization]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "x1_m", "x2_m", "converged", "loglik"])?;
    for (i, r) in results.iter().enumerate() {
        let (x1, x2) = r.position.map_or((f64::NAN, f64::NAN), |p| (p[0], p[1]));
        w.write_record([i.to_string(), x1.to_string(), x2.to_string(), r.converged.to_string(), r.loglik.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

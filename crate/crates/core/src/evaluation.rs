//! Localization accuracy and chart-quality metrics, and the method
//! comparison report.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Vec2;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub mae_m: f64,
    pub drms_m: f64,
    /// Median error.
    pub cep_m: f64,
    /// 95th percentile error.
    pub r95_m: f64,
    /// Sorted absolute errors.
    pub ecdf: Vec<f64>,
}

/// Linear interpolation between order statistics of `sorted` at
/// position `p·(n − 1)`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn position_error_stats(truth: &[Vec2], estimates: &[Vec2]) -> Result<ErrorStats> {
    if truth.len() != estimates.len() {
        return Err(Error::shape(format!("{} true positions vs {} estimates", truth.len(), estimates.len())));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no positions to evaluate"));
    }
    let mut errors: Vec<f64> = truth.iter().zip(estimates).map(|(t, e)| (t - e).norm()).collect();
    let n = errors.len() as f64;
    let mae_m = errors.iter().sum::<f64>() / n;
    let drms_m = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    errors.sort_by(f64::total_cmp);
    Ok(ErrorStats { mae_m, drms_m, cep_m: quantile(&errors, 0.5), r95_m: quantile(&errors, 0.95), ecdf: errors })
}

/// Kruskal stress after optimal scaling of the chart distances.
pub fn kruskal_stress(truth: &[Vec2], chart: &[Vec2]) -> Result<f64> {
    if truth.len() != chart.len() {
        return Err(Error::shape(format!("{} true positions vs {} chart positions", truth.len(), chart.len())));
    }
    if truth.len() < 2 {
        return Err(Error::invalid("stress needs at least two points"));
    }
    let l = truth.len();
    // Per-row partial sums, reduced in index order.
    let rows: Vec<[f64; 3]> = (0..l)
        .into_par_iter()
        .map(|i| {
            let mut acc = [0.0; 3];
            for j in i + 1..l {
                let dt = (truth[i] - truth[j]).norm();
                let dc = (chart[i] - chart[j]).norm();
                acc[0] += dt * dc;
                acc[1] += dc * dc;
                acc[2] += dt * dt;
            }
            acc
        })
        .collect();
    let (mut sdc, mut scc, mut stt) = (0.0, 0.0, 0.0);
    for r in &rows {
        sdc += r[0];
        scc += r[1];
        stt += r[2];
    }
    if stt == 0.0 {
        return Err(Error::invalid("all true positions are identical"));
    }
    if scc == 0.0 {
        // Collapsed chart: the optimal scale is irrelevant, stress is 1.
        return Ok(1.0);
    }
    let s = sdc / scc;
    let num: f64 = (0..l)
        .into_par_iter()
        .map(|i| (i + 1..l).map(|j| ((truth[i] - truth[j]).norm() - s * (chart[i] - chart[j]).norm()).powi(2)).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok((num / stt).sqrt())
}

pub fn default_neighbors(l: usize) -> usize {
    (l / 20).max(1)
}

/// `rank[j]` = 1-based position of `j` among the points ordered by distance
/// from `i` (ties by index); `rank[i] = 0`.
fn ranks_from(points: &[Vec2], i: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..points.len()).filter(|&j| j != i).collect();
    let d: Vec<f64> = points.iter().map(|p| (p - points[i]).norm()).collect();
    order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut rank = vec![0; points.len()];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r + 1;
    }
    (order, rank)
}

/// Continuity and trustworthiness with neighborhood size `k`.
pub fn continuity_trustworthiness(truth: &[Vec2], chart: &[Vec2], k: usize) -> Result<(f64, f64)> {
    if truth.len() != chart.len() {
        return Err(Error::shape(format!("{} true positions vs {} chart positions", truth.len(), chart.len())));
    }
    let l = truth.len();
    if k < 1 || k >= l || 2 * l <= 3 * k + 1 {
        return Err(Error::invalid(format!("neighborhood size {k} out of range for {l} points")));
    }
    let parts: Vec<(f64, f64)> = (0..l)
        .into_par_iter()
        .map(|i| {
            let (order_t, rank_t) = ranks_from(truth, i);
            let (order_c, rank_c) = ranks_from(chart, i);
            // Trustworthiness: chart neighbors that are not true neighbors.
            let tw: usize = order_c[..k].iter().filter(|&&j| rank_t[j] > k).map(|&j| rank_t[j] - k).sum();
            // Continuity: true neighbors missing from the chart neighborhood.
            let ct: usize = order_t[..k].iter().filter(|&&j| rank_c[j] > k).map(|&j| rank_c[j] - k).sum();
            (ct as f64, tw as f64)
        })
        .collect();
    let (ct_sum, tw_sum) = parts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let norm = 2.0 / (l as f64 * k as f64 * (2.0 * l as f64 - 3.0 * k as f64 - 1.0));
    Ok((1.0 - norm * ct_sum, 1.0 - norm * tw_sum))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub method: String,
    pub mae_m: f64,
    pub drms_m: f64,
    pub cep_m: f64,
    pub r95_m: f64,
    pub ks: f64,
    pub ct: f64,
    pub tw: f64,
    #[serde(skip)]
    pub ecdf: Vec<f64>,
}

impl MetricReport {
    pub fn compute(method: &str, truth: &[Vec2], estimates: &[Vec2], k: Option<usize>) -> Result<Self> {
        let stats = position_error_stats(truth, estimates)?;
        let ks = kruskal_stress(truth, estimates)?;
        let (ct, tw) = continuity_trustworthiness(truth, estimates, k.unwrap_or_else(|| default_neighbors(truth.len())))?;
        Ok(Self {
            method: method.to_string(),
            mae_m: stats.mae_m,
            drms_m: stats.drms_m,
            cep_m: stats.cep_m,
            r95_m: stats.r95_m,
            ks,
            ct,
            tw,
            ecdf: stats.ecdf,
        })
    }
}

/// One report per `(method, estimates)` entry, in the given order.
pub fn compare_methods(truth: &[Vec2], outputs: &[(String, Vec<Vec2>)], k: Option<usize>) -> Result<Vec<MetricReport>> {
    if outputs.is_empty() {
        return Err(Error::invalid("no method outputs to compare"));
    }
    outputs.iter().map(|(name, est)| MetricReport::compute(name, truth, est, k)).collect()
}

pub fn write_report_csv<W: Write>(out: W, reports: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned text table with one row per method.
pub fn render_table(reports: &[MetricReport]) -> String {
    let width = reports.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>6}  {:>11}\n", "method", "MAE", "DRMS", "CEP", "R95", "KS", "CT/TW");
    for r in reports {
        s += &format!(
            "{:<width$}  {:>7.3}  {:>7.3}  {:>7.3}  {:>7.3}  {:>6.3}  {:>5.3}/{:<5.3}\n",
            r.method, r.mae_m, r.drms_m, r.cep_m, r.r95_m, r.ks, r.ct, r.tw
        );
    }
    s
}

pub fn write_ecdf_csv<W: Write>(out: W, ecdf: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["error_m", "cum_prob"])?;
    let n = ecdf.len() as f64;
    for (i, e) in ecdf.iter().enumerate() {
        w.write_record([e.to_string(), ((i + 1) as f64 / n).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

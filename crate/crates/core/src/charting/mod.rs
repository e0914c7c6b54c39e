//! Channel charting: a neural forward charting function trained on CSI
//! dissimilarities (Siamese loss), optionally augmented with classical
//! position likelihoods, plus the affine chart-to-world alignment.

pub mod affine;
pub mod mlp;

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use affine::{fit_affine_transform, Affine};
pub use mlp::{Adam, Mlp};

use crate::dissimilarity::{compute_adp_all, AdpConfig, DissimilarityMatrix};
use crate::error::{Error, Result};
use crate::likelihood::{log_likelihood_aoa, log_likelihood_aoa_grad, log_likelihood_tdoa, log_likelihood_tdoa_grad, EstimateBundle};
use crate::model::{CsiTensor, Dataset, Scenario, Vec2};
use crate::solver::grid_initialize;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub adp: AdpConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { adp: AdpConfig::default() }
    }
}

/// Concatenated per-array ADP images, `log1p`-compressed.
pub fn extract_features(csi: &CsiTensor, config: &FeatureConfig) -> Result<Vec<f64>> {
    let adp = compute_adp_all(csi, &config.adp)?;
    Ok(adp.images.iter().flatten().map(|v| v.ln_1p()).collect())
}

/// Sammon-weighted pair loss `(d − ‖y − x‖)² / (d + β)`.
pub fn siamese_loss(x: &Vec2, y: &Vec2, d: f64, beta: f64) -> Result<f64> {
    if !(d >= 0.0) || !(beta >= 0.0) || !(d + beta > 0.0) {
        return Err(Error::invalid(format!("siamese loss needs d >= 0, beta >= 0, d + beta > 0 (d={d}, beta={beta})")));
    }
    Ok((d - (y - x).norm()).powi(2) / (d + beta))
}

/// `(1 − λ)(d̃ − ‖y − x‖)² − λ(lik_x + lik_y)`.
pub fn combined_loss(x: &Vec2, y: &Vec2, d_scaled: f64, lik_x: f64, lik_y: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * (d_scaled - (y - x).norm()).powi(2) - lambda * (lik_x + lik_y)
}

/// Weight of the squared distance residual for one pair.
fn pair_weight(d: f64, beta: Option<f64>) -> f64 {
    match beta {
        Some(b) => 1.0 / (d + b),
        None => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LambdaSchedule {
    Constant { value: f64 },
    /// `start` for the first `hold_fraction` of the steps, then a linear
    /// ramp to `end` at the last step.
    HoldThenDecay { start: f64, end: f64, hold_fraction: f64 },
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule::HoldThenDecay { start: 0.9, end: 0.1, hold_fraction: 0.25 }
    }
}

impl LambdaSchedule {
    pub fn at(&self, step: usize, total: usize) -> f64 {
        let v = match *self {
            LambdaSchedule::Constant { value } => value,
            LambdaSchedule::HoldThenDecay { start, end, hold_fraction } => {
                let t = step as f64 / (total.max(2) - 1) as f64;
                if t <= hold_fraction {
                    start
                } else {
                    start + (end - start) * (t - hold_fraction) / (1.0 - hold_fraction)
                }
            }
        };
        v.clamp(0.0, 1.0)
    }
}

/// How classical likelihoods enter the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    /// The density itself.
    Raw,
    /// Density divided by its maximum over the initialization grid.
    GridNormalized,
    /// Log-density minus its grid maximum.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    /// Sammon weighting `1/(d + β)`; `None` uses plain squared errors.
    pub beta: Option<f64>,
    pub steps: usize,
    pub batch_pairs: usize,
    pub learning_rate: f64,
    /// Learning rate at the last step relative to the first (linear decay).
    pub final_lr_fraction: f64,
    pub seed: u64,
    pub lambda: LambdaSchedule,
    pub likelihood_mode: LikelihoodMode,
    /// Grid spacing for the likelihood normalization constants.
    pub grid_resolution_m: f64,
    /// Initial output bias, e.g. the scene center for world-coordinate
    /// training.
    pub output_bias_init: Option<[f64; 2]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128; 4],
            beta: Some(1.0),
            steps: 10_000,
            batch_pairs: 256,
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            seed: 0,
            lambda: LambdaSchedule::default(),
            likelihood_mode: LikelihoodMode::GridNormalized,
            grid_resolution_m: 0.5,
            output_bias_init: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_pairs == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::invalid("steps, batch_pairs and learning_rate must be positive"));
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0) {
                return Err(Error::invalid("beta must be non-negative"));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer sizes must be positive"));
        }
        Ok(())
    }
}

/// Trained forward charting function with input standardization and an
/// optional affine alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartModel {
    pub features: FeatureConfig,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub mlp: Mlp,
    pub affine: Option<Affine>,
}

impl ChartModel {
    fn standardize(&self, features: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let dim = self.input_shift.len();
        if let Some(f) = features.iter().find(|f| f.len() != dim) {
            return Err(Error::shape(format!("feature length {} does not match model input {dim}", f.len())));
        }
        Ok(DMatrix::from_fn(dim, features.len(), |r, c| (features[c][r] - self.input_shift[r]) * self.input_scale[r]))
    }

    /// Raw chart coordinates `C_θ(features)`.
    pub fn forward(&self, features: &[Vec<f64>]) -> Result<Vec<Vec2>> {
        let (y, _) = self.mlp.forward(&self.standardize(features)?)?;
        Ok(y.column_iter().map(|c| Vec2::new(c[0], c[1])).collect())
    }

    /// Positions after the affine alignment, if one is set.
    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<Vec2>> {
        let chart = self.forward(features)?;
        Ok(match &self.affine {
            Some(a) => chart.iter().map(|x| a.apply(x)).collect(),
            None => chart,
        })
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<Vec2>> {
        let features = dataset.points.iter().map(|p| extract_features(&p.csi, &self.features)).collect::<Result<Vec<_>>>()?;
        self.predict(&features)
    }

    /// Writes a length-prefixed JSON header followed by the parameters as
    /// little-endian `f32`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ModelHeader {
            format: "ccloc-chart".into(),
            version: MODEL_VERSION,
            layer_sizes: self.mlp.layer_sizes(),
            features: self.features,
            input_shift: self.input_shift.clone(),
            input_scale: self.input_scale.clone(),
            affine: self.affine,
            n_params: self.mlp.n_params(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + 4 * header.n_params);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.mlp.params() {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.len() < 8 {
            return Err(Error::format(path, "truncated header"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        if bytes.len() < 8 + hlen {
            return Err(Error::format(path, "truncated header"));
        }
        let header: ModelHeader = serde_json::from_slice(&bytes[8..8 + hlen]).map_err(|e| Error::format(path, e.to_string()))?;
        if header.format != "ccloc-chart" || header.version != MODEL_VERSION {
            return Err(Error::format(path, format!("unsupported model format {} v{}", header.format, header.version)));
        }
        let blob = &bytes[8 + hlen..];
        if blob.len() != 4 * header.n_params {
            return Err(Error::format(path, format!("expected {} parameters", header.n_params)));
        }
        let params: Vec<f64> = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let mut mlp = Mlp::new(&header.layer_sizes, 0)?;
        mlp.set_params(&params)?;
        if header.input_shift.len() != mlp.input_dim() || header.input_scale.len() != mlp.input_dim() {
            return Err(Error::format(path, "standardization does not match the input layer"));
        }
        Ok(Self {
            features: header.features,
            input_shift: header.input_shift,
            input_scale: header.input_scale,
            mlp,
            affine: header.affine,
        })
    }

    /// Rounds the parameters to `f32`, as stored on disk.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        let p: Vec<f64> = self.mlp.params().iter().map(|&v| v as f32 as f64).collect();
        out.mlp.set_params(&p).expect("same shape");
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    features: FeatureConfig,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    affine: Option<Affine>,
    n_params: usize,
}

/// Per-feature mean and inverse standard deviation.
fn standardization(features: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = features.len().max(1) as f64;
    let dim = features.first().map_or(0, |f| f.len());
    let mut shift = vec![0.0; dim];
    for f in features {
        for (s, v) in shift.iter_mut().zip(f) {
            *s += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for f in features {
        for ((s, v), m) in var.iter_mut().zip(f).zip(&shift) {
            *s += (v - m).powi(2) / n;
        }
    }
    let scale = var.iter().map(|v| if *v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    (shift, scale)
}

/// Classical likelihood of datapoint `l` at a chart position, with gradient.
pub trait PositionLikelihood {
    fn value_grad(&self, l: usize, x: &Vec2) -> (f64, Vec2);
}

/// `L_AoA · L_TDoA` from an estimate bundle, transformed per
/// [`LikelihoodMode`] with per-datapoint grid maxima.
pub struct AoaTdoaLikelihood<'a> {
    pub bundle: &'a EstimateBundle,
    pub scenario: &'a Scenario,
    pub mode: LikelihoodMode,
    /// Grid maximum of the log-likelihood per datapoint.
    pub log_max: Vec<f64>,
}

impl<'a> AoaTdoaLikelihood<'a> {
    pub fn new(bundle: &'a EstimateBundle, scenario: &'a Scenario, mode: LikelihoodMode, grid_resolution_m: f64) -> Result<Self> {
        let log_max = (0..bundle.len())
            .map(|l| {
                let f = |x: &Vec2| log_likelihood_aoa(x, bundle, l, scenario) + log_likelihood_tdoa(x, bundle, l, scenario);
                grid_initialize(f, &scenario.bounds, grid_resolution_m).map(|x| f(&x))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bundle, scenario, mode, log_max })
    }
}

impl PositionLikelihood for AoaTdoaLikelihood<'_> {
    fn value_grad(&self, l: usize, x: &Vec2) -> (f64, Vec2) {
        let (va, ga) = log_likelihood_aoa_grad(x, self.bundle, l, self.scenario);
        let (vt, gt) = log_likelihood_tdoa_grad(x, self.bundle, l, self.scenario);
        let ll = va + vt;
        let g = ga + gt;
        match self.mode {
            LikelihoodMode::Raw => {
                let v = ll.exp();
                (v, g * v)
            }
            LikelihoodMode::GridNormalized => {
                let v = (ll - self.log_max[l]).exp();
                (v, g * v)
            }
            LikelihoodMode::Log => (ll - self.log_max[l], g),
        }
    }
}

/// Objective of one training batch: the mean pair loss and its gradient
/// with respect to all network parameters.
///
/// `features` holds standardized inputs (one column per datapoint). With
/// `likelihood = None` the pair loss is `w(d)(d − ‖y − x‖)²`; otherwise it is
/// the combined loss with weight `lambda`.
pub fn batch_objective(
    mlp: &Mlp,
    features: &DMatrix<f64>,
    pairs: &[(usize, usize)],
    d: &DissimilarityMatrix,
    beta: Option<f64>,
    likelihood: Option<(&dyn PositionLikelihood, f64)>,
) -> Result<(f64, Vec<f64>)> {
    // Unique datapoints in first-seen order.
    let mut slot = std::collections::HashMap::new();
    let mut idx = Vec::new();
    for &(i, j) in pairs {
        for k in [i, j] {
            slot.entry(k).or_insert_with(|| {
                idx.push(k);
                idx.len() - 1
            });
        }
    }
    let x = DMatrix::from_fn(features.nrows(), idx.len(), |r, c| features[(r, idx[c])]);
    let (y, cache) = mlp.forward(&x)?;
    let mut grad_out = DMatrix::zeros(2, idx.len());
    let n = pairs.len() as f64;
    let lambda = likelihood.map_or(0.0, |(_, l)| l);
    let mut loss = 0.0;
    for &(i, j) in pairs {
        let (si, sj) = (slot[&i], slot[&j]);
        let p = Vec2::new(y[(0, si)], y[(1, si)]);
        let q = Vec2::new(y[(0, sj)], y[(1, sj)]);
        let dij = d.get(i, j);
        let w = pair_weight(dij, beta) * (1.0 - lambda);
        let diff = q - p;
        let r = diff.norm();
        loss += w * (dij - r).powi(2) / n;
        if r > 0.0 {
            // ∂/∂q of w(d − r)² is −2w(d − r)(q − p)/r.
            let g = diff * (-2.0 * w * (dij - r) / r / n);
            for k in 0..2 {
                grad_out[(k, sj)] += g[k];
                grad_out[(k, si)] -= g[k];
            }
        }
        if let Some((lik, lam)) = likelihood {
            for (l, s, pos) in [(i, si, p), (j, sj, q)] {
                let (v, g) = lik.value_grad(l, &pos);
                loss -= lam * v / n;
                for k in 0..2 {
                    grad_out[(k, s)] -= lam * g[k] / n;
                }
            }
        }
    }
    Ok((loss, mlp.backward(&cache, &grad_out)))
}

/// Training summary alongside the model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
}

fn sample_pairs(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<(usize, usize)> {
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect()
}

fn train(
    features: &[Vec<f64>],
    d: &DissimilarityMatrix,
    feature_config: FeatureConfig,
    config: &TrainConfig,
    likelihood: Option<&dyn PositionLikelihood>,
) -> Result<(ChartModel, TrainReport)> {
    config.validate()?;
    let n = features.len();
    if d.len() != n {
        return Err(Error::shape(format!("dissimilarity matrix is {}x{} for {n} datapoints", d.len(), d.len())));
    }
    if n < 2 {
        return Err(Error::invalid("training needs at least two datapoints"));
    }
    let (shift, scale) = standardization(features);
    let dim = shift.len();
    let mut sizes = vec![dim];
    sizes.extend(&config.hidden);
    sizes.push(2);
    let mut mlp = Mlp::new(&sizes, config.seed)?;
    if let Some(b) = config.output_bias_init {
        let last = mlp.biases.len() - 1;
        mlp.biases[last][0] = b[0];
        mlp.biases[last][1] = b[1];
    }
    let mut model = ChartModel { features: feature_config, input_shift: shift, input_scale: scale, mlp, affine: None };
    let x = model.standardize(features)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0F_C4A7);
    let mut params = model.mlp.params();
    let mut opt = Adam::new(params.len());
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let pairs = sample_pairs(&mut rng, n, config.batch_pairs);
        let lik = likelihood.map(|l| (l, config.lambda.at(step, config.steps)));
        let (loss, grad) = batch_objective(&model.mlp, &x, &pairs, d, config.beta, lik)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        history.push(loss);
        let frac = step as f64 / (config.steps.max(2) - 1) as f64;
        let lr = config.learning_rate * (1.0 + (config.final_lr_fraction - 1.0) * frac);
        opt.step(&mut params, &grad, lr);
        model.mlp.set_params(&params)?;
    }
    Ok((model, TrainReport { loss_history: history }))
}

/// Siamese training on precomputed features.
pub fn train_siamese_features(
    features: &[Vec<f64>],
    d: &DissimilarityMatrix,
    feature_config: FeatureConfig,
    config: &TrainConfig,
) -> Result<(ChartModel, TrainReport)> {
    train(features, d, feature_config, config, None)
}

/// Augmented training: the combined loss with the λ schedule.
pub fn train_augmented_features(
    features: &[Vec<f64>],
    d_scaled: &DissimilarityMatrix,
    likelihood: &dyn PositionLikelihood,
    feature_config: FeatureConfig,
    config: &TrainConfig,
) -> Result<(ChartModel, TrainReport)> {
    train(features, d_scaled, feature_config, config, Some(likelihood))
}

pub fn dataset_features(dataset: &Dataset, config: &FeatureConfig) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    dataset.points.par_iter().map(|p| extract_features(&p.csi, config)).collect()
}

pub fn train_siamese(dataset: &Dataset, d: &DissimilarityMatrix, features: FeatureConfig, config: &TrainConfig) -> Result<(ChartModel, TrainReport)> {
    train_siamese_features(&dataset_features(dataset, &features)?, d, features, config)
}

pub fn train_augmented(
    dataset: &Dataset,
    d_scaled: &DissimilarityMatrix,
    bundle: &EstimateBundle,
    scenario: &Scenario,
    features: FeatureConfig,
    config: &TrainConfig,
) -> Result<(ChartModel, TrainReport)> {
    if bundle.len() != dataset.len() {
        return Err(Error::shape(format!("bundle has {} datapoints, dataset {}", bundle.len(), dataset.len())));
    }
    let lik = AoaTdoaLikelihood::new(bundle, scenario, config.likelihood_mode, config.grid_resolution_m)?;
    train_augmented_features(&dataset_features(dataset, &features)?, d_scaled, &lik, features, config)
}

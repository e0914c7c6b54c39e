//! End-to-end stages shared by the CLI and the integration tests:
//! simulate → estimate → localize → dissimilarity → chart.

use std::path::PathBuf;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::aoa::{estimate_aoa_all, AoaEstimate};
use crate::charting::{dataset_features, fit_affine_transform, train_augmented_features, train_siamese_features, AoaTdoaLikelihood, ChartModel, FeatureConfig, TrainConfig};
use crate::dissimilarity::{compute_adp_all, estimate_scale_gamma, fuse_with_timestamps, geodesic_complete, raw_dissimilarity, AdpConfig, Calibration, DissimilarityMatrix};
use crate::error::{Error, Result};
use crate::likelihood::{EstimateBundle, QualityConfig};
use crate::model::{Dataset, Scenario, Vec2};
use crate::simulator::{derive_seed, l_shape_container, l_shape_sweep, l_shaped_scenario, random_positions, SimConfig, Simulator};
use crate::solver::{localize_dataset, Localization, Method, SolverConfig};
use crate::toa::{estimate_toa_all, ToaConfig, ToaEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryConfig {
    /// Serpentine sweep through the L-shaped area at constant speed.
    Sweep { n_points: usize, speed_mps: f64 },
    /// Uniform positions inside the scene bounds, one per second.
    Random { n_points: usize },
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig::Sweep { n_points: 300, speed_mps: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DissimilarityConfig {
    pub adp: AdpConfig,
    pub v_max_mps: f64,
    pub calibration: Calibration,
    pub k_neighbors: usize,
    /// Number of sampled pairs for the scale estimate; all pairs if `None`.
    pub gamma_pairs: Option<usize>,
}

impl Default for DissimilarityConfig {
    fn default() -> Self {
        Self { adp: AdpConfig::default(), v_max_mps: 1.0, calibration: Calibration::MedianAdjacent, k_neighbors: 20, gamma_pairs: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub scenario: Scenario,
    pub trajectory: TrajectoryConfig,
    pub sim: SimConfig,
    pub toa: ToaConfig,
    pub quality: QualityConfig,
    pub solver: SolverConfig,
    pub dissimilarity: DissimilarityConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    /// Methods included by `evaluate`; all available outputs if empty.
    pub methods: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset_dir: "data".into(),
            output_dir: "out".into(),
            seed: 0,
            scenario: l_shaped_scenario(256),
            trajectory: TrajectoryConfig::default(),
            sim: SimConfig { scatterer_count: 8, snr_db: Some(20.0), blockages: vec![l_shape_container()], ..SimConfig::default() },
            toa: ToaConfig::default(),
            quality: QualityConfig { sigma_min_s: Some(2e-9), c_sigma: 0.2, ..QualityConfig::default() },
            solver: SolverConfig::default(),
            dissimilarity: DissimilarityConfig::default(),
            features: FeatureConfig { adp: AdpConfig { n_beams: 8, n_delay_bins: 16 } },
            train: TrainConfig { hidden: vec![64; 3], steps: 3000, batch_pairs: 128, ..TrainConfig::default() },
            methods: Vec::new(),
        }
    }
}

/// Stage seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub noise: u64,
    pub scatterers: u64,
    pub trajectory: u64,
    pub training: u64,
    pub gamma: u64,
}

impl PipelineConfig {
    pub fn seeds(&self) -> Seeds {
        Seeds {
            noise: derive_seed(self.seed, 1),
            scatterers: derive_seed(self.seed, 2),
            trajectory: derive_seed(self.seed, 3),
            training: derive_seed(self.seed, 4),
            gamma: derive_seed(self.seed, 5),
        }
    }

    /// Simulator configuration with the derived seeds applied.
    pub fn sim_config(&self) -> SimConfig {
        let s = self.seeds();
        SimConfig { seed: s.noise, scatterer_seed: s.scatterers, ..self.sim.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seeds().training, ..self.train.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.sim.validate()?;
        self.toa.validate(self.scenario.ofdm.n_sub)?;
        self.solver.validate()?;
        self.train.validate()?;
        if self.dissimilarity.k_neighbors < 2 || !(self.dissimilarity.v_max_mps > 0.0) {
            return Err(Error::invalid("dissimilarity needs k_neighbors >= 2 and v_max_mps > 0"));
        }
        Ok(())
    }
}

pub fn trajectory(config: &PipelineConfig) -> Result<Vec<(f64, [f64; 2])>> {
    Ok(match config.trajectory {
        TrajectoryConfig::Sweep { n_points, speed_mps } => {
            if !(speed_mps > 0.0) {
                return Err(Error::invalid("sweep speed must be positive"));
            }
            l_shape_sweep(n_points, speed_mps)
        }
        TrajectoryConfig::Random { n_points } => random_positions(&config.scenario.bounds, n_points, config.seeds().trajectory),
    })
}

/// Simulated dataset and the per-array LoS fraction along the trajectory.
pub fn simulate(config: &PipelineConfig) -> Result<(Dataset, Vec<f64>)> {
    config.validate()?;
    let sim = Simulator::new(&config.scenario, &config.sim_config())?;
    let traj = trajectory(config)?;
    let dataset = sim.generate_dataset(&traj)?;
    let lifted: Vec<[f64; 3]> = dataset.points.iter().map(|p| p.position).collect();
    let los = crate::simulator::los_fraction(&sim, &lifted)?;
    Ok((dataset, los))
}

pub struct Estimates {
    pub toa: Vec<Vec<ToaEstimate>>,
    pub aoa: Vec<Vec<AoaEstimate>>,
    pub bundle: EstimateBundle,
}

pub fn estimate(dataset: &Dataset, scenario: &Scenario, toa: &ToaConfig, quality: &QualityConfig) -> Result<Estimates> {
    let toa_est = estimate_toa_all(dataset, scenario, toa)?;
    let aoa_est = estimate_aoa_all(dataset, scenario, &toa_est)?;
    let clipped = aoa_est.iter().flatten().filter(|a| a.clipped).count();
    if clipped > 0 {
        warn!("{clipped} azimuth estimates clipped to ±90°");
    }
    let bundle = EstimateBundle::from_estimates(&toa_est, &aoa_est, quality, scenario.ofdm.bandwidth_hz)?;
    Ok(Estimates { toa: toa_est, aoa: aoa_est, bundle })
}

pub fn localize(bundle: &EstimateBundle, scenario: &Scenario, method: Method, solver: &SolverConfig) -> Result<Vec<Localization>> {
    let out = localize_dataset(bundle, scenario, method, solver)?;
    let failed = out.iter().filter(|r| r.position.is_none()).count();
    let oob = out.iter().filter(|r| r.out_of_bounds).count();
    let unconverged = out.iter().filter(|r| r.position.is_some() && !r.converged).count();
    info!("{}: {} points, {failed} failed, {unconverged} not converged, {oob} far outside the scene", method.name(), out.len());
    Ok(out)
}

/// Raw ADP dissimilarities, fused with timestamps and completed to
/// geodesic distances.
pub fn geodesic_dissimilarity(dataset: &Dataset, config: &DissimilarityConfig) -> Result<DissimilarityMatrix> {
    use rayon::prelude::*;
    let adp = dataset.points.par_iter().map(|p| compute_adp_all(&p.csi, &config.adp)).collect::<Result<Vec<_>>>()?;
    let raw = raw_dissimilarity(&adp)?;
    let fused = fuse_with_timestamps(&raw, &dataset.timestamps(), config.v_max_mps, config.calibration)?;
    geodesic_complete(&fused, config.k_neighbors)
}

/// Valid `(index, position)` pairs of a localization run.
pub fn valid_estimates(estimates: &[Option<Vec2>]) -> Vec<(usize, Vec2)> {
    estimates.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p))).collect()
}

/// Scales geodesic dissimilarities to meters against classical estimates.
/// Returns the scaled matrix and γ̂.
pub fn scale_dissimilarity(geodesic: &DissimilarityMatrix, estimates: &[Option<Vec2>], config: &DissimilarityConfig, gamma_seed: u64) -> Result<(DissimilarityMatrix, f64)> {
    if estimates.len() != geodesic.len() {
        return Err(Error::shape(format!("{} estimates for {} datapoints", estimates.len(), geodesic.len())));
    }
    let valid = valid_estimates(estimates);
    let idx: Vec<usize> = valid.iter().map(|v| v.0).collect();
    let sub = DissimilarityMatrix::from_fn(geodesic.stage, idx.len(), |i, j| geodesic.get(idx[i], idx[j]));
    let pos: Vec<Vec2> = valid.iter().map(|v| v.1).collect();
    let gamma = estimate_scale_gamma(&sub, &pos, config.gamma_pairs.map(|n| (n, gamma_seed)))?;
    info!("dissimilarity scale γ̂ = {gamma:.6}");
    Ok((geodesic.scaled(1.0 / gamma), gamma))
}

/// Siamese chart aligned to the classical estimates by an affine map.
pub fn chart_siamese(dataset: &Dataset, scaled: &DissimilarityMatrix, estimates: &[Option<Vec2>], features: &FeatureConfig, train: &TrainConfig) -> Result<(ChartModel, Vec<Vec2>)> {
    let feats = dataset_features(dataset, features)?;
    let (mut model, report) = train_siamese_features(&feats, scaled, *features, train)?;
    info!("siamese training: final loss {:.6}", report.loss_history.last().copied().unwrap_or(f64::NAN));
    let chart = model.forward(&feats)?;
    let valid = valid_estimates(estimates);
    let z: Vec<Vec2> = valid.iter().map(|v| chart[v.0]).collect();
    let x: Vec<Vec2> = valid.iter().map(|v| v.1).collect();
    model.affine = Some(fit_affine_transform(&z, &x)?);
    let positions = model.predict(&feats)?;
    Ok((model, positions))
}

/// Augmented chart trained directly in world coordinates.
pub fn chart_augmented(
    dataset: &Dataset,
    scaled: &DissimilarityMatrix,
    bundle: &EstimateBundle,
    scenario: &Scenario,
    features: &FeatureConfig,
    train: &TrainConfig,
) -> Result<(ChartModel, Vec<Vec2>)> {
    let mut train = train.clone();
    if train.output_bias_init.is_none() {
        let c = scenario.bounds.bounding_box().center();
        train.output_bias_init = Some([c[0], c[1]]);
    }
    let feats = dataset_features(dataset, features)?;
    if bundle.len() != dataset.len() {
        return Err(Error::shape(format!("bundle has {} datapoints, dataset {}", bundle.len(), dataset.len())));
    }
    let lik = AoaTdoaLikelihood::new(bundle, scenario, train.likelihood_mode, train.grid_resolution_m)?;
    let (model, report) = train_augmented_features(&feats, scaled, &lik, *features, &train)?;
    info!("augmented training: final loss {:.6}", report.loss_history.last().copied().unwrap_or(f64::NAN));
    let positions = model.predict(&feats)?;
    Ok((model, positions))
}

//! Geometric single-bounce multipath channel simulator producing labelled
//! CSI datasets.
//!
//! Every array receives a LoS path (unless a blockage polygon cuts the
//! transmitter–array segment) plus one path per scatterer whose two legs are
//! both unobstructed. Gains fall off with total path length; scattered paths
//! carry an extra fixed attenuation and a per-(scatterer, array) random phase
//! drawn from the scatterer seed, so the channel is a smooth function of the
//! transmitter position.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::segment_hits_polygon;
use crate::model::{
    ArrayGeometry, CsiTensor, Datapoint, Dataset, OfdmConfig, Rect, Scenario, SceneBounds, Vec2, Vec3, SPEED_OF_LIGHT,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub delay_s: f64,
    pub gain: Complex64,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub is_los: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Number of randomly placed point scatterers.
    pub scatterer_count: usize,
    pub scatterer_seed: u64,
    /// Additional scatterers at fixed positions.
    pub scatterers: Vec<[f64; 3]>,
    pub scatterer_height_range: [f64; 2],
    /// Extra attenuation of scattered paths relative to free space, dB.
    pub scatter_loss_db: f64,
    /// Blocking obstacles (2D polygons, infinitely tall).
    pub blockages: Vec<Vec<[f64; 2]>>,
    /// Per-coefficient SNR; `None` simulates a noiseless channel.
    pub snr_db: Option<f64>,
    /// Master seed for noise.
    pub seed: u64,
    /// Unknown common transmit time added to every path delay.
    pub tot_offset_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scatterer_count: 0,
            scatterer_seed: 1,
            scatterers: Vec::new(),
            scatterer_height_range: [0.5, 3.0],
            scatter_loss_db: 6.0,
            blockages: Vec::new(),
            snr_db: None,
            seed: 0,
            tot_offset_s: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::invalid("snr_db must be finite"));
            }
        }
        if !self.scatter_loss_db.is_finite() || !self.tot_offset_s.is_finite() {
            return Err(Error::invalid("scatter_loss_db and tot_offset_s must be finite"));
        }
        if self.scatterer_height_range[0] > self.scatterer_height_range[1] {
            return Err(Error::invalid("scatterer_height_range is reversed"));
        }
        Ok(())
    }
}

/// Mixes a master seed with a datapoint index (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A scenario plus a resolved simulation configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    config: SimConfig,
    scatterers: Vec<Vec3>,
    /// Random phase per scatterer and array, `[s][b]`.
    scatter_phases: Vec<Vec<f64>>,
}

impl Simulator {
    pub fn new(scenario: &Scenario, config: &SimConfig) -> Result<Self> {
        scenario.validate()?;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.scatterer_seed);
        let region = scenario.bounds.bounding_box().scaled(1.3);
        let mut scatterers: Vec<Vec3> = config.scatterers.iter().map(|s| Vec3::from(*s)).collect();
        let [h_lo, h_hi] = config.scatterer_height_range;
        let mut attempts = 0;
        while scatterers.len() < config.scatterers.len() + config.scatterer_count {
            attempts += 1;
            if attempts > 10_000 * (config.scatterer_count + 1) {
                return Err(Error::invalid("could not place scatterers outside blockages"));
            }
            let x = region.min[0] + rng.random::<f64>() * (region.max[0] - region.min[0]);
            let y = region.min[1] + rng.random::<f64>() * (region.max[1] - region.min[1]);
            let z = h_lo + rng.random::<f64>() * (h_hi - h_lo);
            let p = Vec2::new(x, y);
            if config.blockages.iter().any(|poly| crate::geometry::point_in_polygon(&p, poly)) {
                continue;
            }
            scatterers.push(Vec3::new(x, y, z));
        }
        let b_count = scenario.arrays.b_count();
        let scatter_phases = (0..scatterers.len())
            .map(|_| (0..b_count).map(|_| 2.0 * PI * rng.random::<f64>()).collect())
            .collect();
        Ok(Self {
            scenario: scenario.clone(),
            config: config.clone(),
            scatterers,
            scatter_phases,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn scatterers(&self) -> &[Vec3] {
        &self.scatterers
    }

    fn blocked(&self, a: &Vec3, b: &Vec3) -> bool {
        let a2 = Vec2::new(a[0], a[1]);
        let b2 = Vec2::new(b[0], b[1]);
        self.config.blockages.iter().any(|poly| segment_hits_polygon(&a2, &b2, poly))
    }

    /// Propagation paths from `tx` to every array.
    pub fn synthesize_paths(&self, tx: &Vec3) -> Result<Vec<Vec<PathComponent>>> {
        let s = &self.scenario;
        if !s.bounds.contains(&Vec2::new(tx[0], tx[1])) || !tx.iter().all(|v| v.is_finite()) {
            return Err(Error::OutOfBounds { x: tx[0], y: tx[1] });
        }
        if (tx[2] - s.tx_height_m).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "transmitter height {} differs from scenario height {}",
                tx[2], s.tx_height_m
            )));
        }
        let wavelength = s.ofdm.wavelength();
        let fc = s.ofdm.carrier_frequency_hz;
        let extra = 10f64.powf(-self.config.scatter_loss_db / 20.0);
        let tot = self.config.tot_offset_s;
        let mut all = Vec::with_capacity(s.arrays.b_count());
        for b in 0..s.arrays.b_count() {
            let frame = s.arrays.frame(b);
            let z = frame.center;
            let mut paths = Vec::new();
            if !self.blocked(tx, &z) {
                let d = (tx - z).norm();
                let delay = d / SPEED_OF_LIGHT;
                let (az, el) = frame.direction(tx);
                paths.push(PathComponent {
                    delay_s: delay + tot,
                    gain: Complex64::from_polar(wavelength / (4.0 * PI * d), -2.0 * PI * fc * delay),
                    azimuth_rad: az,
                    elevation_rad: el,
                    is_los: true,
                });
            }
            for (si, sc) in self.scatterers.iter().enumerate() {
                if self.blocked(tx, sc) || self.blocked(sc, &z) {
                    continue;
                }
                let len = (tx - sc).norm() + (sc - z).norm();
                let delay = len / SPEED_OF_LIGHT;
                let (az, el) = frame.direction(sc);
                paths.push(PathComponent {
                    delay_s: delay + tot,
                    gain: Complex64::from_polar(
                        extra * wavelength / (4.0 * PI * len),
                        self.scatter_phases[si][b] - 2.0 * PI * fc * delay,
                    ),
                    azimuth_rad: az,
                    elevation_rad: el,
                    is_los: false,
                });
            }
            all.push(paths);
        }
        Ok(all)
    }

    /// Frequency-domain CSI for the given paths, with optional noise.
    pub fn paths_to_csi<R: Rng>(&self, paths: &[Vec<PathComponent>], rng: Option<&mut R>) -> CsiTensor {
        let mut csi = noiseless_csi(paths, &self.scenario.ofdm, &self.scenario.arrays);
        if let (Some(snr_db), Some(rng)) = (self.config.snr_db, rng) {
            add_noise(&mut csi, snr_db, rng);
        }
        csi
    }

    pub fn datapoint(&self, index: usize, t: f64, position: [f64; 2]) -> Result<Datapoint> {
        let tx = Vec3::new(position[0], position[1], self.scenario.tx_height_m);
        let paths = self.synthesize_paths(&tx)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, index as u64));
        let csi = self.paths_to_csi(&paths, Some(&mut rng));
        Ok(Datapoint {
            csi,
            position: [tx[0], tx[1], tx[2]],
            timestamp: t,
        })
    }

    /// One datapoint per trajectory sample `(t, [x1, x2])`.
    pub fn generate_dataset(&self, trajectory: &[(f64, [f64; 2])]) -> Result<Dataset> {
        if trajectory.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::invalid("trajectory timestamps must be strictly increasing"));
        }
        let points = trajectory
            .par_iter()
            .enumerate()
            .map(|(i, &(t, p))| self.datapoint(i, t, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { points })
    }
}

/// `H[b,r,c,n] = Σ gain · a_rc · exp(-j2π f_n τ)` with plane-wave steering.
pub fn noiseless_csi(paths: &[Vec<PathComponent>], ofdm: &OfdmConfig, arrays: &ArrayGeometry) -> CsiTensor {
    let shape = [arrays.b_count(), arrays.m_row, arrays.m_col, ofdm.n_sub];
    let mut csi = CsiTensor::zeros(shape);
    let wavelength = ofdm.wavelength();
    let k = 2.0 * PI / wavelength;
    let freqs: Vec<f64> = (0..ofdm.n_sub).map(|i| ofdm.subcarrier_frequency(i)).collect();
    for (b, array_paths) in paths.iter().enumerate().take(shape[0]) {
        let frame = arrays.frame(b);
        for path in array_paths {
            let (ca, sa) = (path.azimuth_rad.cos(), path.azimuth_rad.sin());
            let (ce, se) = (path.elevation_rad.cos(), path.elevation_rad.sin());
            let dir = frame.forward * (ce * ca) + frame.horizontal * (ce * sa) + frame.vertical * se;
            let ramp: Vec<Complex64> = freqs
                .iter()
                .map(|f| Complex64::from_polar(1.0, -2.0 * PI * f * path.delay_s))
                .collect();
            for r in 0..shape[1] {
                for c in 0..shape[2] {
                    let offset = arrays.element_offset(b, r, c, wavelength);
                    let g = path.gain * Complex64::from_polar(1.0, k * dir.dot(&offset));
                    for (h, e) in csi.element_mut(b, r, c).iter_mut().zip(&ramp) {
                        *h += g * e;
                    }
                }
            }
        }
    }
    csi
}

/// Adds circular complex Gaussian noise at the given per-coefficient SNR,
/// relative to the mean coefficient power of the whole tensor (unit noise
/// power when the tensor is empty).
pub fn add_noise<R: Rng>(csi: &mut CsiTensor, snr_db: f64, rng: &mut R) {
    let n = csi.values().len().max(1) as f64;
    let signal = csi.energy() / n;
    let noise_power = if signal > 0.0 { signal / 10f64.powf(snr_db / 10.0) } else { 1.0 };
    let std = (noise_power / 2.0).sqrt();
    for v in csi.values_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(re * std, im * std);
    }
}

pub fn synthesize_paths(scenario: &Scenario, sim: &SimConfig, tx: &Vec3) -> Result<Vec<Vec<PathComponent>>> {
    Simulator::new(scenario, sim)?.synthesize_paths(tx)
}

pub fn generate_dataset(scenario: &Scenario, sim: &SimConfig, trajectory: &[(f64, [f64; 2])]) -> Result<Dataset> {
    Simulator::new(scenario, sim)?.generate_dataset(trajectory)
}

/// Fraction of datapoints with a LoS path, per array.
pub fn los_fraction(sim: &Simulator, positions: &[[f64; 3]]) -> Result<Vec<f64>> {
    let b_count = sim.scenario().arrays.b_count();
    let mut counts = vec![0usize; b_count];
    for p in positions {
        let paths = sim.synthesize_paths(&Vec3::from(*p))?;
        for (b, list) in paths.iter().enumerate() {
            if list.iter().any(|p| p.is_los) {
                counts[b] += 1;
            }
        }
    }
    let n = positions.len().max(1) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// L-shaped demo scene inside a 14 m × 14 m box, modelled after an
/// industrial hall with four 2×4 arrays at the edges looking inward.
pub fn l_shaped_scenario(n_sub: usize) -> Scenario {
    let h = 1.0;
    Scenario {
        ofdm: OfdmConfig {
            carrier_frequency_hz: 1.272e9,
            bandwidth_hz: 50e6,
            n_sub,
        },
        arrays: ArrayGeometry {
            m_row: 2,
            m_col: 4,
            centers: vec![[-1.5, 3.0, h], [3.0, -1.5, h], [15.5, 3.0, h], [3.0, 15.5, h]],
            normals: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]],
        },
        tx_height_m: h,
        bounds: SceneBounds::Polygon {
            vertices: vec![[0.0, 0.0], [14.0, 0.0], [14.0, 6.0], [6.0, 6.0], [6.0, 14.0], [0.0, 14.0]],
        },
    }
}

/// Metal container at the inner corner of [`l_shaped_scenario`].
pub fn l_shape_container() -> Vec<[f64; 2]> {
    vec![[6.5, 6.5], [9.5, 6.5], [9.5, 9.5], [6.5, 9.5]]
}

/// Serpentine sweep through the L-shaped area, sampled at `n_points`
/// equidistant positions along the path at constant `speed` (m/s).
pub fn l_shape_sweep(n_points: usize, speed: f64) -> Vec<(f64, [f64; 2])> {
    let mut waypoints: Vec<Vec2> = Vec::new();
    let mut left_to_right = true;
    let mut y = 0.5;
    while y < 13.6 {
        let x_max = if y < 6.0 { 13.5 } else { 5.5 };
        let (a, b) = if left_to_right { (0.5, x_max) } else { (x_max, 0.5) };
        waypoints.push(Vec2::new(a, y));
        waypoints.push(Vec2::new(b, y));
        left_to_right = !left_to_right;
        y += 1.0;
    }
    sample_polyline(&waypoints, n_points, speed)
}

fn sample_polyline(waypoints: &[Vec2], n_points: usize, speed: f64) -> Vec<(f64, [f64; 2])> {
    let seg_len: Vec<f64> = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = seg_len.iter().sum();
    if n_points == 0 {
        return Vec::new();
    }
    let step = if n_points > 1 { total / (n_points - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(n_points);
    let mut seg = 0usize;
    let mut seg_start = 0.0;
    for i in 0..n_points {
        let s = (i as f64 * step).min(total);
        while seg + 1 < seg_len.len() && s > seg_start + seg_len[seg] {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let frac = if seg_len[seg] > 0.0 { ((s - seg_start) / seg_len[seg]).clamp(0.0, 1.0) } else { 0.0 };
        let p = waypoints[seg] + (waypoints[seg + 1] - waypoints[seg]) * frac;
        out.push((s / speed, [p[0], p[1]]));
    }
    out
}

/// Uniformly random positions inside `bounds`, with increasing timestamps.
pub fn random_positions(bounds: &SceneBounds, n_points: usize, seed: u64) -> Vec<(f64, [f64; 2])> {
    let bb: Rect = bounds.bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_points);
    while out.len() < n_points {
        let p = Vec2::new(
            bb.min[0] + rng.random::<f64>() * (bb.max[0] - bb.min[0]),
            bb.min[1] + rng.random::<f64>() * (bb.max[1] - bb.min[1]),
        );
        if bounds.contains(&p) {
            out.push((out.len() as f64, [p[0], p[1]]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_dataset;

    fn broadside_scenario() -> Scenario {
        Scenario {
            ofdm: OfdmConfig {
                carrier_frequency_hz: 1.272e9,
                bandwidth_hz: 50e6,
                n_sub: 64,
            },
            arrays: ArrayGeometry {
                m_row: 2,
                m_col: 4,
                centers: vec![[0.0, 0.0, 1.0], [5.0, -5.0, 1.0]],
                normals: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            },
            tx_height_m: 1.0,
            bounds: SceneBounds::Rect(Rect { min: [0.5, -4.0], max: [14.0, 8.0] }),
        }
    }

    #[test]
    fn free_space_broadside_path() {
        let s = broadside_scenario();
        let paths = synthesize_paths(&s, &SimConfig::default(), &Vec3::new(10.0, 0.0, 1.0)).unwrap();
        assert_eq!(paths[0].len(), 1);
        let p = paths[0][0];
        assert!(p.is_los);
        assert!((p.delay_s - 10.0 / SPEED_OF_LIGHT).abs() < 1e-18);
        assert!((p.delay_s * 1e9 - 33.356).abs() < 1e-3);
        assert!(p.azimuth_rad.abs() < 1e-12);
    }

    #[test]
    fn blockage_removes_los_for_one_array_only() {
        let s = broadside_scenario();
        let sim = SimConfig {
            blockages: vec![vec![[2.0, -1.0], [3.0, -1.0], [3.0, 1.0], [2.0, 1.0]]],
            ..SimConfig::default()
        };
        let paths = synthesize_paths(&s, &sim, &Vec3::new(6.0, 0.0, 1.0)).unwrap();
        assert!(!paths[0].iter().any(|p| p.is_los));
        assert!(paths[1].iter().any(|p| p.is_los));
    }

    #[test]
    fn scatterer_on_los_segment() {
        let s = broadside_scenario();
        let sim = SimConfig {
            scatterers: vec![[5.0, 0.0, 1.0]],
            ..SimConfig::default()
        };
        let paths = synthesize_paths(&s, &sim, &Vec3::new(10.0, 0.0, 1.0)).unwrap();
        assert_eq!(paths[0].len(), 2);
        let los = paths[0][0];
        let sc = paths[0][1];
        // 5 m + 5 m legs.
        assert!((sc.delay_s - 10.0 / SPEED_OF_LIGHT).abs() < 1e-18);
        assert!(!sc.is_los);
        assert!(sc.gain.norm() < los.gain.norm());
        assert!((los.gain.norm() / sc.gain.norm() - 10f64.powf(6.0 / 20.0)).abs() < 1e-9);
    }

    #[test]
    fn out_of_bounds_tx_is_rejected() {
        let s = broadside_scenario();
        let err = synthesize_paths(&s, &SimConfig::default(), &Vec3::new(-3.0, 0.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { .. }));
    }

    fn single_path(delay: f64, azimuth: f64, gain: Complex64) -> Vec<Vec<PathComponent>> {
        vec![
            vec![PathComponent { delay_s: delay, gain, azimuth_rad: azimuth, elevation_rad: 0.0, is_los: true }],
            vec![],
        ]
    }

    #[test]
    fn zero_delay_broadside_gives_constant_tensor() {
        let s = broadside_scenario();
        let g = Complex64::new(0.3, -0.4);
        let csi = noiseless_csi(&single_path(0.0, 0.0, g), &s.ofdm, &s.arrays);
        for r in 0..2 {
            for c in 0..4 {
                for h in csi.element(0, r, c) {
                    assert!((h - g).norm() < 1e-15);
                }
            }
        }
        assert!(csi.element(1, 0, 0).iter().all(|h| h.norm() == 0.0));
    }

    #[test]
    fn delay_gives_linear_phase_ramp() {
        let s = broadside_scenario();
        let tau = 37e-9;
        let csi = noiseless_csi(&single_path(tau, 0.0, Complex64::new(1.0, 0.0)), &s.ofdm, &s.arrays);
        let expected = -2.0 * PI * s.ofdm.subcarrier_spacing() * tau;
        let h = csi.element(0, 0, 0);
        for n in 1..h.len() {
            let step = (h[n] * h[n - 1].conj()).arg();
            assert!((step - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn thirty_degree_path_gives_quarter_turn_between_columns() {
        let s = broadside_scenario();
        let csi = noiseless_csi(&single_path(0.0, PI / 6.0, Complex64::new(1.0, 0.0)), &s.ofdm, &s.arrays);
        for r in 0..2 {
            for c in 1..4 {
                let step = (csi.get(0, r, c, 0) * csi.get(0, r, c - 1, 0).conj()).arg();
                assert!((step - PI / 2.0).abs() < 1e-12, "{step}");
            }
        }
    }

    #[test]
    fn doubling_gains_quadruples_energy() {
        let s = broadside_scenario();
        let sim = SimConfig { scatterer_count: 5, ..SimConfig::default() };
        let simulator = Simulator::new(&s, &sim).unwrap();
        let paths = simulator.synthesize_paths(&Vec3::new(7.0, 2.0, 1.0)).unwrap();
        let doubled: Vec<Vec<PathComponent>> = paths
            .iter()
            .map(|l| l.iter().map(|p| PathComponent { gain: p.gain * 2.0, ..*p }).collect())
            .collect();
        let e1 = noiseless_csi(&paths, &s.ofdm, &s.arrays).energy();
        let e2 = noiseless_csi(&doubled, &s.ofdm, &s.arrays).energy();
        assert!((e2 / e1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn noise_matches_requested_snr() {
        let s = broadside_scenario();
        let clean = noiseless_csi(&single_path(20e-9, 0.2, Complex64::new(1.0, 0.0)), &s.ofdm, &s.arrays);
        let mut noisy = clean.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        add_noise(&mut noisy, 10.0, &mut rng);
        let n = clean.values().len() as f64;
        let noise: f64 = noisy.values().iter().zip(clean.values()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / n;
        let signal = clean.energy() / n;
        let snr = 10.0 * (signal / noise).log10();
        assert!((snr - 10.0).abs() < 0.3, "{snr}");
    }

    #[test]
    fn dataset_generation_and_determinism() {
        let s = l_shaped_scenario(32);
        let sim = SimConfig {
            scatterer_count: 4,
            snr_db: Some(20.0),
            seed: 9,
            blockages: vec![l_shape_container()],
            ..SimConfig::default()
        };
        let traj = l_shape_sweep(500, 0.5);
        assert_eq!(traj.len(), 500);
        let bb = s.bounds.bounding_box();
        assert!(bb.max[0] - bb.min[0] <= 14.0 && bb.max[1] - bb.min[1] <= 14.0);
        let small: Vec<_> = traj.iter().step_by(25).copied().collect();
        let a = generate_dataset(&s, &sim, &small).unwrap();
        let b = generate_dataset(&s, &sim, &small).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(validate_dataset(&a, &s).is_valid());
        assert!(generate_dataset(&s, &sim, &[]).unwrap().is_empty());
    }

    #[test]
    fn full_sweep_has_500_points_and_validates() {
        let s = l_shaped_scenario(16);
        let traj = l_shape_sweep(500, 0.5);
        let ds = generate_dataset(&s, &SimConfig::default(), &traj).unwrap();
        assert_eq!(ds.len(), 500);
        assert!(validate_dataset(&ds, &s).is_valid());
    }

    #[test]
    fn repeated_position_gives_identical_noiseless_csi() {
        let s = l_shaped_scenario(32);
        let sim = SimConfig { scatterer_count: 3, ..SimConfig::default() };
        let ds = generate_dataset(&s, &sim, &[(0.0, [2.0, 2.0]), (1.0, [2.0, 2.0])]).unwrap();
        assert_eq!(ds.points[0].csi, ds.points[1].csi);
        assert_ne!(ds.points[0].timestamp, ds.points[1].timestamp);
    }

    #[test]
    fn non_increasing_trajectory_is_rejected() {
        let s = l_shaped_scenario(32);
        assert!(generate_dataset(&s, &SimConfig::default(), &[(1.0, [2.0, 2.0]), (1.0, [3.0, 2.0])]).is_err());
    }

    #[test]
    fn container_blocks_some_los() {
        let s = l_shaped_scenario(16);
        let sim = Simulator::new(&s, &SimConfig { blockages: vec![l_shape_container()], ..SimConfig::default() }).unwrap();
        let positions: Vec<[f64; 3]> = l_shape_sweep(200, 0.5).iter().map(|(_, p)| [p[0], p[1], 1.0]).collect();
        let frac = los_fraction(&sim, &positions).unwrap();
        assert!(frac.iter().any(|&f| f < 1.0));
        assert!(frac.iter().all(|&f| f > 0.3));
    }
}

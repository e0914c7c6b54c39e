//! Domain types shared by the whole pipeline: OFDM configuration, antenna
//! array geometry, CSI tensors, datapoints and dataset validation.
//!
//! Conventions used throughout the crate:
//!
//! * Subcarrier `i` (0-based) sits at baseband frequency
//!   `f_i = (i - N_sub/2) * bandwidth / N_sub`. In 1-based indexing this is
//!   `(n - N_sub/2 - 1) * Δf`, the offset used by LoS extraction.
//! * Each array has a local frame: `forward` is the horizontal projection of
//!   the normal, `horizontal = up × forward` and `vertical = forward × horizontal`.
//!   Columns are spaced along `horizontal`, rows along `vertical` (row 0 on
//!   top), at half a carrier wavelength.
//! * Azimuth is measured in the horizontal plane from `forward` towards
//!   `horizontal`, so 0 rad means the signal arrives from the front.

use nalgebra::{Vector2, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub n_sub: usize,
}

impl OfdmConfig {
    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth_hz / self.n_sub as f64
    }

    /// Baseband frequency of the 0-based subcarrier `i`.
    pub fn subcarrier_frequency(&self, i: usize) -> f64 {
        (i as f64 - (self.n_sub / 2) as f64) * self.subcarrier_spacing()
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sub < 8 || !self.n_sub.is_power_of_two() {
            return Err(Error::invalid(format!(
                "n_sub must be a power of two >= 8, got {}",
                self.n_sub
            )));
        }
        if !(self.bandwidth_hz > 0.0) || !self.bandwidth_hz.is_finite() {
            return Err(Error::invalid("bandwidth_hz must be positive"));
        }
        if !(self.carrier_frequency_hz > self.bandwidth_hz) || !self.carrier_frequency_hz.is_finite() {
            return Err(Error::invalid("carrier_frequency_hz must exceed bandwidth_hz"));
        }
        Ok(())
    }
}

/// Orthonormal local frame of one antenna array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayFrame {
    pub center: Vec3,
    pub forward: Vec3,
    pub horizontal: Vec3,
    pub vertical: Vec3,
}

impl ArrayFrame {
    /// Azimuth of `point` as seen from this array, relative to the normal.
    pub fn azimuth(&self, point: &Vec3) -> f64 {
        let d = point - self.center;
        d.dot(&self.horizontal).atan2(d.dot(&self.forward))
    }

    /// Azimuth of a 2D point and its gradient with respect to that point.
    pub fn azimuth_with_gradient(&self, x: &Vec2) -> (f64, Vec2) {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        let u = dx * self.horizontal[0] + dy * self.horizontal[1];
        let w = dx * self.forward[0] + dy * self.forward[1];
        let r2 = u * u + w * w;
        let az = u.atan2(w);
        if r2 == 0.0 {
            return (az, Vec2::zeros());
        }
        let g = Vec2::new(
            (w * self.horizontal[0] - u * self.forward[0]) / r2,
            (w * self.horizontal[1] - u * self.forward[1]) / r2,
        );
        (az, g)
    }

    /// Unit direction from the array towards `point`, split into
    /// (azimuth, elevation).
    pub fn direction(&self, point: &Vec3) -> (f64, f64) {
        let d = point - self.center;
        let horiz = (d.dot(&self.forward).powi(2) + d.dot(&self.horizontal).powi(2)).sqrt();
        (self.azimuth(point), d.dot(&self.vertical).atan2(horiz))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub m_row: usize,
    pub m_col: usize,
    pub centers: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
}

impl ArrayGeometry {
    pub fn b_count(&self) -> usize {
        self.centers.len()
    }

    pub fn center(&self, b: usize) -> Vec3 {
        Vec3::from(self.centers[b])
    }

    pub fn frame(&self, b: usize) -> ArrayFrame {
        let up = Vec3::z();
        let n = Vec3::from(self.normals[b]);
        let mut forward = Vec3::new(n[0], n[1], 0.0);
        if forward.norm() < 1e-12 {
            // Looking straight up or down: pick an arbitrary horizontal heading.
            forward = Vec3::x();
        }
        forward.normalize_mut();
        let horizontal = up.cross(&forward).normalize();
        let vertical = forward.cross(&horizontal);
        ArrayFrame {
            center: self.center(b),
            forward,
            horizontal,
            vertical,
        }
    }

    /// Position of element (row, col) relative to the array center.
    pub fn element_offset(&self, b: usize, row: usize, col: usize, wavelength: f64) -> Vec3 {
        let frame = self.frame(b);
        let half = 0.5 * wavelength;
        let c = col as f64 - (self.m_col as f64 - 1.0) / 2.0;
        let r = (self.m_row as f64 - 1.0) / 2.0 - row as f64;
        frame.horizontal * (c * half) + frame.vertical * (r * half)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_row == 0 || self.m_col == 0 {
            return Err(Error::invalid("arrays need at least one row and column"));
        }
        if self.centers.is_empty() {
            return Err(Error::invalid("at least one antenna array is required"));
        }
        if self.centers.len() != self.normals.len() {
            return Err(Error::invalid("centers and normals differ in length"));
        }
        for (b, n) in self.normals.iter().enumerate() {
            let norm = Vec3::from(*n).norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("normal of array {b} has norm {norm}")));
            }
        }
        for i in 0..self.centers.len() {
            if self.centers[i].iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("center of array {i} is not finite")));
            }
            for j in i + 1..self.centers.len() {
                if self.center(i) == self.center(j) {
                    return Err(Error::invalid(format!("arrays {i} and {j} share a center")));
                }
            }
        }
        Ok(())
    }
}

/// Axis-aligned rectangle in the horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn contains(&self, p: &Vec2) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1]))
    }

    pub fn diagonal(&self) -> f64 {
        ((self.max[0] - self.min[0]).powi(2) + (self.max[1] - self.min[1]).powi(2)).sqrt()
    }

    /// The rectangle scaled by `factor` about its center.
    pub fn scaled(&self, factor: f64) -> Rect {
        let c = self.center();
        let hx = 0.5 * (self.max[0] - self.min[0]) * factor;
        let hy = 0.5 * (self.max[1] - self.min[1]) * factor;
        Rect {
            min: [c[0] - hx, c[1] - hy],
            max: [c[0] + hx, c[1] + hy],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneBounds {
    Rect(Rect),
    Polygon { vertices: Vec<[f64; 2]> },
}

impl SceneBounds {
    pub fn bounding_box(&self) -> Rect {
        match self {
            SceneBounds::Rect(r) => *r,
            SceneBounds::Polygon { vertices } => {
                let mut min = [f64::INFINITY; 2];
                let mut max = [f64::NEG_INFINITY; 2];
                for v in vertices {
                    for k in 0..2 {
                        min[k] = min[k].min(v[k]);
                        max[k] = max[k].max(v[k]);
                    }
                }
                Rect { min, max }
            }
        }
    }

    /// Point-in-region test; polygon boundaries count as inside.
    pub fn contains(&self, p: &Vec2) -> bool {
        match self {
            SceneBounds::Rect(r) => r.contains(p),
            SceneBounds::Polygon { vertices } => {
                crate::geometry::point_on_polygon_boundary(p, vertices, 1e-9)
                    || crate::geometry::point_in_polygon(p, vertices)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bb = self.bounding_box();
        let ok = bb.min.iter().chain(bb.max.iter()).all(|v| v.is_finite())
            && bb.max[0] > bb.min[0]
            && bb.max[1] > bb.min[1];
        if let SceneBounds::Polygon { vertices } = self {
            if vertices.len() < 3 || crate::geometry::polygon_area(vertices).abs() < 1e-12 {
                return Err(Error::invalid("bounds polygon is degenerate"));
            }
        }
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("scene bounds are degenerate"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub ofdm: OfdmConfig,
    pub arrays: ArrayGeometry,
    pub tx_height_m: f64,
    pub bounds: SceneBounds,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.ofdm.validate()?;
        self.arrays.validate()?;
        self.bounds.validate()?;
        if !(0.0..=10.0).contains(&self.tx_height_m) {
            return Err(Error::invalid(format!(
                "tx_height_m must lie in [0, 10], got {}",
                self.tx_height_m
            )));
        }
        Ok(())
    }

    pub fn csi_shape(&self) -> [usize; 4] {
        [self.arrays.b_count(), self.arrays.m_row, self.arrays.m_col, self.ofdm.n_sub]
    }

    pub fn lift(&self, x: &Vec2) -> Vec3 {
        Vec3::new(x[0], x[1], self.tx_height_m)
    }

    /// Distance from the 2D position (at transmitter height) to array `b`.
    pub fn distance(&self, x: &Vec2, b: usize) -> f64 {
        (self.lift(x) - self.arrays.center(b)).norm()
    }
}

/// Complex frequency-domain channel of one datapoint, shape
/// `[B, M_row, M_col, N_sub]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiTensor {
    shape: [usize; 4],
    values: Vec<Complex64>,
}

impl CsiTensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            values: vec![Complex64::new(0.0, 0.0); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], values: Vec<Complex64>) -> Result<Self> {
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "{} values do not fill shape {:?}",
                values.len(),
                shape
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    fn offset(&self, b: usize, r: usize, c: usize, n: usize) -> usize {
        ((b * self.shape[1] + r) * self.shape[2] + c) * self.shape[3] + n
    }

    pub fn get(&self, b: usize, r: usize, c: usize, n: usize) -> Complex64 {
        self.values[self.offset(b, r, c, n)]
    }

    pub fn set(&mut self, b: usize, r: usize, c: usize, n: usize, v: Complex64) {
        let o = self.offset(b, r, c, n);
        self.values[o] = v;
    }

    /// All subcarriers of one antenna element.
    pub fn element(&self, b: usize, r: usize, c: usize) -> &[Complex64] {
        let o = self.offset(b, r, c, 0);
        &self.values[o..o + self.shape[3]]
    }

    pub fn element_mut(&mut self, b: usize, r: usize, c: usize) -> &mut [Complex64] {
        let o = self.offset(b, r, c, 0);
        let n = self.shape[3];
        &mut self.values[o..o + n]
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Multi-index of a flat offset.
    pub fn unravel(&self, flat: usize) -> [usize; 4] {
        let n = flat % self.shape[3];
        let rest = flat / self.shape[3];
        let c = rest % self.shape[2];
        let rest = rest / self.shape[2];
        let r = rest % self.shape[1];
        [rest / self.shape[1], r, c, n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datapoint {
    pub csi: CsiTensor,
    pub position: [f64; 3],
    pub timestamp: f64,
}

impl Datapoint {
    pub fn position_2d(&self) -> Vec2 {
        Vec2::new(self.position[0], self.position[1])
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub points: Vec<Datapoint>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions_2d(&self) -> Vec<Vec2> {
        self.points.iter().map(Datapoint::position_2d).collect()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.timestamp).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    ShapeMismatch { expected: [usize; 4], found: [usize; 4] },
    /// First non-finite coefficient and the number of non-finite entries.
    NonFiniteCsi { tensor_index: [usize; 4], count: usize },
    NonMonotoneTimestamp { previous: f64, current: f64 },
    OutOfBounds { position: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            ViolationKind::ShapeMismatch { expected, found } => write!(
                f,
                "datapoint {}: CSI shape {:?}, expected {:?}",
                self.index, found, expected
            ),
            ViolationKind::NonFiniteCsi { tensor_index, count } => write!(
                f,
                "datapoint {}: {} non-finite CSI value(s), first at {:?}",
                self.index, count, tensor_index
            ),
            ViolationKind::NonMonotoneTimestamp { previous, current } => write!(
                f,
                "datapoint {}: timestamp {} precedes {}",
                self.index, current, previous
            ),
            ViolationKind::OutOfBounds { position } => write!(
                f,
                "datapoint {}: position {:?} outside scene bounds",
                self.index, position
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every datapoint against the scenario. Violations are returned as
/// data; the dataset is never modified.
pub fn validate_dataset(dataset: &Dataset, scenario: &Scenario) -> ValidationReport {
    let expected = scenario.csi_shape();
    let mut violations = Vec::new();
    let mut previous: Option<f64> = None;
    for (index, point) in dataset.points.iter().enumerate() {
        let found = point.csi.shape();
        if found != expected {
            violations.push(Violation {
                index,
                kind: ViolationKind::ShapeMismatch { expected, found },
            });
        }
        let mut bad = point
            .csi
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| !(v.re.is_finite() && v.im.is_finite()));
        if let Some((first, _)) = bad.next() {
            violations.push(Violation {
                index,
                kind: ViolationKind::NonFiniteCsi {
                    tensor_index: point.csi.unravel(first),
                    count: 1 + bad.count(),
                },
            });
        }
        if let Some(prev) = previous {
            if !(point.timestamp >= prev) {
                violations.push(Violation {
                    index,
                    kind: ViolationKind::NonMonotoneTimestamp {
                        previous: prev,
                        current: point.timestamp,
                    },
                });
            }
        }
        previous = Some(match previous {
            Some(prev) if prev > point.timestamp => prev,
            _ => point.timestamp,
        });
        if !scenario.bounds.contains(&point.position_2d()) || point.position.iter().any(|v| !v.is_finite()) {
            violations.push(Violation {
                index,
                kind: ViolationKind::OutOfBounds { position: point.position },
            });
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scenario() -> Scenario {
        Scenario {
            ofdm: OfdmConfig {
                carrier_frequency_hz: 1.272e9,
                bandwidth_hz: 50e6,
                n_sub: 16,
            },
            arrays: ArrayGeometry {
                m_row: 2,
                m_col: 4,
                centers: vec![[-1.0, 0.0, 1.0], [5.0, -1.0, 1.0]],
                normals: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            },
            tx_height_m: 1.0,
            bounds: SceneBounds::Rect(Rect { min: [0.0, 0.0], max: [10.0, 10.0] }),
        }
    }

    fn dataset(n: usize) -> Dataset {
        let s = scenario();
        Dataset {
            points: (0..n)
                .map(|i| Datapoint {
                    csi: CsiTensor::zeros(s.csi_shape()),
                    position: [i as f64 * 0.5, 1.0, 1.0],
                    timestamp: i as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn well_formed_dataset_is_valid() {
        let report = validate_dataset(&dataset(10), &scenario());
        assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn single_nan_is_reported_once_with_its_index() {
        let mut ds = dataset(10);
        ds.points[3].csi.set(1, 0, 2, 7, Complex64::new(f64::NAN, 0.0));
        let report = validate_dataset(&ds, &scenario());
        assert_eq!(
            report.violations,
            vec![Violation {
                index: 3,
                kind: ViolationKind::NonFiniteCsi { tensor_index: [1, 0, 2, 7], count: 1 }
            }]
        );
    }

    #[test]
    fn timestamp_regression_is_reported_at_later_index() {
        let mut ds = dataset(3);
        ds.points[0].timestamp = 0.0;
        ds.points[1].timestamp = 2.0;
        ds.points[2].timestamp = 1.0;
        let report = validate_dataset(&ds, &scenario());
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].index, 2);
        assert!(matches!(report.violations[0].kind, ViolationKind::NonMonotoneTimestamp { .. }));
    }

    #[test]
    fn shape_and_bounds_violations() {
        let mut ds = dataset(2);
        ds.points[0].csi = CsiTensor::zeros([1, 2, 4, 16]);
        ds.points[1].position = [20.0, 1.0, 1.0];
        let report = validate_dataset(&ds, &scenario());
        assert_eq!(report.violations.len(), 2);
        assert!(matches!(report.violations[0].kind, ViolationKind::ShapeMismatch { .. }));
        assert!(matches!(report.violations[1].kind, ViolationKind::OutOfBounds { .. }));
    }

    #[test]
    fn validation_is_idempotent() {
        let mut ds = dataset(4);
        ds.points[2].timestamp = -1.0;
        let before = ds.clone();
        let a = validate_dataset(&ds, &scenario());
        let b = validate_dataset(&ds, &scenario());
        assert_eq!(a, b);
        assert_eq!(ds, before);
    }

    #[test]
    fn subcarrier_frequencies_follow_centered_convention() {
        let ofdm = scenario().ofdm;
        let df = ofdm.subcarrier_spacing();
        assert_eq!(ofdm.subcarrier_frequency(0), -8.0 * df);
        assert_eq!(ofdm.subcarrier_frequency(8), 0.0);
        assert_eq!(ofdm.subcarrier_frequency(15), 7.0 * df);
    }

    #[test]
    fn frame_is_orthonormal_and_azimuth_positive_to_the_left() {
        let s = scenario();
        let f = s.arrays.frame(0);
        assert!((f.forward.dot(&f.horizontal)).abs() < 1e-15);
        assert!((f.vertical - Vec3::z()).norm() < 1e-15);
        // Array 0 looks along +x; a point at +y is 90 degrees to the left.
        let az = f.azimuth(&Vec3::new(-1.0, 1.0, 1.0));
        assert!((az - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let offsets: Vec<Vec3> = (0..4)
            .map(|c| s.arrays.element_offset(0, 0, c, 0.2) + s.arrays.element_offset(0, 1, c, 0.2))
            .collect();
        let sum: Vec3 = offsets.iter().sum();
        assert!(sum.norm() < 1e-12, "elements are symmetric about the center");
    }

    #[test]
    fn scenario_validation_rejects_bad_configs() {
        let mut s = scenario();
        assert!(s.validate().is_ok());
        s.ofdm.n_sub = 12;
        assert!(s.validate().is_err());
        let mut s = scenario();
        s.arrays.normals[0] = [2.0, 0.0, 0.0];
        assert!(s.validate().is_err());
        let mut s = scenario();
        s.tx_height_m = 11.0;
        assert!(s.validate().is_err());
        let mut s = scenario();
        s.bounds = SceneBounds::Rect(Rect { min: [0.0, 0.0], max: [0.0, 5.0] });
        assert!(s.validate().is_err());
    }
}

//! Least-squares affine alignment of chart coordinates to world coordinates.

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vec2;

/// `x ↦ A x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    /// Row-major.
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl Affine {
    pub fn new(a: [[f64; 2]; 2], b: [f64; 2]) -> Result<Self> {
        if a.iter().flatten().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::invalid("affine parameters must be finite"));
        }
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if det.abs() <= 1e-9 {
            return Err(Error::Numerical(format!("affine map is singular (det = {det:e})")));
        }
        Ok(Self { a, b })
    }

    pub fn identity() -> Self {
        Self { a: [[1.0, 0.0], [0.0, 1.0]], b: [0.0, 0.0] }
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.a[0][0], self.a[0][1], self.a[1][0], self.a[1][1])
    }

    pub fn apply(&self, x: &Vec2) -> Vec2 {
        self.matrix() * x + Vec2::new(self.b[0], self.b[1])
    }
}

/// Minimizes `Σ ‖A z_l + b − x_l‖²` over `(A, b)`.
///
/// Fails on fewer than three points or (near-)collinear chart points.
pub fn fit_affine_transform(chart: &[Vec2], world: &[Vec2]) -> Result<Affine> {
    if chart.len() != world.len() {
        return Err(Error::shape(format!("{} chart points vs {} world points", chart.len(), world.len())));
    }
    if chart.len() < 3 {
        return Err(Error::invalid("affine fit needs at least three points"));
    }
    if chart.iter().chain(world).any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::invalid("non-finite coordinates"));
    }
    // Center first for conditioning.
    let n = chart.len() as f64;
    let cz = chart.iter().sum::<Vec2>() / n;
    let cx = world.iter().sum::<Vec2>() / n;
    let design = DMatrix::from_fn(chart.len(), 2, |r, c| chart[r][c] - cz[c]);
    let target = DMatrix::from_fn(world.len(), 2, |r, c| world[r][c] - cx[c]);
    let svd = design.svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smax > 0.0) || smin / smax < 1e-12 {
        return Err(Error::Numerical("chart points are collinear; affine map is not identifiable".into()));
    }
    let sol = svd.solve(&target, 0.0).map_err(|e| Error::Numerical(e.to_string()))?;
    // sol is (2 × 2) with x_c = Σ_k z_k sol[k, c], i.e. A = solᵀ.
    let a = Matrix2::new(sol[(0, 0)], sol[(1, 0)], sol[(0, 1)], sol[(1, 1)]);
    let b = cx - a * cz;
    Affine::new([[a[(0, 0)], a[(0, 1)]], [a[(1, 0)], a[(1, 1)]]], [b[0], b[1]])
}

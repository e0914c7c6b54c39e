//! Subspace machinery shared by delay and angle estimation: sample
//! autocorrelation, forward-backward averaging, MDL model order selection and
//! root-MUSIC.
//!
//! Steering vectors follow `v_n = exp(j * phase * n)`; the phase of a
//! root-MUSIC root is the per-element phase step of the source it belongs to.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Hermitian sample covariance together with the number of snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<Complex64>,
    pub snapshots: usize,
}

impl CovarianceEstimate {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Eigenvalues in descending order with matching eigenvector columns.
    pub fn eigen_descending(&self) -> (Vec<f64>, DMatrix<Complex64>) {
        let eig = SymmetricEigen::new(self.matrix.clone());
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(self.dim(), self.dim(), |r, c| eig.eigenvectors[(r, order[c])]);
        (values, vectors)
    }
}

/// One source recovered by root-MUSIC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceEstimate {
    /// Angle of the root in (-π, π].
    pub phase: f64,
    /// Physical parameter obtained from the phase (delay, azimuth, ...).
    pub parameter: f64,
    /// Least-squares power of the unit-norm steering vector in the covariance.
    pub power: f64,
}

/// `R = (1/N) Σ h h^H` over all snapshots.
pub fn estimate_autocorrelation<'a, I>(snapshots: I) -> Result<CovarianceEstimate>
where
    I: IntoIterator<Item = &'a [Complex64]>,
{
    let mut iter = snapshots.into_iter().peekable();
    let dim = match iter.peek() {
        Some(first) => first.len(),
        None => return Err(Error::invalid("autocorrelation needs at least one snapshot")),
    };
    let mut acc = DMatrix::<Complex64>::zeros(dim, dim);
    let mut count = 0usize;
    for h in iter {
        if h.len() != dim {
            return Err(Error::shape(format!("snapshot of length {} among length {dim}", h.len())));
        }
        // Accumulate the upper triangle, mirror afterwards.
        for q in 0..dim {
            let hq = h[q].conj();
            for p in 0..=q {
                acc[(p, q)] += h[p] * hq;
            }
        }
        count += 1;
    }
    let scale = 1.0 / count as f64;
    for q in 0..dim {
        for p in 0..=q {
            let v = acc[(p, q)] * scale;
            acc[(p, q)] = v;
            acc[(q, p)] = v.conj();
        }
        acc[(q, q)].im = 0.0;
    }
    Ok(CovarianceEstimate { matrix: acc, snapshots: count })
}

/// Forward-backward averaging `½(R + J R* J)`.
pub fn forward_backward_average(cov: &CovarianceEstimate) -> Result<CovarianceEstimate> {
    let n = cov.matrix.nrows();
    if cov.matrix.ncols() != n {
        return Err(Error::shape("forward-backward averaging needs a square matrix"));
    }
    let r = &cov.matrix;
    let mut out = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = (r[(i, j)] + r[(n - 1 - i, n - 1 - j)].conj()) * 0.5;
        }
    }
    // Symmetrize so that Hermitian and persymmetric hold bit-exactly.
    for i in 0..n {
        for j in i..n {
            let v = (out[(i, j)] + out[(j, i)].conj()) * 0.5;
            out[(i, j)] = v;
            out[(j, i)] = v.conj();
        }
    }
    for i in 0..n {
        for j in 0..n {
            let (pi, pj) = (n - 1 - j, n - 1 - i);
            if (pi, pj) > (i, j) {
                let v = (out[(i, j)] + out[(pi, pj)]) * 0.5;
                out[(i, j)] = v;
                out[(pi, pj)] = v;
            }
        }
    }
    for i in 0..n {
        out[(i, i)].im = 0.0;
    }
    Ok(CovarianceEstimate { matrix: out, snapshots: cov.snapshots })
}

/// Wax–Kailath MDL score of model order `k` for descending eigenvalues.
/// Eigenvalues are floored at `1e-12 · λ_max` so that numerically singular
/// covariances still produce finite scores.
pub fn mdl_score(eigenvalues: &[f64], n_snapshots: usize, k: usize) -> f64 {
    let v = eigenvalues.len();
    let floor = eigenvalues[0].max(0.0) * 1e-12;
    let tail: Vec<f64> = eigenvalues[k..].iter().map(|&l| l.max(floor)).collect();
    let m = (v - k) as f64;
    let log_geo = tail.iter().map(|l| l.ln()).sum::<f64>() / m;
    let log_arith = (tail.iter().sum::<f64>() / m).ln();
    let n = n_snapshots as f64;
    -n * m * (log_geo - log_arith) + 0.5 * k as f64 * (2.0 * v as f64 - k as f64) * n.ln()
}

/// Number of sources minimizing the MDL criterion over `k = 0..V-1`.
pub fn estimate_source_count_mdl(eigenvalues: &[f64], n_snapshots: usize) -> Result<usize> {
    if eigenvalues.is_empty() {
        return Err(Error::invalid("no eigenvalues"));
    }
    if n_snapshots == 0 {
        return Err(Error::invalid("n_snapshots must be at least 1"));
    }
    if eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("eigenvalues must be sorted in descending order"));
    }
    if !(eigenvalues[0] > 0.0) {
        return Err(Error::invalid("all eigenvalues are zero"));
    }
    let mut best = (0usize, f64::INFINITY);
    for k in 0..eigenvalues.len() {
        let score = mdl_score(eigenvalues, n_snapshots, k);
        if score < best.1 {
            best = (k, score);
        }
    }
    Ok(best.0)
}

/// Roots of `Σ coeffs[i] z^i` from the eigenvalues of its companion matrix.
/// Zero leading coefficients (roots at infinity) are dropped; zero trailing
/// coefficients yield roots at the origin.
pub fn polynomial_roots(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Numerical("polynomial has no finite non-zero coefficient".into()));
    }
    let tiny = scale * 1e-14;
    let hi = coeffs.iter().rposition(|c| c.norm() > tiny).unwrap_or(0);
    let lo = coeffs.iter().position(|c| c.norm() > tiny).unwrap_or(0);
    let mut roots = vec![ZERO; lo];
    let deg = hi - lo;
    if deg == 0 {
        return Ok(roots);
    }
    let monic: Vec<Complex64> = coeffs[lo..=hi].iter().map(|c| c / coeffs[hi]).collect();
    // Companion matrix in upper Hessenberg form: ones on the subdiagonal,
    // negated monic coefficients in the first row.
    let mut h = vec![ZERO; deg * deg];
    for j in 0..deg {
        h[j] = -monic[deg - 1 - j];
    }
    for i in 1..deg {
        h[i * deg + i - 1] = Complex64::new(1.0, 0.0);
    }
    roots.extend(hessenberg_eigenvalues(&mut h, deg)?);
    Ok(roots)
}

/// Eigenvalues of a complex upper Hessenberg matrix (row-major, overwritten)
/// by shifted QR iteration with Givens rotations.
fn hessenberg_eigenvalues(h: &mut [Complex64], n: usize) -> Result<Vec<Complex64>> {
    let at = |i: usize, j: usize| i * n + j;
    let mut eig = vec![ZERO; n];
    let mut rot: Vec<(Complex64, Complex64)> = vec![(ZERO, ZERO); n];
    let mut hi = n as isize - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    while hi >= 0 {
        let h_us = hi as usize;
        // Deflation search.
        let mut l = h_us;
        while l > 0 {
            let s = h[at(l - 1, l - 1)].l1_norm() + h[at(l, l)].l1_norm();
            let sub = h[at(l, l - 1)].l1_norm();
            if sub <= f64::EPSILON * s || sub < f64::MIN_POSITIVE {
                h[at(l, l - 1)] = ZERO;
                break;
            }
            l -= 1;
        }
        if l == h_us {
            eig[h_us] = h[at(h_us, h_us)];
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        total += 1;
        if total > 60 * n + 100 {
            return Err(Error::Numerical("QR iteration did not converge".into()));
        }
        let shift = if iter % 11 == 10 {
            // Exceptional shift to break cycles.
            h[at(h_us, h_us)] + Complex64::new(h[at(h_us, h_us - 1)].norm() * 0.75, 0.0)
        } else {
            let a = h[at(h_us - 1, h_us - 1)];
            let b = h[at(h_us - 1, h_us)];
            let c = h[at(h_us, h_us - 1)];
            let d = h[at(h_us, h_us)];
            let half = (a - d) * 0.5;
            let disc = (half * half + b * c).sqrt();
            let m1 = d - b * c / (half + disc);
            let m2 = d - b * c / (half - disc);
            let pick = |m: Complex64| if m.is_finite() { Some(m) } else { None };
            match (pick(m1), pick(m2)) {
                (Some(x), Some(y)) => {
                    if (x - d).norm() <= (y - d).norm() {
                        x
                    } else {
                        y
                    }
                }
                (Some(x), None) | (None, Some(x)) => x,
                (None, None) => d,
            }
        };
        for k in l..=h_us {
            h[at(k, k)] -= shift;
        }
        // H - σI = QR: left rotations.
        for k in l..h_us {
            let x = h[at(k, k)];
            let y = h[at(k + 1, k)];
            let r = x.norm().hypot(y.norm());
            if r == 0.0 {
                rot[k] = (Complex64::new(1.0, 0.0), ZERO);
                continue;
            }
            let (cx, cy) = (x / r, y / r);
            rot[k] = (cx, cy);
            for j in k..=h_us {
                let u = h[at(k, j)];
                let v = h[at(k + 1, j)];
                h[at(k, j)] = cx.conj() * u + cy.conj() * v;
                h[at(k + 1, j)] = -cy * u + cx * v;
            }
        }
        // RQ: right rotations with the adjoint.
        for k in l..h_us {
            let (cx, cy) = rot[k];
            let top = (k + 2).min(h_us);
            for i in l..=top {
                let u = h[at(i, k)];
                let v = h[at(i, k + 1)];
                h[at(i, k)] = u * cx + v * cy;
                h[at(i, k + 1)] = -u * cy.conj() + v * cx.conj();
            }
        }
        for k in l..=h_us {
            h[at(k, k)] += shift;
        }
    }
    Ok(eig)
}

/// Coefficients (ascending powers) of the root-MUSIC polynomial
/// `z^(V-1) · a(1/z)^T P a(z)` for the projector `P`.
pub fn music_polynomial(projector: &DMatrix<Complex64>) -> Vec<Complex64> {
    let v = projector.nrows();
    let mut coeffs = vec![ZERO; 2 * v - 1];
    for p in 0..v {
        for q in 0..v {
            coeffs[q + v - 1 - p] += projector[(p, q)];
        }
    }
    coeffs
}

fn unit_steering(phase: f64, v: usize) -> DVector<Complex64> {
    let norm = 1.0 / (v as f64).sqrt();
    DVector::from_fn(v, |n, _| Complex64::from_polar(norm, phase * n as f64))
}

/// root-MUSIC with `k` sources. `mapping` converts a root phase into the
/// physical parameter. Results are sorted by descending power.
pub fn root_music<F>(cov: &CovarianceEstimate, k: usize, mapping: F) -> Result<Vec<SourceEstimate>>
where
    F: Fn(f64) -> f64,
{
    let v = cov.dim();
    if k == 0 || k >= v {
        return Err(Error::invalid(format!("root-MUSIC needs 1 <= k < V, got k={k}, V={v}")));
    }
    if cov.matrix.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("covariance has non-finite entries".into()));
    }
    let (_, vectors) = cov.eigen_descending();
    let noise = vectors.columns(k, v - k);
    let projector = &noise * noise.adjoint();
    let roots = polynomial_roots(&music_polynomial(&projector))?;

    // Roots pair up as (z, 1/z*); keep the ones inside the unit circle,
    // closest to it first.
    let mut inside: Vec<Complex64> = roots.iter().copied().filter(|z| z.norm() <= 1.0).collect();
    if inside.len() < k {
        inside = roots.clone();
    }
    inside.sort_by(|a, b| (1.0 - a.norm()).abs().total_cmp(&(1.0 - b.norm()).abs()));
    let phases: Vec<f64> = inside.iter().take(k).map(|z| z.arg()).collect();
    if phases.len() < k {
        return Err(Error::Numerical(format!("only {} roots for {k} sources", phases.len())));
    }

    let powers = steering_powers(&cov.matrix, &phases);
    let mut out: Vec<SourceEstimate> = phases
        .iter()
        .zip(powers)
        .map(|(&phase, power)| SourceEstimate { phase, parameter: mapping(phase), power })
        .collect();
    out.sort_by(|a, b| b.power.total_cmp(&a.power));
    Ok(out)
}

/// Non-negative least-squares-style fit of `R ≈ Σ p_i a_i a_i^H` with unit
/// norm steering vectors `a_i`.
fn steering_powers(r: &DMatrix<Complex64>, phases: &[f64]) -> Vec<f64> {
    let v = r.nrows();
    let k = phases.len();
    let steering: Vec<DVector<Complex64>> = phases.iter().map(|&p| unit_steering(p, v)).collect();
    let gram = DMatrix::from_fn(k, k, |i, j| steering[i].dotc(&steering[j]).norm_sqr());
    let rhs = DVector::from_fn(k, |i, _| steering[i].dotc(&(r * &steering[i])).re);
    let solution = gram
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .unwrap_or_else(|_| rhs.clone());
    solution.iter().map(|p| if p.is_finite() { p.max(0.0) } else { 0.0 }).collect()
}

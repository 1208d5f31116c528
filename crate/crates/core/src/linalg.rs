//! Dense real linear algebra used by the decoder and the bound calculators.
//!
//! Everything here works on `ndarray` matrices. Inversion goes through an LU
//! factorization with partial pivoting. Extreme eigenvalues and spectral
//! norms come from a dense symmetric eigensolver by default; power iteration
//! (with inverse iteration for the smallest eigenvalue) is available through
//! [`EigenMethod::Iterative`]. The iterative path is cheap for small, well
//! separated spectra but stalls on the clustered spectrum edges of large
//! random frames.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

pub type Matrix = Array2<f64>;
pub type Vector = Array1<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular to working precision (pivot {pivot:e} in column {column})")]
    SingularMatrix { column: usize, pivot: f64 },
    #[error("inverse residual {residual:e} exceeds tolerance {tolerance:e}")]
    InaccurateInverse { residual: f64, tolerance: f64 },
    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("power iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("matrix is empty")]
    Empty,
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// How extreme eigenvalues are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenMethod {
    /// Full symmetric eigendecomposition (Householder tridiagonalization and implicit QR).
    #[default]
    Dense,
    /// Power iteration for the largest eigenvalue, inverse iteration for the smallest.
    Iterative,
}

/// Tolerances shared by the routines in this module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinalgConfig {
    pub eigen_method: EigenMethod,
    /// A pivot is rejected when `|pivot| < pivot_rel_tol * max|entry|`.
    pub pivot_rel_tol: f64,
    /// Bound on `max|M M^-1 - I|` accepted by [`invert`].
    pub inverse_residual_tol: f64,
    /// Relative accuracy target of power iteration.
    pub power_tol: f64,
    pub max_iter: usize,
    /// Accepted `max|M - M^T| / max|M|` for symmetric inputs.
    pub symmetry_tol: f64,
}

impl Default for LinalgConfig {
    fn default() -> Self {
        Self {
            eigen_method: EigenMethod::Dense,
            pivot_rel_tol: 1e-12,
            inverse_residual_tol: 1e-8,
            power_tol: 1e-8,
            max_iter: 10_000,
            symmetry_tol: 1e-10,
        }
    }
}

fn check_finite(m: &ArrayView2<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

fn max_abs(m: &ArrayView2<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// LU factorization `P M = L U` with partial pivoting, stored packed and row-major.
#[derive(Debug, Clone)]
pub struct Lu {
    dim: usize,
    packed: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(m: ArrayView2<f64>, cfg: &LinalgConfig) -> Result<Self> {
        let (rows, cols) = m.dim();
        if rows != cols {
            return Err(LinalgError::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(LinalgError::Empty);
        }
        check_finite(&m)?;
        let n = rows;
        let threshold = cfg.pivot_rel_tol * max_abs(&m);
        let mut a: Vec<f64> = m.iter().copied().collect();
        let mut perm: Vec<usize> = (0..n).collect();

        for k in 0..n {
            let (mut piv_row, mut piv_val) = (k, a[k * n + k].abs());
            for i in (k + 1)..n {
                let v = a[i * n + k].abs();
                if v > piv_val {
                    piv_row = i;
                    piv_val = v;
                }
            }
            if piv_val <= threshold || piv_val == 0.0 {
                return Err(LinalgError::SingularMatrix {
                    column: k,
                    pivot: piv_val,
                });
            }
            if piv_row != k {
                for j in 0..n {
                    a.swap(k * n + j, piv_row * n + j);
                }
                perm.swap(k, piv_row);
            }
            let pivot = a[k * n + k];
            let (upper, lower) = a.split_at_mut((k + 1) * n);
            let pivot_row = &upper[k * n..(k + 1) * n];
            for row in lower.chunks_exact_mut(n) {
                let factor = row[k] / pivot;
                row[k] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        row[j] -= factor * pivot_row[j];
                    }
                }
            }
        }
        Ok(Self {
            dim: n,
            packed: a,
            perm,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `M X = B` for a row-major right-hand side with `dim` rows.
    pub fn solve_matrix(&self, rhs: ArrayView2<f64>) -> Matrix {
        let n = self.dim;
        let width = rhs.ncols();
        assert_eq!(rhs.nrows(), n, "right-hand side has wrong row count");
        let mut x = vec![0.0; n * width];
        for (i, &p) in self.perm.iter().enumerate() {
            for (dst, src) in x[i * width..(i + 1) * width].iter_mut().zip(rhs.row(p)) {
                *dst = *src;
            }
        }
        // forward substitution with unit-diagonal L
        for i in 1..n {
            let (done, rest) = x.split_at_mut(i * width);
            let row_i = &mut rest[..width];
            for j in 0..i {
                let l = self.packed[i * n + j];
                if l != 0.0 {
                    let row_j = &done[j * width..(j + 1) * width];
                    for (t, s) in row_i.iter_mut().zip(row_j) {
                        *t -= l * s;
                    }
                }
            }
        }
        // back substitution
        for i in (0..n).rev() {
            let (head, tail) = x.split_at_mut((i + 1) * width);
            let row_i = &mut head[i * width..];
            for j in (i + 1)..n {
                let u = self.packed[i * n + j];
                if u != 0.0 {
                    let row_j = &tail[(j - i - 1) * width..(j - i) * width];
                    for (t, s) in row_i.iter_mut().zip(row_j) {
                        *t -= u * s;
                    }
                }
            }
            let d = self.packed[i * n + i];
            for t in row_i.iter_mut() {
                *t /= d;
            }
        }
        Array2::from_shape_vec((n, width), x).expect("shape matches buffer")
    }

    pub fn solve(&self, rhs: ArrayView1<f64>) -> Vector {
        let col = rhs.to_owned().insert_axis(ndarray::Axis(1));
        self.solve_matrix(col.view()).column(0).to_owned()
    }

    pub fn inverse(&self) -> Matrix {
        self.solve_matrix(Array2::eye(self.dim).view())
    }
}

/// Largest entry of `|M - I|`.
pub fn identity_deviation(m: ArrayView2<f64>) -> f64 {
    m.indexed_iter().fold(0.0_f64, |acc, ((i, j), v)| {
        let target = if i == j { 1.0 } else { 0.0 };
        acc.max((v - target).abs())
    })
}

pub fn invert(m: ArrayView2<f64>) -> Result<Matrix> {
    invert_with(m, &LinalgConfig::default())
}

pub fn invert_with(m: ArrayView2<f64>, cfg: &LinalgConfig) -> Result<Matrix> {
    let lu = Lu::factor(m, cfg)?;
    let inv = lu.inverse();
    let residual = identity_deviation(m.dot(&inv).view());
    if !(residual < cfg.inverse_residual_tol) {
        return Err(LinalgError::InaccurateInverse {
            residual,
            tolerance: cfg.inverse_residual_tol,
        });
    }
    Ok(inv)
}

pub fn frobenius_norm(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn vector_norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Deterministic, non-degenerate start vector for power iteration.
fn start_vector(dim: usize) -> Vector {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut v = Array1::from_shape_fn(dim, |_| {
        state = state
            .wrapping_mul(6_364_136_223_846_793_005)
            .wrapping_add(1_442_695_040_888_963_407);
        0.5 + (state >> 11) as f64 / (1u64 << 53) as f64
    });
    let norm = vector_norm(v.view());
    v /= norm;
    v
}

/// Tracks a geometrically converging Rayleigh quotient and estimates how far
/// it still is from its limit from the ratio of successive increments.
struct Settle {
    previous: f64,
    last_step: f64,
}

impl Settle {
    fn new() -> Self {
        Self {
            previous: f64::NAN,
            last_step: f64::NAN,
        }
    }

    /// True once the extrapolated remaining change is below `tol * |theta|`,
    /// or the increments have reached rounding level.
    fn update(&mut self, theta: f64, tol: f64) -> bool {
        let step = (theta - self.previous).abs();
        let ratio = step / self.last_step;
        self.previous = theta;
        self.last_step = step;
        if !step.is_finite() || !ratio.is_finite() {
            return false;
        }
        if step <= 8.0 * f64::EPSILON * theta.abs() {
            return true;
        }
        ratio < 1.0 && step * ratio / (1.0 - ratio) <= tol * theta.abs()
    }
}

/// Power iteration for a symmetric positive semidefinite operator given by its action.
///
/// Stops once the eigen-residual `|G x - theta x|` falls below `tol * theta` or
/// the floating-point floor `64 eps * scale`. With clustered top eigenvalues the
/// residual stays large long after `theta` is accurate, so the iteration also
/// stops when the extrapolated remaining change in `theta` is below `tol * theta / 100`.
fn power_iterate<F>(apply: F, dim: usize, scale: f64, cfg: &LinalgConfig) -> Result<(f64, Vector)>
where
    F: Fn(&Vector) -> Vector,
{
    let mut x = start_vector(dim);
    let floor = 64.0 * f64::EPSILON * scale;
    let mut settle = Settle::new();
    for _ in 0..cfg.max_iter {
        let y = apply(&x);
        let theta = x.dot(&y);
        let y_norm = vector_norm(y.view());
        if y_norm == 0.0 {
            return Ok((0.0, x));
        }
        let residual = vector_norm((&y - &(&x * theta)).view());
        if residual <= cfg.power_tol * theta.abs() || residual <= floor {
            return Ok((theta, x));
        }
        if settle.update(theta, 0.01 * cfg.power_tol) {
            return Ok((theta, x));
        }
        x = y / y_norm;
    }
    Err(LinalgError::NoConvergence {
        iterations: cfg.max_iter,
    })
}

pub fn spectral_norm(m: ArrayView2<f64>) -> Result<f64> {
    spectral_norm_with(m, &LinalgConfig::default())
}

/// Largest singular value, from the largest eigenvalue of the smaller Gram matrix.
pub fn spectral_norm_with(m: ArrayView2<f64>, cfg: &LinalgConfig) -> Result<f64> {
    if m.is_empty() {
        return Err(LinalgError::Empty);
    }
    check_finite(&m)?;
    let gram = if m.ncols() <= m.nrows() {
        m.t().dot(&m)
    } else {
        m.dot(&m.t())
    };
    let scale = gram.diag().sum();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let lambda = match cfg.eigen_method {
        EigenMethod::Dense => dense_extremes(&gram).1,
        EigenMethod::Iterative => power_iterate(|x| gram.dot(x), gram.nrows(), scale, cfg)?.0,
    };
    Ok(lambda.max(0.0).sqrt())
}

pub fn symmetric_eig_extremes(m: ArrayView2<f64>) -> Result<(f64, f64)> {
    symmetric_eig_extremes_with(m, &LinalgConfig::default())
}

fn dense_extremes(sym: &Matrix) -> (f64, f64) {
    let n = sym.nrows();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| sym[[i, j]]);
    let eig = m.symmetric_eigenvalues();
    (eig.min(), eig.max())
}

/// Smallest and largest eigenvalue of a symmetric matrix.
///
/// With [`EigenMethod::Iterative`] the matrix is shifted by a Gershgorin bound when it may be indefinite, so
/// both iterations run on a positive semidefinite operator. The largest
/// eigenvalue comes from power iteration; the smallest from inverse iteration,
/// or is taken to be the shift floor when the shifted matrix is singular.
pub fn symmetric_eig_extremes_with(m: ArrayView2<f64>, cfg: &LinalgConfig) -> Result<(f64, f64)> {
    let (rows, cols) = m.dim();
    if rows != cols {
        return Err(LinalgError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(LinalgError::Empty);
    }
    check_finite(&m)?;
    let scale = max_abs(&m);
    if scale == 0.0 {
        return Ok((0.0, 0.0));
    }
    let asym = max_abs(&(&m - &m.t()).view()) / scale;
    if asym > cfg.symmetry_tol {
        return Err(LinalgError::NotSymmetric(asym));
    }
    let n = rows;
    let sym = (&m + &m.t()) * 0.5;
    if cfg.eigen_method == EigenMethod::Dense {
        return Ok(dense_extremes(&sym));
    }

    let gershgorin_low = (0..n)
        .map(|i| {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| sym[[i, j]].abs()).sum();
            sym[[i, i]] - off
        })
        .fold(f64::INFINITY, f64::min);
    let shift = if gershgorin_low < 0.0 { -gershgorin_low } else { 0.0 };
    let mut shifted = sym.clone();
    for i in 0..n {
        shifted[[i, i]] += shift;
    }
    let op_scale = shifted.diag().sum().abs().max(scale);

    let (top, _) = power_iterate(|x| shifted.dot(x), n, op_scale, cfg)?;
    let lambda_max = top - shift;

    let lambda_min = match Lu::factor(shifted.view(), cfg) {
        Ok(lu) => {
            let mut x = start_vector(n);
            let floor = 64.0 * f64::EPSILON * op_scale;
            let mut settle = Settle::new();
            let mut found = None;
            for _ in 0..cfg.max_iter {
                let y = lu.solve(x.view());
                let y_norm = vector_norm(y.view());
                x = y / y_norm;
                let mx = shifted.dot(&x);
                let theta = x.dot(&mx);
                let residual = vector_norm((&mx - &(&x * theta)).view());
                let settled = settle.update(theta, 0.01 * cfg.power_tol);
                if residual <= cfg.power_tol * theta.abs() || residual <= floor || settled {
                    found = Some(theta);
                    break;
                }
            }
            found.ok_or(LinalgError::NoConvergence {
                iterations: cfg.max_iter,
            })? - shift
        }
        Err(LinalgError::SingularMatrix { .. }) => -shift,
        Err(e) => return Err(e),
    };
    Ok((lambda_min.min(lambda_max), lambda_max))
}

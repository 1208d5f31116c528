//! Classical ADMM for the generalized LASSO
//! `min_x 1/2 ||A x - y||^2 + lambda ||Phi x||_1`.
//!
//! The iteration is
//!
//! ```text
//! x' = R^-1 (A^T y + rho Phi^T (z - u)),   R = A^T A + rho Phi^T Phi
//! z' = S_{lambda/rho}(Phi x' - u)
//! u' = u + Phi x' - z'
//! ```
//!
//! started from all-zero `x`, `z`, `u`. Note the `- u` inside the threshold:
//! this is the convention the unrolled network is derived from, so the two
//! agree step for step ([`Convention::Unrolled`]). It is not a convergent
//! solver: wherever the threshold is active the dual doubles every step
//! (`u' = 2u + tau sign(.)`). [`solve_generalized_lasso`] therefore runs the
//! textbook scaled form `z' = S(Phi x' + u)` ([`Convention::Standard`]),
//! which shares the x- and u-updates and converges to the LASSO minimizer.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{assumption2_value, AnalysisOperator, MeasurementModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmParams {
    lambda: f64,
    rho: f64,
}

impl AdmmParams {
    pub fn new(lambda: f64, rho: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) || !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda and rho must be positive and finite, got lambda={lambda}, rho={rho}"
            )));
        }
        Ok(Self { lambda, rho })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn threshold(&self) -> f64 {
        self.lambda / self.rho
    }
}

/// Sign of the dual inside the z-update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Convention {
    /// `z' = S(Phi x' - u)`, the iteration the unfolded network reproduces.
    #[default]
    Unrolled,
    /// `z' = S(Phi x' + u)`, scaled-form ADMM.
    Standard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: Vector,
    pub z: Vector,
    pub u: Vector,
    pub iteration: usize,
}

impl AdmmState {
    pub fn zeros(n: usize, big_n: usize) -> Self {
        Self {
            x: Array1::zeros(n),
            z: Array1::zeros(big_n),
            u: Array1::zeros(big_n),
            iteration: 0,
        }
    }
}

#[inline]
pub fn soft_threshold_scalar(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Componentwise `sign(x_i) max(0, |x_i| - tau)`.
pub fn soft_threshold(x: ArrayView1<f64>, tau: f64) -> Vector {
    debug_assert!(tau >= 0.0);
    x.mapv(|v| soft_threshold_scalar(v, tau))
}

/// `(A^T A + rho Phi^T Phi)^-1`.
pub fn penalized_gram_inverse(op: &AnalysisOperator, mm: &MeasurementModel, rho: f64) -> Result<Matrix> {
    if mm.n() != op.dim() {
        return Err(Error::DimensionMismatch {
            context: "A columns vs Phi columns",
            expected: op.dim(),
            found: mm.n(),
        });
    }
    let a = mm.a();
    let r = a.t().dot(a) + op.s_operator() * rho;
    linalg::invert(r.view()).map_err(Error::SingularR)
}

fn check_dims(state: &AdmmState, op: &AnalysisOperator, mm: &MeasurementModel, y: ArrayView1<f64>) -> Result<()> {
    let checks = [
        ("measurement length", mm.m(), y.len()),
        ("x length", op.dim(), state.x.len()),
        ("z length", op.redundancy(), state.z.len()),
        ("u length", op.redundancy(), state.u.len()),
        ("A columns", op.dim(), mm.n()),
    ];
    for (context, expected, found) in checks {
        if expected != found {
            return Err(Error::DimensionMismatch {
                context,
                expected,
                found,
            });
        }
    }
    Ok(())
}

/// One ADMM iteration in the unrolled convention; `r_inv` must be
/// `(A^T A + rho Phi^T Phi)^-1`.
pub fn admm_step(
    state: &AdmmState,
    op: &AnalysisOperator,
    mm: &MeasurementModel,
    y: ArrayView1<f64>,
    p: &AdmmParams,
    r_inv: &Matrix,
) -> Result<AdmmState> {
    admm_step_with(state, op, mm, y, p, r_inv, Convention::Unrolled)
}

pub fn admm_step_with(
    state: &AdmmState,
    op: &AnalysisOperator,
    mm: &MeasurementModel,
    y: ArrayView1<f64>,
    p: &AdmmParams,
    r_inv: &Matrix,
    convention: Convention,
) -> Result<AdmmState> {
    check_dims(state, op, mm, y)?;
    if r_inv.dim() != (op.dim(), op.dim()) {
        return Err(Error::DimensionMismatch {
            context: "R^-1 size",
            expected: op.dim(),
            found: r_inv.nrows(),
        });
    }
    let phi = op.phi();
    let rhs = mm.a().t().dot(&y) + phi.t().dot(&(&state.z - &state.u)) * p.rho();
    let x = r_inv.dot(&rhs);
    let phi_x = phi.dot(&x);
    let z = match convention {
        Convention::Unrolled => soft_threshold((&phi_x - &state.u).view(), p.threshold()),
        Convention::Standard => soft_threshold((&phi_x + &state.u).view(), p.threshold()),
    };
    let u = &state.u + &phi_x - &z;
    Ok(AdmmState {
        x,
        z,
        u,
        iteration: state.iteration + 1,
    })
}

/// `1/2 ||A x - y||^2 + lambda ||Phi x||_1`.
pub fn objective(op: &AnalysisOperator, mm: &MeasurementModel, y: ArrayView1<f64>, lambda: f64, x: ArrayView1<f64>) -> f64 {
    let r = mm.a().dot(&x) - y;
    0.5 * r.dot(&r) + lambda * op.phi().dot(&x).iter().map(|v| v.abs()).sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub x: Vector,
    /// Objective after each iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// Final primal residual `||Phi x - z||`.
    pub primal_residual: f64,
    /// Final dual residual `rho ||Phi^T (z - z_prev)||`.
    pub dual_residual: f64,
    pub converged: bool,
    /// Set when the objective moved by less than `tol` for 100 consecutive
    /// iterations before the residual criterion was met.
    pub stalled: bool,
}

const STALL_WINDOW: usize = 100;

/// Runs standard-convention ADMM from the zero state until
/// `||Phi x - z|| < tol` or `max_iter`.
pub fn solve_generalized_lasso(
    op: &AnalysisOperator,
    mm: &MeasurementModel,
    y: ArrayView1<f64>,
    p: &AdmmParams,
    max_iter: usize,
    tol: f64,
) -> Result<LassoSolution> {
    solve_generalized_lasso_with(op, mm, y, p, max_iter, tol, Convention::Standard)
}

pub fn solve_generalized_lasso_with(
    op: &AnalysisOperator,
    mm: &MeasurementModel,
    y: ArrayView1<f64>,
    p: &AdmmParams,
    max_iter: usize,
    tol: f64,
    convention: Convention,
) -> Result<LassoSolution> {
    let a2 = assumption2_value(op, mm, p.rho());
    if a2 >= 1.0 {
        log::warn!("rho ||S^-1|| ||A|| = {a2:.4} >= 1; convergence analysis does not apply");
    }
    let r_inv = penalized_gram_inverse(op, mm, p.rho())?;
    let mut state = AdmmState::zeros(op.dim(), op.redundancy());
    let mut history = Vec::with_capacity(max_iter.min(1 << 16));
    let mut primal_residual = f64::INFINITY;
    let mut dual_residual = f64::INFINITY;
    let mut converged = false;
    let mut stalled = false;
    let mut flat_run = 0usize;
    let mut previous = f64::INFINITY;

    while state.iteration < max_iter {
        let next = admm_step_with(&state, op, mm, y, p, &r_inv, convention)?;
        dual_residual = p.rho() * linalg::vector_norm(op.phi().t().dot(&(&next.z - &state.z)).view());
        state = next;
        let f = objective(op, mm, y, p.lambda(), state.x.view());
        history.push(f);
        primal_residual = linalg::vector_norm((op.phi().dot(&state.x) - &state.z).view());
        if primal_residual < tol && dual_residual < tol {
            converged = true;
            break;
        }
        if (previous - f).abs() < tol {
            flat_run += 1;
            if flat_run >= STALL_WINDOW && !stalled {
                stalled = true;
                log::warn!(
                    "ADMM objective stagnated for {STALL_WINDOW} iterations at {f:e} (residual {primal_residual:e})"
                );
            }
        } else {
            flat_run = 0;
        }
        previous = f;
    }

    Ok(LassoSolution {
        iterations: state.iteration,
        x: state.x,
        history,
        primal_residual,
        dual_residual,
        converged,
        stalled,
    })
}

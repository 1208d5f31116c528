//! Analysis operators, the measurement model and frame diagnostics.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, LinalgConfig, Lu, Matrix};
use crate::seeded_rng;

/// Smallest accepted frame bound; below this `S` counts as singular.
pub const FRAME_ALPHA_MIN: f64 = 1e-10;

/// A redundant analysis operator `Phi` (N x n, N > n) together with its frame
/// operator `S = Phi^T Phi` and the frame bounds `alpha = lambda_min(S)`,
/// `beta = lambda_max(S)`.
#[derive(Debug, Clone)]
pub struct AnalysisOperator {
    phi: Matrix,
    s_operator: Matrix,
    alpha: f64,
    beta: f64,
}

impl AnalysisOperator {
    pub fn new(phi: Matrix) -> Result<Self> {
        let (rows, cols) = phi.dim();
        if rows <= cols || cols == 0 {
            return Err(Error::NotRedundant { rows, cols });
        }
        let s_operator = phi.t().dot(&phi);
        let (alpha, beta) = linalg::symmetric_eig_extremes(s_operator.view())?;
        if !(alpha > FRAME_ALPHA_MIN) {
            return Err(Error::NotAFrame { alpha });
        }
        Ok(Self {
            phi,
            s_operator,
            alpha,
            beta,
        })
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    pub fn into_phi(self) -> Matrix {
        self.phi
    }

    pub fn s_operator(&self) -> &Matrix {
        &self.s_operator
    }

    /// Lower frame bound.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Upper frame bound.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `||S^-1||_{2->2} = 1 / alpha`.
    pub fn s_inverse_norm(&self) -> f64 {
        1.0 / self.alpha
    }

    /// Number of rows N.
    pub fn redundancy(&self) -> usize {
        self.phi.nrows()
    }

    /// Ambient dimension n.
    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }
}

pub fn build_analysis_operator(phi: Matrix) -> Result<AnalysisOperator> {
    AnalysisOperator::new(phi)
}

/// `rho ||S^-1|| ||A||`; the operator/measurement pair is in the regime the
/// generalization analysis assumes when this is below one.
pub fn assumption2_value(op: &AnalysisOperator, mm: &MeasurementModel, rho: f64) -> f64 {
    rho * op.s_inverse_norm() * mm.a_norm()
}

/// `S^-1 S`, with `S^-1` from an LU factorization of `S`.
pub fn sinv_s(op: &AnalysisOperator) -> Result<Matrix> {
    let lu = Lu::factor(op.s_operator.view(), &LinalgConfig::default())?;
    Ok(lu.inverse().dot(&op.s_operator))
}

/// Largest entry of `|S^-1 S - I|`.
pub fn sinv_s_residual(op: &AnalysisOperator) -> Result<f64> {
    Ok(linalg::identity_deviation(sinv_s(op)?.view()))
}

/// Measurement matrix `A` (m x n, m < n) with its recorded norms.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    a: Matrix,
    noise_std: f64,
    a_norm: f64,
    ata_norm: f64,
}

impl MeasurementModel {
    pub fn new(a: Matrix, noise_std: f64) -> Result<Self> {
        let (m, n) = a.dim();
        if m == 0 || m >= n {
            return Err(Error::BadShape(format!(
                "measurement matrix must have 0 < m < n, got {m}x{n}"
            )));
        }
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise std must be finite and >= 0, got {noise_std}"
            )));
        }
        let a_norm = linalg::spectral_norm(a.view())?;
        Ok(Self {
            a,
            noise_std,
            a_norm,
            // ||A^T A|| = ||A||^2 for the spectral norm
            ata_norm: a_norm * a_norm,
        })
    }

    pub fn with_noise(mut self, noise_std: f64) -> Result<Self> {
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise std must be finite and >= 0, got {noise_std}"
            )));
        }
        self.noise_std = noise_std;
        Ok(self)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn a_view(&self) -> ArrayView2<'_, f64> {
        self.a.view()
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn a_norm(&self) -> f64 {
        self.a_norm
    }

    pub fn ata_norm(&self) -> f64 {
        self.ata_norm
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn cs_ratio(&self) -> f64 {
        self.m() as f64 / self.n() as f64
    }
}

/// Gaussian measurement matrix with i.i.d. `N(0, 1/m)` entries and no noise.
pub fn sample_measurement_matrix(m: usize, n: usize, seed: u64) -> Result<MeasurementModel> {
    if m == 0 || m >= n {
        return Err(Error::BadShape(format!(
            "measurement matrix must have 0 < m < n, got {m}x{n}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let std = (1.0 / m as f64).sqrt();
    let a = Array2::from_shape_simple_fn((m, n), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * std
    });
    MeasurementModel::new(a, 0.0)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::Array2;

    pub(crate) fn stacked_identity(n: usize) -> Matrix {
        let mut phi = Array2::zeros((2 * n, n));
        for i in 0..n {
            phi[[i, i]] = 1.0;
            phi[[n + i, i]] = 1.0;
        }
        phi
    }

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn stacked_identity_is_a_tight_frame() {
        let op = build_analysis_operator(stacked_identity(4)).unwrap();
        assert!((op.alpha() - 2.0).abs() < 1e-12);
        assert!((op.beta() - 2.0).abs() < 1e-12);
        assert!((op.s_inverse_norm() - 0.5).abs() < 1e-12);
        assert!(sinv_s_residual(&op).unwrap() < 1e-12);
    }

    #[test]
    fn zero_column_is_not_a_frame() {
        let mut phi = gaussian(10, 4, 1);
        phi.column_mut(2).fill(0.0);
        assert!(matches!(
            build_analysis_operator(phi),
            Err(Error::NotAFrame { .. })
        ));
    }

    #[test]
    fn square_operator_is_not_redundant() {
        let phi = Array2::<f64>::eye(3);
        assert!(matches!(
            build_analysis_operator(phi),
            Err(Error::NotRedundant { rows: 3, cols: 3 })
        ));
    }

    #[test]
    fn random_gaussian_operator_inverts_cleanly() {
        let op = build_analysis_operator(gaussian(60, 20, 9)).unwrap();
        assert!(op.alpha() > 0.0);
        assert!(sinv_s_residual(&op).unwrap() < 1e-8);
    }

    #[test]
    fn assumption2_direct_evaluation() {
        let op = build_analysis_operator(stacked_identity(3)).unwrap();
        // A = 2 * [I_2 | 0] has spectral norm exactly 2
        let mut a = Array2::zeros((2, 3));
        a[[0, 0]] = 2.0;
        a[[1, 1]] = 2.0;
        let mm = MeasurementModel::new(a, 0.0).unwrap();
        assert!((mm.a_norm() - 2.0).abs() < 1e-12);
        assert!((assumption2_value(&op, &mm, 0.1) - 0.1).abs() < 1e-12);
        assert_eq!(assumption2_value(&op, &mm, 0.0), 0.0);
        let v1 = assumption2_value(&op, &mm, 0.3);
        let v2 = assumption2_value(&op, &mm, 0.6);
        assert!((v2 - 2.0 * v1).abs() < 1e-14);
    }

    #[test]
    fn measurement_sampling() {
        let a = sample_measurement_matrix(5, 20, 7).unwrap();
        let b = sample_measurement_matrix(5, 20, 7).unwrap();
        assert_eq!(a.a(), b.a());
        let c = sample_measurement_matrix(5, 20, 8).unwrap();
        assert_ne!(a.a(), c.a());

        let mnist = sample_measurement_matrix(196, 784, 0).unwrap();
        assert_eq!(mnist.cs_ratio(), 0.25);
        assert!(mnist.a_norm().is_finite());

        assert!(matches!(
            sample_measurement_matrix(20, 20, 0),
            Err(Error::BadShape(_))
        ));
    }

    #[test]
    fn noise_must_be_nonnegative() {
        let mm = sample_measurement_matrix(2, 4, 0).unwrap();
        assert!(mm.clone().with_noise(1e-4).is_ok());
        assert!(mm.with_noise(-1.0).is_err());
    }
}

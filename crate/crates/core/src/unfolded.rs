//! The unrolled ADMM decoder.
//!
//! With `v_k = [u^k; z^k]`, `tau = R^-1 A^T y` and `b = Phi tau`, each layer is
//!
//! ```text
//! v_1     = I' b + I'' S(b)
//! v_{k+1} = Theta~ v_k + I' b + I'' S(Theta v_k + b)
//! ```
//!
//! with `W = rho Phi R^-1 Phi^T`, `Theta = [-I-W | W]`, `Lambda = [I-W | W]`,
//! `Theta~ = [Lambda; 0]`, `I' = [I; 0]`, `I'' = [-I; I]`. The output map is
//! `x = clip(C_Phi v_L + tau)` with `C_Phi = [-K | K]`, `K = rho R^-1 Phi^T`.
//!
//! The forward pass never forms `W` or the `2N x 2N` blocks: writing
//! `d = z - u`, `W d = Phi (K d)`, which costs `O(N n)` per column instead of
//! `O(N^2)`. Dense blocks are available from [`LayerMatrices`] for inspection.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::admm_ref::{penalized_gram_inverse, soft_threshold_scalar, AdmmParams};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{AnalysisOperator, MeasurementModel};

/// Matrices derived from `(Phi, A, rho)` that define every layer.
#[derive(Debug, Clone)]
pub struct LayerMatrices {
    rho: f64,
    phi: Matrix,
    r_inv: Matrix,
    /// `rho R^-1 Phi^T`, n x N.
    k: Matrix,
}

pub fn build_layer_matrices(op: &AnalysisOperator, mm: &MeasurementModel, rho: f64) -> Result<LayerMatrices> {
    let r_inv = penalized_gram_inverse(op, mm, rho)?;
    let k = r_inv.dot(&op.phi().t()) * rho;
    Ok(LayerMatrices {
        rho,
        phi: op.phi().clone(),
        r_inv,
        k,
    })
}

impl LayerMatrices {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn r_inv(&self) -> &Matrix {
        &self.r_inv
    }

    /// `rho R^-1 Phi^T`.
    pub fn k(&self) -> &Matrix {
        &self.k
    }

    pub fn big_n(&self) -> usize {
        self.phi.nrows()
    }

    /// `W = rho Phi R^-1 Phi^T` (N x N).
    pub fn w(&self) -> Matrix {
        self.phi.dot(&self.k)
    }

    /// `Theta = [-I - W | W]` (N x 2N).
    pub fn theta(&self) -> Matrix {
        let w = self.w();
        let eye = Array2::<f64>::eye(self.big_n());
        concatenate![Axis(1), -(&eye + &w), w]
    }

    /// `Lambda = [I - W | W]` (N x 2N).
    pub fn lambda_block(&self) -> Matrix {
        let w = self.w();
        let eye = Array2::<f64>::eye(self.big_n());
        concatenate![Axis(1), &eye - &w, w]
    }

    /// `Theta~ = [Lambda; 0]` (2N x 2N).
    pub fn theta_tilde(&self) -> Matrix {
        let n = self.big_n();
        concatenate![Axis(0), self.lambda_block(), Array2::<f64>::zeros((n, 2 * n))]
    }

    /// `C_Phi = [-K | K]` (n x 2N).
    pub fn c_phi(&self) -> Matrix {
        concatenate![Axis(1), -&self.k, self.k.view()]
    }

    /// Forward pass written literally with the dense block matrices. Quadratic
    /// in N; meant for cross-checking [`UnfoldedDecoder::forward`] on small
    /// instances. Returns `v_1..v_L` and the pre-clip output.
    pub fn forward_literal(&self, a: ArrayView2<f64>, y: ArrayView1<f64>, depth: usize, threshold: f64) -> (Vec<Vector>, Vector) {
        let n_big = self.big_n();
        let tau = self.r_inv.dot(&a.t().dot(&y));
        let b = self.phi.dot(&tau);
        let theta = self.theta();
        let theta_tilde = self.theta_tilde();
        let lift = |b: &Vector, t: &Vector| -> Vector {
            // I' b + I'' t
            let mut v = Array1::zeros(2 * n_big);
            v.slice_mut(s![..n_big]).assign(&(b - t));
            v.slice_mut(s![n_big..]).assign(t);
            v
        };
        let mut layers = Vec::with_capacity(depth);
        let mut v = lift(&b, &b.mapv(|x| soft_threshold_scalar(x, threshold)));
        layers.push(v.clone());
        for _ in 1..depth {
            let arg = theta.dot(&v) + &b;
            let t = arg.mapv(|x| soft_threshold_scalar(x, threshold));
            v = theta_tilde.dot(&v) + lift(&b, &t);
            layers.push(v.clone());
        }
        let x = self.c_phi().dot(&v) + tau;
        (layers, x)
    }
}

/// Radial clipping onto the ball of radius `b_out`.
pub fn clip(x: ArrayView1<f64>, b_out: f64) -> Vector {
    let norm = linalg::vector_norm(x);
    if norm <= b_out {
        x.to_owned()
    } else {
        x.mapv(|v| v * (b_out / norm))
    }
}

/// Largest column norm; the default clipping radius for a training set.
pub fn max_column_norm(signals: ArrayView2<f64>) -> f64 {
    signals
        .columns()
        .into_iter()
        .map(linalg::vector_norm)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `v_1..v_L`, each `[u; z]` of length 2N. Empty unless requested.
    pub v_layers: Vec<Vector>,
    /// `C_Phi v_L + tau`, before clipping.
    pub pre_clip: Vector,
    pub x_hat: Vector,
}

/// Per-layer state of a batch pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub u: Matrix,
    pub z: Matrix,
    /// Argument of the soft threshold in this layer.
    pub arg: Matrix,
    /// `K (z_prev - u_prev)`; empty for the first layer.
    pub t: Matrix,
}

#[derive(Debug, Clone)]
pub struct BatchTrace {
    pub tau: Matrix,
    pub b: Matrix,
    pub layers: Vec<LayerTrace>,
    pub pre_clip: Matrix,
    pub output: Matrix,
}

/// ADMM-DAD decoder `y -> clip(C_Phi f^L(y) + tau(y))` with one `Phi` shared by all layers.
#[derive(Debug, Clone)]
pub struct UnfoldedDecoder {
    depth: usize,
    params: AdmmParams,
    b_out: f64,
    operator: AnalysisOperator,
    measurement: MeasurementModel,
    matrices: LayerMatrices,
}

impl UnfoldedDecoder {
    pub fn new(
        operator: AnalysisOperator,
        measurement: MeasurementModel,
        depth: usize,
        params: AdmmParams,
        b_out: f64,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidParameter("depth must be at least 1".into()));
        }
        if !(b_out > 0.0) {
            return Err(Error::InvalidParameter(format!("clipping radius must be positive, got {b_out}")));
        }
        let matrices = build_layer_matrices(&operator, &measurement, params.rho())?;
        Ok(Self {
            depth,
            params,
            b_out,
            operator,
            measurement,
            matrices,
        })
    }

    /// Replaces `Phi` and rebuilds every derived matrix.
    pub fn set_phi(&mut self, phi: Matrix) -> Result<()> {
        let operator = AnalysisOperator::new(phi)?;
        let matrices = build_layer_matrices(&operator, &self.measurement, self.params.rho())?;
        self.operator = operator;
        self.matrices = matrices;
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn params(&self) -> &AdmmParams {
        &self.params
    }

    pub fn lambda(&self) -> f64 {
        self.params.lambda()
    }

    pub fn rho(&self) -> f64 {
        self.params.rho()
    }

    pub fn b_out(&self) -> f64 {
        self.b_out
    }

    pub fn operator(&self) -> &AnalysisOperator {
        &self.operator
    }

    pub fn measurement(&self) -> &MeasurementModel {
        &self.measurement
    }

    pub fn matrices(&self) -> &LayerMatrices {
        &self.matrices
    }

    fn check_measurements(&self, rows: usize) -> Result<()> {
        if rows != self.measurement.m() {
            return Err(Error::DimensionMismatch {
                context: "measurement length",
                expected: self.measurement.m(),
                found: rows,
            });
        }
        Ok(())
    }

    pub fn forward(&self, y: ArrayView1<f64>) -> Result<ForwardOutput> {
        self.forward_with(y, true)
    }

    /// Single-measurement pass; `keep_layers` controls whether `v_1..v_L` are returned.
    pub fn forward_with(&self, y: ArrayView1<f64>, keep_layers: bool) -> Result<ForwardOutput> {
        let ymat = y.to_owned().insert_axis(Axis(1));
        let trace = self.trace_batch(ymat.view(), keep_layers)?;
        let n_big = self.operator.redundancy();
        let v_layers = trace
            .layers
            .iter()
            .map(|l| {
                let mut v = Array1::zeros(2 * n_big);
                v.slice_mut(s![..n_big]).assign(&l.u.column(0));
                v.slice_mut(s![n_big..]).assign(&l.z.column(0));
                v
            })
            .collect();
        Ok(ForwardOutput {
            v_layers,
            pre_clip: trace.pre_clip.column(0).to_owned(),
            x_hat: trace.output.column(0).to_owned(),
        })
    }

    /// Column-wise decoder over an `m x s` measurement matrix.
    pub fn forward_batch(&self, y: ArrayView2<f64>) -> Result<Matrix> {
        Ok(self.trace_batch(y, false)?.output)
    }

    /// `f^k(Y)` as a `2N x s` matrix, `1 <= k <= depth`.
    pub fn intermediate(&self, y: ArrayView2<f64>, k: usize) -> Result<Matrix> {
        if k == 0 || k > self.depth {
            return Err(Error::InvalidParameter(format!("layer {k} outside 1..={}", self.depth)));
        }
        let trace = self.trace_batch(y, true)?;
        let layer = &trace.layers[k - 1];
        Ok(concatenate![Axis(0), layer.u.view(), layer.z.view()])
    }

    /// Batch forward pass. With `keep_layers` every layer's state is retained
    /// (needed for gradients); otherwise only the output survives.
    pub fn trace_batch(&self, y: ArrayView2<f64>, keep_layers: bool) -> Result<BatchTrace> {
        self.check_measurements(y.nrows())?;
        let thr = self.params.threshold();
        let phi = self.operator.phi();
        let k_mat = self.matrices.k();
        let tau = self.matrices.r_inv().dot(&self.measurement.a().t().dot(&y));
        let b = phi.dot(&tau);

        let z = b.mapv(|v| soft_threshold_scalar(v, thr));
        let u = &b - &z;
        let mut layers = Vec::with_capacity(if keep_layers { self.depth } else { 1 });
        let mut current = LayerTrace {
            u,
            z,
            arg: if keep_layers { b.clone() } else { Array2::zeros((0, 0)) },
            t: Array2::zeros((0, 0)),
        };

        for _ in 1..self.depth {
            let d = &current.z - &current.u;
            let t = k_mat.dot(&d);
            let p = phi.dot(&t);
            // Theta v + b = b - u + W (z - u)
            let mut arg = &b - &current.u + &p;
            let z_next = arg.mapv(|v| soft_threshold_scalar(v, thr));
            // Lambda v + b - S(.) = u + W (z - u) + b - z'
            let mut u_next = p;
            Zip::from(&mut u_next)
                .and(&current.u)
                .and(&b)
                .and(&z_next)
                .for_each(|un, &u, &bb, &zn| *un += u + bb - zn);
            if !keep_layers {
                arg = Array2::zeros((0, 0));
            }
            let next = LayerTrace {
                u: u_next,
                z: z_next,
                arg,
                t: if keep_layers { t } else { Array2::zeros((0, 0)) },
            };
            let prev = std::mem::replace(&mut current, next);
            if keep_layers {
                layers.push(prev);
            }
        }

        let pre_clip = k_mat.dot(&(&current.z - &current.u)) + &tau;
        layers.push(current);
        let mut output = pre_clip.clone();
        for mut col in output.columns_mut() {
            let norm = linalg::vector_norm(col.view());
            if norm > self.b_out {
                col *= self.b_out / norm;
            }
        }
        Ok(BatchTrace {
            tau,
            b,
            layers,
            pre_clip,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_analysis_operator, sample_measurement_matrix};
    use crate::seeded_rng;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    fn decoder(seed: u64, depth: usize, b_out: f64) -> UnfoldedDecoder {
        let op = build_analysis_operator(gaussian(15, 6, seed)).unwrap();
        let mm = sample_measurement_matrix(3, 6, seed + 1).unwrap();
        UnfoldedDecoder::new(op, mm, depth, AdmmParams::new(0.05, 0.5).unwrap(), b_out).unwrap()
    }

    #[test]
    fn layer_matrices_by_hand() {
        // A = 0 and Phi = [I; I], rho = 1 give R = 2I, W = Phi Phi^T / 2
        let n = 3;
        let mut phi = Array2::zeros((2 * n, n));
        for i in 0..n {
            phi[[i, i]] = 1.0;
            phi[[n + i, i]] = 1.0;
        }
        let op = build_analysis_operator(phi.clone()).unwrap();
        let mm = MeasurementModel::new(Array2::zeros((2, 3)), 0.0).unwrap();
        let lm = build_layer_matrices(&op, &mm, 1.0).unwrap();
        for ((i, j), v) in lm.r_inv().indexed_iter() {
            assert!((v - if i == j { 0.5 } else { 0.0 }).abs() < 1e-15);
        }
        let w_expected = phi.dot(&phi.t()) * 0.5;
        assert!(lm.w().abs_diff_eq(&w_expected, 1e-15));
        let theta = lm.theta();
        assert_eq!(theta.dim(), (6, 12));
        assert_eq!(lm.theta_tilde().dim(), (12, 12));
        assert!(lm.theta_tilde().slice(s![6.., ..]).iter().all(|v| *v == 0.0));
        let c = lm.c_phi();
        assert_eq!(c.dim(), (3, 12));
        assert!(c.slice(s![.., ..6]).abs_diff_eq(&(-lm.k()), 0.0));
    }

    #[test]
    fn zero_measurement_gives_zero_everywhere() {
        let dec = decoder(1, 4, 10.0);
        let out = dec.forward(Array1::zeros(3).view()).unwrap();
        assert_eq!(out.v_layers.len(), 4);
        assert!(out.v_layers.iter().all(|v| v.iter().all(|x| *x == 0.0)));
        assert!(out.x_hat.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn block_action_matches_literal_blocks() {
        let dec = decoder(3, 5, 1e6);
        let y = array![0.3, -1.2, 0.7];
        let out = dec.forward(y.view()).unwrap();
        let (layers, x) = dec.matrices().forward_literal(
            dec.measurement().a_view(),
            y.view(),
            5,
            dec.params().threshold(),
        );
        for (a, b) in out.v_layers.iter().zip(&layers) {
            assert!(a.abs_diff_eq(b, 1e-12));
        }
        assert!(out.pre_clip.abs_diff_eq(&x, 1e-12));
    }

    #[test]
    fn clipping_lands_on_the_sphere() {
        let dec = decoder(4, 3, 1e-3);
        let y = array![1.0, 2.0, -1.0];
        let out = dec.forward(y.view()).unwrap();
        assert!(linalg::vector_norm(out.pre_clip.view()) > 1e-3);
        assert!((linalg::vector_norm(out.x_hat.view()) - 1e-3).abs() < 1e-15);
        let inside = clip(array![0.1, 0.1].view(), 1.0);
        assert_eq!(inside, array![0.1, 0.1]);
    }

    #[test]
    fn batch_matches_single_columns() {
        let dec = decoder(5, 4, 0.8);
        let y = gaussian(3, 7, 50);
        let batch = dec.forward_batch(y.view()).unwrap();
        for j in 0..7 {
            let single = dec.forward_with(y.column(j), false).unwrap();
            assert!(batch.column(j).abs_diff_eq(&single.x_hat, 1e-12));
            assert!(linalg::vector_norm(batch.column(j)) <= 0.8 + 1e-12);
        }
        let one = dec.forward_batch(y.slice(s![.., 0..1])).unwrap();
        assert!(one.column(0).abs_diff_eq(&batch.column(0), 0.0));
    }

    #[test]
    fn dimension_checks() {
        let dec = decoder(6, 2, 1.0);
        assert!(matches!(
            dec.forward(Array1::zeros(4).view()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(dec.intermediate(Array2::zeros((3, 2)).view(), 0).is_err());
        assert!(dec.intermediate(Array2::zeros((3, 2)).view(), 3).is_err());
    }

    #[test]
    fn construction_validates_arguments() {
        let op = build_analysis_operator(gaussian(15, 6, 1)).unwrap();
        let mm = sample_measurement_matrix(3, 6, 2).unwrap();
        let p = AdmmParams::new(0.05, 0.5).unwrap();
        assert!(UnfoldedDecoder::new(op.clone(), mm.clone(), 0, p, 1.0).is_err());
        assert!(UnfoldedDecoder::new(op, mm, 2, p, 0.0).is_err());
    }

    #[test]
    fn set_phi_rebuilds_matrices() {
        let mut dec = decoder(7, 2, 1.0);
        let before = dec.matrices().k().clone();
        dec.set_phi(gaussian(15, 6, 99)).unwrap();
        assert!(!dec.matrices().k().abs_diff_eq(&before, 1e-6));
        let expected = build_layer_matrices(dec.operator(), dec.measurement(), dec.rho()).unwrap();
        assert!(dec.matrices().k().abs_diff_eq(expected.k(), 0.0));
    }
}

//! Loss, exact gradients with respect to `Phi`, and Adam training with early
//! stopping on the empirical generalization error.

use std::io::Write;

use log::{debug, info, warn};
use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{assumption2_value, sinv_s, sinv_s_residual};
use crate::seeded_rng;
use crate::unfolded::UnfoldedDecoder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Weight of `||S^-1 S - I||_F` in the reported objective; 0 disables it.
    pub frame_regularizer: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-4,
            max_epochs: 100,
            early_stop_patience: 10,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            frame_regularizer: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::InvalidParameter("patience must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        let betas_ok = (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2);
        if !betas_ok || !(self.adam_eps > 0.0) {
            return Err(Error::InvalidParameter("invalid Adam hyperparameters".into()));
        }
        if !(self.frame_regularizer >= 0.0) {
            return Err(Error::InvalidParameter("frame regularizer weight must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub train_mse: f64,
    pub test_mse: f64,
    pub ege: f64,
}

impl LossReport {
    pub fn new(train_mse: f64, test_mse: f64) -> Self {
        Self {
            train_mse,
            test_mse,
            ege: (test_mse - train_mse).abs(),
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub ege: f64,
    pub sinv_s_residual: f64,
    pub assumption2_value: f64,
    /// `mu ||S^-1 S - I||_F`; zero when the regularizer is off.
    pub frame_regularizer: f64,
}

impl EpochRecord {
    pub fn loss(&self) -> LossReport {
        LossReport {
            train_mse: self.train_mse,
            test_mse: self.test_mse,
            ege: self.ege,
        }
    }
}

fn check_batch(dec: &UnfoldedDecoder, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<()> {
    if x.nrows() != dec.measurement().n() {
        return Err(Error::DimensionMismatch {
            context: "signal batch rows",
            expected: dec.measurement().n(),
            found: x.nrows(),
        });
    }
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch {
            context: "signal/measurement batch size",
            expected: y.ncols(),
            found: x.ncols(),
        });
    }
    if x.ncols() == 0 {
        return Err(Error::BadShape("empty batch".into()));
    }
    Ok(())
}

/// `(1/s) sum_j ||dec(y_j) - x_j||^2`.
pub fn train_mse(dec: &UnfoldedDecoder, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    check_batch(dec, x, y)?;
    let out = dec.forward_batch(y)?;
    Ok(mse(out.view(), x))
}

fn mse(out: ArrayView2<f64>, x: ArrayView2<f64>) -> f64 {
    let mut acc = 0.0;
    Zip::from(out).and(x).for_each(|&o, &t| acc += (o - t) * (o - t));
    acc / x.ncols() as f64
}

/// Reverse-mode gradient of [`train_mse`] with respect to `Phi`, returned with
/// the loss value. The soft-threshold derivative is taken as 0 at the kink.
pub fn loss_and_gradient(dec: &UnfoldedDecoder, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(f64, Matrix)> {
    check_batch(dec, x, y)?;
    let s = x.ncols() as f64;
    let thr = dec.params().threshold();
    let rho = dec.rho();
    let b_out = dec.b_out();
    let phi = dec.operator().phi();
    let r_inv = dec.matrices().r_inv();
    let k_mat = dec.matrices().k();

    let trace = dec.trace_batch(y, true)?;
    let loss = mse(trace.output.view(), x);

    // output clip
    let mut g_pre = (&trace.output - &x) * (2.0 / s);
    for (mut g, p) in g_pre.axis_iter_mut(Axis(1)).zip(trace.pre_clip.axis_iter(Axis(1))) {
        let norm = linalg::vector_norm(p);
        if norm > b_out {
            let proj = p.dot(&g) / (norm * norm);
            Zip::from(&mut g).and(&p).for_each(|gi, &pi| *gi = (b_out / norm) * (*gi - pi * proj));
        }
    }

    let last = trace.layers.last().expect("at least one layer");
    let d_last = &last.z - &last.u;
    let mut g_k = g_pre.dot(&d_last.t());
    let mut g_tau = g_pre.clone();
    let g_d = k_mat.t().dot(&g_pre);
    let mut g_z = g_d.clone();
    let mut g_u = -g_d;
    let mut g_b = Array2::<f64>::zeros(trace.b.raw_dim());
    let mut g_phi = Array2::<f64>::zeros(phi.raw_dim());

    for k in (1..trace.layers.len()).rev() {
        let layer = &trace.layers[k];
        let prev = &trace.layers[k - 1];
        // g_arg = mask * (gz - gu); gP = gu + g_arg
        let mut g_p = Array2::<f64>::zeros(g_z.raw_dim());
        Zip::from(&mut g_p)
            .and(&g_z)
            .and(&mut g_u)
            .and(&layer.arg)
            .and(&mut g_b)
            .for_each(|gp, &gz, gu, &arg, gb| {
                let g_arg = if arg.abs() > thr { gz - *gu } else { 0.0 };
                *gp = *gu + g_arg;
                *gb += *gp;
                *gu -= g_arg;
            });
        g_phi += &g_p.dot(&layer.t.t());
        let g_t = phi.t().dot(&g_p);
        let d = &prev.z - &prev.u;
        g_k += &g_t.dot(&d.t());
        let g_d = k_mat.t().dot(&g_t);
        g_z = g_d;
        g_u -= &g_z;
    }

    // first layer: z1 = S(b), u1 = b - z1
    Zip::from(&mut g_b)
        .and(&g_z)
        .and(&g_u)
        .and(&trace.b)
        .for_each(|gb, &gz, &gu, &b| {
            let mask = if b.abs() > thr { 1.0 } else { 0.0 };
            *gb += gu + mask * (gz - gu);
        });

    // b = Phi tau
    g_phi += &g_b.dot(&trace.tau.t());
    g_tau += &phi.t().dot(&g_b);

    // tau = R^-1 A^T Y, K = rho R^-1 Phi^T, R = A^T A + rho Phi^T Phi
    let aty = dec.measurement().a().t().dot(&y);
    let mut g_rinv = g_tau.dot(&aty.t());
    g_rinv += &(g_k.dot(phi) * rho);
    g_phi += &(g_k.t().dot(r_inv) * rho);
    g_phi += &inverse_rule(phi.view(), r_inv.view(), rho, g_rinv.view());
    Ok((loss, g_phi))
}

/// Pulls a gradient with respect to `R^-1` back to `Phi` through
/// `R = A^T A + rho Phi^T Phi`, using `d(R^-1) = -R^-1 dR R^-1`.
pub fn inverse_rule(phi: ArrayView2<f64>, r_inv: ArrayView2<f64>, rho: f64, g_rinv: ArrayView2<f64>) -> Matrix {
    let g_r = -r_inv.t().dot(&g_rinv).dot(&r_inv.t());
    let g_r_sym = &g_r + &g_r.t();
    phi.dot(&g_r_sym) * rho
}

/// Smallest distance of any soft-threshold argument to `+-lambda/rho` and of
/// any pre-clip output norm to `B_out`. Gradients are exact (not just
/// subgradients) when this is positive.
pub fn kink_distance(dec: &UnfoldedDecoder, y: ArrayView2<f64>) -> Result<f64> {
    let thr = dec.params().threshold();
    let trace = dec.trace_batch(y, true)?;
    let mut dist = f64::INFINITY;
    for (k, layer) in trace.layers.iter().enumerate() {
        let arg = if k == 0 { &trace.b } else { &layer.arg };
        for &a in arg {
            dist = dist.min((a.abs() - thr).abs());
        }
    }
    for col in trace.pre_clip.axis_iter(Axis(1)) {
        dist = dist.min((linalg::vector_norm(col) - dec.b_out()).abs());
    }
    Ok(dist)
}

pub fn loss_gradient(dec: &UnfoldedDecoder, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Matrix> {
    loss_and_gradient(dec, x, y).map(|(_, g)| g)
}

/// He normal initialization: i.i.d. `N(0, 2/n)` entries of an `N x n` matrix.
pub fn he_init(n: usize, big_n: usize, seed: u64) -> Result<Matrix> {
    if n == 0 || big_n <= n {
        return Err(Error::BadShape(format!(
            "analysis operator must have N > n >= 1, got N={big_n}, n={n}"
        )));
    }
    let normal = Normal::new(0.0, (2.0 / n as f64).sqrt()).expect("positive std");
    let mut rng = seeded_rng(seed);
    Ok(Array2::from_shape_simple_fn((big_n, n), || normal.sample(&mut rng)))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Matrix,
    v: Matrix,
    t: i32,
}

impl Adam {
    pub fn new(shape: (usize, usize), cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            t: 0,
        }
    }

    pub fn step(&mut self, param: &mut Matrix, grad: &Matrix) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.lr;
        let eps = self.eps;
        Zip::from(param)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }
}

/// `||S^-1 S - I||_F` for the decoder's operator. It vanishes identically in
/// exact arithmetic, so it contributes nothing to the gradient and is only
/// monitored.
pub fn frame_regularizer_value(dec: &UnfoldedDecoder) -> Result<f64> {
    let mut dev = sinv_s(dec.operator())?;
    dev.diag_mut().mapv_inplace(|v| v - 1.0);
    Ok(linalg::frobenius_norm(dev.view()))
}

fn epoch_record(
    dec: &UnfoldedDecoder,
    epoch: usize,
    mu: f64,
    train: (ArrayView2<f64>, ArrayView2<f64>),
    test: (ArrayView2<f64>, ArrayView2<f64>),
) -> Result<EpochRecord> {
    let tr = train_mse(dec, train.0, train.1)?;
    let te = train_mse(dec, test.0, test.1)?;
    if !tr.is_finite() || !te.is_finite() {
        return Err(Error::NonFiniteLoss { epoch });
    }
    let loss = LossReport::new(tr, te);
    Ok(EpochRecord {
        epoch,
        train_mse: loss.train_mse,
        test_mse: loss.test_mse,
        ege: loss.ege,
        sinv_s_residual: sinv_s_residual(dec.operator())?,
        assumption2_value: assumption2_value(dec.operator(), dec.measurement(), dec.rho()),
        frame_regularizer: if mu > 0.0 {
            mu * frame_regularizer_value(dec)?
        } else {
            0.0
        },
    })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Decoder restored to the best checkpoint.
    pub decoder: UnfoldedDecoder,
    /// Epoch 0 is the initialization.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl FitResult {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }
}

/// Trains `Phi` with Adam on mini-batches of `train`, evaluating on
/// `validation` after every epoch.
///
/// Early stopping tracks the EGE of the trained epochs (1 onwards): training
/// ends once it has not improved for `early_stop_patience` epochs and the
/// decoder of the best epoch is returned. Epoch 0 is recorded but never
/// selected.
pub fn fit(mut dec: UnfoldedDecoder, train: &Dataset, validation: &Dataset, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    let (x_train, y_train) = train.pairs()?;
    let (x_val, y_val) = validation.pairs()?;
    check_batch(&dec, x_train, y_train)?;
    check_batch(&dec, x_val, y_val)?;

    let a2 = assumption2_value(dec.operator(), dec.measurement(), dec.rho());
    if a2 >= 1.0 {
        warn!("rho ||S^-1|| ||A|| = {a2:.4} >= 1 at initialization");
    }

    let mut rng = seeded_rng(cfg.seed);
    let mut adam = Adam::new(dec.operator().phi().dim(), cfg);
    let mu = cfg.frame_regularizer;
    let mut history = vec![epoch_record(&dec, 0, mu, (x_train, y_train), (x_val, y_val))?];
    let mut best: Option<(usize, f64, Matrix)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x_train.select(Axis(1), chunk);
            let yb = y_train.select(Axis(1), chunk);
            let (loss, grad) = loss_and_gradient(&dec, xb.view(), yb.view())?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let mut phi = dec.operator().phi().clone();
            adam.step(&mut phi, &grad);
            dec.set_phi(phi)?;
        }
        let rec = epoch_record(&dec, epoch, mu, (x_train, y_train), (x_val, y_val))?;
        debug!(
            "epoch {epoch}: train {:.6} test {:.6} ege {:.6}",
            rec.train_mse, rec.test_mse, rec.ege
        );
        history.push(rec);

        let improved = best.as_ref().is_none_or(|(_, e, _)| rec.ege < *e);
        if improved {
            best = Some((epoch, rec.ege, dec.operator().phi().clone()));
        } else if epoch - best.as_ref().map_or(0, |b| b.0) >= cfg.early_stop_patience {
            info!("early stop at epoch {epoch}");
            break;
        }
    }

    let best_epoch = match best {
        Some((epoch, _, phi)) => {
            if epoch != history.len() - 1 {
                dec.set_phi(phi)?;
            }
            epoch
        }
        None => 0,
    };
    Ok(FitResult {
        decoder: dec,
        history,
        best_epoch,
    })
}

/// Writes the training history as CSV.
pub fn write_history_csv<W: Write>(w: W, history: &[EpochRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for rec in history {
        out.serialize(rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm_ref::AdmmParams;
    use crate::data::generate_synthetic;
    use crate::model::{build_analysis_operator, sample_measurement_matrix, MeasurementModel};
    use crate::unfolded::build_layer_matrices;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut crate::Rng) -> Matrix {
        Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
    }

    fn decoder(phi: Matrix, mm: &MeasurementModel, depth: usize, lambda: f64, rho: f64, b_out: f64) -> UnfoldedDecoder {
        let op = build_analysis_operator(phi).unwrap();
        UnfoldedDecoder::new(op, mm.clone(), depth, AdmmParams::new(lambda, rho).unwrap(), b_out).unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn mse_examples() {
        let mm = sample_measurement_matrix(2, 4, 0).unwrap();
        let dec = decoder(he_init(4, 8, 1).unwrap(), &mm, 2, 0.01, 0.5, 100.0);
        let y = gaussian(2, 3, &mut seeded_rng(2));
        let out = dec.forward_batch(y.view()).unwrap();
        assert_eq!(train_mse(&dec, out.view(), y.view()).unwrap(), 0.0);

        // y = 0 gives a zero decoder output
        let mut x = gaussian(4, 5, &mut seeded_rng(3));
        for mut c in x.columns_mut() {
            let norm = linalg::vector_norm(c.view());
            c /= norm;
        }
        let zeros = Array2::zeros((2, 5));
        assert!((train_mse(&dec, x.view(), zeros.view()).unwrap() - 1.0).abs() < 1e-12);

        let single = train_mse(&dec, x.slice(ndarray::s![.., ..1]), zeros.slice(ndarray::s![.., ..1])).unwrap();
        let sq: f64 = x.column(0).iter().map(|v| v * v).sum();
        assert!((single - sq).abs() < 1e-12);
        assert!(train_mse(&dec, x.view(), Array2::zeros((2, 4)).view()).is_err());
    }

    #[test]
    fn zero_data_has_zero_gradient() {
        let mm = sample_measurement_matrix(3, 6, 0).unwrap();
        let dec = decoder(he_init(6, 15, 1).unwrap(), &mm, 3, 1e-3, 0.5, 10.0);
        let g = loss_gradient(&dec, Array2::zeros((6, 4)).view(), Array2::zeros((3, 4)).view()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    fn finite_difference_check(b_out: f64, seed: u64) {
        let mut rng = seeded_rng(seed);
        let mm = sample_measurement_matrix(3, 6, seed).unwrap();
        let phi = gaussian(15, 6, &mut rng);
        let x = gaussian(6, 4, &mut rng);
        let y = mm.a().dot(&x);
        let (lambda, rho) = (0.05, 0.7);
        let dec = decoder(phi.clone(), &mm, 3, lambda, rho, b_out);
        assert!(kink_distance(&dec, y.view()).unwrap() > 1e-6);
        let grad = loss_gradient(&dec, x.view(), y.view()).unwrap();
        let h = 1e-6;
        for _ in 0..20 {
            let (i, j) = (rng.random_range(0..15), rng.random_range(0..6));
            let eval = |delta: f64| {
                let mut p = phi.clone();
                p[[i, j]] += delta;
                train_mse(&decoder(p, &mm, 3, lambda, rho, b_out), x.view(), y.view()).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(rel_err(fd, grad[[i, j]]) < 1e-4, "({i},{j}): fd {fd} vs {}", grad[[i, j]]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        finite_difference_check(1e6, 5);
    }

    #[test]
    fn gradient_through_active_clip() {
        finite_difference_check(0.5, 6);
    }

    #[test]
    fn inverse_rule_matches_finite_differences() {
        let mut rng = seeded_rng(8);
        let mm = sample_measurement_matrix(3, 6, 8).unwrap();
        let phi = gaussian(15, 6, &mut rng);
        let v = gaussian(6, 1, &mut rng);
        let rho = 0.3;
        let f = |p: &Matrix| {
            let lm = build_layer_matrices(&build_analysis_operator(p.clone()).unwrap(), &mm, rho).unwrap();
            let w = lm.r_inv().dot(&v);
            (w.t().dot(&w))[[0, 0]]
        };
        let lm = build_layer_matrices(&build_analysis_operator(phi.clone()).unwrap(), &mm, rho).unwrap();
        let r_inv = lm.r_inv();
        let w = r_inv.dot(&v);
        let g_rinv = w.dot(&v.t()) * 2.0;
        let grad = inverse_rule(phi.view(), r_inv.view(), rho, g_rinv.view());
        let h = 1e-6;
        for i in 0..15 {
            for j in 0..6 {
                let mut plus = phi.clone();
                plus[[i, j]] += h;
                let mut minus = phi.clone();
                minus[[i, j]] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                assert!(rel_err(fd, grad[[i, j]]) < 1e-5, "fd {fd} vs {}", grad[[i, j]]);
            }
        }
    }

    #[test]
    fn he_init_statistics() {
        assert_eq!(he_init(10, 30, 4).unwrap(), he_init(10, 30, 4).unwrap());
        let phi = he_init(50, 250, 1).unwrap();
        let var = phi.mapv(|v| v * v).sum() / phi.len() as f64;
        assert!((var / (2.0 / 50.0) - 1.0).abs() < 0.1);
        assert!(build_analysis_operator(phi).unwrap().alpha() > 0.0);
        assert!(matches!(he_init(5, 5, 0), Err(Error::BadShape(_))));
    }

    fn small_problem(seed: u64) -> (UnfoldedDecoder, Dataset, Dataset) {
        let (n, big_n, m) = (10, 30, 3);
        let mm = sample_measurement_matrix(m, n, seed).unwrap();
        let (train, test) = generate_synthetic(n, 200, 100, seed).unwrap();
        let train = train.measured(&mm, 1e-4, 1).unwrap();
        let test = test.measured(&mm, 1e-4, 2).unwrap();
        let b_out = train.max_signal_norm();
        let dec = decoder(he_init(n, big_n, seed).unwrap(), &mm, 3, 1e-4, 0.1, b_out);
        (dec, train, test)
    }

    #[test]
    fn zero_learning_rate_leaves_phi_unchanged() {
        let (dec, train, test) = small_problem(1);
        let phi0 = dec.operator().phi().clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 3,
            early_stop_patience: 5,
            ..TrainConfig::default()
        };
        let fit = fit(dec, &train, &test, &cfg).unwrap();
        assert_eq!(fit.decoder.operator().phi(), &phi0);
        assert_eq!(fit.history.len(), 4);
        for rec in &fit.history {
            assert_eq!(rec.train_mse, fit.history[0].train_mse);
        }
    }

    #[test]
    fn fit_selects_min_ege_and_is_deterministic() {
        let (dec, train, test) = small_problem(2);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 32,
            max_epochs: 12,
            early_stop_patience: 3,
            seed: 9,
            frame_regularizer: 0.1,
            ..TrainConfig::default()
        };
        let a = fit(dec.clone(), &train, &test, &cfg).unwrap();
        let b = fit(dec, &train, &test, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        let min = a.history[1..].iter().map(|r| r.ege).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best().ege, min);
        assert!(a.best_epoch >= 1);
        let (x, y) = train.pairs().unwrap();
        assert_eq!(train_mse(&a.decoder, x, y).unwrap(), a.best().train_mse);
        assert!(a.history.iter().all(|r| r.frame_regularizer < 1e-10));

        let mut csv = Vec::new();
        write_history_csv(&mut csv, &a.history).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("epoch,train_mse,test_mse,ege,sinv_s_residual,assumption2_value"));
        assert_eq!(text.lines().count(), a.history.len() + 1);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (dec, train, test) = small_problem(3);
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(fit(dec.clone(), &train, &test, &cfg).is_err());
        let cfg = TrainConfig {
            early_stop_patience: 0,
            ..TrainConfig::default()
        };
        assert!(fit(dec, &train, &test, &cfg).is_err());
    }
}

//! Closed-form constants of the generalization analysis.
//!
//! Everything that scales like `G^L` is accumulated in the log domain so that
//! deep networks with large frame bounds never overflow; the public helpers
//! return plain `f64` values (which may be `inf` only for the raw `K_L`/`Sigma_L`
//! accessors) and every derived bound is evaluated from the logarithms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant inside the log factor of the displayed Rademacher derivation.
pub const RADEMACHER_LOG_CONSTANT: f64 = 4.0;
/// Constant inside the log factor of the generalization theorems.
pub const THEOREM_LOG_CONSTANT: f64 = 2.0;

/// How `||Y||_F` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YNormSource {
    /// Frobenius norm of the actual training measurements.
    Measured,
    /// The worst case `sqrt(s) * B_in`.
    SqrtSBIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub lambda: f64,
    pub a_norm: f64,
    pub ata_norm: f64,
    pub y_frob: f64,
    pub y_frob_source: YNormSource,
    pub b_in: f64,
    pub b_out: f64,
    pub n: usize,
    pub big_n: usize,
    pub s: usize,
    pub depth: usize,
    pub delta: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta", self.beta),
            ("rho", self.rho),
            ("b_in", self.b_in),
            ("b_out", self.b_out),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        let nonneg = [
            ("alpha", self.alpha),
            ("lambda", self.lambda),
            ("a_norm", self.a_norm),
            ("ata_norm", self.ata_norm),
            ("y_frob", self.y_frob),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.depth == 0 || self.s == 0 || self.n == 0 || self.big_n == 0 {
            return Err(Error::InvalidParameter(
                "depth, s, n and N must all be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Use `sqrt(s) * B_in` in place of the measured `||Y||_F`.
    pub fn with_worst_case_y(mut self) -> Self {
        self.y_frob = (self.s as f64).sqrt() * self.b_in;
        self.y_frob_source = YNormSource::SqrtSBIn;
        self
    }
}

/// `log(exp(a) + exp(b))`, tolerant of `-inf` arguments.
fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn log_sum_exp(terms: impl IntoIterator<Item = f64>) -> f64 {
    terms.into_iter().fold(f64::NEG_INFINITY, log_add_exp)
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn compute_q(inputs: &BoundInputs) -> Result<f64> {
    let rho_ata = inputs.rho * inputs.ata_norm;
    let denom = inputs.alpha - rho_ata;
    if !(denom > 0.0) {
        return Err(Error::QUndefined {
            alpha: inputs.alpha,
            rho_ata,
        });
    }
    Ok(inputs.rho / denom)
}

/// `G = 3 (1 + 2 beta q rho)`.
pub fn compute_g(inputs: &BoundInputs) -> Result<f64> {
    let q = compute_q(inputs)?;
    Ok(3.0 * (1.0 + 2.0 * inputs.beta * q * inputs.rho))
}

/// `log D_k` with `D_k = sum_{i=0}^{k-1} G^i`; `D_0 = 0`.
fn log_d(g: f64, k: usize) -> f64 {
    if k == 0 {
        return f64::NEG_INFINITY;
    }
    // G >= 3, so the geometric closed form is well conditioned
    let kf = k as f64;
    let log_gk = kf * g.ln();
    log_gk + (-(-log_gk).exp()).ln_1p() - (g - 1.0).ln()
}

pub fn compute_d(inputs: &BoundInputs, k: usize) -> Result<f64> {
    Ok(log_d(compute_g(inputs)?, k).exp())
}

struct Consts {
    q: f64,
    g: f64,
    log_ay: f64,
    log_c: f64,
}

impl Consts {
    fn new(inputs: &BoundInputs) -> Result<Self> {
        inputs.validate()?;
        let q = compute_q(inputs)?;
        let g = 3.0 * (1.0 + 2.0 * inputs.beta * q * inputs.rho);
        let c = 36.0 * q * q * inputs.rho * inputs.beta * (1.0 + inputs.beta * q * inputs.rho);
        Ok(Self {
            q,
            g,
            log_ay: (inputs.a_norm * inputs.y_frob).ln(),
            log_c: c.ln(),
        })
    }

    fn log_e(&self, k: usize) -> f64 {
        let inner = log_add_exp((self.q * self.g).ln(), self.log_c + log_d(self.g, k - 1));
        self.log_ay + inner
    }

    fn log_kl(&self, depth: usize) -> f64 {
        let lg = self.g.ln();
        log_sum_exp((1..=depth).map(|k| (depth - k) as f64 * lg + self.log_e(k)))
    }

    /// `log(K_L + ||A|| ||Y|| q G D_L)`, the bracket of `Sigma_L`.
    fn log_sigma_bracket(&self, depth: usize) -> f64 {
        let second = self.log_ay + (self.q * self.g).ln() + log_d(self.g, depth);
        log_add_exp(self.log_kl(depth), second)
    }
}

/// `E_k = ||A|| ||Y||_F (q G + 36 q^2 rho beta (1 + beta q rho) D_{k-1})`.
pub fn compute_e(inputs: &BoundInputs, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("E_k is defined for k >= 1".into()));
    }
    Ok(Consts::new(inputs)?.log_e(k).exp())
}

/// `log K_L`.
pub fn compute_log_kl(inputs: &BoundInputs) -> Result<f64> {
    Ok(Consts::new(inputs)?.log_kl(inputs.depth))
}

/// `K_L = sum_{k=1}^L G^{L-k} E_k`.
pub fn compute_kl(inputs: &BoundInputs) -> Result<f64> {
    compute_log_kl(inputs).map(f64::exp)
}

/// `K_L` by the plain recursion `K_1 = E_1`, `K_{k+1} = G K_k + E_{k+1}`, in
/// ordinary floating point.
pub fn compute_kl_recursive(inputs: &BoundInputs) -> Result<f64> {
    let g = compute_g(inputs)?;
    let mut k_l = compute_e(inputs, 1)?;
    for k in 2..=inputs.depth {
        k_l = g * k_l + compute_e(inputs, k)?;
    }
    Ok(k_l)
}

/// `log Sigma_L`.
pub fn compute_log_sigma_l(inputs: &BoundInputs) -> Result<f64> {
    let c = Consts::new(inputs)?;
    let prefactor = (2.0 * c.q * inputs.rho * inputs.beta.sqrt()).ln();
    Ok(prefactor + c.log_sigma_bracket(inputs.depth))
}

/// `Sigma_L = 2 q rho sqrt(beta) (K_L + ||A|| ||Y||_F q G D_L)`.
pub fn compute_sigma_l(inputs: &BoundInputs) -> Result<f64> {
    compute_log_sigma_l(inputs).map(f64::exp)
}

/// `Sigma_L` in its displayed form
/// `2 q rho sqrt(beta) (K_L + 3 ||A|| ||Y||_F q (1 + 2 beta q rho) sum_{k<L} 3^k (1 + 2 beta q rho)^k)`,
/// summed term by term in ordinary floating point.
pub fn compute_sigma_l_display(inputs: &BoundInputs) -> Result<f64> {
    let q = compute_q(inputs)?;
    let k_l = compute_kl_recursive(inputs)?;
    let t = 1.0 + 2.0 * inputs.beta * q * inputs.rho;
    let series: f64 = (0..inputs.depth)
        .map(|k| 3f64.powi(k as i32) * t.powi(k as i32))
        .sum();
    let second = 3.0 * inputs.a_norm * inputs.y_frob * q * t * series;
    Ok(2.0 * q * inputs.rho * inputs.beta.sqrt() * (k_l + second))
}

/// Bound on `||f^k(Y)||_F`: `3 ||A|| ||Y||_F q sqrt(beta) D_k`.
pub fn output_bound(inputs: &BoundInputs, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("layer index must be >= 1".into()));
    }
    let c = Consts::new(inputs)?;
    let log = (3.0 * c.q * inputs.beta.sqrt()).ln() + c.log_ay + log_d(c.g, k);
    Ok(log.exp())
}

/// `log(1 + factor * sqrt(beta) * Sigma_L / scale)` from `log Sigma_L`.
fn log1p_scaled(log_sigma: f64, beta: f64, factor: f64, scale: f64) -> f64 {
    softplus(log_sigma + (factor * beta.sqrt() / scale).ln())
}

/// `N n log(1 + 2 sqrt(beta) Sigma_L / eps)`.
pub fn covering_log(inputs: &BoundInputs, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let log_sigma = compute_log_sigma_l(inputs)?;
    Ok(covering_log_from(log_sigma, inputs.beta, inputs.big_n, inputs.n, eps))
}

fn covering_log_from(log_sigma: f64, beta: f64, big_n: usize, n: usize, eps: f64) -> f64 {
    (big_n * n) as f64 * log1p_scaled(log_sigma, beta, 2.0, eps)
}

/// Log-count of an `eps`-net of the radius-`t` ball in `R^{N x n}`:
/// `N n log(1 + 2 t / eps)`.
pub fn ball_covering_log(big_n: usize, n: usize, radius: f64, eps: f64) -> f64 {
    (big_n * n) as f64 * (2.0 * radius / eps).ln_1p()
}

/// `8 (B_in + B_out) B_out sqrt(Nn/s) sqrt(log(e (1 + c sqrt(beta) Sigma_L / (sqrt(s) B_out))))`.
fn dudley_term(inputs: &BoundInputs, log_sigma: f64, constant: f64) -> f64 {
    let s = inputs.s as f64;
    let ratio = ((inputs.big_n * inputs.n) as f64 / s).sqrt();
    let log_factor = 1.0 + log1p_scaled(log_sigma, inputs.beta, constant, s.sqrt() * inputs.b_out);
    8.0 * (inputs.b_in + inputs.b_out) * inputs.b_out * ratio * log_factor.sqrt()
}

fn confidence_term(inputs: &BoundInputs) -> f64 {
    let s = inputs.s as f64;
    (2.0 * (4.0 / inputs.delta).ln() / s).sqrt()
}

/// Rademacher complexity estimate with an explicit log constant.
pub fn rademacher_estimate_with(inputs: &BoundInputs, constant: f64) -> Result<f64> {
    let log_sigma = compute_log_sigma_l(inputs)?;
    Ok(dudley_term(inputs, log_sigma, constant))
}

/// Rademacher estimate with the factor 4 inside the log.
pub fn rademacher_estimate(inputs: &BoundInputs) -> Result<f64> {
    rademacher_estimate_with(inputs, RADEMACHER_LOG_CONSTANT)
}

pub fn theorem4_excess(inputs: &BoundInputs) -> Result<f64> {
    let log_sigma = compute_log_sigma_l(inputs)?;
    let b = inputs.b_in + inputs.b_out;
    Ok(dudley_term(inputs, log_sigma, THEOREM_LOG_CONSTANT) + 4.0 * b * b * confidence_term(inputs))
}

pub fn theorem4_bound(inputs: &BoundInputs, train_mse: f64) -> Result<f64> {
    Ok(train_mse + theorem4_excess(inputs)?)
}

fn check_equal_b(inputs: &BoundInputs) -> Result<()> {
    let scale = inputs.b_in.abs().max(inputs.b_out.abs());
    if (inputs.b_in - inputs.b_out).abs() > 1e-12 * scale {
        return Err(Error::BInBOutMismatch {
            b_in: inputs.b_in,
            b_out: inputs.b_out,
        });
    }
    Ok(())
}

/// `16 B^2 (sqrt(Nn/s) sqrt(log(e (1 + 2 sqrt(beta) Sigma_L / (sqrt(s) B)))) + sqrt(2 log(4/delta) / s))`.
pub fn theorem5_excess(inputs: &BoundInputs) -> Result<f64> {
    check_equal_b(inputs)?;
    let log_sigma = compute_log_sigma_l(inputs)?;
    let s = inputs.s as f64;
    let b = inputs.b_out;
    let ratio = ((inputs.big_n * inputs.n) as f64 / s).sqrt();
    let log_factor = 1.0 + log1p_scaled(log_sigma, inputs.beta, THEOREM_LOG_CONSTANT, s.sqrt() * b);
    Ok(16.0 * b * b * (ratio * log_factor.sqrt() + confidence_term(inputs)))
}

pub fn theorem5_bound(inputs: &BoundInputs, train_mse: f64) -> Result<f64> {
    Ok(train_mse + theorem5_excess(inputs)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub q: f64,
    pub g: f64,
    pub k_l: f64,
    pub log_k_l: f64,
    pub sigma_l: f64,
    pub log_sigma_l: f64,
    pub output_bound: f64,
    pub rademacher_estimate: f64,
    pub theorem4_excess: f64,
    /// Present only when `B_in = B_out`.
    pub theorem5_excess: Option<f64>,
    pub y_frob_source: YNormSource,
    beta: f64,
    n: usize,
    big_n: usize,
}

impl BoundReport {
    pub fn compute(inputs: &BoundInputs) -> Result<Self> {
        let c = Consts::new(inputs)?;
        let log_k_l = c.log_kl(inputs.depth);
        let log_sigma_l = compute_log_sigma_l(inputs)?;
        let theorem5_excess = match theorem5_excess(inputs) {
            Ok(v) => Some(v),
            Err(Error::BInBOutMismatch { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            q: c.q,
            g: c.g,
            k_l: log_k_l.exp(),
            log_k_l,
            sigma_l: log_sigma_l.exp(),
            log_sigma_l,
            output_bound: output_bound(inputs, inputs.depth)?,
            rademacher_estimate: dudley_term(inputs, log_sigma_l, RADEMACHER_LOG_CONSTANT),
            theorem4_excess: theorem4_excess(inputs)?,
            theorem5_excess,
            y_frob_source: inputs.y_frob_source,
            beta: inputs.beta,
            n: inputs.n,
            big_n: inputs.big_n,
        })
    }

    pub fn covering_log_at(&self, eps: f64) -> f64 {
        covering_log_from(self.log_sigma_l, self.beta, self.big_n, self.n, eps)
    }
}

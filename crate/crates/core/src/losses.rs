//! Training losses with gradients with respect to the network outputs.
//!
//! * [`cross_entropy`] drives the disease head.
//! * [`neg_sq_pearson`] (−r²) and [`bce`] are the two bias-prediction losses.
//! * [`adversarial_grad`] turns a bias-prediction loss into the encoder's
//!   adversarial signal `−λ · ∂L_bp/∂output`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Sample standard deviation below which a correlation is treated as undefined.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// Same shape as the predictions the loss was evaluated on.
    pub grad: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BiasLossKind {
    /// Negative squared Pearson correlation, −r².
    NegSqPearson,
    /// Binary cross-entropy on a single logit.
    Bce,
}

impl BiasLossKind {
    pub fn name(self) -> &'static str {
        match self {
            BiasLossKind::NegSqPearson => "neg_sq_pearson",
            BiasLossKind::Bce => "bce",
        }
    }

    /// Evaluates the loss on bias-head outputs. For [`BiasLossKind::Bce`] the
    /// targets must be exactly `0.0` or `1.0`.
    pub fn evaluate(self, pred: &[f64], target: &[f64]) -> Result<LossResult> {
        match self {
            BiasLossKind::NegSqPearson => neg_sq_pearson(pred, target),
            BiasLossKind::Bce => {
                let labels = target
                    .iter()
                    .map(|&t| {
                        if t == 0.0 {
                            Ok(0u8)
                        } else if t == 1.0 {
                            Ok(1u8)
                        } else {
                            Err(Error::Domain(format!("BCE target {t} is not 0 or 1")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                bce(pred, &labels)
            }
        }
    }
}

impl fmt::Display for BiasLossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BiasLossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg_sq_pearson" | "corr2" => Ok(BiasLossKind::NegSqPearson),
            "bce" => Ok(BiasLossKind::Bce),
            other => Err(Error::Config(format!("unknown bias loss `{other}`"))),
        }
    }
}

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().find(|&&l| l > 1) {
        Some(l) => Err(Error::Domain(format!("label {l} is not 0 or 1"))),
        None => Ok(()),
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Two-class softmax, numerically stable. Returns `(p0, p1)`.
#[inline]
pub(crate) fn softmax2(z0: f64, z1: f64) -> (f64, f64) {
    let p1 = sigmoid(z1 - z0);
    let p0 = sigmoid(z0 - z1);
    (p0, p1)
}

/// Mean softmax cross-entropy over a `batch × 2` logit matrix.
pub fn cross_entropy(logits: &Matrix, labels: &[u8]) -> Result<LossResult> {
    let n = logits.rows();
    if n == 0 {
        return Err(Error::Domain("cross-entropy over an empty batch".into()));
    }
    if logits.cols() != 2 || labels.len() != n {
        return Err(Error::Shape(format!(
            "expected {n}x2 logits for {} labels, got {}x{}",
            labels.len(),
            logits.rows(),
            logits.cols()
        )));
    }
    check_labels(labels)?;
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Matrix::zeros(n, 2);
    for (r, &y) in labels.iter().enumerate() {
        let (z0, z1) = (logits.get(r, 0), logits.get(r, 1));
        // −log softmax_y = softplus(z_other − z_y)
        total += if y == 1 { softplus(z0 - z1) } else { softplus(z1 - z0) };
        let (p0, p1) = softmax2(z0, z1);
        let (t0, t1) = if y == 1 { (0.0, 1.0) } else { (1.0, 0.0) };
        grad.set(r, 0, (p0 - t0) * inv_n);
        grad.set(r, 1, (p1 - t1) * inv_n);
    }
    Ok(LossResult {
        value: total * inv_n,
        grad,
    })
}

/// `−r²` between predictions and targets, with its gradient w.r.t. `pred`.
///
/// With centred values `x = pred − mean`, `y = target − mean`,
/// `r = Sxy / sqrt(Sxx·Syy)` and
/// `∂r/∂pred_i = y_i / sqrt(Sxx·Syy) − r·x_i / Sxx`.
pub fn neg_sq_pearson(pred: &[f64], target: &[f64]) -> Result<LossResult> {
    let n = pred.len();
    if n != target.len() {
        return Err(Error::Shape(format!("{n} predictions for {} targets", target.len())));
    }
    if n < 2 {
        return Err(Error::DegenerateBatch(format!("correlation needs at least 2 points, got {n}")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(pred), mean(target));
    let xs: Vec<f64> = pred.iter().map(|v| v - mx).collect();
    let ys: Vec<f64> = target.iter().map(|v| v - my).collect();
    let sxx: f64 = xs.iter().map(|v| v * v).sum();
    let syy: f64 = ys.iter().map(|v| v * v).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
    let dof = (n - 1) as f64;
    if (sxx / dof).sqrt() < VARIANCE_FLOOR || (syy / dof).sqrt() < VARIANCE_FLOOR {
        return Err(Error::DegenerateBatch("prediction or target variance below floor".into()));
    }
    let denom = (sxx * syy).sqrt();
    let r = (sxy / denom).clamp(-1.0, 1.0);
    let grad: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| -2.0 * r * (y / denom - r * x / sxx))
        .collect();
    let grad = Matrix::column(&grad);
    grad.ensure_finite("correlation gradient")?;
    Ok(LossResult { value: -r * r, grad })
}

/// Mean binary cross-entropy on logits, in the overflow-free form
/// `max(z, 0) − z·t + ln(1 + e^{−|z|})`.
pub fn bce(logit: &[f64], target: &[u8]) -> Result<LossResult> {
    let n = logit.len();
    if n == 0 {
        return Err(Error::Domain("binary cross-entropy over an empty batch".into()));
    }
    if target.len() != n {
        return Err(Error::Shape(format!("{n} logits for {} targets", target.len())));
    }
    check_labels(target)?;
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (&z, &t) in logit.iter().zip(target) {
        let t = f64::from(t);
        total += z.max(0.0) - z * t + libm::log1p(libm::exp(-z.abs()));
        grad.push((sigmoid(z) - t) * inv_n);
    }
    Ok(LossResult {
        value: total * inv_n,
        grad: Matrix::column(&grad),
    })
}

/// Gradient of `L_br = −λ·L_bp` with respect to the bias-head output.
pub fn adversarial_grad(bias_loss: &LossResult, lambda: f64) -> Result<Matrix> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be a finite value >= 0, got {lambda}")));
    }
    Ok(bias_loss.grad.scale(-lambda))
}

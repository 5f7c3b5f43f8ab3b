//! Task losses with their analytic gradients, and inverse-frequency class weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, clamp_prob, Tensor2, PROB_CLAMP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRates {
    pub au: Vec<f64>,
    pub ex: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub au_weights: Vec<f64>,
    pub ex_weights: Vec<f64>,
    pub source_rates: SourceRates,
}

impl ClassWeights {
    pub fn from_rates(au_rates: &[f64], ex_rates: &[f64]) -> Result<Self> {
        Ok(Self {
            au_weights: au_weights_from_rates(au_rates)?,
            ex_weights: inverse_frequency_weights(ex_rates)?,
            source_rates: SourceRates {
                au: au_rates.to_vec(),
                ex: ex_rates.to_vec(),
            },
        })
    }

    /// All-ones weights for `n` AUs and `c` classes.
    pub fn uniform(n: usize, c: usize) -> Self {
        Self {
            au_weights: vec![1.0; n],
            ex_weights: vec![1.0; c],
            source_rates: SourceRates {
                au: vec![1.0; n],
                ex: vec![1.0; c],
            },
        }
    }
}

/// `wᵢ = N·(1/rᵢ) / Σⱼ(1/rⱼ)`; the result sums to `N`.
pub fn au_weights_from_rates(rates: &[f64]) -> Result<Vec<f64>> {
    inverse_frequency_weights(rates)
}

/// Same normalization as [`au_weights_from_rates`], used for expression classes too.
pub fn inverse_frequency_weights(rates: &[f64]) -> Result<Vec<f64>> {
    if rates.is_empty() {
        return Err(Error::Config("no occurrence rates given".into()));
    }
    for (index, &rate) in rates.iter().enumerate() {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::DegenerateClass { index, rate });
        }
    }
    let n = rates.len() as f64;
    let total: f64 = rates.iter().map(|r| 1.0 / r).sum();
    Ok(rates.iter().map(|r| n * (1.0 / r) / total).collect())
}

fn check_binary(target: &[f64]) -> Result<()> {
    match target.iter().position(|&t| t != 0.0 && t != 1.0) {
        Some(i) => Err(Error::Label(format!("AU target {i} is {}, expected 0 or 1", target[i]))),
        None => Ok(()),
    }
}

fn check_lengths(pred: usize, target: usize, w: usize) -> Result<()> {
    if pred != target || pred != w {
        return Err(Error::shape("AU loss prediction vs target", (pred, 1), (target, w)));
    }
    Ok(())
}

/// `(value, ∂/∂pred)` of the per-sample term
/// `−(1/N) Σᵢ wᵢ [yᵢ log ŷᵢ + (1−yᵢ) ŷᵢᵃ log(1−ŷᵢ)]` with `a = 1` for the
/// asymmetric form and `a = 0` for plain weighted BCE. Entries where `mask`
/// is false contribute nothing but still count in `N`.
fn au_terms(pred: &[f64], target: &[f64], mask: Option<&[bool]>, w: &[f64], asymmetric: bool) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let p = clamp_prob(pred[i]);
        let inside = pred[i] > PROB_CLAMP && pred[i] < 1.0 - PROB_CLAMP;
        let (term, dterm) = if target[i] == 1.0 {
            (p.ln(), 1.0 / p)
        } else if asymmetric {
            (p * (1.0 - p).ln(), (1.0 - p).ln() - p / (1.0 - p))
        } else {
            ((1.0 - p).ln(), -1.0 / (1.0 - p))
        };
        loss -= w[i] * term / n;
        if inside {
            grad[i] = -w[i] * dterm / n;
        }
    }
    (loss, grad)
}

pub fn weighted_asymmetric_loss(pred: &[f64], target: &[f64], w: &[f64]) -> Result<f64> {
    Ok(weighted_asymmetric_loss_grad(pred, target, w)?.0)
}

pub fn weighted_asymmetric_loss_grad(pred: &[f64], target: &[f64], w: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_lengths(pred.len(), target.len(), w.len())?;
    check_binary(target)?;
    Ok(au_terms(pred, target, None, w, true))
}

/// Asymmetric loss over partially labelled AUs. Returns `None` when no entry is labelled.
pub fn weighted_asymmetric_loss_masked(pred: &[f64], target: &[Option<bool>], w: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
    check_lengths(pred.len(), target.len(), w.len())?;
    if target.iter().all(Option::is_none) {
        return Ok(None);
    }
    let mask: Vec<bool> = target.iter().map(Option::is_some).collect();
    let dense: Vec<f64> = target.iter().map(|t| if *t == Some(true) { 1.0 } else { 0.0 }).collect();
    Ok(Some(au_terms(pred, &dense, Some(&mask), w, true)))
}

/// The symmetric counterpart: weighted mean binary cross-entropy.
pub fn weighted_binary_cross_entropy(pred: &[f64], target: &[f64], w: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), target.len(), w.len())?;
    check_binary(target)?;
    Ok(au_terms(pred, target, None, w, false).0)
}

pub fn weighted_cross_entropy(logits: &[f64], target: usize, weights: &[f64]) -> Result<f64> {
    Ok(weighted_cross_entropy_grad(logits, target, weights)?.0)
}

/// `−P[t]·log softmax(z)[t]` and its gradient in `z`.
pub fn weighted_cross_entropy_grad(logits: &[f64], target: usize, weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != weights.len() {
        return Err(Error::shape("cross entropy logits vs class weights", (logits.len(), 1), (weights.len(), 1)));
    }
    if target >= logits.len() {
        return Err(Error::Label(format!(
            "expression class {target} out of range [0, {})",
            logits.len()
        )));
    }
    let probs = math::softmax(logits)?;
    let pt = probs[target];
    let scale = weights[target];
    let loss = -scale * clamp_prob(pt).ln();
    let grad = if pt > PROB_CLAMP && pt < 1.0 - PROB_CLAMP {
        probs
            .iter()
            .enumerate()
            .map(|(i, &p)| scale * (p - if i == target { 1.0 } else { 0.0 }))
            .collect()
    } else {
        vec![0.0; logits.len()]
    };
    Ok((loss, grad))
}

struct Moments {
    mean_x: f64,
    mean_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn moments(x: &[f64], y: &[f64]) -> Result<Moments> {
    if x.len() != y.len() {
        return Err(Error::shape("CCC inputs", (x.len(), 1), (y.len(), 1)));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!("CCC needs at least 2 values, got {}", x.len())));
    }
    let b = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / b;
    let mean_y = y.iter().sum::<f64>() / b;
    let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
    for (a, c) in x.iter().zip(y) {
        let (dx, dy) = (a - mean_x, c - mean_y);
        var_x += dx * dx;
        var_y += dy * dy;
        cov += dx * dy;
    }
    Ok(Moments {
        mean_x,
        mean_y,
        var_x: var_x / b,
        var_y: var_y / b,
        cov: cov / b,
    })
}

/// Concordance correlation coefficient with population moments. Returns 0
/// when both inputs are constant and equal.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(ccc_grad(x, y)?.0)
}

/// CCC and its gradient with respect to `x`.
pub fn ccc_grad(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let m = moments(x, y)?;
    let den = m.var_x + m.var_y + (m.mean_x - m.mean_y).powi(2);
    // Rounding in the means can leave a tiny positive `den` for constant inputs.
    let constant_equal = x.iter().chain(y).all(|&v| v == x[0]);
    if den == 0.0 || constant_equal {
        log::warn!("CCC of two identical constant sequences is undefined; reporting 0");
        return Ok((0.0, vec![0.0; x.len()]));
    }
    let num = 2.0 * m.cov;
    let b = x.len() as f64;
    let grad = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let d_num = 2.0 * (yi - m.mean_y) / b;
            let d_den = 2.0 * (xi - m.mean_x) / b + 2.0 * (m.mean_x - m.mean_y) / b;
            (d_num * den - num * d_den) / (den * den)
        })
        .collect();
    Ok((num / den, grad))
}

fn column(t: &Tensor2, c: usize) -> Vec<f64> {
    (0..t.rows()).map(|r| t.get(r, c)).collect()
}

/// `(1 − CCC_valence) + (1 − CCC_arousal)` over a `[B × 2]` batch.
pub fn va_loss(pred: &Tensor2, target: &Tensor2) -> Result<f64> {
    Ok(va_loss_grad(pred, target)?.0)
}

pub fn va_loss_grad(pred: &Tensor2, target: &Tensor2) -> Result<(f64, Tensor2)> {
    if pred.shape() != target.shape() || pred.cols() != 2 {
        return Err(Error::shape("VA loss prediction vs target", pred.shape(), target.shape()));
    }
    let mut loss = 0.0;
    let mut grad = Tensor2::zeros(pred.rows(), 2);
    for c in 0..2 {
        let (v, g) = ccc_grad(&column(pred, c), &column(target, c))?;
        loss += 1.0 - v;
        for (r, gr) in g.into_iter().enumerate() {
            grad.set(r, c, -gr);
        }
    }
    Ok((loss, grad))
}

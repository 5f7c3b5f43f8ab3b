//! Valence-arousal regression head, expression logit head and the additive
//! cross-attention that reweights expression logits by AU activations.

use crate::error::{Error, Result};
use crate::math::{
    self, affine_backward, affine_forward, axpy, batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormState,
    BnCache, BnMode, Tensor2,
};

pub const NUM_EXPRESSIONS: usize = 8;
pub const EXPRESSION_NAMES: [&str; NUM_EXPRESSIONS] =
    ["neutral", "anger", "disgust", "fear", "happiness", "sadness", "surprise", "other"];
pub const DEFAULT_ATTN_DIM: usize = 32;
/// `tanh` rounds to exactly ±1 past |x| ≈ 19; VA outputs are held strictly inside.
const TANH_BOUND: f64 = 1.0 - f64::EPSILON;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `[d_att × N]`
    pub query: Tensor2,
    /// `[d_att × C]`
    pub key: Tensor2,
    /// `[C × d_att]`
    pub value: Tensor2,
}

impl AttentionParams {
    pub fn zeros(num_aus: usize, num_classes: usize, attn_dim: usize) -> Self {
        Self {
            query: Tensor2::zeros(attn_dim, num_aus),
            key: Tensor2::zeros(attn_dim, num_classes),
            value: Tensor2::zeros(num_classes, attn_dim),
        }
    }

    pub fn attn_dim(&self) -> usize {
        self.query.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// `[2 × D]`
    pub va_weight: Tensor2,
    pub va_bias: Vec<f64>,
    /// `None` drops the normalization stage: `tanh(affine(x))`.
    pub va_bn: Option<BatchNormState>,
    /// `[C × D]`
    pub ex_weight: Tensor2,
    pub ex_bias: Vec<f64>,
    /// `None` uses the raw logits directly as predictions.
    pub attention: Option<AttentionParams>,
}

impl HeadParams {
    pub fn zeros(input_dim: usize, num_aus: usize, num_classes: usize, attn_dim: usize) -> Self {
        Self {
            va_weight: Tensor2::zeros(2, input_dim),
            va_bias: vec![0.0; 2],
            va_bn: Some(BatchNormState::new(2)),
            ex_weight: Tensor2::zeros(num_classes, input_dim),
            ex_bias: vec![0.0; num_classes],
            attention: Some(AttentionParams::zeros(num_aus, num_classes, attn_dim)),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.ex_weight.rows()
    }

    pub fn validate(&self, input_dim: usize, num_aus: usize) -> Result<()> {
        let c = self.num_classes();
        if self.va_weight.shape() != (2, input_dim) {
            return Err(Error::shape("VA weight", self.va_weight.shape(), (2, input_dim)));
        }
        if self.va_bias.len() != 2 {
            return Err(Error::shape("VA bias", (self.va_bias.len(), 1), (2, 1)));
        }
        if let Some(bn) = &self.va_bn {
            bn.validate()?;
            if bn.width() != 2 {
                return Err(Error::shape("VA batchnorm width", (bn.width(), 1), (2, 1)));
            }
        }
        if self.ex_weight.cols() != input_dim {
            return Err(Error::shape("EX weight", self.ex_weight.shape(), (c, input_dim)));
        }
        if self.ex_bias.len() != c {
            return Err(Error::shape("EX bias", (self.ex_bias.len(), 1), (c, 1)));
        }
        if let Some(a) = &self.attention {
            let d = a.attn_dim();
            if d == 0 {
                return Err(Error::Config("attention width must be at least 1".into()));
            }
            if a.query.shape() != (d, num_aus) {
                return Err(Error::shape("attention query", a.query.shape(), (d, num_aus)));
            }
            if a.key.shape() != (d, c) {
                return Err(Error::shape("attention key", a.key.shape(), (d, c)));
            }
            if a.value.shape() != (c, d) {
                return Err(Error::shape("attention value", a.value.shape(), (c, d)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum VaNorm {
    None,
    Train(BnCache),
    Infer,
}

/// Cached values of a VA head pass over a batch.
#[derive(Clone, Debug)]
pub struct VaForward {
    pub output: Tensor2,
    norm: VaNorm,
}

impl VaForward {
    /// Batch moments of the affine outputs in train mode with batchnorm.
    pub fn batch_moments(&self) -> Option<(&[f64], &[f64])> {
        match &self.norm {
            VaNorm::Train(c) => Some((&c.batch_mean, &c.batch_var)),
            _ => None,
        }
    }
}

/// `tanh(batchnorm(W_VA x + b_VA))` over a batch. Train mode does not update
/// the running statistics; callers fold [`VaForward::batch_moments`] in.
pub fn va_head_forward(x: &Tensor2, params: &HeadParams, mode: BnMode) -> Result<VaForward> {
    let lin = affine_forward(x, &params.va_weight, &params.va_bias)?;
    let (mut out, norm) = match (&params.va_bn, mode) {
        (None, _) => (lin, VaNorm::None),
        (Some(bn), BnMode::Train) => {
            let (o, cache) = batchnorm_train(&lin, bn)?;
            (o, VaNorm::Train(cache))
        }
        (Some(bn), BnMode::Infer) => (batchnorm_infer(&lin, bn)?, VaNorm::Infer),
    };
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = v.tanh().clamp(-TANH_BOUND, TANH_BOUND));
    Ok(VaForward { output: out, norm })
}

pub fn va_head(x: &Tensor2, params: &HeadParams, mode: BnMode) -> Result<Tensor2> {
    Ok(va_head_forward(x, params, mode)?.output)
}

#[derive(Clone, Debug)]
pub struct VaGrads {
    pub input: Tensor2,
    pub weight: Tensor2,
    pub bias: Vec<f64>,
    /// `(gamma, beta)` when the head carries batchnorm.
    pub bn: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn va_head_backward(x: &Tensor2, params: &HeadParams, fwd: &VaForward, dout: &Tensor2) -> VaGrads {
    let mut d = dout.clone();
    for (g, y) in d.data_mut().iter_mut().zip(fwd.output.data()) {
        *g *= 1.0 - y * y;
    }
    let (d_lin, bn) = match (&fwd.norm, &params.va_bn) {
        (VaNorm::Train(cache), Some(state)) => {
            let g = batchnorm_backward(cache, &state.gamma, &d);
            (g.input, Some((g.gamma, g.beta)))
        }
        (VaNorm::Infer, Some(state)) => {
            // Affine in infer mode: y = gamma·(l − μ)/σ + beta.
            let mut d_lin = d.clone();
            let mut dgamma = vec![0.0; 2];
            let mut dbeta = vec![0.0; 2];
            let lin = affine_forward(x, &params.va_weight, &params.va_bias).expect("checked in forward");
            for r in 0..d.rows() {
                for c in 0..2 {
                    let sd = (state.running_var[c] + state.eps).sqrt();
                    let g = d.get(r, c);
                    dbeta[c] += g;
                    dgamma[c] += g * (lin.get(r, c) - state.running_mean[c]) / sd;
                    d_lin.set(r, c, g * state.gamma[c] / sd);
                }
            }
            (d_lin, Some((dgamma, dbeta)))
        }
        _ => (d, None),
    };
    let aff = affine_backward(x, &params.va_weight, &d_lin);
    VaGrads {
        input: aff.input,
        weight: aff.weight,
        bias: aff.bias,
        bn,
    }
}

/// Raw expression logits `W_EX x + b_EX`.
pub fn ex_logits(x: &[f64], params: &HeadParams) -> Result<Vec<f64>> {
    let mut z = params.ex_weight.matvec(x)?;
    axpy(1.0, &params.ex_bias, &mut z);
    Ok(z)
}

/// Accumulates logit-head parameter gradients and returns `∂L/∂x`.
pub fn ex_logits_backward(
    x: &[f64],
    params: &HeadParams,
    d_logits: &[f64],
    d_weight: &mut Tensor2,
    d_bias: &mut [f64],
) -> Vec<f64> {
    d_weight.add_outer(1.0, d_logits, x);
    axpy(1.0, d_logits, d_bias);
    params.ex_weight.tmatvec(d_logits).expect("shape checked in forward")
}

#[derive(Clone, Debug)]
pub struct AttentionForward {
    pub weights: Vec<f64>,
    pub weighted_logits: Vec<f64>,
    hidden: Vec<f64>,
}

/// `h = W_v·tanh(W_q ŷ_AU + W_k ỹ_EX)`, `a = softmax(h)`, `ŷ_EX = a ⊙ ỹ_EX`.
pub fn cross_attention(y_au: &[f64], ex_raw: &[f64], attn: &AttentionParams) -> Result<AttentionForward> {
    let mut u = attn.query.matvec(y_au)?;
    axpy(1.0, &attn.key.matvec(ex_raw)?, &mut u);
    let hidden: Vec<f64> = u.iter().map(|v| v.tanh()).collect();
    let scores = attn.value.matvec(&hidden)?;
    if scores.len() != ex_raw.len() {
        return Err(Error::shape("attention scores vs logits", (scores.len(), 1), (ex_raw.len(), 1)));
    }
    let weights = math::softmax(&scores)?;
    let weighted_logits = weights.iter().zip(ex_raw).map(|(a, z)| a * z).collect();
    Ok(AttentionForward {
        weights,
        weighted_logits,
        hidden,
    })
}

pub struct AttentionGrads {
    pub query: Tensor2,
    pub key: Tensor2,
    pub value: Tensor2,
}

impl AttentionGrads {
    pub fn zeros_like(a: &AttentionParams) -> Self {
        Self {
            query: Tensor2::zeros(a.query.rows(), a.query.cols()),
            key: Tensor2::zeros(a.key.rows(), a.key.cols()),
            value: Tensor2::zeros(a.value.rows(), a.value.cols()),
        }
    }
}

/// Accumulates attention parameter gradients; returns `(∂L/∂ŷ_AU, ∂L/∂ỹ_EX)`.
pub fn cross_attention_backward(
    y_au: &[f64],
    ex_raw: &[f64],
    attn: &AttentionParams,
    fwd: &AttentionForward,
    d_weighted: &[f64],
    grads: &mut AttentionGrads,
) -> (Vec<f64>, Vec<f64>) {
    let mut d_ex: Vec<f64> = d_weighted.iter().zip(&fwd.weights).map(|(g, a)| g * a).collect();
    let d_weights: Vec<f64> = d_weighted.iter().zip(ex_raw).map(|(g, z)| g * z).collect();
    let d_scores = math::softmax_backward(&fwd.weights, &d_weights);
    grads.value.add_outer(1.0, &d_scores, &fwd.hidden);
    let d_hidden = attn.value.tmatvec(&d_scores).expect("shape");
    let d_u: Vec<f64> = d_hidden.iter().zip(&fwd.hidden).map(|(g, t)| g * (1.0 - t * t)).collect();
    grads.query.add_outer(1.0, &d_u, y_au);
    grads.key.add_outer(1.0, &d_u, ex_raw);
    let d_au = attn.query.tmatvec(&d_u).expect("shape");
    axpy(1.0, &attn.key.tmatvec(&d_u).expect("shape"), &mut d_ex);
    (d_au, d_ex)
}

/// Final expression scores: attention-weighted logits when attention is
/// enabled, raw logits otherwise.
pub fn expression_scores(y_au: &[f64], ex_raw: &[f64], params: &HeadParams) -> Result<Vec<f64>> {
    match &params.attention {
        Some(a) => Ok(cross_attention(y_au, ex_raw, a)?.weighted_logits),
        None => Ok(ex_raw.to_vec()),
    }
}

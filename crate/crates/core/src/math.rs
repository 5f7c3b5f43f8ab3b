//! Dense row-major matrices, activations, batch normalization and a
//! central-difference gradient oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp for probabilities fed to a logarithm; the upper clamp is `1 - PROB_CLAMP`.
pub const PROB_CLAMP: f64 = 1e-7;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const COSINE_EPS: f64 = 1e-8;

/// Row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("tensor data length", (rows, cols), (data.len(), 1)));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("ragged rows", (rows.len(), cols), (1, r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// A `1 × n` matrix.
    pub fn row_vector(v: Vec<f64>) -> Result<Self> {
        let n = v.len();
        Self::new(1, n, v)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape("matvec", self.shape(), (x.len(), 1)));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `selfᵀ · y` for a column vector `y`.
    pub fn tmatvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::shape("transposed matvec", self.shape(), (y.len(), 1)));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            axpy(yr, self.row(r), &mut out);
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let mut out = Tensor2::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    /// `self += alpha · a bᵀ`.
    pub fn add_outer(&mut self, alpha: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            let s = alpha * ar;
            if s != 0.0 {
                axpy(s, b, self.row_mut(r));
            }
        }
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Tensor2) {
        debug_assert_eq!(self.shape(), other.shape());
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Row-wise `W·x[i] + b` for a batch `x` of shape `[B × D]`, `W` of shape `[O × D]`.
pub fn affine_forward(x: &Tensor2, w: &Tensor2, b: &[f64]) -> Result<Tensor2> {
    if x.cols() != w.cols() {
        return Err(Error::shape("affine input vs weight", x.shape(), w.shape()));
    }
    if b.len() != w.rows() {
        return Err(Error::shape("affine bias vs weight", (b.len(), 1), w.shape()));
    }
    let mut out = Tensor2::zeros(x.rows(), w.rows());
    for r in 0..x.rows() {
        let xr = x.row(r);
        for (o, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = dot(w.row(o), xr) + b[o];
        }
    }
    Ok(out)
}

pub struct AffineGrads {
    pub input: Tensor2,
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

pub fn affine_backward(x: &Tensor2, w: &Tensor2, dout: &Tensor2) -> AffineGrads {
    let mut input = Tensor2::zeros(x.rows(), x.cols());
    let mut weight = Tensor2::zeros(w.rows(), w.cols());
    let mut bias = vec![0.0; w.rows()];
    for r in 0..x.rows() {
        let g = dout.row(r);
        weight.add_outer(1.0, g, x.row(r));
        axpy(1.0, g, &mut bias);
        for (o, &go) in g.iter().enumerate() {
            axpy(go, w.row(o), input.row_mut(r));
        }
    }
    AffineGrads {
        input,
        weight,
        bias,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.gamma.len();
        if self.beta.len() != n || self.running_mean.len() != n || self.running_var.len() != n {
            return Err(Error::Config(format!(
                "batchnorm vectors disagree in length: gamma {}, beta {}, running_mean {}, running_var {}",
                n,
                self.beta.len(),
                self.running_mean.len(),
                self.running_var.len()
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("batchnorm eps must be positive, got {}", self.eps)));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!(
                "batchnorm momentum must lie in (0, 1), got {}",
                self.momentum
            )));
        }
        if self.running_var.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Config("batchnorm running_var must be nonnegative".into()));
        }
        Ok(())
    }

    /// Exponential moving average toward the given batch moments.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// Intermediate values kept by a train-mode batchnorm pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub normalized: Tensor2,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Train-mode normalization with population batch moments. Does not touch the running stats.
pub fn batchnorm_train(x: &Tensor2, state: &BatchNormState) -> Result<(Tensor2, BnCache)> {
    state.validate()?;
    if x.cols() != state.width() {
        return Err(Error::shape("batchnorm input vs state", x.shape(), (1, state.width())));
    }
    let b = x.rows();
    if b < 2 {
        return Err(Error::DegenerateBatch(format!(
            "train-mode batchnorm needs at least 2 rows, got {b}"
        )));
    }
    let cols = x.cols();
    let bf = b as f64;
    let mut mean = vec![0.0; cols];
    for r in 0..b {
        axpy(1.0 / bf, x.row(r), &mut mean);
    }
    let mut var = vec![0.0; cols];
    for r in 0..b {
        for (c, v) in var.iter_mut().enumerate() {
            let d = x.get(r, c) - mean[c];
            *v += d * d / bf;
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
    let mut normalized = Tensor2::zeros(b, cols);
    let mut out = Tensor2::zeros(b, cols);
    for r in 0..b {
        for c in 0..cols {
            let xh = (x.get(r, c) - mean[c]) * inv_std[c];
            normalized.set(r, c, xh);
            out.set(r, c, state.gamma[c] * xh + state.beta[c]);
        }
    }
    Ok((
        out,
        BnCache {
            normalized,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

pub fn batchnorm_infer(x: &Tensor2, state: &BatchNormState) -> Result<Tensor2> {
    state.validate()?;
    if x.cols() != state.width() {
        return Err(Error::shape("batchnorm input vs state", x.shape(), (1, state.width())));
    }
    let mut out = Tensor2::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let xh = (x.get(r, c) - state.running_mean[c]) / (state.running_var[c] + state.eps).sqrt();
            out.set(r, c, state.gamma[c] * xh + state.beta[c]);
        }
    }
    Ok(out)
}

/// Batch normalization; train mode also folds the batch moments into the running stats.
pub fn batchnorm_forward(x: &Tensor2, state: &mut BatchNormState, mode: BnMode) -> Result<Tensor2> {
    match mode {
        BnMode::Train => {
            let (out, cache) = batchnorm_train(x, state)?;
            state.update_running(&cache.batch_mean, &cache.batch_var);
            Ok(out)
        }
        BnMode::Infer => batchnorm_infer(x, state),
    }
}

pub struct BnGrads {
    pub input: Tensor2,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn batchnorm_backward(cache: &BnCache, gamma: &[f64], dout: &Tensor2) -> BnGrads {
    let (b, cols) = dout.shape();
    let bf = b as f64;
    let mut dgamma = vec![0.0; cols];
    let mut dbeta = vec![0.0; cols];
    for r in 0..b {
        for c in 0..cols {
            let g = dout.get(r, c);
            dbeta[c] += g;
            dgamma[c] += g * cache.normalized.get(r, c);
        }
    }
    let mut input = Tensor2::zeros(b, cols);
    for r in 0..b {
        for c in 0..cols {
            let xh = cache.normalized.get(r, c);
            let v = gamma[c] * cache.inv_std[c] / bf * (bf * dout.get(r, c) - dbeta[c] - xh * dgamma[c]);
            input.set(r, c, v);
        }
    }
    BnGrads {
        input,
        gamma: dgamma,
        beta: dbeta,
    }
}

/// Max-subtracted softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::shape("softmax input", (0, 0), (1, 1)));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Pulls `d loss / d softmax` back to `d loss / d input` given the softmax output `a`.
pub fn softmax_backward(a: &[f64], da: &[f64]) -> Vec<f64> {
    let inner = dot(a, da);
    a.iter().zip(da).map(|(ai, di)| ai * (di - inner)).collect()
}

/// `ReLU(u)·ReLU(v) / (‖ReLU(u)‖‖ReLU(v)‖ + eps)`.
pub fn cosine_similarity_relu(u: &[f64], v: &[f64], eps: f64) -> Result<f64> {
    Ok(cosine_similarity_relu_grad(u, v, eps)?.value)
}

pub struct CosineGrad {
    pub value: f64,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
}

pub fn cosine_similarity_relu_grad(u: &[f64], v: &[f64], eps: f64) -> Result<CosineGrad> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine similarity", (u.len(), 1), (v.len(), 1)));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("cosine eps must be positive, got {eps}")));
    }
    let ru: Vec<f64> = u.iter().map(|&x| relu(x)).collect();
    let rv: Vec<f64> = v.iter().map(|&x| relu(x)).collect();
    let nu = norm2(&ru);
    let nv = norm2(&rv);
    let num = dot(&ru, &rv);
    let den = nu * nv + eps;
    let value = num / den;

    // d/d(ru) = rv/den - num·nv·ru/(nu·den²), masked by the ReLU.
    let side = |ra: &[f64], rb: &[f64], raw: &[f64], na: f64, nb: f64| -> Vec<f64> {
        raw.iter()
            .zip(ra.iter().zip(rb))
            .map(|(&x, (&a, &b))| {
                if x <= 0.0 {
                    0.0
                } else {
                    b / den - num * nb * a / (na * den * den)
                }
            })
            .collect()
    };
    let du = side(&ru, &rv, u, nu, nv);
    let dv = side(&rv, &ru, v, nv, nu);
    Ok(CosineGrad { value, du, dv })
}

/// Central-difference gradient of `f` at `theta`.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = point[i];
        point[i] = orig + h;
        let plus = f(&point);
        point[i] = orig - h;
        let minus = f(&point);
        point[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Oracle { coordinate: i });
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm2(a).max(norm2(b));
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

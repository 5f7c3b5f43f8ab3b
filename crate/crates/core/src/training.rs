//! SGD with weight decay, SAM, cosine learning-rate decay and the staged
//! AU → EX → VA training loop.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anfl::{self, AnflGrads};
use crate::data::{self, ClassStats, Dataset, Prediction, Sample, Task};
use crate::error::{Error, Result};
use crate::heads::{self, AttentionGrads};
use crate::losses::{self, ClassWeights};
use crate::math::{argmax, BnMode, Tensor2};
use crate::metrics::{self, MetricReport};
use crate::model::{self, GradientSet, ModelParams, Parameters, GROUPS, GROUP_ANFL, GROUP_ATTN, GROUP_EX, GROUP_VA};
use crate::par::{self, Execution, CHUNK};

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const DEFAULT_SAM_RHO: f64 = 0.05;
/// Added to the gradient norm in the SAM ascent step.
pub const SAM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// `None` picks the stage default: `DEFAULT_SAM_RHO` for AU, 0 otherwise.
    pub sam_rho: Option<f64>,
    pub momentum: f64,
    pub seed: u64,
    pub stage: Task,
    /// `None` picks the stage default: ANFL frozen for EX, nothing otherwise.
    pub freeze: Option<Vec<String>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(Task::Au)
    }
}

impl TrainConfig {
    pub fn new(stage: Task) -> Self {
        Self {
            lr0: DEFAULT_LR,
            lr_min: 0.0,
            epochs: 10,
            batch_size: DEFAULT_BATCH_SIZE,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            sam_rho: None,
            momentum: 0.0,
            seed: 0,
            stage,
            freeze: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return bad(format!("lr_min must lie in [0, lr0], got {}", self.lr_min));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if let Some(rho) = self.sam_rho {
            if !(rho >= 0.0 && rho.is_finite()) {
                return bad(format!("sam_rho must be nonnegative, got {rho}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        for g in self.frozen_groups() {
            if !GROUPS.contains(&g.as_str()) {
                return bad(format!("unknown parameter group {g:?} in freeze; expected one of {GROUPS:?}"));
            }
        }
        Ok(())
    }

    pub fn effective_sam_rho(&self) -> f64 {
        self.sam_rho.unwrap_or(match self.stage {
            Task::Au => DEFAULT_SAM_RHO,
            _ => 0.0,
        })
    }

    pub fn frozen_groups(&self) -> Vec<String> {
        match (&self.freeze, self.stage) {
            (Some(f), _) => f.clone(),
            (None, Task::Ex) => vec![GROUP_ANFL.to_string()],
            (None, _) => Vec::new(),
        }
    }

    /// Groups the stage updates after removing frozen ones.
    pub fn trainable_groups(&self) -> BTreeSet<String> {
        let frozen = self.frozen_groups();
        stage_groups(self.stage)
            .iter()
            .filter(|g| !frozen.iter().any(|f| f == *g))
            .map(|g| g.to_string())
            .collect()
    }
}

/// Parameter groups that influence a stage's loss.
pub fn stage_groups(stage: Task) -> &'static [&'static str] {
    match stage {
        Task::Au => &[GROUP_ANFL],
        Task::Ex => &[GROUP_ANFL, GROUP_EX, GROUP_ATTN],
        Task::Va => &[GROUP_VA],
    }
}

/// Refreshes the stage's class weights from training-set statistics.
pub fn update_class_weights(weights: &mut ClassWeights, stats: &ClassStats, stage: Task) -> Result<()> {
    match stage {
        Task::Au => {
            weights.au_weights = losses::au_weights_from_rates(&stats.au_rates)?;
            weights.source_rates.au = stats.au_rates.clone();
        }
        Task::Ex => {
            weights.ex_weights = losses::inverse_frequency_weights(&stats.expr_freq)?;
            weights.source_rates.ex = stats.expr_freq.clone();
        }
        Task::Va => {}
    }
    Ok(())
}

pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("cosine schedule needs at least one step".into()));
    }
    if step > total_steps {
        return Err(Error::Config(format!("step {step} beyond schedule length {total_steps}")));
    }
    let t = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * t).cos()))
}

fn check_congruent<P: Parameters>(params: &mut P, grads: &GradientSet) -> Result<()> {
    let slots = params.params_mut();
    for (name, g) in grads.iter() {
        match slots.iter().find(|s| &s.name == name) {
            Some(s) if s.shape == g.shape() => {}
            Some(s) => return Err(Error::shape(format!("gradient for {name}"), g.shape(), s.shape)),
            None => return Err(Error::Config(format!("gradient {name} has no matching parameter"))),
        }
    }
    Ok(())
}

/// `θ ← θ − lr·(g + weight_decay·θ)` for every tensor present in `grads`.
pub fn sgd_step<P: Parameters>(params: &mut P, grads: &GradientSet, lr: f64, weight_decay: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    check_congruent(params, grads)?;
    for slot in params.params_mut() {
        if let Some(g) = grads.get(&slot.name) {
            for (t, &gi) in slot.data.iter_mut().zip(g.data()) {
                *t -= lr * (gi + weight_decay * *t);
            }
        }
    }
    Ok(())
}

/// Heavy-ball variant: `v ← μ·v + g + wd·θ`, `θ ← θ − lr·v`. With `μ = 0` this
/// is exactly [`sgd_step`].
pub fn momentum_step<P: Parameters>(
    params: &mut P,
    grads: &GradientSet,
    velocity: &mut GradientSet,
    lr: f64,
    weight_decay: f64,
    momentum: f64,
) -> Result<()> {
    if momentum == 0.0 {
        return sgd_step(params, grads, lr, weight_decay);
    }
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    check_congruent(params, grads)?;
    for slot in params.params_mut() {
        let Some(g) = grads.get(&slot.name) else { continue };
        if velocity.get(&slot.name).is_none() {
            velocity.insert(slot.name.clone(), Tensor2::zeros(slot.shape.0, slot.shape.1));
        }
        let v = velocity.get_mut(&slot.name).expect("inserted above");
        for ((t, &gi), vi) in slot.data.iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi + gi + weight_decay * *t;
            *t -= lr * *vi;
        }
    }
    Ok(())
}

fn add_scaled_grads<P: Parameters>(params: &mut P, grads: &GradientSet, alpha: f64) -> Result<()> {
    check_congruent(params, grads)?;
    for slot in params.params_mut() {
        if let Some(g) = grads.get(&slot.name) {
            for (t, &gi) in slot.data.iter_mut().zip(g.data()) {
                *t += alpha * gi;
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SamReport {
    /// Loss at the unperturbed point.
    pub loss: f64,
    pub grad_norm: f64,
    /// Gradient used for the descent step: taken at `θ̂`, or at `θ` on fallback.
    pub g_hat: GradientSet,
    pub fell_back: bool,
}

/// The SAM descent direction. `grad_fn` is called at `θ` and then at
/// `θ̂ = θ + rho·g/(‖g‖ + SAM_EPS)`; `params` itself is never modified.
pub fn sam_gradient<P, F>(params: &P, mut grad_fn: F, rho: f64) -> Result<SamReport>
where
    P: Parameters,
    F: FnMut(&P) -> Result<(f64, GradientSet)>,
{
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Config(format!("SAM radius must be positive, got {rho}")));
    }
    let (loss, g) = grad_fn(params)?;
    let grad_norm = g.global_norm();
    if grad_norm == 0.0 {
        log::warn!("zero gradient norm; SAM step falls back to plain SGD");
        return Ok(SamReport {
            loss,
            grad_norm,
            g_hat: g,
            fell_back: true,
        });
    }
    let mut perturbed = params.clone();
    add_scaled_grads(&mut perturbed, &g, rho / (grad_norm + SAM_EPS))?;
    let (_, g_hat) = grad_fn(&perturbed)?;
    Ok(SamReport {
        loss,
        grad_norm,
        g_hat,
        fell_back: false,
    })
}

/// One SAM update: the descent uses `ĝ` but is applied at the original `θ`.
pub fn sam_step<P, F>(params: &mut P, grad_fn: F, lr: f64, rho: f64, weight_decay: f64) -> Result<SamReport>
where
    P: Parameters,
    F: FnMut(&P) -> Result<(f64, GradientSet)>,
{
    let report = sam_gradient(params, grad_fn, rho)?;
    sgd_step(params, &report.g_hat, lr, weight_decay)?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct BackwardOutput {
    pub loss: f64,
    pub grads: GradientSet,
    /// Batchnorm batch `(mean, var)` from a VA-stage pass.
    pub bn_moments: Option<(Vec<f64>, Vec<f64>)>,
}

/// A stage's loss over a batch together with the set of groups it differentiates.
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    pub stage: Task,
    pub weights: &'a ClassWeights,
    pub trainable: BTreeSet<String>,
}

struct Acc {
    loss: f64,
    count: usize,
    anfl: Option<AnflGrads>,
    ex: Option<(Tensor2, Vec<f64>)>,
    attn: Option<AttentionGrads>,
}

impl Acc {
    fn merge(&mut self, other: Acc) {
        self.loss += other.loss;
        self.count += other.count;
        if let (Some(a), Some(b)) = (self.anfl.as_mut(), other.anfl) {
            for (x, y) in a.au_weights.iter_mut().zip(&b.au_weights) {
                x.add_scaled(1.0, y);
            }
            for (x, y) in a.au_biases.iter_mut().zip(&b.au_biases) {
                crate::math::axpy(1.0, y, x);
            }
            a.gcn_weight.add_scaled(1.0, &b.gcn_weight);
            a.anchors.add_scaled(1.0, &b.anchors);
        }
        if let (Some((w, bias)), Some((w2, bias2))) = (self.ex.as_mut(), other.ex) {
            w.add_scaled(1.0, &w2);
            crate::math::axpy(1.0, &bias2, bias);
        }
        if let (Some(a), Some(b)) = (self.attn.as_mut(), other.attn) {
            a.query.add_scaled(1.0, &b.query);
            a.key.add_scaled(1.0, &b.key);
            a.value.add_scaled(1.0, &b.value);
        }
    }
}

fn row_vector(v: Vec<f64>) -> Tensor2 {
    let n = v.len();
    Tensor2::new(1, n, v).expect("gradients are finite")
}

impl<'a> Objective<'a> {
    pub fn new(stage: Task, weights: &'a ClassWeights, trainable: BTreeSet<String>) -> Self {
        Self {
            stage,
            weights,
            trainable,
        }
    }

    pub fn from_config(config: &TrainConfig, weights: &'a ClassWeights) -> Self {
        Self::new(config.stage, weights, config.trainable_groups())
    }

    pub fn trains(&self, group: &str) -> bool {
        self.trainable.contains(group)
    }

    fn empty_acc(&self, params: &ModelParams) -> Acc {
        let ex_like = matches!(self.stage, Task::Ex);
        Acc {
            loss: 0.0,
            count: 0,
            anfl: (self.trains(GROUP_ANFL) && !matches!(self.stage, Task::Va))
                .then(|| AnflGrads::zeros_like(&params.anfl)),
            ex: (ex_like && self.trains(GROUP_EX)).then(|| {
                let w = &params.heads.ex_weight;
                (Tensor2::zeros(w.rows(), w.cols()), vec![0.0; w.rows()])
            }),
            attn: match (&params.heads.attention, ex_like && self.trains(GROUP_ATTN)) {
                (Some(a), true) => Some(AttentionGrads::zeros_like(a)),
                _ => None,
            },
        }
    }

    fn au_sample(&self, params: &ModelParams, s: &Sample, acc: &mut Acc) -> Result<()> {
        let fwd = anfl::anfl_forward(&s.feature, &params.anfl, None)?;
        if let Some((l, g)) = losses::weighted_asymmetric_loss_masked(&fwd.activations, &s.au, &self.weights.au_weights)? {
            acc.loss += l;
            acc.count += 1;
            if let Some(ag) = acc.anfl.as_mut() {
                anfl::anfl_backward(&s.feature, &params.anfl, &fwd, &g, ag);
            }
        }
        Ok(())
    }

    fn ex_sample(&self, params: &ModelParams, s: &Sample, acc: &mut Acc) -> Result<()> {
        let target = s
            .expr
            .ok_or_else(|| Error::Label(format!("sample {:?} has no expression label", s.id)))?;
        let x = &s.feature;
        let raw = heads::ex_logits(x, &params.heads)?;
        let d_raw = match &params.heads.attention {
            Some(attn) => {
                let af = anfl::anfl_forward(x, &params.anfl, None)?;
                let att = heads::cross_attention(&af.activations, &raw, attn)?;
                let (l, d_scores) = losses::weighted_cross_entropy_grad(&att.weighted_logits, target, &self.weights.ex_weights)?;
                acc.loss += l;
                let mut scratch;
                let grads = match acc.attn.as_mut() {
                    Some(g) => g,
                    None => {
                        scratch = AttentionGrads::zeros_like(attn);
                        &mut scratch
                    }
                };
                let (d_au, d_raw) = heads::cross_attention_backward(&af.activations, &raw, attn, &att, &d_scores, grads);
                if let Some(ag) = acc.anfl.as_mut() {
                    anfl::anfl_backward(x, &params.anfl, &af, &d_au, ag);
                }
                d_raw
            }
            None => {
                let (l, d) = losses::weighted_cross_entropy_grad(&raw, target, &self.weights.ex_weights)?;
                acc.loss += l;
                d
            }
        };
        acc.count += 1;
        if let Some((w, b)) = acc.ex.as_mut() {
            heads::ex_logits_backward(x, &params.heads, &d_raw, w, b);
        }
        Ok(())
    }

    fn per_sample(&self, params: &ModelParams, batch: &[&Sample], exec: Execution) -> Result<(f64, GradientSet)> {
        let chunks = par::map_chunks(exec, batch.len(), CHUNK, |start, end| -> Result<Acc> {
            let mut acc = self.empty_acc(params);
            for s in &batch[start..end] {
                match self.stage {
                    Task::Au => self.au_sample(params, s, &mut acc)?,
                    _ => self.ex_sample(params, s, &mut acc)?,
                }
            }
            Ok(acc)
        });
        let mut total = self.empty_acc(params);
        for c in chunks {
            total.merge(c?);
        }
        if total.count == 0 {
            return Err(Error::InsufficientData(format!("batch has no valid {} labels", self.stage)));
        }
        let inv = 1.0 / total.count as f64;
        let mut grads = GradientSet::new();
        if let Some(a) = total.anfl {
            for (i, (w, b)) in a.au_weights.into_iter().zip(a.au_biases).enumerate() {
                grads.insert(format!("{GROUP_ANFL}.w{i}"), w);
                grads.insert(format!("{GROUP_ANFL}.b{i}"), row_vector(b));
            }
            grads.insert(format!("{GROUP_ANFL}.gcn"), a.gcn_weight);
            grads.insert(format!("{GROUP_ANFL}.anchors"), a.anchors);
        }
        if let Some((w, b)) = total.ex {
            grads.insert(format!("{GROUP_EX}.w"), w);
            grads.insert(format!("{GROUP_EX}.b"), row_vector(b));
        }
        if let Some(a) = total.attn {
            grads.insert(format!("{GROUP_ATTN}.q"), a.query);
            grads.insert(format!("{GROUP_ATTN}.k"), a.key);
            grads.insert(format!("{GROUP_ATTN}.v"), a.value);
        }
        grads.scale(inv);
        Ok((total.loss * inv, grads))
    }

    fn va_batch(&self, params: &ModelParams, batch: &[&Sample]) -> Result<BackwardOutput> {
        let x = data::feature_matrix(batch);
        let mut t = Vec::with_capacity(batch.len() * 2);
        for s in batch {
            let va = s
                .va
                .ok_or_else(|| Error::Label(format!("sample {:?} has no valence/arousal label", s.id)))?;
            t.extend(va);
        }
        let target = Tensor2::new(batch.len(), 2, t)?;
        let fwd = heads::va_head_forward(&x, &params.heads, BnMode::Train)?;
        let (loss, dout) = losses::va_loss_grad(&fwd.output, &target)?;
        let bn_moments = fwd.batch_moments().map(|(m, v)| (m.to_vec(), v.to_vec()));
        let mut grads = GradientSet::new();
        if self.trains(GROUP_VA) {
            let g = heads::va_head_backward(&x, &params.heads, &fwd, &dout);
            grads.insert(format!("{GROUP_VA}.w"), g.weight);
            grads.insert(format!("{GROUP_VA}.b"), row_vector(g.bias));
            if let Some((gamma, beta)) = g.bn {
                grads.insert(format!("{GROUP_VA}.gamma"), row_vector(gamma));
                grads.insert(format!("{GROUP_VA}.beta"), row_vector(beta));
            }
        }
        Ok(BackwardOutput {
            loss,
            grads,
            bn_moments,
        })
    }

    /// Loss and gradients of every trainable parameter over `batch`. AU and EX
    /// losses are per-sample means; VA is a batch statistic through batchnorm.
    pub fn backward(&self, params: &ModelParams, batch: &[&Sample], batch_id: usize, exec: Execution) -> Result<BackwardOutput> {
        let out = match self.stage {
            Task::Va => self.va_batch(params, batch)?,
            _ => {
                let (loss, grads) = self.per_sample(params, batch, exec)?;
                BackwardOutput {
                    loss,
                    grads,
                    bn_moments: None,
                }
            }
        };
        if !out.loss.is_finite() || !out.grads.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite {} loss or gradient in batch {batch_id}",
                self.stage
            )));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub p_task: Option<f64>,
}

/// Runs one stage of the protocol in place and returns per-epoch history.
/// `val`, when given, is scored on the stage's task after every epoch.
pub fn train_stage(
    ds: &Dataset,
    params: &mut ModelParams,
    config: &TrainConfig,
    weights: &ClassWeights,
    val: Option<&Dataset>,
    exec: Execution,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    params.validate()?;
    if ds.dim() != params.anfl.input_dim() {
        return Err(Error::shape("dataset features vs model input", (ds.len(), ds.dim()), (ds.len(), params.anfl.input_dim())));
    }
    let view = data::task_view(ds, config.stage);
    if view.len() < config.batch_size {
        return Err(Error::InsufficientData(format!(
            "{} stage needs at least {} labelled samples, found {}",
            config.stage,
            config.batch_size,
            view.len()
        )));
    }
    let objective = Objective::from_config(config, weights);
    let rho = config.effective_sam_rho();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity = GradientSet::new();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr0, config.lr_min)?;
        let batches = data::shuffled_batches(view.len(), config.batch_size, &mut rng);
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| view[i]).collect();
            let batch_id = epoch * batches.len() + b;
            let mut moments = None;
            let (loss, grads) = if rho > 0.0 {
                let report = sam_gradient(
                    params,
                    |p| {
                        let out = objective.backward(p, &batch, batch_id, exec)?;
                        if moments.is_none() {
                            moments = out.bn_moments;
                        }
                        Ok((out.loss, out.grads))
                    },
                    rho,
                )?;
                (report.loss, report.g_hat)
            } else {
                let out = objective.backward(params, &batch, batch_id, exec)?;
                moments = out.bn_moments;
                (out.loss, out.grads)
            };
            momentum_step(params, &grads, &mut velocity, lr, config.weight_decay, config.momentum)?;
            if config.stage == Task::Va {
                if let (Some(bn), Some((m, v))) = (params.heads.va_bn.as_mut(), moments) {
                    bn.update_running(&m, &v);
                }
            }
            total += loss;
        }
        let loss = total / batches.len() as f64;
        let p_task = match val {
            Some(v) => task_score(params, v, config.stage, exec)?,
            None => None,
        };
        log::info!(
            "{} epoch {epoch}: loss {loss:.6} lr {lr:.3e} p_task {}",
            config.stage,
            p_task.map_or("-".to_string(), |p| format!("{p:.4}"))
        );
        history.push(EpochRecord {
            epoch,
            loss,
            lr,
            p_task,
        });
    }
    Ok(history)
}

/// The task's challenge score on `ds`, or `None` without usable labels.
pub fn task_score(params: &ModelParams, ds: &Dataset, task: Task, exec: Execution) -> Result<Option<f64>> {
    let view = data::task_view(ds, task);
    if view.is_empty() {
        return Ok(None);
    }
    let out = model::predict(params, &view, exec)?;
    match task {
        Task::Au => {
            let probs: Vec<Vec<f64>> = out.iter().map(|o| o.au.clone()).collect();
            let labels: Vec<Vec<Option<bool>>> = view.iter().map(|s| s.au.clone()).collect();
            Ok(metrics::score_au(&probs, &labels, metrics::DEFAULT_THRESHOLD)?.p_au)
        }
        Task::Ex => {
            let classes: Vec<usize> = out.iter().map(|o| argmax(&o.ex_scores)).collect();
            let labels: Vec<Option<usize>> = view.iter().map(|s| s.expr).collect();
            Ok(metrics::score_ex(&classes, &labels, params.heads.num_classes())?.p_ex)
        }
        Task::Va => {
            if view.len() < 2 {
                return Ok(None);
            }
            let preds: Vec<[f64; 2]> = out.iter().map(|o| o.va).collect();
            let labels: Vec<Option<[f64; 2]>> = view.iter().map(|s| s.va).collect();
            Ok(Some(metrics::score_va(&preds, &labels)?.p_va))
        }
    }
}

/// Predictions for every sample of `ds` and the full metric report.
pub fn evaluate(params: &ModelParams, ds: &Dataset, threshold: f64, exec: Execution) -> Result<(Vec<Prediction>, MetricReport)> {
    if ds.dim() != params.anfl.input_dim() {
        return Err(Error::Checkpoint(format!(
            "model expects {}-dim features, data has {}",
            params.anfl.input_dim(),
            ds.dim()
        )));
    }
    let samples: Vec<&Sample> = ds.samples().iter().collect();
    let out = model::predict(params, &samples, exec)?;
    let preds = model::to_predictions(&samples, &out);
    let report = metrics::score_predictions(&preds, ds, threshold)?;
    Ok((preds, report))
}

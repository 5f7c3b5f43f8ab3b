//! Finite-difference oracle suite over every differentiable module.
//!
//! Each check draws a random point, contracts the module output with a random
//! vector `r` to get a scalar, and compares the analytic gradient over all
//! parameters and inputs with central differences.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::anfl::{self, AnflGrads, AnflParams};
use crate::data::{synth_generate, Sample, SynthSpec, Task};
use crate::error::{Error, Result};
use crate::heads::{self, AttentionGrads, AttentionParams, HeadParams};
use crate::losses::{self, ClassWeights};
use crate::math::{self, dot, finite_diff_grad, relative_error, BatchNormState, BnMode, Tensor2, COSINE_EPS};
use crate::model::{Architecture, ModelDims, ModelParams};
use crate::par::{self, Execution};
use crate::training::{stage_groups, update_class_weights, Objective};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_POINTS: usize = 10;

/// Modules covered by [`run_gradcheck`], in report order.
pub const MODULES: [&str; 13] = [
    "anfl",
    "va_head",
    "ex_head",
    "cross_attention",
    "au_loss",
    "ex_loss",
    "va_loss",
    "batchnorm",
    "cosine",
    "softmax",
    "stage_au",
    "stage_ex",
    "stage_va",
];

#[derive(Clone, Copy, Debug)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tol: f64,
    pub seed: u64,
    pub points: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            tol: DEFAULT_TOL,
            seed: 0,
            points: DEFAULT_POINTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModuleCheck {
    pub module: &'static str,
    pub points: usize,
    pub worst_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tol: f64,
    pub checks: Vec<ModuleCheck>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor2 {
    Tensor2::new(r, c, normal(rng, r * c, scale)).expect("finite draws")
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn split<'a>(theta: &'a [f64], lens: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(lens.len());
    let mut at = 0;
    for &l in lens {
        out.push(&theta[at..at + l]);
        at += l;
    }
    out
}

fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor2 {
    Tensor2::new(rows, cols, data.to_vec()).expect("probe points are finite")
}

/// Compares `analytic` with central differences of `f` at `theta`.
fn compare<F>(f: F, theta: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = finite_diff_grad(f, theta, h)?;
    Ok(relative_error(analytic, &numeric))
}

fn check_anfl(rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let (n, d, din) = (5, 3, 4);
    let k = rng.random_range(1..n);
    let au_weights: Vec<Tensor2> = (0..n).map(|_| tensor(rng, d, din, 0.8)).collect();
    let au_biases: Vec<Vec<f64>> = (0..n).map(|_| normal(rng, d, 0.3).into_iter().map(|b| b + 0.5).collect()).collect();
    let gcn_weight = tensor(rng, d, d, 0.5);
    let anchors = Tensor2::new(n, d, (0..n * d).map(|_| rng.random::<f64>()).collect())?;
    let x = normal(rng, din, 1.0);
    let r = normal(rng, n, 1.0);
    let params = AnflParams {
        au_weights,
        au_biases,
        gcn_weight,
        anchors,
        k,
    };
    let fwd = anfl::anfl_forward(&x, &params, None)?;
    let graph = fwd.graph.clone();
    let mut grads = AnflGrads::zeros_like(&params);
    let dx = anfl::anfl_backward(&x, &params, &fwd, &r, &mut grads);

    let mut parts: Vec<&[f64]> = Vec::new();
    params.au_weights.iter().for_each(|w| parts.push(w.data()));
    params.au_biases.iter().for_each(|b| parts.push(b));
    parts.push(params.gcn_weight.data());
    parts.push(params.anchors.data());
    parts.push(&x);
    let theta = concat(&parts);
    let mut gparts: Vec<&[f64]> = Vec::new();
    grads.au_weights.iter().for_each(|w| gparts.push(w.data()));
    grads.au_biases.iter().for_each(|b| gparts.push(b));
    gparts.push(grads.gcn_weight.data());
    gparts.push(grads.anchors.data());
    gparts.push(&dx);
    let analytic = concat(&gparts);

    let mut lens = vec![d * din; n];
    lens.extend(vec![d; n]);
    lens.extend([d * d, n * d, din]);
    let f = |th: &[f64]| {
        let s = split(th, &lens);
        let p = AnflParams {
            au_weights: (0..n).map(|i| t(d, din, s[i])).collect(),
            au_biases: (0..n).map(|i| s[n + i].to_vec()).collect(),
            gcn_weight: t(d, d, s[2 * n]),
            anchors: t(n, d, s[2 * n + 1]),
            k,
        };
        anfl::anfl_forward(s[2 * n + 2], &p, Some(&graph)).map_or(f64::NAN, |o| dot(&o.activations, &r))
    };
    compare(f, &theta, &analytic, h)
}

fn va_params(w: Tensor2, b: Vec<f64>, bn: Option<BatchNormState>) -> HeadParams {
    let din = w.cols();
    HeadParams {
        va_weight: w,
        va_bias: b,
        va_bn: bn,
        ex_weight: Tensor2::zeros(1, din),
        ex_bias: vec![0.0],
        attention: None,
    }
}

fn check_va_head(rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let (bsz, din) = (6, 4);
    let x = tensor(rng, bsz, din, 1.0);
    let w = tensor(rng, 2, din, 0.5);
    let b = normal(rng, 2, 0.2);
    let mut bn = BatchNormState::new(2);
    bn.gamma = normal(rng, 2, 0.3).into_iter().map(|g| g + 1.0).collect();
    bn.beta = normal(rng, 2, 0.3);
    let r = tensor(rng, bsz, 2, 1.0);
    let params = va_params(w.clone(), b.clone(), Some(bn.clone()));
    let fwd = heads::va_head_forward(&x, &params, BnMode::Train)?;
    let g = heads::va_head_backward(&x, &params, &fwd, &r);
    let (dgamma, dbeta) = g.bn.clone().expect("batchnorm enabled");
    let theta = concat(&[w.data(), &b, &bn.gamma, &bn.beta, x.data()]);
    let analytic = concat(&[g.weight.data(), &g.bias, &dgamma, &dbeta, g.input.data()]);
    let lens = [2 * din, 2, 2, 2, bsz * din];
    let f = |th: &[f64]| {
        let s = split(th, &lens);
        let mut state = bn.clone();
        state.gamma = s[2].to_vec();
        state.beta = s[3].to_vec();
        let p = va_params(t(2, din, s[0]), s[1].to_vec(), Some(state));
        heads::va_head(&t(bsz, din, s[4]), &p, BnMode::Train).map_or(f64::NAN, |o| dot(o.data(), r.data()))
    };
    compare(f, &theta, &analytic, h)
}

fn check_ex_head(rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let (c, din) = (4, 5);
    let w = tensor(rng, c, din, 0.5);
    let b = normal(rng, c, 0.2);
    let x = normal(rng, din, 1.0);
    let r = normal(rng, c, 1.0);
    let mk = |w: Tensor2, b: Vec<f64>| HeadParams {
        va_weight: Tensor2::zeros(2, din),
        va_bias: vec![0.0; 2],
        va_bn: None,
        ex_weight: w,
        ex_bias: b,
        attention: None,
    };
    let params = mk(w.clone(), b.clone());
    let mut dw = Tensor2::zeros(c, din);
    let mut db = vec![0.0; c];
    let dx = heads::ex_logits_backward(&x, &params, &r, &mut dw, &mut db);
    let theta = concat(&[w.data(), &b, &x]);
    let analytic = concat(&[dw.data(), &db, &dx]);
    let lens = [c * din, c, din];
    let f = |th: &[f64]| {
        let s = split(th, &lens);
        heads::ex_logits(s[2], &mk(t(c, din, s[0]), s[1].to_vec())).map_or(f64::NAN, |z| dot(&z, &r))
    };
    compare(f, &theta, &analytic, h)
}

fn check_cross_attention(rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let (n, c, da) = (3, 4, 3);
    let attn = AttentionParams {
        query: tensor(rng, da, n, 0.7),
        key: tensor(rng, da, c, 0.7),
        value: tensor(rng, c, da, 0.7),
    };
    let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let z = normal(rng, c, 1.0);
    let r = normal(rng, c, 1.0);
    let fwd = heads::cross_attention(&y, &z, &attn)?;
    let mut grads = AttentionGrads::zeros_like(&attn);
    let (dy, dz) = heads::cross_attention_backward(&y, &z, &attn, &fwd, &r, &mut grads);
    let theta = concat(&[attn.query.data(), attn.key.data(), attn.value.data(), &y, &z]);
    let analytic = concat(&[grads.query.data(), grads.key.data(), grads.value.data(), &dy, &dz]);
    let lens = [da * n, da * c, c * da, n, c];
    let f = |th: &[f64]| {
        let s = split(th, &lens);
        let a = AttentionParams {
            query: t(da, n, s[0]),
            key: t(da, c, s[1]),
            value: t(c, da, s[2]),
        };
        heads::cross_attention(s[3], s[4], &a).map_or(f64::NAN, |o| dot(&o.weighted_logits, &r))
    };
    compare(f, &theta, &analytic, h)
}

fn check_au_loss(rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let n = 12;
    let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
    let target: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
    let (_, g) = losses::weighted_asymmetric_loss_grad(&pred, &target, &w)?;
    let f = |p: &[f64]| losses::weighted_asymmetric_loss(p, &target, &w).unwrap_or(f64::NAN);
    compare(f, &pred, &g, h)
}

fn check_ex_loss(rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let c = 8;
    let z = normal(rng, c, 2.0);
    let target = rng.random_range(0..c);
    let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..3.0)).collect();
    let (_, g) = losses::weighted_cross_entropy_grad(&z, target, &w)?;
    let f = |zz: &[f64]| losses::weighted_cross_entropy(zz, target, &w).unwrap_or(f64::NAN);
    compare(f, &z, &g, h)
}

fn check_va_loss(rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let b = rng.random_range(3..12);
    let pred = tensor(rng, b, 2, 0.5);
    let target = tensor(rng, b, 2, 0.5);
    let (_, g) = losses::va_loss_grad(&pred, &target)?;
    let f = |p: &[f64]| losses::va_loss(&t(b, 2, p), &target).unwrap_or(f64::NAN);
    compare(f, pred.data(), g.data(), h)
}

fn check_batchnorm(rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let (b, w) = (5, 3);
    let x = tensor(rng, b, w, 1.0);
    let mut state = BatchNormState::new(w);
    state.gamma = normal(rng, w, 0.5);
    state.beta = normal(rng, w, 0.5);
    let r = tensor(rng, b, w, 1.0);
    let (_, cache) = math::batchnorm_train(&x, &state)?;
    let g = math::batchnorm_backward(&cache, &state.gamma, &r);
    let theta = concat(&[x.data(), &state.gamma, &state.beta]);
    let analytic = concat(&[g.input.data(), &g.gamma, &g.beta]);
    let lens = [b * w, w, w];
    let f = |th: &[f64]| {
        let s = split(th, &lens);
        let mut st = state.clone();
        st.gamma = s[1].to_vec();
        st.beta = s[2].to_vec();
        math::batchnorm_train(&t(b, w, s[0]), &st).map_or(f64::NAN, |(o, _)| dot(o.data(), r.data()))
    };
    compare(f, &theta, &analytic, h)
}

fn check_cosine(rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let d = 6;
    let u: Vec<f64> = (0..d).map(|_| rng.random_range(-0.2..1.0)).collect();
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-0.2..1.0)).collect();
    let g = math::cosine_similarity_relu_grad(&u, &v, COSINE_EPS)?;
    let theta = concat(&[&u, &v]);
    let analytic = concat(&[&g.du, &g.dv]);
    let f = |th: &[f64]| math::cosine_similarity_relu(&th[..d], &th[d..], COSINE_EPS).unwrap_or(f64::NAN);
    compare(f, &theta, &analytic, h)
}

fn check_softmax(rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    let c = 6;
    let z = normal(rng, c, 2.0);
    let r = normal(rng, c, 1.0);
    let a = math::softmax(&z)?;
    let g = math::softmax_backward(&a, &r);
    let f = |zz: &[f64]| math::softmax(zz).map_or(f64::NAN, |a| dot(&a, &r));
    compare(f, &z, &g, h)
}

/// Full stage loss through a small model, checked on a random subset of
/// parameter coordinates.
fn check_stage(rng: &mut ChaCha8Rng, h: f64, stage: Task) -> Result<f64> {
    let seed = rng.random::<u64>();
    let ds = synth_generate(&SynthSpec::new(12, 24, seed))?;
    let dims = ModelDims {
        input_dim: 24,
        node_dim: 4,
        attn_dim: 3,
        num_aus: anfl::NUM_AUS,
        num_classes: heads::NUM_EXPRESSIONS,
        k: 3,
    };
    let params = ModelParams::init(dims, Architecture::default(), seed)?;
    let mut weights = ClassWeights::uniform(dims.num_aus, dims.num_classes);
    // Tiny samples can miss a class entirely; uniform weights are kept then.
    if update_class_weights(&mut weights, ds.class_stats(), stage).is_err() {
        log::debug!("gradcheck {stage}: degenerate class rates, using uniform weights");
    }
    let trainable: BTreeSet<String> = stage_groups(stage).iter().map(|g| g.to_string()).collect();
    let obj = Objective::new(stage, &weights, trainable);
    let batch: Vec<&Sample> = ds.samples().iter().collect();
    let out = obj.backward(&params, &batch, 0, Execution::Sequential)?;

    let names: Vec<String> = out.grads.names().cloned().collect();
    let mut picks: Vec<(String, usize)> = Vec::new();
    for _ in 0..16 {
        let name = names[rng.random_range(0..names.len())].clone();
        let len = out.grads.get(&name).expect("listed").data().len();
        let pick = (name, rng.random_range(0..len));
        if !picks.contains(&pick) {
            picks.push(pick);
        }
    }
    let analytic: Vec<f64> = picks.iter().map(|(n, j)| out.grads.get(n).expect("listed").data()[*j]).collect();
    let base: Vec<f64> = picks
        .iter()
        .map(|(n, j)| {
            params
                .params()
                .into_iter()
                .find(|p| &p.name == n)
                .expect("named parameter")
                .data[*j]
        })
        .collect();
    let f = |th: &[f64]| {
        let mut p = params.clone();
        for ((name, j), v) in picks.iter().zip(th) {
            let mut slots = p.params_mut();
            let slot = slots.iter_mut().find(|s| &s.name == name).expect("named parameter");
            slot.data[*j] = *v;
        }
        obj.backward(&p, &batch, 0, Execution::Sequential).map_or(f64::NAN, |o| o.loss)
    };
    compare(f, &base, &analytic, h)
}

fn run_module(module: &str, rng: &mut ChaCha8Rng, h: f64) -> Result<f64> {
    match module {
        "anfl" => check_anfl(rng, h),
        "va_head" => check_va_head(rng, h),
        "ex_head" => check_ex_head(rng, h),
        "cross_attention" => check_cross_attention(rng, h),
        "au_loss" => check_au_loss(rng, h),
        "ex_loss" => check_ex_loss(rng, h),
        "va_loss" => check_va_loss(rng, h),
        "batchnorm" => check_batchnorm(rng, h),
        "cosine" => check_cosine(rng, h),
        "softmax" => check_softmax(rng, h),
        "stage_au" => check_stage(rng, h, Task::Au),
        "stage_ex" => check_stage(rng, h, Task::Ex),
        "stage_va" => check_stage(rng, h, Task::Va),
        other => Err(Error::Config(format!("unknown gradcheck module {other:?}"))),
    }
}

/// Runs every module in [`MODULES`] at `points` seeded random points.
pub fn run_gradcheck(config: &GradcheckConfig, exec: Execution) -> Result<GradcheckReport> {
    if !(config.step > 0.0 && config.step.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {}", config.step)));
    }
    if !(config.tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {}", config.tol)));
    }
    let jobs: Vec<(usize, usize)> = (0..MODULES.len())
        .flat_map(|m| (0..config.points).map(move |p| (m, p)))
        .collect();
    let errors = par::map_indexed(exec, jobs.len(), |i| {
        let (m, p) = jobs[i];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(1_000_003).wrapping_add((m * 10_007 + p) as u64));
        run_module(MODULES[m], &mut rng, config.step)
    });
    let mut checks = Vec::with_capacity(MODULES.len());
    for (m, module) in MODULES.iter().enumerate() {
        let mut worst = 0.0f64;
        for (i, e) in errors.iter().enumerate().filter(|(i, _)| jobs[*i].0 == m) {
            let e = match e {
                Ok(v) if v.is_finite() => *v,
                Ok(_) => return Err(Error::Numerical(format!("gradcheck {module}: non-finite relative error at point {}", jobs[i].1))),
                Err(Error::Oracle { coordinate }) => {
                    return Err(Error::Numerical(format!(
                        "gradcheck {module}: non-finite evaluation at coordinate {coordinate}, point {}",
                        jobs[i].1
                    )))
                }
                Err(other) => return Err(Error::Numerical(format!("gradcheck {module}: {other}"))),
            };
            worst = worst.max(e);
        }
        checks.push(ModuleCheck {
            module,
            points: config.points,
            worst_rel_error: worst,
            passed: worst < config.tol,
        });
    }
    Ok(GradcheckReport {
        tol: config.tol,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes_and_is_deterministic() {
        let cfg = GradcheckConfig {
            points: 3,
            ..GradcheckConfig::default()
        };
        let a = run_gradcheck(&cfg, Execution::Parallel).unwrap();
        let b = run_gradcheck(&cfg, Execution::Sequential).unwrap();
        assert!(a.all_passed(), "{a:#?}");
        assert!(a.checks.len() >= 6);
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_tolerance_fails() {
        let cfg = GradcheckConfig {
            points: 1,
            tol: 1e-14,
            ..GradcheckConfig::default()
        };
        assert!(!run_gradcheck(&cfg, Execution::Parallel).unwrap().all_passed());
    }
}

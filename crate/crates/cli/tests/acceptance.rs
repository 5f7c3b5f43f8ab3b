//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use mtl_affect::checkpoint::Checkpoint;
use mtl_affect::data::{self, Dataset, Prediction, Sample, SynthSpec, Task};
use mtl_affect::gradcheck::{self, GradcheckConfig};
use mtl_affect::losses::{self, ClassWeights};
use mtl_affect::metrics::{self, DEFAULT_THRESHOLD};
use mtl_affect::model::{Architecture, GradientSet, ModelDims, ModelParams};
use mtl_affect::par::Execution;
use mtl_affect::training::{self, Objective, TrainConfig, SAM_EPS};
use mtl_affect_cli::commands::{self, EvalArgs, SynthArgs, TrainArgs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_BUDGET_SECS: f64 = 60.0;
const ONE_DECIMAL: f64 = 0.05;
const CCC_ORACLE_TOL: f64 = 1e-12;
const CCC_PROPERTY_TOL: f64 = 1e-10;
const ATTENTION_MARGIN: f64 = 0.005;
const EX_FLOOR: f64 = 0.7;
const PIPELINE_BUDGET_SECS: f64 = 600.0;
const VA_FLOOR: f64 = 0.6;
const SAM_MARGIN: f64 = 0.01;
const LOSS_EXAMPLE_TOL: f64 = 1e-9;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run(name: &str, f: fn() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(msg)
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("PASS {name}: {d} [{secs:.1}s]"),
        Err(d) => println!("FAIL {name}: {d} [{secs:.1}s]"),
    }
    outcome.is_ok()
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 gradient oracles", gradient_oracles),
        ("2 scorer arithmetic", scorer_arithmetic),
        ("3 ccc correctness", ccc_correctness),
        ("4 cross-attention ablation", attention_ablation),
        ("5 batchnorm va head", batchnorm_va),
        ("6 sam sanity", sam_sanity),
        ("7 loss identities", loss_identities),
        ("8 determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        if !run(name, f) {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn gradient_oracles() -> Outcome {
    let cfg = GradcheckConfig {
        tol: GRADCHECK_TOL,
        ..GradcheckConfig::default()
    };
    let start = Instant::now();
    let report = gradcheck::run_gradcheck(&cfg, Execution::Sequential).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = report.checks.iter().map(|c| c.worst_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.module).collect();
    let points_ok = report.checks.iter().all(|c| c.points == cfg.points);
    check(
        failed.is_empty() && points_ok && secs < GRADCHECK_BUDGET_SECS,
        format!(
            "{} modules x {} points, worst rel error {worst:.2e} (tol {GRADCHECK_TOL:e}), failed {failed:?}, {secs:.1}s sequential",
            report.checks.len(),
            cfg.points
        ),
    )
}

/// A sample with no features and only the given labels.
fn label_sample(i: usize, au: Vec<Option<bool>>, expr: Option<usize>, va: Option<[f64; 2]>) -> Sample {
    Sample {
        id: format!("f{i:06}"),
        feature: Vec::new(),
        au,
        expr,
        va,
    }
}

/// One AU column with F1 exactly `per_mille / 1000`: `v` true positives,
/// `2000 - 2v` false negatives, the rest true negatives.
fn au_column(per_mille: usize, n: usize) -> Vec<(bool, f64)> {
    let fns = 2000 - 2 * per_mille;
    (0..n)
        .map(|i| {
            if i < per_mille {
                (true, 0.9)
            } else if i < per_mille + fns {
                (true, 0.1)
            } else {
                (false, 0.1)
            }
        })
        .collect()
}

/// Predictions `a * label` on zero-mean labels give CCC `2a / (1 + a^2)`.
fn ccc_scale(target: f64) -> f64 {
    (1.0 - (1.0 - target * target).sqrt()) / target
}

fn va_fixture(n: usize, ccc_v: f64, ccc_a: f64) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let (av, aa) = (ccc_scale(ccc_v), ccc_scale(ccc_a));
    let labels: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let v = if i % 2 == 0 { 0.5 } else { -0.5 };
            let a = if (i / 2) % 2 == 0 { 0.25 } else { -0.25 };
            [v, a]
        })
        .collect();
    let preds = labels.iter().map(|l| [av * l[0], aa * l[1]]).collect();
    (preds, labels)
}

/// Percent value rounded half-up to one decimal, via integer hundredths.
fn round_tenths(percent: f64) -> f64 {
    let hundredths = (percent * 100.0).round() as i64;
    ((hundredths + 5).div_euclid(10)) as f64 / 10.0
}

/// Full-scorer fixture with uniform per-class F1 for AU and EX.
fn mtl_fixture(au_pm: usize, ex_pm: usize, va: f64) -> Result<metrics::MetricReport, String> {
    let n = 8000;
    let per_class = 1000;
    let col = au_column(au_pm, n);
    let (va_preds, va_labels) = va_fixture(n, va, va);
    let mut samples = Vec::with_capacity(n);
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let class = i / per_class;
        let predicted = if i % per_class < ex_pm { class } else { (class + 1) % 8 };
        let (truth, prob) = col[i];
        samples.push(label_sample(i, vec![Some(truth); 12], Some(class), Some(va_labels[i])));
        preds.push(Prediction {
            id: format!("f{i:06}"),
            au: vec![prob; 12],
            expr: predicted,
            va: va_preds[i],
        });
    }
    let ds = Dataset::new(samples).map_err(|e| e.to_string())?;
    metrics::score_predictions(&preds, &ds, DEFAULT_THRESHOLD).map_err(|e| e.to_string())
}

fn scorer_arithmetic() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    for (au, ex, va, total) in [(414, 322, 0.479, 121.5), (456, 333, 0.499, 128.8)] {
        let r = mtl_fixture(au, ex, va)?;
        let p = 100.0 * r.p_mtl.ok_or("no P_MTL")?;
        let exact = (au + ex) as f64 / 10.0 + va * 100.0;
        ok &= (p - exact).abs() < 1e-9 && round_tenths(p) == total;
        notes.push(format!("P_MTL {total}: got {p:.4}"));
    }

    let au_f1 = [566, 429, 611, 557, 737, 711, 665, 185, 157, 130, 878, 364];
    let n = 2000;
    let cols: Vec<Vec<(bool, f64)>> = au_f1.iter().map(|&v| au_column(v, n)).collect();
    let probs: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|c| c[i].1).collect()).collect();
    let labels: Vec<Vec<Option<bool>>> = (0..n).map(|i| cols.iter().map(|c| Some(c[i].0)).collect()).collect();
    let au = metrics::score_au(&probs, &labels, DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
    let per_au_ok = au
        .f1_per_au
        .iter()
        .zip(au_f1)
        .all(|(f, v)| f.is_some_and(|f| (f - v as f64 / 1000.0).abs() < 1e-12));
    let p_au = 100.0 * au.p_au.ok_or("no P_AU")?;
    ok &= per_au_ok && (p_au - 49.9).abs() <= ONE_DECIMAL;
    notes.push(format!("AU mean {p_au:.4}"));

    let (preds, labels) = va_fixture(1000, 0.475, 0.436);
    let labels: Vec<Option<[f64; 2]>> = labels.into_iter().map(Some).collect();
    let v = metrics::score_va(&preds, &labels).map_err(|e| e.to_string())?;
    let p_va = 100.0 * v.p_va;
    ok &= (v.ccc_valence - 0.475).abs() < 1e-12 && (v.ccc_arousal - 0.436).abs() < 1e-12;
    ok &= (p_va - 45.55).abs() < 1e-9 && round_tenths(p_va) == 45.6;
    notes.push(format!("VA {p_va:.4} -> {:.1}", round_tenths(p_va)));

    // Per class: T correct, F sent to the next class, so F1 = T / (T + F).
    let ex_f1 = [363, 246, 499, 252, 418, 369, 220, 297];
    let errors = 10_000;
    let mut classes = Vec::new();
    let mut truth = Vec::new();
    for (c, &v) in ex_f1.iter().enumerate() {
        let correct = (v as f64 * errors as f64 / (1000 - v) as f64).round() as usize;
        classes.extend(std::iter::repeat_n(c, correct));
        classes.extend(std::iter::repeat_n((c + 1) % 8, errors));
        truth.extend(std::iter::repeat_n(Some(c), correct + errors));
    }
    let ex = metrics::score_ex(&classes, &truth, 8).map_err(|e| e.to_string())?;
    let per_class_ok = ex
        .f1_per_expr
        .iter()
        .zip(ex_f1)
        .all(|(f, v)| f.is_some_and(|f| (100.0 * f - v as f64 / 10.0).abs() < ONE_DECIMAL));
    let p_ex = 100.0 * ex.p_ex.ok_or("no P_EX")?;
    ok &= per_class_ok && (p_ex - 33.3).abs() <= ONE_DECIMAL;
    notes.push(format!("EX mean {p_ex:.4}"));

    check(ok, notes.join(", "))
}

/// Population moments from all pairs: s_xy = sum_ij (x_i - x_j)(y_i - y_j) / (2 n^2).
fn ccc_pairwise(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in 0..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    let norm = 2.0 * n * n;
    let mean_gap = x.iter().sum::<f64>() / n - y.iter().sum::<f64>() / n;
    2.0 * (sxy / norm) / (sxx / norm + syy / norm + mean_gap * mean_gap)
}

fn ccc_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2022);
    let (mut worst_oracle, mut worst_prop) = (0.0f64, 0.0f64);
    let mut bound_ok = true;
    for _ in 0..100 {
        let b = rng.random_range(2..=500);
        let shift: f64 = rng.random_range(-0.5..0.5);
        let x: Vec<f64> = (0..b).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 0.6 * v + shift + 0.4 * rng.random_range(-1.0..1.0))
            .collect();
        let c = losses::ccc(&x, &y).map_err(|e| e.to_string())?;
        worst_oracle = worst_oracle.max((c - ccc_pairwise(&x, &y)).abs());

        let swapped = losses::ccc(&y, &x).map_err(|e| e.to_string())?;
        let a: f64 = rng.random_range(0.1..10.0);
        let off: f64 = rng.random_range(-3.0..3.0);
        let ax: Vec<f64> = x.iter().map(|v| a * v + off).collect();
        let ay: Vec<f64> = y.iter().map(|v| a * v + off).collect();
        let mapped = losses::ccc(&ax, &ay).map_err(|e| e.to_string())?;
        worst_prop = worst_prop.max((c - swapped).abs()).max((c - mapped).abs());

        let n = b as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(&y).map(|(u, v)| (u - mx) * (v - my)).sum();
        let sxx: f64 = x.iter().map(|u| (u - mx) * (u - mx)).sum();
        let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
        let pearson = sxy / (sxx * syy).sqrt();
        bound_ok &= c.abs() <= pearson.abs() + 1e-12 && c.abs() <= 1.0;
    }
    check(
        worst_oracle < CCC_ORACLE_TOL && worst_prop < CCC_PROPERTY_TOL && bound_ok,
        format!(
            "100 pairs, max |ccc - oracle| {worst_oracle:.2e} (tol {CCC_ORACLE_TOL:e}), max symmetry/affine drift {worst_prop:.2e} (tol {CCC_PROPERTY_TOL:e})"
        ),
    )
}

fn write_config(path: &Path, json: &str) {
    fs::write(path, json).expect("write config");
}

fn train(task: Task, data: &Path, config: &Path, out: &Path, init: Option<&Path>) -> Result<(), String> {
    let args = TrainArgs {
        task,
        data: data.to_path_buf(),
        config: config.to_path_buf(),
        out: out.to_path_buf(),
        init: init.map(Path::to_path_buf),
    };
    commands::train(&args, &mut std::io::sink()).map_err(|e| e.to_string())
}

fn eval_p_ex(dir: &Path, data: &Path, ckpt: &Path, tag: &str) -> Result<f64, String> {
    let report = dir.join(format!("{tag}.report.json"));
    let args = EvalArgs {
        data: data.to_path_buf(),
        ckpt: ckpt.to_path_buf(),
        out: dir.join(format!("{tag}.preds.csv")),
        report: report.clone(),
        dump_graph: None,
    };
    commands::eval(&args, &mut std::io::sink()).map_err(|e| e.to_string())?;
    let text = fs::read_to_string(&report).map_err(|e| e.to_string())?;
    let r: metrics::MetricReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    r.p_ex.ok_or_else(|| "report has no P_EX".into())
}

fn attention_ablation() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let all = dir.join("all");
    commands::synth(
        &SynthArgs {
            out: all.clone(),
            n: 6000,
            d: 64,
            seed: 7,
            noise: None,
        },
        &mut std::io::sink(),
    )
    .map_err(|e| e.to_string())?;
    let ds = data::load_dir(&all).map_err(|e| e.to_string())?;
    let (train_ds, val_ds) = ds.split_at(5000).map_err(|e| e.to_string())?;
    let (train_dir, val_dir) = (dir.join("train"), dir.join("val"));
    data::save_dir(&train_dir, &train_ds).map_err(|e| e.to_string())?;
    data::save_dir(&val_dir, &val_ds).map_err(|e| e.to_string())?;

    let ex_cfg = dir.join("ex.json");
    write_config(&ex_cfg, r#"{"epochs": 8, "seed": 2, "lr0": 0.5, "batch_size": 32}"#);
    let mut scores = Vec::new();
    for attention in [true, false] {
        let tag = if attention { "attn" } else { "plain" };
        let au_cfg = dir.join(format!("{tag}.au.json"));
        write_config(
            &au_cfg,
            &format!(r#"{{"epochs": 8, "seed": 1, "lr0": 0.5, "batch_size": 32, "model": {{"attention": {attention}}}}}"#),
        );
        let au_ck = dir.join(format!("{tag}.au.ckpt.json"));
        let ex_ck = dir.join(format!("{tag}.ex.ckpt.json"));
        train(Task::Au, &train_dir, &au_cfg, &au_ck, None)?;
        train(Task::Ex, &train_dir, &ex_cfg, &ex_ck, Some(&au_ck))?;
        scores.push(eval_p_ex(dir, &val_dir, &ex_ck, tag)?);
    }
    let secs = start.elapsed().as_secs_f64();
    let (with, without) = (scores[0], scores[1]);
    check(
        with >= without - ATTENTION_MARGIN && with >= EX_FLOOR && without >= EX_FLOOR && secs < PIPELINE_BUDGET_SECS,
        format!("val P_EX with attention {with:.4}, without {without:.4}, pipeline {secs:.1}s"),
    )
}

/// Synthetic VA data whose targets are shifted away from zero mean.
fn shifted_va_data(shift: f64) -> (Dataset, Dataset) {
    let mut spec = SynthSpec::new(6000, 64, 11);
    for centre in spec.va_centroids.iter_mut() {
        for v in centre.iter_mut() {
            *v = (*v + shift).clamp(-1.0, 1.0);
        }
    }
    let ds = data::synth_generate(&spec).expect("synth");
    ds.split_at(5000).expect("split")
}

fn batchnorm_va() -> Outcome {
    let (train_ds, val_ds) = shifted_va_data(0.3);
    let mean: f64 = train_ds.samples().iter().map(|s| s.va.unwrap()[0] + s.va.unwrap()[1]).sum::<f64>()
        / (2 * train_ds.len()) as f64;
    let mut scores = Vec::new();
    for batchnorm in [true, false] {
        let arch = Architecture {
            attention: true,
            batchnorm,
        };
        let mut params = ModelParams::init(ModelDims::new(64), arch, 0).map_err(|e| e.to_string())?;
        let mut cfg = TrainConfig::new(Task::Va);
        cfg.lr0 = 0.2;
        cfg.epochs = 4;
        cfg.batch_size = 32;
        cfg.seed = 3;
        let weights = ClassWeights::uniform(12, 8);
        training::train_stage(&train_ds, &mut params, &cfg, &weights, None, Execution::default())
            .map_err(|e| e.to_string())?;
        let p = training::task_score(&params, &val_ds, Task::Va, Execution::default())
            .map_err(|e| e.to_string())?
            .ok_or("no VA score")?;
        scores.push(p);
    }
    let (bn, plain) = (scores[0], scores[1]);
    check(
        bn > plain && bn >= VA_FLOOR && plain >= VA_FLOOR && mean.abs() > 0.1,
        format!("target mean {mean:.3}, val P_VA with batchnorm {bn:.4}, without {plain:.4}"),
    )
}

fn scalar(v: f64) -> GradientSet {
    let mut g = GradientSet::new();
    g.insert("theta", mtl_affect::math::Tensor2::row_vector(vec![v]).unwrap());
    g
}

fn sam_sanity() -> Outcome {
    // L = theta^2 / 2 at theta = 1, rho = 0.5, lr = 0.1.
    let mut p = scalar(1.0);
    let quadratic = |q: &GradientSet| {
        let t = q.get("theta").unwrap().data()[0];
        Ok((0.5 * t * t, scalar(t)))
    };
    training::sam_step(&mut p, quadratic, 0.1, 0.5, 0.0).map_err(|e| e.to_string())?;
    let theta_hat = 1.0 + 0.5 / (1.0 + SAM_EPS);
    let got = p.get("theta").unwrap().data()[0];
    let closed_form_ok = got == 1.0 - 0.1 * theta_hat;

    let ds = data::synth_generate(&SynthSpec::new(1800, 64, 21)).map_err(|e| e.to_string())?;
    let (train_ds, val_ds) = ds.split_at(800).map_err(|e| e.to_string())?;
    let mut dims = ModelDims::new(64);
    dims.node_dim = 128;
    let mut weights = ClassWeights::uniform(12, 8);
    training::update_class_weights(&mut weights, train_ds.class_stats(), Task::Au).map_err(|e| e.to_string())?;
    let mut scores = Vec::new();
    for rho in [training::DEFAULT_SAM_RHO, 0.0] {
        let mut params = ModelParams::init(dims, Architecture::default(), 0).map_err(|e| e.to_string())?;
        let mut cfg = TrainConfig::new(Task::Au);
        cfg.lr0 = 1.0;
        cfg.epochs = 15;
        cfg.batch_size = 32;
        cfg.seed = 5;
        cfg.sam_rho = Some(rho);
        training::train_stage(&train_ds, &mut params, &cfg, &weights, None, Execution::default())
            .map_err(|e| e.to_string())?;
        let p = training::task_score(&params, &val_ds, Task::Au, Execution::default())
            .map_err(|e| e.to_string())?
            .ok_or("no AU score")?;
        scores.push(p);
    }
    let (sam, sgd) = (scores[0], scores[1]);
    check(
        closed_form_ok && sam >= sgd - SAM_MARGIN,
        format!("closed form theta {got:?} exact: {closed_form_ok}, val P_AU SAM {sam:.4}, SGD {sgd:.4}"),
    )
}

fn loss_identities() -> Outcome {
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_sum = 0.0f64;
    for n in [2, 8, 12, 40] {
        let rates: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..=1.0)).collect();
        let w = losses::au_weights_from_rates(&rates).map_err(|e| e.to_string())?;
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - n as f64).abs());
    }
    let w = losses::au_weights_from_rates(&[0.5, 0.25, 0.25]).map_err(|e| e.to_string())?;
    ok &= worst_sum < 1e-12 && w.iter().zip([0.6, 1.2, 1.2]).all(|(a, b)| (a - b).abs() < 1e-12);

    let pos = losses::weighted_asymmetric_loss(&[0.5], &[1.0], &[1.0]).map_err(|e| e.to_string())?;
    let neg = losses::weighted_asymmetric_loss(&[0.5], &[0.0], &[1.0]).map_err(|e| e.to_string())?;
    let perfect = losses::weighted_asymmetric_loss(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 1.0]).map_err(|e| e.to_string())?;
    let ln2 = std::f64::consts::LN_2;
    ok &= (pos - ln2).abs() < LOSS_EXAMPLE_TOL && (neg - 0.5 * ln2).abs() < LOSS_EXAMPLE_TOL && perfect < 1e-5;

    // Masking: samples without any AU label must not move the batch loss or gradient.
    let ds = data::synth_generate(&SynthSpec::new(48, 32, 4)).map_err(|e| e.to_string())?;
    let dims = ModelDims {
        input_dim: 32,
        node_dim: 6,
        attn_dim: 4,
        num_aus: 12,
        num_classes: 8,
        k: 3,
    };
    let params = ModelParams::init(dims, Architecture::default(), 9).map_err(|e| e.to_string())?;
    let weights = ClassWeights::uniform(12, 8);
    let objective = Objective::from_config(&TrainConfig::new(Task::Au), &weights);
    let labelled: Vec<&Sample> = ds.samples()[..32].iter().collect();
    let blanks: Vec<Sample> = ds.samples()[32..]
        .iter()
        .map(|s| Sample {
            au: vec![None; 12],
            ..s.clone()
        })
        .collect();
    let base = objective
        .backward(&params, &labelled, 0, Execution::Sequential)
        .map_err(|e| e.to_string())?;
    let mut appended = labelled.clone();
    appended.extend(blanks.iter());
    let mut interleaved = Vec::new();
    for (i, s) in labelled.iter().enumerate() {
        interleaved.push(*s);
        if let Some(b) = blanks.get(i) {
            interleaved.push(b);
        }
    }
    let tail = objective.backward(&params, &appended, 0, Execution::Sequential).map_err(|e| e.to_string())?;
    let mixed = objective.backward(&params, &interleaved, 0, Execution::Sequential).map_err(|e| e.to_string())?;
    let tail_exact = tail.loss == base.loss && tail.grads == base.grads;
    let drift = base
        .grads
        .flatten()
        .iter()
        .zip(mixed.grads.flatten())
        .map(|(a, b)| (a - b).abs())
        .fold((mixed.loss - base.loss).abs(), f64::max);
    ok &= tail_exact && drift < 1e-12;

    check(
        ok,
        format!(
            "weight sums off by {worst_sum:.1e}, loss examples {pos:.5} and {neg:.5}, masked samples appended exact: {tail_exact}, interleaved drift {drift:.1e}"
        ),
    )
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let synth = |name: &str| {
        let out = dir.join(name);
        commands::synth(
            &SynthArgs {
                out: out.clone(),
                n: 300,
                d: 32,
                seed: 42,
                noise: None,
            },
            &mut std::io::sink(),
        )
        .map(|_| out)
        .map_err(|e| e.to_string())
    };
    let (a, b) = (synth("a")?, synth("b")?);
    let read = |p: &Path| fs::read(p).map_err(|e| e.to_string());
    let synth_same = read(&a.join(data::FEATURES_FILE))? == read(&b.join(data::FEATURES_FILE))?
        && read(&a.join(data::LABELS_FILE))? == read(&b.join(data::LABELS_FILE))?;

    let cfg = dir.join("au.json");
    write_config(&cfg, r#"{"epochs": 2, "seed": 8, "lr0": 0.3, "batch_size": 32, "model": {"node_dim": 8}}"#);
    let (c1, c2) = (dir.join("run1.json"), dir.join("run2.json"));
    train(Task::Au, &a, &cfg, &c1, None)?;
    train(Task::Au, &a, &cfg, &c2, None)?;
    let ckpt_same = read(&c1)? == read(&c2)?;
    let hist_same = read(&commands::history_path(&c1))? == read(&commands::history_path(&c2))?;
    let loads = Checkpoint::load(&c1).and_then(|c| c.to_model()).is_ok();
    check(
        synth_same && ckpt_same && hist_same && loads,
        format!("synth identical: {synth_same}, checkpoints identical: {ckpt_same}, histories identical: {hist_same}"),
    )
}

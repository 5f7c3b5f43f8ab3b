use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mtl_affect::anfl;
use mtl_affect::checkpoint::Checkpoint;
use mtl_affect::data::{self, SynthSpec, Task, FEATURES_FILE, LABELS_FILE};
use mtl_affect::gradcheck::{self, GradcheckConfig};
use mtl_affect::losses::ClassWeights;
use mtl_affect::metrics::{self, MetricReport};
use mtl_affect::model::{Architecture, ModelDims, ModelParams};
use mtl_affect::par::Execution;
use mtl_affect::training::{self, EpochRecord};
use mtl_affect::Error;

use crate::config::RunConfig;
use crate::{CliError, CliResult};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn stdout_err(e: std::io::Error) -> CliError {
    io_err(Path::new("<stdout>"), e)
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(io_err(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
    }
}

fn require_data_dir(dir: &Path) -> CliResult<()> {
    require_file(&dir.join(FEATURES_FILE))?;
    require_file(&dir.join(LABELS_FILE))
}

/// The parent directory of an output file must already exist.
fn require_writable_parent(path: &Path) -> CliResult<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if parent.is_dir() {
        Ok(())
    } else {
        Err(io_err(parent, std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist")))
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub struct GradcheckArgs {
    pub eps: f64,
    pub tol: f64,
    pub seed: u64,
}

pub fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = GradcheckConfig {
        step: args.eps,
        tol: args.tol,
        seed: args.seed,
        ..GradcheckConfig::default()
    };
    let report = gradcheck::run_gradcheck(&cfg, Execution::default())?;
    let mut text = String::new();
    for c in &report.checks {
        let status = if c.passed { "ok" } else { "FAIL" };
        writeln!(text, "{:<16} points={:<3} worst_rel_error={:.3e} {status}", c.module, c.points, c.worst_rel_error)
            .expect("writing to a String");
    }
    writeln!(text, "{} module checks, tolerance {:e}", report.checks.len(), report.tol).expect("writing to a String");
    out.write_all(text.as_bytes()).map_err(stdout_err)?;
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.module).collect();
        Err(CliError::GradcheckFailed(format!(
            "{} above tolerance {:e}",
            failed.join(", "),
            report.tol
        )))
    }
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub noise: Option<f64>,
}

pub fn synth(args: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut spec = SynthSpec::new(args.n, args.d, args.seed);
    if let Some(noise) = args.noise {
        spec.noise_scale = noise;
    }
    let ds = data::synth_generate(&spec)?;
    let (f, l) = data::save_dir(&args.out, &ds)?;
    writeln!(out, "wrote {} samples to {} and {}", ds.len(), f.display(), l.display()).map_err(stdout_err)
}

pub struct TrainArgs {
    pub task: Task,
    pub data: PathBuf,
    pub config: PathBuf,
    pub out: PathBuf,
    pub init: Option<PathBuf>,
}

/// `<out>` with its extension replaced by `history.csv`.
pub fn history_path(out: &Path) -> PathBuf {
    out.with_extension("history.csv")
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,lr,p_task\n");
    for r in history {
        let p = r.p_task.map_or(String::new(), |p| format!("{p:?}"));
        writeln!(s, "{},{:?},{:?},{p}", r.epoch, r.loss, r.lr).expect("writing to a String");
    }
    s
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    require_data_dir(&args.data)?;
    require_file(&args.config)?;
    if let Some(init) = &args.init {
        require_file(init)?;
    }
    require_writable_parent(&args.out)?;
    let mut run = RunConfig::load(&args.config)?;
    if let Some(v) = &run.val_data {
        require_data_dir(v)?;
    }
    // A config without an explicit stage takes the one from --task.
    if run.explicit_stage && run.train.stage != args.task {
        return Err(Error::Config(format!(
            "config stage {} conflicts with --task {}",
            run.train.stage, args.task
        ))
        .into());
    }
    run.train.stage = args.task;
    run.train.validate()?;
    if args.task == Task::Ex && args.init.is_none() {
        return Err(Error::StageOrder("the ex stage needs --init with a checkpoint whose au stage is complete".into()).into());
    }

    let ds = data::load_dir(&args.data)?;
    let (mut params, mut ckpt) = match &args.init {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if args.task == Task::Ex && !ckpt.has_stage(Task::Au) {
                return Err(Error::StageOrder(format!(
                    "{} has no completed au stage; train au before ex",
                    path.display()
                ))
                .into());
            }
            if run.model.is_some() {
                log::warn!("model section ignored: architecture comes from {}", path.display());
            }
            (ckpt.to_model()?, ckpt)
        }
        None => {
            let mc = run.model.clone().unwrap_or_default();
            let dims = ModelDims {
                input_dim: ds.dim(),
                node_dim: mc.node_dim,
                attn_dim: mc.attn_dim,
                num_aus: anfl::NUM_AUS,
                num_classes: mtl_affect::heads::NUM_EXPRESSIONS,
                k: mc.k,
            };
            let arch = Architecture {
                attention: mc.attention,
                batchnorm: mc.batchnorm,
            };
            let params = ModelParams::init(dims, arch, mc.init_seed)?;
            let ckpt = Checkpoint::new(&params, mc.init_seed, ClassWeights::uniform(dims.num_aus, dims.num_classes));
            (params, ckpt)
        }
    };

    if ds.dim() != params.anfl.input_dim() {
        return Err(Error::Checkpoint(format!(
            "model expects {}-dim features, {} has {}",
            params.anfl.input_dim(),
            args.data.display(),
            ds.dim()
        ))
        .into());
    }
    let val = run.val_data.as_deref().map(data::load_dir).transpose()?;
    let mut weights = ckpt.class_weights.clone();
    training::update_class_weights(&mut weights, ds.class_stats(), args.task)?;
    let history = training::train_stage(&ds, &mut params, &run.train, &weights, val.as_ref(), Execution::default())?;

    ckpt.class_weights = weights;
    ckpt.store(&params);
    ckpt.record_stage(&run.train);
    ckpt.save(&args.out)?;
    let hist_path = history_path(&args.out);
    write_text(&hist_path, &history_csv(&history))?;
    let last = history.last().map_or("-".to_string(), |r| format!("{:.6}", r.loss));
    writeln!(
        out,
        "{} stage: {} epochs, final loss {last}; wrote {} and {}",
        args.task,
        history.len(),
        args.out.display(),
        hist_path.display()
    )
    .map_err(stdout_err)
}

pub struct EvalArgs {
    pub data: PathBuf,
    pub ckpt: PathBuf,
    pub out: PathBuf,
    pub report: PathBuf,
    pub dump_graph: Option<PathBuf>,
}

pub fn report_json(report: &MetricReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    require_data_dir(&args.data)?;
    require_file(&args.ckpt)?;
    for p in [&args.out, &args.report] {
        require_writable_parent(p)?;
    }
    if let Some(p) = &args.dump_graph {
        require_writable_parent(p)?;
    }
    let params = Checkpoint::load(&args.ckpt)?.to_model()?;
    let ds = data::load_dir(&args.data)?;
    let (preds, report) = training::evaluate(&params, &ds, metrics::DEFAULT_THRESHOLD, Execution::default())?;
    data::write_predictions(&args.out, &preds)?;
    write_text(&args.report, &report_json(&report))?;
    if let Some(dot_path) = &args.dump_graph {
        let first = ds
            .samples()
            .first()
            .ok_or_else(|| Error::InsufficientData("no samples to build a facial graph from".into()))?;
        let fwd = anfl::anfl_forward(&first.feature, &params.anfl, None)?;
        write_text(dot_path, &fwd.graph.to_dot())?;
    }
    write_scores(out, &report)
}

pub struct ScoreArgs {
    pub preds: PathBuf,
    pub labels: PathBuf,
    pub threshold: f64,
}

fn fmt_score(v: Option<f64>) -> String {
    v.map_or("null".to_string(), |v| format!("{v:.6}"))
}

fn write_scores(out: &mut dyn Write, r: &MetricReport) -> CliResult<()> {
    writeln!(
        out,
        "P_AU {}\nP_EX {}\nP_VA {}\nP_MTL {}",
        fmt_score(r.p_au),
        fmt_score(r.p_ex),
        fmt_score(r.p_va),
        fmt_score(r.p_mtl)
    )
    .map_err(stdout_err)
}

pub fn score(args: &ScoreArgs, out: &mut dyn Write) -> CliResult<MetricReport> {
    require_file(&args.preds)?;
    require_file(&args.labels)?;
    let preds = data::read_predictions(&args.preds)?;
    let labels = data::load_labels(&args.labels)?;
    let report = metrics::score_predictions(&preds, &labels, args.threshold)?;
    write_scores(out, &report)?;
    Ok(report)
}

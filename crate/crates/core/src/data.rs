//! Samples, CSV ingestion with missing-label sentinels, per-task views,
//! seeded batching and the synthetic generator.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::anfl::{AU_IDS, NUM_AUS};
use crate::error::{Error, Result};
use crate::heads::NUM_EXPRESSIONS;
use crate::math::Tensor2;

pub const AU_MISSING: i64 = -1;
pub const EXPR_MISSING: i64 = -1;
pub const VA_MISSING: f64 = -5.0;
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
/// Width of the synthetic signal: expression one-hot, AU bits, valence, arousal.
pub const SIGNAL_DIM: usize = NUM_EXPRESSIONS + NUM_AUS + 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Au,
    Ex,
    Va,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Au => "au",
            Task::Ex => "ex",
            Task::Va => "va",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "au" => Ok(Task::Au),
            "ex" => Ok(Task::Ex),
            "va" => Ok(Task::Va),
            other => Err(Error::Config(format!("unknown task {other:?}, expected au|ex|va"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub feature: Vec<f64>,
    pub au: Vec<Option<bool>>,
    pub expr: Option<usize>,
    pub va: Option<[f64; 2]>,
}

impl Sample {
    pub fn has_label(&self, task: Task) -> bool {
        match task {
            Task::Au => self.au.iter().any(Option::is_some),
            Task::Ex => self.expr.is_some(),
            Task::Va => self.va.is_some(),
        }
    }
}

/// Label frequencies over valid annotations only.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats {
    /// Fraction of labelled rows where each AU is active; 0 when an AU has no labels.
    pub au_rates: Vec<f64>,
    pub expr_freq: Vec<f64>,
}

impl ClassStats {
    fn compute(samples: &[Sample]) -> Self {
        let mut active = [0usize; NUM_AUS];
        let mut valid = [0usize; NUM_AUS];
        let mut expr = [0usize; NUM_EXPRESSIONS];
        for s in samples {
            for (j, a) in s.au.iter().enumerate() {
                if let Some(on) = a {
                    valid[j] += 1;
                    active[j] += usize::from(*on);
                }
            }
            if let Some(e) = s.expr {
                expr[e] += 1;
            }
        }
        let au_rates = (0..NUM_AUS)
            .map(|j| if valid[j] == 0 { 0.0 } else { active[j] as f64 / valid[j] as f64 })
            .collect();
        let total: usize = expr.iter().sum();
        let expr_freq = expr
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect();
        Self { au_rates, expr_freq }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
    class_stats: ClassStats,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let dim = samples.first().map_or(0, |s| s.feature.len());
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Join(format!("duplicate sample id {:?}", s.id)));
            }
            if s.feature.len() != dim {
                return Err(Error::shape("sample feature width", (s.feature.len(), 1), (dim, 1)));
            }
            if s.feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("sample feature"));
            }
            if s.au.len() != NUM_AUS {
                return Err(Error::Label(format!("sample {:?} has {} AU labels, expected {NUM_AUS}", s.id, s.au.len())));
            }
            if s.expr.is_some_and(|e| e >= NUM_EXPRESSIONS) {
                return Err(Error::Label(format!("sample {:?} has expression {:?}", s.id, s.expr)));
            }
            if let Some(va) = s.va {
                if va.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                    return Err(Error::Label(format!("sample {:?} has VA {va:?} outside [-1, 1]", s.id)));
                }
            }
        }
        let class_stats = ClassStats::compute(&samples);
        Ok(Self {
            samples,
            dim,
            class_stats,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_stats(&self) -> &ClassStats {
        &self.class_stats
    }

    /// First `n` samples and the rest, each with its own statistics.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        let n = n.min(self.samples.len());
        Ok((
            Dataset::new(self.samples[..n].to_vec())?,
            Dataset::new(self.samples[n..].to_vec())?,
        ))
    }

    /// Copy with the labels of `task` removed from every sample.
    pub fn without_labels(&self, task: Task) -> Dataset {
        let samples = self
            .samples
            .iter()
            .cloned()
            .map(|mut s| {
                match task {
                    Task::Au => s.au = vec![None; NUM_AUS],
                    Task::Ex => s.expr = None,
                    Task::Va => s.va = None,
                }
                s
            })
            .collect::<Vec<_>>();
        Dataset::new(samples).expect("removing labels keeps a dataset valid")
    }
}

/// Samples carrying a valid label for `task`, in dataset order.
pub fn task_view(ds: &Dataset, task: Task) -> Vec<&Sample> {
    ds.samples.iter().filter(|s| s.has_label(task)).collect()
}

/// `[B × D]` matrix of the given samples' features.
pub fn feature_matrix(samples: &[&Sample]) -> Tensor2 {
    let dim = samples.first().map_or(0, |s| s.feature.len());
    let data = samples.iter().flat_map(|s| s.feature.iter().copied()).collect();
    Tensor2::new(samples.len(), dim, data).expect("sample features are finite and equal width")
}

/// Shuffled index batches of exactly `batch_size`; a trailing short batch is dropped.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks_exact(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn labels_header() -> Vec<String> {
    let mut h = vec!["id".to_string()];
    h.extend(AU_IDS.iter().map(|a| format!("au{a}")));
    h.extend(["expr", "valence", "arousal"].map(String::from));
    h
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file))
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads records, checking every row against the header width. Yields `(line, record)`.
fn read_rows(path: &Path) -> Result<(csv::StringRecord, Vec<(u64, csv::StringRecord)>)> {
    let mut rdr = csv_reader(path)?;
    let mut rows = Vec::new();
    let mut header = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        match &header {
            None => header = Some(rec),
            Some(h) => {
                if rec.len() != h.len() {
                    return Err(parse_err(
                        path,
                        line,
                        format!("expected {} columns, found {}", h.len(), rec.len()),
                    ));
                }
                rows.push((line, rec));
            }
        }
    }
    let header = header.ok_or_else(|| parse_err(path, 1, "missing header"))?;
    Ok((header, rows))
}

fn parse_f64(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("{what}: cannot parse {field:?} as a number")))
}

fn parse_int(path: &Path, line: u64, field: &str, what: &str) -> Result<i64> {
    let v = parse_f64(path, line, field, what)?;
    if v.fract() != 0.0 {
        return Err(parse_err(path, line, format!("{what}: {field:?} is not an integer")));
    }
    Ok(v as i64)
}

/// `id,f0,…,f{D-1}` rows in file order.
pub fn read_features(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let (header, rows) = read_rows(path)?;
    let dim = header.len().saturating_sub(1);
    let ok = header.get(0) == Some("id") && (0..dim).all(|i| header.get(i + 1) == Some(format!("f{i}").as_str()));
    if !ok || dim == 0 {
        return Err(parse_err(path, 1, "header must be id,f0,f1,...,f{D-1}"));
    }
    rows.into_iter()
        .map(|(line, rec)| {
            let feat = rec
                .iter()
                .skip(1)
                .map(|f| {
                    let v = parse_f64(path, line, f, "feature")?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(parse_err(path, line, format!("non-finite feature {f:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((rec[0].to_string(), feat))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelRow {
    pub au: Vec<Option<bool>>,
    pub expr: Option<usize>,
    pub va: Option<[f64; 2]>,
}

fn check_header(path: &Path, header: &csv::StringRecord, expected: &[String]) -> Result<()> {
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(path, 1, format!("header must be {}", expected.join(","))));
    }
    Ok(())
}

fn parse_va(path: &Path, line: u64, v: &str, a: &str) -> Result<Option<[f64; 2]>> {
    let v = parse_f64(path, line, v, "valence")?;
    let a = parse_f64(path, line, a, "arousal")?;
    if v == VA_MISSING || a == VA_MISSING {
        return Ok(None);
    }
    for x in [v, a] {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::Range {
                path: path.to_path_buf(),
                line,
                value: x,
            });
        }
    }
    Ok(Some([v, a]))
}

/// Label rows keyed by id, plus the ids in file order.
pub fn read_labels(path: &Path) -> Result<(Vec<String>, HashMap<String, LabelRow>)> {
    let (header, rows) = read_rows(path)?;
    check_header(path, &header, &labels_header())?;
    let mut order = Vec::with_capacity(rows.len());
    let mut map = HashMap::with_capacity(rows.len());
    for (line, rec) in rows {
        let au = (0..NUM_AUS)
            .map(|j| match parse_int(path, line, &rec[j + 1], "AU")? {
                AU_MISSING => Ok(None),
                0 => Ok(Some(false)),
                1 => Ok(Some(true)),
                v => Err(parse_err(path, line, format!("AU value {v} not in {{0, 1, -1}}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let expr = match parse_int(path, line, &rec[NUM_AUS + 1], "expr")? {
            EXPR_MISSING => None,
            e if (0..NUM_EXPRESSIONS as i64).contains(&e) => Some(e as usize),
            e => return Err(parse_err(path, line, format!("expression {e} not in [0, 8) or -1"))),
        };
        let va = parse_va(path, line, &rec[NUM_AUS + 2], &rec[NUM_AUS + 3])?;
        let id = rec[0].to_string();
        if map.insert(id.clone(), LabelRow { au, expr, va }).is_some() {
            return Err(parse_err(path, line, format!("duplicate id {id:?}")));
        }
        order.push(id);
    }
    Ok((order, map))
}

/// Joins features and labels by id, keeping the features-file order.
pub fn load_dataset(features_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let feats = read_features(features_path)?;
    let (label_order, mut labels) = read_labels(labels_path)?;
    let feature_ids: HashSet<&str> = feats.iter().map(|(id, _)| id.as_str()).collect();
    if let Some(unknown) = label_order.iter().find(|id| !feature_ids.contains(id.as_str())) {
        return Err(Error::Join(format!(
            "label id {unknown:?} in {} has no feature row",
            labels_path.display()
        )));
    }
    let mut samples = Vec::with_capacity(feats.len());
    for (id, feature) in feats {
        let l = labels.remove(&id).ok_or_else(|| {
            Error::Join(format!("feature id {id:?} has no row in {}", labels_path.display()))
        })?;
        samples.push(Sample {
            id,
            feature,
            au: l.au,
            expr: l.expr,
            va: l.va,
        });
    }
    Dataset::new(samples)
}

/// Labels alone, as a dataset with empty feature vectors, in file order.
pub fn load_labels(labels_path: &Path) -> Result<Dataset> {
    let (order, mut labels) = read_labels(labels_path)?;
    let samples = order
        .into_iter()
        .map(|id| {
            let l = labels.remove(&id).expect("ids come from the same file");
            Sample {
                id,
                feature: Vec::new(),
                au: l.au,
                expr: l.expr,
                va: l.va,
            }
        })
        .collect();
    Dataset::new(samples)
}

/// `features.csv` and `labels.csv` under `dir`.
pub fn load_dir(dir: &Path) -> Result<Dataset> {
    load_dataset(&dir.join(FEATURES_FILE), &dir.join(LABELS_FILE))
}

fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    Ok(std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn finish(path: &Path, mut w: std::io::BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_features(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let mut header = String::from("id");
    for i in 0..ds.dim {
        header.push_str(&format!(",f{i}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for s in &ds.samples {
        let mut line = s.id.clone();
        for v in &s.feature {
            line.push_str(&format!(",{v:?}"));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    finish(path, w)
}

pub fn write_labels(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", labels_header().join(",")).map_err(io)?;
    for s in &ds.samples {
        let mut line = s.id.clone();
        for a in &s.au {
            let v = match a {
                None => AU_MISSING,
                Some(b) => i64::from(*b),
            };
            line.push_str(&format!(",{v}"));
        }
        line.push_str(&format!(",{}", s.expr.map_or(EXPR_MISSING, |e| e as i64)));
        let [v, a] = s.va.unwrap_or([VA_MISSING, VA_MISSING]);
        line.push_str(&format!(",{v:?},{a:?}"));
        writeln!(w, "{line}").map_err(io)?;
    }
    finish(path, w)
}

/// Writes `features.csv` and `labels.csv` into `dir`, creating it if needed.
pub fn save_dir(dir: &Path, ds: &Dataset) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (f, l) = (dir.join(FEATURES_FILE), dir.join(LABELS_FILE));
    write_features(&f, ds)?;
    write_labels(&l, ds)?;
    Ok((f, l))
}

/// One row of a predictions file.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub au: Vec<f64>,
    pub expr: usize,
    pub va: [f64; 2],
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", labels_header().join(",")).map_err(io)?;
    for p in preds {
        let mut line = p.id.clone();
        for a in &p.au {
            line.push_str(&format!(",{a:?}"));
        }
        line.push_str(&format!(",{},{:?},{:?}", p.expr, p.va[0], p.va[1]));
        writeln!(w, "{line}").map_err(io)?;
    }
    finish(path, w)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let (header, rows) = read_rows(path)?;
    check_header(path, &header, &labels_header())?;
    rows.into_iter()
        .map(|(line, rec)| {
            let au = (0..NUM_AUS)
                .map(|j| {
                    let v = parse_f64(path, line, &rec[j + 1], "AU probability")?;
                    if (0.0..=1.0).contains(&v) {
                        Ok(v)
                    } else {
                        Err(parse_err(path, line, format!("AU probability {v} outside [0, 1]")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let e = parse_int(path, line, &rec[NUM_AUS + 1], "expr")?;
            if !(0..NUM_EXPRESSIONS as i64).contains(&e) {
                return Err(parse_err(path, line, format!("predicted expression {e} not in [0, 8)")));
            }
            let v = parse_f64(path, line, &rec[NUM_AUS + 2], "valence")?;
            let a = parse_f64(path, line, &rec[NUM_AUS + 3], "arousal")?;
            Ok(Prediction {
                id: rec[0].to_string(),
                au,
                expr: e as usize,
                va: [v, a],
            })
        })
        .collect()
}

/// Emotion-conditioned generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub dim: usize,
    pub seed: u64,
    /// Row `e` holds the activation probability of each AU under emotion `e`.
    pub emotion_au_prototypes: Vec<[f64; NUM_AUS]>,
    pub noise_scale: f64,
    /// Per-emotion `(valence, arousal)` centres.
    pub va_centroids: [[f64; 2]; NUM_EXPRESSIONS],
    /// Standard deviation of the VA label around its centre (clipped to [-1, 1]).
    pub va_spread: f64,
}

impl SynthSpec {
    pub fn new(n_samples: usize, dim: usize, seed: u64) -> Self {
        Self {
            n_samples,
            dim,
            seed,
            emotion_au_prototypes: strong_prototypes(),
            noise_scale: 0.5,
            va_centroids: DEFAULT_VA_CENTROIDS,
            va_spread: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < SIGNAL_DIM {
            return Err(Error::Config(format!(
                "feature dim {} too small to embed the {SIGNAL_DIM}-dim synthetic signal",
                self.dim
            )));
        }
        if self.emotion_au_prototypes.len() != NUM_EXPRESSIONS {
            return Err(Error::Config(format!(
                "need {NUM_EXPRESSIONS} prototype rows, got {}",
                self.emotion_au_prototypes.len()
            )));
        }
        if self.emotion_au_prototypes.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("prototype probabilities must lie in [0, 1]".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(format!("noise_scale must be >= 0, got {}", self.noise_scale)));
        }
        if !(self.va_spread >= 0.0 && self.va_spread.is_finite()) {
            return Err(Error::Config(format!("va_spread must be >= 0, got {}", self.va_spread)));
        }
        if self.va_centroids.iter().flatten().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Config("VA centroids must lie in [-1, 1]".into()));
        }
        Ok(())
    }
}

/// neutral, anger, disgust, fear, happiness, sadness, surprise, other
pub const DEFAULT_VA_CENTROIDS: [[f64; 2]; NUM_EXPRESSIONS] = [
    [0.0, -0.1],
    [-0.6, 0.6],
    [-0.6, 0.2],
    [-0.5, 0.7],
    [0.8, 0.4],
    [-0.7, -0.4],
    [0.3, 0.8],
    [0.1, 0.1],
];

/// Near-deterministic prototypes: prototypical AUs fire with 0.95, others with 0.03.
pub fn strong_prototypes() -> Vec<[f64; NUM_AUS]> {
    // Column order: AU 1 2 4 6 7 10 12 15 23 24 25 26
    let active: [&[u32]; NUM_EXPRESSIONS] = [
        &[],
        &[4, 7, 23, 24],
        &[4, 10, 15, 25],
        &[1, 2, 4, 7, 25],
        &[6, 12, 25],
        &[1, 4, 15],
        &[1, 2, 25, 26],
        &[10, 26],
    ];
    active
        .iter()
        .map(|aus| {
            let mut row = [0.03; NUM_AUS];
            for (j, id) in AU_IDS.iter().enumerate() {
                if aus.contains(id) {
                    row[j] = 0.95;
                }
            }
            row
        })
        .collect()
}

/// Deterministic in `spec.seed`. Every sample carries all three labels.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mixing: Vec<f64> = (0..spec.dim * SIGNAL_DIM).map(|_| normal()).collect();
    let mixing = Tensor2::new(spec.dim, SIGNAL_DIM, mixing)?;

    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let emotion = rng.random_range(0..NUM_EXPRESSIONS);
        let au: Vec<bool> = spec.emotion_au_prototypes[emotion]
            .iter()
            .map(|&p| rng.random::<f64>() < p)
            .collect();
        let centre = spec.va_centroids[emotion];
        let mut va = [0.0; 2];
        for (v, c) in va.iter_mut().zip(centre) {
            let jitter: f64 = StandardNormal.sample(&mut rng);
            *v = (c + spec.va_spread * jitter).clamp(-1.0, 1.0);
        }

        let mut signal = vec![0.0; SIGNAL_DIM];
        signal[emotion] = 1.0;
        for (j, &on) in au.iter().enumerate() {
            signal[NUM_EXPRESSIONS + j] = f64::from(u8::from(on));
        }
        signal[NUM_EXPRESSIONS + NUM_AUS] = va[0];
        signal[NUM_EXPRESSIONS + NUM_AUS + 1] = va[1];
        let mut feature = mixing.matvec(&signal)?;
        if spec.noise_scale > 0.0 {
            for f in &mut feature {
                let n: f64 = StandardNormal.sample(&mut rng);
                *f += spec.noise_scale * n;
            }
        }
        samples.push(Sample {
            id: format!("s{i:06}"),
            feature,
            au: au.into_iter().map(Some).collect(),
            expr: Some(emotion),
            va: Some(va),
        });
    }
    Dataset::new(samples)
}

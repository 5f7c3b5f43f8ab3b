//! Challenge scores: macro F1 over AUs and expressions, CCC for valence and
//! arousal, and their sum.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Prediction};
use crate::error::{Error, Result};
use crate::losses::ccc;
use crate::par::{self, Execution};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Field names are part of the JSON report format. Percentages are stored as
/// fractions; a task without valid labels is `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub f1_per_au: Vec<Option<f64>>,
    pub f1_per_expr: Vec<Option<f64>>,
    pub ccc_valence: Option<f64>,
    pub ccc_arousal: Option<f64>,
    pub p_au: Option<f64>,
    pub p_ex: Option<f64>,
    pub p_va: Option<f64>,
    pub p_mtl: Option<f64>,
}

impl MetricReport {
    pub fn new(au: Option<AuScore>, ex: Option<ExScore>, va: Option<VaScore>, num_aus: usize, num_classes: usize) -> Self {
        let (f1_per_au, p_au) = match au {
            Some(s) => (s.f1_per_au, s.p_au),
            None => (vec![None; num_aus], None),
        };
        let (f1_per_expr, p_ex) = match ex {
            Some(s) => (s.f1_per_expr, s.p_ex),
            None => (vec![None; num_classes], None),
        };
        let (ccc_valence, ccc_arousal, p_va) = match va {
            Some(s) => (Some(s.ccc_valence), Some(s.ccc_arousal), Some(s.p_va)),
            None => (None, None, None),
        };
        let p_mtl = match (p_au, p_ex, p_va) {
            (Some(a), Some(e), Some(v)) => Some(score_mtl(a, e, v)),
            _ => None,
        };
        Self {
            f1_per_au,
            f1_per_expr,
            ccc_valence,
            ccc_arousal,
            p_au,
            p_ex,
            p_va,
            p_mtl,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// `2TP / (2TP + FP + FN)`, or 1 when there is nothing to detect and nothing was detected.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            log::debug!("F1 over an empty class: reporting 1 by convention");
            1.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }
}

pub fn f1_binary(pred: &[bool], truth: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape("F1 prediction vs truth", (pred.len(), 1), (truth.len(), 1)));
    }
    let mut c = Confusion::default();
    pred.iter().zip(truth).for_each(|(&p, &t)| c.add(p, t));
    Ok(c.f1())
}

/// Mean over the present values; `None` when none are present.
pub fn macro_mean(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuScore {
    pub f1_per_au: Vec<Option<f64>>,
    pub p_au: Option<f64>,
}

/// Per-AU F1 after binarizing at `threshold` (`p >= threshold` is active),
/// skipping missing labels; AUs with no valid label are reported as `None`
/// and left out of the macro average.
pub fn score_au(pred_probs: &[Vec<f64>], labels: &[Vec<Option<bool>>], threshold: f64) -> Result<AuScore> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("AU threshold must lie in (0, 1), got {threshold}")));
    }
    if pred_probs.len() != labels.len() {
        return Err(Error::shape("AU predictions vs labels", (pred_probs.len(), 0), (labels.len(), 0)));
    }
    let n = labels.first().map(Vec::len).or(pred_probs.first().map(Vec::len)).unwrap_or(0);
    for (p, l) in pred_probs.iter().zip(labels) {
        if p.len() != n || l.len() != n {
            return Err(Error::shape("AU row width", (p.len(), 1), (l.len(), n)));
        }
    }
    let f1_per_au = par::map_indexed(Execution::default(), n, |j| {
        let mut c = Confusion::default();
        let mut any = false;
        for (p, l) in pred_probs.iter().zip(labels) {
            if let Some(t) = l[j] {
                any = true;
                c.add(p[j] >= threshold, t);
            }
        }
        any.then(|| c.f1())
    });
    for (j, f) in f1_per_au.iter().enumerate() {
        if f.is_none() {
            log::warn!("AU column {j} has no valid labels; excluded from the macro average");
        }
    }
    let p_au = macro_mean(&f1_per_au);
    Ok(AuScore { f1_per_au, p_au })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExScore {
    pub f1_per_expr: Vec<Option<f64>>,
    pub p_ex: Option<f64>,
}

/// One-vs-rest F1 per class over samples with a valid label.
pub fn score_ex(pred_classes: &[usize], labels: &[Option<usize>], num_classes: usize) -> Result<ExScore> {
    if pred_classes.len() != labels.len() {
        return Err(Error::shape("EX predictions vs labels", (pred_classes.len(), 1), (labels.len(), 1)));
    }
    for (&p, l) in pred_classes.iter().zip(labels) {
        if p >= num_classes || l.is_some_and(|l| l >= num_classes) {
            return Err(Error::Label(format!(
                "expression class out of range [0, {num_classes}): predicted {p}, label {l:?}"
            )));
        }
    }
    if labels.iter().all(Option::is_none) {
        log::warn!("no valid expression labels; EX score unavailable");
        return Ok(ExScore {
            f1_per_expr: vec![None; num_classes],
            p_ex: None,
        });
    }
    let f1_per_expr: Vec<Option<f64>> = par::map_indexed(Execution::default(), num_classes, |k| {
        let mut c = Confusion::default();
        for (&p, l) in pred_classes.iter().zip(labels) {
            if let Some(t) = l {
                c.add(p == k, *t == k);
            }
        }
        Some(c.f1())
    });
    let p_ex = macro_mean(&f1_per_expr);
    Ok(ExScore { f1_per_expr, p_ex })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaScore {
    pub ccc_valence: f64,
    pub ccc_arousal: f64,
    pub p_va: f64,
}

pub fn score_va(preds: &[[f64; 2]], labels: &[Option<[f64; 2]>]) -> Result<VaScore> {
    if preds.len() != labels.len() {
        return Err(Error::shape("VA predictions vs labels", (preds.len(), 2), (labels.len(), 2)));
    }
    let (mut pv, mut pa, mut tv, mut ta) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (p, l) in preds.iter().zip(labels) {
        if let Some(l) = l {
            pv.push(p[0]);
            pa.push(p[1]);
            tv.push(l[0]);
            ta.push(l[1]);
        }
    }
    if tv.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "VA scoring needs at least 2 labelled rows, got {}",
            tv.len()
        )));
    }
    let ccc_valence = ccc(&pv, &tv)?;
    let ccc_arousal = ccc(&pa, &ta)?;
    Ok(VaScore {
        ccc_valence,
        ccc_arousal,
        p_va: (ccc_valence + ccc_arousal) / 2.0,
    })
}

pub fn score_mtl(p_au: f64, p_ex: f64, p_va: f64) -> f64 {
    p_au + p_ex + p_va
}

/// Joins predictions to labelled samples by id and scores every task. A task
/// without usable labels is reported as `null`.
pub fn score_predictions(preds: &[Prediction], labels: &Dataset, threshold: f64) -> Result<MetricReport> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::Join(format!("duplicate prediction id {:?}", p.id)));
        }
    }
    let mut joined = Vec::with_capacity(labels.len());
    for s in labels.samples() {
        match by_id.get(s.id.as_str()) {
            Some(p) => joined.push((*p, s)),
            None => return Err(Error::Join(format!("no prediction for id {:?}", s.id))),
        }
    }
    if preds.len() != labels.len() {
        return Err(Error::Join(format!(
            "{} predictions but {} labelled ids",
            preds.len(),
            labels.len()
        )));
    }
    let num_aus = joined.first().map_or(0, |(_, s)| s.au.len());
    let num_classes = crate::heads::NUM_EXPRESSIONS;

    let au_probs: Vec<Vec<f64>> = joined.iter().map(|(p, _)| p.au.clone()).collect();
    let au_labels: Vec<Vec<Option<bool>>> = joined.iter().map(|(_, s)| s.au.clone()).collect();
    let au = score_au(&au_probs, &au_labels, threshold)?;
    let au = au.p_au.is_some().then_some(au);

    let classes: Vec<usize> = joined.iter().map(|(p, _)| p.expr).collect();
    let expr: Vec<Option<usize>> = joined.iter().map(|(_, s)| s.expr).collect();
    let ex = score_ex(&classes, &expr, num_classes)?;
    let ex = ex.p_ex.is_some().then_some(ex);

    let va_preds: Vec<[f64; 2]> = joined.iter().map(|(p, _)| p.va).collect();
    let va_labels: Vec<Option<[f64; 2]>> = joined.iter().map(|(_, s)| s.va).collect();
    let va = match score_va(&va_preds, &va_labels) {
        Ok(v) => Some(v),
        Err(Error::InsufficientData(msg)) => {
            log::warn!("{msg}; VA score unavailable");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(MetricReport::new(au, ex, va, num_aus, num_classes))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn f1_examples() {
        assert_eq!(f1_binary(&[true, false, true], &[true, false, true]).unwrap(), 1.0);
        // TP=1, FP=1, FN=1
        assert_eq!(f1_binary(&[true, true, false, false], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(f1_binary(&[false; 4], &[false; 4]).unwrap(), 1.0);
        assert!(f1_binary(&[true], &[true, false]).is_err());
    }

    #[test]
    fn au_examples() {
        let labels = vec![
            vec![Some(true), Some(false), None],
            vec![Some(false), Some(true), Some(true)],
            vec![Some(true), Some(true), Some(false)],
        ];
        let probs: Vec<Vec<f64>> = labels
            .iter()
            .map(|r| r.iter().map(|l| if *l == Some(true) { 0.9 } else { 0.1 }).collect())
            .collect();
        assert_eq!(score_au(&probs, &labels, 0.5).unwrap().p_au, Some(1.0));

        let flipped: Vec<Vec<f64>> = probs.iter().map(|r| r.iter().map(|p| 1.0 - p).collect()).collect();
        assert_eq!(score_au(&flipped, &labels, 0.5).unwrap().p_au, Some(0.0));

        let missing_col = vec![vec![Some(true), None], vec![Some(false), None]];
        let s = score_au(&[vec![0.9, 0.9], vec![0.2, 0.2]], &missing_col, 0.5).unwrap();
        assert_eq!(s.f1_per_au, vec![Some(1.0), None]);
        assert_eq!(s.p_au, Some(1.0));

        assert!(matches!(score_au(&probs, &labels, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn au_macro_mean_of_rounded_scores() {
        let au_f1 = [56.6, 42.9, 61.1, 55.7, 73.7, 71.1, 66.5, 18.5, 15.7, 13.0, 87.8, 36.4];
        let per_au: Vec<Option<f64>> = au_f1.iter().map(|v| Some(v / 100.0)).collect();
        let p = macro_mean(&per_au).unwrap();
        assert!((p * 100.0 - 49.9).abs() <= 0.05);
    }

    #[test]
    fn ex_examples() {
        let labels: Vec<Option<usize>> = (0..16).map(|i| Some(i % 8)).collect();
        let preds: Vec<usize> = (0..16).map(|i| i % 8).collect();
        assert_eq!(score_ex(&preds, &labels, 8).unwrap().p_ex, Some(1.0));

        let ex_f1 = [36.3, 24.6, 49.9, 25.2, 41.8, 36.9, 22.0, 29.7];
        let p = macro_mean(&ex_f1.iter().map(|v| Some(v / 100.0)).collect::<Vec<_>>()).unwrap();
        assert!((p * 100.0 - 33.3).abs() <= 0.05);

        let none = score_ex(&[0, 1], &[None, None], 8).unwrap();
        assert_eq!(none.p_ex, None);
        assert!(score_ex(&[9], &[Some(1)], 8).is_err());
    }

    #[test]
    fn ex_chance_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels: Vec<Option<usize>> = (0..10_000).map(|i| Some(i % 8)).collect();
        let preds: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..8)).collect();
        let p = score_ex(&preds, &labels, 8).unwrap().p_ex.unwrap();
        assert!(p < 0.2, "{p}");
        assert!((p - 0.125).abs() < 0.02, "{p}");
    }

    #[test]
    fn va_examples() {
        let rows = [[0.1, 0.4], [-0.2, 0.9], [0.7, -0.3]];
        let labels: Vec<Option<[f64; 2]>> = rows.iter().copied().map(Some).collect();
        assert_abs_diff_eq!(score_va(&rows, &labels).unwrap().p_va, 1.0, epsilon = 1e-15);
        assert_eq!(score_va(&[[0.2, 0.2]; 3], &labels).unwrap().p_va, 0.0);

        let with_missing = vec![Some([0.1, 0.4]), None, None];
        assert!(matches!(score_va(&rows, &with_missing), Err(Error::InsufficientData(_))));

        let p = (0.475 + 0.436) / 2.0;
        assert_abs_diff_eq!(p, 0.4555, epsilon = 1e-12);
        assert_eq!(format!("{:.1}", p * 100.0 + 1e-9), "45.6");
    }

    #[test]
    fn mtl_examples() {
        assert_abs_diff_eq!(score_mtl(0.456, 0.333, 0.499), 1.288, epsilon = 1e-12);
        assert_abs_diff_eq!(score_mtl(0.414, 0.322, 0.479), 1.215, epsilon = 1e-12);
        assert_eq!(score_mtl(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn report_nulls_missing_tasks() {
        let r = MetricReport::new(
            None,
            Some(ExScore {
                f1_per_expr: vec![Some(0.5); 8],
                p_ex: Some(0.5),
            }),
            None,
            12,
            8,
        );
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["p_au"].is_null());
        assert!(json["p_mtl"].is_null());
        assert_eq!(json["p_ex"], 0.5);
        assert_eq!(json["f1_per_au"].as_array().unwrap().len(), 12);
    }

    /// Confusion counts by enumeration, independent of `Confusion`.
    fn oracle_f1(pred: &[bool], truth: &[bool], positive: bool) -> f64 {
        let count = |p: bool, t: bool| pred.iter().zip(truth).filter(|(&a, &b)| (a == p) && (b == t)).count() as f64;
        let (tp, fp, fn_) = if positive {
            (count(true, true), count(true, false), count(false, true))
        } else {
            (count(false, false), count(false, true), count(true, false))
        };
        if tp + fp + fn_ == 0.0 {
            1.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        }
    }

    proptest! {
        #[test]
        fn au_scores_match_enumeration_oracle(
            rows in prop::collection::vec(
                prop::collection::vec((0.0f64..1.0, prop::option::weighted(0.8, prop::bool::ANY)), 4),
                1..200,
            ),
            t in 0.05f64..0.95,
        ) {
            let probs: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|c| c.0).collect()).collect();
            let labels: Vec<Vec<Option<bool>>> = rows.iter().map(|r| r.iter().map(|c| c.1).collect()).collect();
            let s = score_au(&probs, &labels, t).unwrap();
            for j in 0..4 {
                let (p, l): (Vec<bool>, Vec<bool>) = probs
                    .iter()
                    .zip(&labels)
                    .filter_map(|(p, l)| l[j].map(|l| (p[j] >= t, l)))
                    .unzip();
                let expect = (!l.is_empty()).then(|| oracle_f1(&p, &l, true));
                prop_assert_eq!(s.f1_per_au[j], expect);

                // Complementing predictions, labels and threshold turns the
                // score into the F1 of the negative class.
                let cp: Vec<Vec<f64>> = probs.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect();
                let cl: Vec<Vec<Option<bool>>> = labels.iter().map(|r| r.iter().map(|v| v.map(|b| !b)).collect()).collect();
                let cs = score_au(&cp, &cl, 1.0 - t).unwrap();
                let neg = (!l.is_empty()).then(|| oracle_f1(&p, &l, false));
                prop_assert_eq!(cs.f1_per_au[j], neg);
            }
        }

        #[test]
        fn ex_scores_match_oracle_and_ignore_order(
            rows in prop::collection::vec((0usize..8, prop::option::weighted(0.9, 0usize..8)), 1..200),
            seed in any::<u64>(),
        ) {
            let preds: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let labels: Vec<Option<usize>> = rows.iter().map(|r| r.1).collect();
            let s = score_ex(&preds, &labels, 8).unwrap();
            if labels.iter().any(Option::is_some) {
                for k in 0..8 {
                    let (p, l): (Vec<bool>, Vec<bool>) = preds
                        .iter()
                        .zip(&labels)
                        .filter_map(|(&p, l)| l.map(|l| (p == k, l == k)))
                        .unzip();
                    prop_assert_eq!(s.f1_per_expr[k], Some(oracle_f1(&p, &l, true)));
                }
                let p = s.p_ex.unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
            }

            let mut idx: Vec<usize> = (0..rows.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            let sp = score_ex(
                &idx.iter().map(|&i| preds[i]).collect::<Vec<_>>(),
                &idx.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
                8,
            ).unwrap();
            prop_assert_eq!(sp.f1_per_expr, s.f1_per_expr);
        }
    }
}

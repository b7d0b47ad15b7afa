//! Window-level detection metrics and graph comparison.
//!
//! Undefined metrics (empty denominators, single-class labels) are reported as
//! `None`, never as 0.
//!
//! `mae` follows the false-alarm reading: the share of normal windows that are
//! flagged, `FP / (TN + FP)`. The name is kept for parity with published tables.

use serde::{Deserialize, Serialize};

use crate::discovery::CausalGraph;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn check_binary(name: &str, v: &[u8]) -> Result<()> {
    if v.iter().any(|&x| x > 1) {
        return Err(Error::invalid(format!("{name} must be binary")));
    }
    Ok(())
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            expected: format!("{b} entries"),
            got: format!("{a} entries"),
        });
    }
    Ok(())
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<Confusion> {
    check_lengths(preds.len(), labels.len())?;
    check_binary("predictions", preds)?;
    check_binary("labels", labels)?;
    let mut c = Confusion::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (p, y) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// F1 over window predictions. Window labels already carry the any-point rule.
pub fn point_adjusted_f1(preds: &[u8], labels: &[u8]) -> Result<Option<f64>> {
    let c = confusion(preds, labels)?;
    if c.tp + c.fn_ == 0 {
        return Ok(None);
    }
    if c.tp == 0 {
        return Ok(Some(0.0));
    }
    let precision = c.tp as f64 / (c.tp + c.fp) as f64;
    let recall = c.tp as f64 / (c.tp + c.fn_) as f64;
    Ok(Some(2.0 * precision * recall / (precision + recall)))
}

/// Missed alarm rate `FN/(TP+FN)` and false alarm rate `FP/(TN+FP)`.
pub fn mar_mae(preds: &[u8], labels: &[u8]) -> Result<(Option<f64>, Option<f64>)> {
    let c = confusion(preds, labels)?;
    let mar = (c.tp + c.fn_ > 0).then(|| c.fn_ as f64 / (c.tp + c.fn_) as f64);
    let mae = (c.tn + c.fp > 0).then(|| c.fp as f64 / (c.tn + c.fp) as f64);
    Ok((mar, mae))
}

/// ROC-AUC (trapezoidal) and PRC-AUC (step-wise, i.e. average precision).
/// Tied scores are swept together as one threshold.
pub fn roc_prc_auc(scores: &[f64], labels: &[u8]) -> Result<(Option<f64>, Option<f64>)> {
    check_lengths(scores.len(), labels.len())?;
    check_binary("labels", labels)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok((None, None));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut roc, mut prc) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp_prev, fp_prev) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc += (fp - fp_prev) as f64 / neg as f64 * (tp + tp_prev) as f64 / (2.0 * pos as f64);
        if tp > tp_prev {
            prc += (tp - tp_prev) as f64 / pos as f64 * tp as f64 / (tp + fp) as f64;
        }
    }
    Ok((Some(roc), Some(prc)))
}

/// Curve vertices, one per distinct score threshold from high to low.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    /// `(false positive rate, true positive rate)`, starting at `(0, 0)`.
    pub roc: Vec<(f64, f64)>,
    /// `(recall, precision)`.
    pub prc: Vec<(f64, f64)>,
}

/// ROC and precision-recall vertices; `None` when only one class is present.
pub fn curve_points(scores: &[f64], labels: &[u8]) -> Result<Option<Curves>> {
    check_lengths(scores.len(), labels.len())?;
    check_binary("labels", labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut roc = vec![(0.0, 0.0)];
    let mut prc = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        prc.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(Some(Curves { roc, prc }))
}

/// Edge insertions, deletions and reversals needed to turn `a` into `b`.
/// Both graphs are thresholded at their own `edge_threshold`; a reversed intra
/// edge counts once. Lag blocks are compared entrywise.
pub fn structural_hamming(a: &CausalGraph, b: &CausalGraph) -> Result<usize> {
    a.same_nodes(b)?;
    let m = a.node_count();
    let on = |g: &CausalGraph, w: f64| w != 0.0 && w.abs() >= g.edge_threshold;
    let mut dist = 0;
    for i in 0..m {
        for j in i + 1..m {
            let sa = (on(a, a.intra[(i, j)]), on(a, a.intra[(j, i)]));
            let sb = (on(b, b.intra[(i, j)]), on(b, b.intra[(j, i)]));
            if sa != sb {
                dist += 1;
            }
        }
    }
    for l in 0..a.max_lag().max(b.max_lag()) {
        for i in 0..m {
            for j in 0..m {
                let ea = a.lags.get(l).is_some_and(|x| on(a, x[(i, j)]));
                let eb = b.lags.get(l).is_some_and(|x| on(b, x[(i, j)]));
                if ea != eb {
                    dist += 1;
                }
            }
        }
    }
    Ok(dist)
}

/// Structural Hamming distance restricted to the contemporaneous block.
pub fn structural_hamming_intra(a: &CausalGraph, b: &CausalGraph) -> Result<usize> {
    let strip = |g: &CausalGraph| CausalGraph {
        lags: Vec::new(),
        ..g.clone()
    };
    structural_hamming(&strip(a), &strip(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub point_adjusted_f1: Option<f64>,
    pub roc_auc: Option<f64>,
    pub prc_auc: Option<f64>,
    pub mar: Option<f64>,
    pub mae: Option<f64>,
    pub confusion: Confusion,
    pub scores: Vec<f64>,
    pub predictions: Vec<u8>,
    pub labels: Vec<u8>,
}

impl MetricsReport {
    pub fn evaluate(scores: &[f64], preds: &[u8], labels: &[u8]) -> Result<Self> {
        check_lengths(scores.len(), labels.len())?;
        let (roc_auc, prc_auc) = roc_prc_auc(scores, labels)?;
        let (mar, mae) = mar_mae(preds, labels)?;
        Ok(MetricsReport {
            point_adjusted_f1: point_adjusted_f1(preds, labels)?,
            roc_auc,
            prc_auc,
            mar,
            mae,
            confusion: confusion(preds, labels)?,
            scores: scores.to_vec(),
            predictions: preds.to_vec(),
            labels: labels.to_vec(),
        })
    }

    /// Threshold scores at `threshold` (inclusive) and evaluate.
    pub fn from_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
        Self::evaluate(scores, &preds, labels)
    }
}

//! Diagnostics: accuracy, pseudo-label quality, silhouette, class-wise
//! cosine similarity and the consensus correction ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SageError};
use crate::gri::COS_NORM_EPS;
use crate::numkit::{argmax, dot, norm, Mat};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub test_acc: f64,
    pub pl_acc: f64,
    pub pl_f1_macro: f64,
    pub silhouette: f64,
    pub inter_sim: f64,
    pub intra_sim: f64,
    pub correction_ratio: f64,
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(SageError::InvalidInput(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Fraction of positions where `pred` equals `truth`. Empty input gives 0.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    same_len(pred.len(), truth.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Accuracy and macro-F1 of pseudo-labels. Classes are those appearing in
/// either list; a class with zero precision and recall contributes F1 = 0.
pub fn pseudo_label_quality(pred: &[usize], truth: &[usize]) -> Result<(f64, f64)> {
    let acc = accuracy(pred, truth)?;
    let classes = pred.iter().chain(truth).max().map_or(0, |m| m + 1);
    if classes == 0 {
        return Ok((acc, 0.0));
    }
    let mut tp = vec![0usize; classes];
    let mut pred_n = vec![0usize; classes];
    let mut true_n = vec![0usize; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        pred_n[p] += 1;
        true_n[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let mut f1_sum = 0.0;
    let mut present = 0;
    for c in 0..classes {
        if pred_n[c] == 0 && true_n[c] == 0 {
            continue;
        }
        present += 1;
        let precision = if pred_n[c] > 0 { tp[c] as f64 / pred_n[c] as f64 } else { 0.0 };
        let recall = if true_n[c] > 0 { tp[c] as f64 / true_n[c] as f64 } else { 0.0 };
        if precision + recall > 0.0 {
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok((acc, f1_sum / present as f64))
}

fn distinct_classes(labels: &[usize]) -> Vec<usize> {
    let mut c = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

/// Mean silhouette coefficient with Euclidean distance.
pub fn silhouette(features: &Mat, labels: &[usize]) -> Result<f64> {
    same_len(features.rows(), labels.len())?;
    let classes = distinct_classes(labels);
    if classes.len() < 2 {
        return Err(SageError::UndefinedMetric("silhouette needs at least two classes".into()));
    }
    let slot = |y: usize| classes.binary_search(&y).expect("present");
    let sizes = {
        let mut s = vec![0usize; classes.len()];
        labels.iter().for_each(|&y| s[slot(y)] += 1);
        s
    };
    let n = labels.len();
    let mut total = 0.0;
    let mut sums = vec![0.0; classes.len()];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let xi = features.row(i);
        for j in 0..n {
            if i != j {
                let d: f64 = xi.iter().zip(features.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                sums[slot(labels[j])] += d.sqrt();
            }
        }
        let own = slot(labels[i]);
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..classes.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// `(inter, intra)`: mean cosine similarity over different-class and
/// same-class pairs `i < j`.
pub fn class_similarity(features: &Mat, labels: &[usize]) -> Result<(f64, f64)> {
    same_len(features.rows(), labels.len())?;
    if distinct_classes(labels).len() < 2 {
        return Err(SageError::UndefinedMetric("inter-class similarity needs two classes".into()));
    }
    let n = labels.len();
    let normed: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r = features.row(i);
            let nr = norm(r);
            if nr < COS_NORM_EPS {
                vec![0.0; r.len()]
            } else {
                r.iter().map(|v| v / nr).collect()
            }
        })
        .collect();
    let (mut inter, mut n_inter, mut intra, mut n_intra) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let c = dot(&normed[i], &normed[j]);
            if labels[i] == labels[j] {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 {
        return Err(SageError::UndefinedMetric("no same-class pairs".into()));
    }
    Ok((inter / n_inter as f64, intra / n_intra as f64))
}

/// Share of wrongly pseudo-labeled samples whose consensus-weighted vote over
/// the batch's pseudo-labels recovers the true class. 0 when nothing is wrong.
pub fn correction_ratio(consensus: &Mat, pseudo: &[usize], truth: &[usize]) -> Result<f64> {
    let n = pseudo.len();
    same_len(n, truth.len())?;
    if consensus.shape() != (n, n) {
        return Err(SageError::InvalidInput(format!(
            "consensus is {:?} for a batch of {n}",
            consensus.shape()
        )));
    }
    let classes = pseudo.iter().chain(truth).max().map_or(0, |m| m + 1);
    let (mut wrong, mut fixed) = (0usize, 0usize);
    let mut votes = vec![0.0; classes];
    for i in 0..n {
        if pseudo[i] == truth[i] {
            continue;
        }
        wrong += 1;
        votes.iter_mut().for_each(|v| *v = 0.0);
        for (j, &p) in pseudo.iter().enumerate() {
            votes[p] += consensus.get(i, j);
        }
        if argmax(&votes) == truth[i] {
            fixed += 1;
        }
    }
    Ok(if wrong == 0 { 0.0 } else { fixed as f64 / wrong as f64 })
}

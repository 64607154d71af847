//! The four-term training objective and prediction.
//!
//! `L_total = L_cls + L_con + L_sim + L_aux`. The primary head only ever sees
//! labeled targets; pseudo-labels it produces on the weak view train the
//! auxiliary head on the strong view, weighted by reliability.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SageError};
use crate::gri;
use crate::model::{BatchActivations, ModelParams, Upstream};
use crate::numkit::{argmax, softmax_in_place, softmax_rows, Mat};

/// Which method components are active. All on is the full method; the
/// ablation ladder switches them on one at a time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    /// Auxiliary branch. Off: pseudo-label CE goes through the primary head.
    pub ab: bool,
    /// Reliability weighting. Off: every weight is 1.
    pub drp: bool,
    /// Relational inference. Off: `L_con = L_sim = 0`.
    pub gri: bool,
    /// With `gri` on, whether `L_con` is included.
    pub con: bool,
    /// With `gri` on, whether `L_sim` is included.
    pub sim: bool,
}

impl Components {
    pub const FULL: Components = Components { ab: true, drp: true, gri: true, con: true, sim: true };

    /// One rung of the ablation ladder, both relational terms included.
    pub const fn ladder(ab: bool, drp: bool, gri: bool) -> Self {
        Components { ab, drp, gri, con: true, sim: true }
    }

    pub fn uses_con(&self) -> bool {
        self.gri && self.con
    }

    pub fn uses_sim(&self) -> bool {
        self.gri && self.sim
    }
}

impl Default for Components {
    fn default() -> Self {
        Self::FULL
    }
}

/// Variants of the relational terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GriOptions {
    /// Contrast weak against strong projections instead of weak against weak.
    pub cross_view: bool,
    /// L2-normalize projections before the ridge embedding and the pairwise
    /// similarities. `L_sim` is a cosine and unaffected.
    pub normalize_z: bool,
}

impl Default for GriOptions {
    /// Unnormalized projections drive `L_con` toward `z = 0`, which takes the
    /// backbone with it on some seeds, so normalization is on by default.
    fn default() -> Self {
        GriOptions { cross_view: false, normalize_z: true }
    }
}

impl GriOptions {
    /// The projections the relational terms see, plus row norms when they
    /// were normalized.
    pub fn contrast_input(&self, z: &Mat) -> (Mat, Option<Vec<f64>>) {
        if self.normalize_z {
            let (zh, n) = gri::normalize_rows(z);
            (zh, Some(n))
        } else {
            (z.clone(), None)
        }
    }

    fn contrast_backward(&self, z_in: &Mat, norms: Option<&[f64]>, grad: Mat) -> Mat {
        match norms {
            Some(n) => gri::normalize_rows_backward(z_in, n, &grad),
            None => grad,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_con: f64,
    pub l_sim: f64,
    pub l_aux: f64,
    pub l_total: f64,
    pub w_mean: f64,
    pub pl: Vec<usize>,
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(SageError::InvalidInput(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(SageError::InvalidInput(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// `mean_i w_i · CE(logits_i, labels_i)` and its gradient w.r.t. the logits.
pub fn weighted_cross_entropy(logits: &Mat, labels: &[usize], weights: Option<&[f64]>) -> Result<(f64, Mat)> {
    let (n, c) = logits.shape();
    check_labels(labels, n, c)?;
    if let Some(w) = weights {
        if w.len() != n {
            return Err(SageError::InvalidInput(format!("{} weights for {n} rows", w.len())));
        }
    }
    if n == 0 {
        return Ok((0.0, Mat::zeros(0, c)));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let wi = weights.map_or(1.0, |w| w[i]);
        loss += wi * (lse - row[y]);
        let g = grad.row_mut(i);
        softmax_in_place(g);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= wi * inv_n);
    }
    Ok((loss * inv_n, grad))
}

/// `L_cls`: mean cross-entropy of the primary head on labeled data.
pub fn primary_loss(logits_cls: &Mat, labels: &[usize]) -> Result<(f64, Mat)> {
    weighted_cross_entropy(logits_cls, labels, None)
}

/// Argmax pseudo-labels (lowest index on ties) and softmax probabilities.
pub fn pseudo_label(logits_cls: &Mat) -> (Vec<usize>, Mat) {
    let q = softmax_rows(logits_cls);
    let labels = (0..logits_cls.rows()).map(|i| argmax(logits_cls.row(i))).collect();
    (labels, q)
}

/// `L_aux = mean_i w_i CE(aux(f_s_i), ŷ_i) + mean CE(aux(f_l), y_l)`.
/// Returns the loss and gradients for the unlabeled and labeled aux logits.
pub fn auxiliary_loss(
    aux_unlabeled: &Mat,
    pseudo: &[usize],
    weights: &[f64],
    aux_labeled: &Mat,
    labels: &[usize],
) -> Result<(f64, Mat, Mat)> {
    if aux_unlabeled.cols() != aux_labeled.cols() {
        return Err(SageError::InvalidInput("aux logits disagree on class count".into()));
    }
    let (lu, gu) = weighted_cross_entropy(aux_unlabeled, pseudo, Some(weights))?;
    let (ll, gl) = weighted_cross_entropy(aux_labeled, labels, None)?;
    Ok((lu + ll, gu, gl))
}

pub fn total_loss(l_cls: f64, l_con: f64, l_sim: f64, l_aux: f64) -> f64 {
    l_cls + l_con + l_sim + l_aux
}

/// Class with the largest primary-head logit. Projection and auxiliary head
/// play no part.
pub fn predict(params: &ModelParams, x: &Mat) -> Result<Vec<usize>> {
    let (_, logits) = params.features_and_logits(x)?;
    Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
}

/// Quantities held constant (stop-gradient) during one step.
#[derive(Clone, Debug)]
pub struct StepTargets {
    /// Structural consensus over the unlabeled batch; `None` when GRI is off.
    pub consensus: Option<Mat>,
    pub pseudo: Vec<usize>,
    pub weights: Vec<f64>,
    pub f_w: Mat,
    pub f_s: Mat,
}

/// Forward passes of one step: weak labeled, weak unlabeled, strong unlabeled.
#[derive(Clone, Debug)]
pub struct StepActivations {
    pub labeled: BatchActivations,
    pub weak: BatchActivations,
    pub strong: BatchActivations,
}

/// Upstream gradients for the three forward passes of a step.
#[derive(Clone, Debug, Default)]
pub struct StepUpstream {
    pub labeled: Upstream,
    pub weak: Upstream,
    pub strong: Upstream,
}

/// Evaluates `L_total` for fixed targets and returns the per-pass upstream
/// gradients. Nothing in `targets` receives a gradient.
pub fn composite_loss(
    acts: &StepActivations,
    labels: &[usize],
    targets: &StepTargets,
    comps: Components,
    opts: GriOptions,
) -> Result<(LossBreakdown, StepUpstream)> {
    let mut up = StepUpstream::default();

    let (l_cls, d_cls) = primary_loss(&acts.labeled.logits_cls, labels)?;
    up.labeled.cls = Some(d_cls);

    let (mut l_con, mut l_sim) = (0.0, 0.0);
    let (z_w, z_s) = (&acts.weak.z, &acts.strong.z);
    let mut dz_w = Mat::zeros(z_w.rows(), z_w.cols());
    let mut dz_s = Mat::zeros(z_s.rows(), z_s.cols());
    if comps.uses_con() {
        let g = targets
            .consensus
            .as_ref()
            .ok_or_else(|| SageError::State("relational inference on but no consensus given".into()))?;
        let (cw, nw) = opts.contrast_input(z_w);
        let (cs, ns) = opts.contrast_input(z_s);
        let (l, a, b) = if opts.cross_view {
            gri::cross_view_contrastive_loss(&cw, &cs, g)?
        } else {
            let (l, a) = gri::structural_contrastive_loss(&cw, g)?;
            (l, a, Mat::zeros(z_s.rows(), z_s.cols()))
        };
        dz_w.add_assign(&opts.contrast_backward(&cw, nw.as_deref(), a));
        dz_s.add_assign(&opts.contrast_backward(&cs, ns.as_deref(), b));
        l_con = l;
    }
    if comps.uses_sim() {
        let (l, a, b) = gri::representation_consistency_loss(z_w, z_s, &targets.f_w, &targets.f_s)?;
        dz_w.add_assign(&a);
        dz_s.add_assign(&b);
        l_sim = l;
    }
    if comps.gri {
        up.weak.z = Some(dz_w);
        up.strong.z = Some(dz_s);
    }

    let l_aux = if comps.ab {
        let (l, du, dl) = auxiliary_loss(
            &acts.strong.logits_aux,
            &targets.pseudo,
            &targets.weights,
            &acts.labeled.logits_aux,
            labels,
        )?;
        up.strong.aux = Some(du);
        up.labeled.aux = Some(dl);
        l
    } else {
        let (l, du) = weighted_cross_entropy(&acts.strong.logits_cls, &targets.pseudo, Some(&targets.weights))?;
        up.strong.cls = Some(du);
        l
    };

    let w_mean = if targets.weights.is_empty() {
        0.0
    } else {
        targets.weights.iter().sum::<f64>() / targets.weights.len() as f64
    };
    let breakdown = LossBreakdown {
        l_cls,
        l_con,
        l_sim,
        l_aux,
        l_total: total_loss(l_cls, l_con, l_sim, l_aux),
        w_mean,
        pl: targets.pseudo.clone(),
    };
    Ok((breakdown, up))
}

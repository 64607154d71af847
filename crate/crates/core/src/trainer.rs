//! The end-to-end training loop: batch sampling, the four-loss step,
//! SGD with momentum under a truncated cosine schedule, and periodic
//! evaluation.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::anchors::{generate_etf, AnchorFrame};
use crate::data::{strong_view, weak_view, AugmentSpec, DatasetSpec, UniSSLDataset};
use crate::drp::{metrics_from_probs, ReliabilityTracker};
use crate::error::{Result, SageError};
use crate::gri::{build_consensus, relational_embed};
use crate::metrics::{self, DiagnosticReport};
use crate::model::{init_params, ModelDims, ModelParams};
use crate::numkit::{argmax, seeded_rng, Mat, Rng};
use crate::objective::{
    composite_loss, pseudo_label, Components, GriOptions, LossBreakdown, StepActivations, StepTargets,
};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_labeled: usize,
    /// Unlabeled batch size is `ratio_u · batch_labeled`.
    pub ratio_u: usize,
    pub eta: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub beta: usize,
    pub drp_decay: f64,
    pub eval_every: usize,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    /// Anchor count; 0 means `feature_dim + 1`.
    pub anchors: usize,
    pub components: Components,
    pub gri_options: GriOptions,
    pub augment: AugmentSpec,
    pub data: DatasetSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 3000,
            batch_labeled: 16,
            ratio_u: 7,
            eta: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            lambda: 0.1,
            beta: 5,
            drp_decay: crate::drp::DEFAULT_DECAY,
            eval_every: 250,
            checkpoint_every: 0,
            seed: 0,
            hidden: vec![64, 64],
            feature_dim: 16,
            anchors: 0,
            components: Components::FULL,
            gri_options: GriOptions::default(),
            augment: AugmentSpec::default(),
            data: DatasetSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn batch_unlabeled(&self) -> usize {
        self.ratio_u * self.batch_labeled
    }

    pub fn anchor_count(&self) -> usize {
        if self.anchors == 0 {
            self.feature_dim + 1
        } else {
            self.anchors
        }
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            input: self.data.input_dim,
            hidden: self.hidden.clone(),
            feature: self.feature_dim,
            classes: self.data.classes,
        }
    }

    /// `eta = 0` is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SageError::Config(m.to_string()));
        if self.total_steps == 0 {
            return bad("total_steps must be >= 1");
        }
        if self.batch_labeled == 0 || self.ratio_u == 0 {
            return bad("batch sizes must be >= 1");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be a finite value >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0, 1) and weight_decay be >= 0");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be > 0");
        }
        if self.beta == 0 {
            return bad("beta must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.drp_decay) {
            return bad("drp decay must lie in [0, 1]");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1");
        }
        if self.anchor_count() > self.feature_dim + 1 {
            return Err(SageError::GeometricInfeasibility(format!(
                "{} anchors cannot be equiangular in {} dimensions",
                self.anchor_count(),
                self.feature_dim
            )));
        }
        self.augment.validate()
    }
}

/// `η · cos(7πt / 16T)`.
pub fn lr_at(t: usize, total: usize, eta: f64) -> Result<f64> {
    if t > total || total == 0 {
        return Err(SageError::InvalidArgument(format!("step {t} outside schedule of {total}")));
    }
    Ok(eta * (7.0 * std::f64::consts::PI * t as f64 / (16.0 * total as f64)).cos())
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub velocity: Vec<f64>,
    pub tracker: ReliabilityTracker,
    pub step: usize,
    pub data_rng: Rng,
    pub augment_rng: Rng,
}

/// Builds the targets that are held constant during a step. Updates the
/// reliability statistics before weighting.
pub fn step_targets(
    acts: &StepActivations,
    frame: &AnchorFrame,
    config: &TrainConfig,
    tracker: &mut ReliabilityTracker,
) -> Result<StepTargets> {
    let comps = config.components;
    let (pseudo, q) = pseudo_label(&acts.weak.logits_cls);
    let (q_max, q_gap) = metrics_from_probs(&q)?;
    tracker.update_stats(&q_max, &q_gap)?;
    let weights = if comps.drp { tracker.weight(&q_max, &q_gap)? } else { vec![1.0; pseudo.len()] };
    let consensus = if comps.uses_con() {
        let z = config.gri_options.contrast_input(&acts.weak.z).0;
        let a = relational_embed(&z, frame, config.lambda)?;
        Some(build_consensus(&a, config.beta)?.2)
    } else {
        None
    };
    Ok(StepTargets { consensus, pseudo, weights, f_w: acts.weak.f.clone(), f_s: acts.strong.f.clone() })
}

pub struct Trainer {
    pub config: TrainConfig,
    pub frame: AnchorFrame,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let frame = generate_etf(config.anchor_count(), config.feature_dim, config.seed)?;
        let params = init_params(&config.model_dims(), config.seed.wrapping_add(1))?;
        let velocity = vec![0.0; params.num_params()];
        let state = TrainState {
            params,
            velocity,
            tracker: ReliabilityTracker::new(config.drp_decay),
            step: 0,
            data_rng: seeded_rng(config.seed.wrapping_add(2)),
            augment_rng: seeded_rng(config.seed.wrapping_add(3)),
        };
        Ok(Trainer { config, frame, state })
    }

    /// One optimization step on the given raw (un-augmented) batches.
    pub fn train_step(&mut self, x_l: &Mat, y_l: &[usize], x_u: &Mat) -> Result<LossBreakdown> {
        if x_l.rows() == 0 || x_u.rows() == 0 {
            return Err(SageError::InvalidArgument("empty batch".into()));
        }
        if self.state.step >= self.config.total_steps {
            return Err(SageError::State("schedule already finished".into()));
        }
        let aug = &self.config.augment;
        let rng = &mut self.state.augment_rng;
        let lab = weak_view(x_l, aug, rng);
        let weak = weak_view(x_u, aug, rng);
        let strong = strong_view(x_u, aug, rng);

        let params = &self.state.params;
        let acts = StepActivations {
            labeled: params.forward(&lab)?,
            weak: params.forward(&weak)?,
            strong: params.forward(&strong)?,
        };
        let targets = step_targets(&acts, &self.frame, &self.config, &mut self.state.tracker)?;
        let (breakdown, up) =
            composite_loss(&acts, y_l, &targets, self.config.components, self.config.gri_options)?;
        if !breakdown.l_total.is_finite() {
            return Err(SageError::NumericFailure(format!(
                "non-finite loss at step {}: cls={} con={} sim={} aux={} w_mean={} tracker={:?}",
                self.state.step,
                breakdown.l_cls,
                breakdown.l_con,
                breakdown.l_sim,
                breakdown.l_aux,
                breakdown.w_mean,
                self.state.tracker
            )));
        }

        let params = &mut self.state.params;
        params.zero_grad();
        params.backward(&acts.labeled, &up.labeled)?;
        params.backward(&acts.weak, &up.weak)?;
        params.backward(&acts.strong, &up.strong)?;

        let lr = lr_at(self.state.step, self.config.total_steps, self.config.eta)?;
        let (m, wd) = (self.config.momentum, self.config.weight_decay);
        let velocity = &mut self.state.velocity;
        let mut off = 0;
        params.visit_mut(|p, g| {
            for k in 0..p.len() {
                let v = &mut velocity[off + k];
                *v = m * *v + g[k] + wd * p[k];
                p[k] -= lr * *v;
            }
            off += p.len();
        });
        self.state.step += 1;
        Ok(breakdown)
    }

    /// Uniform with-replacement batch from both training splits.
    pub fn sample_batch(&mut self, ds: &UniSSLDataset) -> (Mat, Vec<usize>, Mat) {
        let rng = &mut self.state.data_rng;
        let li: Vec<usize> =
            (0..self.config.batch_labeled).map(|_| rng.random_range(0..ds.labeled.len())).collect();
        let ui: Vec<usize> =
            (0..self.config.batch_unlabeled()).map(|_| rng.random_range(0..ds.unlabeled.len())).collect();
        let y: Vec<usize> = li.iter().map(|&i| ds.labeled.y[i]).collect();
        (ds.labeled.x.select_rows(&li), y, ds.unlabeled.x.select_rows(&ui))
    }
}

/// Everything `evaluate` needs that stays fixed across a run.
pub struct EvalContext<'a> {
    pub dataset: &'a UniSSLDataset,
    pub frame: &'a AnchorFrame,
    pub lambda: f64,
    pub beta: usize,
    pub gri_options: GriOptions,
    /// Unlabeled indices of the held-out batch used for the correction ratio.
    pub probe: Vec<usize>,
}

impl<'a> EvalContext<'a> {
    pub fn new(dataset: &'a UniSSLDataset, frame: &'a AnchorFrame, config: &TrainConfig) -> Self {
        let mut rng = seeded_rng(config.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut all: Vec<usize> = (0..dataset.unlabeled.len()).collect();
        rand::seq::SliceRandom::shuffle(all.as_mut_slice(), &mut rng);
        all.truncate(config.batch_unlabeled().min(dataset.unlabeled.len()));
        all.sort_unstable();
        EvalContext { dataset, frame, lambda: config.lambda, beta: config.beta, gri_options: config.gri_options, probe: all }
    }

    /// Consensus over the probe batch plus its pseudo-labels.
    pub fn probe_graph(&self, params: &ModelParams) -> Result<(Mat, Mat, Mat, Vec<usize>)> {
        let x = self.dataset.unlabeled.x.select_rows(&self.probe);
        let acts = params.forward(&x)?;
        let z = self.gri_options.contrast_input(&acts.z).0;
        let a = relational_embed(&z, self.frame, self.lambda)?;
        let (affinity, transition, consensus) = build_consensus(&a, self.beta)?;
        let pseudo = (0..acts.logits_cls.rows()).map(|i| argmax(acts.logits_cls.row(i))).collect();
        Ok((affinity, transition, consensus, pseudo))
    }

    /// Full diagnostic report on an immutable parameter snapshot.
    pub fn evaluate(&self, params: &ModelParams) -> Result<DiagnosticReport> {
        let ds = self.dataset;
        let (f_test, logits) = params.features_and_logits(&ds.test.x)?;
        let pred: Vec<usize> = (0..logits.rows()).map(|i| argmax(logits.row(i))).collect();
        let test_acc = metrics::accuracy(&pred, &ds.test.y)?;

        let (_, logits_u) = params.features_and_logits(&ds.unlabeled.x)?;
        let pl: Vec<usize> = (0..logits_u.rows()).map(|i| argmax(logits_u.row(i))).collect();
        let (pl_acc, pl_f1_macro) = metrics::pseudo_label_quality(&pl, ds.unlabeled.y_hidden.reveal())?;

        let silhouette = metrics::silhouette(&f_test, &ds.test.y)?;
        let (inter_sim, intra_sim) = metrics::class_similarity(&f_test, &ds.test.y)?;

        let (_, _, consensus, pseudo) = self.probe_graph(params)?;
        let truth: Vec<usize> = self.probe.iter().map(|&i| ds.unlabeled.y_hidden.reveal()[i]).collect();
        let correction_ratio = metrics::correction_ratio(&consensus, &pseudo, &truth)?;

        Ok(DiagnosticReport { test_acc, pl_acc, pl_f1_macro, silhouette, inter_sim, intra_sim, correction_ratio })
    }
}

/// One line of the metrics CSV.
///
/// Diagnostics describe the parameters after `step` updates. Training fields
/// (learning rate, losses, weights, tracker) come from the update performed
/// at `step`, or from the last update on the final row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub mu_max: f64,
    pub sigma_max: f64,
    pub mu_gap: f64,
    pub sigma_gap: f64,
    pub report: DiagnosticReport,
}

pub const CSV_HEADER: &str = "step,lr,l_cls,l_con,l_sim,l_aux,l_total,w_mean,mu_max,sigma_max,mu_gap,sigma_gap,\
test_acc,pl_acc,pl_f1,silhouette,inter_sim,intra_sim,correction_ratio";

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let l = &self.losses;
        let r = &self.report;
        let vals = [
            self.lr, l.l_cls, l.l_con, l.l_sim, l.l_aux, l.l_total, l.w_mean, self.mu_max, self.sigma_max,
            self.mu_gap, self.sigma_gap, r.test_acc, r.pl_acc, r.pl_f1_macro, r.silhouette, r.inter_sim,
            r.intra_sim, r.correction_ratio,
        ];
        let mut s = self.step.to_string();
        for v in vals {
            let _ = write!(s, ",{v}");
        }
        s
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

pub struct RunOutput {
    pub params: ModelParams,
    pub frame: AnchorFrame,
    pub rows: Vec<MetricsRow>,
}

impl RunOutput {
    pub fn csv(&self) -> String {
        metrics_csv(&self.rows)
    }

    pub fn final_report(&self) -> &DiagnosticReport {
        &self.rows.last().expect("at least two rows").report
    }
}

pub fn run(config: &TrainConfig, dataset: &UniSSLDataset) -> Result<RunOutput> {
    run_observed(config, dataset, &mut ())
}

/// Callbacks for side outputs of a run. Both default to doing nothing.
pub trait RunObserver {
    /// Called at every evaluation point, before the row is recorded.
    fn on_eval(&mut self, _step: usize, _params: &ModelParams, _ctx: &EvalContext) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_every` steps and once after the last step.
    fn on_checkpoint(&mut self, _step: usize, _params: &ModelParams) -> Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

pub fn run_observed(
    config: &TrainConfig,
    dataset: &UniSSLDataset,
    observer: &mut impl RunObserver,
) -> Result<RunOutput> {
    if dataset.input_dim != config.data.input_dim || dataset.classes != config.data.classes {
        return Err(SageError::Config("dataset shape disagrees with the model config".into()));
    }
    let mut trainer = Trainer::new(config.clone())?;
    let frame = trainer.frame.clone();
    let ctx = EvalContext::new(dataset, &frame, config);
    let total = config.total_steps;
    let mut rows = Vec::new();
    let mut last = MetricsRow::default();

    for t in 0..total {
        let report = if t % config.eval_every == 0 {
            observer.on_eval(t, &trainer.state.params, &ctx)?;
            Some(ctx.evaluate(&trainer.state.params)?)
        } else {
            None
        };
        let (x_l, y_l, x_u) = trainer.sample_batch(dataset);
        let losses = trainer.train_step(&x_l, &y_l, &x_u)?;
        let tr = &trainer.state.tracker;
        last = MetricsRow {
            step: t,
            lr: lr_at(t, total, config.eta)?,
            losses,
            mu_max: tr.mu_max,
            sigma_max: tr.sigma_max(),
            mu_gap: tr.mu_gap,
            sigma_gap: tr.sigma_gap(),
            report: DiagnosticReport::default(),
        };
        if let Some(report) = report {
            log::info!(
                "step {t}: loss {:.4} test_acc {:.4} pl_acc {:.4}",
                last.losses.l_total,
                report.test_acc,
                report.pl_acc
            );
            rows.push(MetricsRow { report, ..last.clone() });
        }
        if config.checkpoint_every > 0 && (t + 1) % config.checkpoint_every == 0 && t + 1 < total {
            observer.on_checkpoint(t + 1, &trainer.state.params)?;
        }
    }
    observer.on_eval(total, &trainer.state.params, &ctx)?;
    let report = ctx.evaluate(&trainer.state.params)?;
    log::info!("step {total}: test_acc {:.4} pl_acc {:.4}", report.test_acc, report.pl_acc);
    rows.push(MetricsRow { step: total, report, ..last });
    observer.on_checkpoint(total, &trainer.state.params)?;
    Ok(RunOutput { params: trainer.state.params, frame, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_spot_values() {
        let eta = 0.03;
        assert_eq!(lr_at(0, 100, eta).unwrap(), eta);
        let end = lr_at(100, 100, eta).unwrap();
        assert!((end - eta * (7.0 * std::f64::consts::PI / 16.0).cos()).abs() < 1e-15);
        assert!((end / eta - 0.1951).abs() < 1e-4);
        assert!((lr_at(50, 100, eta).unwrap() / eta - 0.7730).abs() < 1e-4);
        assert!(lr_at(101, 100, eta).is_err());
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            total_steps: 4,
            batch_labeled: 4,
            ratio_u: 3,
            eval_every: 2,
            hidden: vec![8],
            feature_dim: 4,
            data: DatasetSpec { m_max: 30, test_per_class: 5, classes: 3, input_dim: 4, ..DatasetSpec::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let cfg = TrainConfig { eta: 0.0, ..small_config() };
        let ds = cfg.data.build(1).unwrap();
        let mut tr = Trainer::new(cfg).unwrap();
        let before = tr.state.params.flat_params();
        let (xl, yl, xu) = tr.sample_batch(&ds);
        let losses = tr.train_step(&xl, &yl, &xu).unwrap();
        assert_eq!(tr.state.params.flat_params(), before);
        assert!(losses.l_total.is_finite() && losses.l_cls > 0.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let mut tr = Trainer::new(small_config()).unwrap();
        let err = tr.train_step(&Mat::zeros(0, 4), &[], &Mat::zeros(3, 4));
        assert!(matches!(err, Err(SageError::InvalidArgument(_))));
    }

    #[test]
    fn unlabeled_batch_is_seven_times_labeled() {
        let cfg = TrainConfig { batch_labeled: 64, ..TrainConfig::default() };
        assert_eq!(cfg.batch_unlabeled(), 448);
    }

    #[test]
    fn row_bookkeeping() {
        let cfg = TrainConfig { total_steps: 1, ..small_config() };
        let ds = cfg.data.build(2).unwrap();
        let out = run(&cfg, &ds).unwrap();
        assert_eq!(out.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1]);

        let cfg = TrainConfig { total_steps: 5, eval_every: 2, ..small_config() };
        let out = run(&cfg, &ds).unwrap();
        assert_eq!(out.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 2, 4, 5]);
        for r in &out.rows {
            let l = &r.losses;
            assert_eq!(l.l_total, l.l_cls + l.l_con + l.l_sim + l.l_aux);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lambda: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { beta: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(matches!(
            TrainConfig { anchors: 40, ..TrainConfig::default() }.validate(),
            Err(SageError::GeometricInfeasibility(_))
        ));
    }
}

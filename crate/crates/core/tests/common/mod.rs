//! Shared fixtures: a small network (d=8, C=3, B_l=6, B_u=12) with frozen
//! step targets, per-term losses and central-difference gradients.
#![allow(dead_code)]

use sage::data::DatasetSpec;
use sage::drp::ReliabilityTracker;
use sage::gri;
use sage::model::{init_params, BatchActivations, ModelParams, Upstream};
use sage::numkit::{seeded_rng, Mat};
use sage::objective::{
    auxiliary_loss, composite_loss, primary_loss, StepActivations, StepTargets, StepUpstream,
};
use sage::trainer::{step_targets, TrainConfig};

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

pub fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        total_steps: 10,
        batch_labeled: 6,
        ratio_u: 2,
        hidden: vec![10],
        feature_dim: 8,
        seed,
        data: DatasetSpec { classes: 3, input_dim: 5, ..DatasetSpec::default() },
        ..TrainConfig::default()
    }
}

pub struct Fixture {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub x_l: Mat,
    pub y_l: Vec<usize>,
    pub x_w: Mat,
    pub x_s: Mat,
    pub targets: StepTargets,
}

pub fn fixture(seed: u64) -> Fixture {
    let config = small_config(seed);
    let params = init_params(&config.model_dims(), seed).unwrap();
    let mut rng = seeded_rng(seed + 100);
    let x_l = Mat::gaussian(6, 5, &mut rng);
    let y_l: Vec<usize> = (0..6).map(|i| i % 3).collect();
    let x_w = Mat::gaussian(12, 5, &mut rng);
    let x_s = x_w.add(&Mat::gaussian(12, 5, &mut rng).scale(0.3));
    let frame = sage::anchors::generate_etf(9, 8, seed).unwrap();
    let acts = forward(&params, &x_l, &x_w, &x_s);
    let mut tracker = ReliabilityTracker::new(config.drp_decay);
    let mut targets = step_targets(&acts, &frame, &config, &mut tracker).unwrap();
    // Fractional weights so the weighting path is exercised.
    for (i, w) in targets.weights.iter_mut().enumerate() {
        *w = 0.2 + 0.07 * i as f64;
    }
    Fixture { config, params, x_l, y_l, x_w, x_s, targets }
}

pub fn forward(p: &ModelParams, x_l: &Mat, x_w: &Mat, x_s: &Mat) -> StepActivations {
    StepActivations {
        labeled: p.forward(x_l).unwrap(),
        weak: p.forward(x_w).unwrap(),
        strong: p.forward(x_s).unwrap(),
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Term {
    Cls,
    Con,
    Sim,
    Aux,
    Total,
}

/// Loss of one term and its upstream gradients, computed from the term's own
/// function rather than from the composite.
pub fn term(fx: &Fixture, acts: &StepActivations, t: Term) -> (f64, StepUpstream) {
    let tg = &fx.targets;
    let mut up = StepUpstream::default();
    let loss = match t {
        Term::Cls => {
            let (l, g) = primary_loss(&acts.labeled.logits_cls, &fx.y_l).unwrap();
            up.labeled.cls = Some(g);
            l
        }
        Term::Con => {
            let (zh, norms) = gri::normalize_rows(&acts.weak.z);
            let g = tg.consensus.as_ref().unwrap();
            let (l, dzh) = gri::structural_contrastive_loss(&zh, g).unwrap();
            up.weak.z = Some(gri::normalize_rows_backward(&zh, &norms, &dzh));
            l
        }
        Term::Sim => {
            let (l, dw, ds) =
                gri::representation_consistency_loss(&acts.weak.z, &acts.strong.z, &tg.f_w, &tg.f_s).unwrap();
            up.weak.z = Some(dw);
            up.strong.z = Some(ds);
            l
        }
        Term::Aux => {
            let (l, du, dl) = auxiliary_loss(
                &acts.strong.logits_aux,
                &tg.pseudo,
                &tg.weights,
                &acts.labeled.logits_aux,
                &fx.y_l,
            )
            .unwrap();
            up.strong.aux = Some(du);
            up.labeled.aux = Some(dl);
            l
        }
        Term::Total => {
            let (b, up) =
                composite_loss(acts, &fx.y_l, tg, fx.config.components, fx.config.gri_options).unwrap();
            return (b.l_total, up);
        }
    };
    (loss, up)
}

pub fn analytic(fx: &Fixture, t: Term) -> Vec<f64> {
    let mut p = fx.params.clone();
    let acts = forward(&p, &fx.x_l, &fx.x_w, &fx.x_s);
    let (_, up) = term(fx, &acts, t);
    p.zero_grad();
    backward_all(&mut p, &acts, &up);
    p.flat_grads()
}

pub fn backward_all(p: &mut ModelParams, acts: &StepActivations, up: &StepUpstream) {
    let pairs: [(&BatchActivations, &Upstream); 3] =
        [(&acts.labeled, &up.labeled), (&acts.weak, &up.weak), (&acts.strong, &up.strong)];
    for (a, u) in pairs {
        p.backward(a, u).unwrap();
    }
}

pub fn loss_at(fx: &Fixture, flat: &[f64], t: Term) -> f64 {
    let mut p = fx.params.clone();
    p.set_flat(flat).unwrap();
    let acts = forward(&p, &fx.x_l, &fx.x_w, &fx.x_s);
    term(fx, &acts, t).0
}

pub fn numeric(fx: &Fixture, t: Term) -> Vec<f64> {
    let base = fx.params.flat_params();
    (0..base.len())
        .map(|k| {
            let mut plus = base.clone();
            plus[k] += H;
            let mut minus = base.clone();
            minus[k] -= H;
            (loss_at(fx, &plus, t) - loss_at(fx, &minus, t)) / (2.0 * H)
        })
        .collect()
}

pub fn assert_matches(a: &[f64], n: &[f64], what: &str) {
    for (k, (x, y)) in a.iter().zip(n).enumerate() {
        assert!((x - y).abs() <= REL_TOL * x.abs().max(1.0), "{what}: param {k}: analytic {x} vs numeric {y}");
    }
}

/// Largest violation of `|analytic - numeric| <= REL_TOL * max(1, |analytic|)`
/// across all terms and parameters for one seed, as a ratio to the bound.
pub fn worst_gradient_ratio(seed: u64) -> f64 {
    let fx = fixture(seed);
    let mut worst = 0.0f64;
    for t in [Term::Cls, Term::Con, Term::Sim, Term::Aux, Term::Total] {
        for (x, y) in analytic(&fx, t).iter().zip(numeric(&fx, t)) {
            worst = worst.max((x - y).abs() / (REL_TOL * x.abs().max(1.0)));
        }
    }
    worst
}

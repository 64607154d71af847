//! Graph-state relational inference.
//!
//! Each unlabeled projection `z_i` is expressed in the anchor frame by ridge
//! regression, giving a relational embedding `a_i`. Inner products of the
//! embeddings form an affinity graph; its row-softmax is a random-walk
//! transition matrix whose `beta`-th power is the structural consensus `G`.
//! `G` is then the (frozen) soft target for the pairwise similarities of the
//! projections.

use crate::anchors::AnchorFrame;
use crate::error::{Result, SageError};
use crate::numkit::{mat_power, sigmoid, softmax_rows, solve_spd, Mat};

/// Probability clamp applied before logarithms.
pub const PROB_EPS: f64 = 1e-7;
/// Norms below this make a cosine similarity 0 with zero gradient.
pub const COS_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct RelationalState {
    pub a: Mat,
    pub affinity: Mat,
    pub transition: Mat,
    pub consensus: Mat,
    pub similarity: Mat,
    pub lambda: f64,
    pub beta: usize,
}

impl RelationalState {
    /// Full relational pass over one batch of projections.
    pub fn infer(z: &Mat, frame: &AnchorFrame, lambda: f64, beta: usize) -> Result<Self> {
        let a = relational_embed(z, frame, lambda)?;
        let (affinity, transition, consensus) = build_consensus(&a, beta)?;
        let similarity = sigmoid(&z.matmul_t(z));
        Ok(RelationalState { a, affinity, transition, consensus, similarity, lambda, beta })
    }
}

/// Ridge coordinates of every row of `z` in the anchor frame:
/// `a_i = z_i Pᵀ (P Pᵀ + λ I)⁻¹`, one Cholesky solve for the whole batch.
pub fn relational_embed(z: &Mat, frame: &AnchorFrame, lambda: f64) -> Result<Mat> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(SageError::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
    }
    if z.cols() != frame.d {
        return Err(SageError::InvalidInput(format!(
            "projections have {} columns, anchors live in {} dimensions",
            z.cols(),
            frame.d
        )));
    }
    let p = &frame.p;
    let gram = p.matmul_t(p).add(&Mat::identity(frame.k).scale(lambda));
    // (PPᵀ + λI) X = P zᵀ, and the Gram matrix is symmetric so a = Xᵀ.
    let rhs = p.matmul_t(z);
    Ok(solve_spd(&gram, &rhs)?.transpose())
}

/// Affinity `A = a aᵀ`, transition `P̂ = softmax_rows(A)`, consensus `G = P̂^β`.
pub fn build_consensus(a: &Mat, beta: usize) -> Result<(Mat, Mat, Mat)> {
    if beta == 0 {
        return Err(SageError::InvalidArgument("beta must be >= 1".into()));
    }
    let affinity = a.matmul_t(a);
    let transition = softmax_rows(&affinity);
    let consensus = mat_power(&transition, beta)?;
    Ok((affinity, transition, consensus))
}

fn logit_bound() -> f64 {
    ((1.0 - PROB_EPS) / PROB_EPS).ln()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Soft-target BCE between `sigmoid(za zbᵀ)` and `target`, averaged over all
/// ordered pairs. Returns the loss and gradients w.r.t. `za` and `zb`.
pub fn pairwise_bce(za: &Mat, zb: &Mat, target: &Mat) -> Result<(f64, Mat, Mat)> {
    let (n, m) = (za.rows(), zb.rows());
    if za.cols() != zb.cols() || target.shape() != (n, m) {
        return Err(SageError::InvalidInput(format!(
            "pairwise BCE: {:?} x {:?} against target {:?}",
            za.shape(),
            zb.shape(),
            target.shape()
        )));
    }
    let logits = za.matmul_t(zb);
    let bound = logit_bound();
    let denom = (n * m) as f64;
    let mut loss = 0.0;
    let mut dlogit = Mat::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let raw = logits.get(i, j);
            let x = raw.clamp(-bound, bound);
            let g = target.get(i, j);
            // -[g ln σ(x) + (1-g) ln(1-σ(x))] = g softplus(-x) + (1-g) softplus(x)
            loss += g * softplus(-x) + (1.0 - g) * softplus(x);
            if raw.abs() < bound {
                dlogit.set(i, j, (crate::numkit::sigmoid_scalar(x) - g) / denom);
            }
        }
    }
    let dza = dlogit.matmul(zb);
    let dzb = dlogit.t_matmul(za);
    Ok((loss / denom, dza, dzb))
}

/// `L_con = BCE(sigmoid(z zᵀ), sg[G])` and its gradient w.r.t. `z`.
pub fn structural_contrastive_loss(z: &Mat, consensus: &Mat) -> Result<(f64, Mat)> {
    let (loss, da, db) = pairwise_bce(z, z, consensus)?;
    Ok((loss, da.add(&db)))
}

/// Cross-view variant: similarities between weak and strong projections.
pub fn cross_view_contrastive_loss(z_w: &Mat, z_s: &Mat, consensus: &Mat) -> Result<(f64, Mat, Mat)> {
    pairwise_bce(z_w, z_s, consensus)
}

/// Rows scaled to unit length, with the original norms. Rows shorter than
/// [`COS_NORM_EPS`] map to zero.
pub fn normalize_rows(z: &Mat) -> (Mat, Vec<f64>) {
    let mut out = z.clone();
    let mut norms = Vec::with_capacity(z.rows());
    for i in 0..z.rows() {
        let n = crate::numkit::norm(z.row(i));
        norms.push(n);
        let inv = if n < COS_NORM_EPS { 0.0 } else { 1.0 / n };
        out.row_mut(i).iter_mut().for_each(|v| *v *= inv);
    }
    (out, norms)
}

/// Pulls a gradient w.r.t. normalized rows back to the raw rows:
/// `dz = (dẑ − ẑ ⟨ẑ, dẑ⟩) / ‖z‖`.
pub fn normalize_rows_backward(z_hat: &Mat, norms: &[f64], d_hat: &Mat) -> Mat {
    let mut out = Mat::zeros(z_hat.rows(), z_hat.cols());
    for i in 0..z_hat.rows() {
        if norms[i] < COS_NORM_EPS {
            continue;
        }
        let (u, g) = (z_hat.row(i), d_hat.row(i));
        let proj = crate::numkit::dot(u, g);
        for (o, (ui, gi)) in out.row_mut(i).iter_mut().zip(u.iter().zip(g)) {
            *o = (gi - ui * proj) / norms[i];
        }
    }
    out
}

/// Cosine similarity and its gradient w.r.t. `x` (`y` held constant).
pub fn cosine_with_grad(x: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let nx = crate::numkit::norm(x);
    let ny = crate::numkit::norm(y);
    if nx < COS_NORM_EPS || ny < COS_NORM_EPS {
        return (0.0, vec![0.0; x.len()]);
    }
    let c = crate::numkit::dot(x, y) / (nx * ny);
    let grad = x.iter().zip(y).map(|(xi, yi)| yi / (nx * ny) - c * xi / (nx * nx)).collect();
    (c, grad)
}

/// `L_sim = -mean_i [cos(z_w_i, sg[f_s_i]) + cos(z_s_i, sg[f_w_i])]`.
/// Returns the loss and gradients w.r.t. `z_w` and `z_s`; the feature views
/// are constants.
pub fn representation_consistency_loss(
    z_w: &Mat,
    z_s: &Mat,
    f_w: &Mat,
    f_s: &Mat,
) -> Result<(f64, Mat, Mat)> {
    let shape = z_w.shape();
    if z_s.shape() != shape || f_w.shape() != shape || f_s.shape() != shape {
        return Err(SageError::InvalidInput("representation consistency: shape mismatch".into()));
    }
    let n = shape.0;
    if n == 0 {
        return Ok((0.0, z_w.clone(), z_s.clone()));
    }
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    let mut dz_w = Mat::zeros(shape.0, shape.1);
    let mut dz_s = Mat::zeros(shape.0, shape.1);
    for i in 0..n {
        let (cw, gw) = cosine_with_grad(z_w.row(i), f_s.row(i));
        let (cs, gs) = cosine_with_grad(z_s.row(i), f_w.row(i));
        total += cw + cs;
        for (d, g) in dz_w.row_mut(i).iter_mut().zip(gw) {
            *d = -scale * g;
        }
        for (d, g) in dz_s.row_mut(i).iter_mut().zip(gs) {
            *d = -scale * g;
        }
    }
    Ok((-total * scale, dz_w, dz_s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::generate_etf;
    use crate::numkit::seeded_rng;

    /// Gradient descent on ‖z - aP‖² + λ‖a‖² from a = 0.
    fn ridge_gd(z: &[f64], p: &Mat, lambda: f64) -> Vec<f64> {
        let k = p.rows();
        let gram = p.matmul_t(p);
        let zp: Vec<f64> = (0..k).map(|r| crate::numkit::dot(z, p.row(r))).collect();
        let lmax = gram.data().iter().map(|v| v.abs()).sum::<f64>() + lambda;
        let step = 1.0 / lmax;
        let mut a = vec![0.0; k];
        for _ in 0..200_000 {
            let mut grad = vec![0.0; k];
            let mut gnorm = 0.0;
            for r in 0..k {
                let ga: f64 = (0..k).map(|c| gram.get(r, c) * a[c]).sum();
                grad[r] = ga + lambda * a[r] - zp[r];
                gnorm += grad[r] * grad[r];
            }
            for r in 0..k {
                a[r] -= step * grad[r];
            }
            if gnorm.sqrt() < 1e-15 {
                break;
            }
        }
        a
    }

    #[test]
    fn embed_shape_full_scale() {
        let f = generate_etf(129, 128, 0).unwrap();
        let z = Mat::gaussian(448, 128, &mut seeded_rng(1));
        assert_eq!(relational_embed(&z, &f, 0.1).unwrap().shape(), (448, 129));
    }

    #[test]
    fn embed_with_orthonormal_anchors() {
        let q = crate::numkit::qr_orthonormal(3, 4).unwrap();
        let frame = AnchorFrame { k: 4, d: 4, p: q.clone(), seed: 3 };
        let z = Mat::gaussian(5, 4, &mut seeded_rng(2));
        let a = relational_embed(&z, &frame, 0.1).unwrap();
        assert!(a.max_abs_diff(&z.matmul_t(&q).scale(1.0 / 1.1)) < 1e-12);
    }

    #[test]
    fn embed_matches_gradient_descent() {
        let mut rng = seeded_rng(6);
        let p = Mat::gaussian(5, 4, &mut rng);
        let frame = AnchorFrame { k: 5, d: 4, p: p.clone(), seed: 0 };
        let z = Mat::gaussian(6, 4, &mut rng);
        let a = relational_embed(&z, &frame, 0.1).unwrap();
        for i in 0..6 {
            let oracle = ridge_gd(z.row(i), &p, 0.1);
            let scale = crate::numkit::norm(&oracle).max(1e-12);
            for (x, y) in a.row(i).iter().zip(&oracle) {
                assert!((x - y).abs() <= 1e-5 * scale, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn embed_errors() {
        let f = generate_etf(3, 2, 0).unwrap();
        let z = Mat::zeros(2, 2);
        assert!(matches!(relational_embed(&z, &f, 0.0), Err(SageError::InvalidArgument(_))));
        assert!(matches!(relational_embed(&z, &f, -1.0), Err(SageError::InvalidArgument(_))));
        assert!(matches!(relational_embed(&Mat::zeros(2, 3), &f, 0.1), Err(SageError::InvalidInput(_))));
    }

    #[test]
    fn identical_rows_give_uniform_consensus() {
        let a = Mat::from_rows(&vec![vec![0.3, -1.0, 2.0]; 4]).unwrap();
        let (aff, tr, g) = build_consensus(&a, 5).unwrap();
        assert!(aff.data().iter().all(|v| (v - aff.get(0, 0)).abs() < 1e-15));
        assert!(tr.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        assert!(g.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn beta_one_is_transition() {
        let a = Mat::gaussian(5, 4, &mut seeded_rng(0));
        let (_, tr, g) = build_consensus(&a, 1).unwrap();
        assert_eq!(tr, g);
        let (_, tr, g5) = build_consensus(&a, 5).unwrap();
        let naive = tr.matmul(&tr).matmul(&tr).matmul(&tr).matmul(&tr);
        assert!(g5.max_abs_diff(&naive) < 1e-12);
        assert!(build_consensus(&a, 0).is_err());
    }

    #[test]
    fn contrastive_loss_spot_values() {
        // z = 0 gives S = 0.5 everywhere.
        let z = Mat::zeros(4, 3);
        let g = Mat::filled(4, 4, 0.5);
        let (loss, dz) = structural_contrastive_loss(&z, &g).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(dz.max_abs(), 0.0);

        // Target equal to the current similarities: stationary.
        let z = Mat::gaussian(5, 2, &mut seeded_rng(3)).scale(0.5);
        let s = sigmoid(&z.matmul_t(&z));
        let (_, dz) = structural_contrastive_loss(&z, &s).unwrap();
        assert!(dz.max_abs() < 1e-15);
    }

    fn central_diff(f: impl Fn(&Mat) -> f64, x: &Mat) -> Mat {
        let h = 1e-5;
        let mut out = Mat::zeros(x.rows(), x.cols());
        for k in 0..x.data().len() {
            let mut p = x.clone();
            p.data_mut()[k] += h;
            let mut m = x.clone();
            m.data_mut()[k] -= h;
            out.data_mut()[k] = (f(&p) - f(&m)) / (2.0 * h);
        }
        out
    }

    fn assert_close(analytic: &Mat, numeric: &Mat) {
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            assert!((a - n).abs() <= 1e-4 * a.abs().max(1.0), "{a} vs {n}");
        }
    }

    #[test]
    fn normalized_contrastive_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(13);
        let z = Mat::gaussian(6, 4, &mut rng);
        let f = generate_etf(5, 4, 1).unwrap();
        let g = RelationalState::infer(&normalize_rows(&z).0, &f, 0.1, 5).unwrap().consensus;
        let loss = |z: &Mat| structural_contrastive_loss(&normalize_rows(z).0, &g).unwrap().0;
        let (zh, norms) = normalize_rows(&z);
        let (_, dzh) = structural_contrastive_loss(&zh, &g).unwrap();
        assert_close(&normalize_rows_backward(&zh, &norms, &dzh), &central_diff(loss, &z));
    }

    #[test]
    fn normalize_rows_zero_row_stays_zero() {
        let z = Mat::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        let (zh, norms) = normalize_rows(&z);
        assert!((zh.row(0)[0] - 0.6).abs() < 1e-15 && (zh.row(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(zh.row(1), &[0.0, 0.0]);
        assert_eq!(norms, vec![5.0, 0.0]);
        let back = normalize_rows_backward(&zh, &norms, &Mat::filled(2, 2, 1.0));
        assert_eq!(back.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(12);
        let z = Mat::gaussian(6, 4, &mut rng);
        let f = generate_etf(5, 4, 1).unwrap();
        let g = RelationalState::infer(&z, &f, 0.1, 5).unwrap().consensus;
        let (_, dz) = structural_contrastive_loss(&z, &g).unwrap();
        let numeric = central_diff(|z| structural_contrastive_loss(z, &g).unwrap().0, &z);
        assert_close(&dz, &numeric);
    }

    #[test]
    fn cross_view_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(13);
        let zw = Mat::gaussian(5, 3, &mut rng);
        let zs = Mat::gaussian(5, 3, &mut rng);
        let g = softmax_rows(&Mat::gaussian(5, 5, &mut rng));
        let (_, dw, ds) = cross_view_contrastive_loss(&zw, &zs, &g).unwrap();
        assert_close(&dw, &central_diff(|z| cross_view_contrastive_loss(z, &zs, &g).unwrap().0, &zw));
        assert_close(&ds, &central_diff(|z| cross_view_contrastive_loss(&zw, z, &g).unwrap().0, &zs));
    }

    #[test]
    fn consistency_spot_values() {
        let mut rng = seeded_rng(4);
        let fw = Mat::gaussian(3, 4, &mut rng);
        let fs = Mat::gaussian(3, 4, &mut rng);
        let (loss, _, _) = representation_consistency_loss(&fs, &fw, &fw, &fs).unwrap();
        assert!((loss + 2.0).abs() < 1e-12);

        let e = |k: usize| -> Vec<f64> { (0..2).map(|j| if j == k { 1.0 } else { 0.0 }).collect() };
        let x = Mat::from_rows(&[e(0), e(0)]).unwrap();
        let y = Mat::from_rows(&[e(1), e(1)]).unwrap();
        let (loss, _, _) = representation_consistency_loss(&x, &x, &y, &y).unwrap();
        assert!(loss.abs() < 1e-15);

        let zero = Mat::zeros(2, 2);
        let (loss, dw, _) = representation_consistency_loss(&zero, &x, &y, &y).unwrap();
        assert!(loss.abs() < 1e-15 && dw.max_abs() == 0.0);
    }

    #[test]
    fn consistency_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(21);
        let zw = Mat::gaussian(6, 4, &mut rng);
        let zs = Mat::gaussian(6, 4, &mut rng);
        let fw = Mat::gaussian(6, 4, &mut rng);
        let fs = Mat::gaussian(6, 4, &mut rng);
        let (_, dw, ds) = representation_consistency_loss(&zw, &zs, &fw, &fs).unwrap();
        assert_close(&dw, &central_diff(|z| representation_consistency_loss(z, &zs, &fw, &fs).unwrap().0, &zw));
        assert_close(&ds, &central_diff(|z| representation_consistency_loss(&zw, z, &fw, &fs).unwrap().0, &zs));
        // The feature side is stop-gradient: perturbing it must not change
        // the analytic z-gradients' definition (they are w.r.t. z only), and
        // the outputs carry no gradient slot for f at all.
        let fw2 = fw.add(&Mat::filled(6, 4, 1e-3));
        let (_, dw2, _) = representation_consistency_loss(&zw, &zs, &fw2, &fs).unwrap();
        assert_eq!(dw, dw2);
    }
}

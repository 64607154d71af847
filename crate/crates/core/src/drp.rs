//! Reliability weights for pseudo-labels.
//!
//! Two per-sample metrics come from the weak-view prediction: the max
//! confidence and the top-two margin. Running EMA means and variances of
//! both are kept, and each metric contributes a one-sided Gaussian kernel
//! that is exactly 1 at or above its mean. The sample weight is the product.

use serde::Serialize;

use crate::error::{Result, SageError};
use crate::numkit::Mat;

pub const DEFAULT_DECAY: f64 = 0.999;
pub const DEFAULT_EPS_SIGMA: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReliabilityTracker {
    pub mu_max: f64,
    pub var_max: f64,
    pub mu_gap: f64,
    pub var_gap: f64,
    pub decay: f64,
    pub initialized: bool,
    pub eps_sigma: f64,
}

impl Default for ReliabilityTracker {
    fn default() -> Self {
        Self::new(DEFAULT_DECAY)
    }
}

impl ReliabilityTracker {
    pub fn new(decay: f64) -> Self {
        ReliabilityTracker {
            mu_max: 0.0,
            var_max: 0.0,
            mu_gap: 0.0,
            var_gap: 0.0,
            decay,
            initialized: false,
            eps_sigma: DEFAULT_EPS_SIGMA,
        }
    }

    pub fn sigma_max(&self) -> f64 {
        self.var_max.sqrt().max(self.eps_sigma)
    }

    pub fn sigma_gap(&self) -> f64 {
        self.var_gap.sqrt().max(self.eps_sigma)
    }

    /// Folds one batch into the EMA statistics. The first batch sets them.
    pub fn update_stats(&mut self, q_max: &[f64], q_gap: &[f64]) -> Result<()> {
        if q_max.is_empty() || q_max.len() != q_gap.len() {
            return Err(SageError::InvalidArgument(format!(
                "reliability update needs matching nonempty batches, got {} and {}",
                q_max.len(),
                q_gap.len()
            )));
        }
        let (m_max, v_max) = mean_var(q_max);
        let (m_gap, v_gap) = mean_var(q_gap);
        if !self.initialized {
            self.mu_max = m_max;
            self.var_max = v_max;
            self.mu_gap = m_gap;
            self.var_gap = v_gap;
            self.initialized = true;
            return Ok(());
        }
        let (a, b) = (self.decay, 1.0 - self.decay);
        self.mu_max = a * self.mu_max + b * m_max;
        self.var_max = a * self.var_max + b * v_max;
        self.mu_gap = a * self.mu_gap + b * m_gap;
        self.var_gap = a * self.var_gap + b * v_gap;
        Ok(())
    }

    /// Per-sample weights in `(0, 1]`.
    pub fn weight(&self, q_max: &[f64], q_gap: &[f64]) -> Result<Vec<f64>> {
        if !self.initialized {
            return Err(SageError::State("reliability tracker has seen no batch yet".into()));
        }
        if q_max.len() != q_gap.len() {
            return Err(SageError::InvalidInput("q_max and q_gap lengths differ".into()));
        }
        let (s_max, s_gap) = (self.sigma_max(), self.sigma_gap());
        Ok(q_max
            .iter()
            .zip(q_gap)
            .map(|(&qm, &qg)| kernel(qm, self.mu_max, s_max) * kernel(qg, self.mu_gap, s_gap))
            // exp underflow would break the (0, 1] contract
            .map(|w| w.max(f64::MIN_POSITIVE))
            .collect())
    }
}

/// One-sided Gaussian kernel `exp(-min(0, q-μ)² / 2σ²)`.
pub fn kernel(q: f64, mu: f64, sigma: f64) -> f64 {
    let deficit = (q - mu).min(0.0);
    (-(deficit * deficit) / (2.0 * sigma * sigma)).exp()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Row maxima and top-two margins of a probability matrix.
pub fn metrics_from_probs(q: &Mat) -> Result<(Vec<f64>, Vec<f64>)> {
    if q.cols() < 2 {
        return Err(SageError::InvalidArgument("need at least 2 classes".into()));
    }
    let mut q_max = Vec::with_capacity(q.rows());
    let mut q_gap = Vec::with_capacity(q.rows());
    for i in 0..q.rows() {
        let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &v in q.row(i) {
            if v > first {
                second = first;
                first = v;
            } else if v > second {
                second = v;
            }
        }
        q_max.push(first);
        q_gap.push(first - second);
    }
    Ok((q_max, q_gap))
}

//! Interpretable stochastic linear-Gaussian actor over (volume, offset) and
//! a linear value critic.
//!
//! Parameter snapshots are immutable values; updates produce new snapshots.
//! Densities are evaluated over pre-clip actions; clipping to the action
//! boxes happens at the environment boundary so likelihood ratios stay
//! well-defined.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::features::FeatureVector;

/// Number of action dimensions: volume and limit-price offset.
pub const ACTION_DIMS: usize = 2;
/// Row index of the volume action.
pub const DIM_VOLUME: usize = 0;
/// Row index of the aggressiveness (offset) action.
pub const DIM_DELTA: usize = 1;

const LOG_2PI: f64 = 1.8378770664093453;

/// Inclusive action boxes applied after sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionBox {
    pub q_lo: f64,
    pub q_hi: f64,
    pub delta_lo: f64,
    pub delta_hi: f64,
}

impl Default for ActionBox {
    fn default() -> Self {
        Self {
            q_lo: -5.0,
            q_hi: 5.0,
            delta_lo: -2.0,
            delta_hi: 5.0,
        }
    }
}

impl ActionBox {
    pub fn clip(&self, action: [f64; 2]) -> [f64; 2] {
        [
            action[DIM_VOLUME].clamp(self.q_lo, self.q_hi),
            action[DIM_DELTA].clamp(self.delta_lo, self.delta_hi),
        ]
    }
}

/// Linear actor weights (one row per action dimension), log standard
/// deviations, and linear critic weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// `w[k]` maps features to the mean of action dimension `k`.
    pub w: [Vec<f64>; ACTION_DIMS],
    /// Log stddev per action dimension.
    pub log_sigma: [f64; ACTION_DIMS],
    /// Critic weights.
    pub v: Vec<f64>,
}

impl PolicyParams {
    /// Zero-mean policy with the given initial stddevs.
    pub fn zeros(dim: usize, sigma_init: [f64; ACTION_DIMS]) -> Self {
        Self {
            w: [vec![0.0; dim], vec![0.0; dim]],
            log_sigma: [sigma_init[0].ln(), sigma_init[1].ln()],
            v: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn sigma(&self) -> [f64; ACTION_DIMS] {
        [self.log_sigma[0].exp(), self.log_sigma[1].exp()]
    }

    fn check_dim(&self, x: &FeatureVector) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(CoreError::Shape {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().flatten().all(|v| v.is_finite())
            && self.log_sigma.iter().all(|v| v.is_finite())
            && self.v.iter().all(|v| v.is_finite())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pre-clip mean action `W·x`.
pub fn mean_action_raw(params: &PolicyParams, x: &FeatureVector) -> Result<[f64; 2]> {
    params.check_dim(x)?;
    Ok([
        dot(&params.w[DIM_VOLUME], &x.values),
        dot(&params.w[DIM_DELTA], &x.values),
    ])
}

/// Deterministic deployment action: `W·x` clipped to the boxes.
pub fn mean_action(
    params: &PolicyParams,
    x: &FeatureVector,
    boxes: &ActionBox,
) -> Result<[f64; 2]> {
    Ok(boxes.clip(mean_action_raw(params, x)?))
}

/// Sample a pre-clip action: `mean + sigma ⊙ z` for standard-normal draws.
pub fn sample_action(
    params: &PolicyParams,
    x: &FeatureVector,
    draws: [f64; 2],
) -> Result<[f64; 2]> {
    let mean = mean_action_raw(params, x)?;
    let sigma = params.sigma();
    Ok([mean[0] + sigma[0] * draws[0], mean[1] + sigma[1] * draws[1]])
}

/// Diagonal-Gaussian log-density of a pre-clip action.
///
/// `dims` restricts the product to the first 1 or 2 action dimensions (the
/// scalar net-action trainer uses only the volume dimension).
pub fn log_prob(params: &PolicyParams, x: &FeatureVector, action: &[f64], dims: usize) -> Result<f64> {
    params.check_dim(x)?;
    if action.len() < dims || dims == 0 || dims > ACTION_DIMS {
        return Err(CoreError::Shape {
            expected: dims,
            got: action.len(),
        });
    }
    let mean = mean_action_raw(params, x)?;
    let sigma = params.sigma();
    let mut lp = 0.0;
    for k in 0..dims {
        let z = (action[k] - mean[k]) / sigma[k];
        lp += -0.5 * z * z - params.log_sigma[k] - 0.5 * LOG_2PI;
    }
    Ok(lp)
}

/// Gradient of [`log_prob`] with respect to (W rows, log_sigma).
pub struct LogProbGrad {
    pub w: [Vec<f64>; ACTION_DIMS],
    pub log_sigma: [f64; ACTION_DIMS],
}

pub fn log_prob_grad(
    params: &PolicyParams,
    x: &FeatureVector,
    action: &[f64],
    dims: usize,
) -> Result<LogProbGrad> {
    params.check_dim(x)?;
    let mean = mean_action_raw(params, x)?;
    let sigma = params.sigma();
    let d = params.dim();
    let mut grad = LogProbGrad {
        w: [vec![0.0; d], vec![0.0; d]],
        log_sigma: [0.0; ACTION_DIMS],
    };
    for k in 0..dims {
        let z = (action[k] - mean[k]) / sigma[k];
        let coeff = z / sigma[k];
        for (g, xv) in grad.w[k].iter_mut().zip(&x.values) {
            *g = coeff * xv;
        }
        grad.log_sigma[k] = z * z - 1.0;
    }
    Ok(grad)
}

/// Differential entropy of the (restricted) diagonal Gaussian.
pub fn entropy(params: &PolicyParams, dims: usize) -> f64 {
    (0..dims)
        .map(|k| params.log_sigma[k] + 0.5 * (LOG_2PI + 1.0))
        .sum()
}

/// Linear critic value `v·x`.
pub fn value(params: &PolicyParams, x: &FeatureVector) -> Result<f64> {
    params.check_dim(x)?;
    Ok(dot(&params.v, &x.values))
}

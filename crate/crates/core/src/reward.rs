//! Linear and two-layer reward models with exact parameter gradients.
//!
//! The linear model is `r = theta . phi` on the seven step features. The
//! nonlinear model is `r = W2 ReLU(W1 phi+)` on the ten-dimensional augmented
//! features, no bias terms. Trajectory returns are discounted sums normalized
//! by trajectory length, so with gamma = 1 the linear return is bounded by
//! the L1 norm of the weights.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Scenario, Trajectory};
use crate::features::{
    augment, step_features, AugmentedFeatureVector, FeatureVector, AUGMENTED_DIM, FEATURE_DIM,
};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("feature: {0}")]
    Feature(#[from] crate::features::FeatureError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
}

/// Weights of the linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub theta: [f64; FEATURE_DIM],
}

/// Weights of the two-layer model: W1 (hidden x 10, row-major) and W2 (hidden).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden_dim: usize,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

pub const DEFAULT_HIDDEN_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RewardModel {
    Linear(LinearParams),
    Mlp(MlpParams),
}

/// `r = theta . phi`
pub fn reward_linear(params: &LinearParams, phi: &FeatureVector) -> f64 {
    params.theta.iter().zip(phi.to_array()).map(|(t, f)| t * f).sum()
}

/// `r = W2 ReLU(W1 x)`; ReLU subgradient at exactly 0 is 0.
pub fn reward_mlp(params: &MlpParams, phi: &AugmentedFeatureVector) -> f64 {
    let x = phi.to_array();
    let mut r = 0.0;
    for j in 0..params.hidden_dim {
        let pre: f64 =
            (0..AUGMENTED_DIM).map(|i| params.w1[j * AUGMENTED_DIM + i] * x[i]).sum();
        if pre > 0.0 {
            r += params.w2[j] * pre;
        }
    }
    r
}

impl RewardModel {
    /// Linear init per the training algorithm: theta ~ U[-1, 1].
    pub fn init_linear(rng: &mut ChaCha8Rng) -> RewardModel {
        let mut theta = [0.0; FEATURE_DIM];
        for t in &mut theta {
            *t = rng.gen_range(-1.0..=1.0);
        }
        RewardModel::Linear(LinearParams { theta })
    }

    /// Scaled-uniform init, U[-b, b] with b = 1/sqrt(fan_in).
    pub fn init_mlp(hidden_dim: usize, rng: &mut ChaCha8Rng) -> RewardModel {
        assert!(hidden_dim >= 1);
        let b1 = 1.0 / (AUGMENTED_DIM as f64).sqrt();
        let b2 = 1.0 / (hidden_dim as f64).sqrt();
        let w1 = (0..hidden_dim * AUGMENTED_DIM).map(|_| rng.gen_range(-b1..=b1)).collect();
        let w2 = (0..hidden_dim).map(|_| rng.gen_range(-b2..=b2)).collect();
        RewardModel::Mlp(MlpParams { hidden_dim, w1, w2 })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            RewardModel::Linear(_) => ModelKind::Linear,
            RewardModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            RewardModel::Linear(_) => FEATURE_DIM,
            RewardModel::Mlp(p) => p.hidden_dim * AUGMENTED_DIM + p.hidden_dim,
        }
    }

    /// Per-step reward; `prev` carries the previous step's continuous features
    /// for the nonlinear model and is ignored by the linear one.
    pub fn reward_step(&self, phi: &FeatureVector, prev: [f64; 3]) -> f64 {
        match self {
            RewardModel::Linear(p) => reward_linear(p, phi),
            RewardModel::Mlp(p) => {
                reward_mlp(p, &AugmentedFeatureVector { base: *phi, prev })
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        match self {
            RewardModel::Linear(p) => p.theta.to_vec(),
            RewardModel::Mlp(p) => {
                let mut v = p.w1.clone();
                v.extend_from_slice(&p.w2);
                v
            }
        }
    }

    /// Rebuilds a model of the same shape from a flat parameter vector.
    pub fn with_flat(&self, flat: &[f64]) -> RewardModel {
        assert_eq!(flat.len(), self.param_count());
        match self {
            RewardModel::Linear(_) => {
                let mut theta = [0.0; FEATURE_DIM];
                theta.copy_from_slice(flat);
                RewardModel::Linear(LinearParams { theta })
            }
            RewardModel::Mlp(p) => {
                let split = p.hidden_dim * AUGMENTED_DIM;
                RewardModel::Mlp(MlpParams {
                    hidden_dim: p.hidden_dim,
                    w1: flat[..split].to_vec(),
                    w2: flat[split..].to_vec(),
                })
            }
        }
    }

    /// `self + alpha * grad`, as a new snapshot.
    pub fn ascended(&self, grad: &[f64], alpha: f64) -> RewardModel {
        let flat: Vec<f64> =
            self.flatten().iter().zip(grad).map(|(p, g)| p + alpha * g).collect();
        self.with_flat(&flat)
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Discounted, length-normalized return over a per-step feature sequence.
pub fn return_from_features(model: &RewardModel, steps: &[FeatureVector], gamma: f64) -> f64 {
    assert!(!steps.is_empty());
    let aug = augment(steps);
    let mut g = 0.0;
    let mut disc = 1.0;
    for a in &aug {
        g += disc * model.reward_step(&a.base, a.prev);
        disc *= gamma;
    }
    g / steps.len() as f64
}

/// Gradient of [`return_from_features`] with respect to the flat parameters.
pub fn grad_from_features(model: &RewardModel, steps: &[FeatureVector], gamma: f64) -> Vec<f64> {
    assert!(!steps.is_empty());
    let aug = augment(steps);
    let norm = steps.len() as f64;
    let mut grad = vec![0.0; model.param_count()];
    let mut disc = 1.0;
    for a in &aug {
        match model {
            RewardModel::Linear(_) => {
                for (g, f) in grad.iter_mut().zip(a.base.to_array()) {
                    *g += disc * f / norm;
                }
            }
            RewardModel::Mlp(p) => {
                let x = a.to_array();
                let w2_off = p.hidden_dim * AUGMENTED_DIM;
                for j in 0..p.hidden_dim {
                    let pre: f64 =
                        (0..AUGMENTED_DIM).map(|i| p.w1[j * AUGMENTED_DIM + i] * x[i]).sum();
                    if pre > 0.0 {
                        let scale = disc / norm;
                        for i in 0..AUGMENTED_DIM {
                            grad[j * AUGMENTED_DIM + i] += scale * p.w2[j] * x[i];
                        }
                        grad[w2_off + j] += scale * pre;
                    }
                }
            }
        }
        disc *= gamma;
    }
    grad
}

/// Return of a trajectory under the scenario's feature definitions.
pub fn trajectory_return(
    model: &RewardModel,
    traj: &Trajectory,
    scenario: &Scenario,
    gamma: f64,
) -> Result<f64, RewardError> {
    let spec = &scenario.agents[traj.agent_id as usize];
    let steps = step_features(traj, spec, &scenario.road, scenario.dt)?;
    Ok(return_from_features(model, &steps, gamma))
}

/// Parameter gradient of [`trajectory_return`].
pub fn trajectory_grad(
    model: &RewardModel,
    traj: &Trajectory,
    scenario: &Scenario,
    gamma: f64,
) -> Result<Vec<f64>, RewardError> {
    let spec = &scenario.agents[traj.agent_id as usize];
    let steps = step_features(traj, spec, &scenario.road, scenario.dt)?;
    Ok(grad_from_features(model, &steps, gamma))
}

/// Serialized model snapshot plus the training-step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub hidden_dim: usize,
    /// Flat row-major parameters (theta, or W1 then W2).
    pub params: Vec<f64>,
    pub step: u32,
}

impl Checkpoint {
    pub fn new(model: &RewardModel, step: u32) -> Checkpoint {
        Checkpoint {
            kind: model.kind(),
            hidden_dim: match model {
                RewardModel::Linear(_) => 0,
                RewardModel::Mlp(p) => p.hidden_dim,
            },
            params: model.flatten(),
            step,
        }
    }

    pub fn model(&self) -> Result<RewardModel, RewardError> {
        let model = match self.kind {
            ModelKind::Linear => {
                if self.params.len() != FEATURE_DIM {
                    return Err(RewardError::InvalidCheckpoint(format!(
                        "linear checkpoint with {} params",
                        self.params.len()
                    )));
                }
                let mut theta = [0.0; FEATURE_DIM];
                theta.copy_from_slice(&self.params);
                RewardModel::Linear(LinearParams { theta })
            }
            ModelKind::Mlp => {
                let expected = self.hidden_dim * AUGMENTED_DIM + self.hidden_dim;
                if self.hidden_dim == 0 || self.params.len() != expected {
                    return Err(RewardError::InvalidCheckpoint(format!(
                        "mlp checkpoint dims {}x{} vs {} params",
                        self.hidden_dim,
                        AUGMENTED_DIM,
                        self.params.len()
                    )));
                }
                let split = self.hidden_dim * AUGMENTED_DIM;
                RewardModel::Mlp(MlpParams {
                    hidden_dim: self.hidden_dim,
                    w1: self.params[..split].to_vec(),
                    w2: self.params[split..].to_vec(),
                })
            }
        };
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), RewardError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint, RewardError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

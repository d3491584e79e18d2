//! Sampling-based maximum-entropy IRL trainer.
//!
//! The partition function is approximated by importance sampling over
//! planner-generated trajectories, all in log-space. The likelihood gradient
//! is the mean expert return gradient minus the self-normalized
//! importance-weighted sample mean; weights sum to one by construction.
//! Training is plain gradient ascent with fresh samples every outer step.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Scenario, Trajectory};
use crate::mcts::MctsConfig;
use crate::reward::{
    trajectory_grad, trajectory_return, ModelKind, RewardModel, DEFAULT_HIDDEN_DIM,
};
use crate::seeding;
use crate::sim::{generate_samples, SampledBatchEntry};

#[derive(Debug, Error)]
pub enum IrlError {
    #[error("reward: {0}")]
    Reward(#[from] crate::reward::RewardError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite {what} at step {step} (diverged parameters)")]
    Diverged { what: &'static str, step: u32 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// log(sum(exp(x))) with max-subtraction.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Importance-sampled log partition estimate over (return, log sampling
/// probability) pairs: `logsumexp(R - log pi_s) - log n`.
pub fn log_partition(entries: &[(f64, f64)]) -> f64 {
    assert!(!entries.is_empty());
    let terms: Vec<f64> = entries.iter().map(|(r, lp)| r - lp).collect();
    logsumexp(&terms) - (entries.len() as f64).ln()
}

/// Self-normalized importance weights `w_i = softmax(R_i - log pi_s(i))`.
pub fn normalized_weights(entries: &[(f64, f64)]) -> Vec<f64> {
    let terms: Vec<f64> = entries.iter().map(|(r, lp)| r - lp).collect();
    let lse = logsumexp(&terms);
    terms.iter().map(|t| (t - lse).exp()).collect()
}

/// Effective sample size `(sum w)^2 / sum w^2` of normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

/// Generic importance-sampling mean: `(1/n) sum x_i exp(p_log(x_i) - q_log(x_i))`
/// for samples drawn from q.
pub fn importance_mean(values: &[f64], p_log: &[f64], q_log: &[f64]) -> f64 {
    assert_eq!(values.len(), p_log.len());
    assert_eq!(values.len(), q_log.len());
    assert!(!values.is_empty());
    let n = values.len() as f64;
    values
        .iter()
        .zip(p_log.iter().zip(q_log))
        .map(|(x, (p, q))| x * (p - q).exp())
        .sum::<f64>()
        / n
}

/// Likelihood gradient estimate plus its diagnostics.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub log_z: f64,
    /// Proportional log-likelihood: mean expert return minus log Z.
    pub log_likelihood: f64,
    pub ess: f64,
}

/// Core estimator on precomputed parts: expert return gradients, and sample
/// (return, log pi_s, return gradient) triples.
pub fn gradient_from_parts(
    expert_grads: &[Vec<f64>],
    expert_returns: &[f64],
    samples: &[(f64, f64, Vec<f64>)],
) -> GradientEstimate {
    assert!(!expert_grads.is_empty() && !samples.is_empty());
    let dim = expert_grads[0].len();
    let mut grad = vec![0.0; dim];
    let ne = expert_grads.len() as f64;
    for g in expert_grads {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v / ne;
        }
    }
    let pairs: Vec<(f64, f64)> = samples.iter().map(|(r, lp, _)| (*r, *lp)).collect();
    let log_z = log_partition(&pairs);
    let weights = normalized_weights(&pairs);
    for (w, (_, _, g)) in weights.iter().zip(samples) {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc -= w * v;
        }
    }
    let mean_expert_ret = expert_returns.iter().sum::<f64>() / expert_returns.len() as f64;
    GradientEstimate {
        grad,
        log_z,
        log_likelihood: mean_expert_ret - log_z,
        ess: effective_sample_size(&weights),
    }
}

/// Log partition estimate for a sampled trajectory batch under a model.
pub fn partition_estimate(
    model: &RewardModel,
    batch: &[SampledBatchEntry],
    scenario: &Scenario,
    gamma: f64,
) -> Result<f64, IrlError> {
    if batch.is_empty() {
        return Err(IrlError::EmptyBatch);
    }
    let pairs = batch
        .iter()
        .map(|e| Ok((trajectory_return(model, &e.trajectory, scenario, gamma)?, e.log_prob)))
        .collect::<Result<Vec<_>, IrlError>>()?;
    Ok(log_partition(&pairs))
}

/// Full likelihood-gradient estimate from expert and sampled batches.
pub fn gradient_estimate(
    model: &RewardModel,
    experts: &[Trajectory],
    samples: &[SampledBatchEntry],
    scenario: &Scenario,
    gamma: f64,
    step: u32,
) -> Result<GradientEstimate, IrlError> {
    if experts.is_empty() || samples.is_empty() {
        return Err(IrlError::EmptyBatch);
    }
    let expert_grads = experts
        .iter()
        .map(|t| trajectory_grad(model, t, scenario, gamma))
        .collect::<Result<Vec<_>, _>>()?;
    let expert_returns = experts
        .iter()
        .map(|t| trajectory_return(model, t, scenario, gamma))
        .collect::<Result<Vec<_>, _>>()?;
    let sample_parts = samples
        .iter()
        .map(|e| {
            let r = trajectory_return(model, &e.trajectory, scenario, gamma)?;
            let g = trajectory_grad(model, &e.trajectory, scenario, gamma)?;
            if !r.is_finite() || !e.log_prob.is_finite() {
                return Err(IrlError::Diverged { what: "sample return", step });
            }
            Ok((r, e.log_prob, g))
        })
        .collect::<Result<Vec<_>, IrlError>>()?;
    let est = gradient_from_parts(&expert_grads, &expert_returns, &sample_parts);
    if !est.grad.iter().all(|g| g.is_finite()) {
        return Err(IrlError::Diverged { what: "gradient", step });
    }
    Ok(est)
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    /// Outer gradient steps (M).
    pub outer_steps: u32,
    /// generateSamples calls per outer step (N); each yields one trajectory
    /// per agent.
    pub samples_per_step: u32,
    pub gamma: f64,
    pub seed: u64,
    pub model: ModelKind,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
}

fn default_hidden() -> usize {
    DEFAULT_HIDDEN_DIM
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 0.0005,
            outer_steps: 2000,
            samples_per_step: 6,
            gamma: 1.0,
            seed: 0,
            model: ModelKind::Linear,
            hidden_dim: DEFAULT_HIDDEN_DIM,
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingLogRecord {
    pub step: u32,
    pub log_likelihood: f64,
    pub log_z: f64,
    pub grad_norm: f64,
    pub ess: f64,
    /// kNN distance snapshot (mean, std) when the eval hook ran this step.
    pub eval_mu: Option<f64>,
    pub eval_sigma: Option<f64>,
}

/// A scenario with its fixed expert demonstrations.
pub struct TrainTask {
    pub scenario: Scenario,
    pub experts: Vec<Trajectory>,
}

pub struct TrainOutput {
    pub model: RewardModel,
    pub log: Vec<TrainingLogRecord>,
    /// Set when training aborted on divergence; `model` is then the last
    /// finite checkpoint.
    pub aborted: Option<String>,
}

/// Periodic evaluation callback: may return a (mu, sigma) distance snapshot.
pub type EvalHook<'h> = dyn FnMut(u32, &RewardModel) -> Option<(f64, f64)> + 'h;

pub fn initial_model(cfg: &TrainerConfig) -> RewardModel {
    use rand::SeedableRng;
    let mut rng =
        rand_chacha::ChaCha8Rng::seed_from_u64(seeding::derive(cfg.seed, &[0x1217]));
    match cfg.model {
        ModelKind::Linear => RewardModel::init_linear(&mut rng),
        ModelKind::Mlp => RewardModel::init_mlp(cfg.hidden_dim, &mut rng),
    }
}

/// Gradient-ascent training loop: fresh planner samples each outer step, one
/// importance-weighted gradient per scenario, averaged, then an ascent step.
pub fn train(
    tasks: &[TrainTask],
    cfg: &TrainerConfig,
    mcts_cfg: &MctsConfig,
    eval_hook: Option<&mut EvalHook>,
) -> Result<TrainOutput, IrlError> {
    train_resumable(initial_model(cfg), 0, tasks, cfg, mcts_cfg, eval_hook)
}

/// [`train`] starting from a given checkpoint at `start_step`. Sample seeds
/// key on the absolute step index, so a resumed run retraces an uninterrupted
/// one exactly.
pub fn train_resumable(
    initial: RewardModel,
    start_step: u32,
    tasks: &[TrainTask],
    cfg: &TrainerConfig,
    mcts_cfg: &MctsConfig,
    mut eval_hook: Option<&mut EvalHook>,
) -> Result<TrainOutput, IrlError> {
    assert!(!tasks.is_empty());
    assert!(cfg.learning_rate > 0.0);
    let mut model = initial;
    let mut log = Vec::new();
    for step in start_step..cfg.outer_steps {
        let mut grad = vec![0.0; model.param_count()];
        let mut ll = 0.0;
        let mut log_z = 0.0;
        let mut ess = 0.0;
        for (task_idx, task) in tasks.iter().enumerate() {
            let samples: Vec<SampledBatchEntry> = (0..cfg.samples_per_step)
                .into_par_iter()
                .map(|j| {
                    let seed = seeding::derive(
                        cfg.seed,
                        &[0x5a, step.into(), task_idx as u64, j.into()],
                    );
                    generate_samples(&task.scenario, &model, mcts_cfg, seed)
                })
                .flatten()
                .collect();
            let est = gradient_estimate(
                &model,
                &task.experts,
                &samples,
                &task.scenario,
                cfg.gamma,
                step,
            )?;
            let nt = tasks.len() as f64;
            for (acc, g) in grad.iter_mut().zip(&est.grad) {
                *acc += g / nt;
            }
            ll += est.log_likelihood / nt;
            log_z += est.log_z / nt;
            ess += est.ess / nt;
        }
        let next = model.ascended(&grad, cfg.learning_rate);
        if !next.is_finite() {
            return Ok(TrainOutput {
                model,
                log,
                aborted: Some(format!("non-finite parameters after step {step}")),
            });
        }
        model = next;
        let eval = eval_hook.as_mut().and_then(|h| h(step, &model));
        log.push(TrainingLogRecord {
            step,
            log_likelihood: ll,
            log_z,
            grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
            ess,
            eval_mu: eval.map(|e| e.0),
            eval_sigma: eval.map(|e| e.1),
        });
    }
    Ok(TrainOutput { model, log, aborted: None })
}

/// Writes the training log as CSV, one row per outer step.
pub fn write_training_log<W: Write>(out: &mut W, log: &[TrainingLogRecord]) -> std::io::Result<()> {
    writeln!(out, "step,log_likelihood,log_z,grad_norm,ess,eval_mu,eval_sigma")?;
    for r in log {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step,
            r.log_likelihood,
            r.log_z,
            r.grad_norm,
            r.ess,
            opt(r.eval_mu),
            opt(r.eval_sigma)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_single_trivial_entry() {
        assert_relative_eq!(log_partition(&[(0.0, 0.0)]), 0.0);
    }

    #[test]
    fn partition_of_identical_entries_matches_single() {
        let one = log_partition(&[(0.7, -1.2)]);
        let many = log_partition(&[(0.7, -1.2); 64]);
        assert_relative_eq!(one, many, epsilon = 1e-12);
    }

    #[test]
    fn weights_sum_to_one() {
        let entries: Vec<(f64, f64)> =
            (0..40).map(|i| (0.1 * i as f64, -0.3 * i as f64)).collect();
        let w = normalized_weights(&entries);
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn log_space_safe_for_extreme_returns() {
        for r in [-1e3, 1e3] {
            let entries = vec![(r, -5.0), (r * 0.5, -1.0)];
            assert!(log_partition(&entries).is_finite());
            let w = normalized_weights(&entries);
            assert!(w.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn importance_mean_reduces_to_plain_mean_when_p_equals_q() {
        let values = [1.0, 2.0, 3.0, 4.0];
        let logs = [-0.5, -1.0, -1.5, -2.0];
        assert_relative_eq!(importance_mean(&values, &logs, &logs), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn importance_mean_constant_value_with_exact_unit_weight() {
        // enumerable support {a, b} with q uniform, p = (0.3, 0.7):
        // E_q[p/q] = 1 exactly, so a constant value estimates itself
        let values = [5.0, 5.0];
        let p_log = [0.3f64.ln(), 0.7f64.ln()];
        let q_log = [0.5f64.ln(), 0.5f64.ln()];
        assert_relative_eq!(importance_mean(&values, &p_log, &q_log), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn importance_mean_shifted_normal_oracle() {
        // estimate E[X] for X ~ N(0,1) sampling from N(1,1); true mean is 0
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let q = Normal::new(1.0, 1.0).unwrap();
        let n = 100_000;
        let mut values = Vec::with_capacity(n);
        let mut p_log = Vec::with_capacity(n);
        let mut q_log = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = q.sample(&mut rng);
            values.push(x);
            p_log.push(-0.5 * x * x);
            q_log.push(-0.5 * (x - 1.0) * (x - 1.0));
        }
        let est = importance_mean(&values, &p_log, &q_log);
        assert!(est.abs() < 0.05, "estimate = {est}");
    }

    #[test]
    fn gradient_zero_for_identical_uniform_batches() {
        // expert batch = sample batch with equal returns and log-probs
        let g1 = vec![0.3, -0.2];
        let g2 = vec![-0.1, 0.4];
        let expert_grads = vec![g1.clone(), g2.clone()];
        let samples = vec![(0.5, -1.0, g1), (0.5, -1.0, g2)];
        let est = gradient_from_parts(&expert_grads, &[0.5, 0.5], &samples);
        for g in est.grad {
            assert_relative_eq!(g, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ess_of_uniform_weights_is_n() {
        let w = vec![0.25; 4];
        assert_relative_eq!(effective_sample_size(&w), 4.0);
    }

    #[test]
    fn likelihood_ascends_under_exact_gradients() {
        // substitute exact enumeration gradients for the estimator and check
        // the proportional log-likelihood is non-decreasing at small alpha
        let mdp = crate::toy::EnumIrl::from_seed(3, 3, 3, 13);
        let experts = vec![vec![0, 1, 2], vec![1, 1, 0], vec![0, 0, 0]];
        let mut theta = vec![0.4, -0.6, 0.2];
        let mut last = mdp.exact_log_likelihood(&theta, &experts);
        for _ in 0..200 {
            let grad = mdp.exact_gradient(&theta, &experts);
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t += 1e-3 * g;
            }
            let ll = mdp.exact_log_likelihood(&theta, &experts);
            assert!(ll >= last - 1e-12, "likelihood decreased: {last} -> {ll}");
            last = ll;
        }
    }

    #[test]
    fn estimators_converge_to_enumeration_oracle() {
        let mdp = crate::toy::EnumIrl::from_seed(2, 3, 2, 21);
        let theta = vec![0.8, -0.5];
        let exact_log_z = mdp.exact_log_z(&theta);
        let experts = vec![vec![0, 1], vec![2, 0]];
        let exact_grad = mdp.exact_gradient(&theta, &experts);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let samples: Vec<(f64, f64, Vec<f64>)> = (0..n)
            .map(|_| {
                let tr = mdp.sample(&mut rng);
                (mdp.ret(&theta, &tr), mdp.log_prob(&tr), mdp.feature_mean(&tr))
            })
            .collect();
        let pairs: Vec<(f64, f64)> = samples.iter().map(|(r, lp, _)| (*r, *lp)).collect();
        let est_log_z = log_partition(&pairs);
        assert!(
            (est_log_z - exact_log_z).abs() / exact_log_z.abs() < 0.02,
            "logZ {est_log_z} vs {exact_log_z}"
        );

        let expert_grads: Vec<Vec<f64>> =
            experts.iter().map(|t| mdp.feature_mean(t)).collect();
        let expert_rets: Vec<f64> = experts.iter().map(|t| mdp.ret(&theta, t)).collect();
        let est = gradient_from_parts(&expert_grads, &expert_rets, &samples);
        for (e, x) in est.grad.iter().zip(&exact_grad) {
            assert!((e - x).abs() < 0.03, "grad {e} vs {x}");
        }
    }

    fn tiny_task() -> TrainTask {
        use crate::env::{AgentSpec, Road};
        let scenario = Scenario {
            schema_version: 1,
            road: Road { lane_count: 1, lane_width: 3.5, length: 400.0 },
            agents: vec![AgentSpec {
                start_x_mean: 10.0,
                start_x_std: 1.0,
                start_y_mean: 1.75,
                start_y_std: 0.0,
                start_v: 10.0,
                desired_lane: 0,
                desired_velocity: 12.0,
            }],
            obstacles: vec![],
            horizon: 3,
            dt: 0.8,
            footprint: Default::default(),
            limits: Default::default(),
        };
        let baseline = RewardModel::Linear(crate::reward::LinearParams {
            theta: [1.0, 1.0, 0.5, 0.5, -10.0, -10.0, -10.0],
        });
        let cfg = MctsConfig { budget: 40, ..MctsConfig::default() };
        let experts: Vec<Trajectory> = (0..3)
            .flat_map(|s| crate::sim::plan_expert(&scenario, &baseline, &cfg, s))
            .collect();
        TrainTask { scenario, experts }
    }

    #[test]
    fn zero_outer_steps_returns_initial_model() {
        let task = tiny_task();
        let cfg = TrainerConfig { outer_steps: 0, seed: 5, ..TrainerConfig::default() };
        let out = train(
            &[task],
            &cfg,
            &MctsConfig { budget: 20, ..MctsConfig::default() },
            None,
        )
        .unwrap();
        assert_eq!(out.model, initial_model(&cfg));
        assert!(out.log.is_empty());
    }

    #[test]
    fn single_step_training_is_bit_deterministic() {
        let task = tiny_task();
        let cfg = TrainerConfig {
            outer_steps: 1,
            samples_per_step: 2,
            seed: 9,
            ..TrainerConfig::default()
        };
        let mcts = MctsConfig { budget: 30, ..MctsConfig::default() };
        let a = train(&[tiny_task()], &cfg, &mcts, None).unwrap();
        let b = train(&[task], &cfg, &mcts, None).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log[0].log_likelihood, b.log[0].log_likelihood);
    }

    #[test]
    fn resume_retraces_uninterrupted_run() {
        let cfg = TrainerConfig {
            outer_steps: 4,
            samples_per_step: 2,
            seed: 3,
            learning_rate: 0.01,
            ..TrainerConfig::default()
        };
        let mcts = MctsConfig { budget: 25, ..MctsConfig::default() };
        let full = train(&[tiny_task()], &cfg, &mcts, None).unwrap();

        let half_cfg = TrainerConfig { outer_steps: 2, ..cfg.clone() };
        let half = train(&[tiny_task()], &half_cfg, &mcts, None).unwrap();
        let resumed =
            train_resumable(half.model, 2, &[tiny_task()], &cfg, &mcts, None).unwrap();
        assert_eq!(resumed.model, full.model);
    }
}

//! Small enumerable MDPs used as independent oracles in tests.
//!
//! These fixtures are deliberately tiny so that optimal returns, partition
//! functions, and likelihood gradients can be computed by exhaustive
//! enumeration and compared against the sampling-based estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mcts::{softmax_probs, SearchProblem};

/// One-step, one-agent bandit with fixed per-arm rewards. State is the number
/// of steps taken.
pub struct Bandit {
    pub arm_rewards: Vec<f64>,
}

impl SearchProblem for Bandit {
    type State = u32;
    type Action = usize;

    fn num_agents(&self) -> usize {
        1
    }
    fn horizon(&self) -> u32 {
        1
    }
    fn depth(&self, state: &u32) -> u32 {
        *state
    }
    fn is_terminal(&self, _state: &u32) -> bool {
        false
    }
    fn max_actions(&self, _agent: usize) -> usize {
        self.arm_rewards.len()
    }
    fn expand_action(&self, _s: &u32, _agent: usize, ordinal: usize, _rng: &mut ChaCha8Rng) -> usize {
        ordinal
    }
    fn rollout_action(&self, _s: &u32, _agent: usize, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(0..self.arm_rewards.len())
    }
    fn step(&self, state: &u32, actions: &[usize]) -> (u32, Vec<f64>) {
        (state + 1, vec![self.arm_rewards[actions[0]]])
    }
}

/// Deterministic single-agent chain MDP with a position that wraps modulo
/// `num_pos`; rewards depend on (step, position, action). Small enough for
/// exhaustive enumeration of every action sequence.
pub struct ChainMdp {
    pub horizon: u32,
    pub num_actions: usize,
    pub num_pos: usize,
    rewards: Vec<f64>,
}

impl ChainMdp {
    pub fn from_seed(horizon: u32, num_actions: usize, num_pos: usize, seed: u64) -> ChainMdp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rewards = (0..horizon as usize * num_pos * num_actions)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        ChainMdp { horizon, num_actions, num_pos, rewards }
    }

    pub fn reward(&self, t: u32, pos: usize, action: usize) -> f64 {
        self.rewards[(t as usize * self.num_pos + pos) * self.num_actions + action]
    }

    fn best_from(&self, t: u32, pos: usize) -> f64 {
        if t >= self.horizon {
            return 0.0;
        }
        (0..self.num_actions)
            .map(|a| self.reward(t, pos, a) + self.best_from(t + 1, (pos + a) % self.num_pos))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Exhaustive-enumeration optimum return from the start state.
    pub fn optimal_return(&self) -> f64 {
        self.best_from(0, 0)
    }
}

impl SearchProblem for ChainMdp {
    /// (step, position)
    type State = (u32, usize);
    type Action = usize;

    fn num_agents(&self) -> usize {
        1
    }
    fn horizon(&self) -> u32 {
        self.horizon
    }
    fn depth(&self, state: &(u32, usize)) -> u32 {
        state.0
    }
    fn is_terminal(&self, _state: &(u32, usize)) -> bool {
        false
    }
    fn max_actions(&self, _agent: usize) -> usize {
        self.num_actions
    }
    fn expand_action(
        &self,
        _s: &(u32, usize),
        _agent: usize,
        ordinal: usize,
        _rng: &mut ChaCha8Rng,
    ) -> usize {
        ordinal
    }
    fn rollout_action(&self, _s: &(u32, usize), _agent: usize, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(0..self.num_actions)
    }
    fn step(&self, state: &(u32, usize), actions: &[usize]) -> ((u32, usize), Vec<f64>) {
        let (t, pos) = *state;
        let a = actions[0];
        ((t + 1, (pos + a) % self.num_pos), vec![self.reward(t, pos, a)])
    }
}

/// Enumerable IRL fixture: a short horizon, a handful of actions, linear
/// features per (step, action), and a fixed per-step sampling policy given by
/// softmax over `logits`. Everything about it can be computed exactly.
pub struct EnumIrl {
    pub horizon: usize,
    pub num_actions: usize,
    /// features[t][a] is the feature vector of taking action `a` at step `t`.
    pub features: Vec<Vec<Vec<f64>>>,
    /// Sampling-policy logits per step; the policy is softmax(logits[t]).
    pub logits: Vec<Vec<f64>>,
}

impl EnumIrl {
    pub fn from_seed(horizon: usize, num_actions: usize, dim: usize, seed: u64) -> EnumIrl {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..horizon)
            .map(|_| {
                (0..num_actions)
                    .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let logits = (0..horizon)
            .map(|_| (0..num_actions).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        EnumIrl { horizon, num_actions, features, logits }
    }

    pub fn dim(&self) -> usize {
        self.features[0][0].len()
    }

    /// Every trajectory, as a per-step action index sequence.
    pub fn all_trajectories(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..self.horizon {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..self.num_actions).map(move |a| {
                        let mut t = prefix.clone();
                        t.push(a);
                        t
                    })
                })
                .collect();
        }
        out
    }

    /// Length-normalized feature mean of a trajectory; for the linear model
    /// this is also the gradient of the return.
    pub fn feature_mean(&self, traj: &[usize]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for (t, &a) in traj.iter().enumerate() {
            for (s, f) in acc.iter_mut().zip(&self.features[t][a]) {
                *s += f;
            }
        }
        for s in &mut acc {
            *s /= traj.len() as f64;
        }
        acc
    }

    /// Linear return: `theta . feature_mean`.
    pub fn ret(&self, theta: &[f64], traj: &[usize]) -> f64 {
        self.feature_mean(traj).iter().zip(theta).map(|(f, t)| f * t).sum()
    }

    fn step_probs(&self, t: usize) -> Vec<f64> {
        softmax_probs(&self.logits[t], 1.0)
    }

    /// Log-probability of a trajectory under the sampling policy.
    pub fn log_prob(&self, traj: &[usize]) -> f64 {
        traj.iter().enumerate().map(|(t, &a)| self.step_probs(t)[a].ln()).sum()
    }

    /// Draws one trajectory from the sampling policy.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..self.horizon)
            .map(|t| {
                let probs = self.step_probs(t);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (a, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return a;
                    }
                }
                self.num_actions - 1
            })
            .collect()
    }

    /// Exact partition function `Z = sum_tau exp(R(tau))` by enumeration.
    pub fn exact_log_z(&self, theta: &[f64]) -> f64 {
        self.all_trajectories()
            .iter()
            .map(|t| self.ret(theta, t).exp())
            .sum::<f64>()
            .ln()
    }

    /// Exact likelihood gradient
    /// `E_expert[grad R] - sum_tau p_theta(tau) grad R(tau)` by enumeration.
    pub fn exact_gradient(&self, theta: &[f64], expert_trajs: &[Vec<usize>]) -> Vec<f64> {
        let dim = self.dim();
        let mut expert_mean = vec![0.0; dim];
        for tr in expert_trajs {
            for (m, f) in expert_mean.iter_mut().zip(self.feature_mean(tr)) {
                *m += f / expert_trajs.len() as f64;
            }
        }
        let log_z = self.exact_log_z(theta);
        let mut model_mean = vec![0.0; dim];
        for tr in self.all_trajectories() {
            let p = (self.ret(theta, &tr) - log_z).exp();
            for (m, f) in model_mean.iter_mut().zip(self.feature_mean(&tr)) {
                *m += p * f;
            }
        }
        expert_mean.iter().zip(&model_mean).map(|(e, m)| e - m).collect()
    }

    /// Exact proportional log-likelihood: mean expert return minus log Z.
    pub fn exact_log_likelihood(&self, theta: &[f64], expert_trajs: &[Vec<usize>]) -> f64 {
        let mean_ret = expert_trajs.iter().map(|t| self.ret(theta, t)).sum::<f64>()
            / expert_trajs.len() as f64;
        mean_ret - self.exact_log_z(theta)
    }
}

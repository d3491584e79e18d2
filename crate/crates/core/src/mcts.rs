//! Decoupled multi-agent UCT over continuous actions.
//!
//! Each agent keeps its own action statistics at shared joint-state nodes; a
//! joint action is the tuple of per-agent selections. New actions enter via
//! progressive widening (ceil(k * N^alpha), capped by the problem's action
//! budget). The root statistics feed either a greedy argmax or the stochastic
//! Softmax Q-Proposal final selection.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seeding;

/// A deterministic, finite-horizon, multi-agent decision process the search
/// can plan in. Step rewards already carry any return normalization.
pub trait SearchProblem {
    type State: Clone;
    type Action: Clone;

    fn num_agents(&self) -> usize;
    fn horizon(&self) -> u32;
    /// Decision steps already taken to reach `state`.
    fn depth(&self, state: &Self::State) -> u32;
    fn is_terminal(&self, state: &Self::State) -> bool;
    /// Upper bound on distinct actions per agent node (template size for
    /// discrete problems, larger for jittered continuous ones).
    fn max_actions(&self, agent: usize) -> usize;
    /// Produces the `ordinal`-th action to explore at a node. Ordinals below
    /// the template size enumerate the template deterministically; later
    /// ordinals may jitter.
    fn expand_action(
        &self,
        state: &Self::State,
        agent: usize,
        ordinal: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self::Action;
    /// Default policy used below the tree.
    fn rollout_action(&self, state: &Self::State, agent: usize, rng: &mut ChaCha8Rng)
        -> Self::Action;
    /// Applies a joint action; returns the next state and one reward per agent.
    fn step(&self, state: &Self::State, actions: &[Self::Action]) -> (Self::State, Vec<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig {
    /// Search iterations per decision step.
    pub budget: u32,
    /// UCT exploration constant.
    pub exploration: f64,
    /// Progressive-widening coefficient.
    pub pw_k: f64,
    /// Progressive-widening exponent.
    pub pw_alpha: f64,
    /// Softmax Q-Proposal temperature coefficient.
    pub softmax_c: f64,
    pub gamma: f64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            budget: 2000,
            exploration: 1.0,
            pw_k: 2.0,
            pw_alpha: 0.5,
            softmax_c: 5.0,
            gamma: 1.0,
        }
    }
}

struct Arm<A> {
    action: A,
    visits: u32,
    value_sum: f64,
}

struct Edge {
    child: usize,
    rewards: Vec<f64>,
}

struct Node<S, A> {
    state: S,
    visits: u32,
    /// Explored actions per agent, in expansion order.
    arms: Vec<Vec<Arm<A>>>,
    children: HashMap<Vec<u32>, Edge>,
}

struct Tree<'a, P: SearchProblem> {
    problem: &'a P,
    cfg: &'a MctsConfig,
    nodes: Vec<Node<P::State, P::Action>>,
}

impl<'a, P: SearchProblem> Tree<'a, P> {
    fn new_node(&mut self, state: P::State) -> usize {
        let m = self.problem.num_agents();
        self.nodes.push(Node {
            state,
            visits: 0,
            arms: (0..m).map(|_| Vec::new()).collect(),
            children: HashMap::new(),
        });
        self.nodes.len() - 1
    }

    fn widening_cap(&self, visits: u32, agent: usize) -> usize {
        let cap = (self.cfg.pw_k * f64::from(visits).powf(self.cfg.pw_alpha)).ceil() as usize;
        cap.max(1).min(self.problem.max_actions(agent))
    }

    fn select_arm(&mut self, node: usize, agent: usize, rng: &mut ChaCha8Rng) -> u32 {
        let cap = self.widening_cap(self.nodes[node].visits, agent);
        let explored = self.nodes[node].arms[agent].len();
        if explored < cap {
            let action =
                self.problem.expand_action(&self.nodes[node].state, agent, explored, rng);
            self.nodes[node].arms[agent].push(Arm { action, visits: 0, value_sum: 0.0 });
            return explored as u32;
        }
        let ln_n = f64::from(self.nodes[node].visits).ln().max(0.0);
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (i, arm) in self.nodes[node].arms[agent].iter().enumerate() {
            let n = f64::from(arm.visits);
            let score = arm.value_sum / n + self.cfg.exploration * (ln_n / n).sqrt();
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        best as u32
    }

    fn rollout(&self, state: &P::State, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let m = self.problem.num_agents();
        let mut acc = vec![0.0; m];
        let mut disc = 1.0;
        let mut current = state.clone();
        while !self.problem.is_terminal(&current)
            && self.problem.depth(&current) < self.problem.horizon()
        {
            let actions: Vec<P::Action> = (0..m)
                .map(|a| self.problem.rollout_action(&current, a, rng))
                .collect();
            let (next, rewards) = self.problem.step(&current, &actions);
            for (acc_a, r) in acc.iter_mut().zip(&rewards) {
                *acc_a += disc * r;
            }
            disc *= self.cfg.gamma;
            current = next;
        }
        acc
    }

    /// One select/expand/rollout/backup pass; returns the return-to-go per agent.
    fn simulate(&mut self, node: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let m = self.problem.num_agents();
        if self.problem.is_terminal(&self.nodes[node].state)
            || self.problem.depth(&self.nodes[node].state) >= self.problem.horizon()
        {
            return vec![0.0; m];
        }
        self.nodes[node].visits += 1;
        let key: Vec<u32> = (0..m).map(|a| self.select_arm(node, a, rng)).collect();

        let returns: Vec<f64> = if let Some(edge) = self.nodes[node].children.get(&key) {
            let child = edge.child;
            let rewards = edge.rewards.clone();
            let tail = self.simulate(child, rng);
            rewards.iter().zip(&tail).map(|(r, t)| r + self.cfg.gamma * t).collect()
        } else {
            let actions: Vec<P::Action> = key
                .iter()
                .enumerate()
                .map(|(a, &i)| self.nodes[node].arms[a][i as usize].action.clone())
                .collect();
            let (next, rewards) = self.problem.step(&self.nodes[node].state, &actions);
            let tail = self.rollout(&next, rng);
            let child = self.new_node(next);
            self.nodes[node].children.insert(key.clone(), Edge { child, rewards: rewards.clone() });
            rewards.iter().zip(&tail).map(|(r, t)| r + self.cfg.gamma * t).collect()
        };

        for (a, &i) in key.iter().enumerate() {
            let arm = &mut self.nodes[node].arms[a][i as usize];
            arm.visits += 1;
            arm.value_sum += returns[a];
        }
        returns
    }
}

/// Runs `budget` search iterations from `root` and returns every explored
/// root action with its mean value estimate, per agent, in expansion order.
pub fn mcts_q_estimate<P: SearchProblem>(
    problem: &P,
    root: &P::State,
    cfg: &MctsConfig,
    seed: u64,
) -> Vec<Vec<(P::Action, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = Tree { problem, cfg, nodes: Vec::new() };
    let root_id = tree.new_node(root.clone());
    for _ in 0..cfg.budget {
        tree.simulate(root_id, &mut rng);
    }
    tree.nodes[root_id]
        .arms
        .iter()
        .map(|arms| {
            arms.iter()
                .map(|arm| (arm.action.clone(), arm.value_sum / f64::from(arm.visits.max(1))))
                .collect()
        })
        .collect()
}

/// One agent's final selection at a root state.
#[derive(Debug, Clone)]
pub struct Choice<A> {
    pub action: A,
    /// Index into the explored-action list.
    pub index: usize,
    /// Probability the selection policy assigned to the chosen action.
    pub prob: f64,
    /// Full distribution over that agent's explored root actions.
    pub dist: Vec<f64>,
}

/// Per-agent chosen actions with their selection probabilities.
#[derive(Debug, Clone)]
pub struct PlanStepResult<A> {
    pub choices: Vec<Choice<A>>,
}

/// Numerically stable softmax of `exp(c * q)`.
pub fn softmax_probs(qs: &[f64], c: f64) -> Vec<f64> {
    assert!(!qs.is_empty());
    let max = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = qs.iter().map(|q| (c * (q - max)).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Softmax Q-Proposal: samples each agent's action with probability
/// proportional to `exp(c * Q)` over its explored root actions.
pub fn softmax_q_proposal<A: Clone>(
    q_map: &[Vec<(A, f64)>],
    c: f64,
    rng: &mut ChaCha8Rng,
) -> PlanStepResult<A> {
    let choices = q_map
        .iter()
        .map(|arms| {
            let qs: Vec<f64> = arms.iter().map(|(_, q)| *q).collect();
            let dist = softmax_probs(&qs, c);
            let index = sample_index(&dist, rng);
            Choice { action: arms[index].0.clone(), index, prob: dist[index], dist }
        })
        .collect();
    PlanStepResult { choices }
}

/// Greedy argmax selection; ties break toward the lowest action index. The
/// recorded distribution is degenerate (probability one on the chosen action).
pub fn greedy_selection<A: Clone>(q_map: &[Vec<(A, f64)>]) -> PlanStepResult<A> {
    let choices = q_map
        .iter()
        .map(|arms| {
            let mut best = 0usize;
            for (i, (_, q)) in arms.iter().enumerate() {
                if *q > arms[best].1 {
                    best = i;
                }
            }
            let mut dist = vec![0.0; arms.len()];
            dist[best] = 1.0;
            Choice { action: arms[best].0.clone(), index: best, prob: 1.0, dist }
        })
        .collect();
    PlanStepResult { choices }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    Greedy,
    SoftmaxQ,
}

/// One executed decision step of an episode.
pub struct EpisodeStep<P: SearchProblem> {
    pub state: P::State,
    pub actions: Vec<P::Action>,
    /// Per-agent selection probability of the executed action.
    pub probs: Vec<f64>,
    pub rewards: Vec<f64>,
}

pub struct Episode<P: SearchProblem> {
    pub steps: Vec<EpisodeStep<P>>,
    pub final_state: P::State,
}

/// Receding-horizon execution: re-search at every step, select, apply.
pub fn run_episode<P: SearchProblem>(
    problem: &P,
    root: P::State,
    cfg: &MctsConfig,
    selection: SelectionPolicy,
    seed: u64,
) -> Episode<P> {
    let mut state = root;
    let mut steps = Vec::new();
    for t in 0..problem.horizon() {
        if problem.is_terminal(&state) {
            break;
        }
        let q_map = mcts_q_estimate(problem, &state, cfg, seeding::derive(seed, &[t.into(), 1]));
        let result = match selection {
            SelectionPolicy::Greedy => greedy_selection(&q_map),
            SelectionPolicy::SoftmaxQ => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seeding::derive(seed, &[t.into(), 2]));
                softmax_q_proposal(&q_map, cfg.softmax_c, &mut rng)
            }
        };
        let actions: Vec<P::Action> =
            result.choices.iter().map(|c| c.action.clone()).collect();
        let probs: Vec<f64> = result.choices.iter().map(|c| c.prob).collect();
        let (next, rewards) = problem.step(&state, &actions);
        steps.push(EpisodeStep { state, actions, probs, rewards });
        state = next;
    }
    Episode { steps, final_state: state }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::Bandit;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn budget_one_explores_single_action() {
        let p = Bandit { arm_rewards: vec![1.0, 0.0] };
        let cfg = MctsConfig { budget: 1, ..MctsConfig::default() };
        let q = mcts_q_estimate(&p, &0, &cfg, 3);
        assert_eq!(q[0].len(), 1);
        // the single estimate is that arm's exact reward
        let (a, v) = &q[0][0];
        assert_relative_eq!(*v, p.arm_rewards[*a]);
    }

    #[test]
    fn zero_rewards_tie_breaks_to_first_arm() {
        let p = Bandit { arm_rewards: vec![0.0, 0.0, 0.0] };
        let cfg = MctsConfig { budget: 300, ..MctsConfig::default() };
        let q = mcts_q_estimate(&p, &0, &cfg, 5);
        assert!(q[0].iter().all(|(_, v)| *v == 0.0));
        let sel = greedy_selection(&q);
        assert_eq!(sel.choices[0].index, 0);
    }

    #[test]
    fn bandit_q_ordering_matches_true_rewards() {
        let p = Bandit { arm_rewards: vec![1.0, 0.0] };
        let cfg = MctsConfig { budget: 500, ..MctsConfig::default() };
        for seed in 0..5 {
            let q = mcts_q_estimate(&p, &0, &cfg, seed);
            let get = |arm: usize| q[0].iter().find(|(a, _)| *a == arm).unwrap().1;
            assert!(get(0) > get(1));
            assert_relative_eq!(get(0), 1.0);
            assert_relative_eq!(get(1), 0.0);
        }
    }

    #[test]
    fn q_estimate_deterministic_given_seed() {
        let p = Bandit { arm_rewards: vec![0.3, 0.9, 0.1] };
        let cfg = MctsConfig { budget: 100, ..MctsConfig::default() };
        let a = mcts_q_estimate(&p, &0, &cfg, 42);
        let b = mcts_q_estimate(&p, &0, &cfg, 42);
        for (x, y) in a[0].iter().zip(&b[0]) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1, y.1);
        }
    }

    #[test]
    fn softmax_uniform_for_equal_values() {
        let probs = softmax_probs(&[0.4, 0.4, 0.4, 0.4], 5.0);
        for p in probs {
            assert_relative_eq!(p, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_large_c_concentrates_on_argmax() {
        let probs = softmax_probs(&[0.3, 0.7, 0.1], 1e3);
        assert!(probs[1] > 0.999);
    }

    #[test]
    fn softmax_hand_computed_two_action_case() {
        let probs = softmax_probs(&[1.0, 0.0], 1.0);
        let e = std::f64::consts::E;
        assert_relative_eq!(probs[0], e / (e + 1.0), epsilon = 1e-12);
        assert_relative_eq!(probs[1], 1.0 / (e + 1.0), epsilon = 1e-12);
        assert_relative_eq!(probs[0], 0.7311, epsilon = 1e-4);
        assert_relative_eq!(probs[1], 0.2689, epsilon = 1e-4);
    }

    #[test]
    fn softmax_q_proposal_records_consistent_choice() {
        let q_map = vec![vec![(0usize, 0.9), (1usize, 0.2), (2usize, 0.4)]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = softmax_q_proposal(&q_map, 5.0, &mut rng);
        let c = &r.choices[0];
        assert_relative_eq!(c.prob, c.dist[c.index]);
        assert_relative_eq!(c.dist.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn softmax_normalizes_and_is_shift_invariant(
            qs in proptest::collection::vec(-5.0f64..5.0, 1..8),
            shift in -10.0f64..10.0,
            c in 0.01f64..50.0,
        ) {
            let p = softmax_probs(&qs, c);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = qs.iter().map(|q| q + shift).collect();
            let ps = softmax_probs(&shifted, c);
            for (a, b) in p.iter().zip(&ps) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn softmax_is_monotone_in_q(
            q1 in -5.0f64..5.0,
            gap in 1e-6f64..5.0,
            c in 0.01f64..50.0,
        ) {
            let p = softmax_probs(&[q1 + gap, q1], c);
            prop_assert!(p[0] > p[1]);
        }
    }
}

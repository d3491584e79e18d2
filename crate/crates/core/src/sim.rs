//! Highway scenarios as a search problem, plus episode sampling.
//!
//! Couples the environment, the feature pipeline, and a reward model into a
//! [`SearchProblem`] the planner can run on, and converts executed episodes
//! into per-agent trajectories with their sampling-policy log-probabilities.
//! Trajectory batches round-trip through a JSON-lines file format shared by
//! expert and sampled data.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    classify_step, sample_start_state, step, Action, AgentState, Scenario, Terminal, Trajectory,
};
use crate::features::{feature_step, FeatureVector};
use crate::mcts::{run_episode, MctsConfig, SearchProblem, SelectionPolicy};
use crate::reward::RewardModel;
use crate::seeding;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("batch io: {0}")]
    Io(#[from] std::io::Error),
    #[error("batch parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid batch file: {0}")]
    Invalid(String),
}

/// Per-agent component of the joint search state.
#[derive(Debug, Clone)]
pub struct SimAgent {
    pub state: AgentState,
    pub prev_action: Option<Action>,
    /// Previous step's carried continuous features (desired lane, desired
    /// velocity, lane centering) for the nonlinear reward input.
    pub prev_carried: Option<[f64; 3]>,
    pub terminal: Terminal,
}

/// Joint state of all agents after `t` decision steps.
#[derive(Debug, Clone)]
pub struct JointState {
    pub t: u32,
    pub agents: Vec<SimAgent>,
    pub done: bool,
}

impl JointState {
    /// Samples per-agent start states; deterministic given the seed.
    pub fn initial(scenario: &Scenario, seed: u64) -> JointState {
        let agents = (0..scenario.agents.len())
            .map(|i| SimAgent {
                state: sample_start_state(scenario, i, seeding::derive(seed, &[i as u64])),
                prev_action: None,
                prev_carried: None,
                terminal: Terminal::None,
            })
            .collect();
        JointState { t: 0, agents, done: false }
    }
}

/// A scenario plus a reward model, viewed as a planning problem. Step rewards
/// are divided by the horizon so backed-up values match length-normalized
/// trajectory returns.
pub struct HighwayProblem<'a> {
    pub scenario: &'a Scenario,
    pub model: &'a RewardModel,
    templates: Vec<Action>,
}

/// Seconds an agent takes to cross one lane laterally with a template action.
pub const LANE_CHANGE_SECONDS: f64 = 3.2;

/// Action template: longitudinal accelerations crossed with lateral
/// velocities, the neutral action first.
pub fn action_template(scenario: &Scenario) -> Vec<Action> {
    let vy_mag = scenario.road.lane_width / LANE_CHANGE_SECONDS;
    let mut out = Vec::new();
    for ax in [0.0, 1.0, -1.0, 3.0, -3.0] {
        for vy in [0.0, vy_mag, -vy_mag] {
            out.push(Action { ax, vy });
        }
    }
    out
}

impl<'a> HighwayProblem<'a> {
    pub fn new(scenario: &'a Scenario, model: &'a RewardModel) -> HighwayProblem<'a> {
        HighwayProblem { scenario, model, templates: action_template(scenario) }
    }
}

impl SearchProblem for HighwayProblem<'_> {
    type State = JointState;
    type Action = Action;

    fn num_agents(&self) -> usize {
        self.scenario.agents.len()
    }

    fn horizon(&self) -> u32 {
        self.scenario.horizon
    }

    fn depth(&self, state: &JointState) -> u32 {
        state.t
    }

    fn is_terminal(&self, state: &JointState) -> bool {
        state.done
    }

    fn max_actions(&self, _agent: usize) -> usize {
        4 * self.templates.len()
    }

    fn expand_action(
        &self,
        _state: &JointState,
        _agent: usize,
        ordinal: usize,
        rng: &mut ChaCha8Rng,
    ) -> Action {
        let base = self.templates[ordinal % self.templates.len()];
        if ordinal < self.templates.len() {
            return base;
        }
        // continuous widening: jitter around the template, kept feasible
        let limits = &self.scenario.limits;
        Action {
            ax: (base.ax + rng.gen_range(-0.5..0.5)).clamp(-limits.ax_max, limits.ax_max),
            vy: (base.vy + rng.gen_range(-0.3..0.3)).clamp(-limits.vy_max, limits.vy_max),
        }
    }

    fn rollout_action(&self, _state: &JointState, _agent: usize, rng: &mut ChaCha8Rng) -> Action {
        self.templates[rng.gen_range(0..self.templates.len())]
    }

    fn step(&self, state: &JointState, actions: &[Action]) -> (JointState, Vec<f64>) {
        let sc = self.scenario;
        let next_states: Vec<AgentState> = state
            .agents
            .iter()
            .zip(actions)
            .map(|(a, act)| step(&a.state, act, sc.dt))
            .collect();
        let flags = classify_step(
            &next_states,
            actions,
            &sc.road,
            &sc.obstacles,
            &sc.footprint,
            &sc.limits,
        );
        let norm = f64::from(sc.horizon);
        let mut rewards = Vec::with_capacity(state.agents.len());
        let mut next_agents = Vec::with_capacity(state.agents.len());
        for (i, agent) in state.agents.iter().enumerate() {
            let fv: FeatureVector = feature_step(
                &agent.state,
                &actions[i],
                agent.prev_action.as_ref(),
                &sc.agents[i],
                &sc.road,
                sc.dt,
                flags[i],
            );
            let prev = agent.prev_carried.unwrap_or_else(|| fv.carried());
            rewards.push(self.model.reward_step(&fv, prev) / norm);
            next_agents.push(SimAgent {
                state: next_states[i],
                prev_action: Some(actions[i]),
                prev_carried: Some(fv.carried()),
                terminal: flags[i],
            });
        }
        let done = flags.iter().any(|f| f.is_terminal());
        (JointState { t: state.t + 1, agents: next_agents, done }, rewards)
    }
}

/// A sampled trajectory with its sampling-policy probability bookkeeping.
#[derive(Debug, Clone)]
pub struct SampledBatchEntry {
    pub trajectory: Trajectory,
    /// log pi_s(tau): the sum of per-step log selection probabilities.
    pub log_prob: f64,
    /// Per-step probability actually assigned to the executed action
    /// (empty for entries loaded from disk).
    pub step_probs: Vec<f64>,
    /// Episode seed, for provenance.
    pub seed: u64,
}

fn episode_to_entries(
    scenario: &Scenario,
    episode: crate::mcts::Episode<HighwayProblem<'_>>,
    seed: u64,
    greedy: bool,
) -> Vec<SampledBatchEntry> {
    let n = scenario.agents.len();
    (0..n)
        .map(|i| {
            let mut states: Vec<AgentState> =
                episode.steps.iter().map(|s| s.state.agents[i].state).collect();
            states.push(episode.final_state.agents[i].state);
            let actions: Vec<Action> = episode.steps.iter().map(|s| s.actions[i]).collect();
            let step_probs: Vec<f64> = episode.steps.iter().map(|s| s.probs[i]).collect();
            let log_prob =
                if greedy { 0.0 } else { step_probs.iter().map(|p| p.ln()).sum() };
            SampledBatchEntry {
                trajectory: Trajectory {
                    agent_id: i as u32,
                    states,
                    actions,
                    terminal: episode.final_state.agents[i].terminal,
                },
                log_prob,
                step_probs,
                seed,
            }
        })
        .collect()
}

/// Samples one episode with the stochastic Softmax Q-Proposal selection and
/// returns one entry per agent, each carrying its trajectory probability.
pub fn generate_samples(
    scenario: &Scenario,
    model: &RewardModel,
    cfg: &MctsConfig,
    seed: u64,
) -> Vec<SampledBatchEntry> {
    let problem = HighwayProblem::new(scenario, model);
    let root = JointState::initial(scenario, seeding::derive(seed, &[0]));
    let episode =
        run_episode(&problem, root, cfg, SelectionPolicy::SoftmaxQ, seeding::derive(seed, &[1]));
    episode_to_entries(scenario, episode, seed, false)
}

/// Generates one near-optimal demonstration episode: greedy argmax final
/// selection under the supplied (baseline) reward model.
pub fn plan_expert(
    scenario: &Scenario,
    baseline: &RewardModel,
    cfg: &MctsConfig,
    seed: u64,
) -> Vec<Trajectory> {
    let problem = HighwayProblem::new(scenario, baseline);
    let root = JointState::initial(scenario, seeding::derive(seed, &[0]));
    let episode =
        run_episode(&problem, root, cfg, SelectionPolicy::Greedy, seeding::derive(seed, &[1]));
    episode_to_entries(scenario, episode, seed, true)
        .into_iter()
        .map(|e| e.trajectory)
        .collect()
}

/// Like [`plan_expert`] but keeps the batch-entry wrapper (log_prob = 0).
pub fn plan_expert_entries(
    scenario: &Scenario,
    baseline: &RewardModel,
    cfg: &MctsConfig,
    seed: u64,
) -> Vec<SampledBatchEntry> {
    let problem = HighwayProblem::new(scenario, baseline);
    let root = JointState::initial(scenario, seeding::derive(seed, &[0]));
    let episode =
        run_episode(&problem, root, cfg, SelectionPolicy::Greedy, seeding::derive(seed, &[1]));
    episode_to_entries(scenario, episode, seed, true)
}

#[derive(Debug, Serialize, Deserialize)]
struct BatchHeader {
    schema: String,
    version: u32,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRecord {
    agent_id: u32,
    seed: u64,
    /// One (x, y, v, ax, vy) tuple per decision step.
    steps: Vec<[f64; 5]>,
    terminal: Terminal,
    log_prob: f64,
}

/// Writes a trajectory batch as JSON-lines: a header record followed by one
/// record per trajectory.
pub fn write_batch(path: &Path, entries: &[SampledBatchEntry]) -> Result<(), BatchError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header =
        BatchHeader { schema: "trajectory_batch".into(), version: 1, count: entries.len() };
    writeln!(file, "{}", serde_json::to_string(&header)?)?;
    for e in entries {
        let t = &e.trajectory;
        let steps = t
            .states
            .iter()
            .zip(&t.actions)
            .map(|(s, a)| [s.x, s.y, s.v, a.ax, a.vy])
            .collect();
        let record = TrajectoryRecord {
            agent_id: t.agent_id,
            seed: e.seed,
            steps,
            terminal: t.terminal,
            log_prob: e.log_prob,
        };
        writeln!(file, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(())
}

/// Reads a trajectory batch; the final state of each trajectory is
/// reconstructed by replaying the last action (the transition model is
/// deterministic, so this is exact).
pub fn read_batch(path: &Path, scenario: &Scenario) -> Result<Vec<SampledBatchEntry>, BatchError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| BatchError::Invalid("missing header record".into()))??;
    let header: BatchHeader = serde_json::from_str(&header_line)?;
    if header.schema != "trajectory_batch" || header.version != 1 {
        return Err(BatchError::Invalid(format!(
            "unexpected schema {}/{}",
            header.schema, header.version
        )));
    }
    let mut out = Vec::with_capacity(header.count);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord = serde_json::from_str(&line)?;
        let mut states: Vec<AgentState> = record
            .steps
            .iter()
            .map(|s| AgentState { x: s[0], y: s[1], v: s[2] })
            .collect();
        let actions: Vec<Action> =
            record.steps.iter().map(|s| Action { ax: s[3], vy: s[4] }).collect();
        if let (Some(last_state), Some(last_action)) = (states.last(), actions.last()) {
            states.push(step(last_state, last_action, scenario.dt));
        } else {
            return Err(BatchError::Invalid("empty trajectory record".into()));
        }
        out.push(SampledBatchEntry {
            trajectory: Trajectory {
                agent_id: record.agent_id,
                states,
                actions,
                terminal: record.terminal,
            },
            log_prob: record.log_prob,
            step_probs: Vec::new(),
            seed: record.seed,
        });
    }
    if out.len() != header.count {
        return Err(BatchError::Invalid(format!(
            "header count {} vs {} records",
            header.count,
            out.len()
        )));
    }
    Ok(out)
}

//! Pipeline runner: expert generation, reward-model training, and evaluation,
//! driven by a single JSON run configuration.
//!
//! All randomness flows from one master seed through counter-based
//! derivation, so every artifact is reproducible byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use coop_irl::env::{Scenario, Trajectory};
use coop_irl::eval::{
    scenario_report, trajectory_distance, write_convergence_csv, write_convergence_svg,
    write_report_csv, ConvergencePoint, ScenarioReport,
};
use coop_irl::irl::{
    initial_model, train_resumable, write_training_log, TrainTask, TrainerConfig,
};
use coop_irl::mcts::MctsConfig;
use coop_irl::reward::{Checkpoint, LinearParams, RewardModel};
use coop_irl::seeding;
use coop_irl::sim::{plan_expert, plan_expert_entries, read_batch, write_batch};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

fn cfg_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioEntry {
    pub name: String,
    /// Scenario file path, relative to the run-config file.
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExpertConfig {
    /// Trajectory records to emit per scenario.
    pub count: u32,
    /// Hand-tuned baseline weights of the linear reward model that stands in
    /// for the demonstrator.
    pub weights: [f64; 7],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalConfig {
    /// Nearest neighbors per query trajectory.
    pub k: usize,
    /// Episodes sampled per scenario when evaluating a model.
    pub episodes: u32,
    /// Training steps between convergence-curve measurements (0 disables).
    pub interval: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub scenarios: Vec<ScenarioEntry>,
    pub planner: MctsConfig,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
    pub expert: ExpertConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    /// Loads a config and resolves scenario and output paths against the
    /// config file's directory. Referenced scenario files must exist.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(cfg_err)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for entry in &mut cfg.scenarios {
            entry.path = base.join(&entry.path);
            if !entry.path.is_file() {
                return Err(CliError::Config(format!(
                    "scenario file not found: {}",
                    entry.path.display()
                )));
            }
        }
        cfg.out_dir = base.join(&cfg.out_dir);
        if cfg.scenarios.is_empty() {
            return Err(CliError::Config("no scenarios listed".into()));
        }
        if cfg.eval.k == 0 {
            return Err(CliError::Config("eval.k must be positive".into()));
        }
        Ok(cfg)
    }
}

fn load_scenarios(cfg: &RunConfig) -> Result<Vec<Scenario>, CliError> {
    cfg.scenarios
        .iter()
        .map(|e| {
            Scenario::load(&e.path)
                .map_err(|err| CliError::Config(format!("{}: {err}", e.path.display())))
        })
        .collect()
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Config(format!("output dir {}: {e}", cfg.out_dir.display())))
}

pub fn expert_file(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(format!("experts_{name}.jsonl"))
}

pub fn checkpoint_file(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("checkpoint_latest.json")
}

fn baseline_model(cfg: &RunConfig) -> RewardModel {
    RewardModel::Linear(LinearParams { theta: cfg.expert.weights })
}

/// Generates expert demonstration batches, one JSON-lines file per scenario.
/// Episodes run until `expert.count` trajectory records exist; the surplus
/// from the last multi-agent episode is truncated.
pub fn cmd_gen_experts(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(cfg)?;
    let scenarios = load_scenarios(cfg)?;
    let baseline = baseline_model(cfg);
    for (idx, (entry, scenario)) in cfg.scenarios.iter().zip(&scenarios).enumerate() {
        let per_episode = scenario.agents.len() as u32;
        let episodes = cfg.expert.count.div_ceil(per_episode);
        let mut records: Vec<_> = (0..episodes)
            .into_par_iter()
            .flat_map_iter(|j| {
                let seed = seeding::derive(cfg.seed, &[1, idx as u64, j.into()]);
                plan_expert_entries(scenario, &baseline, &cfg.planner, seed)
            })
            .collect();
        records.truncate(cfg.expert.count as usize);
        write_batch(&expert_file(cfg, &entry.name), &records).map_err(cfg_err)?;
    }
    Ok(())
}

fn read_experts(cfg: &RunConfig) -> Result<Vec<(Scenario, Vec<Trajectory>)>, CliError> {
    let scenarios = load_scenarios(cfg)?;
    cfg.scenarios
        .iter()
        .zip(scenarios)
        .map(|(entry, scenario)| {
            let path = expert_file(cfg, &entry.name);
            let batch = read_batch(&path, &scenario)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if batch.is_empty() {
                return Err(CliError::Config(format!(
                    "no expert trajectories in {}",
                    path.display()
                )));
            }
            Ok((scenario, batch.into_iter().map(|e| e.trajectory).collect()))
        })
        .collect()
}

/// Samples greedy evaluation episodes under a model and returns the resulting
/// trajectories for one scenario.
fn sample_eval(
    scenario: &Scenario,
    model: &RewardModel,
    planner: &MctsConfig,
    episodes: u32,
    seed: u64,
) -> Vec<Trajectory> {
    (0..episodes)
        .into_par_iter()
        .flat_map_iter(|j| plan_expert(scenario, model, planner, seeding::derive(seed, &[j.into()])))
        .collect()
}

/// Mean kNN distance distribution of a model's greedy behavior against the
/// expert sets, averaged over scenarios.
fn measure_distance(
    tasks: &[(Scenario, Vec<Trajectory>)],
    model: &RewardModel,
    cfg: &RunConfig,
    seed: u64,
) -> (f64, f64) {
    let mut mu = 0.0;
    let mut sigma = 0.0;
    for (idx, (scenario, experts)) in tasks.iter().enumerate() {
        let queries = sample_eval(
            scenario,
            model,
            &cfg.planner,
            cfg.eval.episodes,
            seeding::derive(seed, &[idx as u64]),
        );
        let d = trajectory_distance(&queries, experts, cfg.eval.k)
            .expect("non-empty eval sets");
        mu += d.mean / tasks.len() as f64;
        sigma += d.std / tasks.len() as f64;
    }
    (mu, sigma)
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub model: RewardModel,
    pub final_step: u32,
    pub curve: Vec<ConvergencePoint>,
}

/// Trains the reward model on the configured scenarios. Resumes from the
/// latest checkpoint in the output directory when one exists; sample seeds key
/// on absolute step indices, so a resumed run matches an uninterrupted one.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts, CliError> {
    ensure_out_dir(cfg)?;
    let pairs = read_experts(cfg)?;
    let tasks: Vec<TrainTask> = pairs
        .iter()
        .map(|(scenario, experts)| TrainTask {
            scenario: scenario.clone(),
            experts: experts.clone(),
        })
        .collect();
    let trainer = TrainerConfig { seed: seeding::derive(cfg.seed, &[2]), ..cfg.trainer.clone() };

    let ck_path = checkpoint_file(cfg);
    let (start_model, start_step) = if ck_path.is_file() {
        let ck = Checkpoint::load(&ck_path).map_err(cfg_err)?;
        (ck.model().map_err(cfg_err)?, ck.step)
    } else {
        (initial_model(&trainer), 0)
    };

    let mut curve = Vec::new();
    if cfg.eval.interval > 0 && start_step == 0 {
        let (mu, sigma) = measure_distance(&pairs, &start_model, cfg, seeding::derive(cfg.seed, &[4, 0]));
        curve.push(ConvergencePoint { step: 0, mu_d: mu, sigma_d: sigma });
    }
    let interval = cfg.eval.interval;
    let mut hook = |step: u32, model: &RewardModel| {
        let done = step + 1;
        if interval == 0 || done % interval != 0 {
            return None;
        }
        Some(measure_distance(
            &pairs,
            model,
            cfg,
            seeding::derive(cfg.seed, &[4, done.into()]),
        ))
    };
    let out = train_resumable(
        start_model,
        start_step,
        &tasks,
        &trainer,
        &cfg.planner,
        Some(&mut hook),
    )
    .map_err(|e| CliError::Divergence(e.to_string()))?;

    for r in &out.log {
        if let (Some(mu), Some(sigma)) = (r.eval_mu, r.eval_sigma) {
            curve.push(ConvergencePoint { step: r.step + 1, mu_d: mu, sigma_d: sigma });
        }
    }

    let final_step = out.log.last().map_or(start_step, |r| r.step + 1);
    Checkpoint::new(&out.model, final_step).save(&ck_path).map_err(cfg_err)?;
    let mut log_file =
        fs::File::create(cfg.out_dir.join("training_log.csv")).map_err(cfg_err)?;
    write_training_log(&mut log_file, &out.log).map_err(cfg_err)?;
    let mut csv = fs::File::create(cfg.out_dir.join("convergence.csv")).map_err(cfg_err)?;
    write_convergence_csv(&mut csv, &curve).map_err(cfg_err)?;
    let mut svg = fs::File::create(cfg.out_dir.join("convergence.svg")).map_err(cfg_err)?;
    write_convergence_svg(&mut svg, &curve).map_err(cfg_err)?;

    if let Some(reason) = out.aborted {
        return Err(CliError::Divergence(reason));
    }
    Ok(TrainArtifacts { model: out.model, final_step, curve })
}

/// Evaluates a checkpoint: samples fresh greedy episodes per scenario, scores
/// them against the expert sets, and writes the report table. With a baseline
/// checkpoint, also writes a delta table (checkpoint minus baseline) in the
/// same column order.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    baseline: Option<&Path>,
) -> Result<Vec<(String, ScenarioReport)>, CliError> {
    ensure_out_dir(cfg)?;
    let model = Checkpoint::load(checkpoint).and_then(|c| c.model()).map_err(cfg_err)?;
    let pairs = read_experts(cfg)?;
    let report_rows = |m: &RewardModel| -> Result<Vec<(String, ScenarioReport)>, CliError> {
        cfg.scenarios
            .iter()
            .zip(&pairs)
            .enumerate()
            .map(|(idx, (entry, (scenario, experts)))| {
                let queries = sample_eval(
                    scenario,
                    m,
                    &cfg.planner,
                    cfg.eval.episodes,
                    seeding::derive(cfg.seed, &[3, idx as u64]),
                );
                let report = scenario_report(&queries, experts, scenario, cfg.eval.k)
                    .map_err(cfg_err)?;
                Ok((entry.name.clone(), report))
            })
            .collect()
    };
    let rows = report_rows(&model)?;
    let mut out = fs::File::create(cfg.out_dir.join("report.csv")).map_err(cfg_err)?;
    write_report_csv(&mut out, &rows).map_err(cfg_err)?;
    if let Some(base_path) = baseline {
        let base_model =
            Checkpoint::load(base_path).and_then(|c| c.model()).map_err(cfg_err)?;
        let base_rows = report_rows(&base_model)?;
        let deltas: Vec<(String, ScenarioReport)> = rows
            .iter()
            .zip(&base_rows)
            .map(|((name, r), (_, b))| (name.clone(), r.delta(b)))
            .collect();
        let mut out = fs::File::create(cfg.out_dir.join("report_delta.csv")).map_err(cfg_err)?;
        write_report_csv(&mut out, &deltas).map_err(cfg_err)?;
    }
    Ok(rows)
}

/// Pretty-prints a trajectory batch file as one summary line per trajectory.
pub fn cmd_inspect(
    batch_path: &Path,
    scenario_path: &Path,
    out: &mut dyn std::io::Write,
) -> Result<(), CliError> {
    let scenario = Scenario::load(scenario_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", scenario_path.display())))?;
    let batch = read_batch(batch_path, &scenario)
        .map_err(|e| CliError::Config(format!("{}: {e}", batch_path.display())))?;
    writeln!(out, "{} trajectories in {}", batch.len(), batch_path.display())
        .map_err(cfg_err)?;
    for e in &batch {
        let t = &e.trajectory;
        let last = t.states.last().expect("non-empty trajectory");
        writeln!(
            out,
            "agent {} seed {} steps {} terminal {:?} final (x {:.2}, y {:.2}, v {:.2}) log_prob {:.4}",
            t.agent_id,
            e.seed,
            t.actions.len(),
            t.terminal,
            last.x,
            last.y,
            last.v,
            e.log_prob,
        )
        .map_err(cfg_err)?;
    }
    Ok(())
}

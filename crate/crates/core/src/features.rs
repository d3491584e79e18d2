//! Per-step feature vector and trajectory-level feature averages.
//!
//! Four continuous components (desired lane, desired velocity, lane centering,
//! acceleration) normalized to [-1, 1], plus three binary terminal components
//! (collision, invalid state, invalid action). The nonlinear reward model
//! additionally consumes the three named continuous features of the previous
//! step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, AgentSpec, AgentState, Road, Terminal, Trajectory};

pub const GRAVITY: f64 = 9.81;
pub const FEATURE_DIM: usize = 7;
pub const AUGMENTED_DIM: usize = 10;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty trajectory")]
    EmptyTrajectory,
}

/// The seven per-step features, in wire order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub des_lane: f64,
    pub des_velocity: f64,
    pub lane_center: f64,
    pub acceleration: f64,
    pub collision: f64,
    pub invalid_state: f64,
    pub invalid_action: f64,
}

impl FeatureVector {
    pub const ZERO: FeatureVector = FeatureVector {
        des_lane: 0.0,
        des_velocity: 0.0,
        lane_center: 0.0,
        acceleration: 0.0,
        collision: 0.0,
        invalid_state: 0.0,
        invalid_action: 0.0,
    };

    pub fn to_array(self) -> [f64; FEATURE_DIM] {
        [
            self.des_lane,
            self.des_velocity,
            self.lane_center,
            self.acceleration,
            self.collision,
            self.invalid_state,
            self.invalid_action,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_DIM]) -> FeatureVector {
        FeatureVector {
            des_lane: a[0],
            des_velocity: a[1],
            lane_center: a[2],
            acceleration: a[3],
            collision: a[4],
            invalid_state: a[5],
            invalid_action: a[6],
        }
    }

    /// The three continuous components carried over to the next step's
    /// augmented vector.
    pub fn carried(&self) -> [f64; 3] {
        [self.des_lane, self.des_velocity, self.lane_center]
    }

    /// CSV column names, in the fixed wire order.
    pub const COLUMNS: [&'static str; FEATURE_DIM] = [
        "des_lane",
        "des_velocity",
        "lane_center",
        "acceleration",
        "collision",
        "invalid_state",
        "invalid_action",
    ];
}

/// Step features plus the previous step's carried continuous features.
/// At step 0 the carried values duplicate the step-0 values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedFeatureVector {
    pub base: FeatureVector,
    pub prev: [f64; 3],
}

impl AugmentedFeatureVector {
    pub fn to_array(self) -> [f64; AUGMENTED_DIM] {
        let b = self.base.to_array();
        [b[0], b[1], b[2], b[3], b[4], b[5], b[6], self.prev[0], self.prev[1], self.prev[2]]
    }
}

fn unit_clamp(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Acceleration proxy: RMS of total acceleration over the step, scaled by 1/g.
/// With piecewise-constant inputs the integral collapses to |a| / g; lateral
/// acceleration is the change of lateral velocity between consecutive steps.
fn acceleration_cost(action: &Action, prev_vy: f64, dt: f64) -> f64 {
    let a_lat = (action.vy - prev_vy) / dt;
    (action.ax * action.ax + a_lat * a_lat).sqrt() / GRAVITY
}

/// Computes the feature vector of one (state, action) step.
///
/// `prev_action` is the action of the previous step (`None` at step 0, which
/// makes the lateral jerk term zero). `flag` supplies the binary components.
pub fn feature_step(
    state: &AgentState,
    action: &Action,
    prev_action: Option<&Action>,
    spec: &AgentSpec,
    road: &Road,
    dt: f64,
    flag: Terminal,
) -> FeatureVector {
    let lane = state.lane(road);
    let des_lane = unit_clamp(1.0 - (lane - i64::from(spec.desired_lane)).abs() as f64);
    let des_velocity = unit_clamp(1.0 - 10.0 * (state.v / spec.desired_velocity - 1.0).abs());
    let center = road.lane_center(lane);
    let lane_center = unit_clamp(1.0 - (center - state.y).abs() / (road.lane_width / 4.0));
    let prev_vy = prev_action.map_or(action.vy, |a| a.vy);
    let acceleration =
        unit_clamp(1.0 - acceleration_cost(action, prev_vy, dt) / (GRAVITY / 8.0));
    FeatureVector {
        des_lane,
        des_velocity,
        lane_center,
        acceleration,
        collision: f64::from(flag == Terminal::Collision),
        invalid_state: f64::from(flag == Terminal::InvalidState),
        invalid_action: f64::from(flag == Terminal::InvalidAction),
    }
}

/// Per-step features of a whole trajectory. The terminal flag (if any)
/// applies to the last recorded step.
pub fn step_features(
    traj: &Trajectory,
    spec: &AgentSpec,
    road: &Road,
    dt: f64,
) -> Result<Vec<FeatureVector>, FeatureError> {
    if traj.is_empty() {
        return Err(FeatureError::EmptyTrajectory);
    }
    let last = traj.len() - 1;
    Ok((0..traj.len())
        .map(|t| {
            let prev = if t > 0 { Some(&traj.actions[t - 1]) } else { None };
            let flag = if t == last { traj.terminal } else { Terminal::None };
            feature_step(&traj.states[t], &traj.actions[t], prev, spec, road, dt, flag)
        })
        .collect())
}

/// Component-wise mean of the per-step features over the trajectory.
pub fn feature_trajectory(
    traj: &Trajectory,
    spec: &AgentSpec,
    road: &Road,
    dt: f64,
) -> Result<FeatureVector, FeatureError> {
    let steps = step_features(traj, spec, road, dt)?;
    let n = steps.len() as f64;
    let mut acc = [0.0; FEATURE_DIM];
    for fv in &steps {
        for (a, v) in acc.iter_mut().zip(fv.to_array()) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= n;
    }
    Ok(FeatureVector::from_array(acc))
}

/// Pairs each step's features with the previous step's carried values.
pub fn augment(seq: &[FeatureVector]) -> Vec<AugmentedFeatureVector> {
    seq.iter()
        .enumerate()
        .map(|(t, fv)| AugmentedFeatureVector {
            base: *fv,
            prev: if t > 0 { seq[t - 1].carried() } else { fv.carried() },
        })
        .collect()
}

/// Writes one CSV row per (trajectory, step) for offline inspection.
pub fn write_feature_csv<W: std::io::Write>(
    out: &mut W,
    batches: &[(u32, Vec<FeatureVector>)],
) -> std::io::Result<()> {
    writeln!(out, "trajectory,step,{}", FeatureVector::COLUMNS.join(","))?;
    for (id, steps) in batches {
        for (t, fv) in steps.iter().enumerate() {
            let cols: Vec<String> = fv.to_array().iter().map(|v| v.to_string()).collect();
            writeln!(out, "{id},{t},{}", cols.join(","))?;
        }
    }
    Ok(())
}

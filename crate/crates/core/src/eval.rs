//! Trajectory-similarity metrics and scenario evaluation reports.
//!
//! Learned behavior is scored against expert demonstrations with a
//! k-nearest-neighbor distance in trajectory space, plus per-scenario
//! fractions of terminal outcomes and goal attainment.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Scenario, Terminal, Trajectory};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("empty set")]
    EmptySet,
    #[error("k must be positive")]
    ZeroK,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Mean Euclidean distance between corresponding positions of two
/// trajectories. The shorter trajectory is padded by holding its last
/// position, so early-terminating episodes stay comparable.
pub fn pairwise_distance(a: &Trajectory, b: &Trajectory) -> Result<f64, EvalError> {
    if a.states.is_empty() || b.states.is_empty() {
        return Err(EvalError::EmptyTrajectory);
    }
    let n = a.states.len().max(b.states.len());
    let mut total = 0.0;
    for i in 0..n {
        let sa = &a.states[i.min(a.states.len() - 1)];
        let sb = &b.states[i.min(b.states.len() - 1)];
        total += ((sa.x - sb.x).powi(2) + (sa.y - sb.y).powi(2)).sqrt();
    }
    Ok(total / n as f64)
}

/// Mean distance from `query` to its `k` nearest neighbors in `references`.
pub fn knn_distance(query: &Trajectory, references: &[Trajectory], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if references.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mut dists = references
        .iter()
        .map(|r| pairwise_distance(query, r))
        .collect::<Result<Vec<f64>, _>>()?;
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = k.min(dists.len());
    Ok(dists[..k].iter().sum::<f64>() / k as f64)
}

/// Distribution of kNN distances of a set of query trajectories against an
/// expert reference set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDistance {
    pub mean: f64,
    pub std: f64,
}

/// Population mean and standard deviation of per-query kNN distances.
pub fn trajectory_distance(
    queries: &[Trajectory],
    references: &[Trajectory],
    k: usize,
) -> Result<TrajectoryDistance, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let d = queries
        .iter()
        .map(|q| knn_distance(q, references, k))
        .collect::<Result<Vec<f64>, _>>()?;
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64;
    Ok(TrajectoryDistance { mean, std: var.sqrt() })
}

/// Per-scenario outcome fractions plus the distance distribution, in the
/// report's column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    /// Fraction of trajectories ending in a collision.
    pub collision: f64,
    /// Fraction ending in an invalid state or with an infeasible action.
    pub invalid: f64,
    /// Fraction whose final lane is the agent's desired lane.
    pub desired_lane: f64,
    /// Fraction whose final speed is within 10% of the desired velocity.
    pub desired_velocity: f64,
    pub mu_d: f64,
    pub sigma_d: f64,
}

impl ScenarioReport {
    pub const COLUMNS: [&'static str; 6] = [
        "collision",
        "invalid",
        "desired_lane",
        "desired_velocity",
        "mu_d",
        "sigma_d",
    ];

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.collision,
            self.invalid,
            self.desired_lane,
            self.desired_velocity,
            self.mu_d,
            self.sigma_d,
        ]
    }

    /// Componentwise difference `self - other`, for comparing learned
    /// behavior against the expert baseline.
    pub fn delta(&self, other: &ScenarioReport) -> ScenarioReport {
        ScenarioReport {
            collision: self.collision - other.collision,
            invalid: self.invalid - other.invalid,
            desired_lane: self.desired_lane - other.desired_lane,
            desired_velocity: self.desired_velocity - other.desired_velocity,
            mu_d: self.mu_d - other.mu_d,
            sigma_d: self.sigma_d - other.sigma_d,
        }
    }
}

/// Builds a scenario report for query trajectories against expert references.
/// Fractions are over the query set; each trajectory is judged against the
/// goals of the agent it belongs to.
pub fn scenario_report(
    queries: &[Trajectory],
    references: &[Trajectory],
    scenario: &Scenario,
    k: usize,
) -> Result<ScenarioReport, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let n = queries.len() as f64;
    let mut collision = 0.0;
    let mut invalid = 0.0;
    let mut desired_lane = 0.0;
    let mut desired_velocity = 0.0;
    for t in queries {
        match t.terminal {
            Terminal::Collision => collision += 1.0,
            Terminal::InvalidState | Terminal::InvalidAction => invalid += 1.0,
            Terminal::None => {}
        }
        let spec = &scenario.agents[t.agent_id as usize];
        let last = t.states.last().ok_or(EvalError::EmptyTrajectory)?;
        if scenario.road.lane_of(last.y) == spec.desired_lane as i64 {
            desired_lane += 1.0;
        }
        if spec.desired_velocity > 0.0
            && (last.v / spec.desired_velocity - 1.0).abs() <= 0.1
        {
            desired_velocity += 1.0;
        }
    }
    let d = trajectory_distance(queries, references, k)?;
    Ok(ScenarioReport {
        collision: collision / n,
        invalid: invalid / n,
        desired_lane: desired_lane / n,
        desired_velocity: desired_velocity / n,
        mu_d: d.mean,
        sigma_d: d.std,
    })
}

/// One point of a convergence curve: distance distribution at a training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub step: u32,
    pub mu_d: f64,
    pub sigma_d: f64,
}

/// Writes a scenario report table as CSV. Each row is labeled; columns follow
/// [`ScenarioReport::COLUMNS`].
pub fn write_report_csv<W: Write>(
    out: &mut W,
    rows: &[(String, ScenarioReport)],
) -> std::io::Result<()> {
    writeln!(out, "scenario,{}", ScenarioReport::COLUMNS.join(","))?;
    for (name, r) in rows {
        let vals: Vec<String> = r.to_array().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{}", name, vals.join(","))?;
    }
    Ok(())
}

pub fn write_convergence_csv<W: Write>(
    out: &mut W,
    points: &[ConvergencePoint],
) -> std::io::Result<()> {
    writeln!(out, "step,mu_d,sigma_d")?;
    for p in points {
        writeln!(out, "{},{},{}", p.step, p.mu_d, p.sigma_d)?;
    }
    Ok(())
}

/// Renders a convergence curve as a minimal standalone SVG line plot of mu_d
/// over training steps.
pub fn write_convergence_svg<W: Write>(
    out: &mut W,
    points: &[ConvergencePoint],
) -> std::io::Result<()> {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    )?;
    writeln!(
        out,
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/><g stroke=\"black\" fill=\"none\">"
    )?;
    writeln!(
        out,
        "<path d=\"M {pad} {pad} L {pad} {} L {} {}\"/>",
        h - pad,
        w - pad,
        h - pad
    )?;
    if !points.is_empty() {
        let x_max = points.iter().map(|p| p.step).max().unwrap().max(1) as f64;
        let y_max = points.iter().map(|p| p.mu_d).fold(f64::MIN, f64::max).max(1e-9);
        let coords: Vec<String> = points
            .iter()
            .map(|p| {
                let x = pad + (w - 2.0 * pad) * p.step as f64 / x_max;
                let y = h - pad - (h - 2.0 * pad) * p.mu_d / y_max;
                format!("{x:.2} {y:.2}")
            })
            .collect();
        writeln!(out, "<polyline stroke=\"steelblue\" points=\"{}\"/>", coords.join(" "))?;
    }
    writeln!(out, "</g>")?;
    writeln!(out, "<text x=\"{}\" y=\"{}\" font-size=\"12\">step</text>", w / 2.0, h - 10.0)?;
    writeln!(out, "<text x=\"10\" y=\"{}\" font-size=\"12\">mu_d</text>", h / 2.0)?;
    writeln!(out, "</svg>")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, AgentState};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn traj(points: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            agent_id: 0,
            states: points
                .iter()
                .map(|&(x, y)| AgentState { x, y, v: 0.0 })
                .collect(),
            actions: vec![Action::ZERO; points.len().saturating_sub(1)],
            terminal: Terminal::None,
        }
    }

    #[test]
    fn distance_to_self_is_zero() {
        let t = traj(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert_relative_eq!(pairwise_distance(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn parallel_lines_distance_is_offset() {
        let a = traj(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let b = traj(&[(0.0, 2.0), (1.0, 2.0), (2.0, 2.0)]);
        assert_relative_eq!(pairwise_distance(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn hold_last_padding_hand_oracle() {
        // a has 3 points, b has 1 held at origin
        // distances: 0, 1, 2 -> mean 1
        let a = traj(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let b = traj(&[(0.0, 0.0)]);
        assert_relative_eq!(pairwise_distance(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn knn_hand_oracle() {
        let q = traj(&[(0.0, 0.0)]);
        let refs: Vec<Trajectory> =
            [1.0, 3.0, 2.0, 10.0].iter().map(|&y| traj(&[(0.0, y)])).collect();
        // nearest three: 1, 2, 3 -> mean 2
        assert_relative_eq!(knn_distance(&q, &refs, 3).unwrap(), 2.0);
        // k larger than the set falls back to all references
        assert_relative_eq!(knn_distance(&q, &refs, 10).unwrap(), 4.0);
    }

    #[test]
    fn distance_distribution_hand_oracle() {
        let queries = vec![traj(&[(0.0, 0.0)]), traj(&[(0.0, 4.0)])];
        let refs = vec![traj(&[(0.0, 1.0)])];
        // distances 1 and 3: mean 2, population std 1
        let d = trajectory_distance(&queries, &refs, 3).unwrap();
        assert_relative_eq!(d.mean, 2.0);
        assert_relative_eq!(d.std, 1.0);
    }

    #[test]
    fn report_counts_fractions() {
        use crate::env::{AgentSpec, Road};
        let scenario = Scenario {
            schema_version: 1,
            road: Road { lane_count: 2, lane_width: 3.5, length: 200.0 },
            agents: vec![AgentSpec {
                start_x_mean: 0.0,
                start_x_std: 0.0,
                start_y_mean: 1.75,
                start_y_std: 0.0,
                start_v: 10.0,
                desired_lane: 1,
                desired_velocity: 10.0,
            }],
            obstacles: vec![],
            horizon: 1,
            dt: 0.8,
            footprint: Default::default(),
            limits: Default::default(),
        };
        let mk = |y: f64, v: f64, terminal| Trajectory {
            agent_id: 0,
            states: vec![AgentState { x: 0.0, y, v }],
            actions: vec![],
            terminal,
        };
        let queries = vec![
            mk(5.25, 10.0, Terminal::None),       // desired lane and speed
            mk(1.75, 12.0, Terminal::Collision),  // wrong lane, speed off by 20%
            mk(5.25, 10.5, Terminal::InvalidState), // desired lane, within 10%
            mk(1.75, 10.0, Terminal::InvalidAction),
        ];
        let refs = vec![mk(5.25, 10.0, Terminal::None)];
        let r = scenario_report(&queries, &refs, &scenario, 3).unwrap();
        assert_relative_eq!(r.collision, 0.25);
        assert_relative_eq!(r.invalid, 0.5);
        assert_relative_eq!(r.desired_lane, 0.5);
        assert_relative_eq!(r.desired_velocity, 0.75);
    }

    #[test]
    fn report_csv_layout() {
        let report = ScenarioReport {
            collision: 0.0,
            invalid: 0.1,
            desired_lane: 0.9,
            desired_velocity: 0.8,
            mu_d: 1.5,
            sigma_d: 0.2,
        };
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &[("merge".to_string(), report)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "scenario,collision,invalid,desired_lane,desired_velocity,mu_d,sigma_d"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "merge,0,0.1,0.9,0.8,1.5,0.2");
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let points = vec![
            ConvergencePoint { step: 0, mu_d: 3.0, sigma_d: 1.0 },
            ConvergencePoint { step: 10, mu_d: 1.0, sigma_d: 0.5 },
        ];
        let mut buf = Vec::new();
        write_convergence_svg(&mut buf, &points).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.trim_end().ends_with("</svg>"));
        assert!(text.contains("polyline"));
    }

    fn arb_traj() -> impl Strategy<Value = Trajectory> {
        prop::collection::vec((-100.0..100.0f64, -10.0..10.0f64), 1..15).prop_map(|pts| {
            Trajectory {
                agent_id: 0,
                states: pts.iter().map(|&(x, y)| AgentState { x, y, v: 0.0 }).collect(),
                actions: vec![Action::ZERO; pts.len() - 1],
                terminal: Terminal::None,
            }
        })
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_nonnegative(a in arb_traj(), b in arb_traj()) {
            let dab = pairwise_distance(&a, &b).unwrap();
            let dba = pairwise_distance(&b, &a).unwrap();
            prop_assert!(dab >= 0.0);
            prop_assert!((dab - dba).abs() < 1e-12);
        }

        #[test]
        fn identity_of_indiscernibles(a in arb_traj()) {
            prop_assert!(pairwise_distance(&a, &a).unwrap() < 1e-12);
        }

        #[test]
        fn triangle_inequality_same_length(
            pts in prop::collection::vec(
                ((-50.0..50.0f64, -5.0..5.0f64),
                 (-50.0..50.0f64, -5.0..5.0f64),
                 (-50.0..50.0f64, -5.0..5.0f64)),
                1..10,
            )
        ) {
            // per-index Euclidean means over equal lengths form a metric
            let a = traj(&pts.iter().map(|p| p.0).collect::<Vec<_>>());
            let b = traj(&pts.iter().map(|p| p.1).collect::<Vec<_>>());
            let c = traj(&pts.iter().map(|p| p.2).collect::<Vec<_>>());
            let ab = pairwise_distance(&a, &b).unwrap();
            let bc = pairwise_distance(&b, &c).unwrap();
            let ac = pairwise_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}

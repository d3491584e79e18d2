//! Learning reward models for cooperative multi-agent trajectory planning
//! from expert demonstrations.
//!
//! The crate couples a continuous-action Monte Carlo Tree Search planner
//! (the forward RL solver) with sampling-based Maximum Entropy IRL in the
//! style of Guided Cost Learning. The planner produces trajectories together
//! with their selection probabilities; the IRL trainer uses those to
//! importance-sample the partition function and run gradient ascent on the
//! reward parameters.
//!
//! Module map:
//! - [`env`]: deterministic highway environment (road, kinematics, collisions)
//! - [`features`]: per-step feature vector and trajectory feature averages
//! - [`reward`]: linear and two-layer reward models with exact gradients
//! - [`mcts`]: decoupled multi-agent UCT with progressive widening and the
//!   Softmax Q-Proposal final selection
//! - [`sim`]: glue between the environment and the search, episode sampling
//! - [`irl`]: importance-sampled likelihood gradient and the training loop
//! - [`eval`]: trajectory distance metrics and scenario reports
//! - [`toy`]: small enumerable MDPs used as test oracles

pub mod env;
pub mod eval;
pub mod features;
pub mod irl;
pub mod mcts;
pub mod reward;
pub mod seeding;
pub mod sim;
pub mod toy;

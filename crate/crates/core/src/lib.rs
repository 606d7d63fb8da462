//! Pedestrian position and goal prediction in semantic urban scenes.
//!
//! The pipeline turns a declarative scene description (roads, sidewalks,
//! crosswalks, obstacles, points of interest) into a potential cost map,
//! seeds a goal-conditioned hidden Markov model on top of a topological
//! map of the walkable space, grows both online from observed trajectories
//! with an instantaneous topological map and incremental Baum-Welch
//! updates, and answers filtering and long-horizon prediction queries.
//!
//! Modules follow the data flow:
//!
//! - [`scene`]: scene description text format and validation
//! - [`costmap`]: potential field evaluation and the sampled cost map
//! - [`topology`]: Delaunay-based prior topology and online growth
//! - [`ghmm`]: the growing HMM itself (seeding, growth, learning)
//! - [`inference`]: Bayesian filtering, marginals, prediction
//! - [`eval`]: trajectory corpora, training loop, model comparison
//! - [`synthetic`]: deterministic synthetic scenes and corpora

pub mod costmap;
mod error;
pub mod eval;
pub mod geom;
pub mod ghmm;
pub mod inference;
pub mod scene;
pub mod synthetic;
pub mod topology;

pub use error::{Error, Result};

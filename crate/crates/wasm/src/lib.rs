//! Browser bindings for the demo page: one [`Demo`] owns the pipeline
//! over a synthetic scene and exposes what the page draws — cost map
//! pixels, scene and topology geometry, streamed training, and
//! click-to-observe filtering with long-horizon prediction.
//!
//! All logic lives in the target-independent [`Inner`]; the
//! `#[wasm_bindgen]` wrapper only converts errors at the JS boundary, so
//! the crate builds and unit-tests on the host as well.

use serde_json::json;
use wasm_bindgen::prelude::*;

use ghmm_core::costmap::{compute_potential_map, PotentialCostMap};
use ghmm_core::eval::{self, Trajectory};
use ghmm_core::geom::Point;
use ghmm_core::ghmm::{
    goals_from_destinations, init_model_from_topology, GhmmModel, LearningConfig,
};
use ghmm_core::inference::{
    expected_position, filter_update, goal_marginal, initial_belief, position_marginal, predict,
    Belief,
};
use ghmm_core::scene::{list_destinations, SceneDescription};
use ghmm_core::synthetic;
use ghmm_core::topology::{build_prior_topology, TopologicalMap};
use ghmm_core::{Error, Result};

/// Cost map cell size in meters.
const RESOLUTION: f64 = 0.5;
/// Topology node spacing threshold in meters.
const TAU: f64 = 2.0;
/// Node nudge rate of the online topology update.
const EPSILON_ITM: f64 = 0.05;
/// Synthetic training trajectories held by one demo instance.
const CORPUS_SIZE: usize = 100;
/// Marginal entries below this mass are left out of the JSON payloads.
const MASS_CUTOFF: f64 = 1e-4;

struct Inner {
    scene: SceneDescription,
    map: PotentialCostMap,
    topo: TopologicalMap,
    model: GhmmModel,
    belief: Belief,
    corpus: Vec<Trajectory>,
    trained: usize,
    skipped: usize,
    resets: usize,
}

impl Inner {
    fn new(family: &str) -> Result<Inner> {
        let (scene, corpus) = match family {
            "corridor" => (
                synthetic::corridor_scene(),
                synthetic::corridor_corpus(CORPUS_SIZE, 41, true),
            ),
            "crossing" => (
                synthetic::crossing_scene(),
                synthetic::crossing_corpus(CORPUS_SIZE, 701, true),
            ),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown scene family {other:?}, expected corridor or crossing"
                )))
            }
        };
        let map = compute_potential_map(&scene, RESOLUTION, 0)?;
        let dests = list_destinations(&scene, TAU / 2.0);
        let learning = LearningConfig::for_tau(TAU);
        let topo = build_prior_topology(&map, &dests, TAU, EPSILON_ITM)?;
        let goals = goals_from_destinations(&topo, &dests, learning.dwell_threshold)?;
        let model = init_model_from_topology(&topo, &map, &goals, learning)?;
        let belief = initial_belief(&model);
        Ok(Inner {
            scene,
            map,
            topo,
            model,
            belief,
            corpus,
            trained: 0,
            skipped: 0,
            resets: 0,
        })
    }

    /// RGBA heatmap with the top image row at maximal y: light where
    /// walking is cheap, deepening to red as the potential climbs.
    fn cost_rgba(&self) -> Vec<u8> {
        let (w, h) = (self.map.width(), self.map.height());
        let lo = self.map.values().iter().copied().fold(f64::MAX, f64::min);
        let hi = self.map.values().iter().copied().fold(f64::MIN, f64::max);
        let lerp = |a: u8, b: u8, t: f64| (f64::from(a) + (f64::from(b) - f64::from(a)) * t) as u8;
        let mut px = Vec::with_capacity(w * h * 4);
        for row in (0..h).rev() {
            for col in 0..w {
                let v = self.map.value_at(col, row);
                let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                px.push(lerp(250, 146, t));
                px.push(lerp(250, 38, t));
                px.push(lerp(249, 38, t));
                px.push(255);
            }
        }
        px
    }

    fn scene_json(&self) -> String {
        let rings = |ps: &[Vec<Point>]| -> Vec<Vec<[f64; 2]>> {
            ps.iter()
                .map(|ring| ring.iter().map(|p| [p.x, p.y]).collect())
                .collect()
        };
        json!({
            "bounds": [
                self.scene.bounds.min.x,
                self.scene.bounds.min.y,
                self.scene.bounds.max.x,
                self.scene.bounds.max.y,
            ],
            "road_edges": rings(&self.scene.road_edges),
            "roads": rings(&self.scene.road_polygons),
            "crosswalks": rings(&self.scene.crosswalks),
            "sidewalks": rings(&self.scene.sidewalks),
            "obstacles": self.scene.obstacles.iter()
                .map(|o| [o.center.x, o.center.y, o.radius])
                .collect::<Vec<_>>(),
            "pois": self.scene.pois.iter()
                .map(|p| json!({"label": p.label, "x": p.position.x, "y": p.position.y}))
                .collect::<Vec<_>>(),
            "destinations": self.scene.destinations.iter()
                .map(|d| [d.x, d.y])
                .collect::<Vec<_>>(),
        })
        .to_string()
    }

    fn topology_json(&self) -> String {
        json!({
            "nodes": self.topo.nodes()
                .map(|n| json!({"id": n.id.0, "x": n.centroid.x, "y": n.centroid.y}))
                .collect::<Vec<_>>(),
            "edges": self.topo.edges()
                .map(|(a, b)| [a.0, b.0])
                .collect::<Vec<_>>(),
            "goals": self.model.goal_set().ids()
                .filter_map(|g| self.model.goal_set().point_of(g).map(|p| (g, p)))
                .map(|(g, p)| json!({"id": g.0, "x": p.x, "y": p.y}))
                .collect::<Vec<_>>(),
        })
        .to_string()
    }

    fn status_json(&self) -> String {
        json!({
            "states": self.model.n_states(),
            "nodes": self.model.node_count(),
            "goals": self.model.goal_set().len(),
            "trained": self.trained,
            "skipped": self.skipped,
            "total": self.corpus.len(),
            "resets": self.resets,
        })
        .to_string()
    }

    /// Trains on the next corpus trajectory and reports it for drawing.
    fn train_next(&mut self) -> Result<String> {
        if self.trained >= self.corpus.len() {
            return Ok(json!({"done": true, "trained": self.trained}).to_string());
        }
        let traj = self.corpus[self.trained].clone();
        let report = eval::train(
            &mut self.model,
            &mut self.topo,
            &self.map,
            std::slice::from_ref(&traj),
        )?;
        self.trained += 1;
        // Training may grow the state space; a held belief would be over
        // the old one.
        self.belief = initial_belief(&self.model);
        let skipped = report.skipped.first().map(|(_, why)| why.clone());
        if skipped.is_some() {
            self.skipped += 1;
        }
        Ok(json!({
            "done": false,
            "id": traj.id,
            "index": self.trained,
            "total": self.corpus.len(),
            "skipped": skipped,
            "points": traj.samples.iter()
                .map(|s| [s.position.x, s.position.y])
                .collect::<Vec<_>>(),
        })
        .to_string())
    }

    /// One filter update at the clicked point plus an H-step prediction.
    /// A degenerate belief restarts from the prior and is flagged.
    fn observe(&mut self, x: f64, y: f64, horizon: u32) -> Result<String> {
        let obs = Point::new(x, y);
        let mut reset = false;
        self.belief = match filter_update(&self.model, &self.belief, &obs) {
            Ok(b) => b,
            Err(Error::DegenerateBelief { .. }) => {
                self.resets += 1;
                reset = true;
                initial_belief(&self.model)
            }
            Err(e) => return Err(e),
        };
        let pred = predict(&self.model, &self.belief, u64::from(horizon.max(1)));
        let here = expected_position(&self.model, &self.belief);
        Ok(json!({
            "reset": reset,
            "expected": [here.x, here.y],
            "nodes": self.node_mass(&self.belief),
            "goals": goal_marginal(&self.model, &self.belief).iter()
                .filter(|(_, w)| **w > MASS_CUTOFF)
                .map(|(g, w)| json!([g.0, w]))
                .collect::<Vec<_>>(),
            "prediction": {
                "horizon": horizon,
                "expected": [pred.expected_position.x, pred.expected_position.y],
                "map_goal": pred.map_goal.0,
                "nodes": self.node_mass(&pred.state_belief),
            },
        })
        .to_string())
    }

    /// Position marginal as drawable `[x, y, mass]` triples.
    fn node_mass(&self, belief: &Belief) -> Vec<[f64; 3]> {
        position_marginal(&self.model, belief)
            .iter()
            .filter(|(_, w)| **w > MASS_CUTOFF)
            .filter_map(|(n, w)| self.model.node_centroid(*n).map(|p| [p.x, p.y, *w]))
            .collect()
    }

    fn reset_belief(&mut self) {
        self.belief = initial_belief(&self.model);
    }
}

/// One interactive pipeline instance over a synthetic scene.
#[wasm_bindgen]
pub struct Demo(Inner);

#[wasm_bindgen]
impl Demo {
    /// `family` is "crossing" or "corridor".
    #[wasm_bindgen(constructor)]
    pub fn new(family: &str) -> std::result::Result<Demo, JsError> {
        Inner::new(family).map(Demo).map_err(js)
    }

    /// Cost map width in cells.
    pub fn width(&self) -> u32 {
        self.0.map.width() as u32
    }

    /// Cost map height in cells.
    pub fn height(&self) -> u32 {
        self.0.map.height() as u32
    }

    /// RGBA pixels of the cost map, row-major from the top image row.
    pub fn cost_rgba(&self) -> Vec<u8> {
        self.0.cost_rgba()
    }

    /// Scene geometry (polygons, POIs, destinations) as JSON.
    pub fn scene_json(&self) -> String {
        self.0.scene_json()
    }

    /// Current topology nodes, edges, and goals as JSON.
    pub fn topology_json(&self) -> String {
        self.0.topology_json()
    }

    /// Model and training counters as JSON.
    pub fn status_json(&self) -> String {
        self.0.status_json()
    }

    /// Trains on the next stored trajectory; `{"done": true}` when the
    /// corpus is exhausted.
    pub fn train_next(&mut self) -> std::result::Result<String, JsError> {
        self.0.train_next().map_err(js)
    }

    /// Filters the clicked world point into the belief and predicts
    /// `horizon` steps ahead.
    pub fn observe(
        &mut self,
        x: f64,
        y: f64,
        horizon: u32,
    ) -> std::result::Result<String, JsError> {
        self.0.observe(x, y, horizon).map_err(js)
    }

    /// Forgets the observation history, back to the model prior.
    pub fn reset_belief(&mut self) {
        self.0.reset_belief();
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(start)]
pub fn start() {
    console_error_panic_hook::set_once();
}

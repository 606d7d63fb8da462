//! The growing hidden Markov model λ = (π, A, b).
//!
//! States are (node, goal) pairs over the current topology. The prior and
//! transition structure are seeded from the potential cost map: a node's
//! prior is 1 − f(n) (normalized), and a transition from node j to an
//! edge-connected node i with the same goal gets one of four seed weights
//! depending on whether the motion descends, stays level, or climbs the
//! cost field. Structure grows with the topology; parameters are learned
//! by blending incremental Baum-Welch statistics at a configurable rate.
//! The observation model b is a fixed isotropic Gaussian per node and is
//! never re-estimated.

mod io;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::costmap::{sample_cost, PotentialCostMap};
use crate::geom::{Point, Rect};
use crate::topology::{NodeId, TopologicalMap, TopologyDelta};
use crate::{Error, Result};

pub use io::{load_model, model_to_text, save_model, save_model_text};

/// Expected visit mass below which a training sequence does not count as
/// evidence about a row. The scaled posterior is nonzero almost
/// everywhere, so without a floor every row would be flagged learned by
/// the first sequence and protected from reseeding forever.
const LEARNED_MASS_FLOOR: f64 = 1e-9;

/// Stable identifier of a goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GoalId(pub u32);

impl std::fmt::Display for GoalId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A hidden state: the pedestrian is near `node`, heading for `goal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GhmmState {
    pub node: NodeId,
    pub goal: GoalId,
}

/// The known goals, each anchored at a topology node.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSet {
    goals: BTreeMap<GoalId, (NodeId, Point)>,
    /// Dwell timesteps after which a node is promoted to a goal.
    pub dwell_threshold: u64,
    next_id: u32,
}

impl GoalSet {
    pub fn new(dwell_threshold: u64) -> Self {
        GoalSet {
            goals: BTreeMap::new(),
            dwell_threshold,
            next_id: 0,
        }
    }

    pub fn add_goal(&mut self, node: NodeId, point: Point) -> GoalId {
        let id = GoalId(self.next_id);
        self.next_id += 1;
        self.goals.insert(id, (node, point));
        id
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = GoalId> + '_ {
        self.goals.keys().copied()
    }

    pub fn node_of(&self, id: GoalId) -> Option<NodeId> {
        self.goals.get(&id).map(|(n, _)| *n)
    }

    pub fn point_of(&self, id: GoalId) -> Option<Point> {
        self.goals.get(&id).map(|(_, p)| *p)
    }

    pub fn goal_at_node(&self, node: NodeId) -> Option<GoalId> {
        self.goals
            .iter()
            .find(|(_, (n, _))| *n == node)
            .map(|(id, _)| *id)
    }

    /// Closest existing goal within `radius` of `p`, if any.
    pub fn near(&self, p: &Point, radius: f64) -> Option<GoalId> {
        self.goals
            .iter()
            .map(|(id, (_, gp))| (gp.dist(p), *id))
            .filter(|(d, _)| *d < radius)
            .min_by(|a, b| a.partial_cmp(b).expect("finite distances"))
            .map(|(_, id)| id)
    }
}

/// Learning and observation-model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningConfig {
    /// Cost-difference threshold separating level from sloped transitions.
    pub epsilon: f64,
    /// Observation noise std-dev; the shared covariance is sigma_obs² I.
    pub sigma_obs: f64,
    /// Dwell timesteps promoting a node to a goal.
    pub dwell_threshold: u64,
    /// Blend rate for Baum-Welch statistics; 1 = exact batch step.
    pub bw_learning_rate: f64,
    /// Preset prior weight; read only by the baseline policy.
    pub pi0: f64,
    /// Preset transition weight; read only by the baseline policy.
    pub a0: f64,
}

impl LearningConfig {
    /// Defaults scaled to the topology's insertion threshold.
    pub fn for_tau(tau: f64) -> Self {
        LearningConfig {
            epsilon: 0.05,
            sigma_obs: tau / 2.0,
            dwell_threshold: 50,
            bw_learning_rate: 0.1,
            pi0: 0.5,
            a0: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if !(self.sigma_obs > 0.0) || !self.sigma_obs.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sigma_obs must be positive and finite, got {}",
                self.sigma_obs
            )));
        }
        if !(self.bw_learning_rate > 0.0 && self.bw_learning_rate <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "bw_learning_rate must lie in (0, 1], got {}",
                self.bw_learning_rate
            )));
        }
        if self.dwell_threshold == 0 {
            return Err(Error::InvalidParameter(
                "dwell_threshold must be at least 1".into(),
            ));
        }
        for (name, v) in [("pi0", self.pi0), ("a0", self.a0)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// How new states and transitions receive their initial weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedPolicy {
    /// Priors 1 − f(n), transitions from the four-case cost comparison.
    CostMap,
    /// Constant presets pi0 / a0 from the config (the prior-art baseline).
    Preset,
}

/// The growing HMM. Rows of A are stored sparsely as (target index,
/// weight) pairs sorted by target; every row contains its self-loop, so
/// rows are never empty and always normalize.
#[derive(Debug, Clone, PartialEq)]
pub struct GhmmModel {
    states: Vec<GhmmState>,
    index: BTreeMap<(NodeId, GoalId), usize>,
    prior: Vec<f64>,
    rows: Vec<Vec<(u32, f64)>>,
    /// Rows touched by Baum-Welch keep their learned values when the
    /// topology moves nodes; seeded rows are re-derived instead.
    row_learned: Vec<bool>,
    node_centroids: BTreeMap<NodeId, Point>,
    /// Cost-map samples f(n) per node; empty under the preset policy.
    node_costs: BTreeMap<NodeId, f64>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    goal_set: GoalSet,
    pub config: LearningConfig,
    seed_policy: SeedPolicy,
    extent: Rect,
    topology_revision: u64,
}

impl GhmmModel {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[GhmmState] {
        &self.states
    }

    pub fn state_index(&self, node: NodeId, goal: GoalId) -> Option<usize> {
        self.index.get(&(node, goal)).copied()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    /// Outgoing transition row of state `i`: (target index, probability),
    /// sorted by target.
    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        match self.rows[from].binary_search_by_key(&(to as u32), |e| e.0) {
            Ok(k) => self.rows[from][k].1,
            Err(_) => 0.0,
        }
    }

    pub fn is_learned(&self, row: usize) -> bool {
        self.row_learned[row]
    }

    pub fn goal_set(&self) -> &GoalSet {
        &self.goal_set
    }

    pub fn seed_policy(&self) -> SeedPolicy {
        self.seed_policy
    }

    pub fn extent(&self) -> Rect {
        self.extent
    }

    /// Revision of the topology this model is structurally in sync with.
    pub fn topology_revision(&self) -> u64 {
        self.topology_revision
    }

    pub fn node_centroid(&self, node: NodeId) -> Option<Point> {
        self.node_centroids.get(&node).copied()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.node_centroids.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.node_centroids.len()
    }

    pub fn nodes_connected(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency.get(&a).is_some_and(|s| s.contains(&b))
    }

    /// Observation densities for all states at once; states sharing a node
    /// share the value.
    pub fn likelihood_vector(&self, obs: &Point) -> Vec<f64> {
        let per_node: BTreeMap<NodeId, f64> = self
            .node_centroids
            .iter()
            .map(|(&n, c)| (n, gaussian2d(obs, c, self.config.sigma_obs)))
            .collect();
        self.states.iter().map(|s| per_node[&s.node]).collect()
    }

    /// One transition-model step: out_k = Σ_j w_j · A_jk.
    pub fn propagate(&self, weights: &[f64]) -> Vec<f64> {
        debug_assert_eq!(weights.len(), self.states.len());
        let mut out = vec![0.0; weights.len()];
        for (j, row) in self.rows.iter().enumerate() {
            let w = weights[j];
            if w == 0.0 {
                continue;
            }
            for &(k, a) in row {
                out[k as usize] += w * a;
            }
        }
        out
    }

    /// Checks every structural and stochastic invariant.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.states.len();
        if self.prior.len() != n || self.rows.len() != n || self.row_learned.len() != n {
            return Err(Error::Model(
                "state-indexed vectors disagree on length".into(),
            ));
        }
        if self.index.len() != n {
            return Err(Error::Model("duplicate (node, goal) state".into()));
        }
        if self.goal_set.is_empty() {
            return Err(Error::Model("model must have at least one goal".into()));
        }
        for (i, s) in self.states.iter().enumerate() {
            if self.index.get(&(s.node, s.goal)) != Some(&i) {
                return Err(Error::Model(format!("state {i} missing from the index")));
            }
            if !self.node_centroids.contains_key(&s.node) {
                return Err(Error::Model(format!("state {i} references unknown node")));
            }
            if self.goal_set.point_of(s.goal).is_none() {
                return Err(Error::Model(format!("state {i} references unknown goal")));
            }
        }
        for (node, centroid) in &self.node_centroids {
            if !self.extent.contains(centroid) {
                return Err(Error::Model(format!("node {node} centroid outside extent")));
            }
        }
        let sum: f64 = self.prior.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.prior.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::Model(format!("prior sums to {sum}, expected 1")));
        }
        for (j, row) in self.rows.iter().enumerate() {
            let mut sum = 0.0;
            let mut prev: Option<u32> = None;
            for &(k, a) in row {
                if prev.is_some_and(|p| p >= k) {
                    return Err(Error::Model(format!("row {j} targets not ascending")));
                }
                prev = Some(k);
                if !(a >= 0.0) || !a.is_finite() {
                    return Err(Error::Model(format!("row {j} has weight {a}")));
                }
                sum += a;
                let (sj, sk) = (&self.states[j], &self.states[k as usize]);
                let allowed = j == k as usize
                    || (sj.goal == sk.goal && self.nodes_connected(sj.node, sk.node));
                if !allowed {
                    return Err(Error::Model(format!(
                        "structurally forbidden transition {j} -> {k}"
                    )));
                }
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Model(format!("row {j} sums to {sum}, expected 1")));
            }
            if row.binary_search_by_key(&(j as u32), |e| e.0).is_err() {
                return Err(Error::Model(format!("row {j} lost its self-loop")));
            }
        }
        self.config.validate()
    }

    /// Seed weight of the transition (source node -> target node) under
    /// the model's policy.
    fn seed_weight(&self, source: NodeId, target: NodeId) -> f64 {
        match self.seed_policy {
            SeedPolicy::Preset => self.config.a0,
            SeedPolicy::CostMap => transition_seed(
                self.node_costs[&target],
                self.node_costs[&source],
                source == target,
                self.config.epsilon,
            ),
        }
    }

    /// Raw (unnormalized) prior weight of a new state at `node`.
    fn seed_prior(&self, node: NodeId) -> f64 {
        match self.seed_policy {
            SeedPolicy::Preset => self.config.pi0,
            SeedPolicy::CostMap => 1.0 - self.node_costs[&node],
        }
    }

    /// Recomputes one row from the current adjacency and costs.
    fn reseed_row(&mut self, i: usize) {
        let s = self.states[i];
        let mut row: Vec<(u32, f64)> = Vec::with_capacity(1 + self.adjacency[&s.node].len());
        row.push((i as u32, self.seed_weight(s.node, s.node)));
        for &m in &self.adjacency[&s.node] {
            let k = self.index[&(m, s.goal)];
            row.push((k as u32, self.seed_weight(s.node, m)));
        }
        row.sort_unstable_by_key(|e| e.0);
        normalize_row(&mut row);
        self.rows[i] = row;
        self.row_learned[i] = false;
    }

    fn renormalize_prior(&mut self) {
        let sum: f64 = self.prior.iter().sum();
        if sum > 0.0 {
            for p in &mut self.prior {
                *p /= sum;
            }
        } else {
            // Degenerate seed (every node at maximal cost): fall back to
            // uniform rather than an invalid all-zero prior.
            let n = self.prior.len() as f64;
            self.prior.iter_mut().for_each(|p| *p = 1.0 / n);
        }
    }

    /// Appends the state (node, goal); prior gets the raw seed weight
    /// (renormalize afterwards). The row starts as a bare self-loop and
    /// must be reseeded once adjacency is final.
    fn push_state(&mut self, node: NodeId, goal: GoalId) {
        let i = self.states.len();
        self.states.push(GhmmState { node, goal });
        self.index.insert((node, goal), i);
        self.prior.push(self.seed_prior(node));
        self.rows.push(vec![(i as u32, 1.0)]);
        self.row_learned.push(false);
    }

    /// Drops the states at the given indices, remapping rows and the index.
    fn remove_states(&mut self, drop: &BTreeSet<usize>) {
        if drop.is_empty() {
            return;
        }
        let n = self.states.len();
        let mut remap: Vec<Option<u32>> = Vec::with_capacity(n);
        let mut next = 0u32;
        for i in 0..n {
            if drop.contains(&i) {
                remap.push(None);
            } else {
                remap.push(Some(next));
                next += 1;
            }
        }
        let keep = |i: usize| !drop.contains(&i);
        self.states = take_kept(std::mem::take(&mut self.states), keep);
        self.prior = take_kept(std::mem::take(&mut self.prior), keep);
        self.row_learned = take_kept(std::mem::take(&mut self.row_learned), keep);
        let rows = take_kept(std::mem::take(&mut self.rows), keep);
        self.rows = rows
            .into_iter()
            .map(|row| {
                let mut out: Vec<(u32, f64)> = row
                    .into_iter()
                    .filter_map(|(k, a)| remap[k as usize].map(|nk| (nk, a)))
                    .collect();
                normalize_row(&mut out);
                out
            })
            .collect();
        self.index = self
            .states
            .iter()
            .enumerate()
            .map(|(i, s)| ((s.node, s.goal), i))
            .collect();
    }
}

fn take_kept<T>(v: Vec<T>, keep: impl Fn(usize) -> bool) -> Vec<T> {
    v.into_iter()
        .enumerate()
        .filter_map(|(i, x)| keep(i).then_some(x))
        .collect()
}

fn normalize_row(row: &mut [(u32, f64)]) {
    let sum: f64 = row.iter().map(|e| e.1).sum();
    debug_assert!(sum > 0.0, "rows always contain a positive self-loop");
    for e in row {
        e.1 /= sum;
    }
}

/// Isotropic bivariate Gaussian density.
fn gaussian2d(x: &Point, mean: &Point, sigma: f64) -> f64 {
    let peak = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    peak * (-x.dist_sq(mean) / (2.0 * sigma * sigma)).exp()
}

/// Unnormalized seed weight for a transition, from the four-case cost
/// comparison. `alpha` is the target node's cost, `beta` the source's.
/// Descending the cost field (beta > alpha by more than `epsilon`) is
/// strongly preferred (0.8), climbing is discouraged (0.2), level motion
/// is neutral (0.5), and staying put is rare (0.05).
pub fn transition_seed(alpha: f64, beta: f64, is_self: bool, epsilon: f64) -> f64 {
    if is_self {
        return 0.05;
    }
    let d = beta - alpha;
    if d > 0.0 && d.abs() > epsilon {
        0.8
    } else if d < 0.0 && d.abs() > epsilon {
        0.2
    } else {
        0.5
    }
}

fn build_model(
    topo: &TopologicalMap,
    map: Option<&PotentialCostMap>,
    goals: &GoalSet,
    config: LearningConfig,
    policy: SeedPolicy,
) -> Result<GhmmModel> {
    config.validate()?;
    if topo.is_empty() {
        return Err(Error::Model(
            "cannot build a model over an empty topology".into(),
        ));
    }
    if goals.is_empty() {
        return Err(Error::Model("cannot build a model with no goals".into()));
    }
    for g in goals.ids() {
        let node = goals.node_of(g).expect("listed goal");
        if topo.node(node).is_none() {
            return Err(Error::Model(format!(
                "goal {g} anchored at unknown node {node}"
            )));
        }
    }
    let extent = match map {
        Some(m) => m.extent(),
        None => topo.bounds(),
    };
    let mut node_costs = BTreeMap::new();
    if let Some(m) = map {
        for n in topo.nodes() {
            node_costs.insert(n.id, sample_cost(m, &n.centroid)?);
        }
    }
    // The config is authoritative for the dwell threshold; keep the goal
    // set's copy in sync so discovery reads one value.
    let mut goal_set = goals.clone();
    goal_set.dwell_threshold = config.dwell_threshold;
    let mut model = GhmmModel {
        states: Vec::new(),
        index: BTreeMap::new(),
        prior: Vec::new(),
        rows: Vec::new(),
        row_learned: Vec::new(),
        node_centroids: topo.nodes().map(|n| (n.id, n.centroid)).collect(),
        node_costs,
        adjacency: topo
            .nodes()
            .map(|n| (n.id, topo.neighbors(n.id).collect()))
            .collect(),
        goal_set,
        config,
        seed_policy: policy,
        extent,
        topology_revision: topo.revision(),
    };
    for node in model.node_centroids.keys().copied().collect::<Vec<_>>() {
        for goal in model.goal_set.ids().collect::<Vec<_>>() {
            model.push_state(node, goal);
        }
    }
    model.renormalize_prior();
    for i in 0..model.states.len() {
        model.reseed_row(i);
    }
    debug_assert!(model.check_invariants().is_ok());
    Ok(model)
}

/// Builds the cost-map-seeded model over the full (node, goal) product.
pub fn init_model_from_topology(
    topo: &TopologicalMap,
    map: &PotentialCostMap,
    goals: &GoalSet,
    config: LearningConfig,
) -> Result<GhmmModel> {
    build_model(topo, Some(map), goals, config, SeedPolicy::CostMap)
}

/// Builds the preset-prior baseline: same structure as
/// [`init_model_from_topology`], but constant prior weights `pi0` and
/// transition weights `a0` regardless of the cost field. It trains and
/// infers through exactly the same code paths as the cost-seeded model.
pub fn make_baseline(
    topo: &TopologicalMap,
    goals: &GoalSet,
    pi0: f64,
    a0: f64,
    mut config: LearningConfig,
) -> Result<GhmmModel> {
    config.pi0 = pi0;
    config.a0 = a0;
    build_model(topo, None, goals, config, SeedPolicy::Preset)
}

/// Mirrors a topology delta onto the model: states for added nodes are
/// created for every goal (priors re-seeded and renormalized), states for
/// removed nodes are deleted, changed edges are seeded via
/// [`transition_seed`], and moved nodes update their observation means.
/// Rows already learned keep their values (structure changes aside);
/// seeded rows are re-derived from the new geometry.
pub fn apply_topology_delta(
    model: &mut GhmmModel,
    delta: &TopologyDelta,
    map: &PotentialCostMap,
) -> Result<()> {
    if delta.base_revision != model.topology_revision {
        return Err(Error::StaleDelta {
            delta_revision: delta.base_revision,
            map_revision: model.topology_revision,
        });
    }
    model.topology_revision += 1;
    if !delta.is_structural() {
        return Ok(());
    }

    let mut changed_nodes: BTreeSet<NodeId> = BTreeSet::new();

    for (id, old, new) in &delta.nodes_moved {
        let c = model
            .node_centroids
            .get_mut(id)
            .ok_or_else(|| Error::Model(format!("move references unknown node {id}")))?;
        if c != old {
            return Err(Error::Model(format!(
                "move of node {id} does not match the model's centroid"
            )));
        }
        *c = *new;
        if matches!(model.seed_policy, SeedPolicy::CostMap) {
            model.node_costs.insert(*id, sample_cost(map, new)?);
        }
        changed_nodes.insert(*id);
    }

    let goal_ids: Vec<GoalId> = model.goal_set.ids().collect();
    for (id, centroid) in &delta.nodes_added {
        if model.node_centroids.contains_key(id) {
            return Err(Error::Model(format!("added node {id} already exists")));
        }
        model.node_centroids.insert(*id, *centroid);
        if matches!(model.seed_policy, SeedPolicy::CostMap) {
            model.node_costs.insert(*id, sample_cost(map, centroid)?);
        }
        model.adjacency.insert(*id, BTreeSet::new());
        for &g in &goal_ids {
            model.push_state(*id, g);
        }
        changed_nodes.insert(*id);
    }

    for &(a, b) in &delta.edges_added {
        let known = model.node_centroids.contains_key(&a) && model.node_centroids.contains_key(&b);
        if !known || a == b {
            return Err(Error::Model(format!("cannot add edge ({a}, {b})")));
        }
        model.adjacency.get_mut(&a).expect("known").insert(b);
        model.adjacency.get_mut(&b).expect("known").insert(a);
        changed_nodes.insert(a);
        changed_nodes.insert(b);
    }
    for &(a, b) in &delta.edges_removed {
        let present = model.adjacency.get_mut(&a).is_some_and(|s| s.remove(&b));
        if !present {
            return Err(Error::Model(format!(
                "cannot remove absent edge ({a}, {b})"
            )));
        }
        model.adjacency.get_mut(&b).expect("known").remove(&a);
        changed_nodes.insert(a);
        changed_nodes.insert(b);
    }

    if !delta.nodes_removed.is_empty() {
        let mut drop_states: BTreeSet<usize> = BTreeSet::new();
        for id in &delta.nodes_removed {
            if let Some(g) = model.goal_set.goal_at_node(*id) {
                return Err(Error::Model(format!(
                    "cannot remove node {id}: it anchors goal {g}"
                )));
            }
            let nbrs = model
                .adjacency
                .remove(id)
                .ok_or_else(|| Error::Model(format!("removed node {id} unknown to model")))?;
            if !nbrs.is_empty() {
                return Err(Error::Model(format!(
                    "removed node {id} still has edges in the delta"
                )));
            }
            model.node_centroids.remove(id);
            model.node_costs.remove(id);
            for &g in &goal_ids {
                drop_states.insert(model.index[&(*id, g)]);
            }
            changed_nodes.remove(id);
        }
        model.remove_states(&drop_states);
    }

    // Neighbors of changed nodes see changed target costs in their rows.
    let mut affected = changed_nodes.clone();
    for n in &changed_nodes {
        affected.extend(model.adjacency[n].iter().copied());
    }
    for i in 0..model.states.len() {
        let s = model.states[i];
        if !affected.contains(&s.node) {
            continue;
        }
        if model.row_learned[i] {
            // Learned rows: reconcile structure only. Drop targets that are
            // no longer adjacent, seed targets that newly are, renormalize.
            let node = s.node;
            let goal = s.goal;
            let mut row = std::mem::take(&mut model.rows[i]);
            row.retain(|&(k, _)| {
                let t = model.states[k as usize];
                k as usize == i || model.adjacency[&node].contains(&t.node) && t.goal == goal
            });
            let existing: BTreeSet<u32> = row.iter().map(|e| e.0).collect();
            for &m in &model.adjacency[&node] {
                let k = model.index[&(m, goal)] as u32;
                if !existing.contains(&k) {
                    row.push((k, model.seed_weight(node, m)));
                }
            }
            row.sort_unstable_by_key(|e| e.0);
            normalize_row(&mut row);
            model.rows[i] = row;
        } else {
            model.reseed_row(i);
        }
    }
    model.renormalize_prior();
    Ok(())
}

/// Promotes every node that has dwelled long enough into a goal, unless an
/// existing goal lies within `tau/2`. New goals extend the state set by one
/// full (nodes x 1) layer, seeded like initialization (node costs are
/// already cached, so no map lookup is needed). Promoted nodes are pinned
/// in the topology so they can never be moved or removed.
///
/// Returns the newly created goal ids.
pub fn update_goals(model: &mut GhmmModel, topo: &mut TopologicalMap) -> Result<Vec<GoalId>> {
    let merge_radius = topo.tau / 2.0;
    let candidates: Vec<(NodeId, Point)> = topo
        .nodes()
        .filter(|n| n.dwell_accumulator >= model.goal_set.dwell_threshold)
        .filter(|n| model.goal_set.goal_at_node(n.id).is_none())
        .filter(|n| model.goal_set.near(&n.centroid, merge_radius).is_none())
        .map(|n| (n.id, n.centroid))
        .collect();

    let mut created = Vec::new();
    for (node, centroid) in candidates {
        // Re-check against goals created earlier in this same pass.
        if model.goal_set.near(&centroid, merge_radius).is_some() {
            continue;
        }
        let g = model.goal_set.add_goal(node, centroid);
        topo.pin_node(node)?;
        created.push(g);
        let nodes: Vec<NodeId> = model.node_centroids.keys().copied().collect();
        for n in nodes {
            model.push_state(n, g);
        }
    }
    if !created.is_empty() {
        model.renormalize_prior();
        for i in 0..model.states.len() {
            if created.contains(&model.states[i].goal) {
                model.reseed_row(i);
            }
        }
        debug_assert!(
            model.check_invariants().is_ok(),
            "{:?}",
            model.check_invariants()
        );
    }
    Ok(created)
}

/// Builds a goal set anchored at the topology nodes sitting on the given
/// destination points (as placed by prior-topology construction). Two
/// destinations resolving to the same node yield one goal.
pub fn goals_from_destinations(
    topo: &TopologicalMap,
    destinations: &[Point],
    dwell_threshold: u64,
) -> Result<GoalSet> {
    let mut set = GoalSet::new(dwell_threshold);
    for d in destinations {
        let (dist, node) = topo
            .nodes()
            .map(|n| (n.centroid.dist(d), n.id))
            .min_by(|a, b| a.partial_cmp(b).expect("finite distances"))
            .ok_or_else(|| Error::Model("empty topology has no destination nodes".into()))?;
        if dist > 1e-6 {
            return Err(Error::Model(format!(
                "no topology node at destination ({}, {}); nearest is {dist} m away",
                d.x, d.y
            )));
        }
        if set.goal_at_node(node).is_none() {
            set.add_goal(node, topo.node(node).expect("listed node").centroid);
        }
    }
    if set.is_empty() {
        return Err(Error::Model("destination list produced no goals".into()));
    }
    Ok(set)
}

/// Gaussian observation density of `obs` under state `state_index`.
/// Depends only on the state's node.
pub fn observation_likelihood(model: &GhmmModel, state_index: usize, obs: &Point) -> f64 {
    let s = &model.states[state_index];
    gaussian2d(obs, &model.node_centroids[&s.node], model.config.sigma_obs)
}

/// Scaled forward pass; returns per-step likelihood vectors, scaled alphas
/// and the scale factors c_t (log P = sum of ln c_t).
fn forward_scaled(
    model: &GhmmModel,
    sequence: &[Point],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>)> {
    let n = model.n_states();
    let mut liks = Vec::with_capacity(sequence.len());
    let mut alphas: Vec<Vec<f64>> = Vec::with_capacity(sequence.len());
    let mut scales = Vec::with_capacity(sequence.len());
    for (t, obs) in sequence.iter().enumerate() {
        let lik = model.likelihood_vector(obs);
        let mut a: Vec<f64> = if t == 0 {
            model.prior.iter().zip(&lik).map(|(p, l)| p * l).collect()
        } else {
            let mut pred = model.propagate(&alphas[t - 1]);
            for (x, l) in pred.iter_mut().zip(&lik) {
                *x *= l;
            }
            pred
        };
        let c: f64 = a.iter().sum();
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::NumericalUnderflow(format!(
                "forward mass vanished at timestep {t}; observation irreconcilable with the model"
            )));
        }
        a.iter_mut().for_each(|x| *x /= c);
        debug_assert_eq!(a.len(), n);
        liks.push(lik);
        alphas.push(a);
        scales.push(c);
    }
    Ok((liks, alphas, scales))
}

/// Log-likelihood of a sequence under the model, via the scaled forward
/// algorithm. Observations need not lie within the map extent (the
/// Gaussian observation model is defined everywhere).
pub fn sequence_loglik(model: &GhmmModel, sequence: &[Point]) -> Result<f64> {
    if sequence.is_empty() {
        return Err(Error::InvalidSequence("empty observation sequence".into()));
    }
    if let Some(p) = sequence.iter().find(|p| !p.is_finite()) {
        return Err(Error::InvalidSequence(format!(
            "non-finite observation ({}, {})",
            p.x, p.y
        )));
    }
    match forward_scaled(model, sequence) {
        Ok((_, _, scales)) => Ok(scales.iter().map(|c| c.ln()).sum()),
        Err(Error::NumericalUnderflow(_)) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// One incremental Baum-Welch update on a single observation sequence.
///
/// Runs scaled forward-backward, forms the expected occupancy (gamma) and
/// transition (xi) statistics, and blends them into pi and A at
/// `bw_learning_rate`: rate 1 reproduces one exact batch re-estimation
/// step, rate 0 leaves the model untouched. Rows never visited by the
/// sequence keep their current values; the observation model is fixed.
pub fn incremental_baum_welch(model: &mut GhmmModel, sequence: &[Point]) -> Result<()> {
    if sequence.len() < 2 {
        return Err(Error::InvalidSequence(format!(
            "Baum-Welch needs at least 2 observations, got {}",
            sequence.len()
        )));
    }
    for p in sequence {
        if !p.is_finite() || !model.extent.contains(p) {
            return Err(Error::InvalidSequence(format!(
                "observation ({}, {}) outside the scene extent",
                p.x, p.y
            )));
        }
    }
    let rate = model.config.bw_learning_rate;
    if rate == 0.0 {
        return Ok(());
    }

    let tt = sequence.len();
    let n = model.n_states();
    let (liks, alphas, scales) = forward_scaled(model, sequence)?;

    // Scaled backward pass.
    let mut betas: Vec<Vec<f64>> = vec![vec![0.0; n]; tt];
    betas[tt - 1].iter_mut().for_each(|b| *b = 1.0);
    for t in (0..tt - 1).rev() {
        let mut b = vec![0.0; n];
        for (i, row) in model.rows.iter().enumerate() {
            let mut acc = 0.0;
            for &(k, a) in row {
                acc += a * liks[t + 1][k as usize] * betas[t + 1][k as usize];
            }
            b[i] = acc / scales[t + 1];
        }
        betas[t] = b;
    }

    // Occupancy and transition statistics.
    let gamma0: Vec<f64> = alphas[0]
        .iter()
        .zip(&betas[0])
        .map(|(a, b)| a * b)
        .collect();
    let mut gamma_sum = vec![0.0; n];
    let mut xi_sum: Vec<Vec<f64>> = model.rows.iter().map(|row| vec![0.0; row.len()]).collect();
    for t in 0..tt - 1 {
        for (i, row) in model.rows.iter().enumerate() {
            let ai = alphas[t][i];
            if ai == 0.0 {
                continue;
            }
            gamma_sum[i] += ai * betas[t][i];
            for (slot, &(k, a)) in row.iter().enumerate() {
                xi_sum[i][slot] +=
                    ai * a * liks[t + 1][k as usize] * betas[t + 1][k as usize] / scales[t + 1];
            }
        }
    }

    // Blend priors with gamma_0 and rows with the sequence's expected
    // transition counts. Counts are blended unnormalized: a row's move is
    // proportional to the evidence mass the sequence actually deposited
    // on it, so rows along the walked route converge to the empirical
    // flow while rows the posterior only grazes keep their seeds. At
    // rate 1 normalization divides the counts by gamma, recovering the
    // exact batch re-estimate.
    for (p, g) in model.prior.iter_mut().zip(&gamma0) {
        *p = (1.0 - rate) * *p + rate * g;
    }
    model.renormalize_prior();
    for i in 0..n {
        if gamma_sum[i] <= 0.0 {
            continue;
        }
        let row = &mut model.rows[i];
        for (slot, e) in row.iter_mut().enumerate() {
            e.1 = (1.0 - rate) * e.1 + rate * xi_sum[i][slot];
        }
        normalize_row(row);
        if gamma_sum[i] > LEARNED_MASS_FLOOR {
            model.row_learned[i] = true;
        }
    }
    Ok(())
}

//! Topological maps of walkable space: the prior grid-plus-destinations
//! map and its online adaptation with the Instantaneous Topological Map.
//!
//! The map never mutates in place during an update. [`TopologicalMap::itm_update`]
//! analyzes an observation and returns a [`TopologyDelta`]; [`TopologicalMap::apply_delta`]
//! replays the delta onto the map. This split lets the model layer apply
//! the same structural change to its state space and makes every update
//! record/replay-testable.

pub mod delaunay;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costmap::PotentialCostMap;
use crate::geom::{Point, Rect};
use crate::{Error, Result};

pub use delaunay::delaunay_edges;

/// Stable identifier of a topology node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A node of the topological map.
#[derive(Debug, Clone, PartialEq)]
pub struct TopoNode {
    pub id: NodeId,
    pub centroid: Point,
    /// Number of observations matched to this node.
    pub hit_count: u64,
    /// Longest run of consecutive matches here, minus the arrival step:
    /// an observer stays k-1 timesteps when k observations match in a row.
    /// Feeds goal discovery.
    pub dwell_accumulator: u64,
    /// Pinned nodes (destinations, discovered goals) never move and are
    /// never removed by the ITM.
    pub pinned: bool,
}

/// Structural difference between two consecutive map states.
///
/// Deltas replay exactly: applying a delta to the map state it was built
/// against reproduces the post-update map, including hit/dwell counters
/// and the consecutive-match streak.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopologyDelta {
    /// Revision of the map this delta was generated against.
    pub base_revision: u64,
    pub nodes_added: Vec<(NodeId, Point)>,
    pub nodes_removed: Vec<NodeId>,
    pub edges_added: Vec<(NodeId, NodeId)>,
    pub edges_removed: Vec<(NodeId, NodeId)>,
    /// (id, old centroid, new centroid)
    pub nodes_moved: Vec<(NodeId, Point, Point)>,
    /// Node whose hit_count increments (the matched node).
    pub hit_node: Option<NodeId>,
    /// Node matched twice in a row (its streak extended this step).
    pub dwell_node: Option<NodeId>,
    /// Consecutive-match streak after the update.
    pub streak_after: Option<(NodeId, u64)>,
}

impl TopologyDelta {
    /// True when the delta changes nodes or edges (counters aside).
    pub fn is_structural(&self) -> bool {
        !(self.nodes_added.is_empty()
            && self.nodes_removed.is_empty()
            && self.edges_added.is_empty()
            && self.edges_removed.is_empty()
            && self.nodes_moved.is_empty())
    }

    fn is_empty(&self) -> bool {
        !self.is_structural()
            && self.hit_node.is_none()
            && self.dwell_node.is_none()
            && self.streak_after.is_none()
    }
}

/// Undirected graph of nodes covering walkable space.
#[derive(Debug, Clone)]
pub struct TopologicalMap {
    nodes: BTreeMap<NodeId, TopoNode>,
    /// Adjacency sets; (a, b) present iff (b, a) present, never (a, a).
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// Insertion threshold: minimum spatial scale of the map, meters.
    pub tau: f64,
    /// Fraction of the observation offset a matched node moves by.
    pub epsilon_itm: f64,
    bounds: Rect,
    next_id: u32,
    revision: u64,
    streak: Option<(NodeId, u64)>,
}

impl TopologicalMap {
    /// Builds an empty map; nodes arrive via [`Self::insert_node`] or deltas.
    pub fn empty(bounds: Rect, tau: f64, epsilon_itm: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive and finite, got {tau}"
            )));
        }
        if !(epsilon_itm > 0.0 && epsilon_itm < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon_itm must lie in (0, 1), got {epsilon_itm}"
            )));
        }
        Ok(TopologicalMap {
            nodes: BTreeMap::new(),
            adjacency: BTreeMap::new(),
            tau,
            epsilon_itm,
            bounds,
            next_id: 0,
            revision: 0,
            streak: None,
        })
    }

    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    /// Monotonically increasing state counter; bumped by every applied
    /// delta. Used to detect stale deltas.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&TopoNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TopoNode> {
        self.nodes.values()
    }

    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.adjacency.get(&id).map_or(0, |s| s.len())
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency.get(&a).is_some_and(|s| s.contains(&b))
    }

    /// Undirected edges as normalized (lo, hi) pairs, ascending.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adjacency
            .iter()
            .flat_map(|(&a, nbrs)| nbrs.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Equality of everything observable except the revision counter and
    /// the id allocator.
    pub fn structurally_equal(&self, other: &TopologicalMap) -> bool {
        self.nodes == other.nodes
            && self.adjacency == other.adjacency
            && self.tau == other.tau
            && self.epsilon_itm == other.epsilon_itm
            && self.bounds == other.bounds
            && self.streak == other.streak
    }

    /// Adds a node directly (bypassing the delta system); used for
    /// construction and tests.
    pub fn insert_node(&mut self, centroid: Point, pinned: bool) -> Result<NodeId> {
        if !self.bounds.contains(&centroid) {
            return Err(Error::OutOfBounds {
                x: centroid.x,
                y: centroid.y,
            });
        }
        let id = NodeId(self.next_id);
        self.next_id += 1;
        self.nodes.insert(
            id,
            TopoNode {
                id,
                centroid,
                hit_count: 0,
                dwell_accumulator: 0,
                pinned,
            },
        );
        self.adjacency.insert(id, BTreeSet::new());
        Ok(id)
    }

    /// Adds an undirected edge directly; endpoints must exist and differ.
    pub fn insert_edge(&mut self, a: NodeId, b: NodeId) -> Result<()> {
        if a == b {
            return Err(Error::Topology(format!("self-edge on node {a}")));
        }
        if !self.nodes.contains_key(&a) || !self.nodes.contains_key(&b) {
            return Err(Error::Topology(format!(
                "edge ({a}, {b}) references unknown node"
            )));
        }
        self.adjacency.get_mut(&a).expect("checked").insert(b);
        self.adjacency.get_mut(&b).expect("checked").insert(a);
        Ok(())
    }

    /// Marks a node as pinned (never moved or removed); used when the node
    /// becomes a goal.
    pub fn pin_node(&mut self, id: NodeId) -> Result<()> {
        self.nodes
            .get_mut(&id)
            .map(|n| n.pinned = true)
            .ok_or_else(|| Error::Topology(format!("cannot pin unknown node {id}")))
    }

    /// Resets the consecutive-match streak; call between trajectories so
    /// dwell time never accumulates across different pedestrians.
    pub fn end_sequence(&mut self) {
        self.streak = None;
    }

    /// The two nearest nodes to `p` (second is `None` for 1-node maps).
    /// Ties break toward the lower id.
    fn match_nodes(&self, p: &Point) -> Option<(NodeId, Option<NodeId>)> {
        let mut best: Option<(f64, NodeId)> = None;
        let mut second: Option<(f64, NodeId)> = None;
        for n in self.nodes.values() {
            let d = n.centroid.dist_sq(p);
            let cand = (d, n.id);
            match best {
                None => best = Some(cand),
                Some(b) if cand < b => {
                    second = best;
                    best = Some(cand);
                }
                Some(_) => match second {
                    None => second = Some(cand),
                    Some(s) if cand < s => second = Some(cand),
                    Some(_) => {}
                },
            }
        }
        best.map(|(_, b)| (b, second.map(|(_, s)| s)))
    }

    /// One Instantaneous Topological Map step for `observation`, returned
    /// as a delta (the map itself is not modified).
    ///
    /// Steps: match the nearest node b and second-nearest s; move b toward
    /// the observation by `epsilon_itm` (pinned nodes stay, and a move that
    /// would bring b within tau/2 of a pinned node is canceled); add edge
    /// (b, s); remove edges (b, m) whose far endpoint lies inside the
    /// Thales circle through b and s; insert a node at the observation if
    /// it is farther than tau from b and outside the Thales circle,
    /// connected to b; drop unpinned non-b nodes left edgeless by the edge
    /// removals; finally drop unpinned nodes pulled within tau/2 of b's new
    /// position, keeping the pairwise spacing invariant.
    pub fn itm_update(&self, observation: &Point) -> Result<TopologyDelta> {
        if self.nodes.is_empty() {
            return Err(Error::Topology(
                "itm_update on an empty map; build a prior topology first".into(),
            ));
        }
        if !observation.is_finite() || !self.bounds.contains(observation) {
            return Err(Error::OutOfBounds {
                x: observation.x,
                y: observation.y,
            });
        }
        let (b_id, s_id) = self.match_nodes(observation).expect("nonempty");
        let b = &self.nodes[&b_id];
        let half_tau_sq = (self.tau / 2.0) * (self.tau / 2.0);

        // Adaptation, vetoed when it would crowd a pinned node.
        let mut b_pos = b.centroid;
        if !b.pinned {
            let cand = Point::new(
                b.centroid.x + self.epsilon_itm * (observation.x - b.centroid.x),
                b.centroid.y + self.epsilon_itm * (observation.y - b.centroid.y),
            );
            let crowds_pinned = self
                .nodes
                .values()
                .any(|n| n.id != b_id && n.pinned && n.centroid.dist_sq(&cand) < half_tau_sq);
            if !crowds_pinned {
                b_pos = cand;
            }
        }

        let mut delta = TopologyDelta {
            base_revision: self.revision,
            ..TopologyDelta::default()
        };
        if b_pos != b.centroid {
            delta.nodes_moved.push((b_id, b.centroid, b_pos));
        }

        let mut edges_added: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
        let mut edges_removed: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();

        let inserted = if let Some(s_id) = s_id {
            let s_pos = self.nodes[&s_id].centroid;
            if !self.has_edge(b_id, s_id) {
                edges_added.insert(norm_edge(b_id, s_id));
            }
            // Thales circle on the segment b-s: diameter endpoints b_pos, s.
            let mid = Point::new((b_pos.x + s_pos.x) / 2.0, (b_pos.y + s_pos.y) / 2.0);
            let r_sq = b_pos.dist_sq(&s_pos) / 4.0;
            for m in self.neighbors(b_id) {
                if m != s_id && self.nodes[&m].centroid.dist_sq(&mid) < r_sq {
                    edges_removed.insert(norm_edge(b_id, m));
                }
            }
            observation.dist_sq(&b_pos) > self.tau * self.tau && observation.dist_sq(&mid) > r_sq
        } else {
            observation.dist_sq(&b_pos) > self.tau * self.tau
        };

        if inserted {
            let new_id = NodeId(self.next_id);
            delta.nodes_added.push((new_id, *observation));
            edges_added.insert(norm_edge(new_id, b_id));
        }

        // Nodes orphaned by the Thales-circle edge removals.
        let mut removed: BTreeSet<NodeId> = BTreeSet::new();
        let orphan_candidates: BTreeSet<NodeId> = edges_removed
            .iter()
            .flat_map(|&(a, c)| [a, c])
            .filter(|&n| n != b_id)
            .collect();
        for m in orphan_candidates {
            let lost = edges_removed
                .iter()
                .filter(|e| e.0 == m || e.1 == m)
                .count();
            let gained = edges_added.iter().filter(|e| e.0 == m || e.1 == m).count();
            if !self.nodes[&m].pinned && self.degree(m) + gained == lost {
                removed.insert(m);
            }
        }

        // Spacing: unpinned nodes pulled within tau/2 of b's new position.
        if b_pos != b.centroid {
            for n in self.nodes.values() {
                if n.id != b_id
                    && !n.pinned
                    && !removed.contains(&n.id)
                    && n.centroid.dist_sq(&b_pos) < half_tau_sq
                {
                    removed.insert(n.id);
                }
            }
        }
        // Removing a node takes its surviving incident edges with it.
        for &m in &removed {
            for nbr in self.neighbors(m) {
                let e = norm_edge(m, nbr);
                if !edges_removed.contains(&e) {
                    edges_removed.insert(e);
                }
            }
            edges_added.retain(|e| e.0 != m && e.1 != m);
        }

        delta.edges_added = edges_added.into_iter().collect();
        delta.edges_removed = edges_removed.into_iter().collect();
        delta.nodes_removed = removed.into_iter().collect();

        delta.hit_node = Some(b_id);
        let streak = match self.streak {
            Some((prev, k)) if prev == b_id => {
                delta.dwell_node = Some(b_id);
                (b_id, k + 1)
            }
            _ => (b_id, 1),
        };
        delta.streak_after = Some(streak);
        Ok(delta)
    }

    /// Replays a delta produced by [`Self::itm_update`] against this exact
    /// revision. An all-empty delta is the identity (revision still bumps).
    pub fn apply_delta(&mut self, delta: &TopologyDelta) -> Result<()> {
        if delta.base_revision != self.revision {
            return Err(Error::StaleDelta {
                delta_revision: delta.base_revision,
                map_revision: self.revision,
            });
        }
        if delta.is_empty() {
            self.revision += 1;
            return Ok(());
        }
        for (id, old, new) in &delta.nodes_moved {
            let n = self
                .nodes
                .get_mut(id)
                .ok_or_else(|| Error::Topology(format!("move references unknown node {id}")))?;
            if n.centroid != *old {
                return Err(Error::Topology(format!(
                    "move of node {id} expected centroid ({}, {}), found ({}, {})",
                    old.x, old.y, n.centroid.x, n.centroid.y
                )));
            }
            n.centroid = *new;
        }
        for (id, centroid) in &delta.nodes_added {
            if self.nodes.contains_key(id) {
                return Err(Error::Topology(format!("added node {id} already exists")));
            }
            self.nodes.insert(
                *id,
                TopoNode {
                    id: *id,
                    centroid: *centroid,
                    hit_count: 0,
                    dwell_accumulator: 0,
                    pinned: false,
                },
            );
            self.adjacency.insert(*id, BTreeSet::new());
            self.next_id = self.next_id.max(id.0 + 1);
        }
        for &(a, b) in &delta.edges_added {
            self.insert_edge(a, b)?;
        }
        for &(a, b) in &delta.edges_removed {
            let present = self.adjacency.get_mut(&a).is_some_and(|s| s.remove(&b));
            if !present {
                return Err(Error::Topology(format!(
                    "removed edge ({a}, {b}) not present"
                )));
            }
            self.adjacency
                .get_mut(&b)
                .expect("edge endpoints in sync")
                .remove(&a);
        }
        for id in &delta.nodes_removed {
            let gone = self.nodes.remove(id).is_some();
            if !gone {
                return Err(Error::Topology(format!("removed node {id} not present")));
            }
            let nbrs = self.adjacency.remove(id).expect("adjacency in sync");
            if !nbrs.is_empty() {
                return Err(Error::Topology(format!(
                    "removed node {id} still has {} incident edges",
                    nbrs.len()
                )));
            }
        }
        if let Some(id) = delta.hit_node {
            self.nodes
                .get_mut(&id)
                .ok_or_else(|| Error::Topology(format!("hit on unknown node {id}")))?
                .hit_count += 1;
        }
        if let Some((id, k)) = delta.streak_after {
            let n = self
                .nodes
                .get_mut(&id)
                .ok_or_else(|| Error::Topology(format!("dwell on unknown node {id}")))?;
            // Dwell is the longest continuous stay, so a node walked across
            // many times never out-dwells a node stood at once.
            n.dwell_accumulator = n.dwell_accumulator.max(k.saturating_sub(1));
            self.streak = delta.streak_after;
        }
        self.revision += 1;
        Ok(())
    }
}

fn norm_edge(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Builds the prior topology: a grid of spacing `tau` over the map extent
/// (both boundaries included), with grid points within `tau/2` of a
/// destination replaced by that destination, connected by Delaunay edges.
/// Destination nodes are pinned.
pub fn build_prior_topology(
    map: &PotentialCostMap,
    destinations: &[Point],
    tau: f64,
    epsilon_itm: f64,
) -> Result<TopologicalMap> {
    let extent = map.extent();
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "tau must be positive and finite, got {tau}"
        )));
    }
    if tau > extent.width() || tau > extent.height() {
        return Err(Error::InvalidParameter(format!(
            "tau = {tau} exceeds the map extent {} x {}",
            extent.width(),
            extent.height()
        )));
    }
    for d in destinations {
        if !extent.contains(d) {
            return Err(Error::OutOfBounds { x: d.x, y: d.y });
        }
    }
    // De-duplicate destinations against each other (first wins) so the
    // spacing invariant holds from the start.
    let mut dests: Vec<Point> = Vec::new();
    for d in destinations {
        if dests.iter().all(|p| p.dist(d) >= tau / 2.0) {
            dests.push(*d);
        }
    }

    let mut topo = TopologicalMap::empty(extent, tau, epsilon_itm)?;
    let cols = (extent.width() / tau).floor() as usize + 1;
    let rows = (extent.height() / tau).floor() as usize + 1;
    let mut points: Vec<(Point, bool)> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let p = Point::new(extent.min.x + c as f64 * tau, extent.min.y + r as f64 * tau);
            if dests.iter().all(|d| d.dist(&p) >= tau / 2.0) {
                points.push((p, false));
            }
        }
    }
    points.extend(dests.iter().map(|d| (*d, true)));

    let centroids: Vec<Point> = points.iter().map(|(p, _)| *p).collect();
    let edges = delaunay_edges(&centroids)?;
    let ids: Vec<NodeId> = points
        .iter()
        .map(|(p, pinned)| topo.insert_node(*p, *pinned))
        .collect::<Result<_>>()?;
    for (i, j) in edges {
        topo.insert_edge(ids[i], ids[j])?;
    }
    Ok(topo)
}

/// Plain-text export: `node <id> <x> <y>` lines then `edge <i> <j>` lines.
pub fn topology_to_string(topo: &TopologicalMap) -> String {
    let mut out = String::new();
    for n in topo.nodes() {
        let _ = writeln!(out, "node {} {} {}", n.id, n.centroid.x, n.centroid.y);
    }
    for (a, b) in topo.edges() {
        let _ = writeln!(out, "edge {a} {b}");
    }
    out
}

/// Writes the plain-text export to `path`.
pub fn save_topology(topo: &TopologicalMap, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, topology_to_string(topo))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::PotentialCostMap;

    fn uniform_map(w: f64, h: f64) -> PotentialCostMap {
        let cells_w = w.ceil() as usize;
        let cells_h = h.ceil() as usize;
        PotentialCostMap::from_values(
            Point::new(0.0, 0.0),
            1.0,
            cells_w,
            cells_h,
            vec![0.5; cells_w * cells_h],
        )
        .unwrap()
    }

    fn grid_map_10() -> TopologicalMap {
        build_prior_topology(&uniform_map(10.0, 10.0), &[], 5.0, 0.05).unwrap()
    }

    #[test]
    fn prior_grid_10m_tau5_is_3x3() {
        let topo = grid_map_10();
        assert_eq!(topo.len(), 9);
        let xs: BTreeSet<i64> = topo.nodes().map(|n| n.centroid.x as i64).collect();
        assert_eq!(xs, BTreeSet::from([0, 5, 10]));
        // Delaunay of a grid is connected and has no self or dangling edges.
        assert!(topo.edge_count() >= topo.len() - 1);
        for (a, b) in topo.edges() {
            assert_ne!(a, b);
            assert!(topo.node(a).is_some() && topo.node(b).is_some());
        }
    }

    #[test]
    fn destinations_replace_nearby_grid_points() {
        let dest = Point::new(5.3, 5.3); // within tau/2 = 2.5 of grid point (5,5)
        let topo = build_prior_topology(&uniform_map(10.0, 10.0), &[dest], 5.0, 0.05).unwrap();
        assert_eq!(topo.len(), 9);
        let dest_node = topo.nodes().find(|n| n.centroid == dest).unwrap();
        assert!(dest_node.pinned);
        assert!(!topo.nodes().any(|n| n.centroid == Point::new(5.0, 5.0)));
    }

    #[test]
    fn far_destination_is_added_not_replacing() {
        let dest = Point::new(2.5, 2.5); // exactly tau/2 from 4 grid points: kept separate
        let topo = build_prior_topology(&uniform_map(10.0, 10.0), &[dest], 5.0, 0.05).unwrap();
        assert_eq!(topo.len(), 10);
        assert!(topo.nodes().any(|n| n.centroid == dest && n.pinned));
    }

    #[test]
    fn oversized_tau_rejected() {
        let err = build_prior_topology(&uniform_map(10.0, 10.0), &[], 11.0, 0.05).unwrap_err();
        assert!(err.to_string().contains("exceeds"), "{err}");
    }

    #[test]
    fn observation_at_centroid_only_counts() {
        let topo = grid_map_10();
        let delta = topo.itm_update(&Point::new(0.0, 0.0)).unwrap();
        assert!(!delta.is_structural(), "{delta:?}");
        assert_eq!(delta.hit_node, Some(NodeId(0)));
        assert_eq!(delta.dwell_node, None);
        assert_eq!(delta.streak_after, Some((NodeId(0), 1)));
    }

    #[test]
    fn dwell_accumulates_on_consecutive_matches() {
        let mut topo = grid_map_10();
        for expected_dwell in [0u64, 1, 2] {
            let delta = topo.itm_update(&Point::new(0.1, 0.0)).unwrap();
            topo.apply_delta(&delta).unwrap();
            let n = topo.node(NodeId(0)).unwrap();
            assert_eq!(n.dwell_accumulator, expected_dwell);
        }
        topo.end_sequence();
        let delta = topo.itm_update(&Point::new(0.1, 0.0)).unwrap();
        assert_eq!(delta.dwell_node, None, "streak reset between sequences");
    }

    #[test]
    fn adaptation_moves_toward_observation() {
        let mut topo = grid_map_10();
        let obs = Point::new(1.0, 1.0);
        let delta = topo.itm_update(&obs).unwrap();
        assert_eq!(delta.nodes_moved.len(), 1);
        let (id, old, new) = delta.nodes_moved[0];
        assert_eq!(id, NodeId(0));
        assert_eq!(old, Point::new(0.0, 0.0));
        assert_eq!(new, Point::new(0.05, 0.05));
        topo.apply_delta(&delta).unwrap();
        assert_eq!(topo.node(id).unwrap().centroid, new);
    }

    #[test]
    fn insertion_far_from_everything() {
        let mut topo = TopologicalMap::empty(
            Rect::new(Point::new(0.0, 0.0), Point::new(100.0, 100.0)),
            5.0,
            0.05,
        )
        .unwrap();
        let a = topo.insert_node(Point::new(10.0, 10.0), false).unwrap();
        let b = topo.insert_node(Point::new(16.0, 10.0), false).unwrap();
        topo.insert_edge(a, b).unwrap();
        // Far from both and outside the Thales circle: inserted, wired to
        // its nearest node.
        let delta = topo.itm_update(&Point::new(40.0, 40.0)).unwrap();
        assert_eq!(delta.nodes_added.len(), 1);
        let (new_id, pos) = delta.nodes_added[0];
        assert_eq!(pos, Point::new(40.0, 40.0));
        assert!(delta.edges_added.contains(&norm_edge(new_id, b)));
        topo.apply_delta(&delta).unwrap();
        assert_eq!(topo.len(), 3);
    }

    #[test]
    fn no_insertion_inside_thales_circle() {
        let mut topo = TopologicalMap::empty(
            Rect::new(Point::new(0.0, 0.0), Point::new(100.0, 100.0)),
            5.0,
            0.05,
        )
        .unwrap();
        // Nodes 12 m apart; an observation near the middle of the segment
        // is > tau from both but inside the Thales circle: no insertion.
        topo.insert_node(Point::new(10.0, 10.0), false).unwrap();
        topo.insert_node(Point::new(22.0, 10.0), false).unwrap();
        let delta = topo.itm_update(&Point::new(16.0, 11.0)).unwrap();
        assert!(delta.nodes_added.is_empty(), "{delta:?}");
        // But the b-s edge appears.
        assert_eq!(delta.edges_added.len(), 1);
    }

    #[test]
    fn marching_along_segment_grows_nodes() {
        let mut topo = TopologicalMap::empty(
            Rect::new(Point::new(0.0, 0.0), Point::new(100.0, 10.0)),
            4.0,
            0.05,
        )
        .unwrap();
        let a = topo.insert_node(Point::new(0.0, 5.0), false).unwrap();
        let b = topo.insert_node(Point::new(4.0, 5.0), false).unwrap();
        topo.insert_edge(a, b).unwrap();
        // March along a 5*tau = 20 m segment in small steps.
        let mut x = 4.0;
        while x <= 24.0 {
            let delta = topo.itm_update(&Point::new(x, 5.0)).unwrap();
            topo.apply_delta(&delta).unwrap();
            x += 0.5;
        }
        let n = topo.len();
        assert!((4..=9).contains(&n), "unexpected node count {n}");
        check_invariants(&topo);
    }

    #[test]
    fn spacing_invariant_under_random_stream() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let map = uniform_map(20.0, 20.0);
        let mut topo = build_prior_topology(&map, &[Point::new(3.0, 3.0)], 4.0, 0.1).unwrap();
        for _ in 0..2000 {
            let obs = Point::new(rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0));
            let delta = topo.itm_update(&obs).unwrap();
            topo.apply_delta(&delta).unwrap();
        }
        check_invariants(&topo);
        // The pinned destination survived every update.
        assert!(topo
            .nodes()
            .any(|n| n.pinned && n.centroid == Point::new(3.0, 3.0)));
    }

    #[test]
    fn record_replay_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let map = uniform_map(15.0, 15.0);
        let mut live = build_prior_topology(&map, &[], 5.0, 0.1).unwrap();
        let mut snapshot = live.clone();
        let mut deltas = Vec::new();
        for _ in 0..500 {
            let obs = Point::new(rng.gen_range(0.0..15.0), rng.gen_range(0.0..15.0));
            let delta = live.itm_update(&obs).unwrap();
            live.apply_delta(&delta).unwrap();
            deltas.push(delta);
        }
        for d in &deltas {
            snapshot.apply_delta(d).unwrap();
        }
        assert!(snapshot.structurally_equal(&live));
        assert_eq!(snapshot.revision(), live.revision());
    }

    #[test]
    fn empty_delta_is_identity() {
        let mut topo = grid_map_10();
        let before = topo.clone();
        let delta = TopologyDelta {
            base_revision: topo.revision(),
            ..TopologyDelta::default()
        };
        topo.apply_delta(&delta).unwrap();
        assert!(topo.structurally_equal(&before));
    }

    #[test]
    fn stale_delta_rejected() {
        let mut topo = grid_map_10();
        let delta = topo.itm_update(&Point::new(1.0, 1.0)).unwrap();
        topo.apply_delta(&delta).unwrap();
        // Same delta again references the old revision.
        assert!(matches!(
            topo.apply_delta(&delta),
            Err(Error::StaleDelta { .. })
        ));
    }

    #[test]
    fn add_then_remove_restores_map_modulo_id_counter() {
        let mut topo = TopologicalMap::empty(
            Rect::new(Point::new(0.0, 0.0), Point::new(100.0, 100.0)),
            5.0,
            0.05,
        )
        .unwrap();
        let a = topo.insert_node(Point::new(10.0, 10.0), false).unwrap();
        let b = topo.insert_node(Point::new(14.0, 10.0), false).unwrap();
        topo.insert_edge(a, b).unwrap();
        let before = topo.clone();

        let delta = topo.itm_update(&Point::new(40.0, 10.0)).unwrap();
        assert_eq!(delta.nodes_added.len(), 1);
        let (new_id, _) = delta.nodes_added[0];
        topo.apply_delta(&delta).unwrap();

        let undo = TopologyDelta {
            base_revision: topo.revision(),
            nodes_removed: vec![new_id],
            edges_removed: delta.edges_added.clone(),
            nodes_moved: delta
                .nodes_moved
                .iter()
                .map(|&(id, old, new)| (id, new, old))
                .collect(),
            ..TopologyDelta::default()
        };
        topo.apply_delta(&undo).unwrap();
        // Counters and streak differ (the hit happened); geometry matches.
        assert_eq!(
            topo.nodes().map(|n| n.centroid).collect::<Vec<_>>(),
            before.nodes().map(|n| n.centroid).collect::<Vec<_>>()
        );
        assert_eq!(
            topo.edges().collect::<Vec<_>>(),
            before.edges().collect::<Vec<_>>()
        );
    }

    #[test]
    fn empty_map_update_rejected() {
        let topo = TopologicalMap::empty(
            Rect::new(Point::new(0.0, 0.0), Point::new(10.0, 10.0)),
            2.0,
            0.05,
        )
        .unwrap();
        assert!(topo.itm_update(&Point::new(1.0, 1.0)).is_err());
    }

    #[test]
    fn out_of_bounds_observation_rejected() {
        let topo = grid_map_10();
        assert!(matches!(
            topo.itm_update(&Point::new(11.0, 5.0)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn text_export_shape() {
        let topo = grid_map_10();
        let text = topology_to_string(&topo);
        let nodes = text.lines().filter(|l| l.starts_with("node ")).count();
        let edges = text.lines().filter(|l| l.starts_with("edge ")).count();
        assert_eq!(nodes, topo.len());
        assert_eq!(edges, topo.edge_count());
        assert!(text.starts_with("node 0 0 0\n"));
    }

    /// Invariants the spec demands after any update sequence.
    fn check_invariants(topo: &TopologicalMap) {
        for (a, b) in topo.edges() {
            assert_ne!(a, b, "self edge");
            assert!(
                topo.node(a).is_some() && topo.node(b).is_some(),
                "dangling edge"
            );
        }
        let nodes: Vec<&TopoNode> = topo.nodes().collect();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                let d = nodes[i].centroid.dist(&nodes[j].centroid);
                assert!(
                    d >= topo.tau / 2.0 - 1e-12,
                    "nodes {} and {} only {d} m apart",
                    nodes[i].id,
                    nodes[j].id
                );
            }
        }
        for n in &nodes {
            assert!(topo.bounds().contains(&n.centroid));
        }
    }
}

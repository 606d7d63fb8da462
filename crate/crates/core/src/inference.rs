//! Online Bayesian filtering over a model snapshot and H-step prediction
//! of position and goal.
//!
//! All functions here are pure with respect to the model: a trained
//! snapshot can serve any number of tracked pedestrians concurrently,
//! each carrying its own [`Belief`].

use std::collections::BTreeMap;

use crate::geom::Point;
use crate::ghmm::{GhmmModel, GoalId};
use crate::topology::NodeId;
use crate::{Error, Result};

/// Posterior over model states after some number of filter updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    weights: Vec<f64>,
    timestep: u64,
}

impl Belief {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    /// Validates an externally assembled belief against a model.
    pub fn from_weights(model: &GhmmModel, weights: Vec<f64>, timestep: u64) -> Result<Belief> {
        if weights.len() != model.n_states() {
            return Err(Error::Model(format!(
                "belief length {} does not match the {} model states",
                weights.len(),
                model.n_states()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Model(format!(
                "belief weights must be nonnegative and sum to 1, got sum {sum}"
            )));
        }
        Ok(Belief { weights, timestep })
    }
}

/// Belief propagated to a future timestep with no further observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub horizon: u64,
    pub state_belief: Belief,
    /// Belief-weighted mean of node centroids; minimizes expected squared
    /// error, commensurate with Euclidean error curves.
    pub expected_position: Point,
    /// Goal with maximal posterior mass at t+H; ties go to the lowest id.
    pub map_goal: GoalId,
}

/// The belief before any observation: the model prior at timestep 0.
pub fn initial_belief(model: &GhmmModel) -> Belief {
    Belief {
        weights: model.prior().to_vec(),
        timestep: 0,
    }
}

/// One recursive Bayes update: new_i ∝ b_i(obs) · Σ_j A_ji · belief_j.
///
/// The observation must lie within the scene extent. If the unnormalized
/// mass underflows (observation irreconcilable with every state), a
/// degenerate-belief error is returned and the caller decides whether to
/// re-initialize from the prior.
pub fn filter_update(model: &GhmmModel, belief: &Belief, obs: &Point) -> Result<Belief> {
    if !obs.is_finite() || !model.extent().contains(obs) {
        return Err(Error::OutOfBounds { x: obs.x, y: obs.y });
    }
    filter_update_with_likelihood(model, belief, &model.likelihood_vector(obs))
}

/// The same update with caller-supplied per-state likelihoods. Scaling all
/// likelihoods by a positive constant cancels in the normalizer, so the
/// output depends only on their ratios.
pub fn filter_update_with_likelihood(
    model: &GhmmModel,
    belief: &Belief,
    likelihoods: &[f64],
) -> Result<Belief> {
    debug_assert_eq!(belief.weights.len(), model.n_states());
    debug_assert_eq!(likelihoods.len(), model.n_states());
    let mut weights = model.propagate(&belief.weights);
    for (w, l) in weights.iter_mut().zip(likelihoods) {
        *w *= l;
    }
    let mass: f64 = weights.iter().sum();
    if !(mass >= f64::MIN_POSITIVE) || !mass.is_finite() {
        return Err(Error::DegenerateBelief { mass });
    }
    weights.iter_mut().for_each(|w| *w /= mass);
    Ok(Belief {
        weights,
        timestep: belief.timestep + 1,
    })
}

/// Marginal over nodes: each node accumulates its states' weights.
pub fn position_marginal(model: &GhmmModel, belief: &Belief) -> BTreeMap<NodeId, f64> {
    let mut out: BTreeMap<NodeId, f64> = BTreeMap::new();
    for (s, w) in model.states().iter().zip(&belief.weights) {
        *out.entry(s.node).or_insert(0.0) += w;
    }
    renormalize(&mut out);
    out
}

/// Marginal over goals: each goal accumulates its states' weights.
pub fn goal_marginal(model: &GhmmModel, belief: &Belief) -> BTreeMap<GoalId, f64> {
    let mut out: BTreeMap<GoalId, f64> = BTreeMap::new();
    for (s, w) in model.states().iter().zip(&belief.weights) {
        *out.entry(s.goal).or_insert(0.0) += w;
    }
    renormalize(&mut out);
    out
}

// The marginal sums already equal 1 when the belief is normalized; the
// explicit renormalization only squashes accumulated rounding.
fn renormalize<K: Ord>(dist: &mut BTreeMap<K, f64>) {
    let sum: f64 = dist.values().sum();
    if sum > 0.0 {
        dist.values_mut().for_each(|v| *v /= sum);
    }
}

/// Propagates the belief `horizon` steps through the transition model with
/// no intervening observations, then summarizes it as an expected position
/// and a MAP goal.
pub fn predict(model: &GhmmModel, belief: &Belief, horizon: u64) -> PredictionResult {
    let mut weights = belief.weights.clone();
    for _ in 0..horizon {
        weights = model.propagate(&weights);
        let sum: f64 = weights.iter().sum();
        if sum > 0.0 {
            weights.iter_mut().for_each(|w| *w /= sum);
        }
    }
    let state_belief = Belief {
        weights,
        timestep: belief.timestep + horizon,
    };
    let expected_position = expected_position(model, &state_belief);
    let goals = goal_marginal(model, &state_belief);
    let map_goal = goals
        .iter()
        .fold(None, |best: Option<(GoalId, f64)>, (&g, &w)| match best {
            Some((_, bw)) if bw >= w => best,
            _ => Some((g, w)),
        })
        .map(|(g, _)| g)
        .expect("models always have at least one goal");
    PredictionResult {
        horizon,
        state_belief,
        expected_position,
        map_goal,
    }
}

/// Belief-weighted mean of node centroids.
pub fn expected_position(model: &GhmmModel, belief: &Belief) -> Point {
    let mut x = 0.0;
    let mut y = 0.0;
    for (s, w) in model.states().iter().zip(&belief.weights) {
        let c = model
            .node_centroid(s.node)
            .expect("states reference known nodes");
        x += w * c.x;
        y += w * c.y;
    }
    Point::new(x, y)
}

/// Euclidean distance between a predicted and an actual position.
pub fn prediction_error(predicted: &Point, truth: &Point) -> f64 {
    predicted.dist(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::PotentialCostMap;
    use crate::ghmm::{init_model_from_topology, GoalSet, LearningConfig};
    use crate::topology::TopologicalMap;
    use approx::assert_relative_eq;

    fn uniform_map(w: usize, h: usize) -> PotentialCostMap {
        PotentialCostMap::from_values(Point::new(0.0, 0.0), 1.0, w, h, vec![0.5; w * h]).unwrap()
    }

    /// Two nodes at (3,5) and (6,5), one goal, sigma 1: the same fixture
    /// as the learning tests, with A = [[1/11, 10/11], [10/11, 1/11]].
    fn two_state_model() -> GhmmModel {
        let map = uniform_map(10, 10);
        let mut topo = TopologicalMap::empty(map.extent(), 2.0, 0.05).unwrap();
        let a = topo.insert_node(Point::new(3.0, 5.0), false).unwrap();
        let b = topo.insert_node(Point::new(6.0, 5.0), false).unwrap();
        topo.insert_edge(a, b).unwrap();
        let mut goals = GoalSet::new(50);
        goals.add_goal(a, Point::new(3.0, 5.0));
        let mut cfg = LearningConfig::for_tau(2.0);
        cfg.sigma_obs = 1.0;
        init_model_from_topology(&topo, &map, &goals, cfg).unwrap()
    }

    #[test]
    fn initial_belief_is_the_prior() {
        let model = two_state_model();
        let b = initial_belief(&model);
        assert_eq!(b.weights(), model.prior());
        assert_eq!(b.timestep(), 0);
        assert_relative_eq!(b.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_transitions_and_flat_likelihood_fix_the_belief() {
        // Two unconnected nodes at the same centroid: A is the identity
        // and every observation is equally likely under both states.
        let map = uniform_map(10, 10);
        let mut topo = TopologicalMap::empty(map.extent(), 2.0, 0.05).unwrap();
        let a = topo.insert_node(Point::new(5.0, 5.0), false).unwrap();
        let _b = topo.insert_node(Point::new(5.0, 5.0), false).unwrap();
        let mut goals = GoalSet::new(50);
        goals.add_goal(a, Point::new(5.0, 5.0));
        let model =
            init_model_from_topology(&topo, &map, &goals, LearningConfig::for_tau(2.0)).unwrap();
        assert_eq!(model.row(0), &[(0, 1.0)]);
        assert_eq!(model.row(1), &[(1, 1.0)]);
        let belief = Belief::from_weights(&model, vec![0.3, 0.7], 4).unwrap();
        let updated = filter_update(&model, &belief, &Point::new(6.0, 4.0)).unwrap();
        assert_relative_eq!(updated.weights()[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(updated.weights()[1], 0.7, epsilon = 1e-12);
        assert_eq!(updated.timestep(), 5);
    }

    #[test]
    fn hand_computed_one_step_posterior() {
        let model = two_state_model();
        let obs = Point::new(3.5, 5.0);
        let belief = initial_belief(&model);

        let peak = 1.0 / (2.0 * std::f64::consts::PI);
        let b0 = peak * (-0.125f64).exp(); // 0.5 m from node 0
        let b1 = peak * (-3.125f64).exp(); // 2.5 m from node 1
        let a_mat = [[1.0 / 11.0, 10.0 / 11.0], [10.0 / 11.0, 1.0 / 11.0]];
        let pred = [
            0.5 * a_mat[0][0] + 0.5 * a_mat[1][0],
            0.5 * a_mat[0][1] + 0.5 * a_mat[1][1],
        ];
        let unnorm = [pred[0] * b0, pred[1] * b1];
        let eta = unnorm[0] + unnorm[1];

        let updated = filter_update(&model, &belief, &obs).unwrap();
        assert_relative_eq!(updated.weights()[0], unnorm[0] / eta, epsilon = 1e-12);
        assert_relative_eq!(updated.weights()[1], unnorm[1] / eta, epsilon = 1e-12);
    }

    /// Joint enumeration over all state paths: P(S_T = s | O_{1:T}) by
    /// summing path probabilities, the independent oracle for filtering.
    fn enumerate_posterior(model: &GhmmModel, obs: &[Point]) -> Vec<f64> {
        let n = model.n_states();
        let t_len = obs.len();
        let liks: Vec<Vec<f64>> = obs.iter().map(|o| model.likelihood_vector(o)).collect();
        let mut posterior = vec![0.0; n];
        let mut path = vec![0usize; t_len];
        loop {
            let mut p = model.prior()[path[0]] * liks[0][path[0]];
            for t in 1..t_len {
                p *= model.transition(path[t - 1], path[t]) * liks[t][path[t]];
            }
            posterior[path[t_len - 1]] += p;
            // Odometer increment over the path digits.
            let mut pos = 0;
            loop {
                path[pos] += 1;
                if path[pos] < n {
                    break;
                }
                path[pos] = 0;
                pos += 1;
                if pos == t_len {
                    let total: f64 = posterior.iter().sum();
                    posterior.iter_mut().for_each(|x| *x /= total);
                    return posterior;
                }
            }
        }
    }

    #[test]
    fn filtering_matches_path_enumeration() {
        let model = two_state_model();
        let obs = vec![
            Point::new(3.2, 5.1),
            Point::new(4.0, 4.8),
            Point::new(5.1, 5.0),
            Point::new(5.9, 5.2),
        ];
        let mut belief = initial_belief(&model);
        for o in &obs {
            belief = filter_update(&model, &belief, o).unwrap();
        }
        let oracle = enumerate_posterior(&model, &obs);
        for (got, want) in belief.weights().iter().zip(&oracle) {
            assert_relative_eq!(got, want, epsilon = 1e-9);
        }
    }

    #[test]
    fn marginals_sum_to_one_and_collapse_correctly() {
        let map = uniform_map(10, 10);
        let mut topo = TopologicalMap::empty(map.extent(), 2.0, 0.05).unwrap();
        let a = topo.insert_node(Point::new(3.0, 3.0), false).unwrap();
        let b = topo.insert_node(Point::new(7.0, 7.0), false).unwrap();
        topo.insert_edge(a, b).unwrap();
        let mut goals = GoalSet::new(50);
        goals.add_goal(a, Point::new(3.0, 3.0));
        goals.add_goal(b, Point::new(7.0, 7.0));
        let model =
            init_model_from_topology(&topo, &map, &goals, LearningConfig::for_tau(2.0)).unwrap();
        assert_eq!(model.n_states(), 4);
        let w = vec![0.1, 0.2, 0.3, 0.4];
        let belief = Belief::from_weights(&model, w.clone(), 0).unwrap();

        let pos = position_marginal(&model, &belief);
        let goal = goal_marginal(&model, &belief);
        assert_relative_eq!(pos.values().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(goal.values().sum::<f64>(), 1.0, epsilon = 1e-12);
        // States are ordered (node asc, goal asc): (a,g0),(a,g1),(b,g0),(b,g1).
        assert_relative_eq!(pos[&a], 0.1 + 0.2, epsilon = 1e-12);
        assert_relative_eq!(pos[&b], 0.3 + 0.4, epsilon = 1e-12);
        assert_relative_eq!(goal[&GoalId(0)], 0.1 + 0.3, epsilon = 1e-12);
        assert_relative_eq!(goal[&GoalId(1)], 0.2 + 0.4, epsilon = 1e-12);

        // With one goal the position marginal is the belief itself.
        let model1 = two_state_model();
        let b1 = Belief::from_weights(&model1, vec![0.25, 0.75], 0).unwrap();
        let pos1 = position_marginal(&model1, &b1);
        let nodes: Vec<NodeId> = model1.states().iter().map(|s| s.node).collect();
        assert_relative_eq!(pos1[&nodes[0]], 0.25, epsilon = 1e-12);
        assert_relative_eq!(pos1[&nodes[1]], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn predict_zero_horizon_is_identity() {
        let model = two_state_model();
        let belief = Belief::from_weights(&model, vec![0.6, 0.4], 7).unwrap();
        let pred = predict(&model, &belief, 0);
        assert_eq!(pred.state_belief.weights(), belief.weights());
        assert_eq!(pred.state_belief.timestep(), 7);
        assert_eq!(pred.horizon, 0);
    }

    #[test]
    fn predict_two_steps_matches_hand_propagation() {
        // Three-node chain with one goal; rows follow from equal costs:
        // interior node splits 10/21 to each neighbor, 1/21 to itself.
        let map = uniform_map(12, 6);
        let mut topo = TopologicalMap::empty(map.extent(), 2.0, 0.05).unwrap();
        let a = topo.insert_node(Point::new(2.0, 3.0), false).unwrap();
        let b = topo.insert_node(Point::new(5.0, 3.0), false).unwrap();
        let c = topo.insert_node(Point::new(8.0, 3.0), false).unwrap();
        topo.insert_edge(a, b).unwrap();
        topo.insert_edge(b, c).unwrap();
        let mut goals = GoalSet::new(50);
        goals.add_goal(c, Point::new(8.0, 3.0));
        let model =
            init_model_from_topology(&topo, &map, &goals, LearningConfig::for_tau(2.0)).unwrap();

        let a_mat = [
            [1.0 / 11.0, 10.0 / 11.0, 0.0],
            [10.0 / 21.0, 1.0 / 21.0, 10.0 / 21.0],
            [0.0, 10.0 / 11.0, 1.0 / 11.0],
        ];
        let w0 = [1.0, 0.0, 0.0];
        let mut w1 = [0.0; 3];
        let mut w2 = [0.0; 3];
        for j in 0..3 {
            for k in 0..3 {
                w1[k] += w0[j] * a_mat[j][k];
            }
        }
        for j in 0..3 {
            for k in 0..3 {
                w2[k] += w1[j] * a_mat[j][k];
            }
        }

        let belief = Belief::from_weights(&model, w0.to_vec(), 0).unwrap();
        let pred = predict(&model, &belief, 2);
        for (got, want) in pred.state_belief.weights().iter().zip(&w2) {
            assert_relative_eq!(got, want, epsilon = 1e-12);
        }
        // Expected position: weighted centroid mean along the chain.
        let want_x = w2[0] * 2.0 + w2[1] * 5.0 + w2[2] * 8.0;
        assert_relative_eq!(pred.expected_position.x, want_x, epsilon = 1e-12);
        assert_relative_eq!(pred.expected_position.y, 3.0, epsilon = 1e-12);
        assert!(model.extent().contains(&pred.expected_position));
    }

    #[test]
    fn chapman_kolmogorov_composition() {
        let model = two_state_model();
        let belief = Belief::from_weights(&model, vec![0.9, 0.1], 0).unwrap();
        let joint = predict(&model, &belief, 5);
        let split = predict(&model, &predict(&model, &belief, 2).state_belief, 3);
        for (a, b) in joint
            .state_belief
            .weights()
            .iter()
            .zip(split.state_belief.weights())
        {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        assert_eq!(joint.state_belief.timestep(), split.state_belief.timestep());
    }

    #[test]
    fn map_goal_ties_break_to_lowest_id() {
        let map = uniform_map(10, 10);
        let mut topo = TopologicalMap::empty(map.extent(), 2.0, 0.05).unwrap();
        let a = topo.insert_node(Point::new(3.0, 3.0), false).unwrap();
        let b = topo.insert_node(Point::new(7.0, 7.0), false).unwrap();
        let mut goals = GoalSet::new(50);
        goals.add_goal(a, Point::new(3.0, 3.0));
        goals.add_goal(b, Point::new(7.0, 7.0));
        let model =
            init_model_from_topology(&topo, &map, &goals, LearningConfig::for_tau(2.0)).unwrap();
        // A = I (no edges), so the tie persists through prediction.
        let belief = Belief::from_weights(&model, vec![0.25; 4], 0).unwrap();
        let pred = predict(&model, &belief, 3);
        assert_eq!(pred.map_goal, GoalId(0));
    }

    #[test]
    fn eta_invariance_under_likelihood_scaling() {
        let model = two_state_model();
        let belief = Belief::from_weights(&model, vec![0.4, 0.6], 0).unwrap();
        let lik = model.likelihood_vector(&Point::new(4.0, 5.0));
        let scaled: Vec<f64> = lik.iter().map(|l| l * 1.0e6).collect();
        let a = filter_update_with_likelihood(&model, &belief, &lik).unwrap();
        let b = filter_update_with_likelihood(&model, &belief, &scaled).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_mass_is_an_error_not_a_nan() {
        let map = uniform_map(60, 60);
        let mut topo = TopologicalMap::empty(map.extent(), 2.0, 0.05).unwrap();
        let a = topo.insert_node(Point::new(0.5, 0.5), false).unwrap();
        let mut goals = GoalSet::new(50);
        goals.add_goal(a, Point::new(0.5, 0.5));
        let mut cfg = LearningConfig::for_tau(2.0);
        cfg.sigma_obs = 0.5;
        let model = init_model_from_topology(&topo, &map, &goals, cfg).unwrap();
        let belief = initial_belief(&model);
        // In bounds but ~80 m from the only node at sigma 0.5.
        let err = filter_update(&model, &belief, &Point::new(59.0, 59.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateBelief { .. }));
        assert!(err.is_numerical());

        let outside = filter_update(&model, &belief, &Point::new(-1.0, 0.0)).unwrap_err();
        assert!(matches!(outside, Error::OutOfBounds { .. }));
    }

    #[test]
    fn prediction_error_is_euclidean() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(3.0, 4.0);
        assert_eq!(prediction_error(&a, &a), 0.0);
        assert_eq!(prediction_error(&a, &b), 5.0);
        assert_eq!(prediction_error(&a, &b), prediction_error(&b, &a));
    }
}

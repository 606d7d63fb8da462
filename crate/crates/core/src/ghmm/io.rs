//! Model persistence: a versioned little-endian binary container and a
//! lossless plain-text dump for diffing in tests.
//!
//! Binary layout: magic "GHM1", format version, seed policy byte, the
//! topology revision the model is in sync with, extent, config, goal set,
//! nodes (centroid plus cached cost, NaN under the preset policy), edges,
//! states, prior, the transition matrix as sparse triplets, and the
//! per-row learned flags. Loading re-validates every model invariant.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::geom::{Point, Rect};
use crate::topology::NodeId;
use crate::{Error, Result};

use super::{GhmmModel, GhmmState, GoalId, GoalSet, LearningConfig, SeedPolicy};

pub const MODEL_MAGIC: [u8; 4] = *b"GHM1";
const FORMAT_VERSION: u32 = 1;

pub fn save_model(model: &GhmmModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GhmmModel> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let model = read_model(&mut r)?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format(
            "trailing bytes after the model payload".into(),
        ));
    }
    model.check_invariants()?;
    Ok(model)
}

fn write_model<W: Write>(m: &GhmmModel, w: &mut W) -> Result<()> {
    w.write_all(&MODEL_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u8(match m.seed_policy {
        SeedPolicy::CostMap => 0,
        SeedPolicy::Preset => 1,
    })?;
    w.write_u64::<LittleEndian>(m.topology_revision)?;
    for v in [
        m.extent.min.x,
        m.extent.min.y,
        m.extent.max.x,
        m.extent.max.y,
    ] {
        w.write_f64::<LittleEndian>(v)?;
    }
    let c = &m.config;
    w.write_f64::<LittleEndian>(c.epsilon)?;
    w.write_f64::<LittleEndian>(c.sigma_obs)?;
    w.write_u64::<LittleEndian>(c.dwell_threshold)?;
    w.write_f64::<LittleEndian>(c.bw_learning_rate)?;
    w.write_f64::<LittleEndian>(c.pi0)?;
    w.write_f64::<LittleEndian>(c.a0)?;

    w.write_u64::<LittleEndian>(m.goal_set.dwell_threshold)?;
    w.write_u32::<LittleEndian>(m.goal_set.next_id)?;
    w.write_u32::<LittleEndian>(m.goal_set.goals.len() as u32)?;
    for (id, (node, p)) in &m.goal_set.goals {
        w.write_u32::<LittleEndian>(id.0)?;
        w.write_u32::<LittleEndian>(node.0)?;
        w.write_f64::<LittleEndian>(p.x)?;
        w.write_f64::<LittleEndian>(p.y)?;
    }

    w.write_u32::<LittleEndian>(m.node_centroids.len() as u32)?;
    for (id, p) in &m.node_centroids {
        w.write_u32::<LittleEndian>(id.0)?;
        w.write_f64::<LittleEndian>(p.x)?;
        w.write_f64::<LittleEndian>(p.y)?;
        w.write_f64::<LittleEndian>(m.node_costs.get(id).copied().unwrap_or(f64::NAN))?;
    }

    let edges: Vec<(u32, u32)> = m
        .adjacency
        .iter()
        .flat_map(|(&a, nbrs)| {
            nbrs.iter()
                .filter(move |&&b| a < b)
                .map(move |&b| (a.0, b.0))
        })
        .collect();
    w.write_u64::<LittleEndian>(edges.len() as u64)?;
    for (a, b) in edges {
        w.write_u32::<LittleEndian>(a)?;
        w.write_u32::<LittleEndian>(b)?;
    }

    w.write_u64::<LittleEndian>(m.states.len() as u64)?;
    for s in &m.states {
        w.write_u32::<LittleEndian>(s.node.0)?;
        w.write_u32::<LittleEndian>(s.goal.0)?;
    }
    for p in &m.prior {
        w.write_f64::<LittleEndian>(*p)?;
    }
    let nnz: u64 = m.rows.iter().map(|r| r.len() as u64).sum();
    w.write_u64::<LittleEndian>(nnz)?;
    for (j, row) in m.rows.iter().enumerate() {
        for &(k, a) in row {
            w.write_u32::<LittleEndian>(j as u32)?;
            w.write_u32::<LittleEndian>(k)?;
            w.write_f64::<LittleEndian>(a)?;
        }
    }
    for learned in &m.row_learned {
        w.write_u8(*learned as u8)?;
    }
    Ok(())
}

fn read_model<R: Read>(r: &mut R) -> Result<GhmmModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format(format!("bad model magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model format version {version}"
        )));
    }
    let seed_policy = match r.read_u8()? {
        0 => SeedPolicy::CostMap,
        1 => SeedPolicy::Preset,
        other => return Err(Error::Format(format!("unknown seed policy byte {other}"))),
    };
    let topology_revision = r.read_u64::<LittleEndian>()?;
    let (minx, miny) = (r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?);
    let (maxx, maxy) = (r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?);
    if ![minx, miny, maxx, maxy].iter().all(|v| v.is_finite()) || minx > maxx || miny > maxy {
        return Err(Error::Format(
            "model extent is not a valid rectangle".into(),
        ));
    }
    let extent = Rect::new(Point::new(minx, miny), Point::new(maxx, maxy));
    let config = LearningConfig {
        epsilon: r.read_f64::<LittleEndian>()?,
        sigma_obs: r.read_f64::<LittleEndian>()?,
        dwell_threshold: r.read_u64::<LittleEndian>()?,
        bw_learning_rate: r.read_f64::<LittleEndian>()?,
        pi0: r.read_f64::<LittleEndian>()?,
        a0: r.read_f64::<LittleEndian>()?,
    };

    let goal_dwell = r.read_u64::<LittleEndian>()?;
    let goal_next = r.read_u32::<LittleEndian>()?;
    let n_goals = r.read_u32::<LittleEndian>()?;
    let mut goal_set = GoalSet::new(goal_dwell);
    for _ in 0..n_goals {
        let id = GoalId(r.read_u32::<LittleEndian>()?);
        let node = NodeId(r.read_u32::<LittleEndian>()?);
        let p = Point::new(r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?);
        if id.0 >= goal_next {
            return Err(Error::Format(format!(
                "goal id {id} not below the stored next id {goal_next}"
            )));
        }
        if goal_set.goals.insert(id, (node, p)).is_some() {
            return Err(Error::Format(format!("duplicate goal id {id}")));
        }
    }
    goal_set.next_id = goal_next;

    let n_nodes = r.read_u32::<LittleEndian>()?;
    let mut node_centroids = std::collections::BTreeMap::new();
    let mut node_costs = std::collections::BTreeMap::new();
    for _ in 0..n_nodes {
        let id = NodeId(r.read_u32::<LittleEndian>()?);
        let p = Point::new(r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?);
        let cost = r.read_f64::<LittleEndian>()?;
        if node_centroids.insert(id, p).is_some() {
            return Err(Error::Format(format!("duplicate node id {id}")));
        }
        match (seed_policy, cost.is_nan()) {
            (SeedPolicy::CostMap, true) => {
                return Err(Error::Format(format!("node {id} lacks its cost sample")))
            }
            (SeedPolicy::CostMap, false) => {
                if !(cost > 0.0 && cost <= 1.0) {
                    return Err(Error::Format(format!(
                        "node {id} cost {cost} outside (0, 1]"
                    )));
                }
                node_costs.insert(id, cost);
            }
            (SeedPolicy::Preset, _) => {}
        }
    }

    let mut adjacency: std::collections::BTreeMap<NodeId, std::collections::BTreeSet<NodeId>> =
        node_centroids
            .keys()
            .map(|&n| (n, std::collections::BTreeSet::new()))
            .collect();
    let n_edges = r.read_u64::<LittleEndian>()?;
    for _ in 0..n_edges {
        let a = NodeId(r.read_u32::<LittleEndian>()?);
        let b = NodeId(r.read_u32::<LittleEndian>()?);
        if a >= b || !node_centroids.contains_key(&a) || !node_centroids.contains_key(&b) {
            return Err(Error::Format(format!("malformed edge ({a}, {b})")));
        }
        adjacency.get_mut(&a).expect("known").insert(b);
        adjacency.get_mut(&b).expect("known").insert(a);
    }

    let n_states = r.read_u64::<LittleEndian>()? as usize;
    let mut states = Vec::with_capacity(n_states);
    let mut index = std::collections::BTreeMap::new();
    for i in 0..n_states {
        let node = NodeId(r.read_u32::<LittleEndian>()?);
        let goal = GoalId(r.read_u32::<LittleEndian>()?);
        states.push(GhmmState { node, goal });
        if index.insert((node, goal), i).is_some() {
            return Err(Error::Format(format!("duplicate state ({node}, {goal})")));
        }
    }
    let mut prior = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        prior.push(r.read_f64::<LittleEndian>()?);
    }
    let nnz = r.read_u64::<LittleEndian>()?;
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_states];
    let mut prev: Option<(u32, u32)> = None;
    for _ in 0..nnz {
        let j = r.read_u32::<LittleEndian>()?;
        let k = r.read_u32::<LittleEndian>()?;
        let a = r.read_f64::<LittleEndian>()?;
        if (j as usize) >= n_states || (k as usize) >= n_states {
            return Err(Error::Format(format!("triplet ({j}, {k}) out of range")));
        }
        if prev.is_some_and(|p| p >= (j, k)) {
            return Err(Error::Format(
                "triplets not in ascending (row, col) order".into(),
            ));
        }
        prev = Some((j, k));
        rows[j as usize].push((k, a));
    }
    let mut row_learned = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        row_learned.push(match r.read_u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("bad learned flag {other}"))),
        });
    }

    Ok(GhmmModel {
        states,
        index,
        prior,
        rows,
        row_learned,
        node_centroids,
        node_costs,
        adjacency,
        goal_set,
        config,
        seed_policy,
        extent,
        topology_revision,
    })
}

/// Lossless text rendering of the full model, one datum per line. Floats
/// use the shortest round-trip form, so equal dumps mean equal models.
pub fn model_to_text(m: &GhmmModel) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "ghmm-model {FORMAT_VERSION}");
    let _ = writeln!(
        out,
        "policy {}",
        match m.seed_policy {
            SeedPolicy::CostMap => "cost-map",
            SeedPolicy::Preset => "preset",
        }
    );
    let _ = writeln!(out, "topology-revision {}", m.topology_revision);
    let _ = writeln!(
        out,
        "extent {} {} {} {}",
        m.extent.min.x, m.extent.min.y, m.extent.max.x, m.extent.max.y
    );
    let c = &m.config;
    let _ = writeln!(
        out,
        "config {} {} {} {} {} {}",
        c.epsilon, c.sigma_obs, c.dwell_threshold, c.bw_learning_rate, c.pi0, c.a0
    );
    let _ = writeln!(
        out,
        "goal-set next {} dwell {}",
        m.goal_set.next_id, m.goal_set.dwell_threshold
    );
    for (id, (node, p)) in &m.goal_set.goals {
        let _ = writeln!(out, "goal {id} {node} {} {}", p.x, p.y);
    }
    for (id, p) in &m.node_centroids {
        let _ = write!(out, "node {id} {} {}", p.x, p.y);
        match m.node_costs.get(id) {
            Some(cost) => {
                let _ = writeln!(out, " {cost}");
            }
            None => {
                let _ = writeln!(out, " -");
            }
        }
    }
    for (&a, nbrs) in &m.adjacency {
        for &b in nbrs.iter().filter(|&&b| a < b) {
            let _ = writeln!(out, "edge {a} {b}");
        }
    }
    for s in &m.states {
        let _ = writeln!(out, "state {} {}", s.node, s.goal);
    }
    for (i, p) in m.prior.iter().enumerate() {
        let _ = writeln!(out, "prior {i} {p}");
    }
    for (j, row) in m.rows.iter().enumerate() {
        for &(k, a) in row {
            let _ = writeln!(out, "trans {j} {k} {a}");
        }
    }
    for (i, learned) in m.row_learned.iter().enumerate() {
        let _ = writeln!(out, "learned {i} {}", *learned as u8);
    }
    out
}

pub fn save_model_text(model: &GhmmModel, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, model_to_text(model))?)
}

#[cfg(test)]
mod tests {
    use super::super::{
        incremental_baum_welch, init_model_from_topology, make_baseline, GoalSet, LearningConfig,
    };
    use super::*;
    use crate::costmap::PotentialCostMap;
    use crate::topology::build_prior_topology;

    fn trained_model() -> GhmmModel {
        let values: Vec<f64> = (0..100)
            .map(|i| 0.1 + 0.8 * (i % 10) as f64 / 9.0)
            .collect();
        let map = PotentialCostMap::from_values(Point::new(0.0, 0.0), 1.0, 10, 10, values).unwrap();
        let topo = build_prior_topology(&map, &[Point::new(9.0, 9.0)], 4.0, 0.05).unwrap();
        let mut goals = GoalSet::new(50);
        let pinned = topo.nodes().find(|n| n.pinned).unwrap();
        goals.add_goal(pinned.id, pinned.centroid);
        let mut model =
            init_model_from_topology(&topo, &map, &goals, LearningConfig::for_tau(4.0)).unwrap();
        let seq = vec![
            Point::new(1.0, 1.0),
            Point::new(3.0, 2.0),
            Point::new(5.0, 3.0),
            Point::new(7.0, 5.0),
        ];
        incremental_baum_welch(&mut model, &seq).unwrap();
        model
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let model = trained_model();
        let dir = std::env::temp_dir().join("ghmm-io-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bin");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn preset_round_trip_is_exact() {
        let values = vec![0.5; 64];
        let map = PotentialCostMap::from_values(Point::new(0.0, 0.0), 1.0, 8, 8, values).unwrap();
        let topo = build_prior_topology(&map, &[], 4.0, 0.05).unwrap();
        let mut goals = GoalSet::new(50);
        let n = topo.nodes().next().unwrap();
        goals.add_goal(n.id, n.centroid);
        let model = make_baseline(&topo, &goals, 0.7, 0.3, LearningConfig::for_tau(4.0)).unwrap();
        let dir = std::env::temp_dir().join("ghmm-io-preset");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bin");
        save_model(&model, &path).unwrap();
        assert_eq!(model, load_model(&path).unwrap());
    }

    #[test]
    fn corrupt_and_trailing_inputs_are_rejected() {
        let model = trained_model();
        let dir = std::env::temp_dir().join("ghmm-io-corrupt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bin");
        save_model(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format(_))));

        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format(_))));

        bytes.truncate(bytes.len() - 10);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn text_dump_is_deterministic_and_complete() {
        let model = trained_model();
        let text = model_to_text(&model);
        assert_eq!(text, model_to_text(&model));
        assert!(text.starts_with("ghmm-model 1\npolicy cost-map\n"));
        for prefix in [
            "goal ", "node ", "edge ", "state ", "prior ", "trans ", "learned ",
        ] {
            assert!(
                text.lines().any(|l| l.starts_with(prefix)),
                "missing {prefix}"
            );
        }
        let n_trans = text.lines().filter(|l| l.starts_with("trans ")).count();
        let nnz: usize = (0..model.n_states()).map(|i| model.row(i).len()).sum();
        assert_eq!(n_trans, nnz);
    }
}

//! Dataset ingestion, the train/evaluate protocol, and model comparison.
//!
//! Training replays each trajectory through the full online pipeline:
//! topology update, model structure update, goal discovery, then one
//! incremental Baum-Welch pass over the sequence. Evaluation freezes the
//! model, filters each test trajectory and predicts H steps ahead from
//! every timestep, scoring the Euclidean error against the ground truth
//! at t+H. Comparison repeats this for the cost-map-seeded model and the
//! preset baseline at several training sizes and reduces the per-trajectory
//! error series to combined p-values per class.

pub mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::costmap::PotentialCostMap;
use crate::geom::Point;
use crate::ghmm::{
    apply_topology_delta, goals_from_destinations, incremental_baum_welch,
    init_model_from_topology, update_goals, GhmmModel, LearningConfig,
};
use crate::inference::{filter_update, initial_belief, predict, prediction_error};
use crate::topology::{build_prior_topology, TopologicalMap};
use crate::{Error, Result};

pub use crate::ghmm::make_baseline;
pub use stats::{combine_pvalues, paired_test};

/// Whether a trajectory follows the legal route (via crosswalks) or cuts
/// across the road.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TrajectoryClass {
    Legal,
    Illegal,
}

impl fmt::Display for TrajectoryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrajectoryClass::Legal => "legal",
            TrajectoryClass::Illegal => "illegal",
        })
    }
}

impl std::str::FromStr for TrajectoryClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "legal" => Ok(TrajectoryClass::Legal),
            "illegal" => Ok(TrajectoryClass::Illegal),
            other => Err(Error::TrajectoryData(format!(
                "unknown trajectory class {other:?}, expected legal or illegal"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: u64,
    pub position: Point,
    /// Accepted in the data format; the observation model ignores it.
    pub velocity: Option<Point>,
}

/// One tracked pedestrian. Timesteps are strictly increasing and there
/// are at least two samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub class: TrajectoryClass,
    pub samples: Vec<TrajectorySample>,
    /// Tracking was lost before the route completed. In-memory annotation
    /// only; the CSV format does not persist it.
    pub partial: bool,
}

impl Trajectory {
    pub fn positions(&self) -> Vec<Point> {
        self.samples.iter().map(|s| s.position).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::TrajectoryData(format!(
                "trajectory {:?} has {} samples, need at least 2",
                self.id,
                self.samples.len()
            )));
        }
        for pair in self.samples.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(Error::TrajectoryData(format!(
                    "trajectory {:?}: timestep {} does not increase past {}",
                    self.id, pair[1].t, pair[0].t
                )));
            }
        }
        if let Some(s) = self.samples.iter().find(|s| !s.position.is_finite()) {
            return Err(Error::TrajectoryData(format!(
                "trajectory {:?}: non-finite position at t={}",
                self.id, s.t
            )));
        }
        Ok(())
    }
}

/// Reads trajectories from CSV with header `id,class,t,x,y,vx,vy` (the
/// velocity columns are optional). Rows of one trajectory must appear in
/// increasing-t order; the result is sorted by id.
pub fn load_trajectories(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let with_velocity = match cols.as_slice() {
        ["id", "class", "t", "x", "y"] => false,
        ["id", "class", "t", "x", "y", "vx", "vy"] => true,
        other => {
            return Err(Error::TrajectoryData(format!(
                "unexpected trajectory header {other:?}"
            )))
        }
    };

    let mut grouped: BTreeMap<String, Trajectory> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line().to_string())
            .unwrap_or_else(|| "?".into());
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| Error::TrajectoryData(format!("line {line}: missing field {i}")))
        };
        let ctx =
            |what: &str, v: &str| Error::TrajectoryData(format!("line {line}: bad {what} {v:?}"));
        let id = field(0)?.to_string();
        let class: TrajectoryClass = field(1)?.parse()?;
        let t: u64 = field(2)?
            .parse()
            .map_err(|_| ctx("timestep", field(2).unwrap_or("")))?;
        let x: f64 = field(3)?
            .parse()
            .map_err(|_| ctx("x", field(3).unwrap_or("")))?;
        let y: f64 = field(4)?
            .parse()
            .map_err(|_| ctx("y", field(4).unwrap_or("")))?;
        let velocity = if with_velocity {
            let vx = field(5)?;
            let vy = field(6)?;
            match (vx.is_empty(), vy.is_empty()) {
                (true, true) => None,
                (false, false) => Some(Point::new(
                    vx.parse().map_err(|_| ctx("vx", vx))?,
                    vy.parse().map_err(|_| ctx("vy", vy))?,
                )),
                _ => return Err(ctx("velocity pair", "one of vx/vy empty")),
            }
        } else {
            None
        };
        let sample = TrajectorySample {
            t,
            position: Point::new(x, y),
            velocity,
        };
        let entry = grouped.entry(id.clone()).or_insert_with(|| Trajectory {
            id,
            class,
            samples: Vec::new(),
            partial: false,
        });
        if entry.class != class {
            return Err(Error::TrajectoryData(format!(
                "line {line}: trajectory {:?} changes class mid-file",
                entry.id
            )));
        }
        entry.samples.push(sample);
    }

    let trajectories: Vec<Trajectory> = grouped.into_values().collect();
    for t in &trajectories {
        t.validate()?;
    }
    Ok(trajectories)
}

/// Writes trajectories in the same CSV format `load_trajectories` reads.
/// The in-memory `partial` flag is not part of the format.
pub fn save_trajectories(trajectories: &[Trajectory], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("id,class,t,x,y,vx,vy\n");
    for traj in trajectories {
        for s in &traj.samples {
            let (vx, vy) = match s.velocity {
                Some(v) => (v.x.to_string(), v.y.to_string()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                traj.id, traj.class, s.t, s.position.x, s.position.y, vx, vy
            ));
        }
    }
    Ok(std::fs::write(path, out)?)
}

/// Ids of trajectories that trained and of those skipped (with the reason).
#[derive(Debug, Default)]
pub struct TrainReport {
    pub trained: Vec<String>,
    pub skipped: Vec<(String, String)>,
}

/// Runs the full online pipeline over the corpus, mutating the model and
/// topology in place. Per trajectory: each observation updates the
/// topology and mirrors the delta onto the model, dwell statistics feed
/// goal discovery, and one Baum-Welch pass runs over the whole sequence.
/// A trajectory that fails is skipped with a logged diagnostic; the
/// match streak is reset between trajectories either way.
pub fn train(
    model: &mut GhmmModel,
    topo: &mut TopologicalMap,
    map: &PotentialCostMap,
    corpus: &[Trajectory],
) -> Result<TrainReport> {
    if corpus.is_empty() {
        return Err(Error::InvalidParameter("training corpus is empty".into()));
    }
    let mut report = TrainReport::default();
    for traj in corpus {
        match train_one(model, topo, map, traj) {
            Ok(()) => report.trained.push(traj.id.clone()),
            Err(e) => {
                log::warn!("skipping trajectory {:?}: {e}", traj.id);
                report.skipped.push((traj.id.clone(), e.to_string()));
            }
        }
        topo.end_sequence();
    }
    Ok(report)
}

fn train_one(
    model: &mut GhmmModel,
    topo: &mut TopologicalMap,
    map: &PotentialCostMap,
    traj: &Trajectory,
) -> Result<()> {
    traj.validate()?;
    let bounds = topo.bounds();
    if let Some(p) = traj.samples.iter().find(|s| !bounds.contains(&s.position)) {
        return Err(Error::TrajectoryData(format!(
            "trajectory {:?}: position ({}, {}) outside the scene",
            traj.id, p.position.x, p.position.y
        )));
    }
    for obs in traj.samples.iter().map(|s| s.position) {
        let delta = topo.itm_update(&obs)?;
        topo.apply_delta(&delta)?;
        apply_topology_delta(model, &delta, map)?;
    }
    update_goals(model, topo)?;
    incremental_baum_welch(model, &traj.positions())
}

/// Prediction errors of one trajectory at a fixed horizon: entry k is the
/// error of the prediction emitted at timestep k against the ground truth
/// at timestep k+H (sample indices).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub trajectory: String,
    pub class: TrajectoryClass,
    pub horizon: u64,
    pub errors: Vec<f64>,
    /// Filter underflows recovered by re-initializing from the prior.
    pub degenerate_resets: usize,
}

/// Evaluates a frozen model on test trajectories: filter with each sample,
/// predict `horizon` steps ahead, and score against the sample at t+H.
/// A degenerate belief is recorded, re-initialized from the prior, and
/// evaluation continues. The model is never mutated.
pub fn evaluate(
    model: &GhmmModel,
    topo: &TopologicalMap,
    test: &[Trajectory],
    horizon: u64,
) -> Result<Vec<ErrorSeries>> {
    if model.topology_revision() != topo.revision() {
        return Err(Error::Model(format!(
            "model is in sync with topology revision {} but the map is at {}",
            model.topology_revision(),
            topo.revision()
        )));
    }
    evaluate_frozen(model, test, horizon)
}

/// [`evaluate`] without the topology sync check, for callers holding only
/// a deserialized model: it mirrors the nodes and edges it was trained
/// with, so filtering and prediction need no live topological map.
pub fn evaluate_frozen(
    model: &GhmmModel,
    test: &[Trajectory],
    horizon: u64,
) -> Result<Vec<ErrorSeries>> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(test.len());
    for traj in test {
        traj.validate()?;
        let positions = traj.positions();
        let n = positions.len();
        let h = horizon as usize;
        let mut series = ErrorSeries {
            trajectory: traj.id.clone(),
            class: traj.class,
            horizon,
            errors: Vec::with_capacity(n.saturating_sub(h)),
            degenerate_resets: 0,
        };
        let mut belief = initial_belief(model);
        for (t, obs) in positions.iter().enumerate() {
            belief = match filter_update(model, &belief, obs) {
                Ok(b) => b,
                Err(Error::DegenerateBelief { .. }) => {
                    series.degenerate_resets += 1;
                    initial_belief(model)
                }
                Err(e) => return Err(e),
            };
            if t + h < n {
                let pred = predict(model, &belief, horizon);
                series
                    .errors
                    .push(prediction_error(&pred.expected_position, &positions[t + h]));
            }
        }
        debug_assert_eq!(series.errors.len(), n.saturating_sub(h));
        out.push(series);
    }
    Ok(out)
}

/// A column of the comparison protocol: how much training each side gets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingLevel {
    /// Both models trained on the first `n` corpus trajectories (capped).
    Size(usize),
    /// Untrained cost-seeded model against the fully trained baseline.
    ZeroVsFull,
}

impl fmt::Display for TrainingLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainingLevel::Size(n) => write!(f, "{n}"),
            TrainingLevel::ZeroVsFull => f.write_str("0-full"),
        }
    }
}

impl std::str::FromStr for TrainingLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "0-full" {
            return Ok(TrainingLevel::ZeroVsFull);
        }
        s.parse::<usize>().map(TrainingLevel::Size).map_err(|_| {
            Error::InvalidParameter(format!(
                "training level must be a size or \"0-full\", got {s:?}"
            ))
        })
    }
}

/// Comparison outcome for one (training level, class) cell.
#[derive(Debug, Clone)]
pub struct ClassComparison {
    pub level: TrainingLevel,
    pub class: TrajectoryClass,
    /// One-sided paired p-values (proposed better) per test trajectory.
    pub trajectory_pvalues: Vec<(String, f64)>,
    pub combined_p: f64,
    pub mean_error_proposed: f64,
    pub mean_error_baseline: f64,
}

/// Error-vs-time curve of one model on one test trajectory.
#[derive(Debug, Clone)]
pub struct ErrorCurve {
    pub model: &'static str,
    pub level: TrainingLevel,
    pub class: TrajectoryClass,
    pub trajectory: String,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ComparisonReport {
    pub horizon: u64,
    pub entries: Vec<ClassComparison>,
    pub curves: Vec<ErrorCurve>,
}

#[derive(Debug, Clone)]
pub struct ComparisonConfig {
    pub horizon: u64,
    pub levels: Vec<TrainingLevel>,
    pub tau: f64,
    pub epsilon_itm: f64,
    pub learning: LearningConfig,
    pub pi0: f64,
    pub a0: f64,
}

/// Runs the full protocol: per training level, train the cost-seeded
/// model and the preset baseline on the same corpus prefix, evaluate both
/// on the test set at the configured horizon, and reduce to per-class
/// paired p-values (proposed better than baseline) with Fisher combining.
pub fn run_comparison(
    map: &PotentialCostMap,
    destinations: &[Point],
    corpus: &[Trajectory],
    test: &[Trajectory],
    cfg: &ComparisonConfig,
) -> Result<ComparisonReport> {
    if test.is_empty() {
        return Err(Error::InvalidParameter(
            "comparison needs a test set".into(),
        ));
    }
    let mut report = ComparisonReport {
        horizon: cfg.horizon,
        ..ComparisonReport::default()
    };
    for &level in &cfg.levels {
        let (n_proposed, n_baseline) = match level {
            TrainingLevel::Size(n) => (n.min(corpus.len()), n.min(corpus.len())),
            TrainingLevel::ZeroVsFull => (0, corpus.len()),
        };
        let proposed = trained_side(map, destinations, corpus, n_proposed, cfg, false)?;
        let baseline = trained_side(map, destinations, corpus, n_baseline, cfg, true)?;
        let proposed_series = evaluate(&proposed.0, &proposed.1, test, cfg.horizon)?;
        let baseline_series = evaluate(&baseline.0, &baseline.1, test, cfg.horizon)?;

        for class in [TrajectoryClass::Legal, TrajectoryClass::Illegal] {
            let mut pvalues = Vec::new();
            let mut sum = (0.0, 0.0);
            let mut count = 0usize;
            for (p, b) in proposed_series.iter().zip(&baseline_series) {
                if p.class != class {
                    continue;
                }
                report.curves.push(ErrorCurve {
                    model: "proposed",
                    level,
                    class,
                    trajectory: p.trajectory.clone(),
                    errors: p.errors.clone(),
                });
                report.curves.push(ErrorCurve {
                    model: "baseline",
                    level,
                    class,
                    trajectory: b.trajectory.clone(),
                    errors: b.errors.clone(),
                });
                sum.0 += p.errors.iter().sum::<f64>();
                sum.1 += b.errors.iter().sum::<f64>();
                count += p.errors.len();
                if p.errors.len() >= 2 {
                    pvalues.push((p.trajectory.clone(), paired_test(p, b)?));
                }
            }
            if pvalues.is_empty() {
                continue;
            }
            let combined = combine_pvalues(&pvalues.iter().map(|(_, p)| *p).collect::<Vec<f64>>())?;
            report.entries.push(ClassComparison {
                level,
                class,
                trajectory_pvalues: pvalues,
                combined_p: combined,
                mean_error_proposed: sum.0 / count as f64,
                mean_error_baseline: sum.1 / count as f64,
            });
        }
    }
    Ok(report)
}

/// Builds one side of a comparison: fresh prior topology and goals, the
/// requested model flavor, then training on the corpus prefix.
fn trained_side(
    map: &PotentialCostMap,
    destinations: &[Point],
    corpus: &[Trajectory],
    n_train: usize,
    cfg: &ComparisonConfig,
    baseline: bool,
) -> Result<(GhmmModel, TopologicalMap)> {
    let mut topo = build_prior_topology(map, destinations, cfg.tau, cfg.epsilon_itm)?;
    let goals = goals_from_destinations(&topo, destinations, cfg.learning.dwell_threshold)?;
    let mut model = if baseline {
        make_baseline(&topo, &goals, cfg.pi0, cfg.a0, cfg.learning)?
    } else {
        init_model_from_topology(&topo, map, &goals, cfg.learning)?
    };
    if n_train > 0 {
        train(&mut model, &mut topo, map, &corpus[..n_train])?;
    }
    Ok((model, topo))
}

fn push_f64(out: &mut String, v: f64) {
    use std::fmt::Write as _;
    let _ = write!(out, "{v}");
}

// P-values get vanishingly small; plain Display would pad them with
// hundreds of zeros, so they go out in scientific notation instead.
// Both forms round-trip exactly.
fn push_pvalue(out: &mut String, v: f64) {
    use std::fmt::Write as _;
    let _ = write!(out, "{v:e}");
}

/// Writes the report as four CSV files into `dir` and returns their paths:
/// combined p-values, per-trajectory p-values, raw error curves, and
/// per-timestep mean error curves. Output is byte-deterministic.
pub fn export_report(report: &ComparisonReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    let mut combined = String::from(
        "class,comparison,n_trajectories,mean_error_proposed_m,mean_error_baseline_m,p_value\n",
    );
    for e in &report.entries {
        combined.push_str(&format!(
            "{},{},{},",
            e.class,
            e.level,
            e.trajectory_pvalues.len()
        ));
        push_f64(&mut combined, e.mean_error_proposed);
        combined.push(',');
        push_f64(&mut combined, e.mean_error_baseline);
        combined.push(',');
        push_pvalue(&mut combined, e.combined_p);
        combined.push('\n');
    }

    let mut per_traj = String::from("class,comparison,trajectory_id,p_value\n");
    for e in &report.entries {
        for (id, p) in &e.trajectory_pvalues {
            per_traj.push_str(&format!("{},{},{id},", e.class, e.level));
            push_pvalue(&mut per_traj, *p);
            per_traj.push('\n');
        }
    }

    let mut curves = String::from("model,comparison,class,trajectory_id,t,error_m\n");
    for c in &report.curves {
        for (t, err) in c.errors.iter().enumerate() {
            curves.push_str(&format!(
                "{},{},{},{},{t},",
                c.model, c.level, c.class, c.trajectory
            ));
            push_f64(&mut curves, *err);
            curves.push('\n');
        }
    }

    // Mean error across trajectories at each prediction timestep.
    let mut means = String::from("model,comparison,class,t,mean_error_m,n\n");
    let mut groups: BTreeMap<(String, String, String), Vec<&ErrorCurve>> = BTreeMap::new();
    for c in &report.curves {
        groups
            .entry((
                c.model.to_string(),
                c.level.to_string(),
                c.class.to_string(),
            ))
            .or_default()
            .push(c);
    }
    for ((model, level, class), group) in &groups {
        let longest = group.iter().map(|c| c.errors.len()).max().unwrap_or(0);
        for t in 0..longest {
            let at_t: Vec<f64> = group
                .iter()
                .filter_map(|c| c.errors.get(t).copied())
                .collect();
            means.push_str(&format!("{model},{level},{class},{t},"));
            push_f64(&mut means, at_t.iter().sum::<f64>() / at_t.len() as f64);
            means.push_str(&format!(",{}\n", at_t.len()));
        }
    }

    let files = [
        ("combined_pvalues.csv", combined),
        ("trajectory_pvalues.csv", per_traj),
        ("error_curves.csv", curves),
        ("mean_error_curves.csv", means),
    ];
    let mut paths = Vec::with_capacity(files.len());
    for (name, content) in files {
        let path = dir.join(name);
        std::fs::write(&path, content)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ghmm::GoalSet;
    use approx::assert_relative_eq;

    fn uniform_map(w: usize, h: usize) -> PotentialCostMap {
        PotentialCostMap::from_values(Point::new(0.0, 0.0), 1.0, w, h, vec![0.5; w * h]).unwrap()
    }

    fn traj(id: &str, class: TrajectoryClass, points: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            id: id.into(),
            class,
            samples: points
                .iter()
                .enumerate()
                .map(|(t, &(x, y))| TrajectorySample {
                    t: t as u64,
                    position: Point::new(x, y),
                    velocity: None,
                })
                .collect(),
            partial: false,
        }
    }

    #[test]
    fn csv_load_minimal_and_rejections() {
        let dir = std::env::temp_dir().join("ghmm-eval-csv");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("min.csv");
        std::fs::write(
            &path,
            "id,class,t,x,y\np1,legal,0,1.5,2\np1,legal,1,1.6,2.1\n",
        )
        .unwrap();
        let trajs = load_trajectories(&path).unwrap();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].id, "p1");
        assert_eq!(trajs[0].class, TrajectoryClass::Legal);
        assert_eq!(trajs[0].samples.len(), 2);
        assert_eq!(trajs[0].samples[0].position, Point::new(1.5, 2.0));

        // Duplicate timestep violates strict monotonicity.
        std::fs::write(&path, "id,class,t,x,y\np1,legal,0,1,2\np1,legal,0,1,2\n").unwrap();
        assert!(matches!(
            load_trajectories(&path),
            Err(Error::TrajectoryData(_))
        ));

        // A single sample is too short.
        std::fs::write(&path, "id,class,t,x,y\np1,legal,0,1,2\n").unwrap();
        assert!(load_trajectories(&path).is_err());

        // Unknown class.
        std::fs::write(
            &path,
            "id,class,t,x,y\np1,sideways,0,1,2\np1,sideways,1,2,2\n",
        )
        .unwrap();
        assert!(load_trajectories(&path).is_err());
    }

    #[test]
    fn csv_round_trip_identity() {
        let mut a = traj(
            "walker-a",
            TrajectoryClass::Legal,
            &[(0.5, 1.0), (1.25, 1.5), (2.0, 2.0)],
        );
        a.samples[1].velocity = Some(Point::new(0.75, 0.5));
        let b = traj(
            "walker-b",
            TrajectoryClass::Illegal,
            &[(3.0, 4.0), (3.5, 4.5)],
        );
        let original = vec![a, b];

        let dir = std::env::temp_dir().join("ghmm-eval-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        save_trajectories(&original, &path).unwrap();
        let loaded = load_trajectories(&path).unwrap();
        assert_eq!(loaded, original);
    }

    #[test]
    fn training_accumulates_dwell_without_growth() {
        let map = uniform_map(10, 10);
        let mut topo = build_prior_topology(&map, &[Point::new(5.0, 5.0)], 5.0, 0.05).unwrap();
        let goals = goals_from_destinations(&topo, &[Point::new(5.0, 5.0)], 50).unwrap();
        let mut model =
            init_model_from_topology(&topo, &map, &goals, LearningConfig::for_tau(5.0)).unwrap();
        let nodes_before = topo.nodes().count();
        // All samples at one node centroid: no growth, dwell accumulates.
        let stationary = traj("idle", TrajectoryClass::Legal, &[(5.0, 5.0); 8]);
        let report = train(&mut model, &mut topo, &map, &[stationary]).unwrap();
        assert_eq!(report.trained.len(), 1);
        assert!(report.skipped.is_empty());
        assert_eq!(topo.nodes().count(), nodes_before);
        let dwell = topo.nodes().map(|n| n.dwell_accumulator).max().unwrap();
        assert_eq!(dwell, 7);
        model.check_invariants().unwrap();
    }

    #[test]
    fn training_skips_bad_trajectories_and_continues() {
        let map = uniform_map(10, 10);
        let mut topo = build_prior_topology(&map, &[], 5.0, 0.05).unwrap();
        let first = topo.nodes().next().unwrap();
        let mut goals = GoalSet::new(50);
        goals.add_goal(first.id, first.centroid);
        let mut model =
            init_model_from_topology(&topo, &map, &goals, LearningConfig::for_tau(5.0)).unwrap();
        let out_of_scene = traj("bad", TrajectoryClass::Legal, &[(2.0, 2.0), (14.0, 2.0)]);
        let fine = traj(
            "good",
            TrajectoryClass::Legal,
            &[(2.0, 2.0), (3.0, 2.5), (4.0, 3.0)],
        );
        let report = train(&mut model, &mut topo, &map, &[out_of_scene, fine]).unwrap();
        assert_eq!(report.trained, vec!["good".to_string()]);
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].0, "bad");
        model.check_invariants().unwrap();
    }

    #[test]
    fn evaluate_respects_horizon_arithmetic() {
        let map = uniform_map(10, 10);
        let topo = build_prior_topology(&map, &[], 5.0, 0.05).unwrap();
        let first = topo.nodes().next().unwrap();
        let mut goals = GoalSet::new(50);
        goals.add_goal(first.id, first.centroid);
        let model =
            init_model_from_topology(&topo, &map, &goals, LearningConfig::for_tau(5.0)).unwrap();
        let walk = traj(
            "w",
            TrajectoryClass::Legal,
            &[(1.0, 1.0), (2.0, 1.0), (3.0, 1.0), (4.0, 1.0), (5.0, 1.0)],
        );
        // Horizon >= length: no ground truth pairs.
        let series = evaluate(&model, &topo, &[walk.clone()], 5).unwrap();
        assert!(series[0].errors.is_empty());
        // T = 5, H = 2: exactly 3 scored predictions, all finite and >= 0.
        let series = evaluate(&model, &topo, &[walk], 2).unwrap();
        assert_eq!(series[0].errors.len(), 3);
        assert!(series[0].errors.iter().all(|e| e.is_finite() && *e >= 0.0));
    }

    #[test]
    fn evaluate_stationary_single_state_is_exact() {
        // One node, one goal: A = [1], the belief is pinned and the
        // expected position equals the centroid at every horizon.
        let map = uniform_map(10, 10);
        let mut topo = TopologicalMap::empty(map.extent(), 2.0, 0.05).unwrap();
        let n = topo.insert_node(Point::new(4.0, 4.0), true).unwrap();
        let mut goals = GoalSet::new(50);
        goals.add_goal(n, Point::new(4.0, 4.0));
        let model =
            init_model_from_topology(&topo, &map, &goals, LearningConfig::for_tau(2.0)).unwrap();
        let stay = traj("s", TrajectoryClass::Legal, &[(4.0, 4.0); 6]);
        let series = evaluate(&model, &topo, &[stay], 2).unwrap();
        assert_eq!(series[0].errors.len(), 4);
        for e in &series[0].errors {
            assert_relative_eq!(*e, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn evaluate_first_error_matches_hand_computation() {
        // Three-node chain from the prediction tests; walk along it and
        // check the first scored error against explicit matrix math.
        let map = uniform_map(12, 6);
        let mut topo = TopologicalMap::empty(map.extent(), 2.0, 0.05).unwrap();
        let a = topo.insert_node(Point::new(2.0, 3.0), false).unwrap();
        let b = topo.insert_node(Point::new(5.0, 3.0), false).unwrap();
        let c = topo.insert_node(Point::new(8.0, 3.0), false).unwrap();
        topo.insert_edge(a, b).unwrap();
        topo.insert_edge(b, c).unwrap();
        let mut goals = GoalSet::new(50);
        goals.add_goal(c, Point::new(8.0, 3.0));
        let mut cfg = LearningConfig::for_tau(2.0);
        cfg.sigma_obs = 1.0;
        let model = init_model_from_topology(&topo, &map, &goals, cfg).unwrap();

        let pts = [(2.0, 3.0), (3.5, 3.0), (5.0, 3.0), (6.5, 3.0), (8.0, 3.0)];
        let walk = traj("chain", TrajectoryClass::Legal, &pts);
        let h = 1u64;

        // Filtered belief after the first observation at node a's centroid.
        let a_mat = [
            [1.0 / 11.0, 10.0 / 11.0, 0.0],
            [10.0 / 21.0, 1.0 / 21.0, 10.0 / 21.0],
            [0.0, 10.0 / 11.0, 1.0 / 11.0],
        ];
        let peak = 1.0 / (2.0 * std::f64::consts::PI);
        let b0 = [peak, peak * (-4.5f64).exp(), peak * (-18.0f64).exp()];
        let prior = [1.0 / 3.0; 3];
        // The filter propagates the prior through A before weighting by
        // the likelihood.
        let mut pre = [0.0; 3];
        for j in 0..3 {
            for k in 0..3 {
                pre[k] += prior[j] * a_mat[j][k];
            }
        }
        let mut w: Vec<f64> = (0..3).map(|i| pre[i] * b0[i]).collect();
        let mass: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= mass);
        // One propagation step, then the centroid-weighted mean.
        let mut w1 = [0.0; 3];
        for j in 0..3 {
            for k in 0..3 {
                w1[k] += w[j] * a_mat[j][k];
            }
        }
        let xs = [2.0, 5.0, 8.0];
        let expected_x: f64 = (0..3).map(|i| w1[i] * xs[i]).sum();
        let want = (expected_x - pts[1].0).abs();

        let series = evaluate(&model, &topo, &[walk], h).unwrap();
        assert_relative_eq!(series[0].errors[0], want, epsilon = 1e-12);
    }

    #[test]
    fn evaluate_never_mutates_the_model() {
        let map = uniform_map(10, 10);
        let mut topo = build_prior_topology(&map, &[], 5.0, 0.05).unwrap();
        let first = topo.nodes().next().unwrap();
        let mut goals = GoalSet::new(50);
        goals.add_goal(first.id, first.centroid);
        let mut model =
            init_model_from_topology(&topo, &map, &goals, LearningConfig::for_tau(5.0)).unwrap();
        let corpus = vec![traj(
            "t0",
            TrajectoryClass::Legal,
            &[(1.0, 1.0), (2.0, 1.5), (3.0, 2.0), (4.0, 2.5)],
        )];
        train(&mut model, &mut topo, &map, &corpus).unwrap();
        let before = crate::ghmm::model_to_text(&model);
        evaluate(&model, &topo, &corpus, 2).unwrap();
        assert_eq!(crate::ghmm::model_to_text(&model), before);
    }

    #[test]
    fn export_report_shapes_and_determinism() {
        let dir = std::env::temp_dir().join("ghmm-eval-report");
        let _ = std::fs::remove_dir_all(&dir);

        // Empty report: header-only files.
        let empty = ComparisonReport::default();
        let paths = export_report(&empty, &dir).unwrap();
        assert_eq!(paths.len(), 4);
        for p in &paths {
            let content = std::fs::read_to_string(p).unwrap();
            assert_eq!(content.lines().count(), 1, "{p:?} should be header-only");
        }

        let report = ComparisonReport {
            horizon: 3,
            entries: vec![ClassComparison {
                level: TrainingLevel::Size(2),
                class: TrajectoryClass::Legal,
                trajectory_pvalues: vec![("t0".into(), 0.25), ("t1".into(), 0.5)],
                combined_p: 0.3,
                mean_error_proposed: 1.0,
                mean_error_baseline: 2.0,
            }],
            curves: vec![
                ErrorCurve {
                    model: "proposed",
                    level: TrainingLevel::Size(2),
                    class: TrajectoryClass::Legal,
                    trajectory: "t0".into(),
                    errors: vec![1.0, 2.0, 3.0],
                },
                ErrorCurve {
                    model: "baseline",
                    level: TrainingLevel::Size(2),
                    class: TrajectoryClass::Legal,
                    trajectory: "t0".into(),
                    errors: vec![2.0, 3.0],
                },
            ],
        };
        let paths = export_report(&report, &dir).unwrap();
        let curves = std::fs::read_to_string(&paths[2]).unwrap();
        // Header plus one row per (curve, timestep) pair.
        assert_eq!(curves.lines().count(), 1 + 3 + 2);
        let before: Vec<String> = paths
            .iter()
            .map(|p| std::fs::read_to_string(p).unwrap())
            .collect();
        let paths2 = export_report(&report, &dir).unwrap();
        for (p, want) in paths2.iter().zip(&before) {
            assert_eq!(&std::fs::read_to_string(p).unwrap(), want);
        }
    }

    #[test]
    fn training_level_parsing_and_rendering() {
        assert_eq!(
            "50".parse::<TrainingLevel>().unwrap(),
            TrainingLevel::Size(50)
        );
        assert_eq!(
            "0-full".parse::<TrainingLevel>().unwrap(),
            TrainingLevel::ZeroVsFull
        );
        assert!("half".parse::<TrainingLevel>().is_err());
        assert_eq!(TrainingLevel::Size(250).to_string(), "250");
        assert_eq!(TrainingLevel::ZeroVsFull.to_string(), "0-full");
    }
}

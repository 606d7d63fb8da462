//! Subcommand implementations threading the config through the pipeline.
//!
//! Every command range-checks the config before writing anything, reads
//! its inputs, runs the owning library stage, and writes artifacts into
//! the output directory. All outputs are byte-deterministic for fixed
//! inputs and flags.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use ghmm_core::costmap::{
    compute_potential_map, export_cost_map_csv, load_cost_map, save_cost_map, PotentialCostMap,
};
use ghmm_core::eval::{
    self, evaluate_frozen, export_report, load_trajectories, run_comparison, save_trajectories,
    ComparisonConfig, ComparisonReport, TrainingLevel, TrajectoryClass,
};
use ghmm_core::ghmm::{
    goals_from_destinations, init_model_from_topology, load_model, save_model, sequence_loglik,
    GhmmModel,
};
use ghmm_core::inference::{
    filter_update, initial_belief, position_marginal, predict as predict_from_belief,
    prediction_error,
};
use ghmm_core::scene::{list_destinations, load_scene, save_scene, SceneDescription};
use ghmm_core::synthetic;
use ghmm_core::topology::{build_prior_topology, save_topology, TopologicalMap};
use ghmm_core::Error as CoreError;

use crate::config::RunConfig;

/// Column layout of the prediction trace. One row per observation; the
/// ground-truth fields are empty on the last H rows, where the predicted
/// sample index runs past the end of the track.
pub const TRACE_HEADER: &str =
    "t,obs_x,obs_y,mode_node,mode_x,mode_y,pred_x,pred_y,map_goal,gt_x,gt_y,error_m\n";

/// Rasterizes the scene into the cost map binary plus a CSV debug dump.
pub fn build_map(cfg: &RunConfig, time: u64) -> Result<()> {
    cfg.validate()?;
    let scene_path = cfg.require_scene()?;
    let out = cfg.require_output_dir()?;
    let scene = load_scene(scene_path)
        .with_context(|| format!("reading scene {}", scene_path.display()))?;
    let map = compute_potential_map(&scene, cfg.resolution, time)?;

    fs::create_dir_all(out)?;
    let bin_path = cfg.cost_map_path()?;
    ensure_parent(&bin_path)?;
    save_cost_map(&map, &bin_path)?;
    let csv_path = out.join("cost_map.csv");
    export_cost_map_csv(&map, &csv_path)?;
    println!(
        "cost map: {} x {} cells at {} m/cell",
        map.width(),
        map.height(),
        map.resolution()
    );
    println!("wrote {} and {}", bin_path.display(), csv_path.display());
    Ok(())
}

/// Seeds the prior topology and model from the cost map, trains on the
/// corpus with per-trajectory progress, and saves model plus topology.
/// An empty corpus yields the untrained prior-only model.
pub fn train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let scene_path = cfg.require_scene()?;
    let corpus_path = cfg.require_trajectories()?;
    let out = cfg.require_output_dir()?;
    let scene = load_scene(scene_path)
        .with_context(|| format!("reading scene {}", scene_path.display()))?;
    let corpus = load_trajectories(corpus_path)
        .with_context(|| format!("reading trajectories {}", corpus_path.display()))?;
    let map_path = cfg.cost_map_path()?;
    let map = load_cost_map(&map_path, scene.bounds.min).with_context(|| {
        format!(
            "reading cost map {} (run build-map first)",
            map_path.display()
        )
    })?;
    let (mut model, mut topo) = seed_pipeline(&scene, &map, cfg)?;
    fs::create_dir_all(out)?;

    if corpus.is_empty() {
        println!("corpus is empty; writing the untrained prior-only model");
    } else {
        let total = corpus.len();
        let mut skipped = 0usize;
        for (i, traj) in corpus.iter().enumerate() {
            let report = eval::train(&mut model, &mut topo, &map, std::slice::from_ref(traj))?;
            match report.skipped.first() {
                None => println!("[{}/{total}] trained {}", i + 1, traj.id),
                Some((_, why)) => {
                    skipped += 1;
                    println!("[{}/{total}] skipped {}: {why}", i + 1, traj.id);
                }
            }
        }
        let mut loglik = 0.0;
        let mut scored = 0usize;
        for traj in &corpus {
            if let Ok(l) = sequence_loglik(&model, &traj.positions()) {
                loglik += l;
                scored += 1;
            }
        }
        println!(
            "trained {} of {total} trajectories ({skipped} skipped); \
             corpus log-likelihood over {scored} scorable sequences: {loglik:.3}",
            total - skipped
        );
    }

    let model_path = cfg.model_path()?;
    ensure_parent(&model_path)?;
    save_model(&model, &model_path)?;
    let topo_path = out.join("topology.txt");
    save_topology(&topo, &topo_path)?;
    println!(
        "model: {} states over {} nodes -> {}",
        model.n_states(),
        model.node_count(),
        model_path.display()
    );
    println!("topology -> {}", topo_path.display());
    Ok(())
}

/// Prior topology over the cost map, goals at the scene destinations,
/// and the cost-seeded model on top.
fn seed_pipeline(
    scene: &SceneDescription,
    map: &PotentialCostMap,
    cfg: &RunConfig,
) -> Result<(GhmmModel, TopologicalMap)> {
    let dests = list_destinations(scene, cfg.tau / 2.0);
    let topo = build_prior_topology(map, &dests, cfg.tau, cfg.epsilon_itm)?;
    let goals = goals_from_destinations(&topo, &dests, cfg.dwell_threshold)?;
    let model = init_model_from_topology(&topo, map, &goals, cfg.learning())?;
    Ok((model, topo))
}

/// Filters one trajectory through a saved model and writes the trace:
/// filtered position mode, expected position H steps ahead, MAP goal,
/// and the realized error wherever ground truth exists.
pub fn predict(cfg: &RunConfig, trajectory_id: &str) -> Result<()> {
    cfg.validate()?;
    let model_path = cfg.model_path()?;
    let model = load_model(&model_path)
        .with_context(|| format!("reading model {} (run train first)", model_path.display()))?;
    let source = cfg.require_trajectories()?;
    let trajectories = load_trajectories(source)
        .with_context(|| format!("reading trajectories {}", source.display()))?;
    let traj = trajectories
        .iter()
        .find(|t| t.id == trajectory_id)
        .with_context(|| {
            format!(
                "trajectory {trajectory_id:?} not found in {}",
                source.display()
            )
        })?;
    let out = cfg.require_output_dir()?;
    fs::create_dir_all(out)?;

    let h = cfg.horizon as usize;
    let positions = traj.positions();
    let mut belief = initial_belief(&model);
    let mut resets = 0usize;
    let mut rows_with_truth = 0usize;
    let mut text = String::from(TRACE_HEADER);
    for (k, sample) in traj.samples.iter().enumerate() {
        let obs = sample.position;
        belief = match filter_update(&model, &belief, &obs) {
            Ok(b) => b,
            Err(CoreError::DegenerateBelief { .. }) => {
                resets += 1;
                initial_belief(&model)
            }
            Err(e) => return Err(e.into()),
        };
        let marginal = position_marginal(&model, &belief);
        let mode_node = marginal
            .iter()
            .fold(None, |best: Option<(_, f64)>, (&n, &w)| match best {
                Some((_, bw)) if w <= bw => best,
                _ => Some((n, w)),
            })
            .expect("position marginal of a nonempty model")
            .0;
        let mode = model
            .node_centroid(mode_node)
            .expect("marginal nodes have centroids");
        let pred = predict_from_belief(&model, &belief, cfg.horizon);
        let ep = pred.expected_position;
        write!(
            text,
            "{},{},{},{mode_node},{},{},{},{},{}",
            sample.t, obs.x, obs.y, mode.x, mode.y, ep.x, ep.y, pred.map_goal.0
        )?;
        if k + h < positions.len() {
            let truth = positions[k + h];
            rows_with_truth += 1;
            writeln!(
                text,
                ",{},{},{}",
                truth.x,
                truth.y,
                prediction_error(&ep, &truth)
            )?;
        } else {
            text.push_str(",,,\n");
        }
    }
    let trace_path = out.join(format!("predict_{}.csv", sanitize(trajectory_id)));
    fs::write(&trace_path, text)?;
    println!(
        "{} rows ({rows_with_truth} with ground truth at H = {}), {resets} degenerate resets",
        traj.samples.len(),
        cfg.horizon
    );
    println!("trace -> {}", trace_path.display());
    Ok(())
}

/// Scores a saved model on a test set at the configured horizon and
/// writes the per-timestep error series.
pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let model_path = cfg.model_path()?;
    let model = load_model(&model_path)
        .with_context(|| format!("reading model {} (run train first)", model_path.display()))?;
    let test_path = cfg.require_test_trajectories()?;
    let test = load_trajectories(test_path)
        .with_context(|| format!("reading test set {}", test_path.display()))?;
    if test.is_empty() {
        bail!("test set {} is empty", test_path.display());
    }
    let out = cfg.require_output_dir()?;
    fs::create_dir_all(out)?;

    let series = evaluate_frozen(&model, &test, cfg.horizon)?;
    let mut text = String::from("trajectory_id,class,horizon,t,error_m\n");
    for s in &series {
        for (t, e) in s.errors.iter().enumerate() {
            writeln!(text, "{},{},{},{t},{e}", s.trajectory, s.class, s.horizon)?;
        }
    }
    let path = out.join("error_series.csv");
    fs::write(&path, text)?;

    for class in [TrajectoryClass::Legal, TrajectoryClass::Illegal] {
        let of_class: Vec<_> = series.iter().filter(|s| s.class == class).collect();
        let n: usize = of_class.iter().map(|s| s.errors.len()).sum();
        if n == 0 {
            continue;
        }
        let sum: f64 = of_class.iter().flat_map(|s| &s.errors).sum();
        let resets: usize = of_class.iter().map(|s| s.degenerate_resets).sum();
        println!(
            "{class}: mean error {:.3} m over {n} predictions from {} trajectories \
             ({resets} degenerate resets)",
            sum / n as f64,
            of_class.len()
        );
    }
    println!("error series -> {}", path.display());
    Ok(())
}

/// Runs the comparison protocol level by level: train the cost-seeded
/// model and the preset baseline on the same corpus prefix, evaluate both
/// on the test set, and export the report. If a level fails, whatever
/// completed is flushed next to a FAILED marker before the error surfaces.
pub fn compare(cfg: &RunConfig, levels: &[TrainingLevel]) -> Result<()> {
    cfg.validate()?;
    let scene_path = cfg.require_scene()?;
    let corpus_path = cfg.require_trajectories()?;
    let Some(test_path) = cfg.test_trajectories.as_deref() else {
        bail!(
            "compare needs --test-trajectories: a held-out set distinct from the training corpus"
        );
    };
    let out = cfg.require_output_dir()?;
    let scene = load_scene(scene_path)
        .with_context(|| format!("reading scene {}", scene_path.display()))?;
    let corpus = load_trajectories(corpus_path)
        .with_context(|| format!("reading trajectories {}", corpus_path.display()))?;
    let test = load_trajectories(test_path)
        .with_context(|| format!("reading test set {}", test_path.display()))?;
    if corpus.is_empty() {
        bail!("training corpus {} is empty", corpus_path.display());
    }
    let map = compute_potential_map(&scene, cfg.resolution, 0)?;
    let dests = list_destinations(&scene, cfg.tau / 2.0);

    // Sizes cap to the corpus; capping can collide presets, so drop
    // duplicates while keeping the requested order.
    let mut capped: Vec<TrainingLevel> = Vec::new();
    for &level in levels {
        let c = match level {
            TrainingLevel::Size(n) => TrainingLevel::Size(n.min(corpus.len())),
            other => other,
        };
        if !capped.contains(&c) {
            capped.push(c);
        }
    }

    fs::create_dir_all(out)?;
    let mut report = ComparisonReport {
        horizon: cfg.horizon,
        ..ComparisonReport::default()
    };
    for &level in &capped {
        let level_cfg = ComparisonConfig {
            horizon: cfg.horizon,
            levels: vec![level],
            tau: cfg.tau,
            epsilon_itm: cfg.epsilon_itm,
            learning: cfg.learning(),
            pi0: cfg.pi0,
            a0: cfg.a0,
        };
        match run_comparison(&map, &dests, &corpus, &test, &level_cfg) {
            Ok(mut part) => {
                for e in &part.entries {
                    println!(
                        "level {} {}: proposed {:.3} m vs baseline {:.3} m \
                         over {} trajectories, combined p = {:.3e}",
                        e.level,
                        e.class,
                        e.mean_error_proposed,
                        e.mean_error_baseline,
                        e.trajectory_pvalues.len(),
                        e.combined_p
                    );
                }
                report.entries.append(&mut part.entries);
                report.curves.append(&mut part.curves);
            }
            Err(e) => {
                if let Err(flush) = export_report(&report, out) {
                    log::warn!("could not flush partial results: {flush}");
                }
                let marker = format!("comparison failed at training level {level}: {e}\n");
                if let Err(flush) = fs::write(out.join("FAILED"), marker) {
                    log::warn!("could not write the failure marker: {flush}");
                }
                return Err(anyhow::Error::new(e).context(format!("training level {level}")));
            }
        }
    }
    let files = export_report(&report, out)?;
    let marker = out.join("FAILED");
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    for f in &files {
        println!("report -> {}", f.display());
    }
    Ok(())
}

/// Synthetic scene families the generator can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Family {
    /// Straight sidewalk corridor with a destination at each end.
    Corridor,
    /// Two sidewalks along a road with one crosswalk and two POIs.
    Crossing,
}

/// Writes a synthetic scene plus training and test corpora. Training
/// tracks are cut short at a random point (tracking loss); test tracks
/// are complete. Everything derives from the seed.
pub fn gen_data(
    cfg: &RunConfig,
    family: Family,
    train_n: usize,
    test_n: usize,
    seed: u64,
) -> Result<()> {
    cfg.validate()?;
    let out = cfg.require_output_dir()?;
    fs::create_dir_all(out)?;
    let (scene, corpus, test) = match family {
        Family::Corridor => (
            synthetic::corridor_scene(),
            synthetic::corridor_corpus(train_n, seed, true),
            synthetic::corridor_corpus(test_n, seed + 1, false),
        ),
        Family::Crossing => (
            synthetic::crossing_scene(),
            synthetic::crossing_corpus(train_n, seed, true),
            synthetic::crossing_test_set(test_n, seed + 1),
        ),
    };
    let scene_path = out.join("scene.txt");
    save_scene(&scene, &scene_path)?;
    let train_path = out.join("train.csv");
    save_trajectories(&corpus, &train_path)?;
    let test_path = out.join("test.csv");
    save_trajectories(&test, &test_path)?;
    println!("scene -> {}", scene_path.display());
    println!(
        "{} training trajectories -> {}",
        corpus.len(),
        train_path.display()
    );
    println!(
        "{} test trajectories -> {}",
        test.len(),
        test_path.display()
    );
    Ok(())
}

/// Trajectory ids become file name parts; anything outside
/// `[A-Za-z0-9._-]` turns into an underscore.
fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

//! Deterministic synthetic scenes and pedestrian corpora.
//!
//! Two fixed scenes back the test and demo tooling: a straight corridor
//! for likelihood experiments and a two-sidewalk road crossing with one
//! crosswalk and two points of interest for the model comparison
//! protocol. Trajectory generators walk noisy constant-speed paths along
//! route waypoints; everything is seeded, so a given (n, seed) pair
//! always produces byte-identical corpora.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::eval::{Trajectory, TrajectoryClass, TrajectorySample};
use crate::geom::{Point, Rect};
use crate::scene::{Obstacle, Poi, SceneDescription};

/// Observation noise applied to generated positions, in meters: a quarter
/// of the canonical 2 m grid interval these scenes are evaluated at.
const NOISE_SIGMA: f64 = 0.5;
/// Generated positions keep this distance from the scene border.
const BORDER_MARGIN: f64 = 0.05;

/// Straight 30 x 8 m corridor walked left to right. Road edges along the
/// long sides shape the cost field; a sidewalk band covers the middle.
pub fn corridor_scene() -> SceneDescription {
    let bounds = Rect::new(Point::new(0.0, 0.0), Point::new(30.0, 8.0));
    let mut scene =
        SceneDescription::new(bounds, vec![Point::new(29.0, 4.0), Point::new(1.0, 4.0)]);
    scene
        .road_edges
        .push(vec![Point::new(0.0, 1.0), Point::new(30.0, 1.0)]);
    scene
        .road_edges
        .push(vec![Point::new(0.0, 7.0), Point::new(30.0, 7.0)]);
    scene.sidewalks.push(vec![
        Point::new(0.0, 2.5),
        Point::new(30.0, 2.5),
        Point::new(30.0, 5.5),
        Point::new(0.0, 5.5),
    ]);
    scene
}

/// Corpus for the corridor: eastbound walks along the centerline with
/// per-trajectory speed, observation noise, and (optionally) partial
/// tracks truncated at a random fraction of the route.
pub fn corridor_corpus(n: usize, seed: u64, partial: bool) -> Vec<Trajectory> {
    let scene = corridor_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let route = [Point::new(1.0, 4.0), Point::new(29.0, 4.0)];
    (0..n)
        .map(|i| {
            let speed = rng.gen_range(0.3..0.5);
            make_trajectory(
                format!("corridor-{i:03}"),
                TrajectoryClass::Legal,
                &route,
                speed,
                partial,
                &scene.bounds,
                &mut rng,
            )
        })
        .collect()
}

/// Two-sidewalk urban crossing: a horizontal road (y in [8, 12]) with one
/// crosswalk at x in [19, 21], sidewalks on both sides, two points of
/// interest, and destinations at the lower-left and upper-right corners.
pub fn crossing_scene() -> SceneDescription {
    let bounds = Rect::new(Point::new(0.0, 0.0), Point::new(40.0, 20.0));
    let mut scene =
        SceneDescription::new(bounds, vec![Point::new(1.0, 7.0), Point::new(39.0, 13.0)]);
    scene.road_polygons.push(vec![
        Point::new(0.0, 8.0),
        Point::new(40.0, 8.0),
        Point::new(40.0, 12.0),
        Point::new(0.0, 12.0),
    ]);
    scene
        .road_edges
        .push(vec![Point::new(0.0, 8.0), Point::new(40.0, 8.0)]);
    scene
        .road_edges
        .push(vec![Point::new(0.0, 12.0), Point::new(40.0, 12.0)]);
    scene.sidewalks.push(vec![
        Point::new(0.0, 6.0),
        Point::new(40.0, 6.0),
        Point::new(40.0, 8.0),
        Point::new(0.0, 8.0),
    ]);
    scene.sidewalks.push(vec![
        Point::new(0.0, 12.0),
        Point::new(40.0, 12.0),
        Point::new(40.0, 14.0),
        Point::new(0.0, 14.0),
    ]);
    scene.crosswalks.push(vec![
        Point::new(19.0, 8.0),
        Point::new(21.0, 8.0),
        Point::new(21.0, 12.0),
        Point::new(19.0, 12.0),
    ]);
    scene.pois.push(Poi {
        label: "cafe".into(),
        position: Point::new(31.0, 15.0),
    });
    scene.pois.push(Poi {
        label: "store".into(),
        position: Point::new(9.0, 5.0),
    });
    // Building fronts along both outer bands. Without them every off-road
    // cell sits at the cost floor and the map cannot tell the walkable
    // corridor from the lawns around it.
    for i in 0..8 {
        let x = 2.5 + 5.0 * i as f64;
        for y in [2.0, 18.0] {
            scene.obstacles.push(Obstacle {
                center: Point::new(x, y),
                radius: 2.5,
                active_interval: (0, u64::MAX),
            });
        }
    }
    scene
}

/// Training corpus for the crossing scene. Directions alternate, and one
/// trajectory in five crosses the road directly: illegal crossings are
/// anomalies, so a corpus drawn from the population sees them rarely.
/// Legal routes cross via the crosswalk.
pub fn crossing_corpus(n: usize, seed: u64, partial: bool) -> Vec<Trajectory> {
    crossing_set(n, seed, partial, |i| {
        let class = if (i + 1) % 5 == 0 {
            TrajectoryClass::Illegal
        } else {
            TrajectoryClass::Legal
        };
        (class, i % 2 == 0)
    })
}

/// Balanced held-out set for the crossing scene: classes alternate
/// strictly and every trajectory is complete, so per-class statistics get
/// equal sample counts even though illegal crossings are rare in the
/// population the corpus models.
pub fn crossing_test_set(n: usize, seed: u64) -> Vec<Trajectory> {
    crossing_set(n, seed, false, |i| {
        let class = if i % 2 == 0 {
            TrajectoryClass::Legal
        } else {
            TrajectoryClass::Illegal
        };
        (class, i % 4 < 2)
    })
}

fn crossing_set(
    n: usize,
    seed: u64,
    partial: bool,
    pick: impl Fn(usize) -> (TrajectoryClass, bool),
) -> Vec<Trajectory> {
    let scene = crossing_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let low = Point::new(1.0, 7.0);
    let high = Point::new(39.0, 13.0);
    (0..n)
        .map(|i| {
            let speed = rng.gen_range(0.25..0.35);
            let (class, eastbound) = pick(i);
            let mut route = match class {
                TrajectoryClass::Legal => {
                    vec![low, Point::new(20.0, 7.0), Point::new(20.0, 13.0), high]
                }
                TrajectoryClass::Illegal => {
                    // Diagonal road crossing; at most x = 18.2 inside the
                    // road interior, so it never touches the crosswalk.
                    let xc = rng.gen_range(6.0..14.0);
                    vec![low, Point::new(xc, 7.0), Point::new(xc + 5.0, 13.0), high]
                }
            };
            if !eastbound {
                route.reverse();
            }
            let dir = if eastbound { "east" } else { "west" };
            make_trajectory(
                format!("{class}-{dir}-{i:03}"),
                class,
                &route,
                speed,
                partial,
                &scene.bounds,
                &mut rng,
            )
        })
        .collect()
}

fn make_trajectory(
    id: String,
    class: TrajectoryClass,
    route: &[Point],
    speed: f64,
    partial: bool,
    bounds: &Rect,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let mut path = route_positions(route, speed);
    if partial {
        let keep = rng.gen_range(0.4..0.9);
        path.truncate(((path.len() as f64 * keep) as usize).max(2));
    }
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("constant sigma is valid");
    let samples = path
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let jittered = Point::new(p.x + noise.sample(rng), p.y + noise.sample(rng));
            TrajectorySample {
                t: t as u64,
                position: clamp_into(jittered, bounds),
                velocity: None,
            }
        })
        .collect();
    Trajectory {
        id,
        class,
        samples,
        partial,
    }
}

/// Positions along the route polyline at arclength steps of `speed`,
/// ending exactly on the final waypoint.
fn route_positions(route: &[Point], speed: f64) -> Vec<Point> {
    let total: f64 = route.windows(2).map(|w| w[0].dist(&w[1])).sum();
    let steps = (total / speed).ceil() as usize;
    (0..=steps)
        .map(|k| point_along(route, (k as f64 * speed).min(total)))
        .collect()
}

fn point_along(route: &[Point], s: f64) -> Point {
    let mut remaining = s;
    for pair in route.windows(2) {
        let len = pair[0].dist(&pair[1]);
        if remaining <= len {
            let t = if len > 0.0 { remaining / len } else { 0.0 };
            return Point::new(
                pair[0].x + t * (pair[1].x - pair[0].x),
                pair[0].y + t * (pair[1].y - pair[0].y),
            );
        }
        remaining -= len;
    }
    *route.last().expect("routes have at least two waypoints")
}

fn clamp_into(p: Point, bounds: &Rect) -> Point {
    Point::new(
        p.x.clamp(bounds.min.x + BORDER_MARGIN, bounds.max.x - BORDER_MARGIN),
        p.y.clamp(bounds.min.y + BORDER_MARGIN, bounds.max.y - BORDER_MARGIN),
    )
}

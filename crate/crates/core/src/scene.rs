//! Semantic scene descriptions and their text format.
//!
//! A scene is axis-aligned world geometry in meters: road polygons and
//! their edge polylines, sidewalk and crosswalk polygons, labeled points
//! of interest, time-gated circular obstacles, and the destination points
//! pedestrians may be heading for. Scenes are read from and written to a
//! line-oriented UTF-8 format with a `scene-format 1` header line.

use std::fmt::Write as _;
use std::path::Path;

use crate::geom::{Point, Rect};
use crate::{Error, Result};

/// Gains and length scales of the potential field components.
///
/// Road edges and obstacles contribute repulsive exponentials
/// `gain * exp(-d / sigma)` truncated at `cutoff_sigmas * sigma`; road
/// interiors contribute a plateau proportional to the road's width; points
/// of interest contribute attractive (negative) exponential wells. The
/// summed field is clipped at zero and affinely rescaled to `[floor, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialParams {
    pub edge_gain: f64,
    pub edge_sigma: f64,
    /// Plateau height per meter of road width.
    pub road_gain: f64,
    pub obstacle_gain: f64,
    pub obstacle_sigma: f64,
    pub poi_gain: f64,
    pub poi_sigma: f64,
    /// Exponential components are truncated to zero beyond this many sigmas.
    pub cutoff_sigmas: f64,
    /// Lower bound of the rescaled cost, must lie in (0, 1).
    pub floor: f64,
}

impl Default for PotentialParams {
    fn default() -> Self {
        PotentialParams {
            edge_gain: 0.5,
            edge_sigma: 1.0,
            road_gain: 0.08,
            obstacle_gain: 1.0,
            obstacle_sigma: 1.0,
            poi_gain: 0.3,
            poi_sigma: 2.0,
            cutoff_sigmas: 6.0,
            floor: 0.05,
        }
    }
}

impl PotentialParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("edge-sigma", self.edge_sigma),
            ("obstacle-sigma", self.obstacle_sigma),
            ("poi-sigma", self.poi_sigma),
            ("cutoff-sigmas", self.cutoff_sigmas),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        let nonnegative = [
            ("edge-gain", self.edge_gain),
            ("road-gain", self.road_gain),
            ("obstacle-gain", self.obstacle_gain),
            ("poi-gain", self.poi_gain),
        ];
        for (name, v) in nonnegative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be nonnegative and finite, got {v}"
                )));
            }
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "floor must lie in (0, 1), got {}",
                self.floor
            )));
        }
        Ok(())
    }

    fn set(&mut self, name: &str, value: f64) -> std::result::Result<(), String> {
        match name {
            "edge-gain" => self.edge_gain = value,
            "edge-sigma" => self.edge_sigma = value,
            "road-gain" => self.road_gain = value,
            "obstacle-gain" => self.obstacle_gain = value,
            "obstacle-sigma" => self.obstacle_sigma = value,
            "poi-gain" => self.poi_gain = value,
            "poi-sigma" => self.poi_sigma = value,
            "cutoff-sigmas" => self.cutoff_sigmas = value,
            "floor" => self.floor = value,
            other => return Err(format!("unknown parameter `{other}`")),
        }
        Ok(())
    }
}

/// Labeled point of interest (store, cafe, ...). POIs attract pedestrians
/// and double as destinations.
#[derive(Debug, Clone, PartialEq)]
pub struct Poi {
    pub label: String,
    pub position: Point,
}

/// Circular obstacle active on a closed timestep interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub center: Point,
    pub radius: f64,
    pub active_interval: (u64, u64),
}

impl Obstacle {
    pub fn active_at(&self, time: u64) -> bool {
        self.active_interval.0 <= time && time <= self.active_interval.1
    }
}

/// Semantic geometry of an urban scene, all coordinates in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDescription {
    pub bounds: Rect,
    /// Polylines along road borders; repel pedestrians.
    pub road_edges: Vec<Vec<Point>>,
    /// Road interiors; resist crossing proportionally to their width.
    pub road_polygons: Vec<Vec<Point>>,
    /// Zero-resistance crossing regions.
    pub crosswalks: Vec<Vec<Point>>,
    /// Zero-resistance walking regions.
    pub sidewalks: Vec<Vec<Point>>,
    pub pois: Vec<Poi>,
    pub obstacles: Vec<Obstacle>,
    /// Viable exit/entry points of the scene; must be nonempty.
    pub destinations: Vec<Point>,
    pub potential: PotentialParams,
}

impl SceneDescription {
    /// Minimal valid scene: bounds plus at least one destination.
    pub fn new(bounds: Rect, destinations: Vec<Point>) -> Self {
        SceneDescription {
            bounds,
            road_edges: Vec::new(),
            road_polygons: Vec::new(),
            crosswalks: Vec::new(),
            sidewalks: Vec::new(),
            pois: Vec::new(),
            obstacles: Vec::new(),
            destinations,
            potential: PotentialParams::default(),
        }
    }

    /// Checks every structural invariant, naming the offending element.
    pub fn validate(&self) -> Result<()> {
        if !(self.bounds.width() > 0.0 && self.bounds.height() > 0.0) {
            return Err(Error::InvalidScene(format!(
                "bounds must have positive area, got {} x {}",
                self.bounds.width(),
                self.bounds.height()
            )));
        }
        if self.destinations.is_empty() {
            return Err(Error::InvalidScene(
                "scene must list at least one destination".into(),
            ));
        }
        let polys = [
            ("road", &self.road_polygons),
            ("crosswalk", &self.crosswalks),
            ("sidewalk", &self.sidewalks),
        ];
        for (kind, list) in polys {
            for (i, poly) in list.iter().enumerate() {
                if poly.len() < 3 {
                    return Err(Error::InvalidScene(format!(
                        "{kind} polygon {i} has {} vertices, need at least 3",
                        poly.len()
                    )));
                }
                for p in poly {
                    self.check_in_bounds(p, &format!("{kind} polygon {i}"))?;
                }
            }
        }
        for (i, line) in self.road_edges.iter().enumerate() {
            if line.len() < 2 {
                return Err(Error::InvalidScene(format!(
                    "road-edge polyline {i} has {} vertices, need at least 2",
                    line.len()
                )));
            }
            for p in line {
                self.check_in_bounds(p, &format!("road-edge polyline {i}"))?;
            }
        }
        for poi in &self.pois {
            self.check_in_bounds(&poi.position, &format!("poi `{}`", poi.label))?;
        }
        for (i, obs) in self.obstacles.iter().enumerate() {
            if !(obs.radius > 0.0) {
                return Err(Error::InvalidScene(format!(
                    "obstacle {i} has nonpositive radius {}",
                    obs.radius
                )));
            }
            if obs.active_interval.0 > obs.active_interval.1 {
                return Err(Error::InvalidScene(format!(
                    "obstacle {i} active interval starts after it ends ({} > {})",
                    obs.active_interval.0, obs.active_interval.1
                )));
            }
            self.check_in_bounds(&obs.center, &format!("obstacle {i}"))?;
        }
        for (i, d) in self.destinations.iter().enumerate() {
            self.check_in_bounds(d, &format!("destination {i}"))?;
        }
        self.potential.validate()
    }

    fn check_in_bounds(&self, p: &Point, what: &str) -> Result<()> {
        if !p.is_finite() || !self.bounds.contains(p) {
            return Err(Error::InvalidScene(format!(
                "{what} lies outside scene bounds: ({}, {})",
                p.x, p.y
            )));
        }
        Ok(())
    }
}

/// Destinations and POI positions merged into one de-duplicated list.
///
/// Points closer than `merge_radius` to an already accepted point are
/// dropped; destinations take precedence over POIs, earlier entries over
/// later ones.
pub fn list_destinations(scene: &SceneDescription, merge_radius: f64) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::new();
    let candidates = scene
        .destinations
        .iter()
        .chain(scene.pois.iter().map(|p| &p.position));
    for cand in candidates {
        if out.iter().all(|p| p.dist(cand) > merge_radius) {
            out.push(*cand);
        }
    }
    out
}

/// Parses the scene text format. See [`save_scene_string`] for the schema.
pub fn parse_scene(text: &str) -> Result<SceneDescription> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if relevant(l).is_none() => continue,
            Some((n, l)) => break (n, relevant(l).unwrap()),
            None => {
                return Err(Error::SceneParse {
                    line: 0,
                    msg: "empty file, expected `scene-format 1` header".into(),
                })
            }
        }
    };
    if header.1 != "scene-format 1" {
        return Err(Error::SceneParse {
            line: header.0 + 1,
            msg: format!("expected `scene-format 1` header, got `{}`", header.1),
        });
    }

    let mut bounds: Option<Rect> = None;
    let mut scene = SceneDescription::new(
        Rect::new(Point::new(0.0, 0.0), Point::new(0.0, 0.0)),
        Vec::new(),
    );
    scene.destinations.clear();

    for (idx, raw) in lines {
        let line_no = idx + 1;
        let Some(line) = relevant(raw) else { continue };
        let mut parts = line.split_whitespace();
        let key = parts.next().expect("relevant lines are nonempty");
        let rest: Vec<&str> = parts.collect();
        let fail = |msg: String| Error::SceneParse { line: line_no, msg };

        match key {
            "bounds" => {
                let v = parse_floats(&rest, 4, "bounds", line_no)?;
                if bounds.is_some() {
                    return Err(fail("duplicate bounds line".into()));
                }
                bounds = Some(Rect::new(Point::new(v[0], v[1]), Point::new(v[2], v[3])));
            }
            "road" | "sidewalk" | "crosswalk" => {
                let pts = parse_points(&rest, 3, key, line_no)?;
                match key {
                    "road" => scene.road_polygons.push(pts),
                    "sidewalk" => scene.sidewalks.push(pts),
                    _ => scene.crosswalks.push(pts),
                }
            }
            "road-edge" => {
                scene.road_edges.push(parse_points(&rest, 2, key, line_no)?);
            }
            "poi" => {
                if rest.len() != 3 {
                    return Err(fail(format!(
                        "poi takes `label x y`, got {} fields",
                        rest.len()
                    )));
                }
                let v = parse_floats(&rest[1..], 2, "poi", line_no)?;
                scene.pois.push(Poi {
                    label: rest[0].to_string(),
                    position: Point::new(v[0], v[1]),
                });
            }
            "obstacle" => {
                let v = parse_floats(&rest, 5, "obstacle", line_no)?;
                if v[3] < 0.0 || v[4] < 0.0 || v[3].fract() != 0.0 || v[4].fract() != 0.0 {
                    return Err(fail(
                        "obstacle active interval must be nonnegative integers".into(),
                    ));
                }
                scene.obstacles.push(Obstacle {
                    center: Point::new(v[0], v[1]),
                    radius: v[2],
                    active_interval: (v[3] as u64, v[4] as u64),
                });
            }
            "destination" => {
                let v = parse_floats(&rest, 2, "destination", line_no)?;
                scene.destinations.push(Point::new(v[0], v[1]));
            }
            "param" => {
                if rest.len() != 2 {
                    return Err(fail(format!(
                        "param takes `name value`, got {} fields",
                        rest.len()
                    )));
                }
                let value = parse_floats(&rest[1..], 1, "param", line_no)?[0];
                scene.potential.set(rest[0], value).map_err(fail)?;
            }
            other => {
                return Err(fail(format!("unknown directive `{other}`")));
            }
        }
    }

    scene.bounds = bounds.ok_or_else(|| Error::SceneParse {
        line: 0,
        msg: "missing bounds line".into(),
    })?;
    scene.validate()?;
    Ok(scene)
}

/// Reads and validates a scene file.
pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneDescription> {
    let text = std::fs::read_to_string(path)?;
    parse_scene(&text)
}

/// Renders a scene in the canonical text format:
///
/// ```text
/// scene-format 1
/// bounds <min_x> <min_y> <max_x> <max_y>
/// road <x> <y> <x> <y> <x> <y> ...        # polygon, >= 3 vertices
/// road-edge <x> <y> <x> <y> ...           # polyline, >= 2 vertices
/// sidewalk <x> <y> ...                    # polygon
/// crosswalk <x> <y> ...                   # polygon
/// obstacle <cx> <cy> <radius> <t_start> <t_end>
/// poi <label> <x> <y>
/// destination <x> <y>
/// param <name> <value>
/// ```
///
/// `#` starts a comment; blank lines are ignored. Numbers round-trip
/// exactly (shortest representation that re-parses to the same value).
pub fn save_scene_string(scene: &SceneDescription) -> String {
    let mut out = String::from("scene-format 1\n");
    let b = &scene.bounds;
    let _ = writeln!(
        out,
        "bounds {} {} {} {}",
        b.min.x, b.min.y, b.max.x, b.max.y
    );
    let sections = [
        ("road", &scene.road_polygons),
        ("road-edge", &scene.road_edges),
        ("sidewalk", &scene.sidewalks),
        ("crosswalk", &scene.crosswalks),
    ];
    for (key, list) in sections {
        for item in list.iter() {
            let _ = write!(out, "{key}");
            for p in item {
                let _ = write!(out, " {} {}", p.x, p.y);
            }
            out.push('\n');
        }
    }
    for o in &scene.obstacles {
        let _ = writeln!(
            out,
            "obstacle {} {} {} {} {}",
            o.center.x, o.center.y, o.radius, o.active_interval.0, o.active_interval.1
        );
    }
    for poi in &scene.pois {
        let _ = writeln!(
            out,
            "poi {} {} {}",
            poi.label, poi.position.x, poi.position.y
        );
    }
    for d in &scene.destinations {
        let _ = writeln!(out, "destination {} {}", d.x, d.y);
    }
    let defaults = PotentialParams::default();
    if scene.potential != defaults {
        let p = &scene.potential;
        let d = &defaults;
        let params = [
            ("edge-gain", p.edge_gain, d.edge_gain),
            ("edge-sigma", p.edge_sigma, d.edge_sigma),
            ("road-gain", p.road_gain, d.road_gain),
            ("obstacle-gain", p.obstacle_gain, d.obstacle_gain),
            ("obstacle-sigma", p.obstacle_sigma, d.obstacle_sigma),
            ("poi-gain", p.poi_gain, d.poi_gain),
            ("poi-sigma", p.poi_sigma, d.poi_sigma),
            ("cutoff-sigmas", p.cutoff_sigmas, d.cutoff_sigmas),
            ("floor", p.floor, d.floor),
        ];
        for (name, value, default) in params {
            if value != default {
                let _ = writeln!(out, "param {name} {value}");
            }
        }
    }
    out
}

/// Writes the canonical text format to `path`.
pub fn save_scene(scene: &SceneDescription, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, save_scene_string(scene))?)
}

/// Strips comments and whitespace; `None` for lines with no content.
fn relevant(line: &str) -> Option<&str> {
    let line = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let line = line.trim();
    (!line.is_empty()).then_some(line)
}

fn parse_floats(fields: &[&str], expect: usize, what: &str, line: usize) -> Result<Vec<f64>> {
    if fields.len() != expect {
        return Err(Error::SceneParse {
            line,
            msg: format!("{what} takes {expect} numeric fields, got {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>().map_err(|_| Error::SceneParse {
                line,
                msg: format!("{what}: `{f}` is not a number"),
            })
        })
        .collect()
}

fn parse_points(fields: &[&str], min_pts: usize, what: &str, line: usize) -> Result<Vec<Point>> {
    if fields.len() % 2 != 0 || fields.len() < 2 * min_pts {
        return Err(Error::SceneParse {
            line,
            msg: format!(
                "{what} takes at least {min_pts} `x y` pairs, got {} fields",
                fields.len()
            ),
        });
    }
    let mut vals = Vec::with_capacity(fields.len());
    for f in fields {
        vals.push(f.parse::<f64>().map_err(|_| Error::SceneParse {
            line,
            msg: format!("{what}: `{f}` is not a number"),
        })?);
    }
    Ok(vals.chunks(2).map(|c| Point::new(c[0], c[1])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_scene() -> SceneDescription {
        let mut s = SceneDescription::new(
            Rect::new(Point::new(0.0, 0.0), Point::new(40.0, 20.0)),
            vec![Point::new(1.0, 7.0), Point::new(39.0, 13.0)],
        );
        s.road_polygons.push(vec![
            Point::new(0.0, 8.0),
            Point::new(40.0, 8.0),
            Point::new(40.0, 12.0),
            Point::new(0.0, 12.0),
        ]);
        s.road_edges
            .push(vec![Point::new(0.0, 8.0), Point::new(40.0, 8.0)]);
        s.road_edges
            .push(vec![Point::new(0.0, 12.0), Point::new(40.0, 12.0)]);
        s.sidewalks.push(vec![
            Point::new(0.0, 6.0),
            Point::new(40.0, 6.0),
            Point::new(40.0, 8.0),
            Point::new(0.0, 8.0),
        ]);
        s.crosswalks.push(vec![
            Point::new(19.0, 8.0),
            Point::new(21.0, 8.0),
            Point::new(21.0, 12.0),
            Point::new(19.0, 12.0),
        ]);
        s.pois.push(Poi {
            label: "cafe".into(),
            position: Point::new(31.0, 15.0),
        });
        s.obstacles.push(Obstacle {
            center: Point::new(10.0, 10.0),
            radius: 1.5,
            active_interval: (0, 500),
        });
        s.potential.poi_gain = 0.25;
        s
    }

    #[test]
    fn minimal_scene_parses() {
        let text = "scene-format 1\nbounds 0 0 10 10\ndestination 5 5\n";
        let s = parse_scene(text).unwrap();
        assert_eq!(s.destinations, vec![Point::new(5.0, 5.0)]);
        assert!(s.road_polygons.is_empty());
        assert!(s.pois.is_empty());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "# scene\n\nscene-format 1\nbounds 0 0 10 10  # extent\n\ndestination 5 5\n";
        assert!(parse_scene(text).is_ok());
    }

    #[test]
    fn missing_header_rejected() {
        let err = parse_scene("bounds 0 0 10 10\ndestination 5 5\n").unwrap_err();
        assert!(matches!(err, Error::SceneParse { line: 1, .. }), "{err}");
    }

    #[test]
    fn poi_outside_bounds_named_in_error() {
        let text = "scene-format 1\nbounds 0 0 10 10\ndestination 5 5\npoi shop 15 5\n";
        let err = parse_scene(text).unwrap_err();
        assert!(err.to_string().contains("poi `shop`"), "{err}");
    }

    #[test]
    fn no_destination_rejected() {
        let err = parse_scene("scene-format 1\nbounds 0 0 10 10\n").unwrap_err();
        assert!(err.to_string().contains("destination"), "{err}");
    }

    #[test]
    fn malformed_lines_carry_line_numbers() {
        let text = "scene-format 1\nbounds 0 0 10 10\ndestination 5 5\nobstacle 1 1 0.5 3\n";
        match parse_scene(text).unwrap_err() {
            Error::SceneParse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn obstacle_interval_order_enforced() {
        let text = "scene-format 1\nbounds 0 0 10 10\ndestination 5 5\nobstacle 1 1 0.5 7 3\n";
        let err = parse_scene(text).unwrap_err();
        assert!(err.to_string().contains("starts after"), "{err}");
    }

    #[test]
    fn round_trip_preserves_everything() {
        let scene = full_scene();
        let text = save_scene_string(&scene);
        let back = parse_scene(&text).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn destination_merge() {
        let mut s = full_scene();
        s.pois.push(Poi {
            label: "kiosk".into(),
            position: Point::new(1.2, 7.0), // within 0.5 m of destination 0
        });
        let pts = list_destinations(&s, 0.5);
        // 2 destinations + cafe; kiosk merged away.
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[0], Point::new(1.0, 7.0));
        assert_eq!(pts[2], Point::new(31.0, 15.0));
        // Far apart points all survive with a zero radius.
        assert_eq!(list_destinations(&s, 0.0).len(), 4);
    }

    #[test]
    fn empty_poi_list_is_identity() {
        let s = SceneDescription::new(
            Rect::new(Point::new(0.0, 0.0), Point::new(10.0, 10.0)),
            vec![Point::new(1.0, 1.0), Point::new(9.0, 9.0)],
        );
        assert_eq!(list_destinations(&s, 0.5), s.destinations);
    }
}

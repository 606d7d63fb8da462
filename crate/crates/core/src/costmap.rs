//! Potential cost maps over the scene ground plane.
//!
//! The cost of a location is a linear sum of component potentials: road
//! edges repel, road interiors resist proportionally to their width,
//! active obstacles repel, points of interest attract. The summed field
//! is clipped at zero, sampled at cell centers of a regular grid, and
//! affinely rescaled into `[floor, 1]`; sidewalk and crosswalk cells are
//! then assigned the floor cost because they offer no resistance. Every
//! stored value therefore lies in `(0, 1]`.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::geom::{dist_point_polyline, point_in_polygon, polygon_width, Point, Rect};
use crate::scene::SceneDescription;
use crate::{Error, Result};

/// File magic of the binary cost map format.
pub const COST_MAP_MAGIC: [u8; 4] = *b"PCM1";

/// Regular grid of costs in `(0, 1]`, cell-center registered.
///
/// Cell `(col, row)` covers the square with corner
/// `origin + (col, row) * resolution`; its stored value is the cost at the
/// square's center. Values are row-major, row 0 at `origin.y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialCostMap {
    origin: Point,
    resolution: f64,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl PotentialCostMap {
    /// Builds a map from raw parts, validating every invariant.
    pub fn from_values(
        origin: Point,
        resolution: f64,
        width: usize,
        height: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "resolution must be positive and finite, got {resolution}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(
                "cost map must have at least one cell per axis".into(),
            ));
        }
        if values.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "cost map of {width} x {height} cells needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "cost values must lie in (0, 1], got {bad}"
            )));
        }
        Ok(PotentialCostMap {
            origin,
            resolution,
            width,
            height,
            values,
        })
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// World-coordinate rectangle covered by the grid.
    pub fn extent(&self) -> Rect {
        Rect::new(
            self.origin,
            Point::new(
                self.origin.x + self.width as f64 * self.resolution,
                self.origin.y + self.height as f64 * self.resolution,
            ),
        )
    }

    /// Center of cell `(col, row)` in world coordinates.
    pub fn cell_center(&self, col: usize, row: usize) -> Point {
        Point::new(
            self.origin.x + (col as f64 + 0.5) * self.resolution,
            self.origin.y + (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn value_at(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Raw (pre-rescale) potential at a point: sum of the component fields,
/// clipped at zero. Obstacles contribute only when active at `time`.
///
/// Components are nonnegative except the POI wells, so adding geometry
/// other than POIs can only raise this value.
pub fn raw_potential(scene: &SceneDescription, p: &Point, time: u64) -> f64 {
    let params = &scene.potential;
    let mut u = 0.0;
    for line in &scene.road_edges {
        u += truncated_exp(
            dist_point_polyline(p, line),
            params.edge_gain,
            params.edge_sigma,
            params.cutoff_sigmas,
        );
    }
    for poly in &scene.road_polygons {
        if point_in_polygon(p, poly) {
            u += params.road_gain * polygon_width(poly);
        }
    }
    for obs in scene.obstacles.iter().filter(|o| o.active_at(time)) {
        let d = (p.dist(&obs.center) - obs.radius).max(0.0);
        u += truncated_exp(
            d,
            params.obstacle_gain,
            params.obstacle_sigma,
            params.cutoff_sigmas,
        );
    }
    for poi in &scene.pois {
        u -= truncated_exp(
            p.dist(&poi.position),
            params.poi_gain,
            params.poi_sigma,
            params.cutoff_sigmas,
        );
    }
    u.max(0.0)
}

fn truncated_exp(d: f64, gain: f64, sigma: f64, cutoff_sigmas: f64) -> f64 {
    if d > cutoff_sigmas * sigma {
        0.0
    } else {
        gain * (-d / sigma).exp()
    }
}

/// Samples the raw potential at every cell center, rescales `[0, max]`
/// affinely onto `[floor, 1]`, and assigns the floor cost to cells whose
/// centers lie on a sidewalk or crosswalk.
pub fn compute_potential_map(
    scene: &SceneDescription,
    resolution: f64,
    time: u64,
) -> Result<PotentialCostMap> {
    scene.validate()?;
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "resolution must be positive and finite, got {resolution}"
        )));
    }
    let width = (scene.bounds.width() / resolution).ceil().max(1.0) as usize;
    let height = (scene.bounds.height() / resolution).ceil().max(1.0) as usize;
    let origin = scene.bounds.min;
    let floor = scene.potential.floor;

    let mut raw = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let center = Point::new(
                origin.x + (col as f64 + 0.5) * resolution,
                origin.y + (row as f64 + 0.5) * resolution,
            );
            raw.push(raw_potential(scene, &center, time));
        }
    }
    let max = raw.iter().copied().fold(0.0, f64::max);
    let values: Vec<f64> = if max > 0.0 {
        raw.iter()
            .map(|u| floor + (1.0 - floor) * u / max)
            .collect()
    } else {
        vec![floor; raw.len()]
    };

    let mut map = PotentialCostMap {
        origin,
        resolution,
        width,
        height,
        values,
    };
    let zero_resistance = scene.sidewalks.iter().chain(scene.crosswalks.iter());
    for poly in zero_resistance {
        for row in 0..height {
            for col in 0..width {
                let center = map.cell_center(col, row);
                if point_in_polygon(&center, poly) {
                    map.values[row * width + col] = floor;
                }
            }
        }
    }
    Ok(map)
}

/// Bilinear interpolation of the four surrounding cell-center values.
///
/// Points in the half-cell margin between the outermost centers and the
/// extent boundary clamp to the border cells. The result is a convex
/// combination of stored values, hence stays within `(0, 1]`.
pub fn sample_cost(map: &PotentialCostMap, point: &Point) -> Result<f64> {
    if !point.is_finite() || !map.extent().contains(point) {
        return Err(Error::OutOfBounds {
            x: point.x,
            y: point.y,
        });
    }
    let gx = (point.x - map.origin.x) / map.resolution - 0.5;
    let gy = (point.y - map.origin.y) / map.resolution - 0.5;
    let (c0, c1, fx) = interp_axis(gx, map.width);
    let (r0, r1, fy) = interp_axis(gy, map.height);
    let v00 = map.value_at(c0, r0);
    let v10 = map.value_at(c1, r0);
    let v01 = map.value_at(c0, r1);
    let v11 = map.value_at(c1, r1);
    let v = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
    debug_assert!(v > 0.0 && v <= 1.0);
    Ok(v)
}

/// Clamped axis decomposition: neighbor indices and interpolation weight.
fn interp_axis(g: f64, cells: usize) -> (usize, usize, f64) {
    if cells == 1 {
        return (0, 0, 0.0);
    }
    let g = g.clamp(0.0, (cells - 1) as f64);
    let i0 = (g.floor() as usize).min(cells - 2);
    (i0, i0 + 1, g - i0 as f64)
}

/// Writes the binary format: a 16-byte header (magic `PCM1`, width and
/// height as little-endian u16, resolution as little-endian f64) followed
/// by row-major little-endian f64 cell values. The grid is registered to
/// the scene's lower-left corner; the origin itself is not stored.
pub fn save_cost_map(map: &PotentialCostMap, path: impl AsRef<Path>) -> Result<()> {
    if map.width > u16::MAX as usize || map.height > u16::MAX as usize {
        return Err(Error::Format(format!(
            "cost map of {} x {} cells exceeds the u16 header fields",
            map.width, map.height
        )));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&COST_MAP_MAGIC)?;
    w.write_u16::<LittleEndian>(map.width as u16)?;
    w.write_u16::<LittleEndian>(map.height as u16)?;
    w.write_f64::<LittleEndian>(map.resolution)?;
    for v in &map.values {
        w.write_f64::<LittleEndian>(*v)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the binary format back; `origin` re-attaches the world frame
/// (the format stores only the grid).
pub fn load_cost_map(path: impl AsRef<Path>, origin: Point) -> Result<PotentialCostMap> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != COST_MAP_MAGIC {
        return Err(Error::Format(format!(
            "bad cost map magic {magic:?}, expected {COST_MAP_MAGIC:?}"
        )));
    }
    let width = r.read_u16::<LittleEndian>()? as usize;
    let height = r.read_u16::<LittleEndian>()? as usize;
    let resolution = r.read_f64::<LittleEndian>()?;
    let mut values = vec![0.0; width * height];
    for v in &mut values {
        *v = r.read_f64::<LittleEndian>()?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after cost map grid".into()));
    }
    PotentialCostMap::from_values(origin, resolution, width, height, values)
}

/// Debug CSV: `col,row,x,y,cost`, one row per cell in row-major order.
pub fn export_cost_map_csv(map: &PotentialCostMap, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("col,row,x,y,cost\n");
    for row in 0..map.height {
        for col in 0..map.width {
            let c = map.cell_center(col, row);
            out.push_str(&format!(
                "{col},{row},{},{},{}\n",
                c.x,
                c.y,
                map.value_at(col, row)
            ));
        }
    }
    Ok(std::fs::write(path, out)?)
}

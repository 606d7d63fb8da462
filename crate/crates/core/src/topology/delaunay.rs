//! Delaunay triangulation via lexicographic scan plus Lawson edge flips.
//!
//! Orientation and in-circle tests use exact adaptive-precision predicates,
//! so the result depends only on the true geometry. Cocircular ties are
//! resolved by a symbolic perturbation of the lifted paraboloid that favors
//! lower point indices, making degenerate inputs (grids, cocircular rings)
//! deterministic across runs and platforms. Fully collinear inputs have no
//! triangles; they yield the path graph along the line.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use robust::{incircle, orient2d, Coord};

use crate::geom::Point;
use crate::{Error, Result};

/// Undirected Delaunay edges over `points`, as index pairs `(lo, hi)`.
///
/// Requires at least 2 points, all distinct and finite.
pub fn delaunay_edges(points: &[Point]) -> Result<BTreeSet<(usize, usize)>> {
    if points.len() < 2 {
        return Err(Error::Topology(format!(
            "Delaunay triangulation needs at least 2 points, got {}",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| !p.is_finite()) {
        return Err(Error::Topology(format!(
            "non-finite point ({}, {}) in triangulation input",
            p.x, p.y
        )));
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        (points[i].x, points[i].y)
            .partial_cmp(&(points[j].x, points[j].y))
            .expect("finite coordinates are totally ordered")
    });
    for w in order.windows(2) {
        if points[w[0]] == points[w[1]] {
            return Err(Error::Topology(format!(
                "duplicate point ({}, {}) in triangulation input",
                points[w[0]].x, points[w[0]].y
            )));
        }
    }

    if points.len() == 2 {
        return Ok(BTreeSet::from([normalize(order[0], order[1])]));
    }

    // First point (in sorted order) that leaves the line through the first
    // two; everything before it is a collinear prefix.
    let pivot = (2..order.len()).find(|&k| orient(points, order[0], order[1], order[k]) != 0.0);
    let Some(pivot) = pivot else {
        // All points on one line: the path graph along the sorted order.
        return Ok(order.windows(2).map(|w| normalize(w[0], w[1])).collect());
    };

    let mut tri = Triangulation::new(points);
    let mut hull: Vec<usize> = Vec::new();

    // Fan the collinear prefix onto the pivot point.
    let q = order[pivot];
    let side = orient(points, order[0], order[1], q);
    for w in order[..pivot].windows(2) {
        if side > 0.0 {
            tri.add(w[0], w[1], q);
        } else {
            tri.add(w[1], w[0], q);
        }
    }
    if side > 0.0 {
        hull.extend(&order[..pivot]);
        hull.push(q);
    } else {
        hull.extend(order[..pivot].iter().rev());
        hull.push(q);
    }

    for &p in &order[pivot + 1..] {
        // p is lexicographically beyond every hull point, hence outside the
        // hull; the strictly visible edges form one contiguous arc.
        let len = hull.len();
        let visible: Vec<bool> = (0..len)
            .map(|i| orient(points, hull[i], hull[(i + 1) % len], p) < 0.0)
            .collect();
        let arc_start = (0..len)
            .find(|&i| visible[i] && !visible[(i + len - 1) % len])
            .ok_or_else(|| Error::Topology("scan point sees no hull edge".into()))?;
        let mut arc_len = 1;
        while visible[(arc_start + arc_len) % len] {
            arc_len += 1;
        }
        debug_assert!((0..len).filter(|&i| visible[i]).count() == arc_len);

        for k in 0..arc_len {
            let a = hull[(arc_start + k) % len];
            let b = hull[(arc_start + k + 1) % len];
            tri.add(b, a, p);
        }
        // Replace the interior vertices of the arc with p.
        let keep_from = (arc_start + arc_len) % len; // head of last visible edge
        let mut next: Vec<usize> = Vec::with_capacity(len - arc_len + 2);
        let mut i = keep_from;
        loop {
            next.push(hull[i]);
            if i == arc_start {
                break;
            }
            i = (i + 1) % len;
        }
        next.push(p);
        hull = next;
    }

    tri.lawson_flips()?;
    Ok(tri.undirected_edges())
}

fn coord(p: &Point) -> Coord<f64> {
    Coord { x: p.x, y: p.y }
}

/// Exact orientation: positive when (a, b, c) is counterclockwise.
fn orient(points: &[Point], a: usize, b: usize, c: usize) -> f64 {
    orient2d(coord(&points[a]), coord(&points[b]), coord(&points[c]))
}

struct Triangulation<'a> {
    points: &'a [Point],
    tris: Vec<[usize; 3]>,
    alive: Vec<bool>,
    /// Directed edge (u, v) -> index of the triangle listing it CCW.
    edge_tri: BTreeMap<(usize, usize), usize>,
    queue: VecDeque<(usize, usize)>,
    queued: BTreeSet<(usize, usize)>,
}

impl<'a> Triangulation<'a> {
    fn new(points: &'a [Point]) -> Self {
        Triangulation {
            points,
            tris: Vec::new(),
            alive: Vec::new(),
            edge_tri: BTreeMap::new(),
            queue: VecDeque::new(),
            queued: BTreeSet::new(),
        }
    }

    /// Adds the CCW triangle (a, b, c) and queues its edges for flipping.
    fn add(&mut self, a: usize, b: usize, c: usize) {
        debug_assert!(orient(self.points, a, b, c) > 0.0);
        let t = self.tris.len();
        self.tris.push([a, b, c]);
        self.alive.push(true);
        for (u, v) in [(a, b), (b, c), (c, a)] {
            let prev = self.edge_tri.insert((u, v), t);
            debug_assert!(prev.is_none(), "directed edge ({u}, {v}) already taken");
            self.enqueue(u, v);
        }
    }

    fn remove(&mut self, t: usize) {
        let [a, b, c] = self.tris[t];
        self.alive[t] = false;
        for (u, v) in [(a, b), (b, c), (c, a)] {
            self.edge_tri.remove(&(u, v));
        }
    }

    fn enqueue(&mut self, u: usize, v: usize) {
        let key = normalize(u, v);
        if self.queued.insert(key) {
            self.queue.push_back(key);
        }
    }

    /// Flips non-Delaunay internal edges until none remain. Terminates
    /// because each flip strictly improves the (perturbed) lifted surface.
    fn lawson_flips(&mut self) -> Result<()> {
        // Generous safety budget: the flip count is bounded by the number
        // of point pairs; exceeding it means a broken predicate.
        let mut budget = 10 * self.points.len() * self.points.len() + 1000;
        while let Some((u, v)) = self.queue.pop_front() {
            self.queued.remove(&(u, v));
            let (Some(&t1), Some(&t2)) = (self.edge_tri.get(&(u, v)), self.edge_tri.get(&(v, u)))
            else {
                continue; // boundary or stale edge
            };
            let [a, b, c] = self.tris[t1];
            let p = third_vertex(self.tris[t1], u, v);
            let q = third_vertex(self.tris[t2], v, u);
            if incircle_perturbed(self.points, a, b, c, q) <= 0.0 {
                continue;
            }
            budget = budget.checked_sub(1).ok_or_else(|| {
                Error::Topology("edge flip budget exceeded; inconsistent predicates".into())
            })?;
            self.remove(t1);
            self.remove(t2);
            // Quad boundary in CCW order is u -> q -> v -> p.
            self.add(u, q, p);
            self.add(q, v, p);
        }
        Ok(())
    }

    fn undirected_edges(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for (t, tri) in self.tris.iter().enumerate() {
            if self.alive[t] {
                let [a, b, c] = *tri;
                out.insert(normalize(a, b));
                out.insert(normalize(b, c));
                out.insert(normalize(c, a));
            }
        }
        out
    }
}

fn normalize(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

fn third_vertex(tri: [usize; 3], u: usize, v: usize) -> usize {
    debug_assert!(tri.contains(&u) && tri.contains(&v));
    tri.into_iter()
        .find(|&x| x != u && x != v)
        .expect("triangle has three distinct vertices")
}

/// In-circle test with symbolic perturbation. (a, b, c) must be CCW;
/// positive means d lies strictly inside the circumcircle.
///
/// On an exact cocircular tie, each point i is lifted onto the paraboloid
/// lowered by a weight that grows as the index shrinks; the first nonzero
/// cofactor in ascending index order decides. Net effect: the diagonal
/// touching the lowest involved index wins ties.
fn incircle_perturbed(points: &[Point], a: usize, b: usize, c: usize, d: usize) -> f64 {
    let v = incircle(
        coord(&points[a]),
        coord(&points[b]),
        coord(&points[c]),
        coord(&points[d]),
    );
    if v != 0.0 {
        return v;
    }
    let mut idx = [a, b, c, d];
    idx.sort_unstable();
    for k in idx {
        let s = if k == a {
            -orient(points, d, b, c)
        } else if k == b {
            orient(points, d, a, c)
        } else if k == c {
            -orient(points, d, a, b)
        } else {
            orient(points, a, b, c)
        };
        if s != 0.0 {
            return s;
        }
    }
    // Unreachable for a valid CCW triangle: the d-cofactor is its area.
    0.0
}

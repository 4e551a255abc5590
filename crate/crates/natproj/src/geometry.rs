//! 2-D convex polytopes with dual vertex/halfspace representation.
//!
//! Hulls are built with Andrew's monotone chain, vertices are kept in strict
//! counter-clockwise order (extreme points only), and every polytope also
//! carries the equivalent halfspace form `G x <= h` with unit-norm rows so
//! that downstream big-M constraints have consistent units across rows.
//!
//! Storage is dimension-generic but hull construction is fixed to the plane;
//! facet counts grow exponentially with dimension, so higher-dimensional
//! hulls are out of scope here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Offset used to inflate degenerate (collinear) point sets into
/// full-dimensional polytopes, in hull-state units (meters).
pub const DEGENERATE_INFLATION: f64 = 1e-6;

/// Tolerance for the vertex/halfspace consistency invariant.
pub const HREP_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("convex hull needs at least {min} points, got {got}")]
    TooFewPoints { got: usize, min: usize },
    #[error("point has a non-finite coordinate")]
    NonFinite,
    #[error("vertices are collinear; polytope has no interior")]
    DegenerateInput,
}

/// A point in hull-state space (planar position for the driving experiments).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HullPoint {
    pub coords: Vec<f64>,
}

impl HullPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self, GeometryError> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { coords })
    }

    pub fn xy(x: f64, y: f64) -> Self {
        Self { coords: vec![x, y] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.coords[1]
    }
}

/// Convex polytope holding both representations: counter-clockwise extreme
/// vertices and the halfspace intersection `G x <= h` (one row per facet,
/// rows normalized to unit-norm normals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeRepr", into = "PolytopeRepr")]
pub struct ConvexPolytope {
    vertices: Vec<HullPoint>,
    g: DMatrix<f64>,
    h: DVector<f64>,
}

/// Wire form pinned by the polytope JSON interface:
/// `{"vertices": [[x,y],...], "G": [[...],...], "h": [...]}`.
#[derive(Serialize, Deserialize)]
struct PolytopeRepr {
    vertices: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
    h: Vec<f64>,
}

impl From<ConvexPolytope> for PolytopeRepr {
    fn from(p: ConvexPolytope) -> Self {
        let n_y = p.dim();
        PolytopeRepr {
            vertices: p.vertices.into_iter().map(|v| v.coords).collect(),
            g: p
                .g
                .row_iter()
                .map(|r| (0..n_y).map(|j| r[j]).collect())
                .collect(),
            h: p.h.iter().copied().collect(),
        }
    }
}

impl TryFrom<PolytopeRepr> for ConvexPolytope {
    type Error = String;

    fn try_from(r: PolytopeRepr) -> Result<Self, String> {
        let vertices: Vec<HullPoint> = r
            .vertices
            .into_iter()
            .map(|c| HullPoint::new(c).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        if vertices.is_empty() {
            return Err("polytope has no vertices".into());
        }
        let n_y = vertices[0].dim();
        let n_f = r.g.len();
        if r.h.len() != n_f {
            return Err(format!("G has {} rows but h has {}", n_f, r.h.len()));
        }
        let mut g = DMatrix::zeros(n_f, n_y);
        for (i, row) in r.g.iter().enumerate() {
            if row.len() != n_y {
                return Err(format!("G row {} has length {}, expected {}", i, row.len(), n_y));
            }
            for (j, v) in row.iter().enumerate() {
                g[(i, j)] = *v;
            }
        }
        let h = DVector::from_vec(r.h);
        let p = ConvexPolytope { vertices, g, h };
        p.check_consistent().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

impl ConvexPolytope {
    /// Number of hull-state dimensions (2 for planar polytopes).
    pub fn dim(&self) -> usize {
        self.vertices[0].dim()
    }

    pub fn vertices(&self) -> &[HullPoint] {
        &self.vertices
    }

    /// Halfspace matrix G (n_f x n_y), unit-norm rows.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Halfspace offsets h (n_f).
    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn num_facets(&self) -> usize {
        self.g.nrows()
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for v in &self.vertices {
            for j in 0..d {
                lo[j] = lo[j].min(v.coords[j]);
                hi[j] = hi[j].max(v.coords[j]);
            }
        }
        (lo, hi)
    }

    fn check_consistent(&self) -> Result<(), GeometryError> {
        for v in &self.vertices {
            if v.coords.iter().any(|c| !c.is_finite()) {
                return Err(GeometryError::NonFinite);
            }
            if !contains_raw(&self.g, &self.h, &v.coords, HREP_TOL) {
                return Err(GeometryError::DegenerateInput);
            }
        }
        Ok(())
    }
}

/// Exact 2-D convex hull of `points` (monotone chain). Collinear input sets
/// are inflated by `DEGENERATE_INFLATION` offsets around the segment
/// endpoints so every cluster yields a polytope with non-empty interior.
pub fn convex_hull(points: &[HullPoint], min_points: usize) -> Result<ConvexPolytope, GeometryError> {
    let min = min_points.max(3);
    if points.len() < min {
        return Err(GeometryError::TooFewPoints {
            got: points.len(),
            min,
        });
    }
    for p in points {
        if p.dim() != 2 {
            return Err(GeometryError::DegenerateInput);
        }
        if !p.x().is_finite() || !p.y().is_finite() {
            return Err(GeometryError::NonFinite);
        }
    }

    let mut hull = monotone_chain(points);
    if hull.len() < 3 {
        // Degenerate: all points collinear (or coincident). Inflate around the
        // segment endpoints and rebuild.
        let inflated = inflate_degenerate(points);
        hull = monotone_chain(&inflated);
    }

    let vertices: Vec<HullPoint> = hull
        .into_iter()
        .map(|(x, y)| HullPoint::xy(x, y))
        .collect();
    let (g, h) = to_halfspaces(&vertices)?;
    Ok(ConvexPolytope { vertices, g, h })
}

/// Outward unit-normal halfspace rows for a strictly counter-clockwise vertex
/// list: edge (v_i, v_{i+1}) yields the row `n . x <= n . v_i`.
pub fn to_halfspaces(vertices: &[HullPoint]) -> Result<(DMatrix<f64>, DVector<f64>), GeometryError> {
    if vertices.len() < 3 {
        return Err(GeometryError::DegenerateInput);
    }
    let n = vertices.len();
    let mut g = DMatrix::zeros(n, 2);
    let mut h = DVector::zeros(n);
    let mut any_turn = false;
    for i in 0..n {
        let p = &vertices[i];
        let q = &vertices[(i + 1) % n];
        let (ex, ey) = (q.x() - p.x(), q.y() - p.y());
        let len = (ex * ex + ey * ey).sqrt();
        if len <= 0.0 {
            return Err(GeometryError::DegenerateInput);
        }
        // Interior lies to the left of a CCW edge, so the outward normal is
        // the edge rotated clockwise.
        let (nx, ny) = (ey / len, -ex / len);
        g[(i, 0)] = nx;
        g[(i, 1)] = ny;
        h[i] = nx * p.x() + ny * p.y();
        let r = &vertices[(i + 2) % n];
        if cross(p.x(), p.y(), q.x(), q.y(), r.x(), r.y()).abs() > 0.0 {
            any_turn = true;
        }
    }
    if !any_turn {
        return Err(GeometryError::DegenerateInput);
    }
    Ok((g, h))
}

/// Componentwise halfspace membership: `G x <= h + tol`.
pub fn contains(p: &ConvexPolytope, x: &HullPoint, tol: f64) -> bool {
    contains_raw(&p.g, &p.h, &x.coords, tol)
}

fn contains_raw(g: &DMatrix<f64>, h: &DVector<f64>, x: &[f64], tol: f64) -> bool {
    for i in 0..g.nrows() {
        let mut dot = 0.0;
        for j in 0..g.ncols() {
            dot += g[(i, j)] * x[j];
        }
        if dot > h[i] + tol {
            return false;
        }
    }
    true
}

/// Shoelace area of the vertex polygon, in squared hull-state units.
pub fn area(p: &ConvexPolytope) -> f64 {
    shoelace(p.vertices())
}

fn shoelace(vertices: &[HullPoint]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..n {
        let a = &vertices[i];
        let b = &vertices[(i + 1) % n];
        twice += a.x() * b.y() - b.x() * a.y();
    }
    0.5 * twice.abs()
}

#[inline]
fn cross(ox: f64, oy: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)
}

/// Monotone chain over (x, y)-sorted points; strict turns only, so the output
/// has no three consecutive collinear vertices. Returns CCW order starting
/// from the lexicographically smallest vertex.
fn monotone_chain(points: &[HullPoint]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.x(), p.y())).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() == 1 {
        return pts;
    }

    let mut lower: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 {
            let a = lower[lower.len() - 2];
            let b = lower[lower.len() - 1];
            if cross(a.0, a.1, b.0, b.1, p.0, p.1) <= 0.0 {
                lower.pop();
            } else {
                break;
            }
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 {
            let a = upper[upper.len() - 2];
            let b = upper[upper.len() - 1];
            if cross(a.0, a.1, b.0, b.1, p.0, p.1) <= 0.0 {
                upper.pop();
            } else {
                break;
            }
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inflate_degenerate(points: &[HullPoint]) -> Vec<HullPoint> {
    // Endpoints of the collinear segment are the lexicographic extremes.
    let mut lo = (points[0].x(), points[0].y());
    let mut hi = lo;
    for p in points {
        let c = (p.x(), p.y());
        if c < lo {
            lo = c;
        }
        if c > hi {
            hi = c;
        }
    }
    let mut out: Vec<HullPoint> = points.to_vec();
    for &(x, y) in &[lo, hi] {
        out.push(HullPoint::xy(x + DEGENERATE_INFLATION, y));
        out.push(HullPoint::xy(x - DEGENERATE_INFLATION, y));
        out.push(HullPoint::xy(x, y + DEGENERATE_INFLATION));
        out.push(HullPoint::xy(x, y - DEGENERATE_INFLATION));
    }
    out
}

//! Planar geometry for the coordinated tasks: convex polygons, half-plane
//! clipping, area-weighted centroids, and the bounded Voronoi partition.

use nalgebra::Vector2;

use crate::{Error, Result};

/// Convex polygon with counterclockwise vertex order and positive area.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Vector2<f64>>,
}

impl Polygon {
    /// Validates vertex count, orientation, convexity, and area.
    pub fn new(vertices: Vec<Vector2<f64>>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::DegeneratePolygon(format!(
                "{} vertices, need at least 3",
                vertices.len()
            )));
        }
        let area = shoelace_area(&vertices);
        if area <= 1e-12 {
            return Err(Error::DegeneratePolygon(format!(
                "area {area} (must be positive and counterclockwise)"
            )));
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if cross(b - a, c - b) < -1e-9 * area.max(1.0) {
                return Err(Error::DegeneratePolygon(format!(
                    "reflex corner at vertex {}",
                    (i + 1) % n
                )));
            }
        }
        Ok(Self { vertices })
    }

    pub fn rectangle(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        Self::new(vec![
            Vector2::new(xmin, ymin),
            Vector2::new(xmax, ymin),
            Vector2::new(xmax, ymax),
            Vector2::new(xmin, ymax),
        ])
    }

    pub fn vertices(&self) -> &[Vector2<f64>] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        shoelace_area(&self.vertices)
    }

    pub fn centroid(&self) -> Result<Vector2<f64>> {
        polygon_centroid(&self.vertices)
    }

    /// Closed-polygon membership with an absolute slack on each edge.
    pub fn contains(&self, p: Vector2<f64>, tol: f64) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            cross(b - a, p - a) >= -tol
        })
    }

    /// Intersection with the half-plane `{q : n·q ≤ c}` (Sutherland–Hodgman
    /// step). The result may be empty or degenerate; see [`clip_to_polygon`].
    pub fn clip_halfplane(&self, normal: Vector2<f64>, offset: f64) -> Vec<Vector2<f64>> {
        clip_vertices(&self.vertices, normal, offset)
    }

    /// Closest point of the polygon to `p` (identity for interior points).
    pub fn project(&self, p: Vector2<f64>) -> Vector2<f64> {
        if self.contains(p, 0.0) {
            return p;
        }
        let n = self.vertices.len();
        let mut best = self.vertices[0];
        let mut best_d2 = f64::INFINITY;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let ab = b - a;
            let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            let q = a + t * ab;
            let d2 = (p - q).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best = q;
            }
        }
        best
    }

    /// Diagonal of the axis-aligned bounding box; the natural length scale.
    pub fn diagonal(&self) -> f64 {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for v in &self.vertices {
            min.x = min.x.min(v.x);
            min.y = min.y.min(v.y);
            max.x = max.x.max(v.x);
            max.y = max.y.max(v.y);
        }
        (max - min).norm()
    }

    pub fn bounds(&self) -> (Vector2<f64>, Vector2<f64>) {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for v in &self.vertices {
            min.x = min.x.min(v.x);
            min.y = min.y.min(v.y);
            max.x = max.x.max(v.x);
            max.y = max.y.max(v.y);
        }
        (min, max)
    }
}

fn cross(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn shoelace_area(vertices: &[Vector2<f64>]) -> f64 {
    let n = vertices.len();
    let mut twice = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        twice += cross(a, b);
    }
    0.5 * twice
}

fn clip_vertices(vertices: &[Vector2<f64>], normal: Vector2<f64>, offset: f64) -> Vec<Vector2<f64>> {
    let n = vertices.len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..n {
        let s = vertices[i];
        let e = vertices[(i + 1) % n];
        let sd = normal.dot(&s) - offset;
        let ed = normal.dot(&e) - offset;
        let s_in = sd <= 0.0;
        let e_in = ed <= 0.0;
        match (s_in, e_in) {
            (true, true) => out.push(e),
            (true, false) | (false, true) => {
                let denom = sd - ed;
                if denom.abs() > 1e-300 {
                    let t = sd / denom;
                    out.push(s + t * (e - s));
                }
                if e_in {
                    out.push(e);
                }
            }
            (false, false) => {}
        }
    }
    out
}

/// Turns a raw clip output back into a validated polygon, dropping
/// near-duplicate consecutive vertices.
fn clip_to_polygon(raw: Vec<Vector2<f64>>, scale: f64) -> Result<Polygon> {
    let mut cleaned: Vec<Vector2<f64>> = Vec::with_capacity(raw.len());
    let tol = 1e-12 * scale.max(1.0);
    for v in raw {
        if cleaned.last().map_or(true, |&last| (v - last).norm() > tol) {
            cleaned.push(v);
        }
    }
    if cleaned.len() >= 2 {
        if (cleaned[0] - *cleaned.last().unwrap()).norm() <= tol {
            cleaned.pop();
        }
    }
    Polygon::new(cleaned)
}

/// Area-weighted centroid of a convex counterclockwise polygon via the
/// shoelace triangle decomposition.
pub fn polygon_centroid(vertices: &[Vector2<f64>]) -> Result<Vector2<f64>> {
    if vertices.len() < 3 {
        return Err(Error::DegeneratePolygon(format!(
            "{} vertices, need at least 3",
            vertices.len()
        )));
    }
    let n = vertices.len();
    let mut twice_area = 0.0;
    let mut acc = Vector2::zeros();
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let w = cross(a, b);
        twice_area += w;
        acc += w * (a + b);
    }
    let area = 0.5 * twice_area;
    if area.abs() < 1e-12 {
        return Err(Error::DegeneratePolygon(format!("centroid of area {area}")));
    }
    Ok(acc / (3.0 * twice_area))
}

/// One robot's Voronoi region clipped to the domain.
#[derive(Debug, Clone)]
pub struct VoronoiCell {
    pub owner: usize,
    pub polygon: Polygon,
    pub centroid: Vector2<f64>,
    pub area: f64,
}

/// Voronoi partition of a convex domain by iterated half-plane clipping:
/// `cell_i = domain ∩ {q : ‖q − p_i‖ ≤ ‖q − p_j‖ ∀j}`.
///
/// Positions must be pairwise distinct (minimum separation 1e-9) and inside
/// the domain. Ties on cell boundaries are kept by both closed half-planes
/// (measure zero, harmless for areas and centroids).
pub fn bounded_voronoi(positions: &[Vector2<f64>], domain: &Polygon) -> Result<Vec<VoronoiCell>> {
    for (i, p) in positions.iter().enumerate() {
        if !domain.contains(*p, 1e-9) {
            return Err(Error::Numeric(format!(
                "position {i} ({}, {}) lies outside the domain",
                p.x, p.y
            )));
        }
        for (j, q) in positions.iter().enumerate().skip(i + 1) {
            if (p - q).norm() < 1e-9 {
                return Err(Error::CoincidentPositions(i, j));
            }
        }
    }
    let scale = domain.diagonal();
    let mut cells = Vec::with_capacity(positions.len());
    for (i, &p) in positions.iter().enumerate() {
        let mut verts = domain.vertices().to_vec();
        for (j, &q) in positions.iter().enumerate() {
            if i == j {
                continue;
            }
            // perpendicular bisector: 2(q − p)·x ≤ ‖q‖² − ‖p‖²
            let normal = 2.0 * (q - p);
            let offset = q.norm_squared() - p.norm_squared();
            verts = clip_vertices(&verts, normal, offset);
            if verts.len() < 3 {
                break;
            }
        }
        let polygon = clip_to_polygon(verts, scale).map_err(|e| {
            Error::Numeric(format!("voronoi cell of robot {i} degenerated: {e}"))
        })?;
        let centroid = polygon.centroid()?;
        let area = polygon.area();
        cells.push(VoronoiCell { owner: i, polygon, centroid, area });
    }
    Ok(cells)
}

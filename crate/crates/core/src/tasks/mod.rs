//! Coordinated task CBFs: coverage over a convex domain (centroidal Voronoi),
//! formation keeping on a distance graph, and consensus. Each evaluates to
//! h ≤ 0 with h = 0 exactly on the task's goal set.

pub mod geometry;

use nalgebra::Vector2;

use crate::control::CbfEvaluation;
use crate::{Error, Result};
use geometry::{bounded_voronoi, Polygon, VoronoiCell};

/// One distance constraint of a formation graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormationEdge {
    pub i: usize,
    pub k: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub enum TaskKind {
    /// Spread over `domain`: h_i = −‖x_i − c_i‖² with c_i the centroid of
    /// robot i's Voronoi cell.
    Coverage { domain: Polygon },
    /// Maintain pairwise distances: h_i = −Σ (‖x_i − x_k‖² − d²)² over the
    /// edges incident to robot i.
    Formation { edges: Vec<FormationEdge> },
    /// Rendezvous: h_i = −Σ_k ‖x_i − x_k‖².
    Consensus,
}

/// Declarative description of one coordinated task.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub id: String,
    pub kind: TaskKind,
    /// Scale of the task's CBF (h ← weight·h). Weights pick the units of
    /// each barrier, which sets both its slack priority relative to other
    /// tasks and the size of its columns in the resilience frame.
    pub weight: f64,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, kind: TaskKind) -> Self {
        Self { id: id.into(), kind, weight: 1.0 }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

impl TaskSpec {
    pub fn validate(&self, n_robots: usize) -> Result<()> {
        if !(self.weight > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "task '{}': weight must be > 0",
                self.id
            )));
        }
        match &self.kind {
            TaskKind::Coverage { .. } => Ok(()),
            TaskKind::Formation { edges } => {
                if edges.is_empty() {
                    return Err(Error::InvalidConfig(format!(
                        "task '{}': formation needs at least one edge",
                        self.id
                    )));
                }
                for e in edges {
                    if e.i == e.k {
                        return Err(Error::InvalidConfig(format!(
                            "task '{}': self-edge on robot {}",
                            self.id, e.i
                        )));
                    }
                    if e.i >= n_robots || e.k >= n_robots {
                        return Err(Error::InvalidConfig(format!(
                            "task '{}': edge ({}, {}) references a robot out of 0..{}",
                            self.id, e.i, e.k, n_robots
                        )));
                    }
                    if !(e.distance > 0.0) {
                        return Err(Error::InvalidConfig(format!(
                            "task '{}': edge ({}, {}) has non-positive distance",
                            self.id, e.i, e.k
                        )));
                    }
                }
                Ok(())
            }
            TaskKind::Consensus => Ok(()),
        }
    }
}

/// Regular-hexagon formation graph for 6 robots: the 6-cycle plus the three
/// main diagonals, distances from exact hexagon geometry (side = circumradius).
pub fn hexagon_edges(circumradius: f64) -> Vec<FormationEdge> {
    let mut edges = Vec::with_capacity(9);
    for i in 0..6 {
        edges.push(FormationEdge { i, k: (i + 1) % 6, distance: circumradius });
    }
    for i in 0..3 {
        edges.push(FormationEdge { i, k: i + 3, distance: 2.0 * circumradius });
    }
    edges
}

/// Vertices of the regular hexagon with the given circumradius, centered at
/// `center`, in robot-index order consistent with [`hexagon_edges`].
pub fn hexagon_vertices(circumradius: f64, center: Vector2<f64>) -> Vec<Vector2<f64>> {
    (0..6)
        .map(|i| {
            let a = std::f64::consts::FRAC_PI_3 * i as f64;
            center + circumradius * Vector2::new(a.cos(), a.sin())
        })
        .collect()
}

/// Coverage CBF for robot `i` given the current cells: h = −‖x_i − c_i‖²,
/// gradient −2(x_i − c_i) with the centroid frozen (Lloyd approximation).
pub fn coverage_cbf(
    task: usize,
    i: usize,
    positions: &[Vector2<f64>],
    cells: &[VoronoiCell],
) -> Result<CbfEvaluation> {
    let cell = cells
        .iter()
        .find(|c| c.owner == i)
        .ok_or_else(|| Error::Evaluation {
            robot: i,
            task,
            message: "no Voronoi cell for robot".into(),
        })?;
    let diff = positions[i] - cell.centroid;
    CbfEvaluation::new(i, task, -diff.norm_squared(), vec![(i, -2.0 * diff)])
}

/// Formation CBF for robot `i`: quartic penalty on the squared-distance
/// residuals of its incident edges, smooth everywhere.
pub fn formation_cbf(
    task: usize,
    i: usize,
    positions: &[Vector2<f64>],
    edges: &[FormationEdge],
) -> Result<CbfEvaluation> {
    let mut value = 0.0;
    let mut grad_own = Vector2::zeros();
    let mut grads_others: Vec<(usize, Vector2<f64>)> = Vec::new();
    for e in edges {
        let (a, b) = (e.i, e.k);
        if a != i && b != i {
            continue;
        }
        let k = if a == i { b } else { a };
        let delta = positions[i] - positions[k];
        let resid = delta.norm_squared() - e.distance * e.distance;
        value -= resid * resid;
        let pull = 4.0 * resid * delta;
        grad_own -= pull;
        grads_others.push((k, pull));
    }
    let mut grads = vec![(i, grad_own)];
    grads.extend(grads_others);
    CbfEvaluation::new(i, task, value, grads)
}

/// Consensus CBF for robot `i`: h = −Σ_k ‖x_i − x_k‖².
pub fn consensus_cbf(task: usize, i: usize, positions: &[Vector2<f64>]) -> Result<CbfEvaluation> {
    let mut value = 0.0;
    let mut grad_own = Vector2::zeros();
    let mut grads: Vec<(usize, Vector2<f64>)> = Vec::new();
    for (k, &xk) in positions.iter().enumerate() {
        let delta = positions[i] - xk;
        value -= delta.norm_squared();
        grad_own -= 2.0 * delta;
        if k != i {
            grads.push((k, 2.0 * delta));
        }
    }
    let mut all = vec![(i, grad_own)];
    all.extend(grads);
    CbfEvaluation::new(i, task, value, all)
}

/// Evaluates every task for every robot at the given positions. Coverage
/// tasks compute their Voronoi partition once over all robots (failed robots
/// still occupy space and own cells).
pub fn evaluate_all(
    tasks: &[TaskSpec],
    positions: &[Vector2<f64>],
) -> Result<Vec<Vec<CbfEvaluation>>> {
    let mut out = Vec::with_capacity(tasks.len());
    for (j, task) in tasks.iter().enumerate() {
        let mut evals = match &task.kind {
            TaskKind::Coverage { domain } => {
                let cells = bounded_voronoi(positions, domain)?;
                (0..positions.len())
                    .map(|i| coverage_cbf(j, i, positions, &cells))
                    .collect::<Result<Vec<_>>>()?
            }
            TaskKind::Formation { edges } => (0..positions.len())
                .map(|i| formation_cbf(j, i, positions, edges))
                .collect::<Result<Vec<_>>>()?,
            TaskKind::Consensus => (0..positions.len())
                .map(|i| consensus_cbf(j, i, positions))
                .collect::<Result<Vec<_>>>()?,
        };
        if task.weight != 1.0 {
            evals = evals.into_iter().map(|e| e.scaled(task.weight)).collect();
        }
        out.push(evals);
    }
    Ok(out)
}

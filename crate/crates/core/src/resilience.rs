//! Resilience layer: builds the task-sensitivity frame from the CBF
//! gradients, evaluates h_R = −FP_R on it, differentiates h_R through the
//! state by central finite differences, and emits the slacked per-robot
//! resilience rows.
//!
//! Finite differences (with the frame rebuilt at each probe) keep this layer
//! task-agnostic: the coverage CBF's dependence on the Voronoi partition is
//! only piecewise smooth, so analytic second derivatives are not available
//! anyway.

use nalgebra::{DVector, Vector2};

use crate::control::ClassKappa;
use crate::frames::{modified_frame_potential_regularized, FrameVector, FrameVectorSet};
use crate::tasks::{evaluate_all, geometry::Polygon, TaskSpec};
use crate::{Error, Result};

/// Norm shift applied inside the potential's denominators so that momentarily
/// task-insensitive robots (zero sensitivity columns) stay evaluable.
pub const NORM_REGULARIZATION: f64 = 1e-9;

/// Stacks the per-robot task-sensitivity columns into a frame: for each
/// non-failed robot i and input coordinate k, the vector in task space whose
/// j-th entry is ∂h_{ij}/∂x_{i,k}.
pub fn build_frame(
    positions: &[Vector2<f64>],
    failed: &[bool],
    tasks: &[TaskSpec],
) -> Result<FrameVectorSet> {
    if tasks.is_empty() {
        return Err(Error::InvalidConfig("resilience needs at least one task".into()));
    }
    let evals = evaluate_all(tasks, positions)?;
    frame_from_evals(&evals, failed, tasks.len())
}

fn frame_from_evals(
    evals: &[Vec<crate::control::CbfEvaluation>],
    failed: &[bool],
    n_tasks: usize,
) -> Result<FrameVectorSet> {
    let n_robots = failed.len();
    let mut vectors = Vec::with_capacity(2 * n_robots);
    for i in 0..n_robots {
        if failed[i] {
            continue;
        }
        for k in 0..2 {
            let v = DVector::from_fn(n_tasks, |j, _| {
                let g = evals[j][i].grad_own();
                if k == 0 {
                    g.x
                } else {
                    g.y
                }
            });
            vectors.push(FrameVector { owner: i, column: k, v });
        }
    }
    FrameVectorSet::new(n_tasks, vectors)
}

/// h_R, its per-robot state gradients, and the frame snapshot it came from.
#[derive(Debug, Clone)]
pub struct ResilienceEvaluation {
    pub h_r: f64,
    pub grads: Vec<Vector2<f64>>,
    pub frame: FrameVectorSet,
    pub fp_r_value: f64,
}

/// Evaluates h_R = −FP_R at the current state and differentiates it in each
/// non-failed robot's position coordinates by central finite differences with
/// step `eps_fd`, rebuilding the frame at every probe. Probe positions are
/// projected into the domain so boundary-hugging robots stay evaluable.
pub fn resilience_cbf(
    positions: &[Vector2<f64>],
    failed: &[bool],
    tasks: &[TaskSpec],
    domain: &Polygon,
    eps_fd: f64,
) -> Result<ResilienceEvaluation> {
    if eps_fd <= 0.0 {
        return Err(Error::Numeric("finite-difference step must be > 0".into()));
    }
    let frame = build_frame(positions, failed, tasks)?;
    let fp_r_value = modified_frame_potential_regularized(&frame, NORM_REGULARIZATION);
    if !fp_r_value.is_finite() {
        let bad = frame
            .vectors()
            .iter()
            .find(|fv| !fv.v.iter().all(|c| c.is_finite()))
            .map(|fv| (fv.owner, fv.column));
        return Err(Error::Numeric(match bad {
            Some((owner, column)) => {
                format!("non-finite frame potential from robot {owner}, column {column}")
            }
            None => "non-finite frame potential".into(),
        }));
    }

    let mut grads = vec![Vector2::zeros(); positions.len()];
    let mut probe_positions = positions.to_vec();
    for i in 0..positions.len() {
        if failed[i] {
            continue;
        }
        for coord in 0..2 {
            let mut h_side = [0.0; 2];
            for (side, sign) in [(0usize, 1.0), (1usize, -1.0)] {
                let mut p = positions[i];
                if coord == 0 {
                    p.x += sign * eps_fd;
                } else {
                    p.y += sign * eps_fd;
                }
                probe_positions[i] = domain.project(p);
                let probe_frame = build_frame(&probe_positions, failed, tasks)?;
                h_side[side] =
                    -modified_frame_potential_regularized(&probe_frame, NORM_REGULARIZATION);
            }
            let g = (h_side[0] - h_side[1]) / (2.0 * eps_fd);
            if !g.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite h_R gradient for robot {i}, coordinate {coord}"
                )));
            }
            grads[i][coord] = g;
        }
        probe_positions[i] = positions[i];
    }

    Ok(ResilienceEvaluation { h_r: -fp_r_value, grads, frame, fp_r_value })
}

/// Slacked per-robot inequality row over (u_i, δ_{i,M+1}) in `coeff·u ≤ rhs`
/// form (the slack coefficient −1 is added at assembly).
#[derive(Debug, Clone, Copy)]
pub struct ResilienceRow {
    pub robot: usize,
    pub u_coeff: Vector2<f64>,
    pub rhs: f64,
}

/// One row per non-failed robot: −∇_i h_R on u_i, right-hand side α_R(h_R)
/// (single integrator, so L_f h_R = 0).
pub fn resilience_constraint_rows(
    eval: &ResilienceEvaluation,
    failed: &[bool],
    alpha_r: &ClassKappa,
) -> Vec<ResilienceRow> {
    let rhs = alpha_r.eval(eval.h_r);
    (0..failed.len())
        .filter(|&i| !failed[i])
        .map(|i| ResilienceRow { robot: i, u_coeff: -eval.grads[i], rhs })
        .collect()
}

//! Point-wise-in-time controller assembly: control-affine robot models, Lie
//! derivative plumbing, class-K gains, and the stacked QP over (u, δ) built
//! from task, energy, and resilience rows.
//!
//! The decision vector is z = (u₁, …, u_N', δ) where N' counts non-failed
//! robots. Each coupled task contributes one summed row slacked by every
//! robot's δ_{ij}; energy rows are hard; resilience rows (when enabled) are
//! slacked by the extra per-robot δ_{i,M+1} block.

use nalgebra::{DMatrix, DVector, RowDVector, Vector2};

use crate::energy::EnergyRow;
use crate::qp::{QpProblem, RowLabel};
use crate::resilience::ResilienceRow;
use crate::{Error, Result};

type StateFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type InputMapFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Control-affine dynamics `ẋ = f(x) + g(x) u`.
pub struct ControlAffineModel {
    state_dim: usize,
    input_dim: usize,
    drift: Box<StateFn>,
    input_map: Box<InputMapFn>,
}

impl ControlAffineModel {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        drift: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        input_map: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { state_dim, input_dim, drift: Box::new(drift), input_map: Box::new(input_map) }
    }

    /// `f ≡ 0`, `g ≡ I`: velocity-controlled point robot.
    pub fn single_integrator(dim: usize) -> Self {
        Self::new(
            dim,
            dim,
            move |_| DVector::zeros(dim),
            move |_| DMatrix::identity(dim, dim),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.input_map)(x)
    }
}

impl std::fmt::Debug for ControlAffineModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlAffineModel")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .finish()
    }
}

/// Linear extended class-K function `α(h) = γ h` with gain γ > 0.
#[derive(Debug, Clone, Copy)]
pub struct ClassKappa {
    gain: f64,
}

impl ClassKappa {
    pub fn linear(gain: f64) -> Result<Self> {
        if gain <= 0.0 || !gain.is_finite() {
            return Err(Error::InvalidConfig(format!("class-K gain must be > 0, got {gain}")));
        }
        Ok(Self { gain })
    }

    pub fn eval(&self, h: f64) -> f64 {
        self.gain * h
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }
}

/// A task CBF evaluated at the current ensemble state: the scalar value plus
/// its sparse gradient over the robots it touches.
#[derive(Debug, Clone)]
pub struct CbfEvaluation {
    pub owner: usize,
    pub task: usize,
    pub value: f64,
    grads: Vec<(usize, Vector2<f64>)>,
}

impl CbfEvaluation {
    pub fn new(owner: usize, task: usize, value: f64, grads: Vec<(usize, Vector2<f64>)>) -> Result<Self> {
        if !value.is_finite() || grads.iter().any(|(_, g)| !g.x.is_finite() || !g.y.is_finite()) {
            return Err(Error::Evaluation {
                robot: owner,
                task,
                message: "non-finite CBF value or gradient".into(),
            });
        }
        Ok(Self { owner, task, value, grads })
    }

    /// Gradient with respect to robot `robot`'s position (zero if untouched).
    pub fn grad(&self, robot: usize) -> Vector2<f64> {
        self.grads
            .iter()
            .find(|(r, _)| *r == robot)
            .map(|(_, g)| *g)
            .unwrap_or_else(Vector2::zeros)
    }

    /// Gradient with respect to the owner's own position.
    pub fn grad_own(&self) -> Vector2<f64> {
        self.grad(self.owner)
    }

    pub fn touched_robots(&self) -> impl Iterator<Item = usize> + '_ {
        self.grads.iter().map(|(r, _)| *r)
    }

    /// The evaluation of the rescaled CBF w·h (weights choose the units of
    /// each task's barrier; the encoded constraint set is unchanged).
    pub fn scaled(mut self, weight: f64) -> Self {
        self.value *= weight;
        for (_, g) in &mut self.grads {
            *g *= weight;
        }
        self
    }
}

/// `L_f h = ∇h·f(x)` and `L_g h = ∇h·g(x)` for one robot's model and state.
pub fn lie_derivatives(
    model: &ControlAffineModel,
    grad: &DVector<f64>,
    state: &DVector<f64>,
) -> Result<(f64, RowDVector<f64>)> {
    if grad.len() != model.state_dim() || state.len() != model.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "gradient/state of length {}/{} against model state dimension {}",
            grad.len(),
            state.len(),
            model.state_dim()
        )));
    }
    let lf = grad.dot(&model.drift(state));
    let lg = grad.transpose() * model.input_matrix(state);
    Ok((lf, lg))
}

/// One coupled task row before stacking: the per-robot u coefficients
/// (−L_{g_i} h_{ij}) and the right-hand side Σ_i (L_{f_i} h_{ij} + α(h_{ij})).
/// Every participating robot's task slack enters with coefficient −1.
#[derive(Debug, Clone)]
pub struct TaskRow {
    pub task: usize,
    pub u_coeffs: Vec<(usize, Vector2<f64>)>,
    pub rhs: f64,
}

/// Builds the single summed inequality row of task `j` over the non-failed
/// robots, one CBF evaluation per robot.
pub fn task_constraint_rows(
    evals: &[CbfEvaluation],
    models: &[ControlAffineModel],
    states: &[DVector<f64>],
    alpha: &ClassKappa,
) -> Result<TaskRow> {
    let task = evals.first().map(|e| e.task).unwrap_or(0);
    let mut u_coeffs = Vec::with_capacity(evals.len());
    let mut rhs = 0.0;
    for eval in evals {
        let i = eval.owner;
        let model = models.get(i).ok_or_else(|| {
            Error::DimensionMismatch(format!("no model for robot {i}"))
        })?;
        let grad = eval.grad_own();
        let grad_dyn = DVector::from_vec(vec![grad.x, grad.y]);
        let (lf, lg) = lie_derivatives(model, &grad_dyn, &states[i]).map_err(|e| {
            Error::Evaluation { robot: i, task: eval.task, message: e.to_string() }
        })?;
        if lg.len() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "planar assembly needs 2 input columns, robot {i} has {}",
                lg.len()
            )));
        }
        u_coeffs.push((i, Vector2::new(-lg[0], -lg[1])));
        rhs += lf + alpha.eval(eval.value);
    }
    Ok(TaskRow { task, u_coeffs, rhs })
}

/// Index map of the stacked decision vector.
#[derive(Debug, Clone)]
pub struct QpLayout {
    pub active_robots: Vec<usize>,
    pub n_tasks: usize,
    pub slack_slots: usize,
}

impl QpLayout {
    pub fn n_active(&self) -> usize {
        self.active_robots.len()
    }

    pub fn n_vars(&self) -> usize {
        self.n_active() * (2 + self.slack_slots)
    }

    /// Position of robot `robot` in the active ordering, if not failed.
    pub fn active_index(&self, robot: usize) -> Option<usize> {
        self.active_robots.iter().position(|&r| r == robot)
    }

    pub fn u_offset(&self, active_idx: usize) -> usize {
        2 * active_idx
    }

    pub fn slack_offset(&self, active_idx: usize, slot: usize) -> usize {
        2 * self.n_active() + active_idx * self.slack_slots + slot
    }

    /// Per-robot inputs from a solved decision vector; failed robots get zero.
    pub fn extract_inputs(&self, z: &DVector<f64>, n_robots: usize) -> Vec<Vector2<f64>> {
        let mut u = vec![Vector2::zeros(); n_robots];
        for (a, &robot) in self.active_robots.iter().enumerate() {
            let off = self.u_offset(a);
            u[robot] = Vector2::new(z[off], z[off + 1]);
        }
        u
    }

    pub fn extract_slacks(&self, z: &DVector<f64>) -> Vec<f64> {
        let start = 2 * self.n_active();
        (start..self.n_vars()).map(|i| z[i]).collect()
    }
}

/// The stacked QP plus the layout needed to interpret its solution.
#[derive(Debug)]
pub struct AssembledQp {
    pub problem: QpProblem,
    pub layout: QpLayout,
}

/// Stacks task, energy, and (optionally) resilience rows over the decision
/// vector z = (u, δ) with objective ½‖u‖²-style weights: P = blockdiag(I, κI)
/// extended by κ_R on the resilience slack block, q = 0.
pub fn assemble_qp(
    task_rows: &[TaskRow],
    energy_rows: &[EnergyRow],
    resilience_rows: Option<&[ResilienceRow]>,
    active_robots: &[usize],
    n_tasks: usize,
    kappa: f64,
    kappa_r: f64,
) -> Result<AssembledQp> {
    if active_robots.is_empty() {
        return Err(Error::InvalidConfig("no non-failed robots to control".into()));
    }
    if kappa <= 0.0 || kappa_r <= 0.0 {
        return Err(Error::InvalidConfig("slack weights must be > 0".into()));
    }
    let slack_slots = if resilience_rows.is_some() { n_tasks + 1 } else { n_tasks };
    let layout = QpLayout {
        active_robots: active_robots.to_vec(),
        n_tasks,
        slack_slots,
    };
    let n_active = layout.n_active();
    let n_vars = layout.n_vars();

    let mut hessian = DMatrix::zeros(n_vars, n_vars);
    for i in 0..2 * n_active {
        hessian[(i, i)] = 1.0;
    }
    for a in 0..n_active {
        for slot in 0..slack_slots {
            let idx = layout.slack_offset(a, slot);
            hessian[(idx, idx)] = if slot < n_tasks { kappa } else { kappa_r };
        }
    }

    let n_rows = task_rows.len()
        + energy_rows.len()
        + resilience_rows.map_or(0, |r| r.len());
    let mut a_mat = DMatrix::zeros(n_rows, n_vars);
    let mut b = DVector::zeros(n_rows);
    let mut labels = Vec::with_capacity(n_rows);
    let mut row = 0;

    for tr in task_rows {
        if tr.task >= n_tasks {
            return Err(Error::DimensionMismatch(format!(
                "task index {} out of range ({n_tasks} tasks)",
                tr.task
            )));
        }
        for (robot, coeff) in &tr.u_coeffs {
            let a = layout.active_index(*robot).ok_or_else(|| {
                Error::Evaluation {
                    robot: *robot,
                    task: tr.task,
                    message: "task row references a failed robot".into(),
                }
            })?;
            let off = layout.u_offset(a);
            a_mat[(row, off)] = coeff.x;
            a_mat[(row, off + 1)] = coeff.y;
        }
        for a in 0..n_active {
            a_mat[(row, layout.slack_offset(a, tr.task))] = -1.0;
        }
        b[row] = tr.rhs;
        labels.push(RowLabel::Task(tr.task));
        row += 1;
    }

    for er in energy_rows {
        let a = layout.active_index(er.robot).ok_or_else(|| {
            Error::Evaluation {
                robot: er.robot,
                task: usize::MAX,
                message: "energy row references a failed robot".into(),
            }
        })?;
        let off = layout.u_offset(a);
        a_mat[(row, off)] = er.u_coeff.x;
        a_mat[(row, off + 1)] = er.u_coeff.y;
        b[row] = er.rhs;
        labels.push(RowLabel::Energy(er.robot));
        row += 1;
    }

    if let Some(rows) = resilience_rows {
        for rr in rows {
            let a = layout.active_index(rr.robot).ok_or_else(|| {
                Error::Evaluation {
                    robot: rr.robot,
                    task: usize::MAX,
                    message: "resilience row references a failed robot".into(),
                }
            })?;
            let off = layout.u_offset(a);
            a_mat[(row, off)] = rr.u_coeff.x;
            a_mat[(row, off + 1)] = rr.u_coeff.y;
            a_mat[(row, layout.slack_offset(a, n_tasks))] = -1.0;
            b[row] = rr.rhs;
            labels.push(RowLabel::Resilience(rr.robot));
            row += 1;
        }
    }

    let problem = QpProblem::new(hessian, DVector::zeros(n_vars), a_mat, b, labels)?;
    Ok(AssembledQp { problem, layout })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::{self, QpStatus, SolverSettings};
    use approx::assert_relative_eq;

    fn planar_state(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    #[test]
    fn lie_derivatives_for_single_integrator() {
        let model = ControlAffineModel::single_integrator(2);
        // h = −‖x‖² at x = (1, 0): ∇h = (−2, 0)
        let grad = planar_state(-2.0, 0.0);
        let (lf, lg) = lie_derivatives(&model, &grad, &planar_state(1.0, 0.0)).unwrap();
        assert_eq!(lf, 0.0);
        assert_relative_eq!(lg[0], -2.0, epsilon = 1e-15);
        assert_relative_eq!(lg[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn lie_derivatives_with_nonzero_drift() {
        // f(x) = (x₂, 0), g = I, h = x₁ at x = (0, 3): Lf = 3, Lg = (1, 0)
        let model = ControlAffineModel::new(
            2,
            2,
            |x| DVector::from_vec(vec![x[1], 0.0]),
            |_| DMatrix::identity(2, 2),
        );
        let grad = planar_state(1.0, 0.0);
        let (lf, lg) = lie_derivatives(&model, &grad, &planar_state(0.0, 3.0)).unwrap();
        assert_relative_eq!(lf, 3.0, epsilon = 1e-15);
        assert_relative_eq!(lg[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(lg[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_drift_means_zero_lf() {
        let model = ControlAffineModel::single_integrator(2);
        let grad = planar_state(0.37, -4.2);
        let (lf, _) = lie_derivatives(&model, &grad, &planar_state(5.0, -2.0)).unwrap();
        assert_eq!(lf, 0.0);
    }

    #[test]
    fn lie_derivatives_reject_dimension_mismatch() {
        let model = ControlAffineModel::single_integrator(2);
        let grad = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(lie_derivatives(&model, &grad, &planar_state(0.0, 0.0)).is_err());
    }

    #[test]
    fn single_robot_task_row_matches_hand_substitution() {
        // h = −‖x‖² at x = (1,0), α(h) = h: row (2, 0 | −1)·(u, δ) ≤ −1
        let eval = CbfEvaluation::new(0, 0, -1.0, vec![(0, Vector2::new(-2.0, 0.0))]).unwrap();
        let models = vec![ControlAffineModel::single_integrator(2)];
        let states = vec![planar_state(1.0, 0.0)];
        let row = task_constraint_rows(&[eval], &models, &states, &ClassKappa::linear(1.0).unwrap())
            .unwrap();
        assert_eq!(row.u_coeffs.len(), 1);
        assert_relative_eq!(row.u_coeffs[0].1, Vector2::new(2.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(row.rhs, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn mirrored_consensus_rows_double_the_rhs() {
        // two robots at ±(1,0) under the consensus CBF of two robots:
        // h_i = −‖x_i − x_k‖² = −4, ∇h_i w.r.t. own position = −2(x_i − x_k)
        let g0 = Vector2::new(-2.0 * 2.0, 0.0);
        let g1 = Vector2::new(2.0 * 2.0, 0.0);
        let evals = vec![
            CbfEvaluation::new(0, 0, -4.0, vec![(0, g0)]).unwrap(),
            CbfEvaluation::new(1, 0, -4.0, vec![(1, g1)]).unwrap(),
        ];
        let models = vec![
            ControlAffineModel::single_integrator(2),
            ControlAffineModel::single_integrator(2),
        ];
        let states = vec![planar_state(1.0, 0.0), planar_state(-1.0, 0.0)];
        let row = task_constraint_rows(&evals, &models, &states, &ClassKappa::linear(1.0).unwrap())
            .unwrap();
        assert_relative_eq!(row.rhs, -8.0, epsilon = 1e-15);
        assert_relative_eq!(row.u_coeffs[0].1, -row.u_coeffs[1].1, epsilon = 1e-15);
    }

    #[test]
    fn all_zero_gradients_leave_only_slack_terms() {
        let evals = vec![
            CbfEvaluation::new(0, 0, -0.5, vec![(0, Vector2::zeros())]).unwrap(),
            CbfEvaluation::new(1, 0, -0.5, vec![(1, Vector2::zeros())]).unwrap(),
        ];
        let models = vec![
            ControlAffineModel::single_integrator(2),
            ControlAffineModel::single_integrator(2),
        ];
        let states = vec![planar_state(0.0, 0.0), planar_state(0.0, 0.0)];
        let row = task_constraint_rows(&evals, &models, &states, &ClassKappa::linear(1.0).unwrap())
            .unwrap();
        assert!(row.u_coeffs.iter().all(|(_, c)| c.norm() == 0.0));
        assert_relative_eq!(row.rhs, -1.0, epsilon = 1e-15);
    }

    fn dummy_task_rows(n_robots: usize, n_tasks: usize) -> Vec<TaskRow> {
        (0..n_tasks)
            .map(|j| TaskRow {
                task: j,
                u_coeffs: (0..n_robots)
                    .map(|i| (i, Vector2::new(0.1 * (i + j) as f64 + 0.1, -0.2)))
                    .collect(),
                rhs: -0.5,
            })
            .collect()
    }

    #[test]
    fn paper_scale_dimensions() {
        // 6 robots, 2 tasks, resilience on: 12 + 18 = 30 variables, 14 rows
        let task_rows = dummy_task_rows(6, 2);
        let energy_rows: Vec<EnergyRow> = (0..6)
            .map(|i| EnergyRow { robot: i, u_coeff: Vector2::new(1.0, 0.0), rhs: 1.0 })
            .collect();
        let res_rows: Vec<ResilienceRow> = (0..6)
            .map(|i| ResilienceRow { robot: i, u_coeff: Vector2::new(0.0, 1.0), rhs: -1.0 })
            .collect();
        let active: Vec<usize> = (0..6).collect();
        let asm = assemble_qp(&task_rows, &energy_rows, Some(&res_rows), &active, 2, 1e4, 1e3)
            .unwrap();
        assert_eq!(asm.problem.num_vars(), 30);
        assert_eq!(asm.problem.num_rows(), 14);
        assert_eq!(asm.layout.slack_slots, 3);
    }

    #[test]
    fn single_robot_single_task_structure() {
        let task_rows = dummy_task_rows(1, 1);
        let asm = assemble_qp(&task_rows, &[], None, &[0], 1, 1e4, 1e3).unwrap();
        // u ∈ ℝ² plus one slack
        assert_eq!(asm.problem.num_vars(), 3);
        assert_eq!(asm.problem.num_rows(), 1);
    }

    #[test]
    fn large_kappa_drives_slacks_to_zero() {
        // a row satisfiable without slack: coefficients (1,0), rhs 1
        let task_rows = vec![TaskRow {
            task: 0,
            u_coeffs: vec![(0, Vector2::new(1.0, 0.0))],
            rhs: 1.0,
        }];
        let asm = assemble_qp(&task_rows, &[], None, &[0], 1, 1e8, 1e3).unwrap();
        let sol = qp::solve(&asm.problem, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        let slacks = asm.layout.extract_slacks(&sol.z_star);
        assert!(slacks.iter().all(|s| s.abs() < 1e-4), "slacks {slacks:?}");
    }

    #[test]
    fn doubling_kappa_never_increases_slack_norm() {
        // an infeasible-without-slack task row forces slack usage
        let task_rows = vec![TaskRow {
            task: 0,
            u_coeffs: vec![(0, Vector2::new(1.0, 0.0))],
            rhs: -3.0,
        }];
        // plus an energy row that caps how much u can help
        let energy_rows = vec![EnergyRow {
            robot: 0,
            u_coeff: Vector2::new(-1.0, 0.0),
            rhs: 0.5,
        }];
        let mut last = f64::INFINITY;
        for kappa in [1.0, 2.0, 4.0, 8.0, 16.0, 1e3, 1e4] {
            let asm = assemble_qp(&task_rows, &energy_rows, None, &[0], 1, kappa, 1e3).unwrap();
            let sol = qp::solve(&asm.problem, &SolverSettings::default()).unwrap();
            assert_eq!(sol.status, QpStatus::Solved);
            let norm: f64 = asm
                .layout
                .extract_slacks(&sol.z_star)
                .iter()
                .map(|s| s * s)
                .sum::<f64>()
                .sqrt();
            assert!(norm <= last + 1e-9, "slack norm grew: {norm} > {last}");
            last = norm;
        }
    }

    #[test]
    fn resilience_mode_only_adds_columns_and_rows() {
        let task_rows = dummy_task_rows(3, 2);
        let active: Vec<usize> = (0..3).collect();
        let plain = assemble_qp(&task_rows, &[], None, &active, 2, 1e4, 1e3).unwrap();
        assert_eq!(plain.problem.num_vars(), 6 + 6);
        assert_eq!(plain.problem.num_rows(), 2);
        let res_rows: Vec<ResilienceRow> = (0..3)
            .map(|i| ResilienceRow { robot: i, u_coeff: Vector2::zeros(), rhs: -1.0 })
            .collect();
        let with = assemble_qp(&task_rows, &[], Some(&res_rows), &active, 2, 1e4, 1e3).unwrap();
        assert_eq!(with.problem.num_vars(), 6 + 9);
        assert_eq!(with.problem.num_rows(), 5);
    }
}

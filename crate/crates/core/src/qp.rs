//! Dense strictly convex quadratic programming.
//!
//! Solves `minimize ½ zᵀPz + qᵀz subject to Az ≤ b` with P symmetric positive
//! definite, by the dual active-set method (Goldfarb–Idnani): start at the
//! unconstrained minimizer, repeatedly add the most violated constraint while
//! keeping dual feasibility, dropping blocking constraints along the way.
//! Problem sizes here are tiny (tens of variables and rows), so every step
//! recomputes its KKT solves densely instead of updating factorizations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Per-row constraint tag, kept for diagnostics and infeasibility reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowLabel {
    /// Coupled task row for task `j`.
    Task(usize),
    /// Hard energy row for robot `i`.
    Energy(usize),
    /// Slacked resilience row for robot `i`.
    Resilience(usize),
    /// Anonymous row (tests, ad-hoc programs).
    Row(usize),
}

impl std::fmt::Display for RowLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RowLabel::Task(j) => write!(f, "task {j}"),
            RowLabel::Energy(i) => write!(f, "energy {i}"),
            RowLabel::Resilience(i) => write!(f, "resilience {i}"),
            RowLabel::Row(r) => write!(f, "row {r}"),
        }
    }
}

/// Inequality-constrained strictly convex QP in stacked decision variables.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub labels: Vec<RowLabel>,
}

impl QpProblem {
    /// Validates shapes and symmetry (positive definiteness is checked by the
    /// Cholesky factorization inside [`solve`]).
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        ineq_matrix: DMatrix<f64>,
        ineq_rhs: DVector<f64>,
        labels: Vec<RowLabel>,
    ) -> Result<Self> {
        let n = linear.len();
        if hessian.nrows() != n || hessian.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "hessian is {}x{}, expected {n}x{n}",
                hessian.nrows(),
                hessian.ncols()
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (hessian[(i, j)] - hessian[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Numeric(format!("hessian not symmetric at ({i},{j})")));
                }
            }
        }
        let m = ineq_rhs.len();
        if ineq_matrix.nrows() != m || (m > 0 && ineq_matrix.ncols() != n) {
            return Err(Error::DimensionMismatch(format!(
                "constraint matrix is {}x{}, expected {m}x{n}",
                ineq_matrix.nrows(),
                ineq_matrix.ncols()
            )));
        }
        if labels.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {m} rows",
                labels.len()
            )));
        }
        Ok(Self { hessian, linear, ineq_matrix, ineq_rhs, labels })
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_rows(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (&self.hessian * z).dot(z) + self.linear.dot(z)
    }
}

/// Solver termination state.
#[derive(Debug, Clone, PartialEq)]
pub enum QpStatus {
    Solved,
    /// No feasible point exists; carries the labels of the active set plus the
    /// entering constraint at detection time (best-effort conflict witness).
    Infeasible(Vec<RowLabel>),
    MaxIter,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Solved => "solved",
            QpStatus::Infeasible(_) => "infeasible",
            QpStatus::MaxIter => "max_iter",
        }
    }
}

/// Solver output: primal point, full-length dual vector, status, and the
/// worst KKT residual at the returned point.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z_star: DVector<f64>,
    pub duals: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { feas_tol: 1e-8, opt_tol: 1e-8, max_iter: 200 }
    }
}

/// The three residual norms of the KKT conditions at (z, duals).
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

/// Computes ‖Pz + q + Aᵀλ‖, the worst constraint violation, and the worst
/// complementary-slackness product for an arbitrary primal/dual pair.
pub fn kkt_residuals(problem: &QpProblem, z: &DVector<f64>, duals: &DVector<f64>) -> KktResiduals {
    let mut grad = &problem.hessian * z + &problem.linear;
    if problem.num_rows() > 0 {
        grad += problem.ineq_matrix.transpose() * duals;
    }
    let mut feasibility: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for r in 0..problem.num_rows() {
        let slack = problem.ineq_matrix.row(r).transpose().dot(z) - problem.ineq_rhs[r];
        feasibility = feasibility.max(slack);
        complementarity = complementarity.max((duals[r] * slack).abs());
    }
    KktResiduals {
        stationarity: grad.norm(),
        feasibility: feasibility.max(0.0),
        complementarity,
    }
}

/// Solves the QP. Statuses other than `Solved` are reported in the solution,
/// not as errors; `Err` is reserved for structurally broken inputs (shape
/// mismatch, non-PD Hessian, singular active-set systems).
pub fn solve(problem: &QpProblem, settings: &SolverSettings) -> Result<QpSolution> {
    let n = problem.num_vars();
    let m = problem.num_rows();
    let chol: Cholesky<f64, Dyn> = Cholesky::new(problem.hessian.clone())
        .ok_or_else(|| Error::Numeric("hessian is not positive definite".into()))?;

    let mut z = chol.solve(&(-&problem.linear));
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let mut status = QpStatus::Solved;

    let row_norms: Vec<f64> = (0..m)
        .map(|r| problem.ineq_matrix.row(r).norm().max(1e-30))
        .collect();

    let mut iters = 0usize;
    'outer: loop {
        // most violated constraint, skipping the active set; the violation
        // threshold is relative to the row's floating-point resolution so
        // badly scaled rows cannot make termination unreachable
        let z_norm = z.norm();
        let mut entering = None;
        let mut best_scaled = 0.0;
        for r in 0..m {
            if active.contains(&r) {
                continue;
            }
            let viol = problem.ineq_matrix.row(r).transpose().dot(&z) - problem.ineq_rhs[r];
            let row_scale = 1.0_f64
                .max(problem.ineq_rhs[r].abs())
                .max(row_norms[r] * z_norm);
            if viol <= settings.feas_tol * row_scale {
                continue;
            }
            let scaled = viol / row_norms[r];
            if entering.is_none() || scaled > best_scaled {
                entering = Some(r);
                best_scaled = scaled;
            }
        }
        let Some(r) = entering else {
            break;
        };

        let a_plus = problem.ineq_matrix.row(r).transpose().into_owned();
        let mut lambda_plus = 0.0;

        loop {
            iters += 1;
            if iters > settings.max_iter {
                status = QpStatus::MaxIter;
                break 'outer;
            }

            let d0 = chol.solve(&a_plus);
            let k = active.len();
            let (d, r_dir) = if k == 0 {
                (-&d0, Vec::new())
            } else {
                let mut n_t = DMatrix::zeros(n, k);
                for (col, &idx) in active.iter().enumerate() {
                    n_t.set_column(col, &problem.ineq_matrix.row(idx).transpose());
                }
                let pinv_nt = chol.solve(&n_t);
                let b_mat = n_t.transpose() * &pinv_nt;
                let rhs = n_t.transpose() * &d0;
                let r_dir = b_mat
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Numeric("singular active-set system".into()))?;
                let d = -(&d0 - &pinv_nt * &r_dir);
                (d, r_dir.iter().copied().collect::<Vec<f64>>())
            };

            // dual step bound: first active multiplier driven to zero
            let mut t1 = f64::INFINITY;
            let mut drop_idx = None;
            for (j, &rj) in r_dir.iter().enumerate() {
                if rj > 1e-14 {
                    let t = lambda[j] / rj;
                    if t < t1 {
                        t1 = t;
                        drop_idx = Some(j);
                    }
                }
            }

            // primal step that makes the entering constraint tight
            let viol = a_plus.dot(&z) - problem.ineq_rhs[r];
            let a_d = a_plus.dot(&d);
            let t2 = if a_d < -1e-13 * (1.0 + a_plus.norm_squared()) {
                -viol / a_d
            } else {
                f64::INFINITY
            };

            if !t1.is_finite() && !t2.is_finite() {
                let mut conflict: Vec<RowLabel> =
                    active.iter().map(|&i| problem.labels[i]).collect();
                conflict.push(problem.labels[r]);
                status = QpStatus::Infeasible(conflict);
                break 'outer;
            }

            let t = t1.min(t2);
            if t2.is_finite() {
                z.axpy(t, &d, 1.0);
            }
            for (j, &rj) in r_dir.iter().enumerate() {
                lambda[j] -= t * rj;
            }
            lambda_plus += t;

            if t2 <= t1 {
                active.push(r);
                lambda.push(lambda_plus);
                break;
            }
            let j = drop_idx.expect("finite t1 implies a blocking constraint");
            active.remove(j);
            lambda.remove(j);
        }
    }

    let mut duals = DVector::zeros(m);
    for (&idx, &l) in active.iter().zip(&lambda) {
        duals[idx] = l.max(0.0);
    }
    let residuals = kkt_residuals(problem, &z, &duals);
    if status == QpStatus::Solved && m > 0 {
        // sanity reclassification, relative to the problem's magnitudes
        let grad_scale = 1.0
            + (&problem.hessian * &z).norm()
            + problem.linear.norm()
            + (problem.ineq_matrix.transpose() * &duals).norm();
        let feas_scale = 1.0
            + z.norm() * row_norms.iter().cloned().fold(0.0, f64::max)
            + problem.ineq_rhs.amax();
        let ok = residuals.stationarity <= settings.opt_tol.max(1e-9) * grad_scale
            && residuals.feasibility <= settings.feas_tol.max(1e-9) * feas_scale
            && residuals.complementarity
                <= settings.opt_tol.max(1e-9) * feas_scale * (1.0 + duals.amax());
        if !ok {
            status = QpStatus::MaxIter;
        }
    }
    Ok(QpSolution { z_star: z, duals, status, kkt_residual: residuals.max() })
}

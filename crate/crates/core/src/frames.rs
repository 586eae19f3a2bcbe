//! Frame-theoretic core: frame operators, tightness bounds, the frame
//! potential and its modified variant, analytic gradients, gradient-descent
//! minimization, and a Monte-Carlo estimator of the expected task mismatch.
//!
//! A finite frame here is an indexed collection of vectors in task space
//! (dimension = number of tasks). Tightness of the frame operator
//! `S = Σ v vᵀ` and the frame-potential minimum `n²/d` characterize the
//! configurations with the best worst-case response to losing a member.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// One frame member: column `column` of robot `owner`'s task-sensitivity
/// matrix, as a vector in task space.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameVector {
    pub owner: usize,
    pub column: usize,
    pub v: DVector<f64>,
}

/// Ordered collection of frame vectors of identical dimension with unique
/// (owner, column) index pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameVectorSet {
    vectors: Vec<FrameVector>,
    dim: usize,
}

impl FrameVectorSet {
    pub fn new(dim: usize, vectors: Vec<FrameVector>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("frame dimension must be >= 1".into()));
        }
        for fv in &vectors {
            if fv.v.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "frame vector (owner {}, column {}) has dimension {}, expected {}",
                    fv.owner,
                    fv.column,
                    fv.v.len(),
                    dim
                )));
            }
        }
        let mut keys: Vec<(usize, usize)> = vectors.iter().map(|f| (f.owner, f.column)).collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::DimensionMismatch(
                "duplicate (owner, column) pair in frame".into(),
            ));
        }
        Ok(Self { vectors, dim })
    }

    /// Builds a frame from bare columns, assigning owner = index, column = 0.
    pub fn from_columns(dim: usize, columns: Vec<DVector<f64>>) -> Result<Self> {
        let vectors = columns
            .into_iter()
            .enumerate()
            .map(|(i, v)| FrameVector { owner: i, column: 0, v })
            .collect();
        Self::new(dim, vectors)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[FrameVector] {
        &self.vectors
    }

    /// Same index structure, new coefficients.
    pub fn with_vectors(&self, columns: Vec<DVector<f64>>) -> Result<Self> {
        if columns.len() != self.vectors.len() {
            return Err(Error::DimensionMismatch("vector count changed".into()));
        }
        let vectors = self
            .vectors
            .iter()
            .zip(columns)
            .map(|(fv, v)| FrameVector { owner: fv.owner, column: fv.column, v })
            .collect();
        Self::new(self.dim, vectors)
    }

    fn check_no_degenerate(&self) -> Result<()> {
        for fv in &self.vectors {
            if fv.v.norm() < 1e-300 {
                return Err(Error::DegenerateFrameVector {
                    owner: fv.owner,
                    column: fv.column,
                });
            }
        }
        Ok(())
    }
}

/// Extreme eigenvalues of the frame operator plus the derived flags.
#[derive(Debug, Clone, PartialEq)]
pub struct TightnessReport {
    pub lower_a: f64,
    pub upper_b: f64,
    pub is_tight: bool,
    pub is_normalized: bool,
}

/// Frame operator `S = Σ v vᵀ`, a symmetric PSD matrix of size dim × dim.
pub fn frame_operator(frame: &FrameVectorSet) -> Result<DMatrix<f64>> {
    if frame.is_empty() {
        return Err(Error::EmptyFrame);
    }
    let d = frame.dim();
    let mut s = DMatrix::zeros(d, d);
    for fv in frame.vectors() {
        s.syger(1.0, &fv.v, &fv.v, 1.0);
    }
    // syger fills the lower triangle; mirror it
    for i in 0..d {
        for j in (i + 1)..d {
            s[(i, j)] = s[(j, i)];
        }
    }
    Ok(s)
}

/// Eigen-extremes of the frame operator and the tight/normalized flags.
///
/// `is_tight` means the spread of eigenvalues is within `tol`; `is_normalized`
/// means every member norm is within `tol` of 1.
pub fn tightness_bounds(frame: &FrameVectorSet, tol: f64) -> Result<TightnessReport> {
    if tol <= 0.0 {
        return Err(Error::Numeric("tolerance must be > 0".into()));
    }
    let s = frame_operator(frame)?;
    let eig = s.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &lambda in eig.eigenvalues.iter() {
        if !lambda.is_finite() {
            return Err(Error::Numeric("eigen-solver returned non-finite value".into()));
        }
        lo = lo.min(lambda);
        hi = hi.max(lambda);
    }
    // S is PSD; tiny negative eigenvalues are round-off
    if lo < 0.0 && lo > -1e-12 {
        lo = 0.0;
    }
    let is_normalized = frame
        .vectors()
        .iter()
        .all(|fv| (fv.v.norm() - 1.0).abs() <= tol);
    Ok(TightnessReport {
        lower_a: lo,
        upper_b: hi,
        is_tight: hi - lo <= tol,
        is_normalized,
    })
}

/// Frame potential: sum over all ordered pairs (self-pairs included) of the
/// squared inner products of the direction-normalized members,
/// `Σ ⟨v_a, v_b⟩² / (‖v_a‖² ‖v_b‖²)`.
///
/// Scale-invariant in each member; for unit-norm frames of n vectors in
/// dimension d its minimum is n²/d, attained exactly at tight frames.
pub fn frame_potential(frame: &FrameVectorSet) -> Result<f64> {
    frame.check_no_degenerate()?;
    Ok(potential_regularized(frame, 0.0))
}

/// Frame potential with the norm-penalty term, `FP + Σ (1 − ‖v‖²)²`.
///
/// The penalty drives member norms to 1, so minimizers are exactly the finite
/// normalized tight frames and the minimum value is n²/d.
pub fn modified_frame_potential(frame: &FrameVectorSet) -> Result<f64> {
    let fp = frame_potential(frame)?;
    Ok(fp + norm_penalty(frame))
}

/// Frame potential with every member norm shifted by `eps` in the
/// denominators. Keeps the value finite for zero columns; used by the
/// resilience layer where momentarily task-insensitive robots are legal.
pub fn modified_frame_potential_regularized(frame: &FrameVectorSet, eps: f64) -> f64 {
    potential_regularized(frame, eps) + norm_penalty(frame)
}

fn potential_regularized(frame: &FrameVectorSet, eps: f64) -> f64 {
    let vs = frame.vectors();
    let n = vs.len();
    let norms: Vec<f64> = vs.iter().map(|f| f.v.norm() + eps).collect();
    let mut total = 0.0;
    for a in 0..n {
        // self-pair
        let na2 = norms[a] * norms[a];
        let saa = vs[a].v.dot(&vs[a].v) / na2;
        total += saa * saa;
        for b in (a + 1)..n {
            let c = vs[a].v.dot(&vs[b].v) / (norms[a] * norms[b]);
            total += 2.0 * c * c;
        }
    }
    total
}

fn norm_penalty(frame: &FrameVectorSet) -> f64 {
    frame
        .vectors()
        .iter()
        .map(|f| {
            let r = 1.0 - f.v.norm_squared();
            r * r
        })
        .sum()
}

/// Analytic gradient of [`modified_frame_potential`] with respect to each
/// member, in frame order.
///
/// The potential part is tangential (scale invariance), the penalty part is
/// radial; both vanish simultaneously exactly at normalized tight frames.
pub fn fp_r_gradient(frame: &FrameVectorSet) -> Result<Vec<DVector<f64>>> {
    frame.check_no_degenerate()?;
    let vs = frame.vectors();
    let n = vs.len();
    let norms: Vec<f64> = vs.iter().map(|f| f.v.norm()).collect();
    let units: Vec<DVector<f64>> = vs
        .iter()
        .zip(&norms)
        .map(|(f, &nr)| &f.v / nr)
        .collect();
    let mut grads = Vec::with_capacity(n);
    for a in 0..n {
        let mut g = DVector::zeros(frame.dim());
        for b in 0..n {
            if b == a {
                continue;
            }
            let c = units[a].dot(&units[b]);
            // d/dv_a of 2·⟨v̂_a, v̂_b⟩² (ordered pairs (a,b) and (b,a))
            g.axpy(4.0 * c / norms[a], &(&units[b] - c * &units[a]), 1.0);
        }
        let v = &vs[a].v;
        g.axpy(-4.0 * (1.0 - v.norm_squared()), v, 1.0);
        grads.push(g);
    }
    Ok(grads)
}

/// Gradient descent on the modified frame potential with a backtracking
/// (halving) line search, Armijo constant 1e-4.
///
/// Plain descent is enough: every local minimizer of the potential is global.
/// Stops when the stacked gradient norm drops below `tol` or after
/// `max_iters` iterations; the returned value never exceeds the initial one.
pub fn minimize_fp_r(
    initial: &FrameVectorSet,
    step: f64,
    max_iters: usize,
    tol: f64,
) -> Result<FrameVectorSet> {
    if step <= 0.0 {
        return Err(Error::Numeric("step must be > 0".into()));
    }
    let mut current = initial.clone();
    let mut value = modified_frame_potential(&current)?;
    for _ in 0..max_iters {
        let grads = fp_r_gradient(&current)?;
        let grad_sq: f64 = grads.iter().map(|g| g.norm_squared()).sum();
        if grad_sq.sqrt() <= tol {
            return Ok(current);
        }
        let mut s = step;
        let mut advanced = false;
        while s > 1e-18 {
            let candidate_cols: Vec<DVector<f64>> = current
                .vectors()
                .iter()
                .zip(&grads)
                .map(|(fv, g)| &fv.v - s * g)
                .collect();
            let candidate = current.with_vectors(candidate_cols)?;
            match modified_frame_potential(&candidate) {
                Ok(cv) if cv <= value - 1e-4 * s * grad_sq => {
                    current = candidate;
                    value = cv;
                    advanced = true;
                    break;
                }
                _ => s *= 0.5,
            }
        }
        if !advanced {
            return Err(Error::Numeric(
                "frame potential descent stalled: line search found no decrease".into(),
            ));
        }
    }
    Ok(current)
}

/// Monte-Carlo estimate of `E_y [ Σ_k ⟨w_k, y⟩² ]` with `y` uniform on the
/// unit sphere of the vectors' space. Deterministic for a fixed seed
/// (ChaCha8, Gaussian direction sampling).
///
/// For an A-tight frame the integrand is the constant A, so the estimate is
/// exact at every sample.
pub fn expected_mismatch(
    weighted_vectors: &[DVector<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::Numeric("n_samples must be >= 1".into()));
    }
    let dim = match weighted_vectors.first() {
        Some(v) => v.len(),
        None => return Err(Error::EmptyFrame),
    };
    if dim == 0 {
        return Err(Error::DimensionMismatch("vectors must have dimension >= 1".into()));
    }
    if let Some(bad) = weighted_vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch(format!(
            "mixed vector dimensions: {} vs {}",
            bad.len(),
            dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut acc = 0.0;
    let mut y = DVector::zeros(dim);
    for _ in 0..n_samples {
        loop {
            for i in 0..dim {
                y[i] = normal.sample(&mut rng);
            }
            let n = y.norm();
            if n > 1e-12 {
                y /= n;
                break;
            }
        }
        acc += weighted_vectors
            .iter()
            .map(|w| {
                let p = w.dot(&y);
                p * p
            })
            .sum::<f64>();
    }
    Ok(acc / n_samples as f64)
}

#[cfg(test)]
pub(crate) mod test_frames {
    use super::*;

    /// Unit vectors at the given angles (degrees) in the plane.
    pub fn planar_unit_frame(angles_deg: &[f64]) -> FrameVectorSet {
        let cols = angles_deg
            .iter()
            .map(|a| {
                let r = a.to_radians();
                DVector::from_vec(vec![r.cos(), r.sin()])
            })
            .collect();
        FrameVectorSet::from_columns(2, cols).unwrap()
    }

    /// The three-vector equiangular unit frame in the plane (tight, A = 3/2).
    pub fn mercedes_benz() -> FrameVectorSet {
        planar_unit_frame(&[90.0, 210.0, 330.0])
    }
}

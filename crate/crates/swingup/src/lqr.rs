//! Infinite-horizon continuous-time LQR design.
//!
//! Solves the continuous algebraic Riccati equation
//! `AᵀS + SA - S B R⁻¹ Bᵀ S + Q = 0` by Newton–Kleinman iteration: starting
//! from a stabilizing gain, each step solves the Lyapunov equation of the
//! closed loop and re-derives the gain, converging quadratically to the
//! stabilizing solution. The Lyapunov solves go through the Kronecker
//! vectorization `(I⊗Acᵀ + Acᵀ⊗I) vec(S) = -vec(W)`, which is exact and
//! cheap at these dimensions.

use crate::dynamics::{linearize, DynamicsError, ModelParams, State};
use nalgebra::{DMatrix, DVector, Matrix4};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LqrError {
    #[error("dimension mismatch: A is {a_rows}x{a_cols}, B is {b_rows}x{b_cols}, Q is {q_rows}x{q_cols}, R is {r_rows}x{r_cols}")]
    DimensionMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
        q_rows: usize,
        q_cols: usize,
        r_rows: usize,
        r_cols: usize,
    },
    #[error("R must be symmetric positive definite")]
    IndefiniteR,
    #[error("Q must be symmetric positive semidefinite")]
    IndefiniteQ,
    #[error("(A, B) appears uncontrollable: could not find a stabilizing initial gain")]
    Unstabilizable,
    #[error("Lyapunov solve failed: closed-loop matrix has eigenvalues summing to zero")]
    LyapunovSingular,
    #[error("Riccati iteration failed to converge after {0} iterations (residual {1:.3e})")]
    NoConvergence(usize, f64),
    #[error("solution is not positive definite; the problem is not detectable")]
    IndefiniteSolution,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Solution of a continuous algebraic Riccati equation.
#[derive(Debug, Clone)]
pub struct CareSolution {
    /// Stabilizing solution S (symmetric positive definite).
    pub s: DMatrix<f64>,
    /// Optimal gain K = R⁻¹ Bᵀ S, so that u = -K x.
    pub k: DMatrix<f64>,
    /// Relative residual ‖AᵀS + SA - SBR⁻¹BᵀS + Q‖ / ‖Q‖ of the returned S.
    pub residual: f64,
    /// Newton iterations taken.
    pub iterations: usize,
}

/// Solve `X Ac + Acᵀ X = -W` for symmetric `X` by Kronecker vectorization.
fn solve_lyapunov(ac: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>, LqrError> {
    let n = ac.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(Acᵀ X + X Ac) = (I ⊗ Acᵀ + Acᵀ ⊗ I) vec(X)
    let big = eye.kronecker(&ac.transpose()) + ac.transpose().kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, w.iter().map(|v| -v));
    let lu = big.lu();
    let x = lu.solve(&rhs).ok_or(LqrError::LyapunovSingular)?;
    let mut out = DMatrix::from_iterator(n, n, x.iter().copied());
    // Symmetrize to remove round-off skew.
    out = (&out + out.transpose()) * 0.5;
    Ok(out)
}

/// Characteristic-polynomial coefficients of the matrix with the given
/// eigenvalues: prod (s - λᵢ) = sⁿ + c₁sⁿ⁻¹ + … + cₙ.
fn poly_from_roots(roots: &[f64]) -> Vec<f64> {
    let mut c = vec![1.0];
    for &r in roots {
        let mut next = vec![0.0; c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * r;
        }
        c = next;
    }
    c
}

/// Single-input Ackermann pole placement: gain k such that A - b kᵀ has the
/// prescribed eigenvalues. Fails if (A, b) is not controllable.
fn ackermann(a: &DMatrix<f64>, b: &DVector<f64>, poles: &[f64]) -> Option<DVector<f64>> {
    let n = a.nrows();
    // Controllability matrix [b, Ab, ..., A^{n-1}b].
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        ctrb.set_column(j, &col);
        col = a * &col;
    }
    let svd = ctrb.clone().svd(false, false);
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    if !(sigma_min > 1e-10 * sigma_max) {
        return None;
    }
    // phi(A) with phi the desired characteristic polynomial (Horner form).
    let coeffs = poly_from_roots(poles);
    let mut phi = DMatrix::<f64>::identity(n, n) * coeffs[0];
    for &c in &coeffs[1..] {
        phi = a * phi + DMatrix::<f64>::identity(n, n) * c;
    }
    // k = eₙᵀ C⁻¹ phi(A), computed as yᵀ phi(A) with Cᵀ y = eₙ.
    let mut en = DVector::zeros(n);
    en[n - 1] = 1.0;
    let y = ctrb.transpose().lu().solve(&en)?;
    Some(phi.transpose() * y)
}

/// Find any stabilizing gain for (A, B) by placing poles with the first
/// controllable input column, spreading the remaining inputs' columns as zero.
fn stabilizing_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    // If A is already Hurwitz the zero gain works.
    if spectral_abscissa(a) < -1e-9 {
        return Some(DMatrix::zeros(m, n));
    }
    let radius = a
        .complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0f64, f64::max)
        .max(2.0);
    let poles: Vec<f64> = (1..=n).map(|i| -radius * i as f64).collect();
    for input in 0..m {
        let col = DVector::from_column_slice(b.column(input).as_slice());
        if let Some(k_row) = ackermann(a, &col, &poles) {
            let mut k = DMatrix::zeros(m, n);
            for j in 0..n {
                k[(input, j)] = k_row[j];
            }
            let ac = a - b * &k;
            if spectral_abscissa(&ac) < 0.0 {
                return Some(k);
            }
        }
    }
    None
}

/// Largest real part over the eigenvalues.
fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> f64 {
    let res = a.transpose() * s + s * a - s * b * r_inv * b.transpose() * s + q;
    res.norm() / q.norm().max(1.0)
}

fn check_symmetric_psd(mat: &DMatrix<f64>, strict: bool) -> bool {
    if (mat - mat.transpose()).norm() > 1e-9 * mat.norm().max(1.0) {
        return false;
    }
    let eigs = mat.clone().symmetric_eigen().eigenvalues;
    let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    if strict {
        min > 0.0
    } else {
        min > -1e-12 * mat.norm().max(1.0)
    }
}

/// Solve the continuous algebraic Riccati equation for (A, B, Q, R).
///
/// Q must be symmetric PSD and R symmetric PD. Returns the stabilizing
/// solution together with the gain and the achieved relative residual.
pub fn care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<CareSolution, LqrError> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.nrows() != n || q.ncols() != n || r.nrows() != m
        || r.ncols() != m
    {
        return Err(LqrError::DimensionMismatch {
            a_rows: a.nrows(),
            a_cols: a.ncols(),
            b_rows: b.nrows(),
            b_cols: b.ncols(),
            q_rows: q.nrows(),
            q_cols: q.ncols(),
            r_rows: r.nrows(),
            r_cols: r.ncols(),
        });
    }
    if !check_symmetric_psd(r, true) {
        return Err(LqrError::IndefiniteR);
    }
    if !check_symmetric_psd(q, false) {
        return Err(LqrError::IndefiniteQ);
    }
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or(LqrError::IndefiniteR)?
        .inverse();

    let mut k = stabilizing_gain(a, b).ok_or(LqrError::Unstabilizable)?;
    const MAX_ITERS: usize = 100;
    // Target tolerance; when rounding stalls the iteration above it (large
    // ‖S‖ makes the computable residual floor ~ε‖S‖²), accept the plateau
    // as long as it is still well below ACCEPT.
    const TARGET: f64 = 1e-10;
    const ACCEPT: f64 = 1e-8;
    let mut best: Option<(DMatrix<f64>, DMatrix<f64>, f64)> = None;
    let mut prev_residual = f64::INFINITY;
    for iter in 1..=MAX_ITERS {
        let ac = a - b * &k;
        let w = q + k.transpose() * r * &k;
        let s = solve_lyapunov(&ac, &w)?;
        k = &r_inv * b.transpose() * &s;
        let residual = care_residual(a, b, q, &r_inv, &s);
        if best.as_ref().is_none_or(|(_, _, r)| residual < *r) {
            best = Some((s, k.clone(), residual));
        }
        let stalled = residual > 0.5 * prev_residual;
        if residual < TARGET || (stalled && residual < ACCEPT) {
            let (s, k, residual) = best.unwrap();
            if !check_symmetric_psd(&s, true) {
                return Err(LqrError::IndefiniteSolution);
            }
            return Ok(CareSolution {
                s,
                k,
                residual,
                iterations: iter,
            });
        }
        prev_residual = residual;
    }
    let best_residual = best.map_or(f64::INFINITY, |(_, _, r)| r);
    Err(LqrError::NoConvergence(MAX_ITERS, best_residual))
}

/// Diagonal state weights and scalar input weight for the balance controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrWeights {
    /// Diagonal of Q: (p1, p2, v1, v2) error weights.
    pub q: [f64; 4],
    /// Control weight (per input; scalar plants use r[0]).
    pub r: f64,
}

/// Balance-controller design at the upright equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrDesign {
    /// Feedback gain, one row per control input: u = -K (x - goal).
    pub k: Vec<Vec<f64>>,
    /// Riccati solution / quadratic cost-to-go matrix, row-major 4x4.
    pub s: Vec<Vec<f64>>,
    /// Goal state the error is measured against.
    pub goal: [f64; 4],
    /// Relative Riccati residual achieved by the solver.
    pub residual: f64,
}

impl LqrDesign {
    pub fn s_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.s[i][j])
    }

    pub fn k_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k.len(), 4, |i, j| self.k[i][j])
    }

    pub fn goal_state(&self) -> State {
        State::from_array(self.goal)
    }

    /// Quadratic cost-to-go eᵀSe of a state relative to the goal.
    pub fn cost_to_go(&self, x: State) -> f64 {
        let e = x.error_to(self.goal_state());
        e.dot(&(self.s_matrix() * e))
    }

    /// Feedback torque u = -K e, expanded to per-joint torques and clamped
    /// to the actuator limit.
    pub fn torque(&self, x: State, params: &ModelParams) -> [f64; 2] {
        let e = x.error_to(self.goal_state());
        let u = -(self.k_matrix() * e);
        let mut tau = [0.0; 2];
        for (input, &joint) in params.actuation.actuated_joints().iter().enumerate() {
            tau[joint] = u[input].clamp(-params.tau_max, params.tau_max);
        }
        tau
    }
}

/// Design the upright balance LQR for the given plant.
pub fn design_lqr(params: &ModelParams, weights: &LqrWeights) -> Result<LqrDesign, LqrError> {
    params.validate()?;
    let goal = State::upright();
    let (a4, b) = linearize(goal, [0.0, 0.0], params)?;
    let a = DMatrix::from_fn(4, 4, |i, j| a4[(i, j)]);
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&weights.q));
    let m = b.ncols();
    let r = DMatrix::from_diagonal_element(m, m, weights.r);
    let sol = care(&a, &b, &q, &r)?;
    Ok(LqrDesign {
        k: (0..m)
            .map(|i| (0..4).map(|j| sol.k[(i, j)]).collect())
            .collect(),
        s: (0..4)
            .map(|i| (0..4).map(|j| sol.s[(i, j)]).collect())
            .collect(),
        goal: goal.to_array(),
        residual: sol.residual,
    })
}

/// Closed-loop matrix A - BK of a design at the linearization point.
pub fn closed_loop_matrix(
    params: &ModelParams,
    design: &LqrDesign,
) -> Result<DMatrix<f64>, LqrError> {
    let (a4, b) = linearize(design.goal_state(), [0.0, 0.0], params)?;
    let a = DMatrix::from_fn(4, 4, |i, j| a4[(i, j)]);
    Ok(&a - &b * design.k_matrix())
}

//! Rigid-body model of the torque-limited double pendulum.
//!
//! Manipulator form `M(q) q̈ + C(q, q̇) q̇ + G(q) + F(q̇) = τ` with viscous
//! joint friction. Angles are measured from the hanging-down configuration,
//! positive counterclockwise, so the upright goal is `(π, 0, 0, 0)`.

use nalgebra::{DMatrix, Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Which joints receive torque.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actuation {
    /// Shoulder (first joint) actuated.
    Pendubot,
    /// Elbow (second joint) actuated.
    Acrobot,
    /// Both joints actuated.
    Full,
}

impl Actuation {
    /// Number of control inputs.
    pub fn input_dim(self) -> usize {
        match self {
            Actuation::Pendubot | Actuation::Acrobot => 1,
            Actuation::Full => 2,
        }
    }

    /// Joint indices that receive torque, in input order.
    pub fn actuated_joints(self) -> &'static [usize] {
        match self {
            Actuation::Pendubot => &[0],
            Actuation::Acrobot => &[1],
            Actuation::Full => &[0, 1],
        }
    }

    /// Zero the torque on non-actuated joints.
    pub fn mask_torque(self, tau: [f64; 2]) -> [f64; 2] {
        match self {
            Actuation::Pendubot => [tau[0], 0.0],
            Actuation::Acrobot => [0.0, tau[1]],
            Actuation::Full => tau,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error("invalid model parameter: {0}")]
    InvalidParams(String),
    #[error("mass matrix is numerically singular at q = ({0}, {1})")]
    SingularMassMatrix(f64, f64),
    #[error("integration produced a non-finite state")]
    NonFiniteState,
}

/// Physical constants of the double pendulum plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Link masses (kg).
    pub m1: f64,
    pub m2: f64,
    /// Link lengths (m).
    pub l1: f64,
    pub l2: f64,
    /// Center-of-mass distances from the parent joint (m).
    pub r1: f64,
    pub r2: f64,
    /// Link inertias about their centers of mass (kg m^2).
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
    /// Viscous friction coefficients (N m s/rad).
    pub b1: f64,
    pub b2: f64,
    /// Torque limit per actuated joint (N m).
    pub tau_max: f64,
    pub actuation: Actuation,
}

impl ModelParams {
    /// Default pendubot plant. These values are stand-ins of plausible
    /// magnitude for a desk-scale rig; override them via the model file.
    pub fn default_pendubot() -> Self {
        Self {
            m1: 0.5,
            m2: 0.6,
            l1: 0.3,
            l2: 0.2,
            r1: 0.15,
            r2: 0.1,
            i1: 0.00375,
            i2: 0.002,
            g: 9.81,
            b1: 0.01,
            b2: 0.01,
            tau_max: 5.0,
            actuation: Actuation::Pendubot,
        }
    }

    /// Same plant as [`default_pendubot`](Self::default_pendubot) actuated at the elbow.
    pub fn default_acrobot() -> Self {
        Self {
            actuation: Actuation::Acrobot,
            ..Self::default_pendubot()
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("r1", self.r1),
            ("r2", self.r2),
            ("I1", self.i1),
            ("I2", self.i2),
            ("g", self.g),
            ("tau_max", self.tau_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(DynamicsError::InvalidParams(format!(
                    "{name} must be finite and strictly positive, got {v}"
                )));
            }
        }
        for (name, v) in [("b1", self.b1), ("b2", self.b2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DynamicsError::InvalidParams(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.r1 > self.l1 {
            return Err(DynamicsError::InvalidParams(format!(
                "r1 = {} exceeds l1 = {}",
                self.r1, self.l1
            )));
        }
        if self.r2 > self.l2 {
            return Err(DynamicsError::InvalidParams(format!(
                "r2 = {} exceeds l2 = {}",
                self.r2, self.l2
            )));
        }
        Ok(())
    }

    /// l1 + l2, the reach of the end effector.
    pub fn total_length(&self) -> f64 {
        self.l1 + self.l2
    }
}

/// Joint positions and velocities, the state 4-vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Joint angles (rad), 0 = hanging down, continuous (unwrapped).
    pub p1: f64,
    pub p2: f64,
    /// Joint velocities (rad/s).
    pub v1: f64,
    pub v2: f64,
}

impl State {
    pub fn new(p1: f64, p2: f64, v1: f64, v2: f64) -> Self {
        Self { p1, p2, v1, v2 }
    }

    /// Hanging-down rest state.
    pub fn bottom() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    /// Upright goal state (π, 0, 0, 0).
    pub fn upright() -> Self {
        Self::new(std::f64::consts::PI, 0.0, 0.0, 0.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.p1, self.p2, self.v1, self.v2]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.p1, self.p2, self.v1, self.v2)
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Per-component error to `goal` with angle components wrapped into (-π, π].
    pub fn error_to(self, goal: State) -> Vector4<f64> {
        Vector4::new(
            wrap_angle(self.p1 - goal.p1),
            wrap_angle(self.p2 - goal.p2),
            self.v1 - goal.v1,
            self.v2 - goal.v2,
        )
    }
}

/// Joint accelerations (rad/s^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accel {
    pub a1: f64,
    pub a2: f64,
}

/// Map an angle difference into (-π, π].
pub fn wrap_angle(d: f64) -> f64 {
    let r = d.rem_euclid(TAU);
    if r > std::f64::consts::PI {
        r - TAU
    } else {
        r
    }
}

/// Mass matrix M(q). Symmetric positive definite for valid parameters.
pub fn mass_matrix(q: (f64, f64), params: &ModelParams) -> Matrix2<f64> {
    let c2 = q.1.cos();
    let p = params;
    let k = p.m2 * p.l1 * p.r2;
    let m11 = p.i1 + p.i2 + p.m1 * p.r1 * p.r1 + p.m2 * (p.l1 * p.l1 + p.r2 * p.r2) + 2.0 * k * c2;
    let m12 = p.i2 + p.m2 * p.r2 * p.r2 + k * c2;
    let m22 = p.i2 + p.m2 * p.r2 * p.r2;
    Matrix2::new(m11, m12, m12, m22)
}

/// Coriolis/centrifugal matrix in the Christoffel convention, so that
/// Ṁ - 2C is skew-symmetric.
pub fn coriolis_matrix(q: (f64, f64), v: (f64, f64), params: &ModelParams) -> Matrix2<f64> {
    let h = params.m2 * params.l1 * params.r2 * q.1.sin();
    Matrix2::new(-h * v.1, -h * (v.0 + v.1), h * v.0, 0.0)
}

/// Gravity torque vector G(q) = ∂V/∂q.
pub fn gravity_vector(q: (f64, f64), params: &ModelParams) -> Vector2<f64> {
    let p = params;
    let s1 = q.0.sin();
    let s12 = (q.0 + q.1).sin();
    let g1 = p.g * (p.m1 * p.r1 + p.m2 * p.l1) * s1 + p.g * p.m2 * p.r2 * s12;
    let g2 = p.g * p.m2 * p.r2 * s12;
    Vector2::new(g1, g2)
}

/// Viscous friction torque F(q̇).
pub fn friction_vector(v: (f64, f64), params: &ModelParams) -> Vector2<f64> {
    Vector2::new(params.b1 * v.0, params.b2 * v.1)
}

/// Joint accelerations q̈ = M(q)⁻¹ (τ - C q̇ - G - F).
///
/// Torque on non-actuated joints is forced to zero according to
/// `params.actuation` before solving.
pub fn forward_dynamics(
    x: State,
    tau: [f64; 2],
    params: &ModelParams,
) -> Result<Accel, DynamicsError> {
    let tau = params.actuation.mask_torque(tau);
    let q = (x.p1, x.p2);
    let v = (x.v1, x.v2);
    let m = mass_matrix(q, params);
    // M is PD in exact arithmetic; guard against degenerate numeric input.
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if !det.is_finite() || det.abs() < 1e-14 * m.norm_squared() {
        return Err(DynamicsError::SingularMassMatrix(x.p1, x.p2));
    }
    let rhs = Vector2::new(tau[0], tau[1])
        - coriolis_matrix(q, v, params) * Vector2::new(v.0, v.1)
        - gravity_vector(q, params)
        - friction_vector(v, params);
    let inv_det = 1.0 / det;
    let a1 = inv_det * (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]);
    let a2 = inv_det * (m[(0, 0)] * rhs[1] - m[(1, 0)] * rhs[0]);
    Ok(Accel { a1, a2 })
}

fn deriv(x: [f64; 4], tau: [f64; 2], params: &ModelParams) -> Result<[f64; 4], DynamicsError> {
    let a = forward_dynamics(State::from_array(x), tau, params)?;
    Ok([x[2], x[3], a.a1, a.a2])
}

/// One classical RK4 step with the torque held constant (zero-order hold).
pub fn step_rk4(
    x: State,
    tau: [f64; 2],
    dt: f64,
    params: &ModelParams,
) -> Result<State, DynamicsError> {
    assert!(dt > 0.0, "dt must be positive");
    let y = x.to_array();
    let k1 = deriv(y, tau, params)?;
    let k2 = deriv(axpy(&y, &k1, dt / 2.0), tau, params)?;
    let k3 = deriv(axpy(&y, &k2, dt / 2.0), tau, params)?;
    let k4 = deriv(axpy(&y, &k3, dt), tau, params)?;
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let next = State::from_array(out);
    if !next.is_finite() {
        return Err(DynamicsError::NonFiniteState);
    }
    Ok(next)
}

fn axpy(y: &[f64; 4], k: &[f64; 4], h: f64) -> [f64; 4] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2], y[3] + h * k[3]]
}

/// Kinetic and potential energy (J). The potential datum is the
/// hanging-down rest configuration, so energy(bottom) = (0, 0).
pub fn energy(x: State, params: &ModelParams) -> (f64, f64) {
    let p = params;
    let m = mass_matrix((x.p1, x.p2), params);
    let v = Vector2::new(x.v1, x.v2);
    let kinetic = 0.5 * v.dot(&(m * v));
    let potential = p.g
        * (p.m1 * p.r1 * (1.0 - x.p1.cos())
            + p.m2 * (p.l1 * (1.0 - x.p1.cos()) + p.r2 * (1.0 - (x.p1 + x.p2).cos())));
    (kinetic, potential)
}

/// End-effector height relative to the base joint: h = -l1 cos p1 - l2 cos(p1+p2).
pub fn end_effector_height(p1: f64, p2: f64, params: &ModelParams) -> f64 {
    -params.l1 * p1.cos() - params.l2 * (p1 + p2).cos()
}

/// Analytic Jacobians (A, B) of the continuous dynamics ẋ = f(x, u) at
/// (x0, tau0). B has one column per actuated joint.
pub fn linearize(
    x0: State,
    tau0: [f64; 2],
    params: &ModelParams,
) -> Result<(Matrix4<f64>, DMatrix<f64>), DynamicsError> {
    let p = params;
    let q = (x0.p1, x0.p2);
    let v = (x0.v1, x0.v2);
    let (v1, v2) = v;
    let acc = forward_dynamics(x0, tau0, params)?;
    let qdd = Vector2::new(acc.a1, acc.a2);

    let m = mass_matrix(q, params);
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let m_inv = Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det;

    let k = p.m2 * p.l1 * p.r2;
    let (s2, c2) = q.1.sin_cos();
    let h = k * s2;
    let c1 = q.0.cos();
    let c12 = (q.0 + q.1).cos();

    // Partials of the bias terms. C q̇ = (-h v2 (2 v1 + v2), h v1²).
    let dcv_dq2 = Vector2::new(-k * c2 * v2 * (2.0 * v1 + v2), k * c2 * v1 * v1);
    let dcv_dv1 = Vector2::new(-2.0 * h * v2, 2.0 * h * v1);
    let dcv_dv2 = Vector2::new(-2.0 * h * (v1 + v2), 0.0);
    let dm_dq2 = Matrix2::new(-2.0 * k * s2, -k * s2, -k * s2, 0.0);
    let dg_dq1 = Vector2::new(
        p.g * (p.m1 * p.r1 + p.m2 * p.l1) * c1 + p.g * p.m2 * p.r2 * c12,
        p.g * p.m2 * p.r2 * c12,
    );
    let dg_dq2 = Vector2::new(p.g * p.m2 * p.r2 * c12, p.g * p.m2 * p.r2 * c12);

    let da_dq1 = m_inv * (-dg_dq1);
    let da_dq2 = m_inv * (-dcv_dq2 - dg_dq2 - dm_dq2 * qdd);
    let da_dv1 = m_inv * (-dcv_dv1 - Vector2::new(p.b1, 0.0));
    let da_dv2 = m_inv * (-dcv_dv2 - Vector2::new(0.0, p.b2));

    let mut a = Matrix4::zeros();
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    for (col, d) in [(0, da_dq1), (1, da_dq2), (2, da_dv1), (3, da_dv2)] {
        a[(2, col)] = d[0];
        a[(3, col)] = d[1];
    }

    let joints = p.actuation.actuated_joints();
    let mut b = DMatrix::zeros(4, joints.len());
    for (input, &joint) in joints.iter().enumerate() {
        let col = m_inv.column(joint).into_owned();
        b[(2, input)] = col[0];
        b[(3, input)] = col[1];
    }
    Ok((a, b))
}

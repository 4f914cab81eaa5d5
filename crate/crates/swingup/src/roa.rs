//! Region-of-attraction estimation for the balance LQR.
//!
//! The region is the sublevel set {x : eᵀSe ≤ ρ} of the LQR cost-to-go,
//! with e the wrapped error to the upright goal. ρ is estimated by
//! falsification: bisect on ρ, and at each candidate simulate the saturated
//! closed loop from states sampled on the ellipsoid boundary, keeping the
//! candidate only if every sample converges. This yields an inner estimate
//! in the tested sense (no certificate), which is cheap and solver-free.

use crate::dynamics::{step_rk4, ModelParams, State};
use crate::lqr::LqrDesign;
use nalgebra::{Cholesky, Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RoaError {
    #[error("invalid estimator setting: {0}")]
    InvalidConfig(String),
    #[error("cost-to-go matrix is not positive definite")]
    IndefiniteS,
    #[error(
        "region of attraction collapsed to zero: closed-loop LQR failed on every tested radius"
    )]
    Collapsed,
}

/// Settings of the falsification-based ρ estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoaConfig {
    /// Boundary states tested per bisection level.
    pub n_samples: usize,
    /// Bisection steps over [0, rho_max].
    pub bisection_iters: usize,
    /// Closed-loop simulation horizon per sample (s).
    pub horizon_s: f64,
    /// Convergence threshold on the final error norm.
    pub eps: f64,
    /// Simulation and control step (s).
    pub dt: f64,
    /// Seed for boundary sampling; every sample's sub-seed derives from it.
    pub seed: u64,
    /// Upper end of the bisection interval. `None` derives it from
    /// `max_angle_dev` (largest ρ whose ellipsoid keeps both joint-angle
    /// deviations below that bound, where the small-angle linearization
    /// is still meaningful).
    pub rho_max: Option<f64>,
    /// Angle-deviation bound (rad) used when `rho_max` is `None`.
    pub max_angle_dev: f64,
    /// Run boundary rollouts on the rayon pool. The result is identical to
    /// sequential execution: sub-seeds are per-sample and the
    /// all-samples-converge reduction is order-independent.
    pub parallel: bool,
}

impl Default for RoaConfig {
    fn default() -> Self {
        Self {
            n_samples: 200,
            bisection_iters: 20,
            horizon_s: 5.0,
            eps: 1e-2,
            dt: 0.002,
            seed: 0,
            rho_max: None,
            max_angle_dev: std::f64::consts::FRAC_PI_3,
            parallel: true,
        }
    }
}

impl RoaConfig {
    pub fn validate(&self) -> Result<(), RoaError> {
        if self.n_samples == 0 {
            return Err(RoaError::InvalidConfig("n_samples must be positive".into()));
        }
        if self.bisection_iters == 0 {
            return Err(RoaError::InvalidConfig(
                "bisection_iters must be positive".into(),
            ));
        }
        for (name, v) in [
            ("horizon_s", self.horizon_s),
            ("eps", self.eps),
            ("dt", self.dt),
            ("max_angle_dev", self.max_angle_dev),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(RoaError::InvalidConfig(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if let Some(r) = self.rho_max {
            if !(r.is_finite() && r > 0.0) {
                return Err(RoaError::InvalidConfig(format!(
                    "rho_max must be finite and positive, got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Ellipsoidal region of attraction {x : (x−x_g)ᵀ S (x−x_g) ≤ ρ}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaEstimate {
    /// Cost-to-go matrix, row-major 4x4 (shared with the LQR design).
    pub s: Vec<Vec<f64>>,
    /// Sublevel radius. ≥ 0.
    pub rho: f64,
    /// Goal state the error is measured against.
    pub goal: [f64; 4],
}

impl RoaEstimate {
    pub fn s_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.s[i][j])
    }

    pub fn goal_state(&self) -> State {
        State::from_array(self.goal)
    }

    /// Quadratic cost-to-go eᵀSe with angle components wrapped.
    pub fn cost_to_go(&self, x: State) -> f64 {
        let e = x.error_to(self.goal_state());
        e.dot(&(self.s_matrix() * e))
    }

    /// Membership test. The region is closed: boundary states count as in.
    pub fn contains(&self, x: State) -> bool {
        self.cost_to_go(x) <= self.rho
    }
}

/// Derive one rollout seed from the estimator seed, bisection level, and
/// sample index (splitmix-style finalizer; collision-free in practice).
pub(crate) fn sample_seed(seed: u64, level: u64, idx: u64) -> u64 {
    let mut z = seed
        ^ level.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ idx.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform direction on the unit 3-sphere mapped to the ellipsoid boundary
/// {eᵀSe = ρ}: e = √ρ · L⁻ᵀ u with S = LLᵀ.
fn boundary_error(chol: &Cholesky<f64, nalgebra::U4>, rho: f64, rng: &mut ChaCha8Rng) -> Vector4<f64> {
    let mut u = Vector4::zeros();
    loop {
        for i in 0..4 {
            u[i] = StandardNormal.sample(rng);
        }
        let n = u.norm();
        if n > 1e-12 {
            u /= n;
            break;
        }
    }
    let e = chol
        .l()
        .transpose()
        .solve_upper_triangular(&u)
        .expect("Cholesky factor is nonsingular");
    e * rho.sqrt()
}

/// Simulate the saturated LQR loop from `goal + e`; true if the final error
/// norm is below `eps` within the horizon.
fn converges(
    e: Vector4<f64>,
    design: &LqrDesign,
    params: &ModelParams,
    cfg: &RoaConfig,
) -> bool {
    let goal = design.goal_state();
    let mut x = State::new(goal.p1 + e[0], goal.p2 + e[1], goal.v1 + e[2], goal.v2 + e[3]);
    let steps = (cfg.horizon_s / cfg.dt).ceil() as usize;
    for _ in 0..steps {
        let tau = design.torque(x, params);
        x = match step_rk4(x, tau, cfg.dt, params) {
            Ok(next) => next,
            Err(_) => return false,
        };
        let err = x.error_to(goal);
        // Far outside any plausible basin; bail out early.
        if !x.is_finite() || err.norm() > 1e3 {
            return false;
        }
    }
    x.error_to(goal).norm() < cfg.eps
}

fn all_samples_converge(
    rho: f64,
    level: u64,
    chol: &Cholesky<f64, nalgebra::U4>,
    design: &LqrDesign,
    params: &ModelParams,
    cfg: &RoaConfig,
) -> bool {
    let run_one = |idx: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, level, idx as u64));
        let e = boundary_error(chol, rho, &mut rng);
        converges(e, design, params, cfg)
    };
    if cfg.parallel {
        (0..cfg.n_samples).into_par_iter().all(run_one)
    } else {
        (0..cfg.n_samples).all(run_one)
    }
}

/// Largest ρ whose ellipsoid keeps both joint-angle deviations within
/// `max_angle_dev`: the extreme of |e_i| over {eᵀSe ≤ ρ} is √(ρ·(S⁻¹)ᵢᵢ).
fn default_rho_max(chol: &Cholesky<f64, nalgebra::U4>, max_angle_dev: f64) -> f64 {
    let s_inv = chol.inverse();
    let worst = s_inv[(0, 0)].max(s_inv[(1, 1)]);
    max_angle_dev * max_angle_dev / worst
}

/// Estimate ρ by bisecting on the boundary-falsification test.
pub fn estimate_rho(
    design: &LqrDesign,
    params: &ModelParams,
    cfg: &RoaConfig,
) -> Result<RoaEstimate, RoaError> {
    cfg.validate()?;
    let s = design.s_matrix();
    let chol = Cholesky::new(s).ok_or(RoaError::IndefiniteS)?;
    let rho_max = match cfg.rho_max {
        Some(r) => r,
        None => default_rho_max(&chol, cfg.max_angle_dev),
    };
    let mut lo = 0.0f64;
    let mut hi = rho_max;
    for level in 0..cfg.bisection_iters {
        let mid = 0.5 * (lo + hi);
        if all_samples_converge(mid, level as u64, &chol, design, params, cfg) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return Err(RoaError::Collapsed);
    }
    Ok(RoaEstimate {
        s: design.s.clone(),
        rho: lo,
        goal: design.goal,
    })
}

/// Fraction of fresh boundary samples at `scale · ρ` that converge.
/// Verification companion to [`estimate_rho`]; uses its own seed so the
/// samples are independent of the ones the estimate was fitted on.
pub fn convergence_rate(
    est: &RoaEstimate,
    design: &LqrDesign,
    params: &ModelParams,
    cfg: &RoaConfig,
    scale: f64,
    n_samples: usize,
    seed: u64,
) -> Result<f64, RoaError> {
    cfg.validate()?;
    if n_samples == 0 {
        return Err(RoaError::InvalidConfig("n_samples must be positive".into()));
    }
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(RoaError::InvalidConfig(format!(
            "scale must be finite and non-negative, got {scale}"
        )));
    }
    let chol = Cholesky::new(est.s_matrix()).ok_or(RoaError::IndefiniteS)?;
    let rho = est.rho * scale;
    let run_one = |idx: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, u64::MAX, idx as u64));
        let e = boundary_error(&chol, rho, &mut rng);
        converges(e, design, params, cfg)
    };
    let hits: usize = if cfg.parallel {
        (0..n_samples)
            .into_par_iter()
            .map(|i| usize::from(run_one(i)))
            .sum()
    } else {
        (0..n_samples).map(|i| usize::from(run_one(i))).sum()
    };
    Ok(hits as f64 / n_samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqr::{design_lqr, LqrWeights};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn pendubot_design() -> (ModelParams, LqrDesign) {
        let p = ModelParams::default_pendubot();
        let d = design_lqr(
            &p,
            &LqrWeights {
                q: [1.92, 1.92, 0.3, 0.3],
                r: 0.82,
            },
        )
        .unwrap();
        (p, d)
    }

    /// Cheap estimator settings for unit tests; acceptance runs the defaults.
    fn quick_cfg() -> RoaConfig {
        RoaConfig {
            n_samples: 40,
            bisection_iters: 8,
            horizon_s: 3.0,
            eps: 1e-2,
            dt: 0.004,
            seed: 42,
            rho_max: None,
            max_angle_dev: std::f64::consts::FRAC_PI_3,
            parallel: true,
        }
    }

    fn estimate_for_tests() -> (ModelParams, LqrDesign, RoaEstimate) {
        let (p, d) = pendubot_design();
        let est = estimate_rho(&d, &p, &quick_cfg()).unwrap();
        (p, d, est)
    }

    #[test]
    fn cost_to_go_examples() {
        let (_, d, est) = estimate_for_tests();
        assert_eq!(est.cost_to_go(State::upright()), 0.0);
        // Unit error along each axis hits the diagonal of S.
        let goal = est.goal_state();
        let axes = [
            State::new(goal.p1 + 1.0, goal.p2, goal.v1, goal.v2),
            State::new(goal.p1, goal.p2 + 1.0, goal.v1, goal.v2),
            State::new(goal.p1, goal.p2, goal.v1 + 1.0, goal.v2),
            State::new(goal.p1, goal.p2, goal.v1, goal.v2 + 1.0),
        ];
        for (i, x) in axes.into_iter().enumerate() {
            assert_relative_eq!(est.cost_to_go(x), est.s[i][i], max_relative = 1e-12);
        }
        // Quadratic-form lower bound by the smallest eigenvalue.
        let lambda_min = est
            .s_matrix()
            .symmetric_eigen()
            .eigenvalues
            .min();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = State::new(
                goal.p1 + rng.random_range(-1.0..1.0),
                goal.p2 + rng.random_range(-1.0..1.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let e = x.error_to(goal);
            assert!(est.cost_to_go(x) >= lambda_min * e.norm_squared() - 1e-9);
        }
        let _ = d;
    }

    #[test]
    fn membership_boundary_and_wrapping() {
        let (_, _, mut est) = estimate_for_tests();
        assert!(est.contains(State::upright()));
        let goal = est.goal_state();
        let x = State::new(goal.p1 + 0.05, goal.p2 - 0.02, 0.03, -0.01);
        // Boundary states belong to the (closed) region.
        est.rho = est.cost_to_go(x);
        assert!(est.contains(x));
        // 2π shifts of either joint angle do not change the cost (up to
        // rounding in the wrap) or the membership of interior states.
        let shifted = State::new(
            x.p1 + std::f64::consts::TAU,
            x.p2 - std::f64::consts::TAU,
            x.v1,
            x.v2,
        );
        assert_relative_eq!(
            est.cost_to_go(shifted),
            est.cost_to_go(x),
            max_relative = 1e-9
        );
        est.rho = 2.0 * est.cost_to_go(x);
        assert!(est.contains(x) && est.contains(shifted));
        // An empty region contains nothing but the goal.
        est.rho = 0.0;
        assert!(!est.contains(x));
        assert!(est.contains(goal));
    }

    #[test]
    fn estimate_is_deterministic_and_parallel_invariant() {
        let (p, d) = pendubot_design();
        let cfg = quick_cfg();
        let a = estimate_rho(&d, &p, &cfg).unwrap();
        let b = estimate_rho(&d, &p, &cfg).unwrap();
        assert_eq!(a.rho.to_bits(), b.rho.to_bits());
        let sequential = RoaConfig {
            parallel: false,
            ..cfg
        };
        let c = estimate_rho(&d, &p, &sequential).unwrap();
        assert_eq!(a.rho.to_bits(), c.rho.to_bits());
    }

    #[test]
    fn fresh_boundary_samples_converge() {
        let (p, d, est) = estimate_for_tests();
        assert!(est.rho > 0.0);
        let rate = convergence_rate(&est, &d, &p, &quick_cfg(), 0.99, 200, 777).unwrap();
        assert!(rate >= 0.99, "fresh-sample convergence rate {rate}");
    }

    #[test]
    fn more_falsifiers_shrink_the_estimate_on_average() {
        let (p, d) = pendubot_design();
        let mut coarse = 0.0;
        let mut fine = 0.0;
        for seed in 0..10 {
            let base = RoaConfig {
                n_samples: 15,
                bisection_iters: 7,
                horizon_s: 2.0,
                dt: 0.005,
                seed,
                ..quick_cfg()
            };
            coarse += estimate_rho(&d, &p, &base).unwrap().rho;
            let doubled = RoaConfig {
                n_samples: 30,
                ..base
            };
            fine += estimate_rho(&d, &p, &doubled).unwrap().rho;
        }
        // Doubling the falsifier count cannot grow the estimate on average.
        assert!(
            fine <= coarse * 1.05,
            "mean rho grew from {} to {}",
            coarse / 10.0,
            fine / 10.0
        );
    }

    #[test]
    fn rho_max_override_caps_the_estimate() {
        let (p, d) = pendubot_design();
        let cfg = RoaConfig {
            rho_max: Some(0.05),
            ..quick_cfg()
        };
        let est = estimate_rho(&d, &p, &cfg).unwrap();
        assert!(est.rho <= 0.05);
        assert!(est.rho > 0.0);
    }

    #[test]
    fn destabilizing_gain_collapses_the_region() {
        let (p, d) = pendubot_design();
        // Flip the gain sign: positive feedback, nothing converges.
        let mut bad = d.clone();
        for row in &mut bad.k {
            for v in row {
                *v = -*v;
            }
        }
        let err = estimate_rho(&bad, &p, &quick_cfg());
        assert!(matches!(err, Err(RoaError::Collapsed)));
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let (p, d) = pendubot_design();
        let cfg = RoaConfig {
            n_samples: 0,
            ..quick_cfg()
        };
        assert!(matches!(
            estimate_rho(&d, &p, &cfg),
            Err(RoaError::InvalidConfig(_))
        ));
        let cfg = RoaConfig {
            dt: -0.1,
            ..quick_cfg()
        };
        assert!(matches!(
            estimate_rho(&d, &p, &cfg),
            Err(RoaError::InvalidConfig(_))
        ));
        let cfg = RoaConfig {
            rho_max: Some(f64::NAN),
            ..quick_cfg()
        };
        assert!(matches!(
            estimate_rho(&d, &p, &cfg),
            Err(RoaError::InvalidConfig(_))
        ));
    }
}

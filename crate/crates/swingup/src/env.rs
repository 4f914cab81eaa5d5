//! Training environment: normalized observations and actions, the shaped
//! three-stage reward (quadratic tracking + line-crossing bonus + LQR-region
//! bonus − overspeed penalties), and fixed-length episode management.

use crate::dynamics::{
    end_effector_height, step_rk4, Actuation, DynamicsError, ModelParams, State,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("invalid environment setting: {0}")]
    InvalidConfig(String),
    #[error("episode is over; call reset before stepping")]
    EpisodeOver,
    #[error("state became non-finite at episode step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Map joint angles into [−1, 1] (0 at upright) and clamped velocities into
/// [−1, 1]: s_i = ((p_i mod 2π) − π)/π, s_{i+2} = clamp(v_i, ±v_max)/v_max.
pub fn normalize_state(x: State, v_max: f64) -> [f64; 4] {
    let ang = |p: f64| (p.rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI)
        / std::f64::consts::PI;
    let vel = |v: f64| v.clamp(-v_max, v_max) / v_max;
    [ang(x.p1), ang(x.p2), vel(x.v1), vel(x.v2)]
}

/// Scale a normalized action in [−1, 1]^k to joint torques, routing each
/// input to its actuated joint. Out-of-range inputs are clamped; the number
/// of clamped components is returned alongside.
pub fn scale_action(u: &[f64], tau_max: f64, actuation: Actuation) -> ([f64; 2], usize) {
    let joints = actuation.actuated_joints();
    assert_eq!(u.len(), joints.len(), "action dimension mismatch");
    let mut tau = [0.0; 2];
    let mut clamped = 0;
    for (&ui, &joint) in u.iter().zip(joints) {
        if ui.abs() > 1.0 {
            clamped += 1;
        }
        tau[joint] = tau_max * ui.clamp(-1.0, 1.0);
    }
    (tau, clamped)
}

/// Parameters of the shaped training reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardParams {
    /// Diagonal state-error weights (p1, p2, v1, v2).
    pub q_train: [f64; 4],
    /// Quadratic action cost weight.
    pub r_train: f64,
    /// Bonus for the end effector rising above the line.
    pub r_line: f64,
    /// Penalty per joint exceeding the velocity threshold.
    pub r_vel: f64,
    /// Bonus for entering the LQR cost-to-go sublevel set.
    pub r_lqr: f64,
    /// Line height as a fraction of total link length.
    pub h_line_frac: f64,
    /// Velocity threshold (rad/s).
    pub v_thresh: f64,
    /// LQR cost-to-go matrix, row-major 4x4.
    pub s_lqr: Vec<Vec<f64>>,
    /// Sublevel radius for the LQR bonus.
    pub rho: f64,
    /// Goal state.
    pub goal: [f64; 4],
}

impl RewardParams {
    /// Pendubot weight set: heavy shoulder-angle tracking, no velocity
    /// penalty.
    pub fn pendubot(s_lqr: Vec<Vec<f64>>, rho: f64) -> Self {
        Self {
            q_train: [8.0, 5.0, 0.1, 0.1],
            r_train: 1e-4,
            r_line: 500.0,
            r_vel: 0.0,
            r_lqr: 1e4,
            h_line_frac: 0.8,
            v_thresh: 8.0,
            s_lqr,
            rho,
            goal: State::upright().to_array(),
        }
    }

    /// Acrobot weight set: symmetric angle tracking plus a harsh overspeed
    /// penalty.
    pub fn acrobot(s_lqr: Vec<Vec<f64>>, rho: f64) -> Self {
        Self {
            q_train: [10.0, 10.0, 0.2, 0.2],
            r_train: 1e-4,
            r_line: 500.0,
            r_vel: 1e4,
            r_lqr: 1e4,
            h_line_frac: 0.8,
            v_thresh: 8.0,
            s_lqr,
            rho,
            goal: State::upright().to_array(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.q_train.iter().any(|&q| !(q.is_finite() && q >= 0.0)) {
            return Err(EnvError::InvalidConfig(
                "q_train entries must be finite and non-negative".into(),
            ));
        }
        if !(self.r_train.is_finite() && self.r_train >= 0.0) {
            return Err(EnvError::InvalidConfig(
                "r_train must be finite and non-negative".into(),
            ));
        }
        if !(self.h_line_frac > 0.0 && self.h_line_frac <= 1.0) {
            return Err(EnvError::InvalidConfig(format!(
                "h_line_frac must be in (0, 1], got {}",
                self.h_line_frac
            )));
        }
        if !(self.v_thresh.is_finite() && self.v_thresh > 0.0) {
            return Err(EnvError::InvalidConfig(
                "v_thresh must be finite and positive".into(),
            ));
        }
        if self.s_lqr.len() != 4 || self.s_lqr.iter().any(|row| row.len() != 4) {
            return Err(EnvError::InvalidConfig("s_lqr must be 4x4".into()));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(EnvError::InvalidConfig(
                "rho must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    fn goal_state(&self) -> State {
        State::from_array(self.goal)
    }
}

/// Shaped reward of a state and the (normalized, clamped) action that led
/// to it: negative quadratic tracking and action costs, plus the line and
/// LQR-region bonuses, minus per-joint overspeed penalties. Angle errors
/// are wrapped so equivalent configurations score equally.
pub fn reward(x: State, u: &[f64], rp: &RewardParams, params: &ModelParams) -> f64 {
    let e = x.error_to(rp.goal_state());
    let quad: f64 = (0..4).map(|i| rp.q_train[i] * e[i] * e[i]).sum();
    let action_cost: f64 = u.iter().map(|ui| rp.r_train * ui * ui).sum();
    let h = end_effector_height(x.p1, x.p2, params);
    let line_bonus = if h >= rp.h_line_frac * params.total_length() {
        rp.r_line
    } else {
        0.0
    };
    let mut ctg = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            ctg += e[i] * rp.s_lqr[i][j] * e[j];
        }
    }
    let lqr_bonus = if ctg <= rp.rho { rp.r_lqr } else { 0.0 };
    let mut vel_penalty = 0.0;
    if x.v1.abs() >= rp.v_thresh {
        vel_penalty += rp.r_vel;
    }
    if x.v2.abs() >= rp.v_thresh {
        vel_penalty += rp.r_vel;
    }
    -quad - action_cost + line_bonus + lqr_bonus - vel_penalty
}

/// Environment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Which joint the agent drives; must match the plant.
    pub robot: Actuation,
    /// Control/integration period (s).
    pub dt: f64,
    /// Fixed episode length in steps (no early termination).
    pub episode_len: usize,
    /// Velocity normalization bound (rad/s).
    pub v_max: f64,
    /// Torque limit (N·m); must match the plant.
    pub tau_max: f64,
    /// Uniform reset noise half-width on each state component.
    pub reset_noise: f64,
    pub reward: RewardParams,
}

impl EnvConfig {
    pub fn pendubot(reward: RewardParams) -> Self {
        Self {
            robot: Actuation::Pendubot,
            dt: 0.01,
            episode_len: 500,
            v_max: 20.0,
            tau_max: 5.0,
            reset_noise: 0.01,
            reward,
        }
    }

    pub fn acrobot(reward: RewardParams) -> Self {
        Self {
            robot: Actuation::Acrobot,
            episode_len: 1000,
            ..Self::pendubot(reward)
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.robot == Actuation::Full {
            return Err(EnvError::InvalidConfig(
                "robot must be pendubot or acrobot".into(),
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(EnvError::InvalidConfig("dt must be positive".into()));
        }
        if self.episode_len == 0 {
            return Err(EnvError::InvalidConfig("episode_len must be positive".into()));
        }
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return Err(EnvError::InvalidConfig("v_max must be positive".into()));
        }
        if !(self.tau_max.is_finite() && self.tau_max > 0.0) {
            return Err(EnvError::InvalidConfig("tau_max must be positive".into()));
        }
        if !(self.reset_noise.is_finite() && self.reset_noise >= 0.0) {
            return Err(EnvError::InvalidConfig(
                "reset_noise must be finite and non-negative".into(),
            ));
        }
        self.reward.validate()
    }
}

/// Everything mutable inside an [`Env`], for suspend/resume.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSnapshot {
    pub state: State,
    pub step_count: usize,
    pub done: bool,
    pub rng: ChaCha8Rng,
    pub clip_violations: usize,
}

/// A running episode of the swing-up task.
#[derive(Debug, Clone)]
pub struct Env {
    pub cfg: EnvConfig,
    pub params: ModelParams,
    state: State,
    step_count: usize,
    done: bool,
    rng: ChaCha8Rng,
    /// Actions outside [−1, 1] seen so far (clamped, then counted).
    pub clip_violations: usize,
}

impl Env {
    pub fn new(cfg: EnvConfig, params: ModelParams, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        params.validate()?;
        if cfg.robot != params.actuation {
            return Err(EnvError::InvalidConfig(format!(
                "robot {:?} does not match plant actuation {:?}",
                cfg.robot, params.actuation
            )));
        }
        if cfg.tau_max != params.tau_max {
            return Err(EnvError::InvalidConfig(format!(
                "tau_max {} does not match plant limit {}",
                cfg.tau_max, params.tau_max
            )));
        }
        Ok(Self {
            cfg,
            params,
            state: State::bottom(),
            step_count: 0,
            done: true, // require an initial reset
            rng: ChaCha8Rng::seed_from_u64(seed),
            clip_violations: 0,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.cfg.robot.input_dim()
    }

    pub fn state(&self) -> State {
        self.state
    }

    /// Capture the full mutable state for later [`restore`](Self::restore);
    /// a restored environment continues bitwise identically.
    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            state: self.state,
            step_count: self.step_count,
            done: self.done,
            rng: self.rng.clone(),
            clip_violations: self.clip_violations,
        }
    }

    pub fn restore(&mut self, snap: EnvSnapshot) {
        self.state = snap.state;
        self.step_count = snap.step_count;
        self.done = snap.done;
        self.rng = snap.rng;
        self.clip_violations = snap.clip_violations;
    }

    pub fn observe(&self) -> [f64; 4] {
        normalize_state(self.state, self.cfg.v_max)
    }

    /// Start a new episode near the hanging rest state. Draws four uniform
    /// perturbations (p1, p2, v1, v2 order) unless the noise scale is zero.
    pub fn reset(&mut self) -> [f64; 4] {
        let n = self.cfg.reset_noise;
        let draw = |rng: &mut ChaCha8Rng| {
            if n > 0.0 {
                rng.random_range(-n..n)
            } else {
                0.0
            }
        };
        self.state = State::new(
            draw(&mut self.rng),
            draw(&mut self.rng),
            draw(&mut self.rng),
            draw(&mut self.rng),
        );
        self.step_count = 0;
        self.done = false;
        self.observe()
    }

    /// Advance one control period under the normalized action. Returns the
    /// next observation, the reward of the resulting state, and the done
    /// flag (set only by the episode time limit).
    pub fn step(&mut self, u: &[f64]) -> Result<([f64; 4], f64, bool), EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let (tau, clamped) = scale_action(u, self.cfg.tau_max, self.cfg.robot);
        self.clip_violations += clamped;
        let u_applied: Vec<f64> = u.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let next = step_rk4(self.state, tau, self.cfg.dt, &self.params)?;
        if !next.is_finite() {
            self.done = true;
            return Err(EnvError::NonFinite {
                step: self.step_count,
            });
        }
        self.state = next;
        self.step_count += 1;
        if self.step_count >= self.cfg.episode_len {
            self.done = true;
        }
        let r = reward(self.state, &u_applied, &self.cfg.reward, &self.params);
        Ok((self.observe(), r, self.done))
    }
}

//! Execution-time controller: learned policy for swing-up, linear balance
//! law once the state enters the certified attraction region, at 500 Hz.
//!
//! The switch is a pure per-tick membership test on the quadratic
//! cost-to-go — no hysteresis and no internal state — so the active
//! controller for any state is a function of that state alone. Rollouts
//! take the plant parameters separately from the controller's nominal
//! model so model-mismatch studies perturb only the simulated plant.

use crate::dynamics::{step_rk4, Actuation, ModelParams, State};
use crate::env::{normalize_state, scale_action};
use crate::lqr::LqrDesign;
use crate::nn::Mlp;
use crate::roa::RoaEstimate;
use crate::traj::{ControllerTag, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum HybridError {
    #[error("invalid controller assembly: {0}")]
    Mismatch(String),
}

/// Observation and actuation taps on a rollout. The defaults are exact
/// identities, so an unhooked rollout and one with default hooks produce
/// bitwise-identical trajectories. Perturbation wrappers override these.
pub trait RolloutHooks {
    /// What the controller observes at `step` given the true state.
    fn measure(&mut self, step: usize, x: State) -> State {
        let _ = step;
        x
    }

    /// What the plant receives at `step` given the commanded torque.
    fn actuate(&mut self, step: usize, tau: [f64; 2]) -> [f64; 2] {
        let _ = step;
        tau
    }
}

/// The no-op hook set.
pub struct IdentityHooks;

impl RolloutHooks for IdentityHooks {}

/// Frozen swing-up + balance controller.
#[derive(Debug, Clone)]
pub struct HybridController {
    /// Policy network (mean and log-std heads; only the mean is used here).
    pub policy: Mlp,
    pub design: LqrDesign,
    pub roa: RoaEstimate,
    /// The model the controller believes in; rollouts may integrate other
    /// parameters to emulate model mismatch.
    pub nominal: ModelParams,
    /// Control period in seconds.
    pub dt_control: f64,
    /// Velocity scale used to normalize policy observations.
    pub v_max: f64,
}

impl HybridController {
    pub fn new(
        policy: Mlp,
        design: LqrDesign,
        roa: RoaEstimate,
        nominal: ModelParams,
        dt_control: f64,
        v_max: f64,
    ) -> Result<Self, HybridError> {
        if !(dt_control.is_finite() && dt_control > 0.0) {
            return Err(HybridError::Mismatch(format!(
                "control period must be positive, got {dt_control}"
            )));
        }
        if !(v_max.is_finite() && v_max > 0.0) {
            return Err(HybridError::Mismatch(format!(
                "velocity scale must be positive, got {v_max}"
            )));
        }
        if roa.s != design.s {
            return Err(HybridError::Mismatch(
                "attraction region was certified for a different gain design".into(),
            ));
        }
        let k = nominal.actuation.input_dim();
        if policy.input_dim() != 4 || policy.output_dim() != 2 * k {
            return Err(HybridError::Mismatch(format!(
                "policy maps {} -> {}, controller needs 4 -> {}",
                policy.input_dim(),
                policy.output_dim(),
                2 * k
            )));
        }
        Ok(Self {
            policy,
            design,
            roa,
            nominal,
            dt_control,
            v_max,
        })
    }

    pub fn actuation(&self) -> Actuation {
        self.nominal.actuation
    }

    /// Stateless control law: balance torque when the state is inside the
    /// attraction region, deterministic policy-mean torque otherwise.
    pub fn control(&self, x: State) -> ([f64; 2], ControllerTag) {
        debug_assert!(x.is_finite());
        if self.roa.contains(x) {
            (self.design.torque(x, &self.nominal), ControllerTag::Lqr)
        } else {
            let obs = normalize_state(x, self.v_max);
            let out = self.policy.forward(&obs);
            let k = self.nominal.actuation.input_dim();
            let u: Vec<f64> = (0..k).map(|i| out[i].tanh()).collect();
            let (tau, _) = scale_action(&u, self.nominal.tau_max, self.nominal.actuation);
            (tau, ControllerTag::Sac)
        }
    }

    /// Closed-loop simulation of `params` under this controller with
    /// zero-order-hold torque. Records one row per control tick plus a
    /// final row evaluating the controller at the terminal state, so a
    /// horizon of n periods yields n + 1 rows. If the state goes
    /// non-finite the trajectory is cut short and flagged.
    pub fn rollout(&self, params: &ModelParams, x0: State, horizon_s: f64) -> Trajectory {
        self.rollout_with(params, x0, horizon_s, &mut IdentityHooks)
    }

    /// [`rollout`](Self::rollout) with observation/actuation taps. Applied
    /// torque is clamped to the plant's limit and masked to its actuated
    /// joints after the hook, whatever the hook returns.
    pub fn rollout_with(
        &self,
        params: &ModelParams,
        x0: State,
        horizon_s: f64,
        hooks: &mut dyn RolloutHooks,
    ) -> Trajectory {
        assert!(
            horizon_s.is_finite() && horizon_s > 0.0,
            "horizon must be positive"
        );
        let n_steps = ((horizon_s / self.dt_control).round() as usize).max(1);
        let mut traj = Trajectory::with_capacity(n_steps + 1);
        let mut x = x0;
        for step in 0..=n_steps {
            let seen = hooks.measure(step, x);
            let (tau_cmd, tag) = self.control(seen);
            let raw = hooks.actuate(step, tau_cmd);
            let mut tau_app = [0.0; 2];
            for &joint in params.actuation.actuated_joints() {
                tau_app[joint] = raw[joint].clamp(-params.tau_max, params.tau_max);
            }
            traj.push(step as f64 * self.dt_control, x, tau_cmd, tau_app, tag);
            if step == n_steps {
                break;
            }
            x = match step_rk4(x, tau_app, self.dt_control, params) {
                Ok(next) if next.is_finite() => next,
                _ => {
                    traj.diverged = true;
                    break;
                }
            };
        }
        traj
    }
}

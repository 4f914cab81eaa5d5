//! Competition-style scoring: swing-up performance metrics on a rollout
//! and a perturbation-sweep robustness suite.
//!
//! Metric formulas are fixed here so reports stay comparable across runs:
//! integrals are left-endpoint sums over the trajectory's zero-order-hold
//! intervals, which makes them exactly additive when trajectories are
//! concatenated at a shared boundary row. The aggregate score is
//! RealAI-style — success times the mean of per-metric margins against
//! configurable reference values — not the competition's exact formula,
//! which is not public.

use crate::dynamics::{end_effector_height, ModelParams, State};
use crate::hybrid::{HybridController, RolloutHooks};
use crate::roa::{sample_seed, RoaEstimate};
use crate::traj::{TrajError, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid evaluation setting: {0}")]
    InvalidConfig(String),
    #[error("robustness table line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Traj(#[from] TrajError),
}

/// Reference scales for the normalized score terms. Each metric contributes
/// max(0, 1 − metric/reference); defaults are twice the published pendubot
/// baseline so a comparable controller lands mid-range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreRefs {
    pub swingup_time: f64,
    pub energy: f64,
    pub integrated_torque: f64,
    pub torque_cost: f64,
    pub torque_smoothness: f64,
    pub velocity_cost: f64,
}

impl Default for ScoreRefs {
    fn default() -> Self {
        Self {
            swingup_time: 1.3,
            energy: 18.8,
            integrated_torque: 4.42,
            torque_cost: 17.16,
            torque_smoothness: 0.344,
            velocity_cost: 89.96,
        }
    }
}

impl ScoreRefs {
    pub fn validate(&self) -> Result<(), EvalError> {
        let all = [
            self.swingup_time,
            self.energy,
            self.integrated_torque,
            self.torque_cost,
            self.torque_smoothness,
            self.velocity_cost,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(EvalError::InvalidConfig(
                "score references must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// What counts as a completed swing-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuccessCriteria {
    /// End-effector height threshold as a fraction of total arm length.
    pub height_frac: f64,
    /// The height and attraction-region conditions must hold jointly for
    /// this long at the end of the trajectory.
    pub hold_s: f64,
    pub refs: ScoreRefs,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self {
            height_frac: 0.9,
            hold_s: 2.0,
            refs: ScoreRefs::default(),
        }
    }
}

impl SuccessCriteria {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.height_frac.is_finite() && (0.0..=1.0).contains(&self.height_frac)) {
            return Err(EvalError::InvalidConfig(format!(
                "height fraction must be in [0, 1], got {}",
                self.height_frac
            )));
        }
        if !(self.hold_s.is_finite() && self.hold_s > 0.0) {
            return Err(EvalError::InvalidConfig(format!(
                "hold duration must be positive, got {}",
                self.hold_s
            )));
        }
        self.refs.validate()
    }
}

/// Scored summary of one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub success: bool,
    /// First time after which the success condition held to the end; the
    /// trajectory duration when it never did.
    pub swingup_time: f64,
    /// Σ |τ·q̇| dt over hold intervals (J).
    pub energy: f64,
    /// Largest applied torque magnitude on any joint (N·m).
    pub max_torque: f64,
    /// Σ (|τ1| + |τ2|) dt (N·m·s).
    pub integrated_torque: f64,
    /// Σ (τ1² + τ2²) dt (N²·m²·s).
    pub torque_cost: f64,
    /// RMS of consecutive applied-torque differences (N·m).
    pub torque_smoothness: f64,
    /// Σ (v1² + v2²) dt (rad²/s).
    pub velocity_cost: f64,
    /// success · mean over six normalized margins, in [0, 1].
    pub score: f64,
}

impl MetricsReport {
    /// Key/value lines, one metric per line.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "success {}", self.success);
        let _ = writeln!(out, "swingup_time {:.16e}", self.swingup_time);
        let _ = writeln!(out, "energy {:.16e}", self.energy);
        let _ = writeln!(out, "max_torque {:.16e}", self.max_torque);
        let _ = writeln!(out, "integrated_torque {:.16e}", self.integrated_torque);
        let _ = writeln!(out, "torque_cost {:.16e}", self.torque_cost);
        let _ = writeln!(out, "torque_smoothness {:.16e}", self.torque_smoothness);
        let _ = writeln!(out, "velocity_cost {:.16e}", self.velocity_cost);
        let _ = writeln!(out, "score {:.16e}", self.score);
        out
    }
}

/// Does the row meet the instantaneous success condition?
fn row_ok(
    x: State,
    params: &ModelParams,
    roa: &RoaEstimate,
    height_frac: f64,
) -> bool {
    let h = end_effector_height(x.p1, x.p2, params);
    h >= height_frac * (params.l1 + params.l2) && roa.cost_to_go(x) <= roa.rho
}

/// Score a trajectory. The plant parameters supply link lengths for the
/// height test; the attraction region supplies the terminal-set test.
pub fn compute_metrics(
    traj: &Trajectory,
    params: &ModelParams,
    roa: &RoaEstimate,
    criteria: &SuccessCriteria,
) -> Result<MetricsReport, EvalError> {
    criteria.validate()?;
    let dt = traj.validate()?;
    let n = traj.len();
    let duration = traj.times[n - 1] - traj.times[0];

    let ok: Vec<bool> = traj
        .states
        .iter()
        .map(|&x| row_ok(x, params, roa, criteria.height_frac))
        .collect();
    // First row index from which the condition holds to the end.
    let first_held = ok
        .iter()
        .rposition(|&b| !b)
        .map(|i| i + 1)
        .unwrap_or(0);
    let held_duration = traj.times[n - 1] - traj.times[first_held.min(n - 1)];
    let success = !traj.diverged
        && first_held < n
        && held_duration + 0.5 * dt >= criteria.hold_s;
    let swingup_time = if first_held < n {
        traj.times[first_held] - traj.times[0]
    } else {
        duration
    };

    let mut energy = 0.0;
    let mut integrated = 0.0;
    let mut cost = 0.0;
    let mut vel = 0.0;
    let mut smooth_sq = 0.0;
    for i in 0..n - 1 {
        let tau = traj.tau_app[i];
        let x = traj.states[i];
        energy += (tau[0] * x.v1 + tau[1] * x.v2).abs() * dt;
        integrated += (tau[0].abs() + tau[1].abs()) * dt;
        cost += (tau[0] * tau[0] + tau[1] * tau[1]) * dt;
        vel += (x.v1 * x.v1 + x.v2 * x.v2) * dt;
        let next = traj.tau_app[i + 1];
        let d0 = next[0] - tau[0];
        let d1 = next[1] - tau[1];
        smooth_sq += d0 * d0 + d1 * d1;
    }
    let smoothness = (smooth_sq / (n - 1) as f64).sqrt();
    let max_torque = traj
        .tau_app
        .iter()
        .map(|t| t[0].abs().max(t[1].abs()))
        .fold(0.0, f64::max);

    let refs = &criteria.refs;
    let margin = |m: f64, r: f64| (1.0 - m / r).max(0.0);
    let score = if success {
        (margin(swingup_time, refs.swingup_time)
            + margin(energy, refs.energy)
            + margin(integrated, refs.integrated_torque)
            + margin(cost, refs.torque_cost)
            + margin(smoothness, refs.torque_smoothness)
            + margin(vel, refs.velocity_cost))
            / 6.0
    } else {
        0.0
    };

    Ok(MetricsReport {
        success,
        swingup_time,
        energy,
        max_torque,
        integrated_torque: integrated,
        torque_cost: cost,
        torque_smoothness: smoothness,
        velocity_cost: vel,
        score,
    })
}

/// Gaussian noise on the measured state; the plant sees the truth.
/// A zero level performs no draws and passes the state through untouched.
pub struct MeasurementNoise {
    sigma: f64,
    rng: ChaCha8Rng,
}

/// Build a measurement-noise tap with the given σ (rad and rad/s).
pub fn wrap_measurement_noise(sigma: f64, seed: u64) -> MeasurementNoise {
    assert!(sigma >= 0.0);
    MeasurementNoise {
        sigma,
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

impl RolloutHooks for MeasurementNoise {
    fn measure(&mut self, _step: usize, x: State) -> State {
        if self.sigma == 0.0 {
            return x;
        }
        let mut draw = |v: f64| {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            v + self.sigma * n
        };
        State::new(draw(x.p1), draw(x.p2), draw(x.v1), draw(x.v2))
    }
}

/// Gaussian noise on the applied torque (both joints; the rollout re-masks
/// unactuated joints). A zero level performs no draws.
pub struct TorqueNoise {
    sigma: f64,
    rng: ChaCha8Rng,
}

pub fn wrap_torque_noise(sigma: f64, seed: u64) -> TorqueNoise {
    assert!(sigma >= 0.0);
    TorqueNoise {
        sigma,
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

impl RolloutHooks for TorqueNoise {
    fn actuate(&mut self, _step: usize, tau: [f64; 2]) -> [f64; 2] {
        if self.sigma == 0.0 {
            return tau;
        }
        let mut draw = |t: f64| {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            t + self.sigma * n
        };
        [draw(tau[0]), draw(tau[1])]
    }
}

/// First-order actuator lag: τ_app = τ_prev + k·(τ_cmd − τ_prev), state
/// starting at zero. k = 1 is an exact pass-through.
pub struct TorqueResponse {
    k_resp: f64,
    prev: [f64; 2],
}

pub fn wrap_torque_response(k_resp: f64) -> TorqueResponse {
    assert!(k_resp > 0.0 && k_resp <= 2.0, "response gain out of (0, 2]");
    TorqueResponse {
        k_resp,
        prev: [0.0; 2],
    }
}

impl RolloutHooks for TorqueResponse {
    fn actuate(&mut self, _step: usize, tau: [f64; 2]) -> [f64; 2] {
        if self.k_resp == 1.0 {
            self.prev = tau;
            return tau;
        }
        let out = [
            self.prev[0] + self.k_resp * (tau[0] - self.prev[0]),
            self.prev[1] + self.k_resp * (tau[1] - self.prev[1]),
        ];
        self.prev = out;
        out
    }
}

/// The controller sees the state from `n` control steps ago; the earliest
/// steps see the all-zero rest state.
pub struct TimeDelay {
    n: usize,
    buf: VecDeque<State>,
}

pub fn wrap_time_delay(n: usize) -> TimeDelay {
    TimeDelay {
        n,
        buf: VecDeque::new(),
    }
}

impl RolloutHooks for TimeDelay {
    fn measure(&mut self, _step: usize, x: State) -> State {
        if self.n == 0 {
            return x;
        }
        self.buf.push_back(x);
        if self.buf.len() > self.n {
            self.buf.pop_front().unwrap()
        } else {
            State::bottom()
        }
    }
}

/// Scale each of the ten physical parameters {m, l, r, I, b} × {1, 2} by an
/// independent uniform factor in [1−eps, 1+eps]. Draw order: m1, m2, l1,
/// l2, r1, r2, I1, I2, b1, b2. eps = 0 performs no draws and returns the
/// parameters unchanged.
pub fn wrap_model_inaccuracy(params: &ModelParams, eps: f64, seed: u64) -> ModelParams {
    assert!((0.0..=0.5).contains(&eps), "inaccuracy fraction out of [0, 0.5]");
    let mut out = params.clone();
    if eps == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scale = |v: &mut f64| {
        *v *= rng.random_range(1.0 - eps..1.0 + eps);
    };
    scale(&mut out.m1);
    scale(&mut out.m2);
    scale(&mut out.l1);
    scale(&mut out.l2);
    scale(&mut out.r1);
    scale(&mut out.r2);
    scale(&mut out.i1);
    scale(&mut out.i2);
    scale(&mut out.b1);
    scale(&mut out.b2);
    out
}

/// The five perturbation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    MeasurementNoise,
    TorqueNoise,
    TorqueResponse,
    TimeDelay,
    ModelInaccuracy,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 5] = [
        PerturbationKind::MeasurementNoise,
        PerturbationKind::TorqueNoise,
        PerturbationKind::TorqueResponse,
        PerturbationKind::TimeDelay,
        PerturbationKind::ModelInaccuracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::MeasurementNoise => "measurement_noise",
            PerturbationKind::TorqueNoise => "torque_noise",
            PerturbationKind::TorqueResponse => "torque_response",
            PerturbationKind::TimeDelay => "time_delay",
            PerturbationKind::ModelInaccuracy => "model_inaccuracy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// One perturbation family swept over a level schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub levels: Vec<f64>,
    /// Base seed; a run derives it from the global seed, so config files
    /// can leave it out.
    #[serde(default)]
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.levels.is_empty() {
            return Err(EvalError::InvalidConfig(format!(
                "{}: empty level schedule",
                self.kind.name()
            )));
        }
        if self.levels.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(EvalError::InvalidConfig(format!(
                "{}: levels must be non-negative",
                self.kind.name()
            )));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::InvalidConfig(format!(
                "{}: levels must be strictly increasing",
                self.kind.name()
            )));
        }
        match self.kind {
            PerturbationKind::TorqueResponse => {
                if self.levels.iter().any(|&k| k <= 0.0 || k > 2.0) {
                    return Err(EvalError::InvalidConfig(
                        "torque_response: gains must lie in (0, 2]".into(),
                    ));
                }
            }
            PerturbationKind::ModelInaccuracy => {
                if self.levels.iter().any(|&e| e > 0.5) {
                    return Err(EvalError::InvalidConfig(
                        "model_inaccuracy: fractions must lie in [0, 0.5]".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Default ten-level schedule for each family.
    pub fn default_for(kind: PerturbationKind, seed: u64) -> Self {
        let levels = match kind {
            // σ on angles/velocities, rad and rad/s.
            PerturbationKind::MeasurementNoise => {
                vec![0.005, 0.01, 0.015, 0.02, 0.025, 0.03, 0.035, 0.04, 0.045, 0.05]
            }
            // σ on applied torque, N·m.
            PerturbationKind::TorqueNoise => {
                vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5]
            }
            // Response gains straddling the identity k = 1.
            PerturbationKind::TorqueResponse => {
                vec![0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0]
            }
            // Delay in control steps.
            PerturbationKind::TimeDelay => (1..=10).map(|n| n as f64).collect(),
            // Parameter scaling half-width.
            PerturbationKind::ModelInaccuracy => {
                vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5]
            }
        };
        Self { kind, levels, seed }
    }
}

/// Robustness sweep settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessConfig {
    pub specs: Vec<PerturbationSpec>,
    pub x0: State,
    pub horizon_s: f64,
    pub criteria: SuccessCriteria,
    pub parallel: bool,
}

impl RobustnessConfig {
    pub fn with_default_specs(seed: u64) -> Self {
        Self {
            specs: PerturbationKind::ALL
                .iter()
                .map(|&k| PerturbationSpec::default_for(k, seed))
                .collect(),
            x0: State::bottom(),
            horizon_s: 10.0,
            criteria: SuccessCriteria::default(),
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for kind in PerturbationKind::ALL {
            if !self.specs.iter().any(|s| s.kind == kind) {
                return Err(EvalError::InvalidConfig(format!(
                    "missing perturbation family {}",
                    kind.name()
                )));
            }
        }
        for s in &self.specs {
            s.validate()?;
        }
        if !(self.horizon_s.is_finite() && self.horizon_s > 0.0) {
            return Err(EvalError::InvalidConfig("horizon must be positive".into()));
        }
        self.criteria.validate()
    }
}

/// Success tally for one perturbation family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindScore {
    pub kind: PerturbationKind,
    pub levels: Vec<f64>,
    pub successes: Vec<bool>,
    pub fraction: f64,
}

/// Aggregate robustness result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub kinds: Vec<KindScore>,
    /// Arithmetic mean of the per-family fractions.
    pub overall: f64,
}

impl RobustnessReport {
    /// CSV table: one row per (family, level).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,level,success\n");
        for k in &self.kinds {
            for (lvl, ok) in k.levels.iter().zip(&k.successes) {
                let _ = writeln!(out, "{},{:.16e},{}", k.kind.name(), lvl, ok);
            }
        }
        out
    }

    /// Parse a `kind,level,success` table back into a report. Families are
    /// grouped in order of first appearance; fractions are recomputed.
    pub fn from_csv_str(text: &str) -> Result<Self, EvalError> {
        let parse = |line: usize, msg: String| EvalError::Parse { line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == "kind,level,success" => {}
            other => {
                return Err(parse(
                    1,
                    format!("expected header kind,level,success, got {:?}",
                        other.map(|(_, h)| h).unwrap_or("")),
                ))
            }
        }
        let mut kinds: Vec<KindScore> = Vec::new();
        for (idx, line) in lines {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let n = idx + 1;
            let mut fields = line.split(',');
            let (Some(name), Some(level), Some(success), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(parse(n, "expected 3 comma-separated fields".into()));
            };
            let kind = PerturbationKind::from_name(name)
                .ok_or_else(|| parse(n, format!("unknown family {name:?}")))?;
            let level: f64 = level
                .parse()
                .map_err(|e| parse(n, format!("bad level: {e}")))?;
            if !level.is_finite() {
                return Err(parse(n, "level must be finite".into()));
            }
            let success: bool = success
                .parse()
                .map_err(|e| parse(n, format!("bad success flag: {e}")))?;
            let entry = match kinds.iter_mut().find(|k| k.kind == kind) {
                Some(k) => k,
                None => {
                    kinds.push(KindScore {
                        kind,
                        levels: Vec::new(),
                        successes: Vec::new(),
                        fraction: 0.0,
                    });
                    kinds.last_mut().unwrap()
                }
            };
            entry.levels.push(level);
            entry.successes.push(success);
        }
        if kinds.is_empty() {
            return Err(parse(1, "no data rows".into()));
        }
        for k in &mut kinds {
            let hits = k.successes.iter().filter(|&&s| s).count();
            k.fraction = hits as f64 / k.successes.len() as f64;
        }
        let overall = kinds.iter().map(|k| k.fraction).sum::<f64>() / kinds.len() as f64;
        Ok(Self { kinds, overall })
    }

    /// Key/value summary lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for k in &self.kinds {
            let _ = writeln!(out, "{} {:.16e}", k.kind.name(), k.fraction);
        }
        let _ = writeln!(out, "overall {:.16e}", self.overall);
        out
    }
}

/// Run one perturbed rollout and judge it.
fn run_level(
    ctrl: &HybridController,
    params: &ModelParams,
    kind: PerturbationKind,
    level: f64,
    seed: u64,
    x0: State,
    horizon_s: f64,
    criteria: &SuccessCriteria,
) -> Result<bool, EvalError> {
    let traj = match kind {
        PerturbationKind::MeasurementNoise => {
            let mut hooks = wrap_measurement_noise(level, seed);
            ctrl.rollout_with(params, x0, horizon_s, &mut hooks)
        }
        PerturbationKind::TorqueNoise => {
            let mut hooks = wrap_torque_noise(level, seed);
            ctrl.rollout_with(params, x0, horizon_s, &mut hooks)
        }
        PerturbationKind::TorqueResponse => {
            let mut hooks = wrap_torque_response(level);
            ctrl.rollout_with(params, x0, horizon_s, &mut hooks)
        }
        PerturbationKind::TimeDelay => {
            let mut hooks = wrap_time_delay(level.round() as usize);
            ctrl.rollout_with(params, x0, horizon_s, &mut hooks)
        }
        PerturbationKind::ModelInaccuracy => {
            let plant = wrap_model_inaccuracy(params, level, seed);
            ctrl.rollout(&plant, x0, horizon_s)
        }
    };
    Ok(compute_metrics(&traj, params, &ctrl.roa, criteria)?.success)
}

/// Sweep every family over its levels, one rollout per level, and report
/// per-family success fractions plus their mean. Per-level seeds derive
/// from the family seed and the level index, so sequential and parallel
/// execution give identical reports.
pub fn robustness_suite(
    ctrl: &HybridController,
    params: &ModelParams,
    cfg: &RobustnessConfig,
) -> Result<RobustnessReport, EvalError> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = cfg
        .specs
        .iter()
        .enumerate()
        .flat_map(|(si, s)| (0..s.levels.len()).map(move |li| (si, li)))
        .collect();
    let run = |&(si, li): &(usize, usize)| -> Result<(usize, usize, bool), EvalError> {
        let spec = &cfg.specs[si];
        let seed = sample_seed(spec.seed, li as u64, 0);
        let ok = run_level(
            ctrl,
            params,
            spec.kind,
            spec.levels[li],
            seed,
            cfg.x0,
            cfg.horizon_s,
            &cfg.criteria,
        )?;
        Ok((si, li, ok))
    };
    let results: Vec<(usize, usize, bool)> = if cfg.parallel {
        jobs.par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_, _>>()?
    };
    let mut tables: Vec<Vec<bool>> = cfg
        .specs
        .iter()
        .map(|s| vec![false; s.levels.len()])
        .collect();
    for (si, li, ok) in results {
        tables[si][li] = ok;
    }
    let kinds: Vec<KindScore> = cfg
        .specs
        .iter()
        .zip(tables)
        .map(|(s, successes)| {
            let fraction =
                successes.iter().filter(|&&b| b).count() as f64 / successes.len() as f64;
            KindScore {
                kind: s.kind,
                levels: s.levels.clone(),
                successes,
                fraction,
            }
        })
        .collect();
    let overall = kinds.iter().map(|k| k.fraction).sum::<f64>() / kinds.len() as f64;
    Ok(RobustnessReport { kinds, overall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::step_rk4;
    use crate::lqr::{design_lqr, LqrWeights};
    use crate::nn::Mlp;
    use crate::roa::{estimate_rho, RoaConfig};
    use crate::traj::ControllerTag;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn constant_traj(n: usize, dt: f64, tau: [f64; 2], v: (f64, f64)) -> Trajectory {
        let mut t = Trajectory::default();
        for i in 0..n {
            t.push(
                i as f64 * dt,
                State::new(0.0, 0.0, v.0, v.1),
                tau,
                tau,
                ControllerTag::Sac,
            );
        }
        t
    }

    fn fake_roa() -> RoaEstimate {
        // Identity quadratic around the upright goal with unit radius.
        let s = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        RoaEstimate {
            s,
            rho: 1.0,
            goal: [std::f64::consts::PI, 0.0, 0.0, 0.0],
        }
    }

    #[test]
    fn constant_trajectory_integrals_are_closed_form() {
        let params = ModelParams::default_pendubot();
        let traj = constant_traj(101, 0.01, [1.0, 0.0], (2.0, 0.0));
        let m = compute_metrics(&traj, &params, &fake_roa(), &SuccessCriteria::default())
            .unwrap();
        assert_abs_diff_eq!(m.integrated_torque, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.energy, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.torque_cost, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.velocity_cost, 4.0, epsilon = 1e-12);
        assert_eq!(m.torque_smoothness, 0.0);
        assert_eq!(m.max_torque, 1.0);
        assert!(!m.success, "hanging states are not a swing-up");
        assert_eq!(m.score, 0.0);
    }

    #[test]
    fn all_zero_trajectory_fails_with_zero_score() {
        let params = ModelParams::default_pendubot();
        let traj = constant_traj(50, 0.01, [0.0; 2], (0.0, 0.0));
        let m = compute_metrics(&traj, &params, &fake_roa(), &SuccessCriteria::default())
            .unwrap();
        assert!(!m.success);
        assert_eq!(m.score, 0.0);
        assert_eq!(m.energy, 0.0);
        assert_eq!(m.max_torque, 0.0);
    }

    /// Rows at the goal pass the condition; rows hanging down fail it.
    fn staged_traj(pre: usize, post: usize, dt: f64) -> Trajectory {
        let mut t = Trajectory::default();
        for i in 0..pre + post {
            let x = if i < pre {
                State::bottom()
            } else {
                State::upright()
            };
            t.push(i as f64 * dt, x, [0.0; 2], [0.0; 2], ControllerTag::Lqr);
        }
        t
    }

    #[test]
    fn swingup_time_is_the_entry_into_the_held_condition() {
        let params = ModelParams::default_pendubot();
        let crit = SuccessCriteria {
            hold_s: 2.0,
            ..SuccessCriteria::default()
        };
        // 1.5 s hanging, then 3 s held at the goal.
        let traj = staged_traj(150, 301, 0.01);
        let m = compute_metrics(&traj, &params, &fake_roa(), &crit).unwrap();
        assert!(m.success);
        assert_abs_diff_eq!(m.swingup_time, 1.5, epsilon = 0.011);
        assert!(m.score > 0.0);

        // Only 1 s held: too short for the 2 s hold requirement.
        let traj = staged_traj(150, 101, 0.01);
        let m = compute_metrics(&traj, &params, &fake_roa(), &crit).unwrap();
        assert!(!m.success);
    }

    #[test]
    fn time_reversal_breaks_success() {
        let params = ModelParams::default_pendubot();
        let traj = staged_traj(100, 301, 0.01);
        let m = compute_metrics(&traj, &params, &fake_roa(), &SuccessCriteria::default())
            .unwrap();
        assert!(m.success);
        let mut rev = traj.clone();
        rev.states.reverse();
        rev.tau_cmd.reverse();
        rev.tau_app.reverse();
        rev.tags.reverse();
        let m = compute_metrics(&rev, &params, &fake_roa(), &SuccessCriteria::default())
            .unwrap();
        assert!(!m.success, "the hold condition is terminal");
    }

    #[test]
    fn integrals_add_over_concatenation() {
        let params = ModelParams::default_pendubot();
        let roa = fake_roa();
        let crit = SuccessCriteria::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut full = Trajectory::default();
        for i in 0..61 {
            full.push(
                i as f64 * 0.01,
                State::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ),
                [rng.random_range(-5.0..5.0), 0.0],
                [rng.random_range(-5.0..5.0), 0.0],
                ControllerTag::Sac,
            );
        }
        // Split at row 30, sharing the boundary row.
        let cut = 30;
        let mut a = Trajectory::default();
        let mut b = Trajectory::default();
        for i in 0..=cut {
            a.push(
                full.times[i],
                full.states[i],
                full.tau_cmd[i],
                full.tau_app[i],
                full.tags[i],
            );
        }
        for i in cut..full.len() {
            b.push(
                full.times[i],
                full.states[i],
                full.tau_cmd[i],
                full.tau_app[i],
                full.tags[i],
            );
        }
        let mf = compute_metrics(&full, &params, &roa, &crit).unwrap();
        let ma = compute_metrics(&a, &params, &roa, &crit).unwrap();
        let mb = compute_metrics(&b, &params, &roa, &crit).unwrap();
        assert_relative_eq!(mf.energy, ma.energy + mb.energy, max_relative = 1e-12);
        assert_relative_eq!(
            mf.integrated_torque,
            ma.integrated_torque + mb.integrated_torque,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            mf.torque_cost,
            ma.torque_cost + mb.torque_cost,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            mf.velocity_cost,
            ma.velocity_cost + mb.velocity_cost,
            max_relative = 1e-12
        );
    }

    fn test_controller() -> HybridController {
        let params = ModelParams::default_pendubot();
        let design = design_lqr(
            &params,
            &LqrWeights {
                q: [1.92, 1.92, 0.3, 0.3],
                r: 0.82,
            },
        )
        .unwrap();
        let cfg = RoaConfig {
            n_samples: 30,
            bisection_iters: 8,
            horizon_s: 3.0,
            dt: 4e-3,
            seed: 7,
            ..RoaConfig::default()
        };
        let roa = estimate_rho(&design, &params, &cfg).unwrap();
        let policy = Mlp::new(&[4, 8, 2], &mut ChaCha8Rng::seed_from_u64(3));
        HybridController::new(policy, design, roa, params, 0.002, 20.0).unwrap()
    }

    #[test]
    fn identity_levels_reproduce_the_plain_rollout_bitwise() {
        let ctrl = test_controller();
        let params = ctrl.nominal.clone();
        let x0 = State::new(0.4, -0.1, 0.6, -0.3);
        let plain = ctrl.rollout(&params, x0, 0.4);

        let mut hooks = wrap_measurement_noise(0.0, 99);
        assert_eq!(ctrl.rollout_with(&params, x0, 0.4, &mut hooks), plain);
        let mut hooks = wrap_torque_noise(0.0, 99);
        assert_eq!(ctrl.rollout_with(&params, x0, 0.4, &mut hooks), plain);
        let mut hooks = wrap_torque_response(1.0);
        assert_eq!(ctrl.rollout_with(&params, x0, 0.4, &mut hooks), plain);
        let mut hooks = wrap_time_delay(0);
        assert_eq!(ctrl.rollout_with(&params, x0, 0.4, &mut hooks), plain);
        let same = wrap_model_inaccuracy(&params, 0.0, 99);
        assert_eq!(ctrl.rollout(&same, x0, 0.4), plain);
    }

    #[test]
    fn noisy_wrappers_are_reproducible_and_change_the_run() {
        let ctrl = test_controller();
        let params = ctrl.nominal.clone();
        let x0 = State::new(0.4, -0.1, 0.6, -0.3);
        let plain = ctrl.rollout(&params, x0, 0.4);
        let run = |seed: u64| {
            let mut hooks = wrap_measurement_noise(0.02, seed);
            ctrl.rollout_with(&params, x0, 0.4, &mut hooks)
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), plain);
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn measurement_noise_leaves_the_plant_untouched() {
        // Replaying the applied torque open loop reproduces the states:
        // the wrapper corrupted only what the controller saw.
        let ctrl = test_controller();
        let params = ctrl.nominal.clone();
        let x0 = State::new(0.4, -0.1, 0.6, -0.3);
        let mut hooks = wrap_measurement_noise(0.05, 31);
        let traj = ctrl.rollout_with(&params, x0, 0.3, &mut hooks);
        let mut x = x0;
        for i in 0..traj.len() {
            assert_eq!(traj.states[i], x);
            if i + 1 < traj.len() {
                x = step_rk4(x, traj.tau_app[i], ctrl.dt_control, &params).unwrap();
            }
        }
    }

    #[test]
    fn torque_response_filters_toward_the_command() {
        let mut hooks = wrap_torque_response(0.5);
        assert_eq!(hooks.actuate(0, [2.0, 0.0]), [1.0, 0.0]);
        assert_eq!(hooks.actuate(1, [2.0, 0.0]), [1.5, 0.0]);
        assert_eq!(hooks.actuate(2, [2.0, 0.0]), [1.75, 0.0]);
    }

    #[test]
    fn time_delay_feeds_back_old_states() {
        let mut hooks = wrap_time_delay(2);
        let xs: Vec<State> = (0..5).map(|i| State::new(i as f64, 0.0, 0.0, 0.0)).collect();
        assert_eq!(hooks.measure(0, xs[0]), State::bottom());
        assert_eq!(hooks.measure(1, xs[1]), State::bottom());
        assert_eq!(hooks.measure(2, xs[2]), xs[0]);
        assert_eq!(hooks.measure(3, xs[3]), xs[1]);
        assert_eq!(hooks.measure(4, xs[4]), xs[2]);
    }

    #[test]
    fn model_inaccuracy_scales_within_bounds() {
        let params = ModelParams::default_pendubot();
        let eps = 0.3;
        let p = wrap_model_inaccuracy(&params, eps, 4);
        for (old, new) in [
            (params.m1, p.m1),
            (params.m2, p.m2),
            (params.l1, p.l1),
            (params.l2, p.l2),
            (params.r1, p.r1),
            (params.r2, p.r2),
            (params.i1, p.i1),
            (params.i2, p.i2),
            (params.b1, p.b1),
            (params.b2, p.b2),
        ] {
            let f = new / old;
            assert!((1.0 - eps..1.0 + eps).contains(&f), "factor {f}");
        }
        assert_eq!(p.tau_max, params.tau_max);
        assert_eq!(
            wrap_model_inaccuracy(&params, eps, 4),
            wrap_model_inaccuracy(&params, eps, 4)
        );
    }

    fn quick_robustness(x0: State, horizon: f64) -> RobustnessConfig {
        let mut cfg = RobustnessConfig::with_default_specs(1);
        // Three mild levels per family keep the sweep fast.
        for s in &mut cfg.specs {
            s.levels = match s.kind {
                PerturbationKind::TimeDelay => vec![1.0, 2.0, 3.0],
                PerturbationKind::TorqueResponse => vec![0.9, 0.95, 1.05],
                _ => vec![1e-6, 2e-6, 3e-6],
            };
        }
        cfg.x0 = x0;
        cfg.horizon_s = horizon;
        cfg.criteria.hold_s = 1.0;
        cfg
    }

    #[test]
    fn balancing_start_passes_every_family() {
        let ctrl = test_controller();
        let cfg = quick_robustness(State::upright(), 1.5);
        let report = robustness_suite(&ctrl, &ctrl.nominal.clone(), &cfg).unwrap();
        assert_eq!(report.kinds.len(), 5);
        for k in &report.kinds {
            assert_eq!(k.fraction, 1.0, "{} failed", k.kind.name());
        }
        assert_eq!(report.overall, 1.0);
    }

    #[test]
    fn hopeless_start_fails_every_family() {
        // An untrained policy from hanging rest never swings up in 1.5 s.
        let ctrl = test_controller();
        let cfg = quick_robustness(State::bottom(), 1.5);
        let report = robustness_suite(&ctrl, &ctrl.nominal.clone(), &cfg).unwrap();
        assert_eq!(report.overall, 0.0);
    }

    #[test]
    fn parallel_and_sequential_sweeps_agree() {
        let ctrl = test_controller();
        let mut cfg = quick_robustness(State::upright(), 1.5);
        cfg.parallel = true;
        let par = robustness_suite(&ctrl, &ctrl.nominal.clone(), &cfg).unwrap();
        cfg.parallel = false;
        let seq = robustness_suite(&ctrl, &ctrl.nominal.clone(), &cfg).unwrap();
        assert_eq!(par, seq);
        let mean = par.kinds.iter().map(|k| k.fraction).sum::<f64>() / 5.0;
        assert_abs_diff_eq!(par.overall, mean, epsilon = 1e-12);
    }

    #[test]
    fn spec_validation_catches_bad_schedules() {
        let mut spec = PerturbationSpec::default_for(PerturbationKind::TorqueNoise, 0);
        spec.levels = vec![0.2, 0.1];
        assert!(spec.validate().is_err());
        spec.levels = vec![];
        assert!(spec.validate().is_err());
        let mut spec = PerturbationSpec::default_for(PerturbationKind::TorqueResponse, 0);
        spec.levels = vec![0.5, 2.5];
        assert!(spec.validate().is_err());
        let mut cfg = RobustnessConfig::with_default_specs(0);
        cfg.specs.remove(2);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn robustness_table_round_trips_and_rejects_junk() {
        let report = RobustnessReport {
            kinds: vec![
                KindScore {
                    kind: PerturbationKind::TimeDelay,
                    levels: vec![1.0, 2.0, 3.0],
                    successes: vec![true, true, false],
                    fraction: 2.0 / 3.0,
                },
                KindScore {
                    kind: PerturbationKind::TorqueNoise,
                    levels: vec![0.05],
                    successes: vec![false],
                    fraction: 0.0,
                },
            ],
            overall: 1.0 / 3.0,
        };
        let back = RobustnessReport::from_csv_str(&report.to_csv()).unwrap();
        assert_eq!(back, report);

        for junk in [
            "",
            "kind,level\n",
            "kind,level,success\n",
            "kind,level,success\ntime_delay,1.0\n",
            "kind,level,success\nwarp_drive,1.0,true\n",
            "kind,level,success\ntime_delay,one,true\n",
            "kind,level,success\ntime_delay,1.0,maybe\n",
            "kind,level,success\ntime_delay,inf,true\n",
        ] {
            assert!(RobustnessReport::from_csv_str(junk).is_err(), "{junk:?}");
        }
    }

    #[test]
    fn report_exports_have_documented_shapes() {
        let report = RobustnessReport {
            kinds: vec![KindScore {
                kind: PerturbationKind::TimeDelay,
                levels: vec![1.0, 2.0],
                successes: vec![true, false],
                fraction: 0.5,
            }],
            overall: 0.5,
        };
        let csv = report.to_csv();
        assert!(csv.starts_with("kind,level,success\n"));
        assert!(csv.contains("time_delay,"));
        assert!(report.to_kv().contains("overall"));

        let m = MetricsReport {
            success: true,
            swingup_time: 1.0,
            energy: 2.0,
            max_torque: 3.0,
            integrated_torque: 4.0,
            torque_cost: 5.0,
            torque_smoothness: 6.0,
            velocity_cost: 7.0,
            score: 0.5,
        };
        let kv = m.to_kv();
        assert!(kv.lines().count() == 9);
        assert!(kv.contains("success true"));
        assert!(kv.contains("swingup_time 1.0000000000000000e0"));
    }
}

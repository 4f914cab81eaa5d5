//! Bit-exact binary persistence for the training pipeline.
//!
//! Layout (all integers and floats little-endian):
//! magic `SACPEND1`, format version (u32), then four optional blocks,
//! each introduced by a one-byte presence flag:
//! 1. agent — action dim; layer counts and widths for the five networks
//!    (policy, q1, q2, q1_target, q2_target); their parameters in
//!    canonical flat order; the three Adam states (policy, q1, q2) as
//!    step count then first and second moments; the trainer settings in
//!    field order (gamma, alpha, polyak, lr, batch_size, hidden,
//!    buffer_capacity, warmup_steps, update_every, seed, loss_log_every).
//! 2. balance design — input count, gain matrix, cost matrix, goal,
//!    residual.
//! 3. attraction region — cost matrix, radius, goal.
//! 4. training progress — cursor, environment snapshot, replay buffer,
//!    and accumulated log, enough to resume a run bitwise.
//!
//! Saving is write-then-rename so a failed run never leaves a partial
//! file, and save → load → save reproduces identical bytes.

use crate::env::EnvSnapshot;
use crate::lqr::LqrDesign;
use crate::nn::{Adam, Mlp};
use crate::roa::RoaEstimate;
use crate::sac::{
    EpisodeStats, LossSample, ReplayBuffer, SacAgent, SacConfig, TrainCursor, TrainingLog,
    Transition,
};
use crate::dynamics::State;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"SACPEND1";
pub const VERSION: u32 = 1;

/// Ceiling on any serialized count, to reject absurd allocations from
/// corrupt files before attempting them.
const MAX_COUNT: usize = 1 << 26;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {got} (expected {VERSION})")]
    BadVersion { got: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Suspended training-loop state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBlock {
    pub cursor: TrainCursor,
    pub env: EnvSnapshot,
    pub buffer: ReplayBuffer,
    pub log: TrainingLog,
}

/// Everything the pipeline persists between commands.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub agent: Option<(SacAgent, SacConfig)>,
    pub design: Option<LqrDesign>,
    pub roa: Option<RoaEstimate>,
    pub train: Option<TrainBlock>,
}

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(atomic_write(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);

        match &self.agent {
            Some((agent, cfg)) => {
                out.push(1);
                put_u32(&mut out, agent.action_dim as u32);
                let nets = [
                    &agent.policy,
                    &agent.q1,
                    &agent.q2,
                    &agent.q1_target,
                    &agent.q2_target,
                ];
                for net in nets {
                    put_u32(&mut out, net.layers.len() as u32);
                    for l in &net.layers {
                        put_u32(&mut out, l.n_in as u32);
                        put_u32(&mut out, l.n_out as u32);
                    }
                }
                for net in nets {
                    for v in net.params_flat() {
                        put_f64(&mut out, v);
                    }
                }
                for opt in [&agent.opt_policy, &agent.opt_q1, &agent.opt_q2] {
                    put_u64(&mut out, opt.t);
                    for v in opt.m.iter().chain(&opt.v) {
                        put_f64(&mut out, *v);
                    }
                }
                put_f64(&mut out, cfg.gamma);
                put_f64(&mut out, cfg.alpha);
                put_f64(&mut out, cfg.polyak);
                put_f64(&mut out, cfg.lr);
                put_u64(&mut out, cfg.batch_size as u64);
                put_u32(&mut out, cfg.hidden.len() as u32);
                for &h in &cfg.hidden {
                    put_u32(&mut out, h as u32);
                }
                put_u64(&mut out, cfg.buffer_capacity as u64);
                put_u64(&mut out, cfg.warmup_steps as u64);
                put_u64(&mut out, cfg.update_every as u64);
                put_u64(&mut out, cfg.seed);
                put_u64(&mut out, cfg.loss_log_every as u64);
            }
            None => out.push(0),
        }

        match &self.design {
            Some(d) => {
                out.push(1);
                put_u32(&mut out, d.k.len() as u32);
                for row in &d.k {
                    for &v in row {
                        put_f64(&mut out, v);
                    }
                }
                for row in &d.s {
                    for &v in row {
                        put_f64(&mut out, v);
                    }
                }
                for &v in &d.goal {
                    put_f64(&mut out, v);
                }
                put_f64(&mut out, d.residual);
            }
            None => out.push(0),
        }

        match &self.roa {
            Some(r) => {
                out.push(1);
                for row in &r.s {
                    for &v in row {
                        put_f64(&mut out, v);
                    }
                }
                put_f64(&mut out, r.rho);
                for &v in &r.goal {
                    put_f64(&mut out, v);
                }
            }
            None => out.push(0),
        }

        match &self.train {
            Some(t) => {
                out.push(1);
                put_u64(&mut out, t.cursor.steps_done);
                put_u64(&mut out, t.cursor.updates);
                put_f64(&mut out, t.cursor.ep_ret);
                put_u64(&mut out, t.cursor.ep_len as u64);
                for &v in &t.cursor.obs {
                    put_f64(&mut out, v);
                }
                out.push(t.cursor.started as u8);
                put_rng(&mut out, &t.cursor.rng);

                put_state(&mut out, t.env.state);
                put_u64(&mut out, t.env.step_count as u64);
                out.push(t.env.done as u8);
                put_rng(&mut out, &t.env.rng);
                put_u64(&mut out, t.env.clip_violations as u64);

                put_u64(&mut out, t.buffer.capacity() as u64);
                put_u64(&mut out, t.buffer.head() as u64);
                put_u64(&mut out, t.buffer.len() as u64);
                for tr in t.buffer.iter() {
                    for &v in &tr.s {
                        put_f64(&mut out, v);
                    }
                    put_u32(&mut out, tr.a.len() as u32);
                    for &v in &tr.a {
                        put_f64(&mut out, v);
                    }
                    put_f64(&mut out, tr.r);
                    for &v in &tr.s_next {
                        put_f64(&mut out, v);
                    }
                    put_f64(&mut out, tr.d);
                }

                put_u64(&mut out, t.log.episodes.len() as u64);
                for e in &t.log.episodes {
                    put_u64(&mut out, e.end_step);
                    put_f64(&mut out, e.ret);
                    put_u64(&mut out, e.len as u64);
                }
                put_u64(&mut out, t.log.losses.len() as u64);
                for l in &t.log.losses {
                    put_u64(&mut out, l.step);
                    put_f64(&mut out, l.q_loss);
                    put_f64(&mut out, l.pi_loss);
                }
            }
            None => out.push(0),
        }

        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Cursor { bytes, at: 0 };
        if cur.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion { got: version });
        }

        let agent = if cur.u8()? != 0 {
            let action_dim = cur.count()?;
            if action_dim == 0 || action_dim > 2 {
                return Err(corrupt("action dimension out of range"));
            }
            let mut shapes = Vec::with_capacity(5);
            for _ in 0..5 {
                let n_layers = cur.count()?;
                if n_layers == 0 || n_layers > 64 {
                    return Err(corrupt("layer count out of range"));
                }
                let mut dims = Vec::with_capacity(n_layers);
                for _ in 0..n_layers {
                    let n_in = cur.count()?;
                    let n_out = cur.count()?;
                    if n_in == 0 || n_out == 0 || n_in * n_out > MAX_COUNT {
                        return Err(corrupt("layer width out of range"));
                    }
                    dims.push((n_in, n_out));
                }
                for w in dims.windows(2) {
                    if w[0].1 != w[1].0 {
                        return Err(corrupt("layer widths do not chain"));
                    }
                }
                shapes.push(dims);
            }
            let mut nets = Vec::with_capacity(5);
            for dims in &shapes {
                let mut sizes = vec![dims[0].0];
                sizes.extend(dims.iter().map(|d| d.1));
                // Build with a throwaway generator, then overwrite.
                let mut net = Mlp::new(&sizes, &mut ChaCha8Rng::seed_from_u64(0));
                let n = net.n_params();
                let mut flat = Vec::with_capacity(n);
                for _ in 0..n {
                    flat.push(cur.f64()?);
                }
                net.load_flat(&flat);
                nets.push(net);
            }
            let q2_target = nets.pop().unwrap();
            let q1_target = nets.pop().unwrap();
            let q2 = nets.pop().unwrap();
            let q1 = nets.pop().unwrap();
            let policy = nets.pop().unwrap();
            if policy.input_dim() != 4 || policy.output_dim() != 2 * action_dim {
                return Err(corrupt("policy shape inconsistent with action dimension"));
            }
            if q1.sizes() != q2.sizes()
                || q1.sizes() != q1_target.sizes()
                || q1.sizes() != q2_target.sizes()
                || q1.input_dim() != 4 + action_dim
                || q1.output_dim() != 1
            {
                return Err(corrupt("critic shapes inconsistent"));
            }
            let mut opts = Vec::with_capacity(3);
            for net in [&policy, &q1, &q2] {
                let n = net.n_params();
                let mut opt = Adam::new(n);
                opt.t = cur.u64()?;
                for i in 0..n {
                    opt.m[i] = cur.f64()?;
                }
                for i in 0..n {
                    opt.v[i] = cur.f64()?;
                }
                opts.push(opt);
            }
            let opt_q2 = opts.pop().unwrap();
            let opt_q1 = opts.pop().unwrap();
            let opt_policy = opts.pop().unwrap();
            let gamma = cur.f64()?;
            let alpha = cur.f64()?;
            let polyak = cur.f64()?;
            let lr = cur.f64()?;
            let batch_size = cur.u64()? as usize;
            let n_hidden = cur.count()?;
            if n_hidden > 64 {
                return Err(corrupt("hidden layer count out of range"));
            }
            let mut hidden = Vec::with_capacity(n_hidden);
            for _ in 0..n_hidden {
                hidden.push(cur.count()?);
            }
            let buffer_capacity = cur.u64()? as usize;
            let warmup_steps = cur.u64()? as usize;
            let update_every = cur.u64()? as usize;
            let seed = cur.u64()?;
            let loss_log_every = cur.u64()? as usize;
            let cfg = SacConfig {
                gamma,
                alpha,
                polyak,
                lr,
                batch_size,
                hidden,
                buffer_capacity,
                warmup_steps,
                update_every,
                seed,
                loss_log_every,
            };
            let agent = SacAgent {
                policy,
                q1,
                q2,
                q1_target,
                q2_target,
                opt_policy,
                opt_q1,
                opt_q2,
                action_dim,
            };
            Some((agent, cfg))
        } else {
            None
        };

        let design = if cur.u8()? != 0 {
            let n_inputs = cur.count()?;
            if n_inputs == 0 || n_inputs > 2 {
                return Err(corrupt("gain row count out of range"));
            }
            let mut k = Vec::with_capacity(n_inputs);
            for _ in 0..n_inputs {
                let mut row = Vec::with_capacity(4);
                for _ in 0..4 {
                    row.push(cur.f64()?);
                }
                k.push(row);
            }
            let s = read_matrix4(&mut cur)?;
            let goal = read_vec4(&mut cur)?;
            let residual = cur.f64()?;
            Some(LqrDesign {
                k,
                s,
                goal,
                residual,
            })
        } else {
            None
        };

        let roa = if cur.u8()? != 0 {
            let s = read_matrix4(&mut cur)?;
            let rho = cur.f64()?;
            let goal = read_vec4(&mut cur)?;
            Some(RoaEstimate { s, rho, goal })
        } else {
            None
        };

        let train = if cur.u8()? != 0 {
            let steps_done = cur.u64()?;
            let updates = cur.u64()?;
            let ep_ret = cur.f64()?;
            let ep_len = cur.u64()? as usize;
            let obs = read_vec4(&mut cur)?;
            let started = cur.u8()? != 0;
            let rng = read_rng(&mut cur)?;
            let cursor = TrainCursor {
                rng,
                steps_done,
                updates,
                ep_ret,
                ep_len,
                obs,
                started,
            };

            let state = read_state(&mut cur)?;
            let step_count = cur.u64()? as usize;
            let done = cur.u8()? != 0;
            let env_rng = read_rng(&mut cur)?;
            let clip_violations = cur.u64()? as usize;
            let env = EnvSnapshot {
                state,
                step_count,
                done,
                rng: env_rng,
                clip_violations,
            };

            let capacity = cur.u64()? as usize;
            let head = cur.u64()? as usize;
            let len = cur.u64()? as usize;
            if capacity == 0 || capacity > MAX_COUNT || len > capacity || head >= capacity {
                return Err(corrupt("replay geometry out of range"));
            }
            // Each stored transition takes at least 11 floats plus a count.
            if len.saturating_mul(11 * 8) > cur.remaining() {
                return Err(corrupt("replay length exceeds file size"));
            }
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let s = read_vec4(&mut cur)?;
                let k = cur.count()?;
                if k == 0 || k > 2 {
                    return Err(corrupt("action length out of range"));
                }
                let mut a = Vec::with_capacity(k);
                for _ in 0..k {
                    a.push(cur.f64()?);
                }
                let r = cur.f64()?;
                let s_next = read_vec4(&mut cur)?;
                let d = cur.f64()?;
                data.push(Transition { s, a, r, s_next, d });
            }
            let buffer = ReplayBuffer::from_parts(capacity, head, data);

            let n_ep = cur.u64()? as usize;
            if n_ep.saturating_mul(24) > cur.remaining() {
                return Err(corrupt("episode count exceeds file size"));
            }
            let mut episodes = Vec::with_capacity(n_ep);
            for _ in 0..n_ep {
                let end_step = cur.u64()?;
                let ret = cur.f64()?;
                let len = cur.u64()? as usize;
                episodes.push(EpisodeStats { end_step, ret, len });
            }
            let n_loss = cur.u64()? as usize;
            if n_loss.saturating_mul(24) > cur.remaining() {
                return Err(corrupt("loss count exceeds file size"));
            }
            let mut losses = Vec::with_capacity(n_loss);
            for _ in 0..n_loss {
                let step = cur.u64()?;
                let q_loss = cur.f64()?;
                let pi_loss = cur.f64()?;
                losses.push(LossSample {
                    step,
                    q_loss,
                    pi_loss,
                });
            }
            Some(TrainBlock {
                cursor,
                env,
                buffer,
                log: TrainingLog { episodes, losses },
            })
        } else {
            None
        };

        if cur.remaining() != 0 {
            return Err(corrupt("trailing bytes after final block"));
        }
        Ok(Checkpoint {
            agent,
            design,
            roa,
            train,
        })
    }
}

fn corrupt(msg: &str) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_state(out: &mut Vec<u8>, x: State) {
    for v in x.to_array() {
        put_f64(out, v);
    }
}

/// Generator state: 32-byte seed, stream id, 128-bit word position.
fn put_rng(out: &mut Vec<u8>, rng: &ChaCha8Rng) {
    out.extend_from_slice(&rng.get_seed());
    put_u64(out, rng.get_stream());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.remaining() < n {
            return Err(corrupt("unexpected end of file"));
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A u32 used as a length; bounded to keep allocations sane.
    fn count(&mut self) -> Result<usize, CheckpointError> {
        let v = self.u32()? as usize;
        if v > MAX_COUNT {
            return Err(corrupt("count field out of range"));
        }
        Ok(v)
    }
}

fn read_rng(cur: &mut Cursor) -> Result<ChaCha8Rng, CheckpointError> {
    let seed: [u8; 32] = cur.take(32)?.try_into().unwrap();
    let stream = cur.u64()?;
    let word_pos = cur.u128()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(rng)
}

fn read_vec4(cur: &mut Cursor) -> Result<[f64; 4], CheckpointError> {
    Ok([cur.f64()?, cur.f64()?, cur.f64()?, cur.f64()?])
}

fn read_state(cur: &mut Cursor) -> Result<State, CheckpointError> {
    Ok(State::from_array(read_vec4(cur)?))
}

fn read_matrix4(cur: &mut Cursor) -> Result<Vec<Vec<f64>>, CheckpointError> {
    let mut m = Vec::with_capacity(4);
    for _ in 0..4 {
        let mut row = Vec::with_capacity(4);
        for _ in 0..4 {
            row.push(cur.f64()?);
        }
        m.push(row);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ModelParams;
    use crate::env::{Env, EnvConfig, RewardParams};
    use crate::lqr::{design_lqr, LqrWeights};
    use crate::sac::{train_from, update};

    fn identity4() -> Vec<Vec<f64>> {
        (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    fn populated_checkpoint() -> Checkpoint {
        let params = ModelParams::default_pendubot();
        let design = design_lqr(
            &params,
            &LqrWeights {
                q: [1.92, 1.92, 0.3, 0.3],
                r: 0.82,
            },
        )
        .unwrap();
        let roa = RoaEstimate {
            s: design.s.clone(),
            rho: 0.037,
            goal: design.goal,
        };

        let cfg = SacConfig {
            hidden: vec![6],
            batch_size: 8,
            buffer_capacity: 64,
            warmup_steps: 10,
            lr: 1e-3,
            loss_log_every: 2,
            seed: 5,
            ..SacConfig::default()
        };
        let mut env_cfg = EnvConfig::pendubot(RewardParams::pendubot(identity4(), 0.1));
        env_cfg.episode_len = 15;
        let mut env = Env::new(env_cfg, params, 9).unwrap();
        let mut agent =
            SacAgent::new(1, &cfg.hidden, &mut ChaCha8Rng::seed_from_u64(21));
        let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
        let mut cursor = TrainCursor::new(cfg.seed);
        let mut log = TrainingLog::default();
        train_from(
            &mut env,
            &mut agent,
            &mut buffer,
            &cfg,
            40,
            &mut cursor,
            &mut log,
        )
        .unwrap();
        update(&mut agent, &buffer, &cfg, &mut cursor.rng.clone()).unwrap();

        Checkpoint {
            agent: Some((agent, cfg)),
            design: Some(design),
            roa: Some(roa),
            train: Some(TrainBlock {
                cursor,
                env: env.snapshot(),
                buffer,
                log,
            }),
        }
    }

    #[test]
    fn full_round_trip_preserves_everything() {
        let ck = populated_checkpoint();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck, back);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = populated_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        ck.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        loaded.save(&path).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
        assert!(!dir.path().join("run.ckpt.tmp").exists());
    }

    #[test]
    fn empty_checkpoint_round_trips() {
        let ck = Checkpoint::default();
        let bytes = ck.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }

    #[test]
    fn partial_blocks_round_trip() {
        let full = populated_checkpoint();
        let ck = Checkpoint {
            agent: None,
            design: full.design.clone(),
            roa: full.roa.clone(),
            train: None,
        };
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let ck = populated_checkpoint();
        let bytes = ck.to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::BadMagic)
        ));

        let mut bad = bytes.clone();
        bad[8] = 99;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::BadVersion { got: 99 })
        ));

        for cut in [bytes.len() / 3, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn restored_rng_continues_identically() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..17 {
            let _: f64 = rng.random_range(-1.0..1.0);
        }
        let mut buf = Vec::new();
        put_rng(&mut buf, &rng);
        let mut cur = Cursor {
            bytes: &buf,
            at: 0,
        };
        let mut restored = read_rng(&mut cur).unwrap();
        for _ in 0..50 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = restored.random_range(-1.0..1.0);
            assert_eq!(a, b);
        }
    }
}

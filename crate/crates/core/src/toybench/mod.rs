//! Small planar-symmetric benchmarks, scripted experts and rollout evaluation.

mod oracle;
pub mod pose10d;
pub mod reach2d;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::group::{Block, GroupSpec, RepSpec};
use crate::math;

pub use oracle::GaussianFlowOracle;
pub use pose10d::Pose10d;
pub use reach2d::Reach2d;

/// Deterministic RNG for `(seed, stream)`; distinct streams are independent.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Reach2d,
    Pose10d,
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Reach2d => "reach2d",
            EnvKind::Pose10d => "pose10d",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "reach2d" => Ok(EnvKind::Reach2d),
            "pose10d" => Ok(EnvKind::Pose10d),
            other => Err(Error::Config(format!(
                "unknown environment `{other}` (expected reach2d or pose10d)"
            ))),
        }
    }
}

/// Dimensions and representations of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_rep: RepSpec,
    /// Per-step observation: the full state followed by the episode phase.
    pub obs_rep: RepSpec,
    pub action_rep: RepSpec,
    pub horizon: usize,
    /// Demonstration actions are divided by this before training.
    pub action_scale: f64,
}

impl EnvSpec {
    pub fn state_dim(&self) -> usize {
        self.state_rep.total_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_rep.total_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_rep.total_dim()
    }

    /// Representation of a stacked history of `m` observations.
    pub fn history_rep(&self, m: usize) -> RepSpec {
        self.obs_rep.repeat(m)
    }

    /// Representation of a chunk of `n` actions.
    pub fn chunk_rep(&self, n: usize) -> RepSpec {
        self.action_rep.repeat(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Reach2d(Reach2d),
    Pose10d(Pose10d),
}

impl Env {
    pub fn new(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Reach2d => Env::Reach2d(Reach2d::default()),
            EnvKind::Pose10d => Env::Pose10d(Pose10d::default()),
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            Env::Reach2d(_) => EnvKind::Reach2d,
            Env::Pose10d(_) => EnvKind::Pose10d,
        }
    }

    pub fn spec(&self, group: GroupSpec) -> EnvSpec {
        use Block::*;
        match self {
            Env::Reach2d(e) => {
                let state_rep = RepSpec::standard(group, 2);
                EnvSpec {
                    kind: EnvKind::Reach2d,
                    obs_rep: state_rep.concat(&RepSpec::trivial(group, 1)).unwrap(),
                    state_rep,
                    action_rep: RepSpec::standard(group, 1),
                    horizon: e.horizon,
                    action_scale: e.max_speed,
                }
            }
            Env::Pose10d(e) => {
                let pose = [Standard, Trivial, Standard, Standard, Standard];
                let mut blocks = pose.to_vec();
                blocks.push(Trivial);
                blocks.extend_from_slice(&pose);
                let state_rep = RepSpec::new(group, blocks);
                EnvSpec {
                    kind: EnvKind::Pose10d,
                    obs_rep: state_rep.concat(&RepSpec::trivial(group, 1)).unwrap(),
                    state_rep,
                    action_rep: RepSpec::pose_action(group),
                    horizon: e.horizon,
                    action_scale: 1.0,
                }
            }
        }
    }

    fn state_dim(&self) -> usize {
        match self {
            Env::Reach2d(_) => reach2d::STATE_DIM,
            Env::Pose10d(_) => pose10d::STATE_DIM,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            Env::Reach2d(_) => 2,
            Env::Pose10d(_) => 10,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Env::Reach2d(e) => e.horizon,
            Env::Pose10d(e) => e.horizon,
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Env::Reach2d(e) => e.reset(rng),
            Env::Pose10d(e) => e.reset(rng),
        }
    }

    pub fn step(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        match self {
            Env::Reach2d(e) => e.step(s, a),
            Env::Pose10d(e) => e.step(s, a),
        }
    }

    pub fn is_success(&self, s: &[f64]) -> bool {
        match self {
            Env::Reach2d(e) => e.is_success(s),
            Env::Pose10d(e) => e.is_success(s),
        }
    }

    /// Observation at step `k`: state followed by `k / horizon`.
    pub fn observe(&self, s: &[f64], k: usize) -> Vec<f64> {
        let mut o = s.to_vec();
        o.push(k as f64 / self.horizon() as f64);
        o
    }

    /// Recover the state from the newest entry of a stacked observation history.
    pub fn state_from_history(&self, history: &[f64]) -> Result<Vec<f64>> {
        let od = self.state_dim() + 1;
        if history.len() < od || history.len() % od != 0 {
            return Err(Error::Shape {
                what: "observation history",
                expected: od,
                got: history.len(),
            });
        }
        let last = &history[history.len() - od..];
        Ok(last[..od - 1].to_vec())
    }

    /// Draw the latent mode of one demonstration.
    pub fn expert_mode<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn expert_action(&self, s: &[f64], mode: f64) -> Vec<f64> {
        match self {
            Env::Reach2d(e) => e.expert_action(s, mode),
            Env::Pose10d(e) => e.expert_action(s),
        }
    }
}

/// Stacks the last `m` observations, repeating the first one until enough exist.
#[derive(Debug, Clone)]
pub struct ObsHistory {
    m: usize,
    buf: Vec<Vec<f64>>,
}

impl ObsHistory {
    pub fn new(m: usize) -> Self {
        Self { m: m.max(1), buf: Vec::new() }
    }

    pub fn push(&mut self, o: Vec<f64>) {
        if self.buf.is_empty() {
            for _ in 1..self.m {
                self.buf.push(o.clone());
            }
        }
        self.buf.push(o);
        if self.buf.len() > self.m {
            self.buf.remove(0);
        }
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.buf.concat()
    }
}

/// A closed-loop controller that emits action chunks in environment units.
pub trait Policy {
    /// Prepare for a new episode; `seed` fixes any internal randomness.
    fn reset(&mut self, seed: u64);
    /// Action chunk for the stacked observation history, `k · action_dim` values.
    fn act_chunk(&mut self, history: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub success: bool,
    pub steps: usize,
    /// Executed actions, flattened.
    pub actions: Vec<f64>,
    /// Set when the policy failed (for example a non-finite chunk).
    pub failure: Option<String>,
}

/// Closed-loop rollout executing the first `n1` actions of every chunk.
pub fn run_episode<P: Policy + ?Sized>(
    env: &Env,
    policy: &mut P,
    n1: usize,
    history_len: usize,
    seed: u64,
) -> Result<EpisodeRecord> {
    if n1 == 0 {
        return Err(Error::Config("execution horizon n1 must be positive".into()));
    }
    let mut rng = seeded_rng(seed, 0);
    policy.reset(seed);
    let mut s = env.reset(&mut rng);
    let mut hist = ObsHistory::new(history_len);
    let mut actions = Vec::new();
    let adim = env.action_dim();
    let mut k = 0;
    hist.push(env.observe(&s, 0));
    while k < env.horizon() {
        let chunk = match policy.act_chunk(&hist.stacked()) {
            Ok(c) => c,
            Err(e) => {
                return Ok(EpisodeRecord {
                    success: false,
                    steps: k,
                    actions,
                    failure: Some(format!("{e}")),
                })
            }
        };
        if chunk.len() < adim || chunk.len() % adim != 0 {
            check_len("action chunk", adim, chunk.len())?;
        }
        if chunk.iter().any(|v| !v.is_finite()) {
            return Ok(EpisodeRecord {
                success: false,
                steps: k,
                actions,
                failure: Some(format!("policy emitted a non-finite action at step {k}")),
            });
        }
        for a in chunk.chunks(adim).take(n1) {
            s = env.step(&s, a);
            actions.extend_from_slice(a);
            k += 1;
            if env.is_success(&s) {
                return Ok(EpisodeRecord { success: true, steps: k, actions, failure: None });
            }
            if k >= env.horizon() {
                break;
            }
            hist.push(env.observe(&s, k));
        }
    }
    Ok(EpisodeRecord { success: false, steps: k, actions, failure: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessStats {
    pub rate: f64,
    /// Binomial standard error `sqrt(p(1-p)/N)`.
    pub stderr: f64,
    pub episodes: usize,
}

impl SuccessStats {
    pub fn from_counts(successes: usize, episodes: usize) -> Self {
        let p = if episodes == 0 { 0.0 } else { successes as f64 / episodes as f64 };
        let stderr = if episodes == 0 {
            0.0
        } else {
            math::sqrt(p * (1.0 - p) / episodes as f64)
        };
        Self { rate: p, stderr, episodes }
    }
}

/// Episode `i` uses seed `seed + i`.
pub fn success_rate<P: Policy + ?Sized>(
    env: &Env,
    policy: &mut P,
    n1: usize,
    history_len: usize,
    episodes: usize,
    seed: u64,
) -> Result<SuccessStats> {
    let mut wins = 0;
    for i in 0..episodes {
        if run_episode(env, policy, n1, history_len, seed.wrapping_add(i as u64))?.success {
            wins += 1;
        }
    }
    Ok(SuccessStats::from_counts(wins, episodes))
}

/// The scripted demonstrator, replanning a chunk of `n` actions from the observed state.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    env: Env,
    n: usize,
    mode: f64,
}

impl ExpertPolicy {
    pub fn new(env: Env, n: usize) -> Self {
        Self { env, n: n.max(1), mode: 1.0 }
    }

    /// Chunk of `n` expert actions starting at state `s`, simulated open loop.
    pub fn plan(&self, s: &[f64]) -> Vec<f64> {
        let mut s = s.to_vec();
        let mut out = Vec::new();
        for _ in 0..self.n {
            let a = self.env.expert_action(&s, self.mode);
            s = self.env.step(&s, &a);
            out.extend_from_slice(&a);
        }
        out
    }
}

impl Policy for ExpertPolicy {
    fn reset(&mut self, seed: u64) {
        self.mode = self.env.expert_mode(&mut seeded_rng(seed, 1));
    }

    fn act_chunk(&mut self, history: &[f64]) -> Result<Vec<f64>> {
        let s = self.env.state_from_history(history)?;
        Ok(self.plan(&s))
    }
}

/// Expert demonstrations as (observation history, normalized action chunk) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub obs_dim: usize,
    pub chunk_dim: usize,
    pub obs: Vec<Vec<f64>>,
    pub chunks: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(obs_dim: usize, chunk_dim: usize) -> Self {
        Self { obs_dim, chunk_dim, obs: Vec::new(), chunks: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn push(&mut self, o: Vec<f64>, chunk: Vec<f64>) -> Result<()> {
        check_len("dataset observation", self.obs_dim, o.len())?;
        check_len("dataset action chunk", self.chunk_dim, chunk.len())?;
        self.obs.push(o);
        self.chunks.push(chunk);
        Ok(())
    }

    /// Keep only the first `count` pairs.
    pub fn truncate(&mut self, count: usize) {
        self.obs.truncate(count);
        self.chunks.truncate(count);
    }
}

/// Record `demos` expert episodes. Executed actions carry Gaussian noise of standard
/// deviation `noise · action_scale` so the data covers off-trajectory states; every
/// visited step is labelled with the expert's clean `n`-step plan from that state,
/// divided by the action scale.
#[allow(clippy::too_many_arguments)]
pub fn make_demo_dataset(
    env: &Env,
    group: GroupSpec,
    demos: usize,
    n: usize,
    history_len: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("chunk length n must be positive".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config("demo noise must be finite and ≥ 0".into()));
    }
    let spec = env.spec(group);
    let mut data = Dataset::new(spec.obs_dim() * history_len.max(1), spec.action_dim() * n);
    for d in 0..demos {
        let mut rng = seeded_rng(seed, 1000 + d as u64);
        let mut expert = ExpertPolicy::new(env.clone(), n);
        expert.mode = env.expert_mode(&mut rng);
        let mut s = env.reset(&mut rng);
        let mut hist = ObsHistory::new(history_len);
        for k in 0..env.horizon() {
            hist.push(env.observe(&s, k));
            let plan = expert.plan(&s);
            let mut a = plan[..spec.action_dim()].to_vec();
            data.push(hist.stacked(), plan.iter().map(|v| v / spec.action_scale).collect())?;
            for v in a.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += noise * spec.action_scale * z;
            }
            s = env.step(&s, &a);
            if env.is_success(&s) {
                break;
            }
        }
    }
    Ok(data)
}

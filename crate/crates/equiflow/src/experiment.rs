//! Dataset generation, training and evaluation shared by the CLI and the test suites.

use std::time::Instant;

use equiflow_core::nn::{Model, VelocityField};
use equiflow_core::sampler::{smoothness_metric, FlowPolicy};
use equiflow_core::toybench::{make_demo_dataset, run_episode, seeded_rng, Dataset, SuccessStats};
use equiflow_core::train::{EpochStats, Trainer};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

/// Offset separating evaluation episode seeds from demonstration seeds.
pub const EVAL_SEED_OFFSET: u64 = 1 << 32;

pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Ok(make_demo_dataset(&cfg.env(), cfg.group(), cfg.demos, cfg.n, cfg.history, cfg.demo_noise, cfg.seed)?)
}

pub fn init_model(cfg: &RunConfig) -> Result<Model, CliError> {
    Ok(Model::new(cfg.topology(), &mut seeded_rng(cfg.seed, 4))?)
}

/// One row of the per-epoch metrics file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub cfm: f64,
    pub fabo: f64,
    pub total: f64,
    pub eval_success: Option<f64>,
    pub smoothness: Option<f64>,
}

/// Train from scratch; `on_epoch` sees every row as it is produced.
pub fn train(
    cfg: &RunConfig,
    data: &Dataset,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<(Model, Vec<EpochRow>), CliError> {
    let mut model = init_model(cfg)?;
    let mut trainer = Trainer::new(cfg.train_config(), equiflow_core::nn::Network::num_params(&model))?;
    let mut rows = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let s: EpochStats = trainer.run_epoch(&mut model, data)?;
        let mut row = EpochRow {
            epoch: e + 1,
            cfm: s.cfm,
            fabo: s.fabo,
            total: s.total,
            eval_success: None,
            smoothness: None,
        };
        if cfg.eval_episodes > 0 && ((e + 1) % cfg.eval_every == 0 || e + 1 == cfg.epochs) {
            let ev = evaluate(&model, cfg, cfg.nfe, cfg.eval_episodes, cfg.seed)?;
            row.eval_success = Some(ev.success_rate);
            row.smoothness = Some(ev.smoothness_mean);
        }
        on_epoch(&row);
        rows.push(row);
    }
    Ok((model, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub env: String,
    pub nfe: usize,
    pub episodes: usize,
    pub seed: u64,
    pub success_rate: f64,
    pub success_stderr: f64,
    pub smoothness_mean: f64,
    pub smoothness_std: f64,
    /// Wall-clock, excluded from the deterministic metrics file.
    #[serde(skip)]
    pub mean_predict_ms: f64,
}

/// Closed-loop success over `episodes` seeded episodes plus the smoothness metric.
pub fn evaluate(
    model: &Model,
    cfg: &RunConfig,
    nfe: usize,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary, CliError> {
    let env = cfg.env();
    let spec = env.spec(cfg.group());
    let sampler = equiflow_core::sampler::SamplerConfig { nfe, seed, ..cfg.sampler_config() };
    let mut policy = FlowPolicy::new(model.clone(), sampler, spec.action_scale);
    let mut wins = 0;
    let mut calls = 0usize;
    let started = Instant::now();
    for i in 0..episodes {
        let rec = run_episode(&env, &mut policy, cfg.n1, cfg.history, EVAL_SEED_OFFSET + seed + i as u64)?;
        calls += policy.selections().len();
        if rec.success {
            wins += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64() * 1e3;
    let (sm, ss) = policy_smoothness(model, cfg, seed, 16)?;
    let success = SuccessStats::from_counts(wins, episodes);
    Ok(EvalSummary {
        env: cfg.env.clone(),
        nfe,
        episodes,
        seed,
        success_rate: success.rate,
        success_stderr: success.stderr,
        smoothness_mean: sm,
        smoothness_std: ss,
        mean_predict_ms: if calls > 0 { elapsed / calls as f64 } else { 0.0 },
    })
}

/// Smoothness averaged over `count` start observations with one prior draw each;
/// the std pools every consecutive velocity change.
pub fn policy_smoothness(
    model: &Model,
    cfg: &RunConfig,
    seed: u64,
    count: usize,
) -> Result<(f64, f64), CliError> {
    let env = cfg.env();
    let mut rng = seeded_rng(seed, 5);
    let (mut m1, mut m2) = (0.0, 0.0);
    for _ in 0..count {
        let s = env.reset(&mut rng);
        let o = env.observe(&s, 0).repeat(cfg.history);
        let x0: Vec<f64> = (0..model.action_dim()).map(|_| rng.sample(StandardNormal)).collect();
        let (mean, std) = smoothness_metric(model, &o, &x0, cfg.smoothness_timesteps)?;
        m1 += mean;
        m2 += std * std + mean * mean;
    }
    let c = count.max(1) as f64;
    let mean = m1 / c;
    Ok((mean, (m2 / c - mean * mean).max(0.0).sqrt()))
}

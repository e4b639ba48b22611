//! Conditional flow matching with the acceleration (FABO) penalty.

mod optim;
mod schedule;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::Network;
use crate::toybench::{seeded_rng, Dataset};

pub use optim::AdamW;
pub use schedule::LambdaSchedule;

/// Point at time `t` on the straight path from `x0` to `x1`.
pub fn conditional_path(x0: &[f64], x1: &[f64], t: f64) -> Vec<f64> {
    x0.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b).collect()
}

/// Constant velocity `x1 - x0` of the straight path.
pub fn conditional_velocity(x0: &[f64], x1: &[f64]) -> Vec<f64> {
    x0.iter().zip(x1).map(|(a, b)| b - a).collect()
}

/// One minibatch of (prior draw, target chunk, observation, time) tuples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowBatch {
    pub x0: Vec<Vec<f64>>,
    pub x1: Vec<Vec<f64>>,
    pub obs: Vec<Vec<f64>>,
    pub t: Vec<f64>,
}

impl FlowBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn validate<N: Network + ?Sized>(&self, net: &N) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_len("batch prior draws", self.len(), self.x0.len())?;
        check_len("batch targets", self.len(), self.x1.len())?;
        check_len("batch observations", self.len(), self.obs.len())?;
        for i in 0..self.len() {
            check_len("prior draw", net.action_dim(), self.x0[i].len())?;
            check_len("target chunk", net.action_dim(), self.x1[i].len())?;
        }
        Ok(())
    }

    /// Batch for dataset rows `idx`, with fresh prior draws and times `t ~ U(0, t_max)`.
    pub fn sample<R: Rng + ?Sized>(data: &Dataset, idx: &[usize], t_max: f64, rng: &mut R) -> Self {
        let mut b = FlowBatch { x0: vec![], x1: vec![], obs: vec![], t: vec![] };
        for &i in idx {
            b.x0.push((0..data.chunk_dim).map(|_| rng.sample(StandardNormal)).collect());
            b.x1.push(data.chunks[i].clone());
            b.obs.push(data.obs[i].clone());
            b.t.push(rng.random::<f64>() * t_max);
        }
        b
    }
}

/// Batch-mean loss terms. `total = cfm + fabo_weighted`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub cfm: f64,
    /// Mean raw `‖u(t, x_t) - u(t+Δt, x_{t+Δt})‖²`, before weighting.
    pub fabo: f64,
    /// Mean of `λ(t)·scale·‖…‖²`, as it enters the objective.
    pub fabo_weighted: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.cfm.is_finite() && self.fabo.is_finite() && self.total.is_finite()
    }
}

/// How the acceleration penalty enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaboSettings {
    pub lambda: LambdaSchedule,
    pub dt: f64,
    /// Divide the squared velocity difference by `Δt²` (a finite-difference acceleration).
    pub rescale: bool,
}

impl FaboSettings {
    pub fn off() -> Self {
        Self { lambda: LambdaSchedule::Zero, dt: 0.05, rescale: true }
    }

    pub fn active(&self) -> bool {
        !self.lambda.is_zero()
    }

    fn scale(&self) -> f64 {
        if self.rescale {
            1.0 / (self.dt * self.dt)
        } else {
            1.0
        }
    }

    /// Largest admissible sampling time.
    pub fn t_max(&self) -> f64 {
        if self.active() {
            1.0 - self.dt
        } else {
            1.0
        }
    }
}

fn later_time(t: f64, dt: f64) -> Result<f64> {
    let t2 = t + dt;
    if !(t >= 0.0) || t2 > 1.0 + 1e-12 {
        return Err(Error::Domain(format!("t + Δt = {t2} exceeds 1")));
    }
    Ok(t2.min(1.0))
}

/// Mean CFM loss; optionally accumulates its parameter gradient.
pub fn cfm_loss<N: Network + ?Sized>(
    net: &N,
    batch: &FlowBatch,
    grads: Option<&mut [f64]>,
) -> Result<f64> {
    let r = flow_loss(net, batch, &FaboSettings::off(), grads)?;
    Ok(r.cfm)
}

/// Mean unweighted `‖u(t, x̃_t) - u(t+Δt, x̃_{t+Δt})‖²` along the conditional paths.
pub fn fabo_loss<N: Network + ?Sized>(net: &N, batch: &FlowBatch, dt: f64) -> Result<f64> {
    batch.validate(net)?;
    let mut acc = 0.0;
    for i in 0..batch.len() {
        let t2 = later_time(batch.t[i], dt)?;
        let (x0, x1, o) = (&batch.x0[i], &batch.x1[i], &batch.obs[i]);
        let ua = net.velocity(batch.t[i], &conditional_path(x0, x1, batch.t[i]), o)?;
        let ub = net.velocity(t2, &conditional_path(x0, x1, t2), o)?;
        acc += ua.iter().zip(&ub).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(acc / batch.len() as f64)
}

/// Full objective and, if `grads` is given, its gradient (accumulated).
///
/// With a zero schedule the penalty is skipped entirely, so the result is bitwise
/// identical to [`cfm_loss`].
pub fn flow_loss<N: Network + ?Sized>(
    net: &N,
    batch: &FlowBatch,
    fabo: &FaboSettings,
    mut grads: Option<&mut [f64]>,
) -> Result<LossReport> {
    batch.validate(net)?;
    if let Some(g) = grads.as_deref() {
        check_len("gradient buffer", net.num_params(), g.len())?;
    }
    let bsz = batch.len() as f64;
    let scale = fabo.scale();
    let mut rep = LossReport::default();
    for i in 0..batch.len() {
        let (x0, x1, o, t) = (&batch.x0[i], &batch.x1[i], &batch.obs[i], batch.t[i]);
        let xt = conditional_path(x0, x1, t);
        let target = conditional_velocity(x0, x1);
        let (ua, tape_a) = net.forward_taped(t, &xt, o)?;
        let res: Vec<f64> = ua.iter().zip(&target).map(|(u, v)| u - v).collect();
        rep.cfm += res.iter().map(|r| r * r).sum::<f64>();
        let mut cot_a: Vec<f64> = res.iter().map(|r| 2.0 * r / bsz).collect();
        if fabo.active() {
            let t2 = later_time(t, fabo.dt)?;
            let (ub, tape_b) = net.forward_taped(t2, &conditional_path(x0, x1, t2), o)?;
            let diff: Vec<f64> = ua.iter().zip(&ub).map(|(a, b)| a - b).collect();
            let sq: f64 = diff.iter().map(|d| d * d).sum();
            let w = fabo.lambda.weight(t) * scale;
            rep.fabo += sq;
            rep.fabo_weighted += w * sq;
            if let Some(g) = grads.as_deref_mut() {
                let cot_b: Vec<f64> = diff.iter().map(|d| -2.0 * w * d / bsz).collect();
                net.backward_taped(&tape_b, &cot_b, g)?;
                for (c, d) in cot_a.iter_mut().zip(&diff) {
                    *c += 2.0 * w * d / bsz;
                }
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            net.backward_taped(&tape_a, &cot_a, g)?;
        }
    }
    rep.cfm /= bsz;
    rep.fabo /= bsz;
    rep.fabo_weighted /= bsz;
    rep.total = rep.cfm + rep.fabo_weighted;
    Ok(rep)
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub fabo: FaboSettings,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-6,
            batch_size: 64,
            epochs: 100,
            fabo: FaboSettings::off(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: &str| Err(Error::Config(format!("field `{f}`: {m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err("lr", "must be a positive number");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err("weight_decay", "must be ≥ 0");
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be positive");
        }
        if !(self.fabo.dt > 0.0 && self.fabo.dt < 1.0) {
            return err("dt", "must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    /// Means over the epoch's minibatches.
    pub cfm: f64,
    pub fabo: f64,
    pub total: f64,
}

/// Stateful optimizer loop over a fixed dataset.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    opt: AdamW,
    rng: ChaCha8Rng,
    epoch: usize,
    grads: Vec<f64>,
    last_batch: Option<FlowBatch>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, num_params: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            opt: AdamW::new(num_params, cfg.lr, cfg.weight_decay),
            rng: seeded_rng(cfg.seed, 2),
            epoch: 0,
            grads: vec![0.0; num_params],
            last_batch: None,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.opt.steps()
    }

    /// The most recent minibatch, kept for diagnostics after a failure.
    pub fn last_batch(&self) -> Option<&FlowBatch> {
        self.last_batch.as_ref()
    }

    /// One optimizer update on `batch`.
    pub fn step<N: Network + ?Sized>(&mut self, net: &mut N, batch: FlowBatch) -> Result<LossReport> {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
        let rep = flow_loss(&*net, &batch, &self.cfg.fabo, Some(&mut self.grads));
        self.last_batch = Some(batch);
        let rep = rep?;
        if !rep.is_finite() || self.grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { step: self.opt.steps() as usize });
        }
        self.opt.step(net.params_mut(), &self.grads)?;
        Ok(rep)
    }

    /// One pass over `data` in shuffled minibatches (the last may be smaller).
    pub fn run_epoch<N: Network + ?Sized>(&mut self, net: &mut N, data: &Dataset) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_len("dataset observation width", net.obs_dim(), data.obs_dim)?;
        check_len("dataset chunk width", net.action_dim(), data.chunk_dim)?;
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut self.rng);
        let mut stats = EpochStats { epoch: self.epoch, ..Default::default() };
        for chunk in idx.chunks(self.cfg.batch_size) {
            let batch = FlowBatch::sample(data, chunk, self.cfg.fabo.t_max(), &mut self.rng);
            let rep = self.step(net, batch)?;
            stats.steps += 1;
            stats.cfm += rep.cfm;
            stats.fabo += rep.fabo;
            stats.total += rep.total;
        }
        let k = stats.steps as f64;
        stats.cfm /= k;
        stats.fabo /= k;
        stats.total /= k;
        self.epoch += 1;
        Ok(stats)
    }

    /// Run `cfg.epochs` epochs.
    pub fn fit<N: Network + ?Sized>(&mut self, net: &mut N, data: &Dataset) -> Result<Vec<EpochStats>> {
        (0..self.cfg.epochs).map(|_| self.run_epoch(net, data)).collect()
    }
}

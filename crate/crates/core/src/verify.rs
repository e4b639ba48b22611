//! Numerical checks of the equivariance and acceleration-bound guarantees.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{GroupElement, RepSpec};
use crate::math;
use crate::nn::{Model, VelocityField};
use crate::sampler::{integrate, mean_std};
use crate::toybench::GaussianFlowOracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Too few samples to trust the verdict.
    Inconclusive,
}

/// Energy-distance two-sample test against a permutation null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleReport {
    pub statistic: f64,
    pub null_quantile_95: f64,
    pub pass: bool,
    pub n_a: usize,
    pub n_b: usize,
    pub permutations: usize,
}

/// Pooled points per block of the permutation test.
pub const BLOCK_CAP: usize = 1000;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// V-statistic energy distance `2E|X−Y| − E|X−X'| − E|Y−Y'|` (always ≥ 0).
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&[f64]> = a.iter().chain(b).map(|v| v.as_slice()).collect();
    let d = distance_matrix(&pooled);
    let labels: Vec<bool> = (0..pooled.len()).map(|i| i < a.len()).collect();
    labelled_energy(&d, pooled.len(), &labels, a.len(), b.len())
}

fn distance_matrix(pts: &[&[f64]]) -> Vec<f64> {
    let n = pts.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dist(pts[i], pts[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// `labels[i]` is true for members of the first sample.
fn labelled_energy(d: &[f64], n: usize, labels: &[bool], na: usize, nb: usize) -> f64 {
    let (mut saa, mut sab, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let row = &d[i * n..(i + 1) * n];
        let (mut ra, mut rb) = (0.0, 0.0);
        for (j, v) in row.iter().enumerate() {
            if labels[j] {
                ra += v;
            } else {
                rb += v;
            }
        }
        if labels[i] {
            saa += ra;
            sab += rb;
        } else {
            sbb += rb;
        }
    }
    let (na, nb) = (na as f64, nb as f64);
    (2.0 * sab / (na * nb) - saa / (na * na) - sbb / (nb * nb)).max(0.0)
}

fn split(len: usize, parts: usize) -> Vec<core::ops::Range<usize>> {
    (0..parts)
        .map(|k| (k * len / parts)..((k + 1) * len / parts))
        .collect()
}

/// Permutation test at the 95% level.
///
/// Samples larger than [`BLOCK_CAP`] pooled points are split into aligned blocks;
/// the statistic is the mean of per-block energy distances and labels are
/// permuted within each block, which keeps memory and time linear in the sample size.
pub fn permutation_test<R: Rng + ?Sized>(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    permutations: usize,
    rng: &mut R,
) -> Result<TwoSampleReport> {
    permutation_test_blocked(a, b, permutations, BLOCK_CAP, rng)
}

/// [`permutation_test`] with an explicit block size; cost is `O(n · block_cap · permutations)`.
pub fn permutation_test_blocked<R: Rng + ?Sized>(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    permutations: usize,
    block_cap: usize,
    rng: &mut R,
) -> Result<TwoSampleReport> {
    if a.is_empty() || b.is_empty() || permutations == 0 || block_cap < 2 {
        return Err(Error::Config("two-sample test needs data and permutations".into()));
    }
    let parts = (a.len() + b.len()).div_ceil(block_cap).min(a.len()).min(b.len()).max(1);
    let blocks: Vec<_> = split(a.len(), parts).into_iter().zip(split(b.len(), parts)).collect();
    let mut statistic = 0.0;
    let mut null = vec![0.0; permutations];
    for (ra, rb) in blocks {
        let (na, nb) = (ra.len(), rb.len());
        let pts: Vec<&[f64]> = a[ra].iter().chain(&b[rb]).map(|v| v.as_slice()).collect();
        let n = pts.len();
        let d = distance_matrix(&pts);
        let mut labels: Vec<bool> = (0..n).map(|i| i < na).collect();
        statistic += labelled_energy(&d, n, &labels, na, nb);
        for slot in null.iter_mut() {
            labels.shuffle(rng);
            *slot += labelled_energy(&d, n, &labels, na, nb);
        }
    }
    let k = parts as f64;
    statistic /= k;
    null.iter_mut().for_each(|v| *v /= k);
    null.sort_by(f64::total_cmp);
    let q = null[(permutations * 95).div_ceil(100).max(1) - 1];
    Ok(TwoSampleReport {
        statistic,
        null_quantile_95: q,
        pass: statistic <= q,
        n_a: a.len(),
        n_b: b.len(),
        permutations,
    })
}

fn randn<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Compares `{g·Φ(x0 | o)}` with `{Φ(x0' | g·o)}` under independent prior draws.
#[allow(clippy::too_many_arguments)]
pub fn check_distributional_equivariance<F: VelocityField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    obs_rep: &RepSpec,
    action_rep: &RepSpec,
    o: &[f64],
    g: &GroupElement,
    n_samples: usize,
    nfe: usize,
    permutations: usize,
    rng: &mut R,
) -> Result<TwoSampleReport> {
    let dim = field.action_dim();
    let go = obs_rep.act(g, o)?;
    let mut a = Vec::with_capacity(n_samples);
    let mut b = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x = integrate(field, o, &randn(rng, dim), nfe)?;
        a.push(action_rep.act(g, &x)?);
        b.push(integrate(field, &go, &randn(rng, dim), nfe)?);
    }
    permutation_test(&a, &b, permutations, rng)
}

/// Prior draws are compared with their images under every non-identity element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropyReport {
    /// `(element index, report)` per non-identity element.
    pub per_element: Vec<(u32, TwoSampleReport)>,
    pub pass: bool,
    pub status: CheckStatus,
}

/// Pooled block size used by [`check_isotropy`].
pub const ISOTROPY_BLOCK: usize = 250;

/// `n` draws per side for each non-identity `g`; at least 10⁴ are needed for a verdict.
pub fn check_isotropy<R: Rng + ?Sized>(
    mut prior: impl FnMut(&mut R) -> Vec<f64>,
    rep: &RepSpec,
    n: usize,
    permutations: usize,
    rng: &mut R,
) -> Result<IsotropyReport> {
    let mut per_element = Vec::new();
    for g in rep.group().elements().filter(|g| !g.is_identity()) {
        let a: Vec<Vec<f64>> = (0..n).map(|_| prior(rng)).collect();
        let b: Vec<Vec<f64>> = (0..n)
            .map(|_| rep.act(&g, &prior(rng)))
            .collect::<Result<_>>()?;
        per_element.push((
            g.index(),
            permutation_test_blocked(&a, &b, permutations, ISOTROPY_BLOCK, rng)?,
        ));
    }
    let pass = per_element.iter().all(|(_, r)| r.pass);
    let status = if n < 10_000 {
        CheckStatus::Inconclusive
    } else if pass {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    Ok(IsotropyReport { per_element, pass, status })
}

/// `max ‖u(t, g·x | g·o) − g·u(t, x | o)‖_∞` over all `g` and `inputs` random draws.
pub fn check_layer_equivariance<R: Rng + ?Sized>(
    model: &Model,
    inputs: usize,
    rng: &mut R,
) -> Result<f64> {
    let (obs_rep, act_rep) = model
        .reps()
        .ok_or(Error::Type("layer equivariance needs an equivariant model"))?;
    let mut worst: f64 = 0.0;
    for _ in 0..inputs {
        let t: f64 = rng.random();
        let x = randn(rng, act_rep.total_dim());
        let o = randn(rng, obs_rep.total_dim());
        let u = model.velocity(t, &x, &o)?;
        for g in obs_rep.group().elements() {
            let lhs = model.velocity(t, &act_rep.act(&g, &x)?, &obs_rep.act(&g, &o)?)?;
            let rhs = act_rep.act(&g, &u)?;
            for (p, q) in lhs.iter().zip(&rhs) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    Ok(worst)
}

/// Monte Carlo comparison of marginal and conditional velocity differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaboReport {
    pub t: f64,
    pub dt: f64,
    pub samples: usize,
    /// `E‖u(t, x_t) − u(t+Δt, x_{t+Δt})‖²` along the oracle's own (Euler) trajectories.
    pub lhs: f64,
    pub lhs_stderr: f64,
    /// The same quantity along the conditional straight paths.
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub gap: f64,
    /// Paired standard error of `rhs − lhs`.
    pub gap_stderr: f64,
    /// `Δt² Σ_i A_ii(t+Δt)² Var[v_i | x_t]`, exact for the Euler step.
    pub predicted_gap: f64,
    /// `Δt² Σ_i A_ii(t)² Var[v_i | x_t]`, the leading-order form.
    pub predicted_gap_leading: f64,
    pub status: CheckStatus,
}

/// Minimum sample count for a conclusive FABO verdict.
pub const FABO_MIN_SAMPLES: usize = 100_000;

fn stderr(v: &[f64]) -> (f64, f64) {
    let (m, s) = mean_std(v);
    let n = v.len() as f64;
    (m, if n > 1.0 { s * math::sqrt(n / (n - 1.0)) / math::sqrt(n) } else { 0.0 })
}

fn fabo_samples<R: Rng + ?Sized>(
    oracle: &GaussianFlowOracle,
    dt: f64,
    t: f64,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(t >= 0.0 && dt > 0.0 && t + dt <= 1.0 + 1e-12) {
        return Err(Error::Domain(format!("need 0 ≤ t and t + Δt ≤ 1, got t={t}, Δt={dt}")));
    }
    let t2 = (t + dt).min(1.0);
    let (mut lhs, mut rhs) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let x0 = oracle.sample_prior(rng);
        let x1 = oracle.sample_target(rng);
        let xt: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let xc: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| (1.0 - t2) * a + t2 * b).collect();
        let ua = oracle.field(t, &xt);
        let xm: Vec<f64> = xt.iter().zip(&ua).map(|(x, u)| x + dt * u).collect();
        let um = oracle.field(t2, &xm);
        let uc = oracle.field(t2, &xc);
        let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        lhs.push(sq(&ua, &um));
        rhs.push(sq(&ua, &uc));
    }
    Ok((lhs, rhs))
}

/// Marginal states share `x_t` with the conditional pair and take one Euler step of the
/// exact field, so both sides see the same state at time `t`.
pub fn check_fabo_bound<R: Rng + ?Sized>(
    oracle: &GaussianFlowOracle,
    dt: f64,
    t: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<FaboReport> {
    let (l, r) = fabo_samples(oracle, dt, t, n_samples, rng)?;
    let gaps: Vec<f64> = r.iter().zip(&l).map(|(a, b)| a - b).collect();
    let (lhs, lhs_se) = stderr(&l);
    let (rhs, rhs_se) = stderr(&r);
    let (gap, gap_se) = stderr(&gaps);
    let cv = oracle.conditional_var(t);
    let pred = |a: Vec<f64>| dt * dt * a.iter().zip(&cv).map(|(a, c)| a * a * c).sum::<f64>();
    let holds = lhs <= rhs + 3.0 * gap_se + 1e-12 * (1.0 + rhs.abs());
    let status = if n_samples < FABO_MIN_SAMPLES {
        CheckStatus::Inconclusive
    } else if holds {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    Ok(FaboReport {
        t,
        dt,
        samples: n_samples,
        lhs,
        lhs_stderr: lhs_se,
        rhs,
        rhs_stderr: rhs_se,
        gap,
        gap_stderr: gap_se,
        predicted_gap: pred(oracle.jacobian_diag((t + dt).min(1.0))),
        predicted_gap_leading: pred(oracle.jacobian_diag(t)),
        status,
    })
}

/// `gap/Δt²` against the eigenvalue bounds `μ1‖A‖_F² ≤ · ≤ μ2‖A‖_F²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub t: f64,
    pub dt: f64,
    pub samples: usize,
    pub scaled_gap: f64,
    pub scaled_gap_stderr: f64,
    /// Extreme eigenvalues of `Var[x1 − x0 | x_t]`.
    pub mu1: f64,
    pub mu2: f64,
    /// `‖∂u/∂x‖_F²` at `t + Δt`.
    pub jacobian_frob_sq: f64,
    pub lower: f64,
    pub upper: f64,
    /// `tr(Aᵀ A Var)`, the exact value the estimate should match.
    pub trace_value: f64,
    /// Bounds with the Jacobian taken at `t`, correct to leading order in `Δt`.
    pub lower_leading: f64,
    pub upper_leading: f64,
    pub status: CheckStatus,
}

pub fn check_error_sandwich<R: Rng + ?Sized>(
    oracle: &GaussianFlowOracle,
    dt: f64,
    t: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<SandwichReport> {
    let (l, r) = fabo_samples(oracle, dt, t, n_samples, rng)?;
    let scaled: Vec<f64> = r.iter().zip(&l).map(|(a, b)| (a - b) / (dt * dt)).collect();
    let (m, se) = stderr(&scaled);
    let cv = oracle.conditional_var(t);
    let mu1 = cv.iter().copied().fold(f64::INFINITY, f64::min);
    let mu2 = cv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a = oracle.jacobian_diag((t + dt).min(1.0));
    let a0 = oracle.jacobian_diag(t);
    let frob: f64 = a.iter().map(|v| v * v).sum();
    let frob0: f64 = a0.iter().map(|v| v * v).sum();
    let trace_value = a.iter().zip(&cv).map(|(a, c)| a * a * c).sum();
    let (lower, upper) = (mu1 * frob, mu2 * frob);
    let tol = 3.0 * se + 1e-9 * (1.0 + upper);
    let holds = m >= lower - tol && m <= upper + tol;
    let status = if n_samples < FABO_MIN_SAMPLES {
        CheckStatus::Inconclusive
    } else if holds {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    Ok(SandwichReport {
        t,
        dt,
        samples: n_samples,
        scaled_gap: m,
        scaled_gap_stderr: se,
        mu1,
        mu2,
        jacobian_frob_sq: frob,
        lower,
        upper,
        trace_value,
        lower_leading: mu1 * frob0,
        upper_leading: mu2 * frob0,
        status,
    })
}

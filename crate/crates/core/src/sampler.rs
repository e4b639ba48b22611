//! Euler integration of a learned field, candidate selection and receding-horizon
//! execution.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::group::{GroupElement, RepSpec};
use crate::math;
use crate::nn::VelocityField;
use crate::toybench::{seeded_rng, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub nfe: usize,
    pub m_candidates: usize,
    /// Chunk length in steps.
    pub n: usize,
    /// Steps executed from each chunk.
    pub n1: usize,
    pub reset_period: u64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { nfe: 5, m_candidates: 5, n: 16, n1: 8, reset_period: 10, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: &str| Err(Error::Config(format!("field `{f}`: {m}")));
        if self.nfe == 0 {
            return err("nfe", "must be ≥ 1");
        }
        if self.m_candidates == 0 {
            return err("m_candidates", "must be ≥ 1");
        }
        if self.n == 0 {
            return err("n", "must be ≥ 1");
        }
        if self.n1 == 0 || self.n1 > self.n {
            return err("n1", "must satisfy 1 ≤ n1 ≤ n");
        }
        if self.reset_period == 0 {
            return err("reset_period", "must be ≥ 1");
        }
        Ok(())
    }
}

/// Euler with uniform steps `1/nfe`, returning the state at `t = 1`.
pub fn integrate<F: VelocityField + ?Sized>(
    field: &F,
    o: &[f64],
    x0: &[f64],
    nfe: usize,
) -> Result<Vec<f64>> {
    integrate_path(field, o, x0, nfe).map(|mut p| p.pop().unwrap())
}

/// All `nfe + 1` Euler states from `t = 0` to `t = 1`.
pub fn integrate_path<F: VelocityField + ?Sized>(
    field: &F,
    o: &[f64],
    x0: &[f64],
    nfe: usize,
) -> Result<Vec<Vec<f64>>> {
    if nfe == 0 {
        return Err(Error::Config("nfe must be ≥ 1".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration { step: 0 });
    }
    let h = 1.0 / nfe as f64;
    let mut x = x0.to_vec();
    let mut path = Vec::with_capacity(nfe + 1);
    path.push(x.clone());
    for k in 0..nfe {
        let u = field.velocity(k as f64 * h, &x, o)?;
        for (xi, ui) in x.iter_mut().zip(&u) {
            *xi += h * ui;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { step: k + 1 });
        }
        path.push(x.clone());
    }
    Ok(path)
}

/// `‖integrate(g·o, g·x0) − g·integrate(o, x0)‖_∞`.
pub fn equivariant_rollout_check<F: VelocityField + ?Sized>(
    field: &F,
    obs_rep: &RepSpec,
    action_rep: &RepSpec,
    o: &[f64],
    x0: &[f64],
    g: &GroupElement,
    nfe: usize,
) -> Result<f64> {
    let direct = integrate(field, &obs_rep.act(g, o)?, &action_rep.act(g, x0)?, nfe)?;
    let moved = action_rep.act(g, &integrate(field, o, x0, nfe)?)?;
    Ok(direct
        .iter()
        .zip(&moved)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// No previous chunk: uniform random choice.
    Initial,
    /// Closest overlap with the previous chunk.
    Overlap,
    /// Periodic uniform random choice.
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub mode: SelectionMode,
    /// Overlap distance of every candidate; empty without a previous chunk.
    pub distances: Vec<f64>,
}

/// Euclidean distance between `cand` steps `[0, n − n1)` and `prev` steps `[n1, n)`.
pub fn overlap_distance(cand: &[f64], prev: &[f64], step_dim: usize, n1: usize) -> f64 {
    let off = n1 * step_dim;
    let len = prev.len().saturating_sub(off);
    let d: f64 = cand[..len]
        .iter()
        .zip(&prev[off..])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    math::sqrt(d)
}

/// Choose among `candidates`. `reset` forces a uniform random choice.
pub fn select_candidate<R: Rng + ?Sized>(
    candidates: &[Vec<f64>],
    prev: Option<&[f64]>,
    step_dim: usize,
    n1: usize,
    reset: bool,
    rng: &mut R,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidates to select from".into()));
    }
    let distances: Vec<f64> = match prev {
        Some(p) => {
            for c in candidates {
                check_len("candidate chunk", p.len(), c.len())?;
            }
            candidates
                .iter()
                .map(|c| overlap_distance(c, p, step_dim, n1))
                .collect()
        }
        None => Vec::new(),
    };
    let random = |rng: &mut R| rng.random_range(0..candidates.len());
    Ok(match prev {
        None => Selection { index: random(rng), mode: SelectionMode::Initial, distances },
        Some(_) if reset => Selection { index: random(rng), mode: SelectionMode::Reset, distances },
        Some(_) => {
            let mut best = 0;
            for (i, d) in distances.iter().enumerate() {
                if *d < distances[best] {
                    best = i;
                }
            }
            Selection { index: best, mode: SelectionMode::Overlap, distances }
        }
    })
}

/// Per-stream sampling state: the last selected chunk, the cycle counter and RNG.
#[derive(Debug, Clone)]
pub struct RolloutState {
    prev_chunk: Option<Vec<f64>>,
    cycle_count: u64,
    rng: ChaCha8Rng,
}

impl RolloutState {
    pub fn new(seed: u64) -> Self {
        Self { prev_chunk: None, cycle_count: 0, rng: seeded_rng(seed, 3) }
    }

    pub fn prev_chunk(&self) -> Option<&[f64]> {
        self.prev_chunk.as_deref()
    }

    pub fn cycle_count(&self) -> u64 {
        self.cycle_count
    }
}

/// Sample `m` candidates, select one and remember it.
///
/// Cycle `c` (counted from 1) is a reset cycle when `c % reset_period == 0`, so
/// `C` cycles contain exactly `⌊C / reset_period⌋` reset selections. A reset
/// selection still becomes the new previous chunk.
pub fn predict<F: VelocityField + ?Sized>(
    field: &F,
    o: &[f64],
    state: &mut RolloutState,
    cfg: &SamplerConfig,
) -> Result<(Vec<f64>, Selection)> {
    cfg.validate()?;
    let dim = field.action_dim();
    if dim % cfg.n != 0 {
        return Err(Error::Config(format!(
            "action chunk of width {dim} is not divisible into n = {} steps",
            cfg.n
        )));
    }
    state.cycle_count += 1;
    let mut candidates = Vec::with_capacity(cfg.m_candidates);
    for _ in 0..cfg.m_candidates {
        let x0: Vec<f64> = (0..dim).map(|_| state.rng.sample(StandardNormal)).collect();
        candidates.push(integrate(field, o, &x0, cfg.nfe)?);
    }
    let reset = state.cycle_count % cfg.reset_period == 0;
    let sel = select_candidate(
        &candidates,
        state.prev_chunk.as_deref(),
        dim / cfg.n,
        cfg.n1,
        reset,
        &mut state.rng,
    )?;
    let chosen = candidates.swap_remove(sel.index);
    state.prev_chunk = Some(chosen.clone());
    Ok((chosen, sel))
}

/// Mean and standard deviation of `‖u(t_{k+1}, x_{k+1}) − u(t_k, x_k)‖` along one
/// Euler trajectory evaluated at `n_timesteps` uniform times in `[0, 1]`.
pub fn smoothness_metric<F: VelocityField + ?Sized>(
    field: &F,
    o: &[f64],
    x0: &[f64],
    n_timesteps: usize,
) -> Result<(f64, f64)> {
    if n_timesteps < 2 {
        return Err(Error::Config("smoothness needs at least two timesteps".into()));
    }
    let h = 1.0 / (n_timesteps - 1) as f64;
    let mut x = x0.to_vec();
    let mut prev: Option<Vec<f64>> = None;
    let mut changes = Vec::with_capacity(n_timesteps - 1);
    for k in 0..n_timesteps {
        let u = field.velocity((k as f64 * h).min(1.0), &x, o)?;
        if let Some(p) = &prev {
            let d: f64 = u.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
            changes.push(math::sqrt(d));
        }
        for (xi, ui) in x.iter_mut().zip(&u) {
            *xi += h * ui;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { step: k + 1 });
        }
        prev = Some(u);
    }
    Ok(mean_std(&changes))
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

/// Closed-loop policy around a velocity field over normalized action chunks.
#[derive(Debug, Clone)]
pub struct FlowPolicy<F> {
    pub field: F,
    pub cfg: SamplerConfig,
    /// Multiplies the sampled (normalized) chunk into environment units.
    pub action_scale: f64,
    state: RolloutState,
    selections: Vec<Selection>,
}

impl<F: VelocityField> FlowPolicy<F> {
    pub fn new(field: F, cfg: SamplerConfig, action_scale: f64) -> Self {
        let state = RolloutState::new(cfg.seed);
        Self { field, cfg, action_scale, state, selections: vec![] }
    }

    /// Selections made since the last reset.
    pub fn selections(&self) -> &[Selection] {
        &self.selections
    }
}

impl<F: VelocityField> Policy for FlowPolicy<F> {
    fn reset(&mut self, seed: u64) {
        self.state = RolloutState::new(self.cfg.seed ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        self.selections.clear();
    }

    fn act_chunk(&mut self, history: &[f64]) -> Result<Vec<f64>> {
        let (chunk, sel) = predict(&self.field, history, &mut self.state, &self.cfg)?;
        self.selections.push(sel);
        Ok(chunk.into_iter().map(|v| v * self.action_scale).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result;
    use crate::group::GroupSpec;
    use alloc::vec;
    use proptest::prelude::*;

    /// `u(t, x) = A x + c` with diagonal `A`.
    struct Affine {
        a: Vec<f64>,
        c: Vec<f64>,
    }

    impl VelocityField for Affine {
        fn obs_dim(&self) -> usize {
            0
        }
        fn action_dim(&self) -> usize {
            self.a.len()
        }
        fn velocity(&self, _t: f64, x: &[f64], _o: &[f64]) -> Result<Vec<f64>> {
            Ok(x.iter().zip(&self.a).zip(&self.c).map(|((x, a), c)| a * x + c).collect())
        }
    }

    fn constant(c: Vec<f64>) -> Affine {
        Affine { a: vec![0.0; c.len()], c }
    }

    #[test]
    fn trivial_fields() {
        let zero = constant(vec![0.0; 3]);
        let x0 = [0.3, -1.0, 2.0];
        for nfe in [1, 3, 5] {
            assert_eq!(integrate(&zero, &[], &x0, nfe).unwrap(), x0.to_vec());
            let c = constant(vec![1.5, 0.0, -2.0]);
            let x1 = integrate(&c, &[], &x0, nfe).unwrap();
            for i in 0..3 {
                assert!((x1[i] - (x0[i] + c.c[i])).abs() < 1e-12);
            }
        }
        let c = constant(vec![1.0, 2.0]);
        assert_eq!(smoothness_metric(&c, &[], &[0.0, 0.0], 50).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn linear_ode_oracle() {
        let f = Affine { a: vec![1.0], c: vec![0.0] };
        let x0 = 0.8;
        assert!((integrate(&f, &[], &[x0], 1).unwrap()[0] - 2.0 * x0).abs() < 1e-15);
        let x = integrate(&f, &[], &[x0], 100).unwrap()[0];
        let exact = core::f64::consts::E * x0;
        assert!((x - exact).abs() / exact < 0.02);
    }

    #[test]
    fn non_finite_state_reports_step() {
        let f = Affine { a: vec![1e308], c: vec![0.0] };
        assert_eq!(
            integrate(&f, &[], &[1e308], 3).unwrap_err(),
            Error::Integration { step: 1 }
        );
        assert!(integrate(&f, &[], &[f64::NAN], 3).is_err());
        assert!(integrate(&f, &[], &[0.0], 0).is_err());
    }

    #[test]
    fn single_candidate_is_always_selected() {
        let mut rng = seeded_rng(0, 0);
        let c = vec![vec![1.0, 2.0]];
        for prev in [None, Some(&[0.0, 0.0][..])] {
            for reset in [false, true] {
                let s = select_candidate(&c, prev, 1, 1, reset, &mut rng).unwrap();
                assert_eq!(s.index, 0);
            }
        }
    }

    #[test]
    fn crafted_overlap_match_wins() {
        // n = 4, n1 = 2, step_dim = 1: the candidate's first two steps meet prev[2..4].
        let prev = [0.0, 0.0, 5.0, 6.0];
        let cands = vec![
            vec![4.0, 6.0, 0.0, 0.0],
            vec![5.0, 7.0, 1.0, 1.0],
            vec![5.0, 6.0, 9.0, 9.0],
            vec![5.0, 6.0, 3.0, 3.0],
        ];
        let mut rng = seeded_rng(0, 0);
        let s = select_candidate(&cands, Some(&prev), 1, 2, false, &mut rng).unwrap();
        assert_eq!(s.index, 2);
        assert_eq!(s.mode, SelectionMode::Overlap);
        assert_eq!(s.distances[2], 0.0);
    }

    #[test]
    fn reset_count_over_cycles() {
        let f = constant(vec![0.1; 4]);
        let cfg = SamplerConfig { nfe: 1, m_candidates: 3, n: 4, n1: 2, reset_period: 10, seed: 1 };
        let mut st = RolloutState::new(cfg.seed);
        let mut modes = vec![];
        for _ in 0..100 {
            modes.push(predict(&f, &[], &mut st, &cfg).unwrap().1.mode);
        }
        assert_eq!(st.cycle_count(), 100);
        assert_eq!(modes.iter().filter(|m| **m == SelectionMode::Reset).count(), 10);
        assert_eq!(modes[0], SelectionMode::Initial);
        assert_eq!(modes[9], SelectionMode::Reset);
    }

    #[test]
    fn predict_is_deterministic() {
        let f = Affine { a: vec![-0.5; 6], c: vec![0.2; 6] };
        let cfg = SamplerConfig { nfe: 3, m_candidates: 5, n: 3, n1: 1, reset_period: 4, seed: 9 };
        let run = || {
            let mut st = RolloutState::new(cfg.seed);
            (0..12).map(|_| predict(&f, &[], &mut st, &cfg).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn identity_rollout_check_is_zero() {
        let g = GroupSpec::new(8).unwrap();
        let rep = RepSpec::standard(g, 1);
        let f = Affine { a: vec![0.3, 0.3], c: vec![0.0, 0.0] };
        let d = equivariant_rollout_check(&f, &RepSpec::trivial(g, 0), &rep, &[], &[1.0, 2.0], &g.identity(), 5)
            .unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn config_invariants() {
        assert!(SamplerConfig::default().validate().is_ok());
        assert!(SamplerConfig { n1: 17, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { nfe: 0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { m_candidates: 0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn selection_is_argmin_with_lowest_index(
            vals in proptest::collection::vec(-2i32..3, 5 * 4),
            prev in proptest::collection::vec(-2i32..3, 4),
        ) {
            let cands: Vec<Vec<f64>> = vals.chunks(4).map(|c| c.iter().map(|&v| v as f64).collect()).collect();
            let prev: Vec<f64> = prev.iter().map(|&v| v as f64).collect();
            let mut rng = seeded_rng(0, 0);
            let s = select_candidate(&cands, Some(&prev), 2, 1, false, &mut rng).unwrap();
            for (i, d) in s.distances.iter().enumerate() {
                prop_assert!(s.distances[s.index] <= *d);
                if i < s.index {
                    prop_assert!(*d > s.distances[s.index]);
                }
            }
        }
    }
}

//! Linear maps with a flat external parameter slice.
//!
//! [`EquivLinear`] commutes with the group action by construction. Each
//! `(output block, input block)` pair contributes one of the following kernels:
//!
//! | out ← in      | free parameters | map                                              |
//! |---------------|-----------------|--------------------------------------------------|
//! | reg ← reg     | `u`             | group circulant `y_i = Σ_s w_s x_{i-s}`           |
//! | std ← std     | 2               | scaled rotation `aI + bJ`                        |
//! | triv ← triv   | 1               | scalar                                           |
//! | reg ← triv    | 1               | constant embedding                               |
//! | triv ← reg    | 1               | mean over the orbit                              |
//! | reg ← std     | 2               | `(aI + bJ)` then Fourier embedding (cos, sin)     |
//! | std ← reg     | 2               | Fourier projection `2/u Σ x_i (cos, sin)` then `aI + bJ` |
//! | std ↔ triv    | 0               | zero (inequivalent irreps)                       |
//!
//! Biases exist only on group-fixed output components: one shared value per regular
//! output channel, one per trivial output, none for standard outputs.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::group::{Block, Matrix, RepSpec};
use crate::math;

/// `Σ_s a_s b_{(r-s) mod u}`.
#[inline]
fn cyclic_conv(a: &[f64], b: &[f64], r: usize) -> f64 {
    let head: f64 = a[..=r].iter().zip(b[..=r].iter().rev()).map(|(p, q)| p * q).sum();
    let tail: f64 = a[r + 1..].iter().zip(b[r + 1..].iter().rev()).map(|(p, q)| p * q).sum();
    head + tail
}

/// `Σ_r g_r b_{(r-s) mod u}`.
#[inline]
fn cyclic_corr(g: &[f64], b: &[f64], s: usize) -> f64 {
    let u = g.len();
    let head: f64 = g[s..].iter().zip(&b[..u - s]).map(|(p, q)| p * q).sum();
    let tail: f64 = g[..s].iter().zip(&b[u - s..]).map(|(p, q)| p * q).sum();
    head + tail
}

/// A linear (affine) layer whose parameters live in an external slice.
pub trait LinearMap {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn num_params(&self) -> usize;

    /// Uniform `±sqrt(1/fan_in)` on weights, zero biases.
    fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R);

    /// `y = W x + b` (overwrites `y`).
    fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]);

    /// Accumulates `∂⟨gy, y⟩/∂θ` into `gparams` and, if requested, `Wᵀ gy` into `gx`.
    fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        gy: &[f64],
        gparams: &mut [f64],
        gx: Option<&mut [f64]>,
    );
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PairKind {
    RegReg,
    StdStd,
    TrivTriv,
    RegFromTriv,
    TrivFromReg,
    RegFromStd,
    StdFromReg,
}

impl PairKind {
    fn num_params(self, u: usize) -> usize {
        match self {
            PairKind::RegReg => u,
            PairKind::StdStd | PairKind::RegFromStd | PairKind::StdFromReg => 2,
            PairKind::TrivTriv | PairKind::RegFromTriv | PairKind::TrivFromReg => 1,
        }
    }
}

#[derive(Debug, Clone)]
struct PairOp {
    kind: PairKind,
    out_off: usize,
    in_off: usize,
    param: usize,
}

#[derive(Debug, Clone)]
struct BiasOp {
    out_off: usize,
    width: usize,
    param: usize,
}

/// Equivariant linear layer between two direct-sum representations of `C_u`.
#[derive(Debug, Clone)]
pub struct EquivLinear {
    in_rep: RepSpec,
    out_rep: RepSpec,
    u: usize,
    ops: Vec<PairOp>,
    biases: Vec<BiasOp>,
    num_weights: usize,
    num_params: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl EquivLinear {
    pub fn new(in_rep: RepSpec, out_rep: RepSpec) -> Result<Self> {
        if in_rep.order() != out_rep.order() {
            return Err(Error::Config(alloc::format!(
                "equivariant layer between C_{} and C_{}",
                in_rep.order(),
                out_rep.order()
            )));
        }
        let u = in_rep.order() as usize;
        let in_offs = in_rep.offsets();
        let out_offs = out_rep.offsets();
        let mut ops = Vec::new();
        let mut param = 0;
        for (ob, &out_off) in out_rep.blocks().iter().zip(&out_offs) {
            for (ib, &in_off) in in_rep.blocks().iter().zip(&in_offs) {
                let kind = match (ob, ib) {
                    (Block::Regular, Block::Regular) => PairKind::RegReg,
                    (Block::Standard, Block::Standard) => PairKind::StdStd,
                    (Block::Trivial, Block::Trivial) => PairKind::TrivTriv,
                    (Block::Regular, Block::Trivial) => PairKind::RegFromTriv,
                    (Block::Trivial, Block::Regular) => PairKind::TrivFromReg,
                    (Block::Regular, Block::Standard) => PairKind::RegFromStd,
                    (Block::Standard, Block::Regular) => PairKind::StdFromReg,
                    (Block::Standard, Block::Trivial) | (Block::Trivial, Block::Standard) => {
                        continue
                    }
                };
                ops.push(PairOp {
                    kind,
                    out_off,
                    in_off,
                    param,
                });
                param += kind.num_params(u);
            }
        }
        let num_weights = param;
        let mut biases = Vec::new();
        for (ob, &out_off) in out_rep.blocks().iter().zip(&out_offs) {
            let width = match ob {
                Block::Regular => u,
                Block::Trivial => 1,
                Block::Standard => continue,
            };
            biases.push(BiasOp {
                out_off,
                width,
                param,
            });
            param += 1;
        }
        let step = 2.0 * PI / u as f64;
        let cos = (0..u).map(|i| math::cos(step * i as f64)).collect();
        let sin = (0..u).map(|i| math::sin(step * i as f64)).collect();
        Ok(Self {
            in_rep,
            out_rep,
            u,
            ops,
            biases,
            num_weights,
            num_params: param,
            cos,
            sin,
        })
    }

    pub fn in_rep(&self) -> &RepSpec {
        &self.in_rep
    }

    pub fn out_rep(&self) -> &RepSpec {
        &self.out_rep
    }

    /// Free weight slots, excluding biases.
    pub fn num_weights(&self) -> usize {
        self.num_weights
    }

    /// Dense weight matrix and bias vector realized from `params`.
    pub fn matrix(&self, params: &[f64]) -> (Matrix, Vec<f64>) {
        let n_in = self.in_dim();
        let mut w = Matrix::zeros(self.out_dim(), n_in);
        let mut e = vec![0.0; n_in];
        let mut col = vec![0.0; self.out_dim()];
        let zero_bias = {
            let mut p = params.to_vec();
            for b in &self.biases {
                p[b.param] = 0.0;
            }
            p
        };
        for j in 0..n_in {
            e[j] = 1.0;
            self.forward(&zero_bias, &e, &mut col);
            for (i, v) in col.iter().enumerate() {
                w[(i, j)] = *v;
            }
            e[j] = 0.0;
        }
        let mut bias = vec![0.0; self.out_dim()];
        for b in &self.biases {
            for i in 0..b.width {
                bias[b.out_off + i] = params[b.param];
            }
        }
        (w, bias)
    }
}

impl LinearMap for EquivLinear {
    fn in_dim(&self) -> usize {
        self.in_rep.total_dim()
    }

    fn out_dim(&self) -> usize {
        self.out_rep.total_dim()
    }

    fn num_params(&self) -> usize {
        self.num_params
    }

    fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let bound = math::sqrt(1.0 / self.in_dim().max(1) as f64);
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for p in &mut params[..self.num_weights] {
            *p = dist.sample(rng);
        }
        for p in &mut params[self.num_weights..self.num_params] {
            *p = 0.0;
        }
    }

    fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim());
        debug_assert_eq!(y.len(), self.out_dim());
        let u = self.u;
        y.iter_mut().for_each(|v| *v = 0.0);
        for op in &self.ops {
            let w = &params[op.param..];
            let (o, i) = (op.out_off, op.in_off);
            match op.kind {
                PairKind::RegReg => {
                    let (w, x) = (&w[..u], &x[i..i + u]);
                    for (r, yr) in y[o..o + u].iter_mut().enumerate() {
                        *yr += cyclic_conv(w, x, r);
                    }
                }
                PairKind::StdStd => {
                    let (a, b) = (w[0], w[1]);
                    let (x0, x1) = (x[i], x[i + 1]);
                    y[o] += a * x0 - b * x1;
                    y[o + 1] += b * x0 + a * x1;
                }
                PairKind::TrivTriv => y[o] += w[0] * x[i],
                PairKind::RegFromTriv => {
                    let v = w[0] * x[i];
                    for r in 0..u {
                        y[o + r] += v;
                    }
                }
                PairKind::TrivFromReg => {
                    let s: f64 = x[i..i + u].iter().sum();
                    y[o] += w[0] * s / u as f64;
                }
                PairKind::RegFromStd => {
                    let (a, b) = (w[0], w[1]);
                    let (x0, x1) = (x[i], x[i + 1]);
                    let z0 = a * x0 - b * x1;
                    let z1 = b * x0 + a * x1;
                    for r in 0..u {
                        y[o + r] += z0 * self.cos[r] + z1 * self.sin[r];
                    }
                }
                PairKind::StdFromReg => {
                    let scale = 2.0 / u as f64;
                    let mut p0 = 0.0;
                    let mut p1 = 0.0;
                    for r in 0..u {
                        p0 += x[i + r] * self.cos[r];
                        p1 += x[i + r] * self.sin[r];
                    }
                    p0 *= scale;
                    p1 *= scale;
                    let (a, b) = (w[0], w[1]);
                    y[o] += a * p0 - b * p1;
                    y[o + 1] += b * p0 + a * p1;
                }
            }
        }
        for b in &self.biases {
            let v = params[b.param];
            for r in 0..b.width {
                y[b.out_off + r] += v;
            }
        }
    }

    fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        gy: &[f64],
        gparams: &mut [f64],
        mut gx: Option<&mut [f64]>,
    ) {
        let u = self.u;
        for op in &self.ops {
            let w = &params[op.param..];
            let (o, i) = (op.out_off, op.in_off);
            match op.kind {
                PairKind::RegReg => {
                    let (g, xs) = (&gy[o..o + u], &x[i..i + u]);
                    for (s, gp) in gparams[op.param..op.param + u].iter_mut().enumerate() {
                        *gp += cyclic_corr(g, xs, s);
                    }
                    if let Some(gx) = gx.as_deref_mut() {
                        let w = &w[..u];
                        for (j, gxj) in gx[i..i + u].iter_mut().enumerate() {
                            *gxj += cyclic_corr(g, w, j);
                        }
                    }
                }
                PairKind::StdStd => {
                    let (a, b) = (w[0], w[1]);
                    let (x0, x1) = (x[i], x[i + 1]);
                    let (g0, g1) = (gy[o], gy[o + 1]);
                    gparams[op.param] += g0 * x0 + g1 * x1;
                    gparams[op.param + 1] += -g0 * x1 + g1 * x0;
                    if let Some(gx) = gx.as_deref_mut() {
                        gx[i] += a * g0 + b * g1;
                        gx[i + 1] += -b * g0 + a * g1;
                    }
                }
                PairKind::TrivTriv => {
                    gparams[op.param] += gy[o] * x[i];
                    if let Some(gx) = gx.as_deref_mut() {
                        gx[i] += w[0] * gy[o];
                    }
                }
                PairKind::RegFromTriv => {
                    let gs: f64 = gy[o..o + u].iter().sum();
                    gparams[op.param] += gs * x[i];
                    if let Some(gx) = gx.as_deref_mut() {
                        gx[i] += w[0] * gs;
                    }
                }
                PairKind::TrivFromReg => {
                    let s: f64 = x[i..i + u].iter().sum();
                    gparams[op.param] += gy[o] * s / u as f64;
                    if let Some(gx) = gx.as_deref_mut() {
                        let v = w[0] * gy[o] / u as f64;
                        for r in 0..u {
                            gx[i + r] += v;
                        }
                    }
                }
                PairKind::RegFromStd => {
                    let (a, b) = (w[0], w[1]);
                    let (x0, x1) = (x[i], x[i + 1]);
                    let mut gz0 = 0.0;
                    let mut gz1 = 0.0;
                    for r in 0..u {
                        gz0 += gy[o + r] * self.cos[r];
                        gz1 += gy[o + r] * self.sin[r];
                    }
                    gparams[op.param] += gz0 * x0 + gz1 * x1;
                    gparams[op.param + 1] += -gz0 * x1 + gz1 * x0;
                    if let Some(gx) = gx.as_deref_mut() {
                        gx[i] += a * gz0 + b * gz1;
                        gx[i + 1] += -b * gz0 + a * gz1;
                    }
                }
                PairKind::StdFromReg => {
                    let scale = 2.0 / u as f64;
                    let mut p0 = 0.0;
                    let mut p1 = 0.0;
                    for r in 0..u {
                        p0 += x[i + r] * self.cos[r];
                        p1 += x[i + r] * self.sin[r];
                    }
                    p0 *= scale;
                    p1 *= scale;
                    let (a, b) = (w[0], w[1]);
                    let (g0, g1) = (gy[o], gy[o + 1]);
                    gparams[op.param] += g0 * p0 + g1 * p1;
                    gparams[op.param + 1] += -g0 * p1 + g1 * p0;
                    if let Some(gx) = gx.as_deref_mut() {
                        let gp0 = (a * g0 + b * g1) * scale;
                        let gp1 = (-b * g0 + a * g1) * scale;
                        for r in 0..u {
                            gx[i + r] += gp0 * self.cos[r] + gp1 * self.sin[r];
                        }
                    }
                }
            }
        }
        for b in &self.biases {
            let gs: f64 = gy[b.out_off..b.out_off + b.width].iter().sum();
            gparams[b.param] += gs;
        }
    }
}

/// Unconstrained affine layer `y = W x + b`, row-major weights followed by biases.
#[derive(Debug, Clone)]
pub struct DenseLinear {
    in_dim: usize,
    out_dim: usize,
}

impl DenseLinear {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim }
    }
}

impl LinearMap for DenseLinear {
    fn in_dim(&self) -> usize {
        self.in_dim
    }

    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let bound = math::sqrt(1.0 / self.in_dim.max(1) as f64);
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let nw = self.in_dim * self.out_dim;
        for p in &mut params[..nw] {
            *p = dist.sample(rng);
        }
        for p in &mut params[nw..self.num_params()] {
            *p = 0.0;
        }
    }

    fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        let nw = self.in_dim * self.out_dim;
        for (r, yr) in y.iter_mut().enumerate() {
            let row = &params[r * self.in_dim..(r + 1) * self.in_dim];
            *yr = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + params[nw + r];
        }
    }

    fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        gy: &[f64],
        gparams: &mut [f64],
        mut gx: Option<&mut [f64]>,
    ) {
        let nw = self.in_dim * self.out_dim;
        for (r, &g) in gy.iter().enumerate() {
            let base = r * self.in_dim;
            for (gp, xv) in gparams[base..base + self.in_dim].iter_mut().zip(x) {
                *gp += g * xv;
            }
            gparams[nw + r] += g;
            if let Some(gx) = gx.as_deref_mut() {
                for (gxv, w) in gx.iter_mut().zip(&params[base..base + self.in_dim]) {
                    *gxv += w * g;
                }
            }
        }
    }
}

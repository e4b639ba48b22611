//! The cyclic rotation group `C_u ⊂ SO(2)` and its real representations.
//!
//! Three irreducible-ish building blocks are supported:
//!
//! * [`Block::Trivial`]: the one-dimensional representation, every element acts as `1`.
//! * [`Block::Standard`]: the planar rotation `[[cos g, -sin g], [sin g, cos g]]`.
//! * [`Block::Regular`]: the `u`-dimensional permutation representation, element `k`
//!   cyclically shifts coordinates by `k`.
//!
//! A [`RepSpec`] is an ordered direct sum of blocks. Its action on vectors is applied
//! blockwise; [`RepSpec::realize`] materializes the block-diagonal matrix for tests.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math;

/// The finite cyclic group of planar rotations with `order` elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupSpec {
    order: u32,
}

impl GroupSpec {
    pub fn new(order: u32) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("group order must be at least 1".into()));
        }
        Ok(Self { order })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement {
            index: 0,
            order: self.order,
        }
    }

    /// Element `k mod u`.
    pub fn element(&self, k: i64) -> GroupElement {
        let u = self.order as i64;
        GroupElement {
            index: k.rem_euclid(u) as u32,
            order: self.order,
        }
    }

    /// The generator (rotation by `2π/u`).
    pub fn generator(&self) -> GroupElement {
        self.element(1)
    }

    pub fn elements(&self) -> impl Iterator<Item = GroupElement> + '_ {
        (0..self.order).map(move |index| GroupElement {
            index,
            order: self.order,
        })
    }
}

/// An element of `C_u`, identified by its index `k ∈ [0, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupElement {
    index: u32,
    order: u32,
}

impl GroupElement {
    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn group(&self) -> GroupSpec {
        GroupSpec { order: self.order }
    }

    /// Rotation angle `2πk/u` in radians.
    pub fn angle(&self) -> f64 {
        2.0 * PI * self.index as f64 / self.order as f64
    }

    pub fn is_identity(&self) -> bool {
        self.index == 0
    }

    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement> {
        if self.order != other.order {
            return Err(Error::Config("composing elements of different groups".into()));
        }
        Ok(GroupElement {
            index: (self.index + other.index) % self.order,
            order: self.order,
        })
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement {
            index: (self.order - self.index) % self.order,
            order: self.order,
        }
    }

    fn cos_sin(&self) -> (f64, f64) {
        if self.index == 0 {
            return (1.0, 0.0);
        }
        let a = self.angle();
        (math::cos(a), math::sin(a))
    }
}

/// One summand of a direct-sum representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    #[serde(rename = "triv")]
    Trivial,
    #[serde(rename = "std")]
    Standard,
    #[serde(rename = "reg")]
    Regular,
}

impl Block {
    pub fn dim(&self, order: u32) -> usize {
        match self {
            Block::Trivial => 1,
            Block::Standard => 2,
            Block::Regular => order as usize,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Block::Trivial => "triv",
            Block::Standard => "std",
            Block::Regular => "reg",
        }
    }
}

/// A formal direct sum of representation blocks over one [`GroupSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RepSpec {
    order: u32,
    blocks: Vec<Block>,
}

impl RepSpec {
    pub fn new(group: GroupSpec, blocks: Vec<Block>) -> Self {
        Self {
            order: group.order,
            blocks,
        }
    }

    /// `count` trivial channels.
    pub fn trivial(group: GroupSpec, count: usize) -> Self {
        Self::new(group, vec![Block::Trivial; count])
    }

    /// `count` standard (planar rotation) channels.
    pub fn standard(group: GroupSpec, count: usize) -> Self {
        Self::new(group, vec![Block::Standard; count])
    }

    /// `channels` copies of the regular representation.
    pub fn regular(group: GroupSpec, channels: usize) -> Self {
        Self::new(group, vec![Block::Regular; channels])
    }

    /// Per-step pose action: three in-plane axis pairs of the 6D rotation encoding,
    /// planar translation, height, and gripper width (`ρ1³ ⊕ (ρ1 ⊕ ρ0) ⊕ ρ0`).
    pub fn pose_action(group: GroupSpec) -> Self {
        use Block::*;
        Self::new(
            group,
            vec![Standard, Standard, Standard, Standard, Trivial, Trivial],
        )
    }

    pub fn group(&self) -> GroupSpec {
        GroupSpec { order: self.order }
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim(self.order)).sum()
    }

    /// Direct sum `self ⊕ other`.
    pub fn concat(&self, other: &RepSpec) -> Result<RepSpec> {
        if self.order != other.order {
            return Err(Error::Config("direct sum of reps over different groups".into()));
        }
        let mut blocks = self.blocks.clone();
        blocks.extend_from_slice(&other.blocks);
        Ok(RepSpec {
            order: self.order,
            blocks,
        })
    }

    /// `self ⊕ self ⊕ …` (`times` copies), the rep of a stacked sequence of vectors.
    pub fn repeat(&self, times: usize) -> RepSpec {
        let mut blocks = Vec::with_capacity(self.blocks.len() * times);
        for _ in 0..times {
            blocks.extend_from_slice(&self.blocks);
        }
        RepSpec {
            order: self.order,
            blocks,
        }
    }

    /// Offsets of each block into a vector of dimension `total_dim`.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.blocks
            .iter()
            .map(|b| {
                let o = off;
                off += b.dim(self.order);
                o
            })
            .collect()
    }

    fn check_element(&self, g: &GroupElement) -> Result<()> {
        if g.order != self.order {
            return Err(Error::Config(alloc::format!(
                "group element of C_{} applied to a rep over C_{}",
                g.order,
                self.order
            )));
        }
        Ok(())
    }

    /// Materialize the block-diagonal matrix of `g`.
    pub fn realize(&self, g: &GroupElement) -> Result<Matrix> {
        self.check_element(g)?;
        let n = self.total_dim();
        let mut m = Matrix::zeros(n, n);
        let (c, s) = g.cos_sin();
        let u = self.order as usize;
        let k = g.index as usize;
        let mut off = 0;
        for b in &self.blocks {
            match b {
                Block::Trivial => m[(off, off)] = 1.0,
                Block::Standard => {
                    m[(off, off)] = c;
                    m[(off, off + 1)] = -s;
                    m[(off + 1, off)] = s;
                    m[(off + 1, off + 1)] = c;
                }
                Block::Regular => {
                    for i in 0..u {
                        m[(off + (i + k) % u, off + i)] = 1.0;
                    }
                }
            }
            off += b.dim(self.order);
        }
        Ok(m)
    }

    /// `realize(g) · v`, applied blockwise into `out`.
    pub fn act_into(&self, g: &GroupElement, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_element(g)?;
        let n = self.total_dim();
        check_len("rep action input", n, v.len())?;
        check_len("rep action output", n, out.len())?;
        let (c, s) = g.cos_sin();
        let u = self.order as usize;
        let k = g.index as usize;
        let mut off = 0;
        for b in &self.blocks {
            match b {
                Block::Trivial => out[off] = v[off],
                Block::Standard => {
                    let (x, y) = (v[off], v[off + 1]);
                    out[off] = c * x - s * y;
                    out[off + 1] = s * x + c * y;
                }
                Block::Regular => {
                    for i in 0..u {
                        out[off + (i + k) % u] = v[off + i];
                    }
                }
            }
            off += b.dim(self.order);
        }
        Ok(())
    }

    pub fn act(&self, g: &GroupElement, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; v.len()];
        self.act_into(g, v, &mut out)?;
        Ok(out)
    }

    /// Apply `g` to every step of a trajectory whose steps each carry this rep.
    pub fn act_trajectory(&self, g: &GroupElement, traj: &Trajectory) -> Result<Trajectory> {
        check_len("trajectory step dimension", self.total_dim(), traj.step_dim())?;
        let mut data = vec![0.0; traj.data.len()];
        for (src, dst) in traj
            .data
            .chunks_exact(traj.step_dim)
            .zip(data.chunks_exact_mut(traj.step_dim))
        {
            self.act_into(g, src, dst)?;
        }
        Ok(Trajectory {
            step_dim: traj.step_dim,
            data,
        })
    }
}

impl fmt::Display for RepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}[", self.order)?;
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(b.tag())?;
        }
        f.write_str("]")
    }
}

/// An `n`-step sequence of equally sized action vectors, stored contiguously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    step_dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(step_dim: usize, data: Vec<f64>) -> Result<Self> {
        if step_dim == 0 || data.len() % step_dim != 0 {
            return Err(Error::Shape {
                what: "trajectory data length (multiple of step dim)",
                expected: step_dim,
                got: data.len(),
            });
        }
        Ok(Self { step_dim, data })
    }

    pub fn from_steps(steps: &[&[f64]]) -> Result<Self> {
        let step_dim = steps.first().map_or(0, |s| s.len());
        let mut data = Vec::with_capacity(step_dim * steps.len());
        for s in steps {
            check_len("trajectory step", step_dim, s.len())?;
            data.extend_from_slice(s);
        }
        Self::new(step_dim, data)
    }

    pub fn step_dim(&self) -> usize {
        self.step_dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.step_dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn step(&self, i: usize) -> &[f64] {
        &self.data[i * self.step_dim..(i + 1) * self.step_dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Small dense row-major matrix, used for materialized representations and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

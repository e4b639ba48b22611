//! The parametric velocity field `u_θ(t, x | o)` and its reverse-mode gradients.

mod activation;
mod graph;
mod linear;
mod time;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use activation::{elu, elu_grad, pointwise_nonlinearity};
pub use linear::{DenseLinear, EquivLinear, LinearMap};
pub use time::TimeEmbedding;

use crate::error::{check_len, Error, Result};
use crate::group::RepSpec;
use graph::Graph;

/// Anything that maps `(t, x, o)` to a velocity of the same shape as `x`.
pub trait VelocityField {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn velocity(&self, t: f64, x: &[f64], o: &[f64]) -> Result<Vec<f64>>;
}

/// Saved activations of one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    bufs: Vec<Vec<f64>>,
}

impl Tape {
    pub fn from_buffers(bufs: Vec<Vec<f64>>) -> Self {
        Self { bufs }
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.bufs
    }
}

/// A velocity field with a flat parameter vector and reverse-mode gradients.
pub trait Network: VelocityField {
    fn num_params(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn forward_taped(&self, t: f64, x: &[f64], o: &[f64]) -> Result<(Vec<f64>, Tape)>;
    /// Accumulates `∂⟨upstream, u⟩/∂θ` into `grads`.
    fn backward_taped(&self, tape: &Tape, upstream: &[f64], grads: &mut [f64]) -> Result<()>;
}

/// Layer widths of the equivariant field. All hidden features are regular channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivariantSpec {
    /// Representation of the flattened observation history.
    pub obs_rep: RepSpec,
    /// Representation of the flattened action chunk.
    pub action_rep: RepSpec,
    pub obs_channels: usize,
    pub action_channels: usize,
    pub hidden: Vec<usize>,
    pub time_freqs: usize,
}

/// Layer widths of the unconstrained baseline field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub obs_width: usize,
    pub action_width: usize,
    pub hidden: Vec<usize>,
    pub time_freqs: usize,
}

impl DenseSpec {
    /// Equal-width baseline whose parameter count is closest to `target`.
    pub fn matched(
        obs_dim: usize,
        action_dim: usize,
        depth: usize,
        time_freqs: usize,
        target: usize,
    ) -> Self {
        let spec = |w: usize| DenseSpec {
            obs_dim,
            action_dim,
            obs_width: (w / 2).max(1),
            action_width: (w - (w / 2).max(1)).max(1),
            hidden: vec![w; depth.max(1)],
            time_freqs,
        };
        let mut best = spec(2);
        let mut best_gap = usize::MAX;
        for w in 2..=4096 {
            let s = spec(w);
            let n = s.num_params();
            let gap = n.abs_diff(target);
            if gap < best_gap {
                best_gap = gap;
                best = s;
            }
            if n > target {
                break;
            }
        }
        best
    }

    pub fn num_params(&self) -> usize {
        let t = 2 * self.time_freqs;
        let lin = |i: usize, o: usize| i * o + o;
        let mut n = lin(self.obs_dim, self.obs_width) + lin(self.action_dim, self.action_width);
        let mut w = self.obs_width + self.action_width;
        for &h in &self.hidden {
            n += lin(w + t, h);
            w = h;
        }
        n + lin(w, self.action_dim)
    }
}

/// Architecture of a [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    Equivariant(EquivariantSpec),
    Dense(DenseSpec),
}

#[derive(Debug, Clone)]
enum Inner {
    Equivariant(Graph<EquivLinear>),
    Dense(Graph<DenseLinear>),
}

/// A velocity-field network with its parameter vector and gradient buffer.
#[derive(Debug, Clone)]
pub struct Model {
    topology: Topology,
    inner: Inner,
    params: Vec<f64>,
    grads: Vec<f64>,
    last_tape: Option<Tape>,
}

fn build(topology: &Topology) -> Result<Inner> {
    match topology {
        Topology::Equivariant(s) => {
            if s.hidden.is_empty() {
                return Err(Error::Config("at least one hidden layer is required".into()));
            }
            if s.obs_rep.order() != s.action_rep.order() {
                return Err(Error::Config("observation and action reps use different groups".into()));
            }
            let g = s.obs_rep.group();
            let time = TimeEmbedding::new(s.time_freqs);
            let obs_enc = EquivLinear::new(s.obs_rep.clone(), RepSpec::regular(g, s.obs_channels))?;
            let act_enc =
                EquivLinear::new(s.action_rep.clone(), RepSpec::regular(g, s.action_channels))?;
            let mut width = s.obs_channels + s.action_channels;
            let mut hidden = Vec::with_capacity(s.hidden.len());
            for &h in &s.hidden {
                let input = RepSpec::regular(g, width).concat(&RepSpec::trivial(g, time.dim()))?;
                hidden.push(EquivLinear::new(input, RepSpec::regular(g, h))?);
                width = h;
            }
            let decoder = EquivLinear::new(RepSpec::regular(g, width), s.action_rep.clone())?;
            Ok(Inner::Equivariant(Graph::new(obs_enc, act_enc, hidden, decoder, time)))
        }
        Topology::Dense(s) => {
            if s.hidden.is_empty() {
                return Err(Error::Config("at least one hidden layer is required".into()));
            }
            let time = TimeEmbedding::new(s.time_freqs);
            let obs_enc = DenseLinear::new(s.obs_dim, s.obs_width);
            let act_enc = DenseLinear::new(s.action_dim, s.action_width);
            let mut width = s.obs_width + s.action_width;
            let mut hidden = Vec::with_capacity(s.hidden.len());
            for &h in &s.hidden {
                hidden.push(DenseLinear::new(width + time.dim(), h));
                width = h;
            }
            let decoder = DenseLinear::new(width, s.action_dim);
            Ok(Inner::Dense(Graph::new(obs_enc, act_enc, hidden, decoder, time)))
        }
    }
}

impl Model {
    /// Randomly initialized model.
    pub fn new<R: Rng + ?Sized>(topology: Topology, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(topology)?;
        match &m.inner {
            Inner::Equivariant(g) => g.init(&mut m.params, rng),
            Inner::Dense(g) => g.init(&mut m.params, rng),
        }
        Ok(m)
    }

    /// Model with every parameter set to zero.
    pub fn zeros(topology: Topology) -> Result<Self> {
        let inner = build(&topology)?;
        let n = match &inner {
            Inner::Equivariant(g) => g.num_params(),
            Inner::Dense(g) => g.num_params(),
        };
        Ok(Self {
            topology,
            inner,
            params: vec![0.0; n],
            grads: vec![0.0; n],
            last_tape: None,
        })
    }

    pub fn from_params(topology: Topology, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(topology)?;
        check_len("parameter vector", m.params.len(), params.len())?;
        m.params = params;
        Ok(m)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn is_equivariant(&self) -> bool {
        matches!(self.topology, Topology::Equivariant(_))
    }

    /// Representations of observations and action chunks, for equivariant models.
    pub fn reps(&self) -> Option<(&RepSpec, &RepSpec)> {
        match &self.topology {
            Topology::Equivariant(s) => Some((&s.obs_rep, &s.action_rep)),
            Topology::Dense(_) => None,
        }
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Evaluate and retain activations for a following [`Model::backward`].
    pub fn forward(&mut self, t: f64, x: &[f64], o: &[f64]) -> Result<Vec<f64>> {
        let (out, tape) = self.forward_taped(t, x, o)?;
        self.last_tape = Some(tape);
        Ok(out)
    }

    /// Accumulate the gradient of `⟨upstream, forward(..)⟩` into the model's buffer.
    pub fn backward(&mut self, upstream: &[f64]) -> Result<()> {
        let tape = self
            .last_tape
            .take()
            .ok_or(Error::State("backward called without a preceding forward"))?;
        let mut grads = core::mem::take(&mut self.grads);
        let res = self.backward_taped(&tape, upstream, &mut grads);
        self.grads = grads;
        res
    }

    fn check_inputs(&self, t: f64, x: &[f64], o: &[f64]) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(alloc::format!("flow time {t} outside [0, 1]")));
        }
        check_len("action chunk", self.action_dim(), x.len())?;
        check_len("observation", self.obs_dim(), o.len())
    }
}

impl VelocityField for Model {
    fn obs_dim(&self) -> usize {
        match &self.inner {
            Inner::Equivariant(g) => g.obs_dim(),
            Inner::Dense(g) => g.obs_dim(),
        }
    }

    fn action_dim(&self) -> usize {
        match &self.inner {
            Inner::Equivariant(g) => g.action_dim(),
            Inner::Dense(g) => g.action_dim(),
        }
    }

    fn velocity(&self, t: f64, x: &[f64], o: &[f64]) -> Result<Vec<f64>> {
        self.forward_taped(t, x, o).map(|(v, _)| v)
    }
}

impl Network for Model {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_taped(&self, t: f64, x: &[f64], o: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_inputs(t, x, o)?;
        Ok(match &self.inner {
            Inner::Equivariant(g) => g.forward(&self.params, t, x, o),
            Inner::Dense(g) => g.forward(&self.params, t, x, o),
        })
    }

    fn backward_taped(&self, tape: &Tape, upstream: &[f64], grads: &mut [f64]) -> Result<()> {
        check_len("velocity cotangent", self.action_dim(), upstream.len())?;
        check_len("gradient buffer", self.params.len(), grads.len())?;
        match &self.inner {
            Inner::Equivariant(g) => g.backward(&self.params, tape, upstream, grads),
            Inner::Dense(g) => g.backward(&self.params, tape, upstream, grads),
        }
        Ok(())
    }
}

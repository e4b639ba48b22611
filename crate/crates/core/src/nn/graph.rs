//! The velocity-field network graph, generic over the linear layer type.
//!
//! ```text
//! e_o = elu(L_obs(o))            e_x = elu(L_act(x))
//! h   = [e_o, e_x]
//! for each hidden layer k:  a = elu(L_k([h, time(t)]));  h = h + a if widths match, else a
//! u   = L_dec(h)
//! ```
//!
//! With [`EquivLinear`](super::EquivLinear) layers and regular hidden channels every
//! stage commutes with the group action, so the whole map does.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::activation::{elu, elu_grad};
use super::time::TimeEmbedding;
use super::{LinearMap, Tape};

#[derive(Debug, Clone)]
pub(crate) struct Graph<L> {
    obs_enc: L,
    act_enc: L,
    hidden: Vec<L>,
    decoder: L,
    time: TimeEmbedding,
    offsets: Vec<usize>,
    num_params: usize,
}

impl<L: LinearMap> Graph<L> {
    pub(crate) fn new(obs_enc: L, act_enc: L, hidden: Vec<L>, decoder: L, time: TimeEmbedding) -> Self {
        let mut offsets = Vec::with_capacity(hidden.len() + 3);
        let mut off = 0;
        for l in core::iter::once(&obs_enc)
            .chain(core::iter::once(&act_enc))
            .chain(hidden.iter())
            .chain(core::iter::once(&decoder))
        {
            offsets.push(off);
            off += l.num_params();
        }
        Self {
            obs_enc,
            act_enc,
            hidden,
            decoder,
            time,
            offsets,
            num_params: off,
        }
    }

    pub(crate) fn num_params(&self) -> usize {
        self.num_params
    }

    pub(crate) fn obs_dim(&self) -> usize {
        self.obs_enc.in_dim()
    }

    pub(crate) fn action_dim(&self) -> usize {
        self.act_enc.in_dim()
    }

    fn layers(&self) -> impl Iterator<Item = &L> {
        core::iter::once(&self.obs_enc)
            .chain(core::iter::once(&self.act_enc))
            .chain(self.hidden.iter())
            .chain(core::iter::once(&self.decoder))
    }

    fn slice<'a>(&self, params: &'a [f64], layer: usize, l: &L) -> &'a [f64] {
        &params[self.offsets[layer]..self.offsets[layer] + l.num_params()]
    }

    pub(crate) fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        for (i, l) in self.layers().enumerate() {
            let off = self.offsets[i];
            l.init(&mut params[off..off + l.num_params()], rng);
        }
    }

    /// Tape layout: `[o, x, pre_o, pre_x, (input_k, pre_k) for each hidden layer, h_last]`.
    pub(crate) fn forward(&self, params: &[f64], t: f64, x: &[f64], o: &[f64]) -> (Vec<f64>, Tape) {
        let temb = self.time.embed(t);
        let mut bufs = Vec::with_capacity(5 + 2 * self.hidden.len());

        let mut pre_o = vec![0.0; self.obs_enc.out_dim()];
        self.obs_enc.forward(self.slice(params, 0, &self.obs_enc), o, &mut pre_o);
        let mut pre_x = vec![0.0; self.act_enc.out_dim()];
        self.act_enc.forward(self.slice(params, 1, &self.act_enc), x, &mut pre_x);

        let mut h: Vec<f64> = pre_o.iter().chain(&pre_x).map(|&v| elu(v)).collect();
        bufs.push(o.to_vec());
        bufs.push(x.to_vec());
        bufs.push(pre_o);
        bufs.push(pre_x);

        for (k, layer) in self.hidden.iter().enumerate() {
            let mut input = h;
            input.extend_from_slice(&temb);
            let mut pre = vec![0.0; layer.out_dim()];
            layer.forward(self.slice(params, 2 + k, layer), &input, &mut pre);
            let width = input.len() - temb.len();
            let next: Vec<f64> = if width == pre.len() {
                input[..width].iter().zip(&pre).map(|(a, p)| a + elu(*p)).collect()
            } else {
                pre.iter().map(|&p| elu(p)).collect()
            };
            bufs.push(input);
            bufs.push(pre);
            h = next;
        }

        let dec_idx = 2 + self.hidden.len();
        let mut out = vec![0.0; self.decoder.out_dim()];
        self.decoder
            .forward(self.slice(params, dec_idx, &self.decoder), &h, &mut out);
        bufs.push(h);
        (out, Tape::from_buffers(bufs))
    }

    pub(crate) fn backward(&self, params: &[f64], tape: &Tape, upstream: &[f64], grads: &mut [f64]) {
        let bufs = tape.buffers();
        let nh = self.hidden.len();
        let temb_dim = self.time.dim();
        let dec_idx = 2 + nh;

        let h_last = &bufs[4 + 2 * nh];
        let mut gh = vec![0.0; h_last.len()];
        let off = self.offsets[dec_idx];
        self.decoder.backward(
            self.slice(params, dec_idx, &self.decoder),
            h_last,
            upstream,
            &mut grads[off..off + self.decoder.num_params()],
            Some(&mut gh),
        );

        for k in (0..nh).rev() {
            let layer = &self.hidden[k];
            let input = &bufs[4 + 2 * k];
            let pre = &bufs[5 + 2 * k];
            let ga: Vec<f64> = gh.iter().zip(pre).map(|(g, p)| g * elu_grad(*p)).collect();
            let mut ginput = vec![0.0; input.len()];
            let off = self.offsets[2 + k];
            layer.backward(
                self.slice(params, 2 + k, layer),
                input,
                &ga,
                &mut grads[off..off + layer.num_params()],
                Some(&mut ginput),
            );
            let width = input.len() - temb_dim;
            ginput.truncate(width);
            if width == pre.len() {
                for (gi, g) in ginput.iter_mut().zip(&gh) {
                    *gi += g;
                }
            }
            gh = ginput;
        }

        let (o, x, pre_o, pre_x) = (&bufs[0], &bufs[1], &bufs[2], &bufs[3]);
        let d_o = pre_o.len();
        let g_pre_o: Vec<f64> = gh[..d_o].iter().zip(pre_o).map(|(g, p)| g * elu_grad(*p)).collect();
        let g_pre_x: Vec<f64> = gh[d_o..].iter().zip(pre_x).map(|(g, p)| g * elu_grad(*p)).collect();
        let off = self.offsets[0];
        self.obs_enc.backward(
            self.slice(params, 0, &self.obs_enc),
            o,
            &g_pre_o,
            &mut grads[off..off + self.obs_enc.num_params()],
            None,
        );
        let off = self.offsets[1];
        self.act_enc.backward(
            self.slice(params, 1, &self.act_enc),
            x,
            &g_pre_x,
            &mut grads[off..off + self.act_enc.num_params()],
            None,
        );
    }
}

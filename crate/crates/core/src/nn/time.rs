use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::math;

/// Sinusoidal features of the flow time, consumed as trivial (`ρ0`) channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    freqs: usize,
}

impl TimeEmbedding {
    pub fn new(freqs: usize) -> Self {
        Self { freqs }
    }

    pub fn freqs(&self) -> usize {
        self.freqs
    }

    /// `sin` and `cos` for each frequency.
    pub fn dim(&self) -> usize {
        2 * self.freqs
    }

    /// Frequency `k` is `(k + 1)·π/2` rad per unit time.
    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for k in 0..self.freqs {
            let w = (k + 1) as f64 * FRAC_PI_2;
            out.push(math::sin(w * t));
            out.push(math::cos(w * t));
        }
        out
    }
}

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::math;
use crate::nn::VelocityField;

/// Exact marginal velocity field for a standard-normal prior and a diagonal Gaussian
/// target `N(μ, diag σ²)` under the linear interpolation path.
///
/// Per coordinate, `x_t ~ N(tμ, s_t²)` with `s_t² = (1-t)² + t²σ²`, and
/// `u*(t, x) = a(t)(x - tμ) + μ` where `a(t) = (tσ² - (1-t)) / s_t²`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFlowOracle {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl GaussianFlowOracle {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        check_len("oracle variance", mean.len(), var.len())?;
        if mean.is_empty() {
            return Err(Error::Config("oracle needs at least one dimension".into()));
        }
        if var.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain("oracle variances must be finite and non-negative".into()));
        }
        Ok(Self { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    /// Marginal variance `s_t²` per coordinate.
    pub fn marginal_var(&self, t: f64) -> Vec<f64> {
        self.var
            .iter()
            .map(|v| (1.0 - t) * (1.0 - t) + t * t * v)
            .collect()
    }

    /// Diagonal of the Jacobian `∂u*/∂x` at time `t`.
    pub fn jacobian_diag(&self, t: f64) -> Vec<f64> {
        self.var
            .iter()
            .zip(self.marginal_var(t))
            .map(|(v, s2)| (t * v - (1.0 - t)) / s2)
            .collect()
    }

    /// Diagonal of `Var[x1 - x0 | x_t]`, which does not depend on `x_t`.
    pub fn conditional_var(&self, t: f64) -> Vec<f64> {
        self.var
            .iter()
            .zip(self.marginal_var(t))
            .map(|(v, s2)| v / s2)
            .collect()
    }

    pub fn field(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.jacobian_diag(t)
            .iter()
            .zip(x)
            .zip(&self.mean)
            .map(|((a, xi), m)| a * (xi - t * m) + m)
            .collect()
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect()
    }

    pub fn sample_target<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + math::sqrt(*v) * z
            })
            .collect()
    }
}

impl VelocityField for GaussianFlowOracle {
    fn obs_dim(&self) -> usize {
        0
    }

    fn action_dim(&self) -> usize {
        self.dim()
    }

    fn velocity(&self, t: f64, x: &[f64], _o: &[f64]) -> Result<Vec<f64>> {
        check_len("oracle input", self.dim(), x.len())?;
        Ok(self.field(t, x))
    }
}

use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight `λ(t)` of the acceleration penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaSchedule {
    /// Plain conditional flow matching.
    Zero,
    Constant { c: f64 },
    /// `c·(1 - t)²`: strongest near the prior, vanishing at the data end.
    Quadratic { c: f64 },
}

impl LambdaSchedule {
    pub fn weight(&self, t: f64) -> f64 {
        match *self {
            LambdaSchedule::Zero => 0.0,
            LambdaSchedule::Constant { c } => c,
            LambdaSchedule::Quadratic { c } => c * (1.0 - t) * (1.0 - t),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            LambdaSchedule::Zero => true,
            LambdaSchedule::Constant { c } | LambdaSchedule::Quadratic { c } => c == 0.0,
        }
    }

    /// Accepts `0`, `none`, a bare constant such as `0.5`, or `c(1-t)^2` forms like
    /// `(1-t)^2`, `2(1-t)^2` and `0.5*(1-t)^2`.
    pub fn parse(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::Config(format!("cannot parse lambda schedule `{s}`"));
        if compact.is_empty() {
            return Err(bad());
        }
        if compact == "none" || compact == "zero" {
            return Ok(LambdaSchedule::Zero);
        }
        let coeff = |c: &str| -> Result<f64> {
            let v: f64 = c.parse().map_err(|_| bad())?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("lambda coefficient must be ≥ 0 in `{s}`")));
            }
            Ok(v)
        };
        if let Some(head) = compact.strip_suffix("(1-t)^2") {
            let head = head.strip_suffix('*').unwrap_or(head);
            let c = if head.is_empty() { 1.0 } else { coeff(head)? };
            return Ok(LambdaSchedule::Quadratic { c });
        }
        let c = coeff(&compact)?;
        Ok(if c == 0.0 {
            LambdaSchedule::Zero
        } else {
            LambdaSchedule::Constant { c }
        })
    }

    /// Canonical text form, accepted back by [`LambdaSchedule::parse`].
    pub fn label(&self) -> String {
        match *self {
            LambdaSchedule::Zero => "0".into(),
            LambdaSchedule::Constant { c } => format!("{c}"),
            LambdaSchedule::Quadratic { c } => format!("{c}(1-t)^2"),
        }
    }
}

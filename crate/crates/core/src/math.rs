//! Floating-point functions for `no_std`, routed through `libm` so every build uses
//! the same implementation.

pub(crate) use libm::{acos, cos, exp, expm1, pow, sin, sqrt};

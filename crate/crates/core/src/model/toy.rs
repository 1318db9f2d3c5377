//! The planar test problem: the linear saddle `(-x, y)` conjugated by
//! `T = T2 o T1`, with `T1(x, y) = (x + y/(p sqrt(1+y^2)), y)` and
//! `T2(x, y) = (x, y + atan(x)/p)`.
//!
//! The split is `A = (-1)`, `B = (+1)`; `F` and `G` are what remains of the
//! conjugated vector field after removing the linear part.

use std::sync::Arc;

use super::{Nonlinearity, SplitSystem, StateVector};
use crate::error::{FoliateError, Result};

#[derive(Debug, Clone, Copy)]
pub struct ToyNonlinearity {
    pub p: f64,
}

impl ToyNonlinearity {
    #[inline]
    fn parts(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.p;
        let s = y - x.atan() / p;
        let q = 1.0 + s * s;
        let f = s / (p * q.sqrt()) + s / (p * q * q.sqrt());
        let xdot = -x + f;
        let g = -x.atan() / p + xdot / (p * (1.0 + x * x));
        (f, g)
    }
}

impl Nonlinearity for ToyNonlinearity {
    fn eval(&self, x: &[f64], y: &[f64], fx: &mut [f64], gy: &mut [f64]) {
        let (f, g) = self.parts(x[0], y[0]);
        fx[0] = f;
        gy[0] = g;
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(FoliateError::Config(format!(
            "toy parameter p must be positive, got {p}"
        )));
    }
    Ok(())
}

/// The conjugated saddle as a split system (no cutoff: `H` is globally Lipschitz).
pub fn toy_system(p: f64) -> Result<SplitSystem> {
    check_p(p)?;
    Ok(SplitSystem::new(
        vec![-1.0],
        vec![1.0],
        Arc::new(ToyNonlinearity { p }),
        None,
    )?
    .with_label(format!("toy(p={p})")))
}

/// Full vector field of the conjugated system at `z`.
pub fn toy_rhs(z: &StateVector, p: f64) -> Result<StateVector> {
    check_p(p)?;
    Ok(toy_system(p)?.rhs(z))
}

/// `T(w) = T2(T1(w))`.
pub fn toy_transform(w: [f64; 2], p: f64) -> Result<StateVector> {
    check_p(p)?;
    let [a, b] = w;
    let x = a + b / (p * (1.0 + b * b).sqrt());
    let y = b + x.atan() / p;
    Ok(StateVector::new(vec![x], vec![y]))
}

/// `T^{-1}`, in closed form: `T2` and `T1` are both shears.
pub fn toy_inverse_transform(z: &StateVector, p: f64) -> Result<[f64; 2]> {
    check_p(p)?;
    let (x, y) = (z.x[0], z.y[0]);
    let b = y - x.atan() / p;
    let a = x - b / (p * (1.0 + b * b).sqrt());
    Ok([a, b])
}

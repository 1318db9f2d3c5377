//! Closed-form leaves of the planar test problem.
//!
//! In the original coordinates the system is the saddle `(-x~, y~)`: its
//! unstable manifold is `x~ = 0`, the stable leaf through `(x~0, y~0)` is
//! `y~ = y~0`, and the tracking point of `(x~0, y~0)` is `(0, y~0)`. Everything
//! here is the image of those objects under `T`.

use crate::error::{FoliateError, Result};
use crate::model::toy::{toy_inverse_transform, toy_transform};
use crate::model::StateVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyOracle {
    p: f64,
}

impl ToyOracle {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(FoliateError::Config(format!(
                "toy parameter p must be positive, got {p}"
            )));
        }
        Ok(ToyOracle { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `T(0, y~)`.
    pub fn exact_unstable_manifold(&self, y_tilde: f64) -> StateVector {
        let x = y_tilde / (self.p * (1.0 + y_tilde * y_tilde).sqrt());
        StateVector::new(vec![x], vec![y_tilde + x.atan() / self.p])
    }

    /// `y = y~0 + atan(x)/p`, the stable leaf through any point with second
    /// original coordinate `y~0`.
    pub fn exact_stable_leaf(&self, x: f64, y_tilde0: f64) -> f64 {
        y_tilde0 + x.atan() / self.p
    }

    /// The stable leaf through a point `z0` given in the transformed coordinates.
    pub fn stable_leaf_through(&self, z0: &StateVector, x: f64) -> Result<f64> {
        let [_, yt] = toy_inverse_transform(z0, self.p)?;
        Ok(self.exact_stable_leaf(x, yt))
    }

    /// `T(0, y~0)` for the original initial condition `z~0 = (x~0, y~0)`.
    pub fn exact_tracking_ic(&self, z0_tilde: [f64; 2]) -> StateVector {
        self.exact_unstable_manifold(z0_tilde[1])
    }

    /// `Psi(y)`: the `x` at which the unstable manifold passes height `y`.
    ///
    /// `y~ -> y` along the manifold is increasing with slope in `[1, 1 + 1/p^2]`,
    /// and `|y - y~| < 1/p`, so bisection on `[y - 2/p, y + 2/p]` is safe.
    pub fn unstable_manifold_graph(&self, y: f64) -> f64 {
        let height = |yt: f64| self.exact_unstable_manifold(yt).y[0] - y;
        let (mut lo, mut hi) = (y - 2.0 / self.p, y + 2.0 / self.p);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if height(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.exact_unstable_manifold(0.5 * (lo + hi)).x[0]
    }

    /// Exact flow: `T` applied to the linear flow of `T^{-1}(z)`.
    pub fn exact_flow(&self, z: &StateVector, t: f64) -> Result<StateVector> {
        let [a, b] = toy_inverse_transform(z, self.p)?;
        toy_transform([a * (-t).exp(), b * t.exp()], self.p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::toy::toy_system;
    use crate::timegrid::{rk4_trajectory, TimeGrid};

    #[test]
    fn unstable_manifold_values() {
        let o = ToyOracle::new(10.0).unwrap();
        assert_eq!(o.exact_unstable_manifold(0.0), StateVector::new(vec![0.0], vec![0.0]));
        let far = o.exact_unstable_manifold(1e8);
        assert!((far.x[0] - 0.1).abs() < 1e-12);
        for y in [-3.0, -0.4, 0.0, 0.7, 5.0] {
            let x = o.unstable_manifold_graph(y);
            let back = o.exact_unstable_manifold(toy_inverse_transform(&StateVector::new(vec![x], vec![y]), 10.0).unwrap()[1]);
            assert!((back.x[0] - x).abs() < 1e-15 && (back.y[0] - y).abs() < 1e-14);
        }
    }

    #[test]
    fn stable_leaf_values() {
        let o = ToyOracle::new(10.0).unwrap();
        assert_eq!(o.exact_stable_leaf(0.0, 1.3), 1.3);
        let x = 3.0 + 1.0 / (10.0 * 2f64.sqrt());
        assert_eq!(o.exact_stable_leaf(x, 1.0), 1.0 + x.atan() / 10.0);
        let z0 = toy_transform([1.0, 1.0], 10.0).unwrap();
        assert!((o.stable_leaf_through(&z0, x).unwrap() - (1.0 + x.atan() / 10.0)).abs() < 1e-15);
        // slope 1/(p(1+x^2)) <= 1/p
        for x in [-2.0, 0.0, 0.5, 4.0] {
            let d = 1e-6;
            let s = (o.exact_stable_leaf(x + d, 0.0) - o.exact_stable_leaf(x - d, 0.0)) / (2.0 * d);
            assert!(s <= 0.1 + 1e-9 && (s - 0.1 / (1.0 + x * x)).abs() < 1e-8);
        }
    }

    #[test]
    fn tracking_ic() {
        let o = ToyOracle::new(10.0).unwrap();
        let z = o.exact_tracking_ic([1.0, 1.0]);
        let x = 1.0 / (10.0 * 2f64.sqrt());
        assert!((z.x[0] - x).abs() < 1e-16);
        assert!((z.y[0] - (1.0 + x.atan() / 10.0)).abs() < 1e-15);
        assert!((z.x[0] - 7.0711e-2).abs() < 5e-6 && (z.y[0] - 1.0070).abs() < 1e-4);
        assert_eq!(o.exact_tracking_ic([0.3, 0.0]), StateVector::new(vec![0.0], vec![0.0]));
        // on the unstable manifold and on the stable leaf of the original point
        let zt = [2.0, -0.6];
        let z = o.exact_tracking_ic(zt);
        assert!((o.unstable_manifold_graph(z.y[0]) - z.x[0]).abs() < 1e-15);
        assert!((o.exact_stable_leaf(z.x[0], zt[1]) - z.y[0]).abs() < 1e-15);
    }

    #[test]
    fn conjugacy_with_rk4() {
        let o = ToyOracle::new(10.0).unwrap();
        let sys = toy_system(10.0).unwrap();
        let z0 = toy_transform([0.8, -0.3], 10.0).unwrap();
        let traj = rk4_trajectory(&sys, &z0, TimeGrid::forward(1e-3, 2000).unwrap()).unwrap();
        for k in (0..=2000).step_by(250) {
            let z = traj.states.state(k);
            let exact = o.exact_flow(&z0, k as f64 * 1e-3).unwrap();
            assert!(z.distance(&exact) < 1e-11, "t = {}: {}", k as f64 * 1e-3, z.distance(&exact));
        }
    }
}

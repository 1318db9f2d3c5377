//! Sine-Galerkin truncations of the Kuramoto-Sivashinsky equation
//! `u_t + 4 u_xxxx + gamma (u_xx + u u_x) = 0` with odd, `2 pi`-periodic `u`,
//! and its approximate inertial form.
//!
//! With `u = sum_j b_j sin(j xi)` the mode equations read
//! `b_j' = (gamma j^2 - 4 j^4) b_j - gamma (u u_xi)_j` where
//! `(u u_xi)_j = (j/4) [sum_{k+l=j} b_k b_l - 2 sum_{l} b_{l+j} b_l]`.
//!
//! Splittings put the low modes `1..=dim_y` in `Y` and the rest in `X`.

use std::sync::Arc;

use super::{Nonlinearity, Preparation, SplitSystem, StateVector};
use crate::error::{FoliateError, Result};
use crate::timegrid::{rk4_step, Rk4Work};

/// Upper bound on the number of retained modes (stack buffers).
pub const MAX_MODES: usize = 64;

/// Linear growth rate of sine mode `j`.
pub fn kse_eigenvalue(gamma: f64, j: usize) -> f64 {
    let j = j as f64;
    gamma * j * j - 4.0 * j * j * j * j
}

/// `(u u_xi)_j` for `j = 1..=out.len()`, with `b[k-1]` the amplitude of `sin(k xi)`.
///
/// Modes of `u` beyond `b.len()` are zero; products are not truncated other
/// than by the length of `out`.
pub fn convective_modes(b: &[f64], out: &mut [f64]) {
    let n = b.len();
    for (jm1, o) in out.iter_mut().enumerate() {
        let j = jm1 + 1;
        let mut sum = 0.0;
        // k + l = j, k, l >= 1
        for k in 1..j {
            let l = j - k;
            if k <= n && l <= n {
                sum += b[k - 1] * b[l - 1];
            }
        }
        let mut diff = 0.0;
        for l in 1..=n.saturating_sub(j) {
            diff += b[l + j - 1] * b[l - 1];
        }
        *o = 0.25 * j as f64 * (sum - 2.0 * diff);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KseGalerkin {
    pub n_modes: usize,
    pub gamma: f64,
}

impl KseGalerkin {
    pub fn new(n_modes: usize, gamma: f64) -> Result<Self> {
        if !(2..=MAX_MODES).contains(&n_modes) {
            return Err(FoliateError::Config(format!(
                "KSE Galerkin needs 2 <= n_modes <= {MAX_MODES}, got {n_modes}"
            )));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(FoliateError::Config(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        Ok(KseGalerkin { n_modes, gamma })
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.n_modes)
            .map(|j| kse_eigenvalue(self.gamma, j))
            .collect()
    }

    /// Galerkin nonlinearity `-gamma P_n (u u_xi)` in mode coordinates.
    pub fn nonlinear_modes(&self, b: &[f64], out: &mut [f64]) {
        convective_modes(b, out);
        out.iter_mut().for_each(|v| *v *= -self.gamma);
    }

    pub fn rhs_modes(&self, b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_modes];
        self.nonlinear_modes(b, &mut out);
        for (j, o) in out.iter_mut().enumerate() {
            *o += kse_eigenvalue(self.gamma, j + 1) * b[j];
        }
        out
    }

    /// Split with `Y` = modes `1..=dim_y`, `X` = modes `dim_y+1..=n_modes`.
    pub fn split(&self, dim_y: usize, preparation: Option<Preparation>) -> Result<SplitSystem> {
        let split = ModeSplit::new(self.n_modes, dim_y)?;
        let lam = self.eigenvalues();
        Ok(SplitSystem::new(
            lam[dim_y..].to_vec(),
            lam[..dim_y].to_vec(),
            Arc::new(GalerkinSplit { model: *self, split }),
            preparation,
        )?
        .with_label(format!(
            "kse-galerkin(n={}, gamma={}, dim_y={dim_y})",
            self.n_modes, self.gamma
        )))
    }
}

/// Convenience constructor for a split Galerkin system.
pub fn kse_galerkin(
    n_modes: usize,
    gamma: f64,
    dim_y: usize,
    preparation: Option<Preparation>,
) -> Result<SplitSystem> {
    KseGalerkin::new(n_modes, gamma)?.split(dim_y, preparation)
}

/// Map between mode vectors `(b_1, ..., b_n)` and split states
/// `(x, y) = ((b_{k+1}, ..., b_n), (b_1, ..., b_k))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeSplit {
    pub n_modes: usize,
    pub dim_y: usize,
}

impl ModeSplit {
    pub fn new(n_modes: usize, dim_y: usize) -> Result<Self> {
        if dim_y == 0 || dim_y >= n_modes {
            return Err(FoliateError::Config(format!(
                "split needs 1 <= dim_y < n_modes = {n_modes}, got {dim_y}"
            )));
        }
        Ok(ModeSplit { n_modes, dim_y })
    }

    pub fn to_state(&self, b: &[f64]) -> StateVector {
        StateVector::new(b[self.dim_y..].to_vec(), b[..self.dim_y].to_vec())
    }

    pub fn to_modes(&self, z: &StateVector) -> Vec<f64> {
        let mut b = z.y.clone();
        b.extend_from_slice(&z.x);
        b
    }

    #[inline]
    fn gather(&self, x: &[f64], y: &[f64], b: &mut [f64]) {
        b[..self.dim_y].copy_from_slice(y);
        b[self.dim_y..self.n_modes].copy_from_slice(x);
    }

    #[inline]
    fn scatter(&self, b: &[f64], fx: &mut [f64], gy: &mut [f64]) {
        gy.copy_from_slice(&b[..self.dim_y]);
        fx.copy_from_slice(&b[self.dim_y..self.n_modes]);
    }
}

struct GalerkinSplit {
    model: KseGalerkin,
    split: ModeSplit,
}

impl Nonlinearity for GalerkinSplit {
    fn eval(&self, x: &[f64], y: &[f64], fx: &mut [f64], gy: &mut [f64]) {
        let n = self.model.n_modes;
        let mut b = [0.0; MAX_MODES];
        let mut out = [0.0; MAX_MODES];
        self.split.gather(x, y, &mut b[..n]);
        self.model.nonlinear_modes(&b[..n], &mut out[..n]);
        self.split.scatter(&out[..n], fx, gy);
    }
}

/// Approximate inertial form on the low modes `p = (b_1..b_n)`:
/// `p' = -L p - P R(p + Phi1(p))` with `Phi1(p) = -L^{-1} Q R(p)` evaluated on
/// the band of modes `n+1..=band`.
#[derive(Debug, Clone, Copy)]
pub struct KseAif {
    pub gamma: f64,
    pub n_low: usize,
    pub band: usize,
}

impl KseAif {
    /// Three low modes, enslaved band `4..=12`.
    pub fn new(gamma: f64) -> Result<Self> {
        Self::with_band(gamma, 3, 12)
    }

    pub fn with_band(gamma: f64, n_low: usize, band: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(FoliateError::Config(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if n_low < 2 || band <= n_low || band > MAX_MODES {
            return Err(FoliateError::Config(format!(
                "AIF needs 2 <= n_low < band <= {MAX_MODES} (got n_low = {n_low}, band = {band})"
            )));
        }
        for j in n_low + 1..=band {
            if kse_eigenvalue(gamma, j) == 0.0 {
                return Err(FoliateError::Config(format!(
                    "L is singular on mode {j} for gamma = {gamma}"
                )));
            }
        }
        Ok(KseAif {
            gamma,
            n_low,
            band,
        })
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.n_low)
            .map(|j| kse_eigenvalue(self.gamma, j))
            .collect()
    }

    /// High-mode lift `Phi1(p)` on modes `n_low+1..=band` (returned indexed from `n_low+1`).
    pub fn lift(&self, p: &[f64]) -> Vec<f64> {
        let mut conv = vec![0.0; self.band];
        convective_modes(p, &mut conv);
        (self.n_low + 1..=self.band)
            .map(|j| {
                // L_j = -lambda_j, R = gamma u u_xi
                let l = -kse_eigenvalue(self.gamma, j);
                -self.gamma * conv[j - 1] / l
            })
            .collect()
    }

    /// `-P R(p + Phi1(p))`.
    pub fn nonlinear_modes(&self, p: &[f64], out: &mut [f64]) {
        let mut u = [0.0; MAX_MODES];
        u[..self.n_low].copy_from_slice(p);
        let mut conv = [0.0; MAX_MODES];
        convective_modes(p, &mut conv[..self.band]);
        for j in self.n_low + 1..=self.band {
            let l = -kse_eigenvalue(self.gamma, j);
            u[j - 1] = -self.gamma * conv[j - 1] / l;
        }
        convective_modes(&u[..self.band], out);
        out.iter_mut().for_each(|v| *v *= -self.gamma);
    }

    pub fn rhs_modes(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_low];
        self.nonlinear_modes(p, &mut out);
        for (j, o) in out.iter_mut().enumerate() {
            *o += kse_eigenvalue(self.gamma, j + 1) * p[j];
        }
        out
    }

    pub fn split(&self, dim_y: usize, preparation: Option<Preparation>) -> Result<SplitSystem> {
        let split = ModeSplit::new(self.n_low, dim_y)?;
        let lam = self.eigenvalues();
        Ok(SplitSystem::new(
            lam[dim_y..].to_vec(),
            lam[..dim_y].to_vec(),
            Arc::new(AifSplit { model: *self, split }),
            preparation,
        )?
        .with_label(format!(
            "kse-aif(n={}, gamma={}, dim_y={dim_y})",
            self.n_low, self.gamma
        )))
    }
}

/// Approximate inertial form with three low modes, split `dim_y`.
pub fn kse_aif(gamma: f64, dim_y: usize, preparation: Option<Preparation>) -> Result<SplitSystem> {
    KseAif::new(gamma)?.split(dim_y, preparation)
}

struct AifSplit {
    model: KseAif,
    split: ModeSplit,
}

impl Nonlinearity for AifSplit {
    fn eval(&self, x: &[f64], y: &[f64], fx: &mut [f64], gy: &mut [f64]) {
        let n = self.model.n_low;
        let mut p = [0.0; MAX_MODES];
        let mut out = [0.0; MAX_MODES];
        self.split.gather(x, y, &mut p[..n]);
        self.model.nonlinear_modes(&p[..n], &mut out[..n]);
        self.split.scatter(&out[..n], fx, gy);
    }
}

/// Settings for locating a point on a periodic attractor by RK4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitCycleSearch {
    /// Step for the transient.
    pub coarse_h: f64,
    pub transient: f64,
    /// Step for relaxing onto the fine-step attractor and locating the section.
    pub fine_h: f64,
    pub settle: f64,
    /// Give up when no section crossing appears within this time.
    pub max_search: f64,
}

impl Default for LimitCycleSearch {
    fn default() -> Self {
        LimitCycleSearch {
            coarse_h: 1e-5,
            transient: 50.0,
            fine_h: 1e-6,
            settle: 0.05,
            max_search: 20.0,
        }
    }
}

/// Integrates from `z_init` past a transient and returns the first upward
/// crossing of the section `y[0] = 0` (the first sine mode in a Galerkin split).
pub fn limit_cycle_point(system: &SplitSystem, z_init: &StateVector, search: &LimitCycleSearch) -> Result<StateVector> {
    let (nx, ny) = (system.dim_x(), system.dim_y());
    let mut x = z_init.x.clone();
    let mut y = z_init.y.clone();
    let mut work = Rk4Work::new(nx + ny);
    let diverged = |x: &[f64], y: &[f64], t: f64| -> Result<()> {
        if x.iter().chain(y).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(FoliateError::Divergence {
                iteration: 0,
                node: 0,
                what: format!("limit-cycle search blew up at t = {t}"),
            })
        }
    };
    let coarse = (search.transient / search.coarse_h).round() as usize;
    for _ in 0..coarse {
        rk4_step(system, search.coarse_h, &mut x, &mut y, &mut work);
    }
    diverged(&x, &y, search.transient)?;
    let h = search.fine_h;
    let settle = (search.settle / h).round() as usize;
    for _ in 0..settle {
        rk4_step(system, h, &mut x, &mut y, &mut work);
    }
    diverged(&x, &y, search.transient + search.settle)?;
    let max_steps = (search.max_search / h).round() as usize;
    for _ in 0..max_steps {
        let (px, py) = (x.clone(), y.clone());
        rk4_step(system, h, &mut x, &mut y, &mut work);
        if py[0] < 0.0 && y[0] >= 0.0 {
            // secant on the partial step length
            let (mut a, mut fa) = (0.0, py[0]);
            let (mut b, mut fb) = (h, y[0]);
            let mut best = (x.clone(), y.clone());
            for _ in 0..30 {
                if fb == fa {
                    break;
                }
                let c = b - fb * (b - a) / (fb - fa);
                let (mut cx, mut cy) = (px.clone(), py.clone());
                rk4_step(system, c, &mut cx, &mut cy, &mut work);
                let fc = cy[0];
                best = (cx, cy);
                if fc.abs() < 1e-15 {
                    break;
                }
                (a, fa, b, fb) = (b, fb, c, fc);
            }
            return Ok(StateVector::new(best.0, best.1));
        }
    }
    diverged(&x, &y, search.transient + search.settle + search.max_search)?;
    Err(FoliateError::Config(format!(
        "no upward crossing of the first mode within {} time units",
        search.max_search
    )))
}

//! Uniform time grids, grid functions with weighted norms, diagonal
//! propagators, RK4 base trajectories and Simpson kernels.

use crate::error::{FoliateError, Result};
use crate::model::{euclid, SpectralGap, SplitSystem, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `t_i = i h`, the stable side.
    Forward,
    /// `t_i = -i h`, the unstable side.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    h: f64,
    n: usize,
    direction: Direction,
}

impl TimeGrid {
    /// Grid with `n + 1` nodes `t_0, ..., t_n`. Simpson sweeps need `n >= 3`,
    /// PWCONST only `n >= 1`.
    pub fn new(h: f64, n: usize, direction: Direction) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(FoliateError::Config(format!("step must be positive, got {h}")));
        }
        if n < 1 {
            return Err(FoliateError::Config("grid needs at least two nodes".into()));
        }
        Ok(TimeGrid { h, n, direction })
    }

    pub fn forward(h: f64, n: usize) -> Result<Self> {
        Self::new(h, n, Direction::Forward)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of intervals `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_points(&self) -> usize {
        self.n + 1
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Signed node time.
    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        match self.direction {
            Direction::Forward => i as f64 * self.h,
            Direction::Backward => -(i as f64) * self.h,
        }
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.n)
    }

    /// Same nodes with the time direction flipped.
    pub fn reversed(&self) -> TimeGrid {
        TimeGrid {
            direction: match self.direction {
                Direction::Forward => Direction::Backward,
                Direction::Backward => Direction::Forward,
            },
            ..*self
        }
    }
}

/// Node values of a trajectory-space element, stored node-major as `[x_i, y_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGridFunction {
    grid: TimeGrid,
    dim_x: usize,
    dim_y: usize,
    values: Vec<f64>,
}

impl TimeGridFunction {
    pub fn zeros(grid: TimeGrid, dim_x: usize, dim_y: usize) -> Self {
        TimeGridFunction {
            grid,
            dim_x,
            dim_y,
            values: vec![0.0; grid.n_points() * (dim_x + dim_y)],
        }
    }

    pub fn from_fn(
        grid: TimeGrid,
        dim_x: usize,
        dim_y: usize,
        mut f: impl FnMut(f64) -> StateVector,
    ) -> Self {
        let mut out = Self::zeros(grid, dim_x, dim_y);
        for i in 0..grid.n_points() {
            let z = f(grid.t(i));
            out.x_mut(i).copy_from_slice(&z.x);
            out.y_mut(i).copy_from_slice(&z.y);
        }
        out
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_y(&self) -> usize {
        self.dim_y
    }

    #[inline]
    fn stride(&self) -> usize {
        self.dim_x + self.dim_y
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        let s = i * self.stride();
        &self.values[s..s + self.dim_x]
    }

    #[inline]
    pub fn y(&self, i: usize) -> &[f64] {
        let s = i * self.stride() + self.dim_x;
        &self.values[s..s + self.dim_y]
    }

    #[inline]
    pub fn x_mut(&mut self, i: usize) -> &mut [f64] {
        let s = i * self.stride();
        &mut self.values[s..s + self.dim_x]
    }

    #[inline]
    pub fn y_mut(&mut self, i: usize) -> &mut [f64] {
        let s = i * self.stride() + self.dim_x;
        &mut self.values[s..s + self.dim_y]
    }

    pub fn state(&self, i: usize) -> StateVector {
        StateVector::new(self.x(i).to_vec(), self.y(i).to_vec())
    }

    #[inline]
    pub fn node_norm(&self, i: usize) -> f64 {
        euclid(self.x(i)).max(euclid(self.y(i)))
    }

    /// Weight `e^{-sigma t_i}` applied to a magnitude without overflowing in
    /// intermediate steps.
    #[inline]
    pub fn weighted(&self, i: usize, magnitude: f64, sigma: f64) -> f64 {
        weighted(magnitude, -sigma * self.grid.t(i))
    }

    /// `max_i e^{-sigma t_i} |phi(t_i)|` with signed node times.
    pub fn sigma_norm(&self, sigma: f64) -> f64 {
        (0..self.grid.n_points())
            .map(|i| self.weighted(i, self.node_norm(i), sigma))
            .fold(0.0, f64::max)
    }

    /// `|self - other|_sigma`.
    pub fn sigma_distance(&self, other: &TimeGridFunction, sigma: f64) -> f64 {
        let (nx, ny) = (self.dim_x, self.dim_y);
        let mut dx = vec![0.0; nx];
        let mut dy = vec![0.0; ny];
        let mut best = 0.0f64;
        for i in 0..self.grid.n_points() {
            for (d, (a, b)) in dx.iter_mut().zip(self.x(i).iter().zip(other.x(i))) {
                *d = a - b;
            }
            for (d, (a, b)) in dy.iter_mut().zip(self.y(i).iter().zip(other.y(i))) {
                *d = a - b;
            }
            best = best.max(self.weighted(i, euclid(&dx).max(euclid(&dy)), sigma));
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Piecewise-constant resampling onto `grid`: node `t` takes the value of
    /// the last old node `<= t`, and the final old value beyond the old range.
    pub fn resample_constant(&self, grid: TimeGrid) -> TimeGridFunction {
        let mut out = Self::zeros(grid, self.dim_x, self.dim_y);
        let ho = self.grid.h();
        for i in 0..grid.n_points() {
            let t = grid.t(i).abs();
            let k = ((t / ho) * (1.0 + 1e-12)).floor() as usize;
            let k = k.min(self.grid.n());
            out.x_mut(i).copy_from_slice(self.x(k));
            out.y_mut(i).copy_from_slice(self.y(k));
        }
        out
    }
}

/// `magnitude * e^{log_weight}`, computed in log space when either factor is extreme.
#[inline]
pub(crate) fn weighted(magnitude: f64, log_weight: f64) -> f64 {
    if magnitude == 0.0 {
        return 0.0;
    }
    let direct = magnitude * log_weight.exp();
    if direct.is_finite() && direct > 0.0 && log_weight.abs() < 700.0 {
        return direct;
    }
    (magnitude.ln() + log_weight).exp()
}

/// RK4 solution of the full (prepared) system on a grid, with cached `F`, `G`.
#[derive(Debug, Clone)]
pub struct BaseTrajectory {
    pub grid: TimeGrid,
    pub states: TimeGridFunction,
    /// `H(z(t_i))` at every node, same layout as `states`.
    pub nonlinear: TimeGridFunction,
}

impl BaseTrajectory {
    pub fn z0(&self) -> StateVector {
        self.states.state(0)
    }

    pub fn f(&self, i: usize) -> &[f64] {
        self.nonlinear.x(i)
    }

    pub fn g(&self, i: usize) -> &[f64] {
        self.nonlinear.y(i)
    }

    /// Whether every cached state is exactly zero (a trajectory through the origin).
    pub fn is_trivial(&self) -> bool {
        (0..self.grid.n_points())
            .all(|i| self.states.x(i).iter().chain(self.states.y(i)).all(|v| *v == 0.0))
            && (0..self.grid.n_points()).all(|i| {
                self.nonlinear
                    .x(i)
                    .iter()
                    .chain(self.nonlinear.y(i))
                    .all(|v| *v == 0.0)
            })
    }
}

/// One classical RK4 step in place.
pub fn rk4_step(system: &SplitSystem, h: f64, x: &mut [f64], y: &mut [f64], work: &mut Rk4Work) {
    let (nx, ny) = (x.len(), y.len());
    let Rk4Work { k, tmp } = work;
    let stage = |system: &SplitSystem, kx: &mut [f64], ky: &mut [f64], tx: &[f64], ty: &[f64]| {
        system.rhs_into(tx, ty, kx, ky);
    };
    // k[s] holds stage s as [x | y]
    {
        let (kx, ky) = k[0].split_at_mut(nx);
        stage(system, kx, ky, x, y);
    }
    for s in 1..4 {
        let c = if s == 3 { h } else { 0.5 * h };
        for j in 0..nx {
            tmp[j] = x[j] + c * k[s - 1][j];
        }
        for j in 0..ny {
            tmp[nx + j] = y[j] + c * k[s - 1][nx + j];
        }
        let (tx, ty) = tmp.split_at(nx);
        let (kx, ky) = k[s].split_at_mut(nx);
        stage(system, kx, ky, tx, ty);
    }
    let w = h / 6.0;
    for j in 0..nx {
        x[j] += w * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
    }
    for j in 0..ny {
        y[j] += w * (k[0][nx + j] + 2.0 * k[1][nx + j] + 2.0 * k[2][nx + j] + k[3][nx + j]);
    }
}

/// Scratch space for [`rk4_step`].
pub struct Rk4Work {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4Work {
    pub fn new(n: usize) -> Self {
        Rk4Work {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }
}

/// Integrates `z' = Cz + H_rho(z)` from `z0` over the grid (always in the
/// system's own forward time) and caches `H` at every node.
pub fn rk4_trajectory(system: &SplitSystem, z0: &StateVector, grid: TimeGrid) -> Result<BaseTrajectory> {
    let (nx, ny) = (system.dim_x(), system.dim_y());
    if z0.dim_x() != nx || z0.dim_y() != ny {
        return Err(FoliateError::Dimension(format!(
            "initial state has dims ({}, {}), system has ({nx}, {ny})",
            z0.dim_x(),
            z0.dim_y()
        )));
    }
    let mut states = TimeGridFunction::zeros(grid, nx, ny);
    let mut nonlinear = TimeGridFunction::zeros(grid, nx, ny);
    let mut x = z0.x.clone();
    let mut y = z0.y.clone();
    let mut work = Rk4Work::new(nx + ny);
    let trivial = z0.x.iter().chain(&z0.y).all(|v| *v == 0.0) && {
        let h = system.nonlinear(z0);
        h.x.iter().chain(&h.y).all(|v| *v == 0.0)
    };
    for i in 0..grid.n_points() {
        if i > 0 && !trivial {
            rk4_step(system, grid.h(), &mut x, &mut y, &mut work);
        }
        if !x.iter().chain(&y).all(|v| v.is_finite()) {
            return Err(FoliateError::Divergence {
                iteration: 0,
                node: i,
                what: format!("base trajectory of {} is not finite", system.label()),
            });
        }
        states.x_mut(i).copy_from_slice(&x);
        states.y_mut(i).copy_from_slice(&y);
        let (fx, gy) = {
            let s = i * (nx + ny);
            let (a, b) = nonlinear.values[s..s + nx + ny].split_at_mut(nx);
            (a, b)
        };
        system.nonlinear_into(&x, &y, fx, gy);
    }
    Ok(BaseTrajectory {
        grid,
        states,
        nonlinear,
    })
}

/// Integrates `n_steps` RK4 steps and returns the end state.
pub fn rk4_flow(system: &SplitSystem, z0: &StateVector, h: f64, n_steps: usize) -> Result<StateVector> {
    let mut x = z0.x.clone();
    let mut y = z0.y.clone();
    let mut work = Rk4Work::new(x.len() + y.len());
    for step in 0..n_steps {
        rk4_step(system, h, &mut x, &mut y, &mut work);
        if !x.iter().chain(&y).all(|v| v.is_finite()) {
            return Err(FoliateError::Divergence {
                iteration: 0,
                node: step + 1,
                what: format!("trajectory of {} is not finite", system.label()),
            });
        }
    }
    Ok(StateVector::new(x, y))
}

/// `v_j e^{lambda_j dt}`.
pub fn propagate_diag(spectrum: &[f64], dt: f64, v: &[f64]) -> Result<Vec<f64>> {
    if spectrum.len() != v.len() {
        return Err(FoliateError::Dimension(format!(
            "spectrum has length {}, vector has length {}",
            spectrum.len(),
            v.len()
        )));
    }
    Ok(spectrum
        .iter()
        .zip(v)
        .map(|(l, a)| a * (l * dt).exp())
        .collect())
}

/// `(h/3)(f0 + 4 f1 + f2)`.
#[inline]
pub fn simpson(f0: f64, f1: f64, f2: f64, h: f64) -> f64 {
    h / 3.0 * (f0 + 4.0 * f1 + f2)
}

/// `(3h/8)(f0 + 3 f1 + 3 f2 + f3)`.
#[inline]
pub fn simpson38(f0: f64, f1: f64, f2: f64, f3: f64, h: f64) -> f64 {
    0.375 * h * (f0 + 3.0 * (f1 + f2) + f3)
}

pub fn simpson_vec(f: [&[f64]; 3], h: f64) -> Vec<f64> {
    (0..f[0].len())
        .map(|j| simpson(f[0][j], f[1][j], f[2][j], h))
        .collect()
}

pub fn simpson38_vec(f: [&[f64]; 4], h: f64) -> Vec<f64> {
    (0..f[0].len())
        .map(|j| simpson38(f[0][j], f[1][j], f[2][j], f[3][j], h))
        .collect()
}

/// Smallest even `N >= 4` with `e^{sigma t_N} <= (1 - kappa) h^5 / (kappa |x|)`.
pub fn choose_tail(gap: &SpectralGap, h: f64, x_norm: f64) -> Result<TimeGrid> {
    if gap.sigma >= 0.0 {
        return Err(FoliateError::InfeasibleTail { sigma: gap.sigma });
    }
    if !(x_norm > 0.0 && x_norm.is_finite()) {
        return Err(FoliateError::Config(format!(
            "tail rule needs a positive |x - x0|, got {x_norm}"
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(FoliateError::Config(format!("step must be positive, got {h}")));
    }
    // t_N >= ln(kappa |x| / ((1 - kappa) h^5)) / |sigma|
    let log_rhs = (gap.kappa * x_norm).ln() - (1.0 - gap.kappa).ln() - 5.0 * h.ln();
    let t_min = (log_rhs / -gap.sigma).max(0.0);
    let raw = (t_min / h * (1.0 - 1e-12)).ceil();
    if raw > 1e8 {
        return Err(FoliateError::Config(format!(
            "tail rule asks for {raw} grid intervals; pass an explicit N"
        )));
    }
    let mut n = (raw as usize).max(4);
    n += n % 2;
    TimeGrid::forward(h, n)
}

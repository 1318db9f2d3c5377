//! Leaves of the stable foliation by fixed-point iteration of the discretized
//! Lyapunov-Perron map
//!
//! `T(phi, x)(t) = ( e^{tA}(x - x0) + int_0^t e^{(t-s)A} dF(s) ds,
//!                   -int_t^inf e^{(t-s)B} dG(s) ds )`
//!
//! where `dF(s) = F(z(s, z0) + phi(s)) - F(z(s, z0))` and likewise for `G`.
//! The leaf through `z0` is the graph `Phi_{z0}(x) = y0 + Q phi(0)`.

use crate::error::{FoliateError, Result};
use crate::model::{SpectralGap, SplitSystem, StateVector};
use crate::timegrid::{choose_tail, rk4_trajectory, BaseTrajectory, TimeGrid, TimeGridFunction};

/// Magnitude (after the `sigma` weight) treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pwconst,
    Simp,
    Simpgs,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Pwconst => "pwconst",
            Method::Simp => "simp",
            Method::Simpgs => "simpgs",
        })
    }
}

/// Initial iterate `phi^0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// `phi^0(t) = (e^{alpha t}(x - x0), 0)`.
    Exponential,
    /// `phi^0(t) = (x - x0, 0)`.
    Constant,
}

/// End of each step at which PWCONST freezes the integrand.
///
/// `Far` (the node farther from `t = 0`) is the left node of the original
/// construction on `t <= 0` and is invariant under time reversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Freeze {
    #[default]
    Far,
    Near,
}

/// PWCONST refinement schedule `h_j = h0 2^{-j}`, `N_j = j 2^j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub h0: f64,
}

impl Schedule {
    pub fn grid(&self, j: usize) -> Result<TimeGrid> {
        let pow = 2f64.powi(j as i32);
        TimeGrid::forward(self.h0 / pow, j * (1usize << j))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StableSolveConfig {
    pub method: Method,
    /// Step of a fixed grid (ignored when `schedule` is set).
    pub h: f64,
    /// Number of intervals; `None` applies the tail rule.
    pub n: Option<usize>,
    pub j_iterations: usize,
    pub gap: SpectralGap,
    pub init: Init,
    pub freeze: Freeze,
    /// PWCONST only: refine the grid at every iteration.
    pub schedule: Option<Schedule>,
}

impl StableSolveConfig {
    pub fn new(method: Method, h: f64, n: Option<usize>, j_iterations: usize, gap: SpectralGap) -> Self {
        StableSolveConfig {
            method,
            h,
            n,
            j_iterations,
            gap,
            init: Init::Exponential,
            freeze: Freeze::Far,
            schedule: None,
        }
    }

    pub fn pwconst_schedule(j_iterations: usize, h0: f64, gap: SpectralGap) -> Self {
        StableSolveConfig {
            method: Method::Pwconst,
            h: h0,
            n: None,
            j_iterations,
            gap,
            init: Init::Exponential,
            freeze: Freeze::Far,
            schedule: Some(Schedule { h0 }),
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_freeze(mut self, freeze: Freeze) -> Self {
        self.freeze = freeze;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.j_iterations == 0 {
            return Err(FoliateError::Config("J must be at least 1".into()));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(FoliateError::Config(format!("step must be positive, got {}", self.h)));
        }
        if self.schedule.is_some() && self.method != Method::Pwconst {
            return Err(FoliateError::Config(
                "a refinement schedule is only defined for PWCONST".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of a leaf solve.
///
/// `value` is the graph value (`Phi_{z0}(x)` on the stable side, `Psi(y)` on
/// the unstable side); `iterate_history[j-1]` is the value after `j` sweeps.
#[derive(Debug, Clone)]
pub struct LeafResult {
    pub value: Vec<f64>,
    pub initial_value: Vec<f64>,
    pub iterate_history: Vec<Vec<f64>>,
    /// `|phi^j - phi^{j-1}|_sigma` for `j = 1..=J`.
    pub sigma_norm_history: Vec<f64>,
    /// The last iterate (in the coordinates of the solved problem).
    pub phi: TimeGridFunction,
    pub warnings: Vec<String>,
}

pub type StableLeafResult = LeafResult;

impl LeafResult {
    pub fn first_step(&self) -> f64 {
        self.sigma_norm_history[0]
    }
}

/// A single leaf query with its base trajectory.
pub(crate) struct LeafProblem<'a> {
    pub system: &'a SplitSystem,
    pub base: &'a BaseTrajectory,
    pub gap: SpectralGap,
    pub dx0: Vec<f64>,
    pub freeze: Freeze,
}

/// Node-wise nonlinear increments `dF_k`, `dG_k`.
struct Increments {
    nx: usize,
    ny: usize,
    df: Vec<f64>,
    dg: Vec<f64>,
    zx: Vec<f64>,
    zy: Vec<f64>,
}

impl Increments {
    fn new(n_points: usize, nx: usize, ny: usize) -> Self {
        Increments {
            nx,
            ny,
            df: vec![0.0; n_points * nx],
            dg: vec![0.0; n_points * ny],
            zx: vec![0.0; nx],
            zy: vec![0.0; ny],
        }
    }

    #[inline]
    fn f(&self, k: usize) -> &[f64] {
        &self.df[k * self.nx..(k + 1) * self.nx]
    }

    #[inline]
    fn g(&self, k: usize) -> &[f64] {
        &self.dg[k * self.ny..(k + 1) * self.ny]
    }

    /// `H(z_k + (p, q)) - H(z_k)`.
    #[inline]
    fn eval(&mut self, prob: &LeafProblem, k: usize, p: &[f64], q: &[f64]) {
        let base = prob.base;
        for ((z, b), v) in self.zx.iter_mut().zip(base.states.x(k)).zip(p) {
            *z = b + v;
        }
        for ((z, b), v) in self.zy.iter_mut().zip(base.states.y(k)).zip(q) {
            *z = b + v;
        }
        let (nx, ny) = (self.nx, self.ny);
        let fx = &mut self.df[k * nx..(k + 1) * nx];
        let gy = &mut self.dg[k * ny..(k + 1) * ny];
        prob.system.nonlinear_into(&self.zx, &self.zy, fx, gy);
        for (d, b) in fx.iter_mut().zip(base.f(k)) {
            *d -= b;
        }
        for (d, b) in gy.iter_mut().zip(base.g(k)) {
            *d -= b;
        }
    }
}

impl<'a> LeafProblem<'a> {
    fn grid(&self) -> &TimeGrid {
        &self.base.grid
    }

    pub fn initial(&self, init: Init) -> TimeGridFunction {
        let (nx, ny) = (self.system.dim_x(), self.system.dim_y());
        let alpha = self.gap.alpha;
        TimeGridFunction::from_fn(*self.grid(), nx, ny, |t| {
            let s = match init {
                Init::Exponential => (alpha * t).exp(),
                Init::Constant => 1.0,
            };
            StateVector::new(self.dx0.iter().map(|v| s * v).collect(), vec![0.0; ny])
        })
    }

    /// One application of the discretized map.
    pub fn sweep(&self, method: Method, phi: &TimeGridFunction, iteration: usize) -> Result<TimeGridFunction> {
        let out = match method {
            Method::Pwconst => self.sweep_pwconst(phi),
            Method::Simp => self.sweep_simp(phi, false)?,
            Method::Simpgs => self.sweep_simp(phi, true)?,
        };
        self.guard(&out, iteration)?;
        Ok(out)
    }

    fn guard(&self, phi: &TimeGridFunction, iteration: usize) -> Result<()> {
        for i in 0..phi.grid().n_points() {
            let raw = phi.node_norm(i);
            if !raw.is_finite() {
                return Err(FoliateError::Divergence {
                    iteration,
                    node: i,
                    what: "non-finite iterate".into(),
                });
            }
            let w = phi.weighted(i, raw, self.gap.sigma);
            if w > DIVERGENCE_THRESHOLD {
                return Err(FoliateError::Divergence {
                    iteration,
                    node: i,
                    what: format!("weighted magnitude {w:e} exceeds {DIVERGENCE_THRESHOLD:e}"),
                });
            }
        }
        Ok(())
    }

    fn increments(&self, phi: &TimeGridFunction) -> Increments {
        let n_points = phi.grid().n_points();
        let mut inc = Increments::new(n_points, phi.dim_x(), phi.dim_y());
        for k in 0..n_points {
            inc.eval(self, k, phi.x(k), phi.y(k));
        }
        inc
    }

    /// Integrand frozen at one end of each step; exponential integrals in closed form.
    fn sweep_pwconst(&self, phi: &TimeGridFunction) -> TimeGridFunction {
        let grid = *phi.grid();
        let (h, n) = (grid.h(), grid.n());
        let inc = self.increments(phi);
        let a = self.system.spectrum_a();
        let b = self.system.spectrum_b();
        let ea: Vec<f64> = a.iter().map(|l| (h * l).exp()).collect();
        let wa: Vec<f64> = a.iter().map(|&l| phi_one(h, l)).collect();
        let eb: Vec<f64> = b.iter().map(|l| (-h * l).exp()).collect();
        let wb: Vec<f64> = b.iter().map(|&l| phi_one(h, -l)).collect();
        let off = match self.freeze {
            Freeze::Near => 0,
            Freeze::Far => 1,
        };

        let mut out = TimeGridFunction::zeros(grid, phi.dim_x(), phi.dim_y());
        out.x_mut(0).copy_from_slice(&self.dx0);
        for i in 0..n {
            let prev = out.x(i).to_vec();
            let df = inc.f(i + off);
            for (j, v) in out.x_mut(i + 1).iter_mut().enumerate() {
                *v = ea[j] * prev[j] + wa[j] * df[j];
            }
        }
        for i in (0..n).rev() {
            let next = out.y(i + 1).to_vec();
            let dg = inc.g(i + off);
            for (j, v) in out.y_mut(i).iter_mut().enumerate() {
                *v = eb[j] * next[j] - wb[j] * dg[j];
            }
        }
        out
    }

    /// Simpson recursions; `gauss_seidel` feeds freshly updated nodes back
    /// into the sums.
    fn sweep_simp(&self, phi: &TimeGridFunction, gauss_seidel: bool) -> Result<TimeGridFunction> {
        let grid = *phi.grid();
        let (h, n) = (grid.h(), grid.n());
        if n < 3 {
            return Err(FoliateError::Config(format!(
                "Simpson sweeps need N >= 3, got N = {n}"
            )));
        }
        let (nx, ny) = (phi.dim_x(), phi.dim_y());
        let mut inc = self.increments(phi);
        let a = self.system.spectrum_a();
        let b = self.system.spectrum_b();
        let e = |l: &f64, s: f64| (s * h * l).exp();
        let ea1: Vec<f64> = a.iter().map(|l| e(l, 1.0)).collect();
        let ea2: Vec<f64> = a.iter().map(|l| e(l, 2.0)).collect();
        let ea_m1: Vec<f64> = a.iter().map(|l| e(l, -1.0)).collect();
        let ea_m2: Vec<f64> = a.iter().map(|l| e(l, -2.0)).collect();
        let eb1: Vec<f64> = b.iter().map(|l| e(l, 1.0)).collect();
        let eb2: Vec<f64> = b.iter().map(|l| e(l, 2.0)).collect();
        let eb_m1: Vec<f64> = b.iter().map(|l| e(l, -1.0)).collect();
        let eb_m2: Vec<f64> = b.iter().map(|l| e(l, -2.0)).collect();
        let h3 = h / 3.0;
        let h38 = 0.375 * h;

        let mut out = TimeGridFunction::zeros(grid, nx, ny);

        // X component, forward
        out.x_mut(0).copy_from_slice(&self.dx0);
        if gauss_seidel {
            inc.eval(self, 0, &self.dx0, phi.y(0));
        }
        {
            // int_0^{t1} = int_0^{t3} (3/8 rule) - int_{t1}^{t3} (Simpson), weights e^{(t1 - tk)A}
            let (f0, f1, f2, f3) = (inc.f(0), inc.f(1), inc.f(2), inc.f(3));
            let row: Vec<f64> = (0..nx)
                .map(|j| {
                    let (w0, w2, w3) = (ea1[j], ea_m1[j], ea_m2[j]);
                    let s38 = h38 * (w0 * f0[j] + 3.0 * f1[j] + 3.0 * w2 * f2[j] + w3 * f3[j]);
                    let s = h3 * (f1[j] + 4.0 * w2 * f2[j] + w3 * f3[j]);
                    ea1[j] * self.dx0[j] + s38 - s
                })
                .collect();
            out.x_mut(1).copy_from_slice(&row);
        }
        if gauss_seidel {
            let p = out.x(1).to_vec();
            inc.eval(self, 1, &p, phi.y(1));
        }
        for i in 1..n {
            let row: Vec<f64> = {
                let (fm, f0, fp) = (inc.f(i - 1), inc.f(i), inc.f(i + 1));
                let pm = out.x(i - 1);
                (0..nx)
                    .map(|j| ea2[j] * pm[j] + h3 * (ea2[j] * fm[j] + 4.0 * ea1[j] * f0[j] + fp[j]))
                    .collect()
            };
            out.x_mut(i + 1).copy_from_slice(&row);
            if gauss_seidel {
                inc.eval(self, i + 1, &row, phi.y(i + 1));
            }
        }

        // Y component, backward from Q(t_N) = 0
        if gauss_seidel {
            let zero = vec![0.0; ny];
            let p = out.x(n).to_vec();
            inc.eval(self, n, &p, &zero);
        }
        {
            // -int_{t_{N-1}}^{t_N} = -(int_{t_{N-3}}^{t_N} - int_{t_{N-3}}^{t_{N-1}}), weights e^{(t_{N-1} - tk)B}
            let (g0, g1, g2, g3) = (inc.g(n - 3), inc.g(n - 2), inc.g(n - 1), inc.g(n));
            let row: Vec<f64> = (0..ny)
                .map(|j| {
                    let (w0, w1, w3) = (eb2[j], eb1[j], eb_m1[j]);
                    let s38 = h38 * (w0 * g0[j] + 3.0 * w1 * g1[j] + 3.0 * g2[j] + w3 * g3[j]);
                    let s = h3 * (w0 * g0[j] + 4.0 * w1 * g1[j] + g2[j]);
                    s - s38
                })
                .collect();
            out.y_mut(n - 1).copy_from_slice(&row);
        }
        if gauss_seidel {
            let (p, q) = (out.x(n - 1).to_vec(), out.y(n - 1).to_vec());
            inc.eval(self, n - 1, &p, &q);
        }
        for m in (0..n - 1).rev() {
            let row: Vec<f64> = {
                let (g0, g1, g2) = (inc.g(m), inc.g(m + 1), inc.g(m + 2));
                let qp = out.y(m + 2);
                (0..ny)
                    .map(|j| eb_m2[j] * qp[j] - h3 * (g0[j] + 4.0 * eb_m1[j] * g1[j] + eb_m2[j] * g2[j]))
                    .collect()
            };
            out.y_mut(m).copy_from_slice(&row);
            if gauss_seidel && m > 0 {
                let p = out.x(m).to_vec();
                inc.eval(self, m, &p, &row);
            }
        }
        Ok(out)
    }

    pub fn value(&self, phi: &TimeGridFunction) -> Vec<f64> {
        self.base
            .states
            .y(0)
            .iter()
            .zip(phi.y(0))
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// `(e^{h l} - 1) / l`, with the limit `h` at `l = 0`.
#[inline]
fn phi_one(h: f64, l: f64) -> f64 {
    if l == 0.0 {
        h
    } else {
        (h * l).exp_m1() / l
    }
}

fn check_query(system: &SplitSystem, z0: &StateVector, x: &[f64], gap: &SpectralGap) -> Result<()> {
    if z0.dim_x() != system.dim_x() || z0.dim_y() != system.dim_y() || x.len() != system.dim_x() {
        return Err(FoliateError::Dimension(format!(
            "query (base dims ({}, {}), x dim {}) does not match system dims ({}, {})",
            z0.dim_x(),
            z0.dim_y(),
            x.len(),
            system.dim_x(),
            system.dim_y()
        )));
    }
    system.check_gap(gap)
}

fn ratio_warning(history: &[f64], gap: &SpectralGap, warnings: &mut Vec<String>) {
    if !gap.is_validated() {
        return;
    }
    let j = history.len();
    if j < 3 {
        return;
    }
    let (prev, last) = (history[j - 2], history[j - 1]);
    if prev > 1e-13 && last > 1.1 * gap.kappa * prev {
        warnings.push(format!(
            "iteration {j}: sigma-norm ratio {:.3} exceeds kappa = {:.3} by more than 10%",
            last / prev,
            gap.kappa
        ));
    }
}

fn trivial_result(z0: &StateVector, grid: TimeGrid, j: usize) -> LeafResult {
    LeafResult {
        value: z0.y.clone(),
        initial_value: z0.y.clone(),
        iterate_history: vec![z0.y.clone(); j],
        sigma_norm_history: vec![0.0; j],
        phi: TimeGridFunction::zeros(grid, z0.dim_x(), z0.dim_y()),
        warnings: Vec::new(),
    }
}

/// `Phi_{z0}(x)` after `J` sweeps on a fixed grid (or the PWCONST schedule if configured).
pub fn solve_stable_leaf(
    system: &SplitSystem,
    z0: &StateVector,
    x: &[f64],
    cfg: &StableSolveConfig,
) -> Result<StableLeafResult> {
    cfg.validate()?;
    if cfg.schedule.is_some() {
        return solve_stable_leaf_pwconst(system, z0, x, cfg);
    }
    check_query(system, z0, x, &cfg.gap)?;
    let dx0: Vec<f64> = x.iter().zip(&z0.x).map(|(a, b)| a - b).collect();
    let dx_norm = crate::model::euclid(&dx0);
    let grid = match cfg.n {
        Some(n) => TimeGrid::forward(cfg.h, n)?,
        None if dx_norm == 0.0 => TimeGrid::forward(cfg.h, 4)?,
        None => choose_tail(&cfg.gap, cfg.h, dx_norm)?,
    };
    if dx_norm == 0.0 {
        return Ok(trivial_result(z0, grid, cfg.j_iterations));
    }
    let base = rk4_trajectory(system, z0, grid)?;
    let prob = LeafProblem {
        system,
        base: &base,
        gap: cfg.gap,
        dx0,
        freeze: cfg.freeze,
    };
    let mut phi = prob.initial(cfg.init);
    let initial_value = prob.value(&phi);
    let mut iterate_history = Vec::with_capacity(cfg.j_iterations);
    let mut sigma_norm_history = Vec::with_capacity(cfg.j_iterations);
    let mut warnings = Vec::new();
    for j in 1..=cfg.j_iterations {
        let next = prob.sweep(cfg.method, &phi, j)?;
        sigma_norm_history.push(next.sigma_distance(&phi, cfg.gap.sigma));
        iterate_history.push(prob.value(&next));
        ratio_warning(&sigma_norm_history, &cfg.gap, &mut warnings);
        phi = next;
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(LeafResult {
        value: iterate_history.last().cloned().unwrap_or_default(),
        initial_value,
        iterate_history,
        sigma_norm_history,
        phi,
        warnings,
    })
}

/// PWCONST with the grid refined at every iteration: sweep `j` runs on
/// `(h0 2^{-j}, j 2^j)` after resampling the previous iterate.
pub fn solve_stable_leaf_pwconst(
    system: &SplitSystem,
    z0: &StateVector,
    x: &[f64],
    cfg: &StableSolveConfig,
) -> Result<StableLeafResult> {
    let schedule = cfg.schedule.ok_or_else(|| FoliateError::Config("PWCONST refinement needs a schedule".into()))?;
    let (j_iterations, gap, init) = (cfg.j_iterations, cfg.gap, cfg.init);
    if j_iterations == 0 {
        return Err(FoliateError::Config("J must be at least 1".into()));
    }
    if !(schedule.h0 > 0.0 && schedule.h0.is_finite()) {
        return Err(FoliateError::Config(format!(
            "schedule step h0 must be positive, got {}",
            schedule.h0
        )));
    }
    check_query(system, z0, x, &gap)?;
    let dx0: Vec<f64> = x.iter().zip(&z0.x).map(|(a, b)| a - b).collect();
    if crate::model::euclid(&dx0) == 0.0 {
        return Ok(trivial_result(z0, schedule.grid(j_iterations)?, j_iterations));
    }
    let mut phi: Option<TimeGridFunction> = None;
    let mut initial_value = Vec::new();
    let mut iterate_history = Vec::with_capacity(j_iterations);
    let mut sigma_norm_history = Vec::with_capacity(j_iterations);
    let warnings = Vec::new();
    for j in 1..=j_iterations {
        let grid = schedule.grid(j)?;
        let base = rk4_trajectory(system, z0, grid)?;
        let prob = LeafProblem {
            system,
            base: &base,
            gap,
            dx0: dx0.clone(),
            freeze: cfg.freeze,
        };
        let prev = match phi.take() {
            None => {
                let p = prob.initial(init);
                initial_value = prob.value(&p);
                p
            }
            Some(p) => p.resample_constant(grid),
        };
        let next = prob.sweep(Method::Pwconst, &prev, j)?;
        sigma_norm_history.push(next.sigma_distance(&prev, gap.sigma));
        iterate_history.push(prob.value(&next));
        phi = Some(next);
    }
    Ok(LeafResult {
        value: iterate_history.last().cloned().unwrap_or_default(),
        initial_value,
        iterate_history,
        sigma_norm_history,
        phi: phi.expect("at least one iteration"),
        warnings,
    })
}

/// One application of the discretized map to `varphi` with base trajectory `base`.
pub fn t_map_apply(
    system: &SplitSystem,
    varphi: &TimeGridFunction,
    x: &[f64],
    base: &BaseTrajectory,
    gap: &SpectralGap,
    method: Method,
) -> Result<TimeGridFunction> {
    if varphi.grid() != &base.grid {
        return Err(FoliateError::Dimension(
            "iterate and base trajectory live on different grids".into(),
        ));
    }
    let z0 = base.z0();
    check_query(system, &z0, x, gap)?;
    let prob = LeafProblem {
        system,
        base,
        gap: *gap,
        dx0: x.iter().zip(&z0.x).map(|(a, b)| a - b).collect(),
        freeze: Freeze::Far,
    };
    prob.sweep(method, varphi, 1)
}

//! Tracking initial conditions as the fixed point of
//! `Sigma^{j1,j2}: (x, y) -> (Psi^{j1}(y), Phi^{j2}(x))`, and the rate
//! comparison between the tracking point and the linear projection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{FoliateError, Result, Side};
use crate::model::{euclid, SplitSystem, StateVector};
use crate::stable::{solve_stable_leaf, StableSolveConfig};
use crate::timegrid::{rk4_trajectory, TimeGrid};
use crate::unstable::solve_unstable_leaf;

/// Order of the two half-steps of `Sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaOrder {
    /// Both halves from the previous iterate.
    #[default]
    Jacobi,
    /// `x' = Psi(y)`, then `y' = Phi(x')`.
    GaussSeidel,
}

/// Norm used for outer residuals and reported errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuterNorm {
    /// `max(|x|, |y|)`.
    #[default]
    Max,
    Euclidean,
}

impl OuterNorm {
    pub fn distance(&self, a: &StateVector, b: &StateVector) -> f64 {
        match self {
            OuterNorm::Max => a.distance(b),
            OuterNorm::Euclidean => a.sub(b).euclidean_norm(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackingConfig {
    /// Solver for `Psi` (its `j_iterations` is `j1`); gap constants of the original system.
    pub unstable: StableSolveConfig,
    /// Solver for `Phi` (its `j_iterations` is `j2`).
    pub stable: StableSolveConfig,
    /// Base of the unstable leaf `N_{x1}`; the origin gives the inertial manifold.
    pub unstable_base: StateVector,
    /// Base of the stable leaf `M_{y1}`.
    pub stable_base: StateVector,
    pub max_outer: usize,
    pub outer_tol: f64,
    pub order: SigmaOrder,
    pub norm: OuterNorm,
}

impl TrackingConfig {
    /// Tracking point of `z0`: stable leaf through `z0`, inertial manifold through the origin.
    pub fn new(z0: &StateVector, unstable: StableSolveConfig, stable: StableSolveConfig) -> Result<Self> {
        let cfg = TrackingConfig {
            unstable,
            stable,
            unstable_base: StateVector::zeros(z0.dim_x(), z0.dim_y()),
            stable_base: z0.clone(),
            max_outer: 50,
            outer_tol: 1e-12,
            order: SigmaOrder::Jacobi,
            norm: OuterNorm::Max,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn j1(&self) -> usize {
        self.unstable.j_iterations
    }

    pub fn j2(&self) -> usize {
        self.stable.j_iterations
    }

    pub fn validate(&self) -> Result<()> {
        self.stable.gap.check_tracking()?;
        self.unstable.gap.check_tracking()?;
        if self.max_outer == 0 || !(self.outer_tol >= 0.0) {
            return Err(FoliateError::Config(format!(
                "need max_outer >= 1 and outer_tol >= 0 (got {}, {})",
                self.max_outer, self.outer_tol
            )));
        }
        if self.j1() == 0 || self.j2() == 0 {
            return Err(FoliateError::Config("j1 and j2 must be at least 1".into()));
        }
        Ok(())
    }

    /// `kappa` used by the a-priori bound (the larger of the two sides).
    pub fn kappa(&self) -> f64 {
        self.stable.gap.kappa.max(self.unstable.gap.kappa)
    }
}

/// One application of `Sigma^{j1,j2}` with the first-sweep sigma-norms
/// `(|psi^1 - psi^0|, |phi^1 - phi^0|)`.
#[derive(Debug, Clone)]
pub struct SigmaStep {
    pub z: StateVector,
    pub first_psi: f64,
    pub first_phi: f64,
}

pub fn sigma_step_detailed(system: &SplitSystem, z: &StateVector, cfg: &TrackingConfig) -> Result<SigmaStep> {
    let psi = solve_unstable_leaf(system, &cfg.unstable_base, &z.y, &cfg.unstable)
        .map_err(|e| e.on_side(Side::Unstable))?;
    let x_new = psi.value.clone();
    let x_for_phi = match cfg.order {
        SigmaOrder::Jacobi => &z.x,
        SigmaOrder::GaussSeidel => &x_new,
    };
    let phi = solve_stable_leaf(system, &cfg.stable_base, x_for_phi, &cfg.stable)
        .map_err(|e| e.on_side(Side::Stable))?;
    Ok(SigmaStep {
        z: StateVector::new(x_new, phi.value.clone()),
        first_psi: psi.first_step(),
        first_phi: phi.first_step(),
    })
}

pub fn sigma_step(system: &SplitSystem, z: &StateVector, cfg: &TrackingConfig) -> Result<StateVector> {
    Ok(sigma_step_detailed(system, z, cfg)?.z)
}

#[derive(Debug, Clone)]
pub struct TrackingResult {
    pub z_plus: StateVector,
    /// `z^0, z^1, ...`
    pub outer_history: Vec<StateVector>,
    /// `|z^{i+1} - z^i|` in the configured norm.
    pub residuals: Vec<f64>,
    pub c_constant: f64,
    pub kappa: f64,
    /// `c kappa^j / (1 - 2 kappa)`, `j = min(j1, j2)`; infinite when `kappa >= 1/2`.
    pub apriori_error: f64,
    pub warnings: Vec<String>,
}

/// `c_{j1,j2} = max(kappa^{j2-j} |phi^1 - phi^0|, kappa^{j1-j} |psi^1 - psi^0|)`.
pub fn c_constant(kappa: f64, j1: usize, j2: usize, first_psi: f64, first_phi: f64) -> f64 {
    let j = j1.min(j2);
    (kappa.powi((j2 - j) as i32) * first_phi).max(kappa.powi((j1 - j) as i32) * first_psi)
}

pub fn apriori_bound(c: f64, kappa: f64, j: usize) -> f64 {
    if kappa >= 0.5 {
        f64::INFINITY
    } else {
        c * kappa.powi(j as i32) / (1.0 - 2.0 * kappa)
    }
}

/// Iterates `Sigma^{j1,j2}` from `start` until the step is at most `outer_tol`.
///
/// `c_{j1,j2}` is taken from the first-sweep norms of the last outer step,
/// the evaluation closest to the fixed point.
pub fn solve_tracking(system: &SplitSystem, start: &StateVector, cfg: &TrackingConfig) -> Result<TrackingResult> {
    cfg.validate()?;
    let mut history = vec![start.clone()];
    let mut residuals = Vec::new();
    let mut z = start.clone();
    let mut last = None;
    for _ in 0..cfg.max_outer {
        let step = sigma_step_detailed(system, &z, cfg)?;
        let r = cfg.norm.distance(&step.z, &z);
        residuals.push(r);
        z = step.z.clone();
        history.push(z.clone());
        last = Some(step);
        if r <= cfg.outer_tol {
            break;
        }
    }
    let converged = residuals.last().is_some_and(|r| *r <= cfg.outer_tol);
    if !converged {
        return Err(FoliateError::IterationLimit {
            iterations: cfg.max_outer,
            last_residual: residuals.last().copied().unwrap_or(f64::NAN),
            residuals,
        });
    }
    let last = last.expect("at least one outer step");
    let kappa = cfg.kappa();
    let c = c_constant(kappa, cfg.j1(), cfg.j2(), last.first_psi, last.first_phi);
    let mut warnings = Vec::new();
    for (i, w) in residuals.windows(2).enumerate().skip(1) {
        if w[1] > 1.1 * w[0] && w[0] > 1e-12 {
            warnings.push(format!("outer residual grew at step {}: {:e} -> {:e}", i + 2, w[0], w[1]));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(TrackingResult {
        z_plus: z,
        outer_history: history,
        residuals,
        c_constant: c,
        kappa,
        apriori_error: apriori_bound(c, kappa, cfg.j1().min(cfg.j2())),
        warnings,
    })
}

/// Least-squares slope of `ln|z(t, z0) - z(t, z_ref)|` over `[0, window]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    /// Nodes used; fewer than requested when the difference reached zero.
    pub nodes: usize,
    pub truncated: bool,
}

pub fn tracking_rate(system: &SplitSystem, z0: &StateVector, z_ref: &StateVector, h: f64, window: f64) -> Result<RateFit> {
    let n = (window / h).round() as usize;
    if n < 1 {
        return Err(FoliateError::Config(format!("window {window} is shorter than the step {h}")));
    }
    let grid = TimeGrid::forward(h, n)?;
    let a = rk4_trajectory(system, z0, grid)?;
    let b = rk4_trajectory(system, z_ref, grid)?;
    let mut ts = Vec::with_capacity(n + 1);
    let mut ls = Vec::with_capacity(n + 1);
    let mut truncated = false;
    for i in 0..=n {
        let d = a.states.state(i).distance(&b.states.state(i));
        if !(d > 0.0) {
            truncated = true;
            break;
        }
        ts.push(grid.t(i));
        ls.push(d.ln());
    }
    if truncated {
        log::warn!("difference vanished after {} nodes; regression window truncated", ts.len());
    }
    if ts.len() < 2 {
        return Ok(RateFit { slope: f64::NAN, nodes: ts.len(), truncated });
    }
    let m = ts.len() as f64;
    let (tm, lm) = (ts.iter().sum::<f64>() / m, ls.iter().sum::<f64>() / m);
    let sxy: f64 = ts.iter().zip(&ls).map(|(t, l)| (t - tm) * (l - lm)).sum();
    let sxx: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
    Ok(RateFit { slope: sxy / sxx, nodes: ts.len(), truncated })
}

#[derive(Debug, Clone)]
pub struct RateSweepConfig {
    pub tracking: TrackingConfig,
    pub ball_radius: f64,
    pub h: f64,
    pub window: f64,
}

#[derive(Debug, Clone)]
pub struct RateSample {
    pub index: usize,
    pub z0: StateVector,
    pub z_plus: Option<StateVector>,
    pub slope_tracking: f64,
    pub slope_projected: f64,
    pub error: Option<String>,
}

/// Uniform draw in `{max(|x|, |y|) <= r}` by rejection from the cube.
pub fn sample_ball(rng: &mut impl Rng, dim_x: usize, dim_y: usize, r: f64) -> StateVector {
    loop {
        let z = StateVector::new(
            (0..dim_x).map(|_| rng.gen_range(-r..=r)).collect(),
            (0..dim_y).map(|_| rng.gen_range(-r..=r)).collect(),
        );
        if euclid(&z.x) <= r && euclid(&z.y) <= r {
            return z;
        }
    }
}

fn rate_sample(system: &SplitSystem, index: usize, seed: u64, cfg: &RateSweepConfig) -> RateSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let z0 = sample_ball(&mut rng, system.dim_x(), system.dim_y(), cfg.ball_radius);
    let projected = StateVector::new(vec![0.0; system.dim_x()], z0.y.clone());
    let run = || -> Result<(StateVector, f64, f64)> {
        let tc = TrackingConfig {
            stable_base: z0.clone(),
            ..cfg.tracking.clone()
        };
        let tr = solve_tracking(system, &z0, &tc)?;
        let st = tracking_rate(system, &z0, &tr.z_plus, cfg.h, cfg.window)?;
        let sp = tracking_rate(system, &z0, &projected, cfg.h, cfg.window)?;
        Ok((tr.z_plus, st.slope, sp.slope))
    };
    match run() {
        Ok((zp, st, sp)) => RateSample {
            index,
            z0,
            z_plus: Some(zp),
            slope_tracking: st,
            slope_projected: sp,
            error: None,
        },
        Err(e) => RateSample {
            index,
            z0,
            z_plus: None,
            slope_tracking: f64::NAN,
            slope_projected: f64::NAN,
            error: Some(e.to_string()),
        },
    }
}

/// Both slopes for `n_samples` random initial conditions; sample `i` depends
/// only on `(seed, i)`, so the table is identical for any thread count.
pub fn rate_sweep(system: &SplitSystem, n_samples: usize, cfg: &RateSweepConfig, seed: u64) -> Result<Vec<RateSample>> {
    if n_samples == 0 || !(cfg.ball_radius > 0.0) {
        return Err(FoliateError::Config(format!(
            "need n_samples >= 1 and a positive radius (got {n_samples}, {})",
            cfg.ball_radius
        )));
    }
    cfg.tracking.validate()?;
    let out: Vec<RateSample> = (0..n_samples)
        .into_par_iter()
        .map(|i| rate_sample(system, i, seed, cfg))
        .collect();
    let failed = out.iter().filter(|s| s.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {n_samples} samples failed");
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConeClass {
    UDominant,
    VDominant,
    /// `|v| - |u|` changes sign once inside `(t_lo, t_hi]`.
    Crossing { t_lo: f64, t_hi: f64 },
}

/// Compares `|u(t)| = |x(t,z1) - x(t,z2)|` with `|v(t)|` on `[0, horizon]`.
pub fn cone_classify(system: &SplitSystem, z1: &StateVector, z2: &StateVector, h: f64, horizon: f64) -> Result<ConeClass> {
    if z1 == z2 {
        return Err(FoliateError::Domain("cone classification needs two distinct points".into()));
    }
    let n = ((horizon / h).round() as usize).max(1);
    let grid = TimeGrid::forward(h, n)?;
    let a = rk4_trajectory(system, z1, grid)?;
    let b = rk4_trajectory(system, z2, grid)?;
    let gap = |i: usize| {
        let u: Vec<f64> = a.states.x(i).iter().zip(b.states.x(i)).map(|(p, q)| p - q).collect();
        let v: Vec<f64> = a.states.y(i).iter().zip(b.states.y(i)).map(|(p, q)| p - q).collect();
        euclid(&v) - euclid(&u)
    };
    let first = gap(0);
    if first > 0.0 {
        return Ok(ConeClass::VDominant);
    }
    for i in 1..=n {
        if gap(i) > 0.0 {
            return Ok(ConeClass::Crossing {
                t_lo: grid.t(i - 1),
                t_hi: grid.t(i),
            });
        }
    }
    Ok(ConeClass::UDominant)
}

#[derive(Debug, Clone)]
pub struct LeafBundle {
    pub times: Vec<f64>,
    /// `trajectories[k][i]` is the state of point `k` at `times[i]`.
    pub trajectories: Vec<Vec<StateVector>>,
    /// Pairwise distances at the final time.
    pub final_distances: Vec<Vec<f64>>,
}

/// Integrates every point over `[0, horizon]`, keeping every `stride`-th node.
pub fn leaf_equivalence_experiment(
    system: &SplitSystem,
    z_list: &[StateVector],
    h: f64,
    horizon: f64,
    stride: usize,
) -> Result<LeafBundle> {
    if z_list.is_empty() {
        return Err(FoliateError::Config("no points given".into()));
    }
    let n = ((horizon / h).round() as usize).max(1);
    let grid = TimeGrid::forward(h, n)?;
    let stride = stride.max(1);
    let keep: Vec<usize> = (0..=n).filter(|i| i % stride == 0 || *i == n).collect();
    let trajectories = z_list
        .iter()
        .map(|z| {
            let t = rk4_trajectory(system, z, grid)?;
            Ok(keep.iter().map(|&i| t.states.state(i)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let last: Vec<&StateVector> = trajectories.iter().map(|t| t.last().expect("non-empty")).collect();
    let final_distances = last
        .iter()
        .map(|a| last.iter().map(|b| a.distance(b)).collect())
        .collect();
    Ok(LeafBundle {
        times: keep.iter().map(|&i| grid.t(i)).collect(),
        trajectories,
        final_distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::toy::{toy_system, toy_transform};
    use crate::model::{Nonlinearity, SpectralGap};
    use crate::oracle::ToyOracle;
    use crate::stable::{Init, Method};
    use std::sync::Arc;

    fn toy_cfg(j: usize, z0: &StateVector) -> TrackingConfig {
        let gap = SpectralGap::with_sigma(-1.0, 1.0, 0.1, 0.0).unwrap();
        let leaf = |j| StableSolveConfig::new(Method::Simpgs, 0.01, Some(2000), j, gap).with_init(Init::Constant);
        let mut cfg = TrackingConfig::new(z0, leaf(j), leaf(j)).unwrap();
        cfg.order = SigmaOrder::GaussSeidel;
        cfg.norm = OuterNorm::Euclidean;
        cfg.outer_tol = 1e-13;
        cfg
    }

    #[test]
    fn linear_system_in_one_step() {
        struct Zero;
        impl Nonlinearity for Zero {
            fn eval(&self, _: &[f64], _: &[f64], fx: &mut [f64], gy: &mut [f64]) {
                fx.fill(0.0);
                gy.fill(0.0);
            }
        }
        let sys = SplitSystem::new(vec![-1.0], vec![1.0], Arc::new(Zero), None).unwrap();
        let gap = SpectralGap::with_sigma(-1.0, 1.0, 0.1, 0.0).unwrap();
        let leaf = StableSolveConfig::new(Method::Simp, 0.05, Some(400), 2, gap);
        let z0 = StateVector::new(vec![0.7], vec![-0.4]);
        let cfg = TrackingConfig::new(&z0, leaf.clone(), leaf).unwrap();
        let z1 = sigma_step(&sys, &StateVector::new(vec![2.0], vec![3.0]), &cfg).unwrap();
        assert_eq!(z1, StateVector::new(vec![0.0], vec![-0.4]));
        let r = solve_tracking(&sys, &z0, &cfg).unwrap();
        assert_eq!(r.z_plus, StateVector::new(vec![0.0], vec![-0.4]));
    }

    #[test]
    fn toy_tracking_point() {
        let p = 10.0;
        let sys = toy_system(p).unwrap();
        let z0 = toy_transform([1.0, 1.0], p).unwrap();
        let cfg = toy_cfg(15, &z0);
        let r = solve_tracking(&sys, &StateVector::new(vec![3.0], vec![3.0]), &cfg).unwrap();
        let exact = ToyOracle::new(p).unwrap().exact_tracking_ic([1.0, 1.0]);
        assert!(r.z_plus.distance(&exact) < 1e-9, "{:e}", r.z_plus.distance(&exact));
        assert!((cfg.norm.distance(&r.outer_history[0], &exact) - 3.5429).abs() < 1e-3);
        // contraction: Lip(Sigma) <= kappa/(1-kappa) < 1/9
        for w in r.residuals.windows(2).take(3) {
            assert!(w[1] <= (cfg.kappa() / (1.0 - cfg.kappa()) + 0.1) * w[0]);
        }
        let again = sigma_step(&sys, &r.z_plus, &cfg).unwrap();
        assert!(again.distance(&r.z_plus) <= 1e-12);
    }

    #[test]
    fn apriori_bound_holds_on_toy() {
        // small j, where the truncated iteration rather than the grid dominates the error
        let p = 10.0;
        let sys = toy_system(p).unwrap();
        let z0 = toy_transform([1.0, 1.0], p).unwrap();
        let exact = ToyOracle::new(p).unwrap().exact_tracking_ic([1.0, 1.0]);
        for j in 1..=4 {
            let cfg = toy_cfg(j, &z0);
            let r = solve_tracking(&sys, &z0, &cfg).unwrap();
            let err = r.z_plus.distance(&exact);
            assert!(err <= r.apriori_error, "j = {j}: {err:e} > {:e}", r.apriori_error);
        }
    }

    #[test]
    fn tracking_inequality_on_toy() {
        let p = 10.0;
        let sys = toy_system(p).unwrap();
        let o = ToyOracle::new(p).unwrap();
        for zt in [[1.0, 1.0], [-0.5, 0.3], [2.0, -1.0]] {
            let z0 = toy_transform(zt, p).unwrap();
            let zp = o.exact_tracking_ic(zt);
            let grid = TimeGrid::forward(0.01, 500).unwrap();
            let a = rk4_trajectory(&sys, &z0, grid).unwrap();
            let b = rk4_trajectory(&sys, &zp, grid).unwrap();
            let d0 = z0.distance(&zp);
            for i in 0..=500 {
                let bound = ((-1.0 + 0.1) * grid.t(i)).exp() * d0;
                assert!(a.states.state(i).distance(&b.states.state(i)) <= bound * (1.0 + 1e-6));
            }
        }
    }

    #[test]
    fn projected_ic_starts_u_dominant() {
        let sys = toy_system(10.0).unwrap();
        let z1 = toy_transform([0.5, 0.4], 10.0).unwrap();
        let z2 = StateVector::new(vec![0.0], z1.y.clone());
        assert!(matches!(cone_classify(&sys, &z1, &z2, 0.01, 8.0).unwrap(), ConeClass::Crossing { .. }));
        // two points on one exact stable leaf stay u-dominant
        let a = toy_transform([0.5, 0.4], 10.0).unwrap();
        let b = toy_transform([-1.5, 0.4], 10.0).unwrap();
        assert_eq!(cone_classify(&sys, &a, &b, 0.01, 8.0).unwrap(), ConeClass::UDominant);
        assert!(cone_classify(&sys, &a, &a, 0.01, 1.0).is_err());
    }

    #[test]
    fn rate_fit_recovers_exponent() {
        let sys = toy_system(10.0).unwrap();
        let o = ToyOracle::new(10.0).unwrap();
        let z0 = toy_transform([1.0, 0.2], 10.0).unwrap();
        let zp = o.exact_tracking_ic([1.0, 0.2]);
        let fit = tracking_rate(&sys, &z0, &zp, 0.01, 3.0).unwrap();
        assert!((fit.slope + 1.0).abs() < 0.1, "{}", fit.slope);
        let same = tracking_rate(&sys, &z0, &z0, 0.01, 1.0).unwrap();
        assert!(same.truncated && same.slope.is_nan());
    }

    #[test]
    fn sweep_is_deterministic() {
        let sys = toy_system(10.0).unwrap();
        let z = StateVector::new(vec![0.0], vec![0.0]);
        let gap = SpectralGap::with_sigma(-1.0, 1.0, 0.1, 0.0).unwrap();
        let leaf = StableSolveConfig::new(Method::Simp, 0.05, Some(300), 4, gap);
        let cfg = RateSweepConfig {
            tracking: TrackingConfig::new(&z, leaf.clone(), leaf).unwrap(),
            ball_radius: 0.5,
            h: 0.01,
            window: 6.0,
        };
        let a = rate_sweep(&sys, 6, &cfg, 7).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| rate_sweep(&sys, 6, &cfg, 7).unwrap());
        for (s, t) in a.iter().zip(&b) {
            assert_eq!(s.z0, t.z0);
            assert_eq!(s.slope_tracking.to_bits(), t.slope_tracking.to_bits());
            assert_eq!(s.slope_projected.to_bits(), t.slope_projected.to_bits());
        }
        assert!(a.iter().all(|s| s.error.is_none() && s.slope_tracking < s.slope_projected));
    }

    #[test]
    fn leaf_mates_converge() {
        let sys = toy_system(10.0).unwrap();
        let pts: Vec<StateVector> = [0.2, 0.9, -0.7]
            .iter()
            .map(|a| toy_transform([*a, 0.3], 10.0).unwrap())
            .collect();
        let bundle = leaf_equivalence_experiment(&sys, &pts, 0.01, 2.0, 10).unwrap();
        assert_eq!(bundle.times.len(), 21);
        for i in 0..3 {
            for j in 0..3 {
                let d0 = pts[i].distance(&pts[j]);
                assert!(bundle.final_distances[i][j] <= 2.0 * (-0.9f64 * 2.0).exp() * d0 + 1e-14);
            }
        }
    }
}

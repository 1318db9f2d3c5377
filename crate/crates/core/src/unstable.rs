//! Leaves of the unstable foliation and the inertial manifold.
//!
//! The unstable map on `t <= 0` is the stable map of the time-reversed,
//! block-swapped system, so every solve here runs through [`crate::stable`].

use crate::error::{FoliateError, Result};
use crate::model::{SpectralGap, SplitSystem, StateVector};
use crate::stable::{solve_stable_leaf, Init, LeafResult, Method, Schedule, StableSolveConfig};
use crate::timegrid::TimeGridFunction;

pub type UnstableLeafResult = LeafResult;

/// `(x, y) -> (y, x)`.
pub fn swap(z: &StateVector) -> StateVector {
    StateVector::new(z.y.clone(), z.x.clone())
}

/// Maps an iterate of the reversed problem back to `t <= 0` in the original blocks.
pub fn to_original(phi: &TimeGridFunction) -> TimeGridFunction {
    let grid = phi.grid().reversed();
    let mut out = TimeGridFunction::zeros(grid, phi.dim_y(), phi.dim_x());
    for i in 0..grid.n_points() {
        out.x_mut(i).copy_from_slice(phi.y(i));
        out.y_mut(i).copy_from_slice(phi.x(i));
    }
    out
}

/// The stable-side configuration that realizes `cfg` on the reversed system.
pub fn reversed_config(cfg: &StableSolveConfig) -> StableSolveConfig {
    StableSolveConfig {
        gap: cfg.gap.reversed(),
        ..cfg.clone()
    }
}

/// `Psi_{x1}(y)`: the unstable leaf through `z1` evaluated at `y`.
///
/// `cfg.gap` holds the constants of the original system; the initial iterate
/// `Init::Exponential` becomes `psi^0(t) = (0, e^{beta t}(y - y1))`.
pub fn solve_unstable_leaf(
    system: &SplitSystem,
    z1: &StateVector,
    y: &[f64],
    cfg: &StableSolveConfig,
) -> Result<UnstableLeafResult> {
    let rev = system.reversed();
    let mut res = solve_stable_leaf(&rev, &swap(z1), y, &reversed_config(cfg))?;
    res.phi = to_original(&res.phi);
    Ok(res)
}

/// One application of the discretized unstable map to `psi` (given on `t <= 0`)
/// around the trajectory through the origin.
pub fn u_map_apply(
    system: &SplitSystem,
    psi: &TimeGridFunction,
    y: &[f64],
    gap: &SpectralGap,
    method: Method,
) -> Result<TimeGridFunction> {
    let rev = system.reversed();
    let grid = psi.grid().reversed();
    let origin = StateVector::zeros(rev.dim_x(), rev.dim_y());
    let base = crate::timegrid::rk4_trajectory(&rev, &origin, grid)?;
    let phi = to_original(psi);
    let out = crate::stable::t_map_apply(&rev, &phi, y, &base, &gap.reversed(), method)?;
    Ok(to_original(&out))
}

fn manifold_warning(gap: &SpectralGap) -> Option<String> {
    (gap.alpha + gap.delta >= 0.0).then(|| {
        format!(
            "alpha + delta = {} >= 0: the computed leaf is not an inertial manifold",
            gap.alpha + gap.delta
        )
    })
}

/// `Psi(y)`, the unstable leaf through the origin.
pub fn solve_inertial_manifold(system: &SplitSystem, y: &[f64], cfg: &StableSolveConfig) -> Result<UnstableLeafResult> {
    let origin = StateVector::zeros(system.dim_x(), system.dim_y());
    let mut res = solve_unstable_leaf(system, &origin, y, cfg)?;
    if let Some(w) = manifold_warning(&cfg.gap) {
        log::warn!("{w}");
        res.warnings.push(w);
    }
    Ok(res)
}

/// PWCONST on the refinement schedule with a constant initial iterate `psi^0 = (0, y)`.
pub fn solve_inertial_manifold_pwconst(
    system: &SplitSystem,
    y: &[f64],
    j_iterations: usize,
    h0: f64,
    gap: SpectralGap,
) -> Result<UnstableLeafResult> {
    let cfg = StableSolveConfig {
        schedule: Some(Schedule { h0 }),
        ..StableSolveConfig::pwconst_schedule(j_iterations, h0, gap)
    }
    .with_init(Init::Constant);
    solve_inertial_manifold(system, y, &cfg)
}

/// Multiplication counts `(plain PWCONST, PWCONST + vector Aitken)` for a
/// schedule with `N_j = j 2^j`:
/// `sum_{j=1}^{J} j 2^j 6 dim Z` and `sum_{j=1}^{dim X + 1} j 2^j 6 dim Z + 2(dim X^3 + dim X^2)`.
pub fn count_multiplications(j_max: usize, dim_x: usize, dim_z: usize) -> Result<(u64, u64)> {
    if dim_x == 0 || dim_z < dim_x || j_max == 0 {
        return Err(FoliateError::Config(format!(
            "need J >= 1 and 1 <= dim X <= dim Z (got J = {j_max}, dim X = {dim_x}, dim Z = {dim_z})"
        )));
    }
    let sweep = |j_end: usize| -> u64 {
        (1..=j_end as u64).map(|j| j * (1u64 << j) * 6 * dim_z as u64).sum()
    };
    let dx = dim_x as u64;
    Ok((sweep(j_max), sweep(dim_x + 1) + 2 * (dx * dx * dx + dx * dx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::toy::toy_system;
    use crate::model::Nonlinearity;
    use std::sync::Arc;

    #[test]
    fn multiplication_counts() {
        assert_eq!(count_multiplications(10, 8, 16).unwrap().0, 1_769_664);
        assert_eq!(count_multiplications(10, 8, 16).unwrap().1, 787_776);
        assert_eq!(count_multiplications(1, 1, 1).unwrap().0, 12);
        assert!(count_multiplications(0, 1, 1).is_err());
    }

    #[test]
    fn linear_unstable_leaf() {
        struct Zero;
        impl Nonlinearity for Zero {
            fn eval(&self, _: &[f64], _: &[f64], fx: &mut [f64], gy: &mut [f64]) {
                fx.fill(0.0);
                gy.fill(0.0);
            }
        }
        let sys = SplitSystem::new(vec![-1.0], vec![2.0], Arc::new(Zero), None).unwrap();
        let gap = SpectralGap::new(-1.0, 2.0, 0.0).unwrap();
        let cfg = StableSolveConfig::new(Method::Simp, 0.05, Some(100), 2, gap);
        let r = solve_inertial_manifold(&sys, &[0.8], &cfg).unwrap();
        assert_eq!(r.value, vec![0.0]);
        for i in 0..=100 {
            let t = r.phi.grid().t(i);
            assert!(t <= 0.0);
            assert!((r.phi.y(i)[0] - 0.8 * (2.0 * t).exp()).abs() < 1e-15);
            assert_eq!(r.phi.x(i)[0], 0.0);
        }
    }

    #[test]
    fn origin_maps_to_origin() {
        let sys = toy_system(10.0).unwrap();
        let gap = SpectralGap::with_sigma(-1.0, 1.0, 0.2, 0.0).unwrap();
        let cfg = StableSolveConfig::new(Method::Simp, 0.1, Some(300), 3, gap);
        assert_eq!(solve_inertial_manifold(&sys, &[0.0], &cfg).unwrap().value, vec![0.0]);
    }

    #[test]
    fn duality_is_bit_identical() {
        let sys = toy_system(10.0).unwrap();
        let gap = SpectralGap::with_sigma(-1.0, 1.0, 0.2, 0.1).unwrap();
        let z1 = StateVector::new(vec![0.05], vec![0.3]);
        for method in [Method::Simp, Method::Simpgs, Method::Pwconst] {
            let cfg = StableSolveConfig::new(method, 0.1, Some(200), 4, gap);
            let u = solve_unstable_leaf(&sys, &z1, &[1.7], &cfg).unwrap();
            let s = solve_stable_leaf(&sys.reversed(), &swap(&z1), &[1.7], &reversed_config(&cfg)).unwrap();
            assert_eq!(u.value.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), s.value.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!(u.sigma_norm_history, s.sigma_norm_history);
            assert_eq!(u.phi, to_original(&s.phi));
        }
    }

    #[test]
    fn u_map_matches_solver_sweep() {
        let sys = toy_system(10.0).unwrap();
        let gap = SpectralGap::with_sigma(-1.0, 1.0, 0.2, 0.1).unwrap();
        let cfg = StableSolveConfig::new(Method::Simp, 0.1, Some(100), 1, gap);
        let one = solve_inertial_manifold(&sys, &[0.9], &cfg).unwrap();
        let grid = *one.phi.grid();
        let psi0 = TimeGridFunction::from_fn(grid, 1, 1, |t| StateVector::new(vec![0.0], vec![0.9 * t.exp()]));
        let swept = u_map_apply(&sys, &psi0, &[0.9], &gap, Method::Simp).unwrap();
        assert_eq!(swept, one.phi);
    }
}

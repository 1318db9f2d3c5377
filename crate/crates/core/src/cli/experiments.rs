use std::collections::BTreeMap;

use crate::accel::aitken_vector_sequence;
use crate::error::Result;
use crate::model::kse::{kse_galerkin, limit_cycle_point, LimitCycleSearch};
use crate::model::{euclid, Preparation, SpectralGap, SplitSystem, StateVector};
use crate::oracle::ToyOracle;
use crate::stable::{solve_stable_leaf, Method, StableSolveConfig};
use crate::timegrid::{rk4_trajectory, TimeGrid};
use crate::tracking::{
    cone_classify, leaf_equivalence_experiment, rate_sweep, solve_tracking, tracking_rate, ConeClass,
    RateSweepConfig, TrackingConfig,
};
use crate::unstable::{count_multiplications, solve_inertial_manifold};

use super::config::{build_system, ExperimentId, Resolved, ResolvedModel};
use super::output::{num, Table};

#[derive(Debug, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub summary: BTreeMap<String, toml::Value>,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn put(&mut self, key: &str, v: impl Into<toml::Value>) {
        self.summary.insert(key.to_string(), v.into());
    }

    fn put_vec(&mut self, key: &str, v: &[f64]) {
        self.put(key, toml::Value::Array(v.iter().map(|x| toml::Value::Float(*x)).collect()));
    }
}

pub fn run(r: &Resolved) -> Result<Outcome> {
    match r.experiment {
        ExperimentId::ToyStableLeaf => toy_stable_leaf(r),
        ExperimentId::ToyTracking => toy_tracking(r),
        ExperimentId::KseInertialPwconstAitken => kse_pwconst(r),
        ExperimentId::KseInertialSimpGapsweep => kse_gapsweep(r),
        ExperimentId::AifLeafEquivalence => aif_leaf_equivalence(r),
        ExperimentId::RateCompare => rate_compare(r),
        ExperimentId::RateSweep => rate_sweep_run(r),
    }
}

fn leaf_cfg(r: &Resolved, n: Option<usize>, j: usize, gap: SpectralGap) -> StableSolveConfig {
    let s = &r.solver;
    StableSolveConfig::new(s.method, s.h, n, j, gap)
        .with_init(s.init)
        .with_freeze(s.freeze)
}

fn tracking_cfg(r: &Resolved, z0: &StateVector, j: usize) -> Result<TrackingConfig> {
    let gap = r.gap()?;
    let s = &r.solver;
    let mut tc = TrackingConfig::new(
        z0,
        leaf_cfg(r, s.n_unstable.or(s.n), j, gap),
        leaf_cfg(r, s.n, j, gap),
    )?;
    tc.order = s.order;
    tc.norm = s.norm;
    tc.max_outer = s.max_outer;
    tc.outer_tol = s.outer_tol;
    Ok(tc)
}

fn toy_stable_leaf(r: &Resolved) -> Result<Outcome> {
    let sys = r.system()?;
    let oracle = ToyOracle::new(r.model.p.unwrap_or(10.0))?;
    let z0 = r.toy_z0()?;
    let x = r.params.x.clone().unwrap_or_default();
    let exact = oracle.stable_leaf_through(&z0, x[0])?;
    let gap = r.gap()?;
    let mut errs = Vec::new();
    let mut out = Outcome::default();
    for method in [Method::Simp, Method::Simpgs] {
        let cfg = StableSolveConfig { method, ..leaf_cfg(r, r.solver.n, r.solver.j, gap) };
        let res = solve_stable_leaf(&sys, &z0, &x, &cfg)?;
        out.warnings.extend(res.warnings.iter().cloned());
        errs.push(res.iterate_history.iter().map(|v| (v[0] - exact).abs()).collect::<Vec<_>>());
    }
    let mut t = Table::new("errors", &["j", "err_simp", "err_simpgs"]).with_dat();
    for j in 0..r.solver.j {
        t.push(vec![(j + 1).to_string(), num(errs[0][j]), num(errs[1][j])]);
    }
    out.put("exact", exact);
    out.put("saturated_simp", *errs[0].last().unwrap());
    out.put("saturated_simpgs", *errs[1].last().unwrap());
    out.tables.push(t);
    Ok(out)
}

fn toy_tracking(r: &Resolved) -> Result<Outcome> {
    let sys = r.system()?;
    let oracle = ToyOracle::new(r.model.p.unwrap_or(10.0))?;
    let z0 = r.toy_z0()?;
    let w = r.toy_preimage(&z0)?;
    let exact = oracle.exact_tracking_ic(w);
    let start = r.to_state(r.params.start.as_deref().unwrap_or(&[3.0, 3.0]))?;
    let norm = r.solver.norm;
    let mut out = Outcome::default();

    let tc = tracking_cfg(r, &z0, r.solver.j)?;
    let res = solve_tracking(&sys, &start, &tc)?;
    let mut t = Table::new("outer", &["step", "x", "y", "error", "residual"]).with_dat();
    for (i, z) in res.outer_history.iter().enumerate() {
        let resid = if i == 0 { f64::NAN } else { res.residuals[i - 1] };
        t.push(vec![i.to_string(), num(z.x[0]), num(z.y[0]), num(norm.distance(z, &exact)), num(resid)]);
    }
    out.tables.push(t);
    out.warnings.extend(res.warnings.iter().cloned());
    out.put_vec("exact", &[exact.x[0], exact.y[0]]);
    out.put_vec("z_plus", &[res.z_plus.x[0], res.z_plus.y[0]]);
    out.put("error", norm.distance(&res.z_plus, &exact));
    out.put("kappa", res.kappa);
    out.put("c_constant", res.c_constant);

    let mut t = Table::new("jsweep", &["j", "x", "y", "error", "outer_steps", "c_constant", "apriori_bound"]).with_dat();
    for &j in r.params.j_list.as_deref().unwrap_or(&[]) {
        let tc = tracking_cfg(r, &z0, j)?;
        let res = solve_tracking(&sys, &start, &tc)?;
        t.push(vec![
            j.to_string(),
            num(res.z_plus.x[0]),
            num(res.z_plus.y[0]),
            num(norm.distance(&res.z_plus, &exact)),
            res.residuals.len().to_string(),
            num(res.c_constant),
            num(res.apriori_error),
        ]);
    }
    out.tables.push(t);
    Ok(out)
}

fn lc_point(r: &Resolved, sys: &SplitSystem) -> Result<StateVector> {
    let p = &r.params;
    if let Some(z) = &p.z0 {
        return r.to_state(z);
    }
    let search = LimitCycleSearch {
        transient: p.lc_transient.unwrap_or(50.0),
        coarse_h: p.lc_coarse_h.unwrap_or(1e-5),
        fine_h: p.lc_fine_h.unwrap_or(1e-6),
        ..LimitCycleSearch::default()
    };
    limit_cycle_point(sys, &r.to_state(p.lc_init.as_deref().unwrap_or(&[]))?, &search)
}

fn modes_table(r: &Resolved, z: &StateVector) -> Result<Table> {
    let mut t = Table::new("test_point", &["mode", "value"]);
    for (k, v) in r.to_natural(z)?.iter().enumerate() {
        t.push(vec![(k + 1).to_string(), num(*v)]);
    }
    Ok(t)
}

fn kse_pwconst(r: &Resolved) -> Result<Outcome> {
    let sys = r.system()?;
    let z = lc_point(r, &sys)?;
    let gap = r.gap()?;
    let h0 = r.solver.h0.unwrap_or(2f64.powi(-15));
    let cfg = StableSolveConfig::pwconst_schedule(r.solver.j, h0, gap)
        .with_init(r.solver.init)
        .with_freeze(r.solver.freeze);
    let res = solve_inertial_manifold(&sys, &z.y, &cfg)?;
    let err = |v: &[f64]| euclid(&v.iter().zip(&z.x).map(|(a, b)| a - b).collect::<Vec<_>>());
    let e: Vec<f64> = res.iterate_history.iter().map(|v| err(v)).collect();
    let mut seq = vec![res.initial_value.clone()];
    seq.extend(res.iterate_history.iter().cloned());
    let acc = aitken_vector_sequence(&seq);
    let first_j = sys.dim_x() + 1;
    let mut out = Outcome::default();
    let mut t = Table::new("pwconst", &["j", "err_pwconst", "ratio", "err_aitken"]).with_dat();
    for (i, ej) in e.iter().enumerate() {
        let j = i + 1;
        let ratio = if i == 0 { f64::NAN } else { ej / e[i - 1] };
        let a = j
            .checked_sub(first_j)
            .and_then(|k| acc.get(k))
            .and_then(|a| a.as_ref().ok())
            .map_or(f64::NAN, |v| err(v));
        t.push(vec![j.to_string(), num(*ej), num(ratio), num(a)]);
    }
    out.tables.push(t);
    out.tables.push(modes_table(r, &z)?);
    let (plain, aitken) = count_multiplications(r.solver.j, sys.dim_x(), sys.dim_x() + sys.dim_y())?;
    out.put("multiplications_pwconst", plain as i64);
    out.put("multiplications_aitken", aitken as i64);
    out.put("first_aitken_j", first_j as i64);
    out.warnings.extend(res.warnings);
    Ok(out)
}

fn kse_gapsweep(r: &Resolved) -> Result<Outcome> {
    let sys = r.system()?;
    let z = r.to_natural(&lc_point(r, &sys)?)?;
    let n_modes = r.model.n_modes.unwrap_or(16);
    let gamma = r.model.gamma.unwrap_or(32.0);
    let prep = match r.model.rho {
        Some(v) if v > 0.0 => Some(Preparation::new(v)?),
        _ => None,
    };
    let tol = r.params.tol.unwrap_or(1e-7);
    let max_exp = r.solver.max_exponent.unwrap_or(300.0);
    let mut out = Outcome::default();
    let mut summary = Table::new("gapsweep", &["dim_y", "alpha", "beta", "n", "iterations", "final_error", "status"]).with_dat();
    let mut errors = Table::new("errors", &["dim_y", "j", "error"]).with_dat();
    for &k in r.params.dim_y_list.as_deref().unwrap_or(&[]) {
        let sk = kse_galerkin(n_modes, gamma, k, prep)?;
        let (a, b) = (sk.alpha(), sk.beta());
        let gap = SpectralGap::unchecked(a, b, r.gap.delta, 0.5 * (a + b));
        let bmax = sk.spectrum_b().iter().fold(0f64, |m, v| m.max(v.abs()));
        let cap = (max_exp / (bmax * r.solver.h)).floor() as usize;
        let n = r.solver.n.unwrap_or(100_000).min(cap.max(1));
        let cfg = leaf_cfg(r, Some(n), r.solver.j, gap);
        let zk = crate::model::kse::ModeSplit::new(n_modes, k)?.to_state(&z);
        match solve_inertial_manifold(&sk, &zk.y, &cfg) {
            Ok(res) => {
                let e: Vec<f64> = res
                    .iterate_history
                    .iter()
                    .map(|v| euclid(&v.iter().zip(&zk.x).map(|(p, q)| p - q).collect::<Vec<_>>()))
                    .collect();
                for (j, ej) in e.iter().enumerate() {
                    errors.push(vec![k.to_string(), (j + 1).to_string(), num(*ej)]);
                }
                let it = e.iter().position(|v| *v <= tol).map(|i| i + 1);
                summary.push(vec![
                    k.to_string(),
                    num(a),
                    num(b),
                    n.to_string(),
                    it.map_or(String::new(), |i| i.to_string()),
                    num(*e.last().unwrap()),
                    if it.is_some() { "converged" } else { "not-converged" }.into(),
                ]);
            }
            Err(e) => {
                out.warnings.push(format!("dim_y = {k}: {e}"));
                summary.push(vec![k.to_string(), num(a), num(b), n.to_string(), String::new(), num(f64::NAN), "diverged".into()]);
            }
        }
    }
    out.tables.push(summary);
    out.tables.push(errors);
    out.put("tol", tol);
    Ok(out)
}

fn aif_leaf_equivalence(r: &Resolved) -> Result<Outcome> {
    let sys = r.system()?;
    let p = &r.params;
    let z1 = r.to_state(p.z0.as_deref().unwrap_or(&[]))?;
    let z2 = r.to_state(p.z2.as_deref().unwrap_or(&[]))?;
    let cfg = leaf_cfg(r, r.solver.n, r.solver.j, r.gap()?);
    let mut pts = vec![("z1".to_string(), z1.clone()), ("z2".to_string(), z2)];
    let xs = p.x.clone().unwrap_or_default();
    for (i, xq) in xs.chunks(sys.dim_x()).enumerate() {
        let leaf = solve_stable_leaf(&sys, &z1, xq, &cfg)?;
        pts.push((format!("mate{}", i + 1), StateVector::new(xq.to_vec(), leaf.value)));
    }
    let zs: Vec<StateVector> = pts.iter().map(|(_, z)| z.clone()).collect();
    let flow = if p.raw_flow.unwrap_or(true) {
        build_system(&ResolvedModel { rho: None, ..r.model.clone() })?
    } else {
        sys.clone()
    };
    let b = leaf_equivalence_experiment(&flow, &zs, p.rate_h.unwrap_or(1e-4), p.horizon.unwrap_or(5.0), p.stride.unwrap_or(100))?;
    let n = r.model.n_modes.unwrap_or(3);
    let mut out = Outcome::default();

    let mut header = vec!["point".to_string(), "label".to_string()];
    header.extend((1..=n).map(|k| format!("b{k}")));
    let hs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new("points", &hs);
    for (i, (label, z)) in pts.iter().enumerate() {
        let mut row = vec![i.to_string(), label.clone()];
        row.extend(r.to_natural(z)?.iter().map(|v| num(*v)));
        t.push(row);
    }
    out.tables.push(t);

    let mut header = vec!["t".to_string(), "point".to_string()];
    header.extend((1..=n).map(|k| format!("b{k}")));
    let hs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new("trajectories", &hs).with_dat();
    for (k, traj) in b.trajectories.iter().enumerate() {
        for (ti, z) in b.times.iter().zip(traj) {
            let mut row = vec![num(*ti), k.to_string()];
            row.extend(r.to_natural(z)?.iter().map(|v| num(*v)));
            t.push(row);
        }
    }
    out.tables.push(t);

    let mut t = Table::new("final_distances", &["i", "j", "distance"]);
    for (i, row) in b.final_distances.iter().enumerate() {
        for (j, d) in row.iter().enumerate() {
            t.push(vec![i.to_string(), j.to_string(), num(*d)]);
        }
    }
    out.tables.push(t);
    let mates_max = (2..pts.len()).map(|i| b.final_distances[0][i]).fold(0f64, f64::max);
    out.put("final_distance_z1_z2", b.final_distances[0][1]);
    out.put("final_distance_z1_mates_max", mates_max);
    Ok(out)
}

fn rate_compare(r: &Resolved) -> Result<Outcome> {
    let sys = r.system()?;
    let p = &r.params;
    let z0 = r.to_state(p.z0.as_deref().unwrap_or(&[]))?;
    let projected = StateVector::new(vec![0.0; sys.dim_x()], z0.y.clone());
    let tc = tracking_cfg(r, &z0, r.solver.j)?;
    let res = solve_tracking(&sys, &z0, &tc)?;
    let (h, window) = (p.rate_h.unwrap_or(1e-4), p.window.unwrap_or(0.1));
    let st = tracking_rate(&sys, &z0, &res.z_plus, h, window)?;
    let sp = tracking_rate(&sys, &z0, &projected, h, window)?;
    let grid = TimeGrid::forward(h, ((window / h).round() as usize).max(1))?;
    let a = rk4_trajectory(&sys, &z0, grid)?;
    let bt = rk4_trajectory(&sys, &res.z_plus, grid)?;
    let bp = rk4_trajectory(&sys, &projected, grid)?;
    let mut t = Table::new("curves", &["t", "ln_dist_tracking", "ln_dist_projected"]).with_dat();
    let stride = (grid.n() / 1000).max(1);
    for i in (0..=grid.n()).filter(|i| i % stride == 0 || *i == grid.n()) {
        let s = a.states.state(i);
        t.push(vec![
            num(grid.t(i)),
            num(s.distance(&bt.states.state(i)).ln()),
            num(s.distance(&bp.states.state(i)).ln()),
        ]);
    }
    let mut out = Outcome::default();
    out.tables.push(t);
    out.put_vec("z0", &r.to_natural(&z0)?);
    out.put_vec("z_plus", &r.to_natural(&res.z_plus)?);
    out.put("slope_tracking", st.slope);
    out.put("slope_projected", sp.slope);
    out.put("outer_steps", res.residuals.len() as i64);
    let cone = match cone_classify(&sys, &z0, &projected, h, window)? {
        ConeClass::UDominant => "u-dominant".to_string(),
        ConeClass::VDominant => "v-dominant".to_string(),
        ConeClass::Crossing { t_lo, t_hi } => format!("crossing in ({t_lo}, {t_hi}]"),
    };
    out.put("cone_projected", cone);
    out.warnings.extend(res.warnings);
    Ok(out)
}

pub fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn rate_sweep_run(r: &Resolved) -> Result<Outcome> {
    let sys = r.system()?;
    let p = &r.params;
    let zero = StateVector::zeros(sys.dim_x(), sys.dim_y());
    let cfg = RateSweepConfig {
        tracking: tracking_cfg(r, &zero, r.solver.j)?,
        ball_radius: p.radius.unwrap_or(0.4),
        h: p.rate_h.unwrap_or(1e-4),
        window: p.window.unwrap_or(0.1),
    };
    let samples = rate_sweep(&sys, p.samples.unwrap_or(200), &cfg, r.seed.unwrap_or(0))?;
    let n = r.model.n_modes.unwrap_or(2);
    let mut header = vec!["index".to_string()];
    header.extend((1..=n).map(|k| format!("z0_b{k}")));
    header.extend((1..=n).map(|k| format!("zplus_b{k}")));
    header.extend(["slope_tracking", "slope_projected", "error"].map(String::from));
    let hs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new("samples", &hs).with_dat();
    for s in &samples {
        let mut row = vec![s.index.to_string()];
        row.extend(r.to_natural(&s.z0)?.iter().map(|v| num(*v)));
        match &s.z_plus {
            Some(z) => row.extend(r.to_natural(z)?.iter().map(|v| num(*v))),
            None => row.extend((0..n).map(|_| num(f64::NAN))),
        }
        row.push(num(s.slope_tracking));
        row.push(num(s.slope_projected));
        row.push(s.error.clone().unwrap_or_default().replace(' ', "_"));
        t.push(row);
    }
    let ok: Vec<_> = samples.iter().filter(|s| s.error.is_none()).collect();
    let ordered = ok.iter().filter(|s| s.slope_tracking < s.slope_projected).count();
    let mut out = Outcome::default();
    out.put("samples", samples.len() as i64);
    out.put("failed", (samples.len() - ok.len()) as i64);
    out.put("fraction_ordered", ordered as f64 / samples.len() as f64);
    out.put("median_slope_tracking", median(&mut ok.iter().map(|s| s.slope_tracking).collect::<Vec<_>>()));
    out.put("median_slope_projected", median(&mut ok.iter().map(|s| s.slope_projected).collect::<Vec<_>>()));
    out.put("gap_midpoint", 0.5 * (r.gap.alpha + r.gap.beta));
    out.tables.push(t);
    Ok(out)
}

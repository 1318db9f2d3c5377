//! Property checks shared by the proptest suites and the acceptance report.
//! Each returns a short diagnostic on success and the violation otherwise.
#![allow(dead_code)]

use std::path::Path;

use foliate::accel::{aitken_scalar, aitken_vector};
use foliate::model::toy::{toy_system, toy_transform};
use foliate::model::{SpectralGap, StateVector};
use foliate::oracle::ToyOracle;
use foliate::stable::{solve_stable_leaf, Init, Method, StableSolveConfig};
use foliate::timegrid::{rk4_trajectory, simpson, simpson38, TimeGrid};
use foliate::tracking::{rate_sweep, RateSweepConfig, TrackingConfig};
use foliate::unstable::{reversed_config, solve_inertial_manifold, solve_unstable_leaf, swap};

pub type Check = Result<String, String>;

pub const P: f64 = 10.0;
/// Upper bound on the sampled Lipschitz constant of the toy nonlinearity (0.2216 at p = 10).
pub const TOY_DELTA: f64 = 0.23;

pub fn toy_gap() -> SpectralGap {
    SpectralGap::with_sigma(-1.0, 1.0, TOY_DELTA, 0.0).unwrap()
}

fn leaf(method: Method, j: usize) -> StableSolveConfig {
    StableSolveConfig::new(method, 0.05, Some(600), j, toy_gap())
}

/// `|phi^{j+1} - phi^j|_sigma <= (kappa + 0.05) |phi^j - phi^{j-1}|_sigma` while above round-off.
pub fn contraction_ratio(w: [f64; 2], x: f64, method: Method) -> Check {
    let sys = toy_system(P).unwrap();
    let z0 = toy_transform(w, P).unwrap();
    let r = solve_stable_leaf(&sys, &z0, &[x], &leaf(method, 8)).map_err(|e| e.to_string())?;
    let k = toy_gap().kappa;
    let mut worst = 0.0f64;
    for s in r.sigma_norm_history.windows(2) {
        if s[0] > 1e-12 {
            let q = s[1] / s[0];
            worst = worst.max(q);
            if q > k + 0.05 {
                return Err(format!("ratio {q:.3} > kappa + 0.05 = {:.3} at {w:?}, x = {x}", k + 0.05));
            }
        }
    }
    Ok(format!("max ratio {worst:.3} (kappa {k:.3})"))
}

/// `|Phi^j(x) - Phi(x)| <= kappa^j/(1-kappa) |phi^1 - phi^0|_sigma + 2 e_sat`.
pub fn apriori_bound(w: [f64; 2], x: f64) -> Check {
    let sys = toy_system(P).unwrap();
    let o = ToyOracle::new(P).unwrap();
    let z0 = toy_transform(w, P).unwrap();
    let exact = o.exact_stable_leaf(x, w[1]);
    let r = solve_stable_leaf(&sys, &z0, &[x], &leaf(Method::Simp, 14)).map_err(|e| e.to_string())?;
    let k = toy_gap().kappa;
    let sat = (r.value[0] - exact).abs();
    let first = r.sigma_norm_history[0];
    for (j, v) in r.iterate_history.iter().enumerate().take(8) {
        let j = j + 1;
        let err = (v[0] - exact).abs();
        let bound = first * k.powi(j as i32) / (1.0 - k) + 2.0 * sat + 1e-14;
        if err > bound {
            return Err(format!("j = {j}: error {err:e} > bound {bound:e} at {w:?}, x = {x}"));
        }
    }
    Ok(format!("saturation {sat:.1e}"))
}

/// Oracle graphs obey `delta/(beta - alpha - delta)`; computed graphs obey
/// `(delta/(beta - sigma))/(1 - kappa)` (stable) and `(delta/(sigma - alpha))/(1 - kappa)` (unstable).
pub fn graph_lipschitz(a: f64, b: f64, y0: f64) -> Check {
    let g = toy_gap();
    let o = ToyOracle::new(P).unwrap();
    let thm = g.delta / (g.beta - g.alpha - g.delta);
    if (a - b).abs() < 1e-3 {
        return Ok("coincident points".into());
    }
    let s_leaf = (o.exact_stable_leaf(a, y0) - o.exact_stable_leaf(b, y0)).abs() / (a - b).abs();
    let s_man = (o.unstable_manifold_graph(a) - o.unstable_manifold_graph(b)).abs() / (a - b).abs();
    if s_leaf > thm || s_man > thm {
        return Err(format!("oracle slopes {s_leaf:.4}, {s_man:.4} exceed {thm:.4}"));
    }
    let sys = toy_system(P).unwrap();
    let z0 = toy_transform([0.5, y0], P).unwrap();
    let cfg = leaf(Method::Simp, 10);
    let pa = solve_stable_leaf(&sys, &z0, &[a], &cfg).map_err(|e| e.to_string())?.value[0];
    let pb = solve_stable_leaf(&sys, &z0, &[b], &cfg).map_err(|e| e.to_string())?.value[0];
    let lip_phi = g.delta / (g.beta - g.sigma) / (1.0 - g.kappa);
    let s_phi = (pa - pb).abs() / (a - b).abs();
    let ua = solve_inertial_manifold(&sys, &[a], &cfg).map_err(|e| e.to_string())?.value[0];
    let ub = solve_inertial_manifold(&sys, &[b], &cfg).map_err(|e| e.to_string())?.value[0];
    let lip_psi = g.delta / (g.sigma - g.alpha) / (1.0 - g.kappa);
    let s_psi = (ua - ub).abs() / (a - b).abs();
    let slack = 1e-5 / (a - b).abs();
    if s_phi > lip_phi + slack || s_psi > lip_psi + slack {
        return Err(format!("computed slopes {s_phi:.4} / {s_psi:.4} exceed {lip_phi:.4} / {lip_psi:.4}"));
    }
    Ok(format!("oracle {:.4} computed {:.4}/{:.4} <= {thm:.4}/{lip_phi:.4}", s_leaf.max(s_man), s_phi, s_psi))
}

/// `|z(t, z0) - z(t, z0+)| <= e^{(alpha + delta) t} |z0 - z0+|` with the exact flow and tracking point.
pub fn tracking_inequality(w: [f64; 2]) -> Check {
    let o = ToyOracle::new(P).unwrap();
    let z0 = toy_transform(w, P).unwrap();
    let zp = o.exact_tracking_ic(w);
    let d0 = z0.distance(&zp);
    let rate = -1.0 + TOY_DELTA;
    let mut worst = 0.0f64;
    for i in 0..=60 {
        let t = 0.1 * i as f64;
        let d = o.exact_flow(&z0, t).unwrap().distance(&o.exact_flow(&zp, t).unwrap());
        let bound = (rate * t).exp() * d0 * (1.0 + 1e-9) + 1e-14;
        if d > bound {
            return Err(format!("t = {t}: {d:e} > {bound:e} for {w:?}"));
        }
        if d0 > 0.0 {
            worst = worst.max(d / bound);
        }
    }
    Ok(format!("max d/bound {worst:.3}"))
}

/// Vector Aitken returns the fixed point of an affine contraction.
pub fn aitken_affine(m: [[f64; 2]; 2], b: [f64; 2], z0: [f64; 2], r: f64) -> Check {
    let mut seq = vec![z0.to_vec()];
    for _ in 0..3 {
        let z = seq.last().unwrap();
        seq.push(vec![
            m[0][0] * z[0] + m[0][1] * z[1] + b[0],
            m[1][0] * z[0] + m[1][1] * z[1] + b[1],
        ]);
    }
    // fixed point (I - M) z = b
    let (a11, a12, a21, a22) = (1.0 - m[0][0], -m[0][1], -m[1][0], 1.0 - m[1][1]);
    let det = a11 * a22 - a12 * a21;
    let fix = [(a22 * b[0] - a12 * b[1]) / det, (a11 * b[1] - a21 * b[0]) / det];
    let acc = match aitken_vector(&seq, 0) {
        Ok(v) => v,
        // degenerate Krylov space (e.g. z0 already an eigen-direction); nothing to check
        Err(_) => return Ok("degenerate".into()),
    };
    let err = ((acc[0] - fix[0]).powi(2) + (acc[1] - fix[1]).powi(2)).sqrt();
    let scale = fix[0].abs().max(fix[1].abs()).max(1.0);
    if err > 1e-7 * scale {
        return Err(format!("vector Aitken error {err:e}"));
    }
    let s: Vec<f64> = (0..4).map(|k| 2.0 + 3.0 * r.powi(k)).collect();
    let sc = aitken_scalar(&s, 0).map_err(|e| e.to_string())?;
    if (sc - 2.0).abs() > 1e-12 {
        return Err(format!("scalar Aitken {sc}"));
    }
    Ok(format!("error {err:.1e}"))
}

pub fn simpson_cubic(c: [f64; 4], t0: f64, h: f64) -> Check {
    let f = |t: f64| c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t;
    let anti = |t: f64| c[0] * t + c[1] * t * t / 2.0 + c[2] * t.powi(3) / 3.0 + c[3] * t.powi(4) / 4.0;
    let e2 = (simpson(f(t0), f(t0 + h), f(t0 + 2.0 * h), h) - (anti(t0 + 2.0 * h) - anti(t0))).abs();
    let e3 = (simpson38(f(t0), f(t0 + h), f(t0 + 2.0 * h), f(t0 + 3.0 * h), h) - (anti(t0 + 3.0 * h) - anti(t0))).abs();
    // exact up to round-off in the antiderivative
    let t = t0.abs() + 3.0 * h;
    let scale = 3.0 * h * c.iter().enumerate().map(|(k, a)| a.abs() * t.powi(k as i32)).sum::<f64>() + t * anti_scale(c, t);
    let rel = e2.max(e3) / scale;
    if rel > 1e-14 {
        return Err(format!("cubic errors {e2:e}, {e3:e} (relative {rel:.1e})"));
    }
    Ok(format!("relative {rel:.1e}"))
}

fn anti_scale(c: [f64; 4], t: f64) -> f64 {
    c.iter().enumerate().map(|(k, a)| a.abs() * t.powi(k as i32) / (k + 1) as f64).sum()
}

fn rk4_error(w: [f64; 2], h: f64) -> f64 {
    let sys = toy_system(P).unwrap();
    let o = ToyOracle::new(P).unwrap();
    let z0 = toy_transform(w, P).unwrap();
    let n = (1.0 / h).round() as usize;
    let tr = rk4_trajectory(&sys, &z0, TimeGrid::forward(h, n).unwrap()).unwrap();
    tr.states.state(n).distance(&o.exact_flow(&z0, 1.0).unwrap())
}

/// Observed order of RK4 between `h = 0.04` and `0.02` on the conjugacy oracle.
pub fn rk4_order(w: [f64; 2]) -> Check {
    let (a, b) = (rk4_error(w, 0.04), rk4_error(w, 0.02));
    if b < 1e-13 {
        return Ok("below round-off".into());
    }
    let order = (a / b).log2();
    if !(3.5..=4.5).contains(&order) {
        return Err(format!("observed order {order:.2} at {w:?}"));
    }
    Ok(format!("order {order:.2}"))
}

/// Unstable solve on a system equals stable solve on its reversal, bit for bit.
pub fn duality(z1: [f64; 2], y: f64, method: Method) -> Check {
    let sys = toy_system(P).unwrap();
    let z1 = StateVector::new(vec![z1[0]], vec![z1[1]]);
    let cfg = StableSolveConfig::new(method, 0.1, Some(120), 4, toy_gap()).with_init(Init::Exponential);
    let u = solve_unstable_leaf(&sys, &z1, &[y], &cfg).map_err(|e| e.to_string())?;
    let s = solve_stable_leaf(&sys.reversed(), &swap(&z1), &[y], &reversed_config(&cfg)).map_err(|e| e.to_string())?;
    let bits = |v: &[f64]| v.iter().map(|a| a.to_bits()).collect::<Vec<_>>();
    if bits(&u.value) != bits(&s.value) || u.sigma_norm_history != s.sigma_norm_history {
        return Err(format!("duality broken: {:?} vs {:?}", u.value, s.value));
    }
    Ok("bit-identical".into())
}

fn read_dir_csv(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Two runs of the same config give byte-identical CSVs; the rate sweep does
/// not depend on the thread count.
pub fn csv_determinism(config: &Path, tmp: &Path) -> Check {
    let (a, b) = (tmp.join("a"), tmp.join("b"));
    for d in [&a, &b] {
        let code = foliate::cli::run(config, Some(d), None);
        if code != 0 {
            return Err(format!("run exited with {code}"));
        }
    }
    let (fa, fb) = (read_dir_csv(&a), read_dir_csv(&b));
    if fa.is_empty() || fa != fb {
        return Err("CSV outputs differ between identical runs".into());
    }

    let sys = foliate::model::kse::kse_aif(25.0, 2, Some(foliate::model::Preparation::new(1.0).unwrap())).unwrap();
    let gap = SpectralGap::with_sigma(-99.0, 21.0, 10.0, -39.0).unwrap();
    let leaf = |n| StableSolveConfig::new(Method::Simpgs, 2e-3, Some(n), 4, gap);
    let tc = TrackingConfig::new(&StateVector::zeros(1, 2), leaf(500), leaf(250)).unwrap();
    let cfg = RateSweepConfig { tracking: tc, ball_radius: 0.4, h: 1e-4, window: 0.02 };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| rate_sweep(&sys, 6, &cfg, 11).unwrap())
    };
    let key = |v: Vec<foliate::tracking::RateSample>| {
        v.iter()
            .map(|s| (s.slope_tracking.to_bits(), s.slope_projected.to_bits(), s.z0.clone()))
            .collect::<Vec<_>>()
    };
    if key(run(1)) != key(run(4)) {
        return Err("rate sweep depends on the thread count".into());
    }
    Ok(format!("{} CSV files identical; sweep identical on 1 and 4 threads", fa.len()))
}

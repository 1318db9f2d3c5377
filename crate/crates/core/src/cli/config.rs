//! Experiment configuration files.
//!
//! Four sections, all keys optional unless an experiment needs them; unknown
//! keys are rejected. Missing values are filled from per-experiment defaults
//! by [`ExperimentConfig::resolve`] and the resolved set is what lands in the
//! manifest.

use serde::{Deserialize, Serialize};

use crate::error::{FoliateError, Result};
use crate::model::kse::{kse_aif, kse_galerkin, kse_eigenvalue, ModeSplit};
use crate::model::toy::{toy_inverse_transform, toy_system, toy_transform};
use crate::model::{Preparation, SpectralGap, SplitSystem, StateVector};
use crate::stable::{Freeze, Init, Method};
use crate::tracking::{OuterNorm, SigmaOrder};

pub const EXPERIMENTS: [(&str, &str); 7] = [
    ("toy-stable-leaf", "stable-leaf error per sweep on the planar test problem, SIMP vs SIMPGS"),
    ("toy-tracking", "outer iteration and j-sweep of the tracking point on the planar test problem"),
    ("kse-inertial-pwconst-aitken", "PWCONST on the refinement schedule plus vector Aitken, KSE inertial manifold"),
    ("kse-inertial-simp-gapsweep", "SIMP inertial-manifold convergence against the size of Y"),
    ("aif-leaf-equivalence", "trajectories of stable-leaf mates on the approximate inertial form"),
    ("rate-compare", "log-distance curves and slopes for the tracking and projected points of one state"),
    ("rate-sweep", "tracking vs projected slopes over random initial states in a ball"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    ToyStableLeaf,
    ToyTracking,
    KseInertialPwconstAitken,
    KseInertialSimpGapsweep,
    AifLeafEquivalence,
    RateCompare,
    RateSweep,
}

impl ExperimentId {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentId::ToyStableLeaf => "toy-stable-leaf",
            ExperimentId::ToyTracking => "toy-tracking",
            ExperimentId::KseInertialPwconstAitken => "kse-inertial-pwconst-aitken",
            ExperimentId::KseInertialSimpGapsweep => "kse-inertial-simp-gapsweep",
            ExperimentId::AifLeafEquivalence => "aif-leaf-equivalence",
            ExperimentId::RateCompare => "rate-compare",
            ExperimentId::RateSweep => "rate-sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Toy,
    KseGalerkin,
    KseAif,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: Option<ModelKind>,
    pub p: Option<f64>,
    pub gamma: Option<f64>,
    pub n_modes: Option<usize>,
    pub dim_y: Option<usize>,
    /// Cutoff radius of the prepared nonlinearity; 0 disables it.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSection {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub method: Option<Method>,
    pub h: Option<f64>,
    pub n: Option<usize>,
    /// Horizon for the unstable side of the tracking map (intervals).
    pub n_unstable: Option<usize>,
    pub j: Option<usize>,
    pub init: Option<Init>,
    pub freeze: Option<Freeze>,
    pub h0: Option<f64>,
    pub order: Option<SigmaOrder>,
    pub norm: Option<OuterNorm>,
    pub max_outer: Option<usize>,
    pub outer_tol: Option<f64>,
    /// Largest `|eigenvalue| * t_N` allowed when sizing per-split grids.
    pub max_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub id: ExperimentId,
    pub output: Option<String>,
    pub seed: Option<u64>,
    /// Base point of the stable leaf / the state to track (natural coordinates:
    /// `[x, y]` for the toy model, mode amplitudes `[b_1, ..]` for KSE models).
    pub z0: Option<Vec<f64>>,
    /// Toy model: `z0` given through its preimage under `T`.
    pub z0_tilde: Option<Vec<f64>>,
    pub start: Option<Vec<f64>>,
    /// Query coordinates along `X`.
    pub x: Option<Vec<f64>>,
    pub j_list: Option<Vec<usize>>,
    pub dim_y_list: Option<Vec<usize>>,
    pub tol: Option<f64>,
    pub samples: Option<usize>,
    pub radius: Option<f64>,
    pub window: Option<f64>,
    pub rate_h: Option<f64>,
    pub horizon: Option<f64>,
    pub stride: Option<usize>,
    /// Leaf equivalence: integrate trajectories without the cutoff.
    pub raw_flow: Option<bool>,
    /// Second reference state (leaf equivalence).
    pub z2: Option<Vec<f64>>,
    /// Limit-cycle search: initial modes and transient length.
    pub lc_init: Option<Vec<f64>>,
    pub lc_transient: Option<f64>,
    pub lc_coarse_h: Option<f64>,
    pub lc_fine_h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub gap: GapSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub experiment: ExperimentSection,
}

/// Fully resolved parameters; every default the code filled in appears here.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub experiment: ExperimentId,
    pub output: String,
    pub seed: Option<u64>,
    pub model: ResolvedModel,
    pub gap: ResolvedGap,
    pub solver: ResolvedSolver,
    pub params: ResolvedParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedModel {
    pub kind: ModelKind,
    pub p: Option<f64>,
    pub gamma: Option<f64>,
    pub n_modes: Option<usize>,
    pub dim_y: Option<usize>,
    pub rho: Option<f64>,
    pub spectrum_a: Vec<f64>,
    pub spectrum_b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedGap {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub sigma: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedSolver {
    pub method: Method,
    pub h: f64,
    pub n: Option<usize>,
    pub n_unstable: Option<usize>,
    pub j: usize,
    pub init: Init,
    pub freeze: Freeze,
    pub h0: Option<f64>,
    pub order: SigmaOrder,
    pub norm: OuterNorm,
    pub max_outer: usize,
    pub outer_tol: f64,
    pub max_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ResolvedParams {
    pub z0: Option<Vec<f64>>,
    pub z0_tilde: Option<Vec<f64>>,
    pub start: Option<Vec<f64>>,
    pub x: Option<Vec<f64>>,
    pub j_list: Option<Vec<usize>>,
    pub dim_y_list: Option<Vec<usize>>,
    pub tol: Option<f64>,
    pub samples: Option<usize>,
    pub radius: Option<f64>,
    pub window: Option<f64>,
    pub rate_h: Option<f64>,
    pub horizon: Option<f64>,
    pub stride: Option<usize>,
    pub raw_flow: Option<bool>,
    pub z2: Option<Vec<f64>>,
    pub lc_init: Option<Vec<f64>>,
    pub lc_transient: Option<f64>,
    pub lc_coarse_h: Option<f64>,
    pub lc_fine_h: Option<f64>,
}

fn cfg_err(msg: impl Into<String>) -> FoliateError {
    FoliateError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Fills defaults, builds the model and checks the gap.
    pub fn resolve(&self, out: Option<&str>, seed: Option<u64>) -> Result<Resolved> {
        use ExperimentId::*;
        let id = self.experiment.id;
        let e = &self.experiment;
        let m = &self.model;
        let s = &self.solver;

        let default_kind = match id {
            ToyStableLeaf | ToyTracking => ModelKind::Toy,
            KseInertialPwconstAitken | KseInertialSimpGapsweep => ModelKind::KseGalerkin,
            AifLeafEquivalence | RateCompare | RateSweep => ModelKind::KseAif,
        };
        let kind = m.kind.unwrap_or(default_kind);
        match (id, kind) {
            (ToyStableLeaf | ToyTracking, k) if k != ModelKind::Toy => {
                return Err(cfg_err(format!("{} runs on the toy model only", id.name())))
            }
            (KseInertialPwconstAitken | KseInertialSimpGapsweep, k) if k != ModelKind::KseGalerkin => {
                return Err(cfg_err(format!("{} runs on the KSE Galerkin model only", id.name())))
            }
            (AifLeafEquivalence, k) if k != ModelKind::KseAif => {
                return Err(cfg_err("aif-leaf-equivalence runs on the approximate inertial form only"))
            }
            _ => {}
        }
        let model = match kind {
            ModelKind::Toy => ResolvedModel {
                kind,
                p: Some(m.p.unwrap_or(10.0)),
                gamma: None,
                n_modes: None,
                dim_y: Some(1),
                rho: None,
                spectrum_a: vec![-1.0],
                spectrum_b: vec![1.0],
            },
            ModelKind::KseGalerkin => {
                let gamma = m.gamma.unwrap_or(32.0);
                let n = m.n_modes.unwrap_or(16);
                let dim_y = m.dim_y.unwrap_or(n / 2);
                let lam: Vec<f64> = (1..=n).map(|j| kse_eigenvalue(gamma, j)).collect();
                ResolvedModel {
                    kind,
                    p: None,
                    gamma: Some(gamma),
                    n_modes: Some(n),
                    dim_y: Some(dim_y),
                    rho: Some(m.rho.unwrap_or(15.0)),
                    spectrum_a: lam.get(dim_y..).map(<[f64]>::to_vec).unwrap_or_default(),
                    spectrum_b: lam.get(..dim_y).map(<[f64]>::to_vec).unwrap_or_default(),
                }
            }
            ModelKind::KseAif => {
                let gamma = m.gamma.unwrap_or(25.0);
                let dim_y = m.dim_y.unwrap_or(2);
                if m.n_modes.is_some_and(|n| n != 3) {
                    return Err(cfg_err("the approximate inertial form has n_modes = 3"));
                }
                let lam: Vec<f64> = (1..=3).map(|j| kse_eigenvalue(gamma, j)).collect();
                ResolvedModel {
                    kind,
                    p: None,
                    gamma: Some(gamma),
                    n_modes: Some(3),
                    dim_y: Some(dim_y),
                    rho: Some(m.rho.unwrap_or(1.0)),
                    spectrum_a: lam.get(dim_y..).map(<[f64]>::to_vec).unwrap_or_default(),
                    spectrum_b: lam.get(..dim_y).map(<[f64]>::to_vec).unwrap_or_default(),
                }
            }
        };
        if kind == ModelKind::Toy && (m.gamma.is_some() || m.n_modes.is_some() || m.rho.is_some()) {
            return Err(cfg_err("gamma, n_modes and rho do not apply to the toy model"));
        }
        if kind != ModelKind::Toy && m.p.is_some() {
            return Err(cfg_err("p applies to the toy model only"));
        }
        // builds the system once so model errors surface during validation
        let probe = build_system(&model)?;

        let (a_max, b_min) = (probe.alpha(), probe.beta());
        let default_sigma = match id {
            ToyStableLeaf | ToyTracking => 0.0,
            _ => 0.5 * (a_max + b_min),
        };
        let default_delta = match id {
            ToyStableLeaf => 0.2,
            ToyTracking => 0.1,
            _ => 0.0,
        };
        let alpha = self.gap.alpha.unwrap_or(a_max);
        let beta = self.gap.beta.unwrap_or(b_min);
        let delta = self.gap.delta.unwrap_or(default_delta);
        let sigma = self.gap.sigma.unwrap_or(default_sigma);
        let gap = if id == KseInertialSimpGapsweep {
            // per-split gaps are built from the spectra inside the sweep
            SpectralGap::unchecked(alpha, beta, delta, sigma)
        } else {
            let g = SpectralGap::with_sigma(alpha, beta, delta, sigma)?;
            probe.check_gap(&g)?;
            if matches!(id, ToyTracking | RateCompare | RateSweep) {
                g.check_tracking()?;
            }
            g
        };

        let (method, h, n, n_unstable, j, init) = match id {
            ToyStableLeaf => (Method::Simp, 0.25, Some(80), None, 6, Init::Constant),
            ToyTracking => (Method::Simpgs, 0.01, Some(2000), Some(2000), 15, Init::Constant),
            KseInertialPwconstAitken => (Method::Pwconst, 2f64.powi(-15), None, None, 13, Init::Constant),
            KseInertialSimpGapsweep => (Method::Simp, 1e-6, Some(100_000), None, 100, Init::Exponential),
            AifLeafEquivalence => (Method::Simpgs, 1e-3, Some(1000), None, 8, Init::Exponential),
            RateCompare | RateSweep => (Method::Simpgs, 1e-3, Some(1000), Some(2000), 6, Init::Exponential),
        };
        let solver = ResolvedSolver {
            method: s.method.unwrap_or(method),
            h: s.h.unwrap_or(h),
            n: s.n.or(n),
            n_unstable: s.n_unstable.or(n_unstable),
            j: s.j.unwrap_or(j),
            init: s.init.unwrap_or(init),
            freeze: s.freeze.unwrap_or_default(),
            h0: if id == KseInertialPwconstAitken { Some(s.h0.unwrap_or(2f64.powi(-15))) } else { s.h0 },
            order: s.order.unwrap_or(if id == ToyTracking { SigmaOrder::GaussSeidel } else { SigmaOrder::Jacobi }),
            norm: s.norm.unwrap_or(if id == ToyTracking { OuterNorm::Euclidean } else { OuterNorm::Max }),
            max_outer: s.max_outer.unwrap_or(50),
            outer_tol: s.outer_tol.unwrap_or(1e-12),
            max_exponent: if id == KseInertialSimpGapsweep { Some(s.max_exponent.unwrap_or(300.0)) } else { s.max_exponent },
        };
        if !(solver.h > 0.0 && solver.h.is_finite()) || solver.j == 0 {
            return Err(cfg_err("solver.h must be positive and solver.j at least 1"));
        }
        if id == KseInertialPwconstAitken && solver.method != Method::Pwconst {
            return Err(cfg_err("kse-inertial-pwconst-aitken needs method = \"pwconst\""));
        }

        let n_all = model.n_modes.unwrap_or(2);
        let mut p = ResolvedParams::default();
        match id {
            ToyStableLeaf => {
                p.z0_tilde = Some(e.z0_tilde.clone().unwrap_or(vec![1.0, 1.0]));
                p.x = Some(e.x.clone().unwrap_or(vec![3.0 + 1.0 / (10.0 * 2f64.sqrt())]));
                if e.z0.is_some() {
                    return Err(cfg_err("toy-stable-leaf takes z0_tilde (the oracle needs the preimage)"));
                }
            }
            ToyTracking => {
                p.z0_tilde = Some(e.z0_tilde.clone().unwrap_or(vec![1.0, 1.0]));
                p.start = Some(e.start.clone().unwrap_or(vec![3.0, 3.0]));
                p.j_list = Some(e.j_list.clone().unwrap_or((1..=6).collect()));
            }
            KseInertialPwconstAitken | KseInertialSimpGapsweep => {
                let mut init = vec![0.0; n_all];
                for (k, v) in [0.1, 0.05, 0.02, 0.01].iter().enumerate().take(n_all) {
                    init[k] = *v;
                }
                p.z0 = e.z0.clone();
                p.lc_init = Some(e.lc_init.clone().unwrap_or(init));
                p.lc_transient = Some(e.lc_transient.unwrap_or(50.0));
                p.lc_coarse_h = Some(e.lc_coarse_h.unwrap_or(1e-5));
                p.lc_fine_h = Some(e.lc_fine_h.unwrap_or(1e-6));
                if id == KseInertialSimpGapsweep {
                    let dmax = n_all - 1;
                    p.dim_y_list = Some(e.dim_y_list.clone().unwrap_or((1..=dmax.min(8)).collect()));
                    p.tol = Some(e.tol.unwrap_or(1e-7));
                }
            }
            AifLeafEquivalence => {
                p.z0 = Some(e.z0.clone().unwrap_or(vec![0.0, 0.02, 0.01]));
                p.z2 = Some(e.z2.clone().unwrap_or(vec![0.0, -0.02, 0.01]));
                p.x = Some(e.x.clone().unwrap_or(vec![0.1, -0.1, 0.2]));
                p.horizon = Some(e.horizon.unwrap_or(5.0));
                p.rate_h = Some(e.rate_h.unwrap_or(1e-4));
                p.stride = Some(e.stride.unwrap_or(100));
                p.raw_flow = Some(e.raw_flow.unwrap_or(true));
            }
            RateCompare | RateSweep => {
                let aif = kind == ModelKind::KseAif;
                p.window = Some(e.window.unwrap_or(if aif { 0.1 } else { 0.008 }));
                p.rate_h = Some(e.rate_h.unwrap_or(if aif { 1e-4 } else { 1e-6 }));
                if id == RateCompare {
                    p.z0 = Some(e.z0.clone().unwrap_or(if aif { vec![0.12, 0.5, 0.5] } else { vec![0.1; n_all] }));
                } else {
                    p.samples = Some(e.samples.unwrap_or(200));
                    p.radius = Some(e.radius.unwrap_or(if aif { 0.4 } else { 0.5 }));
                }
            }
        }
        let seed = seed.or(e.seed);
        if id == RateSweep && seed.is_none() {
            return Err(cfg_err("rate-sweep needs experiment.seed (or --seed)"));
        }
        for (name, v) in [("z0", &p.z0), ("z2", &p.z2), ("lc_init", &p.lc_init)] {
            if let Some(v) = v {
                if v.len() != n_all {
                    return Err(cfg_err(format!("{name} has {} entries, the model has {n_all}", v.len())));
                }
            }
        }
        for (name, v) in [("z0_tilde", &p.z0_tilde), ("start", &p.start)] {
            if v.as_ref().is_some_and(|v| v.len() != 2) {
                return Err(cfg_err(format!("{name} must have 2 entries")));
            }
        }
        if let Some(x) = &p.x {
            if kind == ModelKind::Toy && x.len() != 1 {
                return Err(cfg_err("x must have 1 entry on the toy model"));
            }
        }
        Ok(Resolved {
            experiment: id,
            output: out
                .map(str::to_string)
                .or_else(|| e.output.clone())
                .unwrap_or_else(|| format!("out/{}", id.name())),
            seed,
            model,
            gap: ResolvedGap {
                alpha: gap.alpha,
                beta: gap.beta,
                delta: gap.delta,
                sigma: gap.sigma,
                kappa: gap.kappa,
            },
            solver,
            params: p,
        })
    }
}

pub fn build_system(m: &ResolvedModel) -> Result<SplitSystem> {
    let prep = match m.rho {
        Some(r) if r > 0.0 => Some(Preparation::new(r)?),
        _ => None,
    };
    match m.kind {
        ModelKind::Toy => toy_system(m.p.unwrap_or(10.0)),
        ModelKind::KseGalerkin => kse_galerkin(
            m.n_modes.unwrap_or(16),
            m.gamma.unwrap_or(32.0),
            m.dim_y.unwrap_or(8),
            prep,
        ),
        ModelKind::KseAif => kse_aif(m.gamma.unwrap_or(25.0), m.dim_y.unwrap_or(2), prep),
    }
}

impl Resolved {
    pub fn system(&self) -> Result<SplitSystem> {
        build_system(&self.model)
    }

    pub fn gap(&self) -> Result<SpectralGap> {
        let g = self.gap;
        if self.experiment == ExperimentId::KseInertialSimpGapsweep {
            return Ok(SpectralGap::unchecked(g.alpha, g.beta, g.delta, g.sigma));
        }
        SpectralGap::with_sigma(g.alpha, g.beta, g.delta, g.sigma)
    }

    /// Natural coordinates to a split state.
    pub fn to_state(&self, v: &[f64]) -> Result<StateVector> {
        match self.model.kind {
            ModelKind::Toy => Ok(StateVector::new(vec![v[0]], vec![v[1]])),
            _ => Ok(self.mode_split()?.to_state(v)),
        }
    }

    pub fn to_natural(&self, z: &StateVector) -> Result<Vec<f64>> {
        match self.model.kind {
            ModelKind::Toy => Ok(vec![z.x[0], z.y[0]]),
            _ => Ok(self.mode_split()?.to_modes(z)),
        }
    }

    pub fn mode_split(&self) -> Result<ModeSplit> {
        ModeSplit::new(self.model.n_modes.unwrap_or(3), self.model.dim_y.unwrap_or(1))
    }

    pub fn toy_z0(&self) -> Result<StateVector> {
        let w = self.params.z0_tilde.as_deref().unwrap_or(&[1.0, 1.0]);
        toy_transform([w[0], w[1]], self.model.p.unwrap_or(10.0))
    }

    pub fn toy_preimage(&self, z: &StateVector) -> Result<[f64; 2]> {
        toy_inverse_transform(z, self.model.p.unwrap_or(10.0))
    }
}

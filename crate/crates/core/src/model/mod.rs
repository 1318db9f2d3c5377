//! Split ODE systems `z' = Cz + H(z)` with `C = diag(A, B)` acting on `Z = X x Y`.
//!
//! All systems are stored in growth form: the diagonal spectra are the rates
//! of the linear flow, `x' = A x + F(x, y)` and `y' = B y + G(x, y)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{FoliateError, Result};

pub mod kse;
pub mod toy;

/// A point `z = (x, y)` of the split phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl StateVector {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        StateVector { x, y }
    }

    pub fn zeros(dim_x: usize, dim_y: usize) -> Self {
        StateVector {
            x: vec![0.0; dim_x],
            y: vec![0.0; dim_y],
        }
    }

    pub fn dim_x(&self) -> usize {
        self.x.len()
    }

    pub fn dim_y(&self) -> usize {
        self.y.len()
    }

    /// `max{|x|_2, |y|_2}`.
    pub fn norm(&self) -> f64 {
        euclid(&self.x).max(euclid(&self.y))
    }

    /// Euclidean norm of the concatenated vector.
    pub fn euclidean_norm(&self) -> f64 {
        euclid(&self.x).hypot(euclid(&self.y))
    }

    pub fn sub(&self, other: &StateVector) -> StateVector {
        StateVector {
            x: self.x.iter().zip(&other.x).map(|(a, b)| a - b).collect(),
            y: self.y.iter().zip(&other.y).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &StateVector) -> StateVector {
        StateVector {
            x: self.x.iter().zip(&other.x).map(|(a, b)| a + b).collect(),
            y: self.y.iter().zip(&other.y).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn distance(&self, other: &StateVector) -> f64 {
        self.sub(other).norm()
    }

    /// The projection `(0, y)` onto the Y axis.
    pub fn project_y(&self) -> StateVector {
        StateVector {
            x: vec![0.0; self.x.len()],
            y: self.y.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x = {:?}, y = {:?}", self.x, self.y)
    }
}

/// Overflow-safe Euclidean norm.
pub fn euclid(v: &[f64]) -> f64 {
    let sq: f64 = v.iter().map(|a| a * a).sum();
    if sq.is_finite() && sq > 1e-280 {
        return sq.sqrt();
    }
    let m = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * v.iter().map(|a| (a / m) * (a / m)).sum::<f64>().sqrt()
}

/// Constants of the exponential dichotomy and the nonlinear bound.
///
/// `alpha` bounds the growth of `e^{At}`, `beta` the decay of `e^{-Bt}`, `delta`
/// is the Lipschitz constant of `H`, `sigma` the exponent of the weighted
/// trajectory spaces and `kappa = max{delta/(beta-sigma), delta/(sigma-alpha)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGap {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub sigma: f64,
    pub kappa: f64,
    validated: bool,
}

impl SpectralGap {
    /// Checked constructor with `sigma = (alpha + beta) / 2`.
    pub fn new(alpha: f64, beta: f64, delta: f64) -> Result<Self> {
        Self::with_sigma(alpha, beta, delta, 0.5 * (alpha + beta))
    }

    pub fn with_sigma(alpha: f64, beta: f64, delta: f64, sigma: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && delta.is_finite() && sigma.is_finite()) {
            return Err(FoliateError::Config("gap constants must be finite".into()));
        }
        if delta < 0.0 {
            return Err(FoliateError::Config(format!(
                "delta must be non-negative, got {delta}"
            )));
        }
        if 2.0 * delta >= beta - alpha {
            return Err(FoliateError::SpectralGap {
                alpha,
                beta,
                delta,
                factor: 2.0,
            });
        }
        if !(sigma > alpha + delta && sigma < beta - delta) {
            return Err(FoliateError::Config(format!(
                "sigma = {sigma} must lie in (alpha + delta, beta - delta) = ({}, {})",
                alpha + delta,
                beta - delta
            )));
        }
        let gap = Self::unchecked(alpha, beta, delta, sigma);
        debug_assert!(gap.kappa < 1.0);
        Ok(SpectralGap {
            validated: true,
            ..gap
        })
    }

    /// Builds the constants without checking the gap condition.
    ///
    /// Used for exploratory runs (for example splittings of a Galerkin system
    /// whose gap is too small); contraction diagnostics are disabled for such
    /// gaps.
    pub fn unchecked(alpha: f64, beta: f64, delta: f64, sigma: f64) -> Self {
        let kappa = (delta / (beta - sigma)).max(delta / (sigma - alpha));
        SpectralGap {
            alpha,
            beta,
            delta,
            sigma,
            kappa,
            validated: false,
        }
    }

    pub fn is_validated(&self) -> bool {
        self.validated
    }

    /// Stronger condition `4 delta < beta - alpha` needed by the tracking map.
    pub fn check_tracking(&self) -> Result<()> {
        if 4.0 * self.delta >= self.beta - self.alpha {
            return Err(FoliateError::SpectralGap {
                alpha: self.alpha,
                beta: self.beta,
                delta: self.delta,
                factor: 4.0,
            });
        }
        Ok(())
    }

    /// Constants of the time-reversed, block-swapped system.
    pub fn reversed(&self) -> SpectralGap {
        SpectralGap {
            alpha: -self.beta,
            beta: -self.alpha,
            delta: self.delta,
            sigma: -self.sigma,
            kappa: self.kappa,
            validated: self.validated,
        }
    }

    /// `kappa / (1 - kappa)`, the Lipschitz bound of the approximate tracking map.
    pub fn sigma_map_lipschitz(&self) -> f64 {
        self.kappa / (1.0 - self.kappa)
    }
}

/// Smooth cutoff on `[0, inf)`: 1 on `[0,1]`, cubic blend on `[1,2]`, 0 beyond.
pub fn cutoff_theta(s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(FoliateError::Domain(format!(
            "cutoff argument must be >= 0, got {s}"
        )));
    }
    Ok(theta(s))
}

#[inline]
pub(crate) fn theta(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s <= 2.0 {
        let r = s - 1.0;
        2.0 * r * r * r - 3.0 * r * r + 1.0
    } else {
        0.0
    }
}

/// Cutoff radius for the prepared nonlinearity `H_rho = theta(|z|^2/rho^2) H(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preparation {
    pub rho: f64,
}

impl Preparation {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(FoliateError::Config(format!(
                "cutoff radius must be positive, got {rho}"
            )));
        }
        Ok(Preparation { rho })
    }

    #[inline]
    pub fn factor(&self, norm: f64) -> f64 {
        if !norm.is_finite() {
            return 0.0;
        }
        let r = norm / self.rho;
        theta(r * r)
    }
}

/// The nonlinear part `H = (F, G)` of a split system.
pub trait Nonlinearity: Send + Sync {
    /// Writes `F(x, y)` into `fx` and `G(x, y)` into `gy`.
    fn eval(&self, x: &[f64], y: &[f64], fx: &mut [f64], gy: &mut [f64]);
}

struct Prepared {
    inner: Arc<dyn Nonlinearity>,
    prep: Preparation,
}

impl Nonlinearity for Prepared {
    fn eval(&self, x: &[f64], y: &[f64], fx: &mut [f64], gy: &mut [f64]) {
        prepared_eval(&*self.inner, Some(self.prep), x, y, fx, gy);
    }
}

#[inline]
fn prepared_eval(
    inner: &dyn Nonlinearity,
    prep: Option<Preparation>,
    x: &[f64],
    y: &[f64],
    fx: &mut [f64],
    gy: &mut [f64],
) {
    let Some(prep) = prep else {
        inner.eval(x, y, fx, gy);
        return;
    };
    let c = prep.factor(euclid(x).max(euclid(y)));
    if c == 0.0 {
        fx.fill(0.0);
        gy.fill(0.0);
        return;
    }
    inner.eval(x, y, fx, gy);
    if c != 1.0 {
        fx.iter_mut().chain(gy.iter_mut()).for_each(|v| *v *= c);
    }
}

/// Wraps `h_raw` with the smooth cutoff of radius `rho`.
pub fn prepare(h_raw: Arc<dyn Nonlinearity>, rho: f64) -> Result<Arc<dyn Nonlinearity>> {
    Ok(Arc::new(Prepared {
        inner: h_raw,
        prep: Preparation::new(rho)?,
    }))
}

/// `(x', y') = (y, x)`, `F'(x', y') = -G(y', x')`, `G'(x', y') = -F(y', x')`.
struct Reversed(Arc<dyn Nonlinearity>);

impl Nonlinearity for Reversed {
    fn eval(&self, x: &[f64], y: &[f64], fx: &mut [f64], gy: &mut [f64]) {
        // original state is (x = y', y = x'); original F lands in G', original G in F'
        self.0.eval(y, x, gy, fx);
        fx.iter_mut().chain(gy.iter_mut()).for_each(|v| *v = -*v);
    }
}

/// A split system with diagonal linear part.
#[derive(Clone)]
pub struct SplitSystem {
    spectrum_a: Vec<f64>,
    spectrum_b: Vec<f64>,
    nonlinear: Arc<dyn Nonlinearity>,
    preparation: Option<Preparation>,
    label: String,
}

impl fmt::Debug for SplitSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SplitSystem")
            .field("label", &self.label)
            .field("spectrum_a", &self.spectrum_a)
            .field("spectrum_b", &self.spectrum_b)
            .field("preparation", &self.preparation)
            .finish()
    }
}

impl SplitSystem {
    pub fn new(
        spectrum_a: Vec<f64>,
        spectrum_b: Vec<f64>,
        nonlinear: Arc<dyn Nonlinearity>,
        preparation: Option<Preparation>,
    ) -> Result<Self> {
        if spectrum_a.is_empty() || spectrum_b.is_empty() {
            return Err(FoliateError::Config(
                "both X and Y blocks must be non-empty".into(),
            ));
        }
        if spectrum_a.iter().chain(&spectrum_b).any(|v| !v.is_finite()) {
            return Err(FoliateError::Config("spectra must be finite".into()));
        }
        Ok(SplitSystem {
            spectrum_a,
            spectrum_b,
            nonlinear,
            preparation,
            label: String::from("split system"),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_preparation(mut self, preparation: Option<Preparation>) -> Self {
        self.preparation = preparation;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim_x(&self) -> usize {
        self.spectrum_a.len()
    }

    pub fn dim_y(&self) -> usize {
        self.spectrum_b.len()
    }

    pub fn spectrum_a(&self) -> &[f64] {
        &self.spectrum_a
    }

    pub fn spectrum_b(&self) -> &[f64] {
        &self.spectrum_b
    }

    pub fn preparation(&self) -> Option<Preparation> {
        self.preparation
    }

    /// Largest eigenvalue of `A`: the sharp growth bound for the diagonal case.
    pub fn alpha(&self) -> f64 {
        self.spectrum_a
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest eigenvalue of `B`.
    pub fn beta(&self) -> f64 {
        self.spectrum_b.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Checks that `gap` bounds the spectra of this system.
    pub fn check_gap(&self, gap: &SpectralGap) -> Result<()> {
        if self.alpha() > gap.alpha || self.beta() < gap.beta {
            return Err(FoliateError::Config(format!(
                "gap constants (alpha = {}, beta = {}) do not bound the spectra \
                 (max A = {}, min B = {})",
                gap.alpha,
                gap.beta,
                self.alpha(),
                self.beta()
            )));
        }
        Ok(())
    }

    /// Prepared nonlinearity `H_rho(z)` (or the raw one when no cutoff is set).
    #[inline]
    pub fn nonlinear_into(&self, x: &[f64], y: &[f64], fx: &mut [f64], gy: &mut [f64]) {
        prepared_eval(&*self.nonlinear, self.preparation, x, y, fx, gy);
    }

    /// Nonlinearity without the cutoff.
    pub fn raw_nonlinear_into(&self, x: &[f64], y: &[f64], fx: &mut [f64], gy: &mut [f64]) {
        self.nonlinear.eval(x, y, fx, gy);
    }

    pub fn nonlinear(&self, z: &StateVector) -> StateVector {
        let mut out = StateVector::zeros(self.dim_x(), self.dim_y());
        self.nonlinear_into(&z.x, &z.y, &mut out.x, &mut out.y);
        out
    }

    /// Full right-hand side `Cz + H_rho(z)`.
    #[inline]
    pub fn rhs_into(&self, x: &[f64], y: &[f64], dx: &mut [f64], dy: &mut [f64]) {
        self.nonlinear_into(x, y, dx, dy);
        for ((d, &l), &v) in dx.iter_mut().zip(&self.spectrum_a).zip(x) {
            *d += l * v;
        }
        for ((d, &l), &v) in dy.iter_mut().zip(&self.spectrum_b).zip(y) {
            *d += l * v;
        }
    }

    pub fn rhs(&self, z: &StateVector) -> StateVector {
        let mut out = StateVector::zeros(self.dim_x(), self.dim_y());
        self.rhs_into(&z.x, &z.y, &mut out.x, &mut out.y);
        out
    }

    /// The time-reversed system with the blocks swapped: `A' = -B`, `B' = -A`.
    ///
    /// Solutions satisfy `z'(t) = swap(z(-t))`, which maps unstable leaves of
    /// this system onto stable leaves of the reversed one.
    pub fn reversed(&self) -> SplitSystem {
        SplitSystem {
            spectrum_a: self.spectrum_b.iter().map(|v| -v).collect(),
            spectrum_b: self.spectrum_a.iter().map(|v| -v).collect(),
            nonlinear: Arc::new(Reversed(self.nonlinear.clone())),
            preparation: self.preparation,
            label: format!("{} (reversed)", self.label),
        }
    }

    /// Estimates `Lip(H)` in the `max{|x|,|y|}` norm by sampling finite-difference
    /// Jacobians in the ball of the given radius.
    ///
    /// Each Jacobian is bounded by `max(|J_xx| + |J_xy|, |J_yx| + |J_yy|)` with
    /// spectral block norms.
    pub fn estimate_lipschitz(&self, radius: f64, samples: usize, seed: u64) -> f64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (nx, ny) = (self.dim_x(), self.dim_y());
        let n = nx + ny;
        let mut best = 0.0f64;
        let mut plus = StateVector::zeros(nx, ny);
        let mut minus = StateVector::zeros(nx, ny);
        for _ in 0..samples {
            let z = loop {
                let cand = StateVector::new(
                    (0..nx).map(|_| rng.gen_range(-radius..=radius)).collect(),
                    (0..ny).map(|_| rng.gen_range(-radius..=radius)).collect(),
                );
                if cand.norm() <= radius {
                    break cand;
                }
            };
            let eps = 1e-6 * radius.max(1.0);
            let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
            for col in 0..n {
                plus.x.copy_from_slice(&z.x);
                plus.y.copy_from_slice(&z.y);
                minus.x.copy_from_slice(&z.x);
                minus.y.copy_from_slice(&z.y);
                if col < nx {
                    plus.x[col] += eps;
                    minus.x[col] -= eps;
                } else {
                    plus.y[col - nx] += eps;
                    minus.y[col - nx] -= eps;
                }
                let hp = self.nonlinear(&plus);
                let hm = self.nonlinear(&minus);
                for row in 0..n {
                    let (a, b) = if row < nx {
                        (hp.x[row], hm.x[row])
                    } else {
                        (hp.y[row - nx], hm.y[row - nx])
                    };
                    jac[(row, col)] = (a - b) / (2.0 * eps);
                }
            }
            let block = |r0: usize, nr: usize, c0: usize, nc: usize| -> f64 {
                jac.view((r0, c0), (nr, nc))
                    .clone_owned()
                    .singular_values()
                    .max()
            };
            let bound = (block(0, nx, 0, nx) + block(0, nx, nx, ny))
                .max(block(nx, ny, 0, nx) + block(nx, ny, nx, ny));
            best = best.max(bound);
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;
    impl Nonlinearity for Quadratic {
        fn eval(&self, x: &[f64], y: &[f64], fx: &mut [f64], gy: &mut [f64]) {
            fx[0] = x[0] * y[0];
            gy[0] = x[0] * x[0];
        }
    }

    #[test]
    fn theta_values() {
        assert_eq!(cutoff_theta(0.5).unwrap(), 1.0);
        assert!((cutoff_theta(1.5).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(cutoff_theta(3.0).unwrap(), 0.0);
        assert!(cutoff_theta(-0.1).is_err());
    }

    #[test]
    fn theta_is_c1() {
        for &s in &[1.0, 2.0] {
            let mut last_gap = f64::INFINITY;
            for k in 2..7 {
                let eps = 10f64.powi(-k);
                let left = (theta(s) - theta(s - eps)) / eps;
                let right = (theta(s + eps) - theta(s)) / eps;
                let gap = (left - right).abs();
                assert!(gap <= 10.0 * eps, "s = {s}, eps = {eps}, gap = {gap}");
                assert!(gap <= last_gap);
                last_gap = gap;
            }
            assert!((theta(s + 1e-9) - theta(s - 1e-9)).abs() < 1e-8);
        }
    }

    #[test]
    fn prepared_matches_raw_inside_and_vanishes_outside() {
        let raw: Arc<dyn Nonlinearity> = Arc::new(Quadratic);
        let prepped = prepare(raw.clone(), 15.0).unwrap();
        let (mut f1, mut g1, mut f2, mut g2) = ([0.0], [0.0], [0.0], [0.0]);
        // |z| = 10 inside rho = 15
        raw.eval(&[10.0], &[-3.0], &mut f1, &mut g1);
        prepped.eval(&[10.0], &[-3.0], &mut f2, &mut g2);
        assert_eq!((f1, g1), (f2, g2));

        let outside = prepare(raw.clone(), 1.0).unwrap();
        outside.eval(&[2.0], &[0.0], &mut f2, &mut g2);
        assert_eq!((f2[0], g2[0]), (0.0, 0.0));

        // |z|^2 = 1.5 with rho = 1 -> factor 1/2
        let x = 1.5f64.sqrt();
        raw.eval(&[x], &[0.5], &mut f1, &mut g1);
        outside.eval(&[x], &[0.5], &mut f2, &mut g2);
        assert!((f2[0] - 0.5 * f1[0]).abs() < 1e-14);
        assert!((g2[0] - 0.5 * g1[0]).abs() < 1e-14);
    }

    #[test]
    fn gap_validation() {
        assert!(SpectralGap::new(-1.0, 1.0, 0.2).is_ok());
        assert!(matches!(
            SpectralGap::new(-1.0, 1.0, 1.0),
            Err(FoliateError::SpectralGap { .. })
        ));
        assert!(SpectralGap::with_sigma(-1.0, 1.0, 0.2, 0.85).is_err());
        let g = SpectralGap::with_sigma(-1.0, 1.0, 0.2, -0.5).unwrap();
        assert!((g.kappa - 0.4).abs() < 1e-15);
        assert!(g.check_tracking().is_ok());
        assert!(SpectralGap::new(-1.0, 1.0, 0.6).unwrap().check_tracking().is_err());
        let r = g.reversed();
        assert_eq!((r.alpha, r.beta, r.sigma, r.kappa), (-1.0, 1.0, 0.5, g.kappa));
    }

    #[test]
    fn reversed_system_swaps_and_negates() {
        let sys = SplitSystem::new(vec![-2.0], vec![3.0], Arc::new(Quadratic), None).unwrap();
        let rev = sys.reversed();
        assert_eq!(rev.spectrum_a(), &[-3.0]);
        assert_eq!(rev.spectrum_b(), &[2.0]);
        let z = StateVector::new(vec![0.7], vec![-0.4]);
        let f = sys.rhs(&z);
        let zr = StateVector::new(z.y.clone(), z.x.clone());
        let fr = rev.rhs(&zr);
        assert!((fr.x[0] + f.y[0]).abs() < 1e-15);
        assert!((fr.y[0] + f.x[0]).abs() < 1e-15);
    }

    #[test]
    fn euclid_is_overflow_safe() {
        assert_eq!(euclid(&[3.0, 4.0]), 5.0);
        let big = euclid(&[1e200, 1e200]);
        assert!((big / 1e200 - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(euclid(&[]), 0.0);
    }
}

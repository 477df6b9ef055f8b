//! Numeric evaluators for the asymptotic analysis of the mode estimators:
//! the dominating bias and variance of the density-derivative estimators at
//! the mode, and the closed-form optimal-bandwidth constants in the
//! ordinary-smooth case. Used to cross-validate the estimators at desk
//! scale, not at runtime.
//!
//! Everything is evaluated against an analytically differentiable truth: the
//! simulation scenarios' conditional normal mixtures times the uniform
//! covariate density. Super-smooth error laws admit only rate-level
//! statements (their variance bounds carry unspecified constants), so that
//! branch exposes rate calculators alone.

use crate::error::{Error, Result};
use crate::error_model::{ErrorModel, Smoothness};
use crate::numeric::{adaptive_simpson, gl256};
use crate::simulation::Scenario;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const X_LO: f64 = -2.0;
const X_HI: f64 = 2.0;

/// `mu_2^{(1)} = ∫ t^2 K1(t) dt = -phi_k1''(0) = 6`, exactly, by the
/// moment-derivative identity for Fourier pairs.
pub fn mu2_k1() -> f64 {
    6.0
}

/// `eta_0 = (2 pi)^{-1} ∫ |t|^{2b} phi_k1(t)^2 dt` on [-1, 1].
pub fn eta0(b: f64) -> f64 {
    // |t|^{2b} is even; integrate the smooth half-interval.
    let half = gl256().integrate_on(0.0, 1.0, |t| {
        let u = 1.0 - t * t;
        t.powf(2.0 * b) * (u * u * u) * (u * u * u)
    });
    half / std::f64::consts::PI
}

/// One normal mixture component with the x-derivatives of its parameters.
#[derive(Debug, Clone, Copy)]
struct GaussComp {
    mu: f64,
    dmu: f64,
    d2mu: f64,
    s: f64,
    ds: f64,
    d2s: f64,
}

impl GaussComp {
    fn phi(z: f64) -> f64 {
        INV_SQRT_2PI * (-0.5 * z * z).exp()
    }

    fn z(&self, y: f64) -> f64 {
        (y - self.mu) / self.s
    }

    fn density(&self, y: f64) -> f64 {
        Self::phi(self.z(y)) / self.s
    }

    fn d_y(&self, y: f64) -> f64 {
        let z = self.z(y);
        -z * Self::phi(z) / (self.s * self.s)
    }

    fn d_yy(&self, y: f64) -> f64 {
        let z = self.z(y);
        (z * z - 1.0) * Self::phi(z) / (self.s * self.s * self.s)
    }

    fn d_yyy(&self, y: f64) -> f64 {
        let z = self.z(y);
        z * (3.0 - z * z) * Self::phi(z) / (self.s * self.s * self.s * self.s)
    }

    fn d_xy(&self, y: f64) -> f64 {
        let z = self.z(y);
        let phi = Self::phi(z);
        let phi1 = -z * phi;
        let phi2 = (z * z - 1.0) * phi;
        let zx = -(self.dmu + z * self.ds) / self.s;
        phi2 * zx / (self.s * self.s) - 2.0 * phi1 * self.ds / (self.s * self.s * self.s)
    }

    fn d_xxy(&self, y: f64) -> f64 {
        let z = self.z(y);
        let phi = Self::phi(z);
        let phi1 = -z * phi;
        let phi2 = (z * z - 1.0) * phi;
        let phi3 = z * (3.0 - z * z) * phi;
        let s = self.s;
        let zx = -(self.dmu + z * self.ds) / s;
        let zxx = -(self.d2mu + 2.0 * zx * self.ds + z * self.d2s) / s;
        phi3 * zx * zx / (s * s) + phi2 * zxx / (s * s)
            - 4.0 * phi2 * zx * self.ds / (s * s * s)
            - 2.0 * phi1 * self.d2s / (s * s * s)
            + 6.0 * phi1 * self.ds * self.ds / (s * s * s * s)
    }
}

/// Analytic joint density `p(x, y)` of a scenario, with every partial
/// derivative the asymptotic formulas consume, plus the observable-pair
/// density `f_{W,Y}` under the attached error model.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticTruth {
    scenario: Scenario,
    model: ErrorModel,
}

impl AnalyticTruth {
    pub fn new(scenario: Scenario, model: ErrorModel) -> Self {
        Self { scenario, model }
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn model(&self) -> &ErrorModel {
        &self.model
    }

    fn components(&self, x: f64) -> [GaussComp; 2] {
        let m = Scenario::m(x);
        let dm = 1.0 + 2.0 * x;
        let d2m = 2.0;
        match self.scenario {
            Scenario::C1 => {
                let e = (-x * x).exp();
                let s = 0.5 + e;
                let ds = -2.0 * x * e;
                let d2s = (4.0 * x * x - 2.0) * e;
                [
                    GaussComp {
                        mu: m - 2.0 * s,
                        dmu: dm - 2.0 * ds,
                        d2mu: d2m - 2.0 * d2s,
                        s: 2.5 * s,
                        ds: 2.5 * ds,
                        d2s: 2.5 * d2s,
                    },
                    GaussComp {
                        mu: m,
                        dmu: dm,
                        d2mu: d2m,
                        s: 0.5 * s,
                        ds: 0.5 * ds,
                        d2s: 0.5 * d2s,
                    },
                ]
            }
            Scenario::C2 => [
                GaussComp { mu: m, dmu: dm, d2mu: d2m, s: 0.5, ds: 0.0, d2s: 0.0 },
                GaussComp { mu: m - 6.0, dmu: dm, d2mu: d2m, s: 0.5, ds: 0.0, d2s: 0.0 },
            ],
        }
    }

    /// Uniform(-2, 2) covariate density.
    pub fn f_x(&self, x: f64) -> f64 {
        if (X_LO..=X_HI).contains(&x) {
            0.25
        } else {
            0.0
        }
    }

    /// Zero on the interior of the support.
    pub fn f_x_prime(&self, _x: f64) -> f64 {
        0.0
    }

    fn mix<F: Fn(&GaussComp) -> f64>(&self, x: f64, f: F) -> f64 {
        let [a, b] = self.components(x);
        self.f_x(x) * 0.5 * (f(&a) + f(&b))
    }

    pub fn p(&self, x: f64, y: f64) -> f64 {
        self.mix(x, |c| c.density(y))
    }

    pub fn p_y(&self, x: f64, y: f64) -> f64 {
        self.mix(x, |c| c.d_y(y))
    }

    pub fn p_yy(&self, x: f64, y: f64) -> f64 {
        self.mix(x, |c| c.d_yy(y))
    }

    pub fn p_yyy(&self, x: f64, y: f64) -> f64 {
        self.mix(x, |c| c.d_yyy(y))
    }

    pub fn p_xy(&self, x: f64, y: f64) -> f64 {
        self.mix(x, |c| c.d_xy(y))
    }

    pub fn p_xxy(&self, x: f64, y: f64) -> f64 {
        self.mix(x, |c| c.d_xxy(y))
    }

    /// Density of `(W, Y)`: the convolution of `p(., y)` with the error
    /// density, by quadrature split at the Laplace kink.
    pub fn f_wy(&self, x: f64, y: f64) -> f64 {
        if self.model.is_no_error() {
            return self.p(x, y);
        }
        let f_u = |v: f64| -> f64 {
            match self.model.kind() {
                crate::error_model::ErrorKind::Laplace => {
                    let beta = self.model.sigma_u() / std::f64::consts::SQRT_2;
                    (-(v.abs()) / beta).exp() / (2.0 * beta)
                }
                crate::error_model::ErrorKind::Gaussian => {
                    let s = self.model.sigma_u();
                    INV_SQRT_2PI * (-0.5 * (v / s) * (v / s)).exp() / s
                }
                crate::error_model::ErrorKind::NoError => unreachable!(),
            }
        };
        let integrand = |u: f64| self.p(u, y) * f_u(x - u);
        let split = x.clamp(X_LO, X_HI);
        adaptive_simpson(&integrand, X_LO, split, 5e-10)
            + adaptive_simpson(&integrand, split, X_HI, 5e-10)
    }

    /// All conditional modes at `x` (exact, root-found).
    pub fn modes_at(&self, x: f64) -> Vec<f64> {
        self.scenario.conditional(x).modes()
    }

    /// The principal (highest-density) mode at `x`.
    pub fn mode_at(&self, x: f64) -> f64 {
        let mix = self.scenario.conditional(x);
        let modes = mix.modes();
        modes
            .into_iter()
            .max_by(|a, b| mix.density(*a).partial_cmp(&mix.density(*b)).unwrap())
            .expect("a normal mixture always has a mode")
    }

    fn ordinary_constants(&self) -> Result<(f64, f64)> {
        match self.model.smoothness() {
            Smoothness::OrdinarySmooth { order, constant } => Ok((order, constant)),
            other => Err(Error::FormulaDomain(format!(
                "ordinary-smooth formula applied to {other:?}"
            ))),
        }
    }
}

/// Dominating bias of the local constant derivative estimator at
/// `(x, y_M(x))`: `0.5 [p_xxy mu_2 h1^2 + p_yyy h2^2]`.
pub fn bias_lc(truth: &AnalyticTruth, h1: f64, h2: f64, x: f64) -> f64 {
    let y_m = truth.mode_at(x);
    0.5 * (truth.p_xxy(x, y_m) * mu2_k1() * h1 * h1 + truth.p_yyy(x, y_m) * h2 * h2)
}

/// Dominating variance of the local constant derivative estimator under an
/// ordinary-smooth error law of order `b` with constant `c`:
/// `eta_0 f_WY / (4 sqrt(pi) c^2 n h1^{1+2b} h2^3)`.
pub fn variance_lc_ordinary(truth: &AnalyticTruth, h1: f64, h2: f64, n: usize, x: f64) -> Result<f64> {
    let (b, c) = truth.ordinary_constants()?;
    let y_m = truth.mode_at(x);
    let f = truth.f_wy(x, y_m);
    Ok(eta0(b) * f
        / (4.0 * std::f64::consts::PI.sqrt() * c * c * n as f64 * h1.powf(1.0 + 2.0 * b) * h2.powi(3)))
}

/// Dominating bias of the local linear conditional-derivative estimator:
/// `f_X^{-1} [ (0.5 p_xxy - f_X' p_xy(y_M|x)) mu_2 h1^2 + 0.5 p_yyy h2^2 ]`.
pub fn bias_ll(truth: &AnalyticTruth, h1: f64, h2: f64, x: f64) -> Result<f64> {
    let fx = truth.f_x(x);
    if fx <= 0.0 {
        return Err(Error::FormulaDomain(format!("f_X({x}) = 0")));
    }
    let y_m = truth.mode_at(x);
    // conditional mixed derivative at the mode: p_y = 0 there, so
    // p_xy(y_M|x) = p_xy(x, y_M) / f_X(x)
    let p_xy_cond = truth.p_xy(x, y_m) / fx;
    Ok((1.0 / fx)
        * ((0.5 * truth.p_xxy(x, y_m) - truth.f_x_prime(x) * p_xy_cond) * mu2_k1() * h1 * h1
            + 0.5 * truth.p_yyy(x, y_m) * h2 * h2))
}

/// Ordinary-smooth variance of the local linear conditional-derivative
/// estimator: the local constant variance divided by `f_X(x)^2`.
pub fn variance_ll_ordinary(
    truth: &AnalyticTruth,
    h1: f64,
    h2: f64,
    n: usize,
    x: f64,
) -> Result<f64> {
    let fx = truth.f_x(x);
    if fx <= 0.0 {
        return Err(Error::FormulaDomain(format!("f_X({x}) = 0")));
    }
    Ok(variance_lc_ordinary(truth, h1, h2, n, x)? / (fx * fx))
}

/// The four mode-curve integrals entering the optimal-bandwidth constants,
/// all integrands evaluated at `(x, y_M(x))` over the covariate support.
#[derive(Debug, Clone, Copy)]
pub struct MiseIntegrals {
    /// `∫ p_yy^{-2} p_xxy p_yyy`
    pub i1: f64,
    /// `∫ p_yy^{-2} p_xxy^2`
    pub i2: f64,
    /// `∫ p_yy^{-2} p_yyy^2`
    pub i3: f64,
    /// `∫ p_yy^{-2} f_WY`
    pub i4: f64,
}

/// Evaluates the four integrals by adaptive quadrature (tolerance 1e-8).
pub fn mise_integrals(truth: &AnalyticTruth) -> MiseIntegrals {
    let tol = 1e-8;
    let at_mode = |x: f64, f: &dyn Fn(f64, f64) -> f64| -> f64 {
        let y_m = truth.mode_at(x);
        let pyy = truth.p_yy(x, y_m);
        f(x, y_m) / (pyy * pyy)
    };
    let i1 = adaptive_simpson(
        &|x| at_mode(x, &|x, y| truth.p_xxy(x, y) * truth.p_yyy(x, y)),
        X_LO,
        X_HI,
        tol,
    );
    let i2 = adaptive_simpson(
        &|x| at_mode(x, &|x, y| truth.p_xxy(x, y).powi(2)),
        X_LO,
        X_HI,
        tol,
    );
    let i3 = adaptive_simpson(
        &|x| at_mode(x, &|x, y| truth.p_yyy(x, y).powi(2)),
        X_LO,
        X_HI,
        tol,
    );
    let i4 = adaptive_simpson(&|x| at_mode(x, &|x, y| truth.f_wy(x, y)), X_LO, X_HI, tol);
    MiseIntegrals { i1, i2, i3, i4 }
}

/// Output of [`optimal_bandwidths_ordinary`].
#[derive(Debug, Clone, Copy)]
pub struct OptimalBandwidths {
    pub h1: f64,
    pub h2: f64,
    pub r1: f64,
    pub r2: f64,
    pub integrals: MiseIntegrals,
}

/// Closed-form asymptotically optimal bandwidths for the local constant
/// mode estimator under an ordinary-smooth error law of order `b` with
/// constant `c`: `h1 = r1 h2`, `h2 = r2 n^{-1/(2b+8)}`.
pub fn optimal_bandwidths_ordinary(
    truth: &AnalyticTruth,
    n: usize,
    b: f64,
    c: f64,
) -> Result<OptimalBandwidths> {
    let integrals = mise_integrals(truth);
    let MiseIntegrals { i1, i2, i3, i4 } = integrals;
    if i2 <= 0.0 || i3 < 0.0 || i4 <= 0.0 {
        return Err(Error::FormulaDomain(format!(
            "nonpositive curvature integrals: I2={i2}, I3={i3}, I4={i4} (quadrature failure?)"
        )));
    }
    let mu2 = mu2_k1();
    let disc = (b - 1.0).powi(2) * i1 * i1 + 3.0 * (2.0 * b + 1.0) * i2 * i3;
    if disc < 0.0 {
        return Err(Error::FormulaDomain(format!("negative discriminant {disc}")));
    }
    let r1_sq = ((b - 1.0) * i1 + disc.sqrt()) / (3.0 * mu2 * i2);
    if r1_sq <= 0.0 {
        return Err(Error::FormulaDomain(format!("nonpositive r1^2 = {r1_sq}")));
    }
    let r1 = r1_sq.sqrt();
    let denom = r1.powf(2.0 * b + 1.0) * (r1 * r1 * mu2 * i1 + i3);
    if denom <= 0.0 {
        return Err(Error::FormulaDomain(format!("nonpositive r2 denominator {denom}")));
    }
    let r2 = (3.0 * eta0(b) * i4 / (4.0 * std::f64::consts::PI.sqrt() * c * c * denom))
        .powf(1.0 / (2.0 * b + 8.0));
    let h2 = r2 * (n as f64).powf(-1.0 / (2.0 * b + 8.0));
    let h1 = r1 * h2;
    Ok(OptimalBandwidths { h1, h2, r1, r2, integrals })
}

/// The assembled asymptotic MISE surface the bandwidths above minimize:
/// `0.25 (mu_2^2 I2 h1^4 + 2 mu_2 I1 h1^2 h2^2 + I3 h2^4)
///  + eta_0 I4 / (4 sqrt(pi) c^2 n h1^{2b+1} h2^3)`.
pub fn amise_lc_ordinary(
    integrals: &MiseIntegrals,
    n: usize,
    b: f64,
    c: f64,
    h1: f64,
    h2: f64,
) -> f64 {
    let mu2 = mu2_k1();
    let bias2 = 0.25
        * (mu2 * mu2 * integrals.i2 * h1.powi(4)
            + 2.0 * mu2 * integrals.i1 * h1 * h1 * h2 * h2
            + integrals.i3 * h2.powi(4));
    let var = eta0(b) * integrals.i4
        / (4.0 * std::f64::consts::PI.sqrt()
            * c
            * c
            * n as f64
            * h1.powf(2.0 * b + 1.0)
            * h2.powi(3));
    bias2 + var
}

/// Super-smooth variance rate factor (constants unspecified in the bound):
/// `exp(2 h1^{-b} / d2) / (n h1^{1-2 b2} h2^3)` with `b2 = 0` for the
/// Gaussian law (its polynomial envelope exponent is zero).
pub fn variance_rate_supersmooth(model: &ErrorModel, h1: f64, h2: f64, n: usize) -> Result<f64> {
    let Smoothness::SuperSmooth { order: b, d2 } = model.smoothness() else {
        return Err(Error::FormulaDomain("model is not super smooth".into()));
    };
    Ok((2.0 * h1.powf(-b) / d2).exp() / (n as f64 * h1 * h2.powi(3)))
}

/// Rate-level optimal bandwidths in the super-smooth case: `h1` solves
/// `exp(2 h1^{-b}/d2) = n h1^{3b/2 + 6}` (unit constants, `b2 = 0`) and
/// `h2 = h1^{(b+2)/2}`; only the rate relation is meaningful.
pub fn optimal_rates_supersmooth(n: usize, b: f64, d2: f64) -> Result<(f64, f64)> {
    if !(b > 0.0 && d2 > 0.0) || n < 2 {
        return Err(Error::FormulaDomain("need b > 0, d2 > 0, n >= 2".into()));
    }
    // g(h1) = exp(2 h1^{-b}/d2) - n h1^{3b/2+6}: decreasing-minus-increasing,
    // so the root is unique; bracket then bisect.
    let g = |h1: f64| (2.0 * h1.powf(-b) / d2).exp() - n as f64 * h1.powf(1.5 * b + 6.0);
    let mut lo = 1e-3;
    let mut hi = 1.0;
    while g(hi) > 0.0 && hi < 1e6 {
        hi *= 2.0;
    }
    while g(lo) < 0.0 && lo > 1e-12 {
        lo *= 0.5;
    }
    if g(lo) < 0.0 || g(hi) > 0.0 {
        return Err(Error::FormulaDomain("could not bracket the rate equation".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let h1 = 0.5 * (lo + hi);
    Ok((h1, h1.powf(0.5 * (b + 2.0))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deconv_kernel::{k1, DeconvKernel};
    use crate::density_est::joint_density_dy;
    use crate::error_model::sigma2_from_reliability;
    use crate::simulation::{generate_dataset, BandwidthMode, SimConfig, SimStartRule};
    use crate::mode_seek::{EstimatorKind, GridSpec, StartRule};
    use crate::stats;

    fn c1_truth(lambda: f64) -> AnalyticTruth {
        let sigma2 = sigma2_from_reliability(crate::simulation::VAR_X, lambda).unwrap();
        AnalyticTruth::new(Scenario::C1, ErrorModel::laplace(sigma2.sqrt()).unwrap())
    }

    #[test]
    fn eta0_two_quadratures_agree() {
        // Gauss-Legendre vs adaptive Simpson on the same integrand.
        let via_gl = eta0(2.0);
        let via_simpson = adaptive_simpson(
            &|t: f64| {
                let u = 1.0 - t * t;
                t.powi(4) * u.powi(6)
            },
            0.0,
            1.0,
            1e-13,
        ) / std::f64::consts::PI;
        assert!((via_gl - via_simpson).abs() < 1e-9);
        assert!((via_gl - 1.277e-3).abs() < 1e-6, "eta0 = {via_gl}");
    }

    #[test]
    fn mu2_matches_wide_grid_quadrature() {
        // independent route: trapezoid of t^2 K1(t); the integrand decays
        // like 1/t^2 with oscillatory cancellation, so [-150, 150] leaves a
        // tail below 1e-3
        let (hi, steps) = (150.0, 30_000usize);
        let step = 2.0 * hi / steps as f64;
        let mut total = 0.0;
        for i in 0..=steps {
            let t = -hi + i as f64 * step;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            total += w * t * t * k1(t);
        }
        total *= step;
        assert!((total - mu2_k1()).abs() < 0.02, "moment = {total}");
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for scenario in [Scenario::C1, Scenario::C2] {
            let truth = AnalyticTruth::new(scenario, ErrorModel::no_error());
            let eps = 1e-5;
            for &(x, y) in &[(0.3, 0.1), (-1.2, 1.0), (1.5, 2.5), (0.0, -1.5)] {
                let fd_y = (truth.p(x, y + eps) - truth.p(x, y - eps)) / (2.0 * eps);
                assert!((truth.p_y(x, y) - fd_y).abs() < 1e-6);

                let fd_yy = (truth.p_y(x, y + eps) - truth.p_y(x, y - eps)) / (2.0 * eps);
                assert!((truth.p_yy(x, y) - fd_yy).abs() < 1e-6);

                let fd_yyy = (truth.p_yy(x, y + eps) - truth.p_yy(x, y - eps)) / (2.0 * eps);
                assert!((truth.p_yyy(x, y) - fd_yyy).abs() < 1e-6);

                let fd_xy = (truth.p_y(x + eps, y) - truth.p_y(x - eps, y)) / (2.0 * eps);
                assert!((truth.p_xy(x, y) - fd_xy).abs() < 1e-6, "{scenario:?} p_xy");

                let fd_xxy = (truth.p_xy(x + eps, y) - truth.p_xy(x - eps, y)) / (2.0 * eps);
                assert!((truth.p_xxy(x, y) - fd_xxy).abs() < 1e-6, "{scenario:?} p_xxy");
            }
        }
    }

    #[test]
    fn joint_density_has_unit_mass() {
        let truth = AnalyticTruth::new(Scenario::C1, ErrorModel::no_error());
        let mass = adaptive_simpson(
            &|x| adaptive_simpson(&|y| truth.p(x, y), -25.0, 25.0, 1e-9),
            X_LO,
            X_HI,
            1e-7,
        );
        assert!((mass - 1.0).abs() < 1e-5, "mass = {mass}");
    }

    #[test]
    fn f_wy_has_unit_mass() {
        let truth = c1_truth(0.85);
        // W support stretches beyond [-2, 2] by the error tails.
        let mass = adaptive_simpson(
            &|x| adaptive_simpson(&|y| truth.f_wy(x, y), -25.0, 25.0, 1e-9),
            -10.0,
            10.0,
            1e-7,
        );
        assert!((mass - 1.0).abs() < 1e-4, "mass = {mass}");
    }

    #[test]
    fn bias_basics() {
        let truth = c1_truth(0.75);
        assert_eq!(bias_lc(&truth, 0.0, 0.0, 0.5), 0.0);
        let b1 = bias_lc(&truth, 0.2, 0.3, 0.5);
        let b2 = bias_lc(&truth, 0.4, 0.6, 0.5);
        assert!((b2 - 4.0 * b1).abs() < 1e-12 * b1.abs().max(1.0));
        assert_eq!(bias_ll(&truth, 0.0, 0.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn ll_formulas_relate_to_lc_under_uniform_design() {
        // f_X' = 0: the local linear bias is the local constant bias over
        // f_X, and the variances differ by f_X^2.
        let truth = c1_truth(0.75);
        let (h1, h2, n, x) = (0.3, 0.4, 1500, 0.5);
        let fx = truth.f_x(x);
        let lc = bias_lc(&truth, h1, h2, x);
        let ll = bias_ll(&truth, h1, h2, x).unwrap();
        assert!((ll - lc / fx).abs() < 1e-12 * ll.abs());
        let vlc = variance_lc_ordinary(&truth, h1, h2, n, x).unwrap();
        let vll = variance_ll_ordinary(&truth, h1, h2, n, x).unwrap();
        assert!((vll - vlc / (fx * fx)).abs() < 1e-12 * vll.abs());
    }

    #[test]
    fn variance_scalings() {
        let truth = c1_truth(0.75);
        let v1 = variance_lc_ordinary(&truth, 0.4, 0.4, 1000, 0.5).unwrap();
        let v2 = variance_lc_ordinary(&truth, 0.4, 0.4, 2000, 0.5).unwrap();
        assert!((v1 / v2 - 2.0).abs() < 1e-12);
        // halving h1 multiplies by 2^{1+2b} = 32 for b = 2
        let v3 = variance_lc_ordinary(&truth, 0.2, 0.4, 1000, 0.5).unwrap();
        assert!((v3 / v1 - 32.0).abs() < 1e-9);
    }

    /// Exact finite-sample mean of the derivative estimator at `(x, y)`:
    /// `(1/h2) ∫∫ K1(s) K2(t) t p(x + h1 s, y + h2 t) ds dt`, using the
    /// conditional-unbiasedness reduction to error-free kernels. The s-range
    /// adapts until the covariate support is exhausted.
    fn exact_mean_dy(truth: &AnalyticTruth, h1: f64, h2: f64, x: f64, y: f64) -> f64 {
        let rule = gl256();
        let reach = (2.0 + x.abs()) / h1 + 1.0;
        let steps = (200.0 * reach).ceil() as usize; // step 0.005 in s
        let ds = 2.0 * reach / steps as f64;
        let mut total = 0.0;
        for i in 0..=steps {
            let s = -reach + i as f64 * ds;
            let wq = if i == 0 || i == steps { 0.5 } else { 1.0 };
            let inner = rule.integrate_on(-8.0, 8.0, |t| {
                crate::deconv_kernel::k2(0, t) * t * truth.p(x + h1 * s, y + h2 * t)
            });
            total += wq * k1(s) * inner;
        }
        total * ds / h2
    }

    /// Monte-Carlo run of the derivative estimator at the true mode.
    fn mc_dy_samples(truth: &AnalyticTruth, h1: f64, h2: f64, x: f64, reps: usize) -> Vec<f64> {
        let y_m = truth.mode_at(x);
        let cfg = SimConfig {
            scenario: truth.scenario(),
            n: 2000,
            lambda: 0.75,
            n_replicates: reps,
            seed: 1234,
            grid: GridSpec::new(-2.0, 2.0, 1.0).unwrap(),
            start_rule: SimStartRule::Percentile(StartRule::default()),
            estimators: vec![EstimatorKind::LocalConstant],
            bandwidth_mode: BandwidthMode::Oracle { h1_grid: vec![h1], h2_grid: vec![h2] },
        };
        let ku = DeconvKernel::tabulated(h1, *truth.model(), 0).unwrap();
        (0..reps)
            .map(|r| {
                let (data, _) = generate_dataset(&cfg, r).unwrap();
                joint_density_dy(&data, &ku, h2, x, y_m)
            })
            .collect()
    }

    /// The estimator's Monte-Carlo mean agrees with its exact quadrature
    /// expectation, and the dominating-bias formula is the small-bandwidth
    /// limit of that exact expectation (the exact-to-asymptotic ratio climbs
    /// toward 1 as the bandwidths shrink; at practical bandwidths the
    /// remainder terms are material because K1 has second moment 6).
    #[test]
    fn bias_lc_against_monte_carlo_and_limit() {
        let truth = c1_truth(0.75);
        let (x, h1, h2) = (0.5, 0.3, 0.3);
        let y_m = truth.mode_at(x);

        let vals = mc_dy_samples(&truth, h1, h2, x, 2000);
        let mc_bias = stats::mean(&vals);
        let mc_se = stats::sample_sd(&vals) / (vals.len() as f64).sqrt();
        let exact = exact_mean_dy(&truth, h1, h2, x, y_m);
        assert!(
            (mc_bias - exact).abs() < 4.0 * mc_se,
            "mc {mc_bias} (se {mc_se}) vs exact {exact}"
        );

        let ratio_at = |h: f64| exact_mean_dy(&truth, h, h, x, y_m) / bias_lc(&truth, h, h, x);
        let coarse = ratio_at(0.075);
        let fine = ratio_at(0.0375);
        assert!(
            (fine - 1.0).abs() < (coarse - 1.0).abs(),
            "no convergence: {coarse} then {fine}"
        );
        assert!((fine - 1.0).abs() < 0.25, "ratio at h=0.0375 is {fine}");
    }

    /// Exact second moment of one derivative-estimator summand, integrating
    /// over (X, U, Y|X).
    fn exact_second_moment_dy(truth: &AnalyticTruth, h1: f64, h2: f64, x: f64, y: f64) -> f64 {
        let rule = gl256();
        let ku = DeconvKernel::tabulated(h1, *truth.model(), 0).unwrap();
        let sigma_u = truth.model().sigma_u();
        let beta = sigma_u / std::f64::consts::SQRT_2;
        let f_u = |u: f64| (-(u.abs()) / beta).exp() / (2.0 * beta);
        let u_reach = 10.0 * sigma_u;
        let (xs, us) = (800usize, 2400usize);
        let dx = 4.0 / xs as f64;
        let du = 2.0 * u_reach / us as f64;
        let mut total = 0.0;
        for i in 0..=xs {
            let xv = -2.0 + i as f64 * dx;
            let wx = if i == 0 || i == xs { 0.5 } else { 1.0 };
            let mix = truth.scenario().conditional(xv);
            let inner_y = h2
                * rule.integrate_on(-8.0, 8.0, |t| {
                    let k = crate::deconv_kernel::k2(0, t);
                    k * k * t * t * mix.density(y + h2 * t)
                });
            let mut inner_u = 0.0;
            for j in 0..=us {
                let u = -u_reach + j as f64 * du;
                let wu = if j == 0 || j == us { 0.5 } else { 1.0 };
                let kv = ku.eval(0, (xv + u - x) / h1);
                inner_u += wu * kv * kv * f_u(u);
            }
            total += wx * 0.25 * inner_y * inner_u * du;
        }
        total * dx / (h1 * h1 * h2 * h2 * h2 * h2)
    }

    /// Monte-Carlo variance agrees with the exact quadrature variance at the
    /// spec'd bandwidths, and the ordinary-smooth variance constant is the
    /// small-h1 limit: `h1^{2b} c^2 ∫ K_{U,0}^2 -> eta_0`.
    #[test]
    fn variance_lc_against_monte_carlo_and_limit() {
        let truth = c1_truth(0.75);
        let (x, h1, h2, n) = (0.5, 0.4, 0.4, 2000usize);
        let y_m = truth.mode_at(x);

        let vals = mc_dy_samples(&truth, h1, h2, x, 2000);
        let mc_var = stats::sample_var(&vals);
        let mean = exact_mean_dy(&truth, h1, h2, x, y_m);
        let second = exact_second_moment_dy(&truth, h1, h2, x, y_m);
        let exact_var = (second - mean * mean) / n as f64;
        let rel = (mc_var - exact_var).abs() / exact_var;
        assert!(rel < 0.25, "mc {mc_var} vs exact {exact_var} (rel {rel})");

        // limit of the variance constant: for Laplace error of order b = 2
        // with constant c, h1^4 c^2 ∫ K_{U,0}(s)^2 ds -> eta_0
        let model = truth.model();
        let Smoothness::OrdinarySmooth { order: b, constant: c } = model.smoothness() else {
            unreachable!()
        };
        let ratio_at = |h: f64| {
            let (reach, steps) = (250.0, 50_000usize);
            let ds = 2.0 * reach / steps as f64;
            let mut sq = 0.0;
            for i in 0..=steps {
                let s = -reach + i as f64 * ds;
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                let v = crate::deconv_kernel::ku_ell(0, s, h, model);
                sq += w * v * v;
            }
            sq *= ds;
            h.powf(2.0 * b) * c * c * sq / eta0(b)
        };
        let coarse = ratio_at(0.05);
        let fine = ratio_at(0.025);
        assert!(
            (fine - 1.0).abs() < (coarse - 1.0).abs(),
            "no convergence: {coarse} then {fine}"
        );
        assert!((fine - 1.0).abs() < 0.1, "ratio at h1=0.025 is {fine}");
    }

    #[test]
    fn optimal_bandwidths_positive_and_rate_exact() {
        let truth = c1_truth(0.85);
        let (b, c) = match truth.model().smoothness() {
            Smoothness::OrdinarySmooth { order, constant } => (order, constant),
            _ => unreachable!(),
        };
        let opt = optimal_bandwidths_ordinary(&truth, 500, b, c).unwrap();
        assert!(opt.h1 > 0.0 && opt.h2 > 0.0 && opt.r1 > 0.0 && opt.r2 > 0.0);
        // b = 2: h2 ~ n^{-1/12}, so quadrupling n twelve-fold halves nothing --
        // the clean statement is h2(n) / h2(4096 n) = 4096^{1/12} = 2.
        let opt_big = optimal_bandwidths_ordinary(&truth, 500 * 4096, b, c).unwrap();
        assert!((opt.h2 / opt_big.h2 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn optimal_bandwidths_minimize_their_own_surface() {
        let truth = c1_truth(0.85);
        let (b, c) = match truth.model().smoothness() {
            Smoothness::OrdinarySmooth { order, constant } => (order, constant),
            _ => unreachable!(),
        };
        let n = 500;
        let opt = optimal_bandwidths_ordinary(&truth, n, b, c).unwrap();
        let at_opt = amise_lc_ordinary(&opt.integrals, n, b, c, opt.h1, opt.h2);
        let mut grid_min = f64::INFINITY;
        for i in 0..7 {
            for j in 0..7 {
                let f1 = 1.5f64.powf(-1.0 + i as f64 / 3.0);
                let f2 = 1.5f64.powf(-1.0 + j as f64 / 3.0);
                let v = amise_lc_ordinary(&opt.integrals, n, b, c, opt.h1 * f1, opt.h2 * f2);
                grid_min = grid_min.min(v);
            }
        }
        assert!(at_opt <= grid_min * 1.0 + 1e-15, "{at_opt} vs {grid_min}");
    }

    #[test]
    fn supersmooth_rate_relation_holds() {
        let model = ErrorModel::gaussian(0.5).unwrap();
        let Smoothness::SuperSmooth { order: b, d2 } = model.smoothness() else {
            unreachable!()
        };
        let (h1, h2) = optimal_rates_supersmooth(2000, b, d2).unwrap();
        assert!(h1 > 0.0 && h2 > 0.0);
        // h1 ~ h2^{2/(b+2)}
        assert!((h1 - h2.powf(2.0 / (b + 2.0))).abs() < 1e-9);
        // the defining balance holds at the root
        let lhs = (2.0 * h1.powf(-b) / d2).exp();
        let rhs = 2000.0 * h1.powf(1.5 * b + 6.0);
        assert!((lhs / rhs - 1.0).abs() < 1e-6);
        assert!(variance_rate_supersmooth(&model, h1, h2, 2000).unwrap() > 0.0);
        assert!(variance_rate_supersmooth(&ErrorModel::laplace(0.5).unwrap(), 0.3, 0.3, 100)
            .is_err());
    }
}

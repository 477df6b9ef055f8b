//! The measurement-error law: its characteristic function, sampling, and
//! reliability-ratio arithmetic.
//!
//! The observed covariate is `W = X + U` where `U` is independent noise with
//! a known distribution. Everything downstream only needs the characteristic
//! function `phi_u` of that distribution (for Fourier inversion) and the
//! ability to draw from it (for simulation and SIMEX).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Which distribution the measurement error follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// No measurement error; `W = X`. Running the deconvolution pipeline
    /// with this model reproduces the error-free (naive) estimators, since
    /// the characteristic function is identically 1.
    NoError,
    /// Laplace(0, sigma_u / sqrt(2)), so that Var(U) = sigma_u^2.
    Laplace,
    /// N(0, sigma_u^2).
    Gaussian,
}

/// Tail-decay class of the characteristic function, which governs the
/// convergence rates of deconvolution estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothness {
    /// Point mass at zero (no error).
    Degenerate,
    /// `t^order * phi_u(t) -> constant` as `t -> inf` (polynomial decay).
    OrdinarySmooth { order: f64, constant: f64 },
    /// `|phi_u(t)| ~ exp(-|t|^order / d2)` up to polynomial factors.
    /// The polynomial-envelope exponents are 0 for the Gaussian law and are
    /// bound parameters only; no computation consumes them.
    SuperSmooth { order: f64, d2: f64 },
}

/// A known measurement-error distribution, parameterized by its standard
/// deviation `sigma_u`.
///
/// Invariant: `sigma_u == 0` if and only if the kind is [`ErrorKind::NoError`];
/// the constructors normalize a zero-sigma Laplace or Gaussian to `NoError`.
/// Values are immutable and `Copy`, so they can be shared freely across
/// threads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorModel {
    kind: ErrorKind,
    sigma_u: f64,
}

impl ErrorModel {
    /// The degenerate (error-free) model.
    pub fn no_error() -> Self {
        Self { kind: ErrorKind::NoError, sigma_u: 0.0 }
    }

    /// Laplace errors with standard deviation `sigma_u` (scale `sigma_u/sqrt(2)`).
    pub fn laplace(sigma_u: f64) -> Result<Self> {
        Self::with_kind(ErrorKind::Laplace, sigma_u)
    }

    /// Gaussian errors with standard deviation `sigma_u`.
    pub fn gaussian(sigma_u: f64) -> Result<Self> {
        Self::with_kind(ErrorKind::Gaussian, sigma_u)
    }

    fn with_kind(kind: ErrorKind, sigma_u: f64) -> Result<Self> {
        if !sigma_u.is_finite() || sigma_u < 0.0 {
            return Err(Error::InvalidSigma(sigma_u));
        }
        if sigma_u == 0.0 {
            return Ok(Self::no_error());
        }
        Ok(Self { kind, sigma_u })
    }

    pub fn kind(&self) -> ErrorKind {
        self.kind
    }

    pub fn sigma_u(&self) -> f64 {
        self.sigma_u
    }

    /// Var(U) = sigma_u^2.
    pub fn variance(&self) -> f64 {
        self.sigma_u * self.sigma_u
    }

    pub fn is_no_error(&self) -> bool {
        self.kind == ErrorKind::NoError
    }

    /// Smoothness class with its constants: Laplace is ordinary smooth of
    /// order 2 with constant `2/sigma_u^2`; Gaussian is super smooth of
    /// order 2 with `d2 = 2/sigma_u^2`.
    pub fn smoothness(&self) -> Smoothness {
        match self.kind {
            ErrorKind::NoError => Smoothness::Degenerate,
            ErrorKind::Laplace => Smoothness::OrdinarySmooth {
                order: 2.0,
                constant: 2.0 / self.variance(),
            },
            ErrorKind::Gaussian => Smoothness::SuperSmooth {
                order: 2.0,
                d2: 2.0 / self.variance(),
            },
        }
    }

    /// Characteristic function of `U`. Real, even, and equal to 1 at t = 0
    /// for every supported law; strictly nonzero everywhere, as required for
    /// a well-defined deconvoluting kernel.
    pub fn phi_u(&self, t: f64) -> f64 {
        match self.kind {
            ErrorKind::NoError => 1.0,
            ErrorKind::Laplace => 1.0 / (1.0 + 0.5 * self.variance() * t * t),
            ErrorKind::Gaussian => (-0.5 * self.variance() * t * t).exp(),
        }
    }

    /// Draws `n` independent errors, deterministically from `seed`.
    pub fn sample_errors(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_errors_with(n, &mut rng)
    }

    /// As [`sample_errors`](Self::sample_errors) but drawing from a caller
    /// supplied generator, for callers that manage their own streams.
    pub fn sample_errors_with<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self.kind {
            ErrorKind::NoError => vec![0.0; n],
            ErrorKind::Laplace => {
                let scale = self.sigma_u / std::f64::consts::SQRT_2;
                (0..n).map(|_| sample_laplace(scale, rng)).collect()
            }
            ErrorKind::Gaussian => (0..n)
                .map(|_| self.sigma_u * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }
}

/// Inverse-CDF draw from Laplace(0, scale).
fn sample_laplace<R: Rng>(scale: f64, rng: &mut R) -> f64 {
    // u in (-1/2, 1/2); the endpoint would map to infinity.
    let u = loop {
        let v = rng.random::<f64>() - 0.5;
        if v > -0.5 {
            break v;
        }
    };
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Error variance implied by a reliability ratio
/// `lambda = Var(X) / (Var(X) + Var(U))`: returns `var_x (1 - lambda) / lambda`.
pub fn sigma2_from_reliability(var_x: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidReliability(lambda));
    }
    if !var_x.is_finite() || var_x <= 0.0 {
        return Err(Error::NonPositive { name: "var_x", value: var_x });
    }
    Ok(var_x * (1.0 - lambda) / lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use proptest::prelude::*;

    const VAR_X_UNIFORM: f64 = 4.0 / 3.0; // Var of Uniform(-2, 2)

    #[test]
    fn phi_u_no_error_is_one() {
        let m = ErrorModel::no_error();
        assert_eq!(m.phi_u(3.7), 1.0);
        assert_eq!(m.phi_u(0.0), 1.0);
    }

    #[test]
    fn phi_u_laplace_values() {
        let m = ErrorModel::laplace((4.0f64 / 9.0).sqrt()).unwrap();
        assert!((m.phi_u(0.0) - 1.0).abs() < 1e-15);
        // 1 / (1 + (4/9) * 9 / 2) = 1/3
        assert!((m.phi_u(3.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn laplace_tail_limit_matches_smoothness_constant() {
        let m = ErrorModel::laplace((4.0f64 / 9.0).sqrt()).unwrap();
        let t = 1e6;
        let Smoothness::OrdinarySmooth { constant, .. } = m.smoothness() else {
            panic!("laplace must be ordinary smooth");
        };
        let lim = t * t * m.phi_u(t);
        assert!((lim - constant).abs() / constant < 1e-6);
        assert!((constant - 4.5).abs() < 1e-12);
    }

    #[test]
    fn zero_sigma_normalizes_to_no_error() {
        let m = ErrorModel::laplace(0.0).unwrap();
        assert_eq!(m.kind(), ErrorKind::NoError);
        assert_eq!(m.smoothness(), Smoothness::Degenerate);
        assert!(ErrorModel::gaussian(-1.0).is_err());
        assert!(ErrorModel::laplace(f64::NAN).is_err());
    }

    #[test]
    fn no_error_samples_are_zero() {
        assert_eq!(ErrorModel::no_error().sample_errors(5, 42), vec![0.0; 5]);
    }

    #[test]
    fn laplace_sample_moments() {
        let sigma2: f64 = 4.0 / 9.0;
        let m = ErrorModel::laplace(sigma2.sqrt()).unwrap();
        let n = 1_000_000;
        let draws = m.sample_errors(n, 1);
        let var = stats::sample_var(&draws);
        assert!((var - sigma2).abs() / sigma2 < 0.01, "var = {var}");
        // CLT bound: |mean| < 3 sigma_u / sqrt(n) = 3 sigma_u / 1e3
        let mean = stats::mean(&draws);
        assert!(mean.abs() < 3.0 * sigma2.sqrt() / 1e3, "mean = {mean}");
    }

    #[test]
    fn gaussian_sample_variance() {
        let m = ErrorModel::gaussian(0.5).unwrap();
        let draws = m.sample_errors(200_000, 7);
        assert!((stats::sample_var(&draws) - 0.25).abs() < 0.005);
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let m = ErrorModel::laplace(1.0).unwrap();
        assert_eq!(m.sample_errors(100, 3), m.sample_errors(100, 3));
        assert_ne!(m.sample_errors(100, 3), m.sample_errors(100, 4));
    }

    #[test]
    fn reliability_arithmetic() {
        assert_eq!(sigma2_from_reliability(VAR_X_UNIFORM, 1.0).unwrap(), 0.0);
        let s2 = sigma2_from_reliability(VAR_X_UNIFORM, 0.75).unwrap();
        assert!((s2 - 4.0 / 9.0).abs() < 1e-12);
        let s2 = sigma2_from_reliability(VAR_X_UNIFORM, 0.95).unwrap();
        assert!((s2 - 4.0 / 57.0).abs() < 1e-12);
        assert!(sigma2_from_reliability(VAR_X_UNIFORM, 0.0).is_err());
        assert!(sigma2_from_reliability(VAR_X_UNIFORM, 1.5).is_err());
    }

    #[test]
    fn empirical_reliability_matches_lambda() {
        // sample_errors composed with sigma2_from_reliability reproduces the
        // requested reliability ratio on a large sample.
        let lambda = 0.85;
        let sigma2 = sigma2_from_reliability(VAR_X_UNIFORM, lambda).unwrap();
        let m = ErrorModel::laplace(sigma2.sqrt()).unwrap();
        let var_u = stats::sample_var(&m.sample_errors(1_000_000, 11));
        let achieved = VAR_X_UNIFORM / (VAR_X_UNIFORM + var_u);
        assert!((achieved - lambda).abs() / lambda < 0.01, "achieved = {achieved}");
    }

    proptest! {
        #[test]
        fn phi_u_even_and_bounded(t in -50.0f64..50.0, sigma in 0.0f64..3.0, which in 0..3u8) {
            let m = match which {
                0 => ErrorModel::no_error(),
                1 => ErrorModel::laplace(sigma).unwrap(),
                _ => ErrorModel::gaussian(sigma).unwrap(),
            };
            prop_assert_eq!(m.phi_u(t), m.phi_u(-t));
            prop_assert!(m.phi_u(t).abs() <= 1.0);
            prop_assert!((m.phi_u(0.0) - 1.0).abs() < 1e-15);
        }
    }
}

//! Kernel density and density-derivative estimators built from error-prone
//! observations.
//!
//! Every estimator is a plain sum over the data of deconvoluting-kernel
//! weights in the covariate direction times normal-kernel factors in the
//! response direction. Estimates may be negative (the deconvoluting kernel
//! is signed) and are returned as-is; mode seeking only cares about roots of
//! the derivative. All functions are pure, run in O(n) per query point with
//! no truncation window, and are trivially parallel across query points.
//!
//! With the degenerate error model every operation collapses to its
//! error-free counterpart computed with the plain kernels.

use crate::deconv_kernel::{k2, DeconvKernel};
use crate::error::{Error, Result};

/// Relative determinant threshold below which a local linear design is
/// declared singular rather than inverted.
pub const EPS_DET: f64 = 1e-12;

/// Paired observations `(w_j, y_j)` of the error-prone covariate and the
/// response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    w: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(w: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if w.len() != y.len() {
            return Err(Error::InvalidData(format!(
                "covariate and response lengths differ: {} vs {}",
                w.len(),
                y.len()
            )));
        }
        if w.len() < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 observations, got {}",
                w.len()
            )));
        }
        if let Some(i) = w.iter().chain(y.iter()).position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value at flattened index {i}"
            )));
        }
        Ok(Self { w, y })
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Same responses, different covariate column (used by SIMEX, which
    /// refits on further-contaminated covariates).
    pub fn with_covariates(&self, w: Vec<f64>) -> Result<Self> {
        Self::new(w, self.y.clone())
    }
}

/// The bandwidth pair: `h1` smooths the covariate direction, `h2` the
/// response direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidths {
    pub h1: f64,
    pub h2: f64,
}

impl Bandwidths {
    pub fn new(h1: f64, h2: f64) -> Result<Self> {
        for (name, value) in [("h1", h1), ("h2", h2)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositive { name, value });
            }
        }
        Ok(Self { h1, h2 })
    }
}

/// Joint density estimate at `(x, y)`:
/// `(n h1 h2)^{-1} sum_j K_{U,0}((w_j - x)/h1) K2((y_j - y)/h2)`.
pub fn joint_density(data: &Dataset, ku: &DeconvKernel, h2: f64, x: f64, y: f64) -> f64 {
    let h1 = ku.h1();
    let sum: f64 = data
        .w
        .iter()
        .zip(&data.y)
        .map(|(&wj, &yj)| ku.eval(0, (wj - x) / h1) * k2(0, (yj - y) / h2))
        .sum();
    sum / (data.n() as f64 * h1 * h2)
}

/// Partial derivative in `y` of [`joint_density`]:
/// `(n h1 h2^2)^{-1} sum_j K_{U,0}(.) K2(t_j) t_j` with `t_j = (y_j - y)/h2`.
pub fn joint_density_dy(data: &Dataset, ku: &DeconvKernel, h2: f64, x: f64, y: f64) -> f64 {
    let h1 = ku.h1();
    let sum: f64 = data
        .w
        .iter()
        .zip(&data.y)
        .map(|(&wj, &yj)| {
            let t = (yj - y) / h2;
            ku.eval(0, (wj - x) / h1) * k2(0, t) * t
        })
        .sum();
    sum / (data.n() as f64 * h1 * h2 * h2)
}

/// Second partial derivative in `y` of [`joint_density`]; used to screen
/// mean-shift fixed points for being maxima.
pub fn joint_density_dyy(data: &Dataset, ku: &DeconvKernel, h2: f64, x: f64, y: f64) -> f64 {
    let h1 = ku.h1();
    let sum: f64 = data
        .w
        .iter()
        .zip(&data.y)
        .map(|(&wj, &yj)| ku.eval(0, (wj - x) / h1) * k2(2, (yj - y) / h2))
        .sum();
    sum / (data.n() as f64 * h1 * h2 * h2 * h2)
}

/// Deconvoluting estimate of the covariate density `f_X(x)`:
/// `(n h1)^{-1} sum_j K_{U,0}((w_j - x)/h1)`.
pub fn fx_deconv(data: &Dataset, ku: &DeconvKernel, x: f64) -> f64 {
    let h1 = ku.h1();
    let sum: f64 = data.w.iter().map(|&wj| ku.eval(0, (wj - x) / h1)).sum();
    sum / (data.n() as f64 * h1)
}

/// Local polynomial design moment `(n h1)^{-1} sum_j K_{U,ell}((w_j - x)/h1)`
/// for `ell` in 0..=2.
pub fn s_hat(data: &Dataset, ku: &DeconvKernel, x: f64, ell: usize) -> f64 {
    let h1 = ku.h1();
    let sum: f64 = data.w.iter().map(|&wj| ku.eval(ell, (wj - x) / h1)).sum();
    sum / (data.n() as f64 * h1)
}

/// Smoothed response moment for `ell` in 0..=1:
/// without `deriv`, `(n h1 h2)^{-1} sum_j K_{U,ell}(.) K2((y_j - y)/h2)`;
/// with `deriv`, its partial derivative in `y`.
pub fn t_hat(
    data: &Dataset,
    ku: &DeconvKernel,
    h2: f64,
    x: f64,
    y: f64,
    ell: usize,
    deriv: bool,
) -> f64 {
    let h1 = ku.h1();
    let sum: f64 = data
        .w
        .iter()
        .zip(&data.y)
        .map(|(&wj, &yj)| {
            let t = (yj - y) / h2;
            let resp = if deriv { k2(0, t) * t } else { k2(0, t) };
            ku.eval(ell, (wj - x) / h1) * resp
        })
        .sum();
    let scale = if deriv { h2 * h2 } else { h2 };
    sum / (data.n() as f64 * h1 * scale)
}

/// Second `y`-derivative of the `deriv = false` variant of [`t_hat`].
pub fn t_hat_dyy(data: &Dataset, ku: &DeconvKernel, h2: f64, x: f64, y: f64, ell: usize) -> f64 {
    let h1 = ku.h1();
    let sum: f64 = data
        .w
        .iter()
        .zip(&data.y)
        .map(|(&wj, &yj)| ku.eval(ell, (wj - x) / h1) * k2(2, (yj - y) / h2))
        .sum();
    sum / (data.n() as f64 * h1 * h2 * h2 * h2)
}

/// The 2x2 local linear design at `x`: moments `s0, s1, s2` and the
/// determinant `s0 s2 - s1^2`.
#[derive(Debug, Clone, Copy)]
pub struct LocalDesign {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub det: f64,
}

impl LocalDesign {
    pub fn at(data: &Dataset, ku: &DeconvKernel, x: f64) -> Result<Self> {
        let s0 = s_hat(data, ku, x, 0);
        let s1 = s_hat(data, ku, x, 1);
        let s2 = s_hat(data, ku, x, 2);
        let det = s0 * s2 - s1 * s1;
        // scale by the squared largest entry (≈ the matrix norm squared) so
        // that a vanishing diagonal cannot mask a singular design
        let scale = s0.abs().max(s1.abs()).max(s2.abs()).powi(2);
        if det == 0.0 || det.abs() <= EPS_DET * scale {
            return Err(Error::SingularDesign { x });
        }
        Ok(Self { s0, s1, s2, det })
    }

    /// First component of `S^{-1} (t0, t1)^T`.
    pub fn solve_first(&self, t0: f64, t1: f64) -> f64 {
        (self.s2 * t0 - self.s1 * t1) / self.det
    }
}

/// Local linear estimate of the conditional density `p(y|x)`
/// (`deriv = false`) or of its `y`-derivative (`deriv = true`):
/// the first component of `S_n(x)^{-1} T_n(x, y)`.
///
/// Fails with a singular-design error when the local moment matrix is not
/// invertible, which signals data too sparse near `x`.
pub fn cond_density_ll(
    data: &Dataset,
    ku: &DeconvKernel,
    h2: f64,
    x: f64,
    y: f64,
    deriv: bool,
) -> Result<f64> {
    let design = LocalDesign::at(data, ku, x)?;
    let t0 = t_hat(data, ku, h2, x, y, 0, deriv);
    let t1 = t_hat(data, ku, h2, x, y, 1, deriv);
    Ok(design.solve_first(t0, t1))
}

/// Second `y`-derivative of the local linear conditional density estimate.
pub fn cond_density_ll_dyy(
    data: &Dataset,
    ku: &DeconvKernel,
    h2: f64,
    x: f64,
    y: f64,
) -> Result<f64> {
    let design = LocalDesign::at(data, ku, x)?;
    let t0 = t_hat_dyy(data, ku, h2, x, y, 0);
    let t1 = t_hat_dyy(data, ku, h2, x, y, 1);
    Ok(design.solve_first(t0, t1))
}

//! Kernels and their deconvoluting counterparts, evaluated by numerical
//! Fourier inversion.
//!
//! The covariate kernel `K1` is defined through its Fourier transform
//! `phi_k1(s) = (1 - s^2)^3` on [-1, 1]; the response kernel `K2` is the
//! standard normal density. The generalized deconvoluting kernel of order
//! `ell` divides the `ell`-th derivative of `phi_k1` by the error
//! characteristic function before inverting:
//!
//! ```text
//! K_{U,ell}(t) = i^{-ell} (2 pi)^{-1} ∫ e^{-its} phi_k1^{(ell)}(s) / phi_u(s/h1) ds
//! ```
//!
//! Because `phi_u` is even and real and `phi_k1^{(ell)}` has definite parity,
//! every order reduces to a real cosine or sine transform; no complex
//! arithmetic appears anywhere. The integrand is smooth and supported on
//! [-1, 1], so a fixed 256-node Gauss-Legendre rule evaluates it to well
//! below 1e-10 for every bandwidth of practical size.
//!
//! Deconvoluting kernels take negative values by construction; nothing here
//! clips or truncates them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::error_model::ErrorModel;
use crate::numeric::gl256;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const INV_2PI: f64 = 1.0 / (2.0 * std::f64::consts::PI);

/// Baseline lookup-table half-width: mean-shift sums touch arguments up to
/// `max |W - x| / h1`, and `K1` decays like `t^-4`, so [-40, 40] covers the
/// bulk; lookups outside fall back to direct quadrature.
pub const DEFAULT_TABLE_HALF_RANGE: f64 = 40.0;
/// Baseline node count for kernel tables (spacing 0.005).
pub const DEFAULT_TABLE_NODES: usize = 16_001;

/// Table geometry for a given bandwidth: the half-range widens at small `h1`
/// (up to the single-rule oscillation budget) so that data several units
/// from the query point still hit the table, at fixed 0.005 node spacing.
pub fn auto_table_params(h1: f64) -> ((f64, f64), usize) {
    let half = (8.0 / h1).clamp(DEFAULT_TABLE_HALF_RANGE, 320.0);
    let nodes = (2.0 * half / 0.005).round() as usize + 1;
    ((-half, half), nodes)
}

/// Largest |t| the single 256-node rule resolves reliably; beyond it the
/// inversion integral is split into panels so every panel stays below this
/// oscillation budget.
const SINGLE_RULE_MAX_T: f64 = 350.0;

/// `(2 pi)^{-1} ∫_{-1}^{1} f(s) trig(t s) ds` for smooth `f`, accurate for
/// arbitrarily large `t` via composite Gauss-Legendre panels.
fn inverse_transform<F: Fn(f64) -> f64>(f: F, t: f64, use_sin: bool) -> f64 {
    let rule = gl256();
    let trig = |a: f64| if use_sin { a.sin() } else { a.cos() };
    if t.abs() <= SINGLE_RULE_MAX_T {
        return INV_2PI * rule.integrate(|s| f(s) * trig(t * s));
    }
    let panels = (t.abs() / 200.0).ceil() as usize;
    let width = 2.0 / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let a = -1.0 + p as f64 * width;
        total += rule.integrate_on(a, a + width, |s| f(s) * trig(t * s));
    }
    INV_2PI * total
}

/// `ell`-th derivative of the Fourier transform of `K1`,
/// `(1 - s^2)^3` on [-1, 1] and zero outside. Supports `ell` in 0..=2.
pub fn phi_k1(ell: usize, s: f64) -> f64 {
    if s.abs() > 1.0 {
        return 0.0;
    }
    let u = 1.0 - s * s;
    match ell {
        0 => u * u * u,
        1 => -6.0 * s * u * u,
        2 => u * (30.0 * s * s - 6.0),
        _ => panic!("phi_k1 derivative order {ell} not supported"),
    }
}

/// The covariate kernel `K1(t) = (2 pi)^{-1} ∫ (1-s^2)^3 cos(ts) ds`.
pub fn k1(t: f64) -> f64 {
    inverse_transform(|s| phi_k1(0, s), t, false)
}

/// Second derivative of `K1`: the inverse transform picks up `-s^2`.
pub fn k1_d2(t: f64) -> f64 {
    -inverse_transform(|s| s * s * phi_k1(0, s), t, false)
}

/// Standard normal density and its first two derivatives.
pub fn k2(deriv: usize, t: f64) -> f64 {
    let base = INV_SQRT_2PI * (-0.5 * t * t).exp();
    match deriv {
        0 => base,
        1 => -t * base,
        2 => (t * t - 1.0) * base,
        _ => panic!("k2 derivative order {deriv} not supported"),
    }
}

/// Generalized deconvoluting kernel `K_{U,ell}(t)`, `ell` in 0..=2, by direct
/// quadrature.
///
/// Parity reduction: orders 0 and 2 are cosine transforms (even result),
/// order 1 is a sine transform (odd result). With the degenerate error model
/// this reduces analytically to `t^ell K1(t)`.
pub fn ku_ell(ell: usize, t: f64, h1: f64, model: &ErrorModel) -> f64 {
    assert!(h1 > 0.0, "h1 must be positive");
    match ell {
        0 => inverse_transform(|s| phi_k1(0, s) / model.phi_u(s / h1), t, false),
        1 => -inverse_transform(|s| phi_k1(1, s) / model.phi_u(s / h1), t, true),
        2 => -inverse_transform(|s| phi_k1(2, s) / model.phi_u(s / h1), t, false),
        _ => panic!("deconvoluting kernel order {ell} not supported"),
    }
}

/// Precomputed values of `K_{U,ell}` on a uniform grid, with linear
/// interpolation inside the covered range and exact quadrature outside
/// (no extrapolation).
#[derive(Debug, Clone)]
pub struct KernelTable {
    ell: usize,
    h1: f64,
    model: ErrorModel,
    t_min: f64,
    t_max: f64,
    step: f64,
    values: Vec<f64>,
}

impl KernelTable {
    /// Tabulates `K_{U,ell}` at `nodes` equally spaced points on `range`.
    pub fn build(
        ell: usize,
        h1: f64,
        model: ErrorModel,
        range: (f64, f64),
        nodes: usize,
    ) -> Self {
        let (t_min, t_max) = range;
        assert!(t_min.is_finite() && t_max.is_finite() && t_min < t_max, "range must be finite");
        assert!(nodes >= 2, "need at least two table nodes");
        assert!(h1 > 0.0, "h1 must be positive");
        let step = (t_max - t_min) / (nodes - 1) as f64;

        // Fold quadrature weights and the transformed integrand into one
        // coefficient per node; each table entry is then a single trig sum.
        let rule = gl256();
        let (sign, use_sin) = match ell {
            0 => (1.0, false),
            1 => (-1.0, true),
            2 => (-1.0, false),
            _ => panic!("deconvoluting kernel order {ell} not supported"),
        };
        let coef: Vec<(f64, f64)> = rule
            .nodes()
            .iter()
            .zip(rule.weights())
            .map(|(&s, &w)| {
                (s, sign * INV_2PI * w * phi_k1(ell, s) / model.phi_u(s / h1))
            })
            .collect();

        let values = (0..nodes)
            .map(|i| {
                let t = t_min + i as f64 * step;
                if t.abs() > SINGLE_RULE_MAX_T {
                    // beyond the single rule's oscillation budget the
                    // coefficient shortcut is invalid; integrate in panels
                    return ku_ell(ell, t, h1, &model);
                }
                coef.iter()
                    .map(|&(s, c)| {
                        let a = t * s;
                        c * if use_sin { a.sin() } else { a.cos() }
                    })
                    .sum()
            })
            .collect();

        Self { ell, h1, model, t_min, t_max, step, values }
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn h1(&self) -> f64 {
        self.h1
    }

    pub fn model(&self) -> &ErrorModel {
        &self.model
    }

    pub fn range(&self) -> (f64, f64) {
        (self.t_min, self.t_max)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation inside the range, exact quadrature outside.
    /// Arguments that land on a grid node return the stored value.
    pub fn eval(&self, t: f64) -> f64 {
        if t < self.t_min || t > self.t_max {
            return ku_ell(self.ell, t, self.h1, &self.model);
        }
        let pos = (t - self.t_min) / self.step;
        let nearest = pos.round();
        if (pos - nearest).abs() < 1e-9 {
            return self.values[nearest as usize];
        }
        let i = pos as usize; // floor; pos >= 0 here
        let i = i.min(self.values.len() - 2);
        let frac = pos - i as f64;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }
}

/// The family `K_{U,0..=ell_max}` for one `(h1, model)` pair, evaluated
/// either by direct quadrature or through shared lookup tables.
///
/// Immutable after construction; estimator sums hold one of these and call
/// [`eval`](Self::eval) per data point.
#[derive(Debug, Clone)]
pub struct DeconvKernel {
    h1: f64,
    model: ErrorModel,
    tables: Vec<Arc<KernelTable>>,
}

impl DeconvKernel {
    /// Quadrature-backed evaluation (no tables).
    pub fn direct(h1: f64, model: ErrorModel) -> Result<Self> {
        if !(h1 > 0.0) || !h1.is_finite() {
            return Err(Error::NonPositive { name: "h1", value: h1 });
        }
        Ok(Self { h1, model, tables: Vec::new() })
    }

    /// Builds tables for orders `0..=ell_max` with bandwidth-adapted range
    /// and resolution.
    pub fn tabulated(h1: f64, model: ErrorModel, ell_max: usize) -> Result<Self> {
        let (range, nodes) = auto_table_params(h1);
        Self::tabulated_with(h1, model, ell_max, range, nodes)
    }

    pub fn tabulated_with(
        h1: f64,
        model: ErrorModel,
        ell_max: usize,
        range: (f64, f64),
        nodes: usize,
    ) -> Result<Self> {
        let mut kernel = Self::direct(h1, model)?;
        kernel.tables = (0..=ell_max)
            .map(|ell| Arc::new(KernelTable::build(ell, h1, model, range, nodes)))
            .collect();
        Ok(kernel)
    }

    /// Assembles a kernel from prebuilt shared tables (`tables[ell]` must
    /// hold order `ell` for the same `h1` and model).
    pub fn from_tables(h1: f64, model: ErrorModel, tables: Vec<Arc<KernelTable>>) -> Result<Self> {
        for (ell, table) in tables.iter().enumerate() {
            if table.ell() != ell || table.h1() != h1 || *table.model() != model {
                return Err(Error::InvalidConfig(format!(
                    "table {ell} does not match kernel (ell={}, h1={}, model mismatch: {})",
                    table.ell(),
                    table.h1(),
                    *table.model() != model,
                )));
            }
        }
        let mut kernel = Self::direct(h1, model)?;
        kernel.tables = tables;
        Ok(kernel)
    }

    pub fn h1(&self) -> f64 {
        self.h1
    }

    pub fn model(&self) -> &ErrorModel {
        &self.model
    }

    /// `K_{U,ell}(t)`: table lookup when a table of that order exists,
    /// direct quadrature otherwise.
    pub fn eval(&self, ell: usize, t: f64) -> f64 {
        match self.tables.get(ell) {
            Some(table) => table.eval(t),
            None => ku_ell(ell, t, self.h1, &self.model),
        }
    }
}

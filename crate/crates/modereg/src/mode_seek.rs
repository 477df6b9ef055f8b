//! Mean-shift mode seeking for the error-corrected density estimators.
//!
//! At a fixed `x` both estimators reduce to a one-dimensional fixed-point
//! iteration: move `y` to the kernel-weighted average of the responses,
//! where the covariate weights come from the deconvoluting kernel and do not
//! depend on `y`. Since deconvoluting weights can be negative, the classical
//! monotone-ascent property of mean shift does not carry over; trajectories
//! whose denominator collapses are reported as failed rather than patched,
//! and multiple starting values guard against missed modes.
//!
//! Converged endpoints are screened by the sign of the analytically
//! differentiated second derivative before they are reported as modes.

use rayon::prelude::*;

use crate::deconv_kernel::DeconvKernel;
use crate::density_est::{
    joint_density_dy, joint_density_dyy, t_hat, t_hat_dyy, Dataset, LocalDesign,
};
use crate::error::{Error, Result};
use crate::stats;

/// Which mode estimator drives the iteration.
///
/// `Naive` runs the local constant update; it differs from `LocalConstant`
/// only in that callers pair it with the degenerate error model (treating
/// `W` as if it were `X`), which makes the two produce bitwise-identical
/// mode sets on error-free kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Naive,
    LocalConstant,
    LocalLinear,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::LocalConstant => "lc",
            EstimatorKind::LocalLinear => "ll",
        }
    }

    /// Highest deconvoluting-kernel order the estimator consumes.
    pub fn ell_max(&self) -> usize {
        match self {
            EstimatorKind::LocalLinear => 2,
            _ => 0,
        }
    }
}

/// How the local window for starting values is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowRule {
    /// Fixed half-width `e`: use responses with `|w_j - x| < e`.
    Fixed(f64),
    /// Smallest window capturing at least `min_points` observations.
    Adaptive { min_points: usize },
}

/// Starting values are percentiles of the responses near `x`, equally
/// spaced between `span.0` and `span.1` (percent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartRule {
    pub n_starts: usize,
    pub window: WindowRule,
    pub span: (f64, f64),
}

impl Default for StartRule {
    fn default() -> Self {
        Self {
            n_starts: 4,
            window: WindowRule::Adaptive { min_points: 30 },
            span: (10.0, 90.0),
        }
    }
}

/// Tuning for the mean-shift iteration and mode-set assembly.
#[derive(Debug, Clone)]
pub struct SeekOptions {
    pub estimator: EstimatorKind,
    pub max_iter: usize,
    /// Stop when successive iterates move less than this.
    pub tol_step: f64,
    /// Converged endpoints closer than this collapse to one mode.
    pub dedup_tol: f64,
    /// Reported modes must satisfy `|g_y| <= root_tol_factor * |g_yy| * sd(Y)`.
    pub root_tol_factor: f64,
    pub starts: StartRule,
}

impl SeekOptions {
    /// Scale-relative defaults: `tol_step = 1e-8 sd(Y)`,
    /// `dedup_tol = 1e-3 range(Y)`, 500 iterations.
    pub fn for_data(estimator: EstimatorKind, data: &Dataset) -> Self {
        let sd = stats::sample_sd(data.y()).max(f64::MIN_POSITIVE);
        let (lo, hi) = data
            .y()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let spread = (hi - lo).max(f64::MIN_POSITIVE);
        Self {
            estimator,
            max_iter: 500,
            tol_step: 1e-8 * sd,
            dedup_tol: 1e-3 * spread,
            root_tol_factor: 1e-6,
            starts: StartRule::default(),
        }
    }

    pub fn with_starts(mut self, starts: StartRule) -> Self {
        self.starts = starts;
        self
    }
}

/// Starting values for the mean shift at `x`: percentiles of
/// `{y_j : |w_j - x| < e}` equally spaced over the rule's span; a single
/// start sits at the midpoint of the span.
pub fn starting_values(data: &Dataset, x: f64, rule: &StartRule) -> Result<Vec<f64>> {
    let mut local: Vec<f64> = match rule.window {
        WindowRule::Fixed(e) => data
            .w()
            .iter()
            .zip(data.y())
            .filter(|(&wj, _)| (wj - x).abs() < e)
            .map(|(_, &yj)| yj)
            .collect(),
        WindowRule::Adaptive { min_points } => {
            let keep = min_points.max(2).min(data.n());
            let mut order: Vec<usize> = (0..data.n()).collect();
            order.sort_by(|&a, &b| {
                let da = (data.w()[a] - x).abs();
                let db = (data.w()[b] - x).abs();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            order[..keep].iter().map(|&j| data.y()[j]).collect()
        }
    };
    if local.len() < 2 {
        return Err(Error::InsufficientLocalData { x, required: 2 });
    }
    local.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let (lo, hi) = rule.span;
    let n = rule.n_starts.max(1);
    let levels: Vec<f64> = if n == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..n)
            .map(|k| lo + k as f64 * (hi - lo) / (n - 1) as f64)
            .collect()
    };
    Ok(levels.iter().map(|&p| stats::percentile(&local, p)).collect())
}

/// Why a mean-shift trajectory stopped without converging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftFailure {
    /// The weighted-kernel denominator cancelled to (numerical) zero, which
    /// negative deconvoluting weights can cause.
    DenominatorCollapse,
    MaxIterations,
}

/// Outcome of one mean-shift trajectory.
#[derive(Debug, Clone, Copy)]
pub struct ShiftOutcome {
    pub y: f64,
    pub converged: bool,
    pub iters: usize,
    pub failure: Option<ShiftFailure>,
}

/// Covariate weights paired with responses, sorted by response so each
/// iteration only touches the y-window where the normal kernel is nonzero
/// (t^2 <= 400; beyond that exp underflows any relevant sum).
struct WeightedResponses {
    y_sorted: Vec<f64>,
    w_sorted: Vec<f64>,
}

impl WeightedResponses {
    fn new(responses: &[f64], weights: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..responses.len()).collect();
        order.sort_by(|&a, &b| responses[a].partial_cmp(&responses[b]).unwrap());
        Self {
            y_sorted: order.iter().map(|&j| responses[j]).collect(),
            w_sorted: order.iter().map(|&j| weights[j]).collect(),
        }
    }
}

/// Shared fixed-point loop: `y <- sum_j c_j K2((y_j - y)/h2) y_j / sum_j c_j
/// K2((y_j - y)/h2)` where `c_j` are y-independent covariate weights.
fn mean_shift_weighted(
    wr: &WeightedResponses,
    h2: f64,
    y0: f64,
    max_iter: usize,
    tol_step: f64,
) -> ShiftOutcome {
    let inv_h2 = 1.0 / h2;
    let reach = 20.0 * h2;
    let mut y = y0;
    for iter in 1..=max_iter {
        let lo = wr.y_sorted.partition_point(|&v| v < y - reach);
        let hi = wr.y_sorted.partition_point(|&v| v <= y + reach);
        let mut num = 0.0;
        let mut den = 0.0;
        let mut max_term = 0.0f64;
        for (&yj, &cj) in wr.y_sorted[lo..hi].iter().zip(&wr.w_sorted[lo..hi]) {
            let t = (yj - y) * inv_h2;
            let s = cj * (-0.5 * t * t).exp();
            num += s * yj;
            den += s;
            max_term = max_term.max((s * yj).abs());
        }
        if den == 0.0 || den.abs() < 1e-12 * max_term {
            return ShiftOutcome {
                y,
                converged: false,
                iters: iter,
                failure: Some(ShiftFailure::DenominatorCollapse),
            };
        }
        let next = num / den;
        if !next.is_finite() {
            return ShiftOutcome {
                y,
                converged: false,
                iters: iter,
                failure: Some(ShiftFailure::DenominatorCollapse),
            };
        }
        if (next - y).abs() < tol_step {
            return ShiftOutcome { y: next, converged: true, iters: iter, failure: None };
        }
        y = next;
    }
    ShiftOutcome {
        y,
        converged: false,
        iters: max_iter,
        failure: Some(ShiftFailure::MaxIterations),
    }
}

fn lc_weights(data: &Dataset, ku: &DeconvKernel, x: f64) -> Vec<f64> {
    let h1 = ku.h1();
    data.w().iter().map(|&wj| ku.eval(0, (wj - x) / h1)).collect()
}

/// Everything about one covariate value that does not depend on `h2`:
/// sorted mean-shift weights and, for the local linear estimator, the
/// inverted design moments. Preparing these once per `(x, h1)` lets an
/// oracle bandwidth search sweep `h2` cheaply.
pub(crate) struct PointState {
    x: f64,
    wr: WeightedResponses,
    design: Option<LocalDesign>,
}

pub(crate) fn prepare_point(
    data: &Dataset,
    ku: &DeconvKernel,
    estimator: EstimatorKind,
    x: f64,
) -> Result<PointState> {
    let (weights, design) = match estimator {
        EstimatorKind::LocalLinear => {
            let design = LocalDesign::at(data, ku, x)?;
            let h1 = ku.h1();
            let w = data
                .w()
                .iter()
                .map(|&wj| {
                    let t = (wj - x) / h1;
                    ku.eval(0, t) * design.s2 - ku.eval(1, t) * design.s1
                })
                .collect();
            (w, Some(design))
        }
        _ => (lc_weights(data, ku, x), None),
    };
    Ok(PointState { x, wr: WeightedResponses::new(data.y(), weights), design })
}

/// First and second `y`-derivatives of the driving estimator at `(x, y)`.
fn screen_derivatives(
    data: &Dataset,
    ku: &DeconvKernel,
    h2: f64,
    state: &PointState,
    y: f64,
) -> (f64, f64) {
    let x = state.x;
    match &state.design {
        Some(design) => {
            let g_y = design.solve_first(
                t_hat(data, ku, h2, x, y, 0, true),
                t_hat(data, ku, h2, x, y, 1, true),
            );
            let g_yy = design.solve_first(
                t_hat_dyy(data, ku, h2, x, y, 0),
                t_hat_dyy(data, ku, h2, x, y, 1),
            );
            (g_y, g_yy)
        }
        None => (
            joint_density_dy(data, ku, h2, x, y),
            joint_density_dyy(data, ku, h2, x, y),
        ),
    }
}

/// Local constant mean shift from `y0` at covariate value `x`.
pub fn mean_shift_lc(
    data: &Dataset,
    ku: &DeconvKernel,
    h2: f64,
    x: f64,
    y0: f64,
    opts: &SeekOptions,
) -> ShiftOutcome {
    let wr = WeightedResponses::new(data.y(), lc_weights(data, ku, x));
    mean_shift_weighted(&wr, h2, y0, opts.max_iter, opts.tol_step)
}

/// Local linear mean shift: same loop with weights
/// `K_{U,0} S2(x) - K_{U,1} S1(x)`, the design moments computed once per `x`.
pub fn mean_shift_ll(
    data: &Dataset,
    ku: &DeconvKernel,
    h2: f64,
    x: f64,
    y0: f64,
    opts: &SeekOptions,
) -> Result<ShiftOutcome> {
    let state = prepare_point(data, ku, EstimatorKind::LocalLinear, x)?;
    Ok(mean_shift_weighted(&state.wr, h2, y0, opts.max_iter, opts.tol_step))
}

/// A screened mode with its convergence diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct Mode {
    pub y: f64,
    pub iters: usize,
    /// |estimated first derivative| at the reported mode.
    pub deriv_mag: f64,
}

/// Per-point bookkeeping of what happened to each trajectory.
#[derive(Debug, Clone, Default)]
pub struct SeekDiagnostics {
    pub starts: usize,
    pub converged: usize,
    pub collapsed: usize,
    pub hit_max_iter: usize,
    pub screened_out: usize,
    /// Set when the whole point failed (no starting values, singular design).
    pub error: Option<String>,
}

/// The estimated mode set at one covariate value: strictly increasing `y`
/// values, each a fixed point with negative estimated second derivative.
#[derive(Debug, Clone)]
pub struct ModeSet {
    pub x: f64,
    pub modes: Vec<Mode>,
    pub diagnostics: SeekDiagnostics,
}

impl ModeSet {
    pub fn empty(x: f64, diagnostics: SeekDiagnostics) -> Self {
        Self { x, modes: Vec::new(), diagnostics }
    }

    pub fn mode_values(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.y).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

/// Runs the configured mean shift from every starting value, screens the
/// converged endpoints, and assembles the deduplicated mode set.
///
/// Zero converged trajectories yield an empty set with diagnostics, not an
/// error; upstream failures (no usable window, singular design) do error.
pub fn estimate_mode_set(
    data: &Dataset,
    ku: &DeconvKernel,
    h2: f64,
    x: f64,
    opts: &SeekOptions,
) -> Result<ModeSet> {
    let starts = starting_values(data, x, &opts.starts)?;
    estimate_mode_set_from(data, ku, h2, x, opts, &starts)
}

/// As [`estimate_mode_set`] but with explicit starting values.
pub fn estimate_mode_set_from(
    data: &Dataset,
    ku: &DeconvKernel,
    h2: f64,
    x: f64,
    opts: &SeekOptions,
    starts: &[f64],
) -> Result<ModeSet> {
    let state = prepare_point(data, ku, opts.estimator, x)?;
    Ok(seek_at(data, ku, h2, &state, opts, starts))
}

/// Runs the full per-point pipeline against prepared state.
pub(crate) fn seek_at(
    data: &Dataset,
    ku: &DeconvKernel,
    h2: f64,
    state: &PointState,
    opts: &SeekOptions,
    starts: &[f64],
) -> ModeSet {
    let x = state.x;
    let mut diag = SeekDiagnostics { starts: starts.len(), ..Default::default() };
    let sd_y = stats::sample_sd(data.y()).max(f64::MIN_POSITIVE);

    let mut kept: Vec<Mode> = Vec::new();
    for &y0 in starts {
        let out = mean_shift_weighted(&state.wr, h2, y0, opts.max_iter, opts.tol_step);
        if !out.converged {
            match out.failure {
                Some(ShiftFailure::DenominatorCollapse) => diag.collapsed += 1,
                _ => diag.hit_max_iter += 1,
            }
            continue;
        }
        diag.converged += 1;
        let (g_y, g_yy) = screen_derivatives(data, ku, h2, state, out.y);
        if g_yy < 0.0 && g_y.abs() <= opts.root_tol_factor * g_yy.abs() * sd_y {
            kept.push(Mode { y: out.y, iters: out.iters, deriv_mag: g_y.abs() });
        } else {
            diag.screened_out += 1;
        }
    }

    kept.sort_by(|a, b| a.y.partial_cmp(&b.y).unwrap());
    let mut modes: Vec<Mode> = Vec::new();
    let mut cluster: Vec<Mode> = Vec::new();
    let flush = |cluster: &mut Vec<Mode>, modes: &mut Vec<Mode>| {
        if let Some(best) = cluster
            .iter()
            .min_by(|a, b| {
                a.deriv_mag
                    .partial_cmp(&b.deriv_mag)
                    .unwrap()
                    .then(a.y.partial_cmp(&b.y).unwrap())
            })
            .copied()
        {
            modes.push(best);
        }
        cluster.clear();
    };
    for mode in kept {
        if let Some(last) = cluster.last() {
            if mode.y - last.y > opts.dedup_tol {
                flush(&mut cluster, &mut modes);
            }
        }
        cluster.push(mode);
    }
    flush(&mut cluster, &mut modes);

    ModeSet { x, modes, diagnostics: diag }
}

/// A uniform covariate grid `x_k = x_min + k delta`,
/// `k = 0..=floor((x_max - x_min)/delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub delta: f64,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !(x_min < x_max) {
            return Err(Error::InvalidConfig(format!(
                "grid requires x_min < x_max and delta > 0, got [{x_min}, {x_max}] step {delta}"
            )));
        }
        Ok(Self { x_min, x_max, delta })
    }

    pub fn points(&self) -> Vec<f64> {
        // Guard against 0.1-style rounding when counting steps.
        let count =
            ((self.x_max - self.x_min) / self.delta * (1.0 + 1e-12) + 1e-9).floor() as usize + 1;
        (0..count).map(|k| self.x_min + k as f64 * self.delta).collect()
    }
}

/// Mode sets traced over a covariate grid.
#[derive(Debug, Clone)]
pub struct ModeCurves {
    pub grid: Vec<f64>,
    pub delta: f64,
    pub sets: Vec<ModeSet>,
}

impl ModeCurves {
    /// CSV rows `x,mode_index,y,converged,iters`, one per reported mode.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,mode_index,y,converged,iters\n");
        for set in &self.sets {
            for (i, mode) in set.modes.iter().enumerate() {
                out.push_str(&format!("{},{},{},true,{}\n", set.x, i, mode.y, mode.iters));
            }
        }
        out
    }
}

/// Traces mode sets across `grid`, one percentile-start seek per point.
/// Per-point failures become empty sets with a diagnostic; the sweep itself
/// never aborts.
pub fn mode_curves(
    data: &Dataset,
    ku: &DeconvKernel,
    h2: f64,
    grid: GridSpec,
    opts: &SeekOptions,
) -> ModeCurves {
    sweep(data, ku, h2, grid, opts, |x| starting_values(data, x, &opts.starts))
}

/// As [`mode_curves`] with caller-chosen starting values per grid point.
pub fn mode_curves_with_starts<F>(
    data: &Dataset,
    ku: &DeconvKernel,
    h2: f64,
    grid: GridSpec,
    opts: &SeekOptions,
    starts_at: F,
) -> ModeCurves
where
    F: Fn(f64) -> Vec<f64> + Sync,
{
    sweep(data, ku, h2, grid, opts, |x| Ok(starts_at(x)))
}

fn sweep<F>(
    data: &Dataset,
    ku: &DeconvKernel,
    h2: f64,
    grid: GridSpec,
    opts: &SeekOptions,
    starts_at: F,
) -> ModeCurves
where
    F: Fn(f64) -> Result<Vec<f64>> + Sync,
{
    let points = grid.points();
    let sets: Vec<ModeSet> = points
        .par_iter()
        .map(|&x| {
            let attempt = starts_at(x)
                .and_then(|starts| estimate_mode_set_from(data, ku, h2, x, opts, &starts));
            attempt.unwrap_or_else(|err| {
                ModeSet::empty(
                    x,
                    SeekDiagnostics { error: Some(err.to_string()), ..Default::default() },
                )
            })
        })
        .collect();
    ModeCurves { grid: points, delta: grid.delta, sets }
}

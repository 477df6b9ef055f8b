//! Data-driven bandwidth selection.
//!
//! `h2` comes from the normal reference rule on the responses. `h1` comes
//! from a leave-one-out cross-validation criterion for conditional-density
//! estimators, minimized over a candidate grid; with measurement error the
//! minimization runs on deliberately further-contaminated data at two noise
//! levels and extrapolates back (CV-SIMEX: `h1 = h1*^2 / h1**`).
//!
//! The integral term of the CV criterion is evaluated in closed form: both
//! conditional-density estimators are weighted sums of normal bumps in `y`,
//! and the product of two normal kernels integrates to a normal kernel at
//! bandwidth `sqrt(2) h2`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::deconv_kernel::DeconvKernel;
use crate::density_est::{Dataset, EPS_DET};
use crate::error::{Error, Result};
use crate::error_model::ErrorModel;
use crate::mode_seek::EstimatorKind;
use crate::stats;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Normal reference rule: `1.06 s_Y n^{-1/5}` with `s_Y` the sample
/// standard deviation.
pub fn h2_normal_reference(y: &[f64]) -> Result<f64> {
    if y.len() < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 responses, got {}",
            y.len()
        )));
    }
    let sd = stats::sample_sd(y);
    if sd == 0.0 {
        return Err(Error::DegenerateSample);
    }
    Ok(1.06 * sd * (y.len() as f64).powf(-0.2))
}

/// `count` logarithmically spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || count < 1 {
        return Err(Error::InvalidConfig(format!(
            "log grid needs 0 < lo < hi and count >= 1, got [{lo}, {hi}] x {count}"
        )));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|k| (llo + k as f64 * (lhi - llo) / (count - 1) as f64).exp())
        .collect())
}

/// Default candidate grid: 20 log-spaced bandwidths from `0.02 s_W` to
/// `2 s_W`. The floor sits well below the usual rule-of-thumb scale because
/// the covariate kernel has second moment 6: its effective smoothing scale
/// is about 2.45 times `h1`, and leave-one-out CV minima land near
/// `0.03 s_W` on clean benchmark-sized samples.
pub fn default_h1_grid(w: &[f64]) -> Result<Vec<f64>> {
    let sd = stats::sample_sd(w);
    if sd == 0.0 {
        return Err(Error::DegenerateSample);
    }
    log_spaced(0.02 * sd, 2.0 * sd, 20)
}

/// Configuration of the CV/CV-SIMEX selector.
#[derive(Debug, Clone)]
pub struct CvConfig {
    /// Strictly increasing candidate bandwidths.
    pub h1_grid: Vec<f64>,
    /// SIMEX replicates per contamination level.
    pub b_replicates: usize,
    /// Weight-function percentile bounds in percent.
    pub weight_percentiles: (f64, f64),
    /// Which conditional-density estimator the criterion scores.
    pub estimator: EstimatorKind,
    pub seed: u64,
}

impl CvConfig {
    pub fn new(estimator: EstimatorKind, h1_grid: Vec<f64>, seed: u64) -> Result<Self> {
        let cfg = Self {
            h1_grid,
            b_replicates: 15,
            weight_percentiles: (2.5, 97.5),
            estimator,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h1_grid.is_empty() {
            return Err(Error::InvalidConfig("empty h1 grid".into()));
        }
        if !self.h1_grid.windows(2).all(|p| p[0] < p[1]) || self.h1_grid[0] <= 0.0 {
            return Err(Error::InvalidConfig(
                "h1 grid must be positive and strictly increasing".into(),
            ));
        }
        if self.b_replicates < 1 {
            return Err(Error::InvalidConfig("need at least one SIMEX replicate".into()));
        }
        Ok(())
    }
}

/// Precomputed normal-kernel cross matrices for one `(Y, h2)` pair, shared
/// across every leave-one-out fit and every `h1` candidate.
#[derive(Debug, Clone)]
pub struct CvContext {
    n: usize,
    h2: f64,
    /// `g[i n + k] = K2_{sqrt(2) h2}(y_i - y_k)`, the closed-form integral of
    /// the product of two bumps.
    g: Vec<f64>,
    /// `h[i n + k] = K2_{h2}(y_i - y_k)` (symmetric), for the cross term.
    h: Vec<f64>,
}

impl CvContext {
    pub fn new(y: &[f64], h2: f64) -> Self {
        let n = y.len();
        let sqrt2_h2 = std::f64::consts::SQRT_2 * h2;
        let mut g = vec![0.0; n * n];
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for k in i..n {
                let d = y[i] - y[k];
                let gv = normal_bump(d, sqrt2_h2);
                let hv = normal_bump(d, h2);
                g[i * n + k] = gv;
                g[k * n + i] = gv;
                h[i * n + k] = hv;
                h[k * n + i] = hv;
            }
        }
        Self { n, h2, g, h }
    }
}

/// `K2(d / bw) / bw`.
fn normal_bump(d: f64, bw: f64) -> f64 {
    let t = d / bw;
    let tt = t * t;
    if tt > 1400.0 {
        return 0.0; // underflows anyway
    }
    INV_SQRT_2PI * (-0.5 * tt).exp() / bw
}

/// Outcome of one CV evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CvOutcome {
    pub score: f64,
    /// Points passing the weight function.
    pub evaluated: usize,
    /// Weighted points skipped because the local fit was degenerate.
    pub skipped: usize,
    /// More than 10% of weighted points skipped.
    pub unreliable: bool,
}

/// Leave-one-out CV criterion
/// `n^{-1} sum_j w(v_j) [ ∫ p_{-j}(y|v_j)^2 dy - 2 p_{-j}(y_j|v_j) ]`.
///
/// `fit` holds the covariates the estimator is built from; `eval_v` holds
/// the covariate values the fits are evaluated at (equal to `fit.w()`
/// outside of SIMEX). Observation `j` is excluded from its own fit. Points
/// where the local fit is degenerate (singular design, cancelled mass) are
/// skipped and counted.
pub fn cv_score(
    fit: &Dataset,
    eval_v: &[f64],
    ku: &DeconvKernel,
    h2: f64,
    estimator: EstimatorKind,
    weight_bounds: (f64, f64),
) -> Result<CvOutcome> {
    let ctx = CvContext::new(fit.y(), h2);
    cv_score_with(&ctx, fit, eval_v, ku, estimator, weight_bounds)
}

/// As [`cv_score`], reusing a precomputed [`CvContext`].
pub fn cv_score_with(
    ctx: &CvContext,
    fit: &Dataset,
    eval_v: &[f64],
    ku: &DeconvKernel,
    estimator: EstimatorKind,
    weight_bounds: (f64, f64),
) -> Result<CvOutcome> {
    let n = fit.n();
    if n < 3 {
        return Err(Error::InvalidData(format!(
            "leave-one-out CV needs n >= 3, got {n}"
        )));
    }
    if eval_v.len() != n || ctx.n != n || ctx.h2 <= 0.0 {
        return Err(Error::InvalidData(
            "CV context, fit data, and evaluation covariates must agree in length".into(),
        ));
    }
    let local_linear = estimator == EstimatorKind::LocalLinear;
    let (lo, hi) = weight_bounds;
    let h1 = ku.h1();

    let mut w0 = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut u = vec![0.0; n];

    let mut sum_sq = 0.0;
    let mut sum_cross = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;

    for j in 0..n {
        let v = eval_v[j];
        if !(v >= lo && v <= hi) {
            continue;
        }
        evaluated += 1;

        for (i, &wi) in fit.w().iter().enumerate() {
            let t = (wi - v) / h1;
            w0[i] = ku.eval(0, t);
            if local_linear {
                w1[i] = ku.eval(1, t);
                w2[i] = ku.eval(2, t);
            }
        }
        // leave observation j out of its own fit
        w0[j] = 0.0;
        if local_linear {
            w1[j] = 0.0;
            w2[j] = 0.0;
        }

        // Effective bump weights u_i and normalizer z: the estimate of
        // p(y|v) is z^{-1} sum_i u_i K2_{h2}(y_i - y), with total mass 1.
        let z = if local_linear {
            let s0: f64 = w0.iter().sum();
            let s1: f64 = w1.iter().sum();
            let s2: f64 = w2.iter().sum();
            for i in 0..n {
                u[i] = s2 * w0[i] - s1 * w1[i];
            }
            let det = s0 * s2 - s1 * s1;
            if det == 0.0 || det.abs() <= EPS_DET * (s0 * s2).abs() {
                skipped += 1;
                continue;
            }
            det
        } else {
            u.copy_from_slice(&w0);
            let mass: f64 = w0.iter().sum();
            let scale: f64 = w0.iter().map(|v| v.abs()).sum();
            if mass == 0.0 || mass.abs() <= EPS_DET * scale {
                skipped += 1;
                continue;
            }
            mass
        };

        // closed-form ∫ p^2 dy = z^{-2} u^T G u
        let mut quad = 0.0;
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            let row = &ctx.g[i * n..(i + 1) * n];
            let dot: f64 = row.iter().zip(&u).map(|(&g, &uk)| g * uk).sum();
            quad += ui * dot;
        }
        sum_sq += quad / (z * z);

        // cross term p_{-j}(y_j | v_j); H is symmetric so row j is column j
        let hrow = &ctx.h[j * n..(j + 1) * n];
        let cross: f64 = hrow.iter().zip(&u).map(|(&h, &ui)| h * ui).sum();
        sum_cross += cross / z;
    }

    let nf = n as f64;
    Ok(CvOutcome {
        score: sum_sq / nf - 2.0 * sum_cross / nf,
        evaluated,
        skipped,
        unreliable: skipped * 10 > evaluated,
    })
}

/// Percentile-based weight bounds on a covariate column.
pub fn weight_bounds(v: &[f64], percentiles: (f64, f64)) -> (f64, f64) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        stats::percentile(&sorted, percentiles.0),
        stats::percentile(&sorted, percentiles.1),
    )
}

/// Score of one `h1` candidate, as recorded in selection diagnostics.
#[derive(Debug, Clone)]
pub struct CandidateScore {
    pub h1: f64,
    pub score: f64,
    pub skipped: usize,
    pub unreliable: bool,
}

/// Minimizes the CV score over `cfg.h1_grid` (ties break to the smaller
/// bandwidth). `covariate_override` supplies the evaluation column when it
/// differs from `data.w()`; `bounds_override` fixes the weight interval
/// (defaults to the configured percentiles of the evaluation column).
///
/// This is the whole selector for error-free (naive) CV, and the inner
/// argmin of each SIMEX level.
pub fn minimize_cv_h1(
    data: &Dataset,
    model: &ErrorModel,
    cfg: &CvConfig,
    h2: f64,
    covariate_override: Option<&[f64]>,
    bounds_override: Option<(f64, f64)>,
) -> Result<(f64, Vec<CandidateScore>)> {
    cfg.validate()?;
    let eval_v = covariate_override.unwrap_or_else(|| data.w());
    let bounds = bounds_override.unwrap_or_else(|| weight_bounds(eval_v, cfg.weight_percentiles));
    let ctx = CvContext::new(data.y(), h2);
    let ell_max = cfg.estimator.ell_max();

    let mut trace = Vec::with_capacity(cfg.h1_grid.len());
    for &h1 in &cfg.h1_grid {
        let ku = DeconvKernel::tabulated(h1, *model, ell_max)?;
        let out = cv_score_with(&ctx, data, eval_v, &ku, cfg.estimator, bounds)?;
        trace.push(CandidateScore {
            h1,
            score: out.score,
            skipped: out.skipped,
            unreliable: out.unreliable,
        });
    }
    let best = pick_min(&trace)?;
    Ok((best, trace))
}

fn pick_min(trace: &[CandidateScore]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for c in trace {
        if !c.score.is_finite() {
            continue;
        }
        match best {
            Some((_, s)) if c.score >= s => {}
            _ => best = Some((c.h1, c.score)),
        }
    }
    best.map(|(h1, _)| h1).ok_or_else(|| {
        Error::SelectionFailed(format!(
            "no finite CV score among {} candidates: {:?}",
            trace.len(),
            trace
                .iter()
                .map(|c| (c.h1, c.score))
                .collect::<Vec<_>>()
        ))
    })
}

/// One audit row of the SIMEX trace: contamination level (1 or 2), replicate
/// index, candidate, and its CV score.
#[derive(Debug, Clone, Copy)]
pub struct SimexTraceRow {
    pub level: u8,
    pub b: usize,
    pub h1: f64,
    pub score: f64,
    pub skipped: usize,
}

/// Full audit record of a CV-SIMEX run.
#[derive(Debug, Clone)]
pub struct SimexTrace {
    pub h1_star: f64,
    pub h1_star_star: f64,
    pub rows: Vec<SimexTraceRow>,
}

impl SimexTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,b,h1_candidate,score\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.level, r.b, r.h1, r.score));
        }
        out.push_str(&format!(
            "# h1_star={} h1_star_star={}\n",
            self.h1_star, self.h1_star_star
        ));
        out
    }
}

/// CV-SIMEX choice of `h1` with `h2` held fixed:
///
/// 1. contaminate `W* = W + U*` (B replicates);
/// 2. `h1* = argmin` of the B-averaged CV score fitting on `(W*, Y)` and
///    evaluating at `W`, weights from the percentiles of `W`;
/// 3. contaminate again, `W** = W* + U**`;
/// 4. `h1** = argmin` fitting on `(W**, Y)`, evaluating at the matching
///    `W*`, weights from the per-replicate percentiles of `W*`;
/// 5. extrapolate back: `h1 = h1*^2 / h1**`.
///
/// All 2B error vectors are drawn up front from `cfg.seed`, so results are
/// deterministic regardless of scheduling.
pub fn cv_simex_h1(
    data: &Dataset,
    model: &ErrorModel,
    cfg: &CvConfig,
    h2: f64,
) -> Result<(f64, SimexTrace)> {
    cfg.validate()?;
    if model.is_no_error() {
        return Err(Error::SimexWithoutError);
    }
    let n = data.n();
    let b_total = cfg.b_replicates;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let u_star: Vec<Vec<f64>> = (0..b_total)
        .map(|_| model.sample_errors_with(n, &mut rng))
        .collect();
    let u_star2: Vec<Vec<f64>> = (0..b_total)
        .map(|_| model.sample_errors_with(n, &mut rng))
        .collect();

    let w_star: Vec<Vec<f64>> = u_star
        .iter()
        .map(|u| data.w().iter().zip(u).map(|(w, e)| w + e).collect())
        .collect();
    let w_star2: Vec<Vec<f64>> = w_star
        .iter()
        .zip(&u_star2)
        .map(|(w, u)| w.iter().zip(u).map(|(w, e)| w + e).collect::<Vec<f64>>())
        .collect();

    let ctx = CvContext::new(data.y(), h2);
    let ell_max = cfg.estimator.ell_max();
    let kernels: Vec<DeconvKernel> = cfg
        .h1_grid
        .iter()
        .map(|&h1| DeconvKernel::tabulated(h1, *model, ell_max))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(2 * b_total * kernels.len());

    // Level 1: fit on (W*_b, Y), evaluate at W, common weight bounds from W.
    let bounds_w = weight_bounds(data.w(), cfg.weight_percentiles);
    let mut level1 = vec![Vec::with_capacity(b_total); kernels.len()];
    for (b, wb) in w_star.iter().enumerate() {
        let fit = data.with_covariates(wb.clone())?;
        for (ci, ku) in kernels.iter().enumerate() {
            let out = cv_score_with(&ctx, &fit, data.w(), ku, cfg.estimator, bounds_w)?;
            rows.push(SimexTraceRow {
                level: 1,
                b: b + 1,
                h1: cfg.h1_grid[ci],
                score: out.score,
                skipped: out.skipped,
            });
            level1[ci].push(out.score);
        }
    }
    let h1_star = argmin_averaged(&cfg.h1_grid, &level1, 1)?;

    // Level 2: fit on (W**_b, Y), evaluate at W*_b, per-replicate bounds.
    let mut level2 = vec![Vec::with_capacity(b_total); kernels.len()];
    for (b, (wb2, wb)) in w_star2.iter().zip(&w_star).enumerate() {
        let fit = data.with_covariates(wb2.clone())?;
        let bounds_b = weight_bounds(wb, cfg.weight_percentiles);
        for (ci, ku) in kernels.iter().enumerate() {
            let out = cv_score_with(&ctx, &fit, wb, ku, cfg.estimator, bounds_b)?;
            rows.push(SimexTraceRow {
                level: 2,
                b: b + 1,
                h1: cfg.h1_grid[ci],
                score: out.score,
                skipped: out.skipped,
            });
            level2[ci].push(out.score);
        }
    }
    let h1_star_star = argmin_averaged(&cfg.h1_grid, &level2, 2)?;

    let h1_hat = h1_star * h1_star / h1_star_star;
    Ok((h1_hat, SimexTrace { h1_star, h1_star_star, rows }))
}

fn argmin_averaged(grid: &[f64], scores: &[Vec<f64>], level: u8) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (ci, per_b) in scores.iter().enumerate() {
        let avg = stats::mean(per_b);
        if !avg.is_finite() {
            continue;
        }
        match best {
            Some((_, s)) if avg >= s => {}
            _ => best = Some((grid[ci], avg)),
        }
    }
    best.map(|(h1, _)| h1).ok_or_else(|| {
        Error::SelectionFailed(format!("no finite averaged CV score at SIMEX level {level}"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density_est;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn normal_reference_values() {
        // unit-SD sample of size 500 scaled analytically
        let n = 500;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let sd = stats::sample_sd(&y);
        let h2 = h2_normal_reference(&y).unwrap();
        assert!((h2 - 1.06 * sd * (n as f64).powf(-0.2)).abs() < 1e-12);
        // closed-form check of the rule itself: sd=1, n=500
        assert!((1.06 * (500f64).powf(-0.2) - 0.3059).abs() < 1e-4);
        // sd=2, n=32 gives exactly 1.06
        let y: Vec<f64> = vec![-2.0, 2.0].repeat(16);
        let manual = 1.06 * stats::sample_sd(&y) * 32f64.powf(-0.2);
        assert!((h2_normal_reference(&y).unwrap() - manual).abs() < 1e-12);

        assert!(h2_normal_reference(&[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn normal_reference_scales_linearly() {
        let y = vec![0.3, -1.2, 0.8, 2.0, -0.4];
        let scaled: Vec<f64> = y.iter().map(|v| 3.0 * v).collect();
        let a = h2_normal_reference(&y).unwrap();
        let b = h2_normal_reference(&scaled).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12);
    }

    #[test]
    fn gaussian_product_integral_identity() {
        // ∫ K2(y)^2 dy = 1/(2 sqrt(pi)) is the a = b, h2 = 1 case of the
        // closed form used for the quadratic term.
        let got = normal_bump(0.0, std::f64::consts::SQRT_2);
        let want = 1.0 / (2.0 * std::f64::consts::PI.sqrt());
        assert!((got - want).abs() < 1e-15);
        assert!((want - 0.28209).abs() < 1e-5);
    }

    fn small_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = w
            .iter()
            .map(|&x| x + x * x + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Dataset::new(w, y).unwrap()
    }

    #[test]
    fn excluding_all_points_scores_zero() {
        let data = small_dataset(10, 3);
        let ku = DeconvKernel::direct(0.5, ErrorModel::no_error()).unwrap();
        let out = cv_score(&data, data.w(), &ku, 0.4, EstimatorKind::LocalConstant, (99.0, 100.0))
            .unwrap();
        assert_eq!(out.score, 0.0);
        assert_eq!(out.evaluated, 0);
    }

    /// Hand-rolled CV on n = 3 that rebuilds each leave-one-out fit from a
    /// fresh 2-point dataset; guards against incremental-update bugs.
    #[test]
    fn leave_one_out_matches_from_scratch_refits() {
        let w = vec![-0.5, 0.2, 0.9];
        let y = vec![0.1, 0.7, 1.4];
        let data = Dataset::new(w.clone(), y.clone()).unwrap();
        let h2 = 0.5;
        let model = ErrorModel::laplace(0.3).unwrap();
        let ku = DeconvKernel::direct(0.4, model).unwrap();
        let bounds = (-10.0, 10.0);

        let got = cv_score(&data, data.w(), &ku, h2, EstimatorKind::LocalConstant, bounds)
            .unwrap()
            .score;

        let mut sum_sq = 0.0;
        let mut sum_cross = 0.0;
        let sqrt2_h2 = std::f64::consts::SQRT_2 * h2;
        for j in 0..3 {
            let keep: Vec<usize> = (0..3).filter(|&i| i != j).collect();
            let wj: Vec<f64> = keep.iter().map(|&i| w[i]).collect();
            let yj: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
            let v = w[j];
            let raw: Vec<f64> = wj.iter().map(|&wi| ku.eval(0, (wi - v) / 0.4)).collect();
            let mass: f64 = raw.iter().sum();
            let gamma: Vec<f64> = raw.iter().map(|&r| r / mass).collect();
            let mut quad = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    quad += gamma[a] * gamma[b] * normal_bump(yj[a] - yj[b], sqrt2_h2);
                }
            }
            sum_sq += quad;
            let cross: f64 = gamma
                .iter()
                .zip(&yj)
                .map(|(&g, &yi)| g * normal_bump(yi - y[j], h2))
                .sum();
            sum_cross += cross;
        }
        let want = sum_sq / 3.0 - 2.0 * sum_cross / 3.0;
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    /// Closed form against brute-force y-grid quadrature of both CV terms.
    #[test]
    fn closed_form_matches_quadrature() {
        let data = small_dataset(25, 11);
        let h2 = h2_normal_reference(data.y()).unwrap();
        let model = ErrorModel::laplace(0.4).unwrap();
        let bounds = weight_bounds(data.w(), (2.5, 97.5));
        for estimator in [EstimatorKind::LocalConstant, EstimatorKind::LocalLinear] {
            let ku = DeconvKernel::direct(0.45, model).unwrap();
            let got = cv_score(&data, data.w(), &ku, h2, estimator, bounds).unwrap();

            // quadrature oracle over +-6 SD around the response mean
            let sd = stats::sample_sd(data.y());
            let center = stats::mean(data.y());
            let (y_lo, y_hi) = (center - 6.0 * sd, center + 6.0 * sd);
            let m = 2000usize; // 2001 points
            let step = (y_hi - y_lo) / m as f64;

            let n = data.n();
            let mut sum_sq = 0.0;
            let mut sum_cross = 0.0;
            for j in 0..n {
                let v = data.w()[j];
                if !(v >= bounds.0 && v <= bounds.1) {
                    continue;
                }
                let keep: Vec<usize> = (0..n).filter(|&i| i != j).collect();
                let sub = Dataset::new(
                    keep.iter().map(|&i| data.w()[i]).collect(),
                    keep.iter().map(|&i| data.y()[i]).collect(),
                )
                .unwrap();
                let dens = |yv: f64| -> f64 {
                    match estimator {
                        EstimatorKind::LocalLinear => {
                            density_est::cond_density_ll(&sub, &ku, h2, v, yv, false).unwrap()
                        }
                        _ => {
                            density_est::joint_density(&sub, &ku, h2, v, yv)
                                / density_est::fx_deconv(&sub, &ku, v)
                        }
                    }
                };
                let mut integral = 0.0;
                for k in 0..=m {
                    let yv = y_lo + k as f64 * step;
                    let wq = if k == 0 || k == m { 0.5 } else { 1.0 };
                    let d = dens(yv);
                    integral += wq * d * d;
                }
                sum_sq += integral * step;
                sum_cross += dens(data.y()[j]);
            }
            let want = sum_sq / n as f64 - 2.0 * sum_cross / n as f64;
            assert!(
                (got.score - want).abs() < 1e-4,
                "{estimator:?}: closed {} vs quadrature {}",
                got.score,
                want
            );
        }
    }

    #[test]
    fn argmin_ties_break_to_smaller_h1() {
        let trace = vec![
            CandidateScore { h1: 0.2, score: 1.0, skipped: 0, unreliable: false },
            CandidateScore { h1: 0.4, score: 1.0, skipped: 0, unreliable: false },
            CandidateScore { h1: 0.8, score: 2.0, skipped: 0, unreliable: false },
        ];
        assert_eq!(pick_min(&trace).unwrap(), 0.2);
        let empty = vec![CandidateScore {
            h1: 0.2,
            score: f64::NAN,
            skipped: 0,
            unreliable: false,
        }];
        assert!(pick_min(&empty).is_err());
    }

    #[test]
    fn minimize_picks_verifiably_lowest_candidate() {
        let data = small_dataset(60, 4);
        let model = ErrorModel::no_error();
        let h2 = h2_normal_reference(data.y()).unwrap();
        let cfg = CvConfig::new(
            EstimatorKind::LocalConstant,
            vec![0.1, 0.3, 0.9],
            0,
        )
        .unwrap();
        let (best, trace) = minimize_cv_h1(&data, &model, &cfg, h2, None, None).unwrap();
        let min_by_hand = trace
            .iter()
            .min_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
            .unwrap();
        assert_eq!(best, min_by_hand.h1);

        let single = CvConfig::new(EstimatorKind::LocalConstant, vec![0.5], 0).unwrap();
        let (only, _) = minimize_cv_h1(&data, &model, &single, h2, None, None).unwrap();
        assert_eq!(only, 0.5);
    }

    #[test]
    fn simex_arithmetic_and_determinism() {
        let data = small_dataset(40, 9);
        let model = ErrorModel::laplace(0.5).unwrap();
        let h2 = h2_normal_reference(data.y()).unwrap();
        let mut cfg =
            CvConfig::new(EstimatorKind::LocalConstant, vec![0.15, 0.3, 0.6, 1.2], 77).unwrap();
        cfg.b_replicates = 3;
        let (h1_a, trace_a) = cv_simex_h1(&data, &model, &cfg, h2).unwrap();
        let (h1_b, trace_b) = cv_simex_h1(&data, &model, &cfg, h2).unwrap();
        assert_eq!(h1_a, h1_b);
        assert_eq!(trace_a.to_csv(), trace_b.to_csv());
        // step-5 arithmetic
        assert_eq!(h1_a, trace_a.h1_star * trace_a.h1_star / trace_a.h1_star_star);
        assert!(h1_a > 0.0);
        // B * |grid| rows per level
        assert_eq!(trace_a.rows.len(), 2 * 3 * 4);

        assert!(cv_simex_h1(&data, &ErrorModel::no_error(), &cfg, h2).is_err());
    }

    #[test]
    fn simex_step5_ratio_examples() {
        // flat extrapolation: h1* = h1** means h1 = h1*
        assert!((0.4f64 * 0.4 / 0.4 - 0.4).abs() < 1e-15);
        // h1* = 0.4, h1** = 0.5 extrapolates to 0.32
        assert!((0.4f64 * 0.4 / 0.5 - 0.32).abs() < 1e-15);
    }
}

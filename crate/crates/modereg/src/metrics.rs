//! Hausdorff distance between finite mode sets and the empirical integrated
//! squared error of mode curves over a grid.

use crate::error::{Error, Result};
use crate::mode_seek::ModeCurves;

/// Hausdorff distance between two finite nonempty sets of reals:
/// `max(max_a min_b |a-b|, max_b min_a |a-b|)`.
///
/// Computed by the exhaustive double scan; mode sets have a handful of
/// elements.
pub fn hausdorff(s1: &[f64], s2: &[f64]) -> Result<f64> {
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(directed(s1, s2).max(directed(s2, s1)))
}

fn directed(from: &[f64], to: &[f64]) -> f64 {
    from.iter()
        .map(|&a| {
            to.iter()
                .map(|&b| (a - b).abs())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Per-grid-point score entry of an [`IseReport`].
#[derive(Debug, Clone, Copy)]
pub struct PointScore {
    pub x: f64,
    /// Hausdorff distance, or `None` where either set was empty.
    pub haus: Option<f64>,
}

/// Empirical integrated squared error of estimated mode curves against
/// reference curves.
#[derive(Debug, Clone)]
pub struct IseReport {
    /// Total score: `defined_ise + penalty`.
    pub ise: f64,
    /// `sum_k haus(x_k)^2 * delta` over grid points where both sets are
    /// nonempty.
    pub defined_ise: f64,
    /// Contribution of undefined points (see [`empirical_ise`]).
    pub penalty: f64,
    pub undefined_points: usize,
    pub per_point: Vec<PointScore>,
    pub delta: f64,
}

impl IseReport {
    /// CSV with one `x,haus,defined` row per grid point and a trailing
    /// summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,haus,defined\n");
        for p in &self.per_point {
            match p.haus {
                Some(h) => out.push_str(&format!("{},{},true\n", p.x, h)),
                None => out.push_str(&format!("{},,false\n", p.x)),
            }
        }
        out.push_str(&format!(
            "# ise={} defined_ise={} penalty={} undefined_points={} delta={}\n",
            self.ise, self.defined_ise, self.penalty, self.undefined_points, self.delta
        ));
        out
    }
}

/// `sum_k Haus(estimated(x_k), truth(x_k))^2 * delta` over a shared grid.
///
/// The Hausdorff distance is undefined when a set is empty; such grid points
/// are counted in `undefined_points` and charged a penalty of the squared
/// global y-range of the reference curves (per point, times `delta`) so that
/// Monte-Carlo summaries stay total while missing estimates remain clearly
/// visible and auditable.
pub fn empirical_ise(estimated: &ModeCurves, truth: &ModeCurves) -> Result<IseReport> {
    if estimated.grid.len() != truth.grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} vs {} grid points",
            estimated.grid.len(),
            truth.grid.len()
        )));
    }
    if (estimated.delta - truth.delta).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "delta {} vs {}",
            estimated.delta, truth.delta
        )));
    }
    for (a, b) in estimated.grid.iter().zip(&truth.grid) {
        if (a - b).abs() > 1e-9 {
            return Err(Error::GridMismatch(format!("grid points {a} vs {b}")));
        }
    }

    let truth_range = {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for set in &truth.sets {
            for m in &set.modes {
                lo = lo.min(m.y);
                hi = hi.max(m.y);
            }
        }
        if hi > lo {
            hi - lo
        } else {
            0.0
        }
    };

    let delta = truth.delta;
    let mut defined_ise = 0.0;
    let mut penalty = 0.0;
    let mut undefined = 0;
    let mut per_point = Vec::with_capacity(truth.grid.len());
    for (est_set, true_set) in estimated.sets.iter().zip(&truth.sets) {
        let est = est_set.mode_values();
        let tru = true_set.mode_values();
        if est.is_empty() || tru.is_empty() {
            undefined += 1;
            penalty += truth_range * truth_range * delta;
            per_point.push(PointScore { x: true_set.x, haus: None });
        } else {
            let h = hausdorff(&est, &tru)?;
            defined_ise += h * h * delta;
            per_point.push(PointScore { x: true_set.x, haus: Some(h) });
        }
    }

    Ok(IseReport {
        ise: defined_ise + penalty,
        defined_ise,
        penalty,
        undefined_points: undefined,
        per_point,
        delta,
    })
}

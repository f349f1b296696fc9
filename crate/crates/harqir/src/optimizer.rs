//! Throughput-optimal rate design under an outage constraint:
//! maximize 𝓡̄(𝓡) = 𝓡(1−P_out(M;𝓡))/𝔑̄(𝓡) subject to P_out(M;𝓡) ≤ ε.
//!
//! The mixture parameters (ζ, θ, κ) do not depend on the rate — it only
//! enters as the CDF argument — so one fit per K serves the whole search.

use crate::channel::ChannelSpec;
use crate::metrics::{self, KFit, Numerics};
use crate::{HarqError, Result};

/// Constrained rate-design instance.
#[derive(Debug, Clone)]
pub struct RateDesignProblem {
    pub spec: ChannelSpec,
    /// Allowed outage ε ∈ (0,1).
    pub epsilon: f64,
    /// Search interval [𝓡_min, 𝓡_max] in bps/Hz.
    pub rate_bounds: (f64, f64),
    /// Rate resolution in bps/Hz.
    pub tolerance: f64,
}

impl RateDesignProblem {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(HarqError::Parameter(format!(
                "epsilon must be in (0,1), got {}",
                self.epsilon
            )));
        }
        let (lo, hi) = self.rate_bounds;
        if !(lo > 0.0 && hi > lo) {
            return Err(HarqError::Parameter(format!(
                "rate bounds must satisfy 0 < min < max, got ({lo}, {hi})"
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(HarqError::Parameter("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Solution of a rate-design instance.
#[derive(Debug, Clone)]
pub struct RateDesignSolution {
    pub rate_opt: f64,
    pub ltat_opt: f64,
    pub outage_at_opt: f64,
    /// Largest rate in the search interval with P_out(M) ≤ ε.
    pub feasible_boundary: f64,
}

/// Cached per-K fits; build once per channel, reuse across rates.
pub struct FitContext {
    fits: Vec<KFit>,
}

impl FitContext {
    pub fn new(spec: &ChannelSpec, numerics: &Numerics) -> Result<Self> {
        Ok(FitContext { fits: metrics::fit_all_rounds(spec, numerics)? })
    }

    pub fn from_fits(fits: Vec<KFit>) -> Self {
        FitContext { fits }
    }

    pub fn rounds(&self) -> usize {
        self.fits.len()
    }
}

/// P_out(M) at the given rate, from the cached fits.
pub fn outage_vs_rate(ctx: &FitContext, rate: f64) -> Result<f64> {
    ctx.fits.last().expect("at least one round").outage(rate)
}

/// LTAT at the given rate, from the cached fits.
pub fn ltat_vs_rate(ctx: &FitContext, rate: f64) -> Result<f64> {
    let outs = metrics::outage(&ctx.fits, rate)?;
    let nbar = metrics::avg_transmissions(&outs[..outs.len() - 1])?;
    metrics::ltat(rate, *outs.last().unwrap(), nbar)
}

/// Bisection on the monotone outage-vs-rate map: the returned rate
/// satisfies P_out ≤ ε and rate + tolerance does not (unless the constraint
/// is inactive on the whole interval).
pub fn feasible_rate_boundary(problem: &RateDesignProblem, ctx: &FitContext) -> Result<f64> {
    problem.validate()?;
    let (r_min, r_max) = problem.rate_bounds;
    let p_min = outage_vs_rate(ctx, r_min)?;
    if p_min > problem.epsilon {
        return Err(HarqError::Infeasible(format!(
            "P_out({r_min}) = {p_min:.4e} already exceeds epsilon = {}; minimal achievable \
             outage on the interval is {p_min:.4e}",
            problem.epsilon
        )));
    }
    if outage_vs_rate(ctx, r_max)? <= problem.epsilon {
        return Ok(r_max);
    }
    let (mut lo, mut hi) = (r_min, r_max);
    while hi - lo > problem.tolerance {
        let mid = 0.5 * (lo + hi);
        if outage_vs_rate(ctx, mid)? <= problem.epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Golden-section maximization of the LTAT over (0, feasible_boundary],
/// preceded by a 256-point pre-scan that selects the bracket (unimodality
/// is not guaranteed, so the scan protects against a bad initial bracket).
pub fn optimize_rate(problem: &RateDesignProblem, ctx: &FitContext) -> Result<RateDesignSolution> {
    let boundary = feasible_rate_boundary(problem, ctx)?;
    const SCAN: usize = 256;
    let lo_edge = (boundary / SCAN as f64).min(problem.rate_bounds.0);
    let mut best_i = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    let grid: Vec<f64> = (0..SCAN)
        .map(|i| lo_edge + (boundary - lo_edge) * i as f64 / (SCAN - 1) as f64)
        .collect();
    for (i, &r) in grid.iter().enumerate() {
        let v = ltat_vs_rate(ctx, r)?;
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = grid[best_i.saturating_sub(1)];
    let mut b = grid[(best_i + 1).min(SCAN - 1)];
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = ltat_vs_rate(ctx, c)?;
    let mut fd = ltat_vs_rate(ctx, d)?;
    while b - a > problem.tolerance {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = ltat_vs_rate(ctx, c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = ltat_vs_rate(ctx, d)?;
        }
    }
    let rate_opt = 0.5 * (a + b);
    let ltat_opt = ltat_vs_rate(ctx, rate_opt)?;
    // the pre-scan winner guards against a bad bracket
    let (rate_opt, ltat_opt) = if best_v > ltat_opt {
        (grid[best_i], best_v)
    } else {
        (rate_opt, ltat_opt)
    };
    Ok(RateDesignSolution {
        rate_opt,
        ltat_opt,
        outage_at_opt: outage_vs_rate(ctx, rate_opt)?,
        feasible_boundary: boundary,
    })
}

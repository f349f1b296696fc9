//! HARQ-IR performance metrics: outage per round, average transmission
//! count, LTAT, sum-of-correlated-exponentials bounds and diversity order.

use crate::channel::{effective_scale, ChannelSpec};
use crate::gammafit::{fit_mutual_info, MutualInfoApprox, DEFAULT_EPSILON, N_HAT};
use crate::montecarlo::{fold_samples, SimConfig};
use crate::moments::{DEFAULT_N_Q, DEFAULT_N_T};
use crate::specfun::{ln_gamma, phi2_series, reg_lower_gamma};
use crate::{HarqError, Result};
use nalgebra::DMatrix;

/// Numeric knobs of the analytic pipeline.
#[derive(Debug, Clone, Copy)]
pub struct Numerics {
    pub n_q: usize,
    pub n_t: usize,
    pub degree_cap: usize,
    pub epsilon_degree: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            n_q: DEFAULT_N_Q,
            n_t: DEFAULT_N_T,
            degree_cap: N_HAT,
            epsilon_degree: DEFAULT_EPSILON,
        }
    }
}

/// Metrics of one (channel, rate) operating point.
#[derive(Debug, Clone)]
pub struct HarqMetrics {
    pub outage_per_round: Vec<f64>,
    pub avg_transmissions: f64,
    pub ltat: f64,
    pub rate: f64,
}

/// Mixture CDF Σ κ_i·P(i+ζ, x/θ), clamped to [0,1]. The polynomial
/// correction can push the raw value slightly outside; [`approx_cdf_raw`]
/// exposes it for diagnostics.
pub fn approx_cdf(approx: &MutualInfoApprox, x: f64) -> Result<f64> {
    Ok(approx_cdf_raw(approx, x)?.clamp(0.0, 1.0))
}

/// Unclamped mixture CDF.
pub fn approx_cdf_raw(approx: &MutualInfoApprox, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(HarqError::Parameter(format!("approx_cdf needs x >= 0, got {x}")));
    }
    let (zeta, theta) = (approx.basis.zeta, approx.basis.theta);
    let mut acc = 0.0f64;
    for (i, &k) in approx.kappa.iter().enumerate() {
        acc += k * reg_lower_gamma(i as f64 + zeta, x / theta)?;
    }
    Ok(acc)
}

/// Per-round CDF evaluator: the exact exponential closed form at K = 1
/// (the marginal SNR is exponential for every λ), the fitted mixture beyond.
pub enum KFit {
    Exact { mean_snr: f64 },
    Mixture(MutualInfoApprox),
    /// ρ = 1: all rounds share one draw, I_K = K·log₂(1+γ).
    FullyCorrelated { mean_snr: f64, k: usize },
}

impl KFit {
    /// P(I_K^IR < rate).
    pub fn outage(&self, rate: f64) -> Result<f64> {
        if !(rate > 0.0) {
            return Err(HarqError::Parameter(format!("rate must be positive, got {rate}")));
        }
        match self {
            KFit::Exact { mean_snr } => {
                Ok(1.0 - (-(2f64.powf(rate) - 1.0) / mean_snr).exp())
            }
            KFit::Mixture(a) => approx_cdf(a, rate),
            KFit::FullyCorrelated { mean_snr, k } => {
                Ok(1.0 - (-(2f64.powf(rate / *k as f64) - 1.0) / mean_snr).exp())
            }
        }
    }
}

/// Per-round evaluators for the fully-correlated (ρ = 1) channel with
/// mean received SNR 2σ²·γ_T per round.
pub fn fully_correlated_fits(m: usize, sigma_sq: f64, gamma_t: f64) -> Vec<KFit> {
    (1..=m)
        .map(|k| KFit::FullyCorrelated { mean_snr: sigma_sq * gamma_t, k })
        .collect()
}

/// Fits the mutual-information distribution for every K = 1..M.
///
/// Each K gets its own moments and mixture — the average-transmission
/// formula needs all intermediate outages.
pub fn fit_all_rounds(spec: &ChannelSpec, numerics: &Numerics) -> Result<Vec<KFit>> {
    let es = effective_scale(spec);
    let mut fits = Vec::with_capacity(spec.rounds);
    fits.push(KFit::Exact { mean_snr: es.sigma_prime_sq[0] });
    for k in 2..=spec.rounds {
        fits.push(KFit::Mixture(fit_mutual_info(
            spec,
            k,
            numerics.n_q,
            numerics.n_t,
            numerics.degree_cap,
            numerics.epsilon_degree,
        )?));
    }
    Ok(fits)
}

/// Outage probabilities P_out(K) for K = 1..M at the given rate.
pub fn outage(fits: &[KFit], rate: f64) -> Result<Vec<f64>> {
    let out: Vec<f64> = fits.iter().map(|f| f.outage(rate)).collect::<Result<_>>()?;
    for k in 1..out.len() {
        if out[k] > out[k - 1] + 1e-9 {
            log::warn!(
                "outage not monotone at K={}: {} > {} (approximation artifact)",
                k + 1,
                out[k],
                out[k - 1]
            );
        }
    }
    Ok(out)
}

/// 𝔑̄ = 1 + Σ_{K<M} P_out(K); the argument holds the M−1 intermediate outages.
pub fn avg_transmissions(outages: &[f64]) -> Result<f64> {
    for &p in outages {
        if !(0.0..=1.0).contains(&p) {
            return Err(HarqError::Parameter(format!("outage {p} outside [0,1]")));
        }
    }
    Ok(1.0 + outages.iter().sum::<f64>())
}

/// LTAT 𝓡̄ = 𝓡(1 − P_out(M)) / 𝔑̄.
pub fn ltat(rate: f64, outage_m: f64, avg_n: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&outage_m) || !(avg_n >= 1.0) {
        return Err(HarqError::Parameter(format!(
            "ltat needs outage in [0,1] and avg_n >= 1, got ({outage_m}, {avg_n})"
        )));
    }
    Ok(rate * (1.0 - outage_m) / avg_n)
}

/// Full analytic metrics for one operating point.
pub fn analyze(spec: &ChannelSpec, rate: f64, numerics: &Numerics) -> Result<HarqMetrics> {
    let fits = fit_all_rounds(spec, numerics)?;
    let outs = outage(&fits, rate)?;
    let nbar = avg_transmissions(&outs[..outs.len() - 1])?;
    let lt = ltat(rate, *outs.last().unwrap(), nbar)?;
    Ok(HarqMetrics { outage_per_round: outs, avg_transmissions: nbar, ltat: lt, rate })
}

/// Fully-correlated (ρ = 1) outage after M rounds:
/// P = 1 − exp(−(2^{𝓡/M}−1) / (2σ²·γ_T)).
pub fn fully_correlated_outage(sigma_sq: f64, gamma_t: f64, rate: f64, m: usize) -> Result<f64> {
    if !(sigma_sq > 0.0) || !(gamma_t > 0.0) || !(rate >= 0.0) || m < 1 {
        return Err(HarqError::Parameter(
            "fully_correlated_outage needs sigma_sq > 0, gamma_t > 0, rate >= 0, m >= 1".into(),
        ));
    }
    Ok(1.0 - (-(2f64.powf(rate / m as f64) - 1.0) / (sigma_sq * gamma_t)).exp())
}

/// Full metrics for ρ = 1: all K rounds see the same channel draw, so every
/// per-round outage is the M = K closed form.
pub fn fully_correlated_metrics(
    m: usize,
    sigma_sq: f64,
    gamma_t: f64,
    rate: f64,
) -> Result<HarqMetrics> {
    let outs: Vec<f64> = (1..=m)
        .map(|k| fully_correlated_outage(sigma_sq, gamma_t, rate, k))
        .collect::<Result<_>>()?;
    let nbar = avg_transmissions(&outs[..m - 1])?;
    let lt = ltat(rate, outs[m - 1], nbar)?;
    Ok(HarqMetrics { outage_per_round: outs, avg_transmissions: nbar, ltat: lt, rate })
}

/// Eigenvalues δ of F^{1/2}EF^{1/2} (F = diag(2σ'_k²), E the √ρ matrix):
/// the scales of the independent exponentials whose sum matches Y = Σγ_k.
fn sum_exp_scales(spec: &ChannelSpec) -> Result<Vec<f64>> {
    let es = effective_scale(spec);
    let m = spec.rounds;
    let s: Vec<f64> = es.sigma_prime_sq.iter().map(|&v| v.sqrt()).collect();
    let a = DMatrix::from_fn(m, m, |i, j| {
        let e = if i == j {
            1.0
        } else {
            spec.lambda[i].abs() * spec.lambda[j].abs()
        };
        s[i] * s[j] * e
    });
    let eig = a.symmetric_eigen();
    let mut delta: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    delta.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if delta[0] <= 0.0 {
        return Err(HarqError::Conditioning(format!(
            "correlation matrix not positive definite (min eigenvalue {})",
            delta[0]
        )));
    }
    Ok(delta)
}

/// ln F_Y(y) = M ln y − Σ ln δ − ln M! + ln Φ₂(−y/δ).
fn ln_f_y(y: f64, delta: &[f64]) -> Result<f64> {
    let m = delta.len() as f64;
    let phi = phi2_series(y, delta)?;
    if !(phi > 0.0) {
        return Err(HarqError::Conditioning(format!("Phi2 evaluated nonpositive: {phi}")));
    }
    Ok(m * y.ln() - delta.iter().map(|d| d.ln()).sum::<f64>() - ln_gamma(m + 1.0) + phi.ln())
}

/// Sum-exponential sandwich bound: F_Y(M(2^{𝓡/M}−1)) ≤ P_out(M) ≤ F_Y(2^𝓡−1).
pub fn sum_exp_cdf_bounds(spec: &ChannelSpec, rate: f64) -> Result<(f64, f64)> {
    if !(rate > 0.0) {
        return Err(HarqError::Parameter(format!("rate must be positive, got {rate}")));
    }
    let delta = sum_exp_scales(spec)?;
    let m = spec.rounds as f64;
    let y_lo = m * (2f64.powf(rate / m) - 1.0);
    let y_hi = 2f64.powf(rate) - 1.0;
    Ok((ln_f_y(y_lo, &delta)?.exp(), ln_f_y(y_hi, &delta)?.exp()))
}

/// A bound value; `std_error` is set when it had to come from Monte-Carlo.
#[derive(Debug, Clone, Copy)]
pub struct BoundEstimate {
    pub value: f64,
    pub std_error: Option<f64>,
}

/// [`sum_exp_cdf_bounds`] with a Monte-Carlo fallback when the Φ₂ series
/// guard trips (large y·Σδ⁻¹, i.e. low SNR and high rate).
pub fn sum_exp_cdf_bounds_or_mc(
    spec: &ChannelSpec,
    rate: f64,
    config: &SimConfig,
) -> Result<(BoundEstimate, BoundEstimate)> {
    match sum_exp_cdf_bounds(spec, rate) {
        Ok((lo, hi)) => Ok((
            BoundEstimate { value: lo, std_error: None },
            BoundEstimate { value: hi, std_error: None },
        )),
        Err(HarqError::Domain(_)) => {
            let m = spec.rounds as f64;
            let y_lo = m * (2f64.powf(rate / m) - 1.0);
            let y_hi = 2f64.powf(rate) - 1.0;
            let counts = fold_samples(
                spec,
                config,
                || (0u64, 0u64),
                |acc, g| {
                    let y: f64 = g.iter().sum();
                    if y < y_lo {
                        acc.0 += 1;
                    }
                    if y < y_hi {
                        acc.1 += 1;
                    }
                },
                |a, b| (a.0 + b.0, a.1 + b.1),
            )?;
            let n = config.samples as f64;
            let est = |hits: u64| {
                let p = hits as f64 / n;
                BoundEstimate { value: p, std_error: Some((p * (1.0 - p) / n).sqrt()) }
            };
            Ok((est(counts.0), est(counts.1)))
        }
        Err(e) => Err(e),
    }
}

/// Least-squares slope of −ln P_out versus ln γ_T over the SNR grid; the
/// diversity order. ρ < 1 uses the sandwich bound (both ends share the
/// asymptotic slope, so their geometric mean is the cleanest proxy deep in
/// the tail where the mixture CDF cannot reach); ρ = 1 uses the closed form.
pub fn estimate_diversity_order(
    m: usize,
    rho: f64,
    rate: f64,
    snr_grid_db: &[f64],
) -> Result<f64> {
    if snr_grid_db.len() < 2 {
        return Err(HarqError::Parameter("diversity grid needs >= 2 points".into()));
    }
    let span = snr_grid_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - snr_grid_db.iter().cloned().fold(f64::INFINITY, f64::min);
    if span < 20.0 {
        return Err(HarqError::Parameter(format!(
            "diversity grid must span >= 20 dB, got {span:.1}"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &db in snr_grid_db {
        let gamma_t = 10f64.powf(db / 10.0);
        let ln_p = if rho >= 1.0 {
            let p = fully_correlated_outage(1.0, gamma_t, rate, m)?;
            p.ln()
        } else {
            let spec = ChannelSpec::homogeneous(m, rho, db)?;
            let delta = sum_exp_scales(&spec)?;
            let mf = m as f64;
            let lo = ln_f_y(mf * (2f64.powf(rate / mf) - 1.0), &delta)?;
            let hi = ln_f_y(2f64.powf(rate) - 1.0, &delta)?;
            0.5 * (lo + hi)
        };
        if !ln_p.is_finite() {
            log::warn!("diversity fit: dropping underflowed grid point {db} dB");
            continue;
        }
        xs.push(gamma_t.ln());
        ys.push(-ln_p);
    }
    if xs.len() < 2 {
        return Err(HarqError::Domain("diversity grid fully underflowed".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_numerics() -> Numerics {
        Numerics::default()
    }

    #[test]
    fn cdf_limits_and_monotonicity() {
        let spec = ChannelSpec::homogeneous(2, 0.5, 7.0).unwrap();
        let fit = match &fit_all_rounds(&spec, &default_numerics()).unwrap()[1] {
            KFit::Mixture(a) => a.clone(),
            _ => unreachable!(),
        };
        assert_eq!(approx_cdf(&fit, 0.0).unwrap(), 0.0);
        assert_relative_eq!(approx_cdf(&fit, 1e3).unwrap(), 1.0, epsilon = 1e-9);
        let mut prev = 0.0;
        for i in 1..100 {
            let x = i as f64 * 0.15;
            let c = approx_cdf(&fit, x).unwrap();
            assert!((0.0..=1.0).contains(&c));
            // the polynomial-corrected density dips slightly negative in
            // places, so the CDF may lose up to ~1e-3 locally
            assert!(c >= prev - 2e-3);
            prev = c;
        }
        assert!(approx_cdf(&fit, -1.0).is_err());
    }

    #[test]
    fn single_round_outage_is_exact() {
        // M=1, 2σ'²=1, rate 2 → 1 − e^{−3}
        let spec = ChannelSpec::homogeneous(1, 0.0, 0.0).unwrap();
        let fits = fit_all_rounds(&spec, &default_numerics()).unwrap();
        let p = outage(&fits, 2.0).unwrap();
        assert_relative_eq!(p[0], 1.0 - (-3.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn transmission_and_ltat_formulas() {
        assert_eq!(avg_transmissions(&[]).unwrap(), 1.0);
        assert_relative_eq!(avg_transmissions(&[0.3]).unwrap(), 1.3);
        assert_eq!(ltat(2.0, 1.0, 1.5).unwrap(), 0.0);
        assert_eq!(ltat(2.0, 0.0, 1.0).unwrap(), 2.0);
        assert!(avg_transmissions(&[1.2]).is_err());
        assert!(ltat(2.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn fully_correlated_closed_form() {
        // 2σ²=1, γ_T = 7 dB, M=4, 𝓡=2
        let g = 10f64.powf(0.7);
        let p = fully_correlated_outage(1.0, g, 2.0, 4).unwrap();
        let expect = 1.0 - (-(2f64.powf(0.5) - 1.0) / g).exp();
        assert_relative_eq!(p, expect, epsilon = 1e-15);
        assert!((p - 0.08).abs() < 0.01);
        // limits
        assert_eq!(fully_correlated_outage(1.0, g, 0.0, 4).unwrap(), 0.0);
        assert!(fully_correlated_outage(1.0, g, 2.0, 4000).unwrap() < 1e-4);
    }

    #[test]
    fn sandwich_bound_reduces_to_exponential_at_m1() {
        let spec = ChannelSpec::homogeneous(1, 0.0, 4.0).unwrap();
        let mean = effective_scale(&spec).sigma_prime_sq[0];
        let rate = 1.5;
        let (lo, hi) = sum_exp_cdf_bounds(&spec, rate).unwrap();
        let exact = 1.0 - (-(2f64.powf(rate) - 1.0) / mean).exp();
        assert_relative_eq!(lo, exact, max_relative = 1e-8);
        assert_relative_eq!(hi, exact, max_relative = 1e-8);
    }

    #[test]
    fn sum_exp_cdf_matches_erlang_and_hypoexponential() {
        // ρ=0, equal means d: F_Y(y) = 1 − e^{−y/d}(1 + y/d)
        let spec = ChannelSpec::homogeneous(2, 0.0, 3.0).unwrap();
        let d = effective_scale(&spec).sigma_prime_sq[0];
        let delta = sum_exp_scales(&spec).unwrap();
        for y in [0.5, 2.0, 6.0] {
            let f = ln_f_y(y, &delta).unwrap().exp();
            let erlang = 1.0 - (-y / d).exp() * (1.0 + y / d);
            assert_relative_eq!(f, erlang, max_relative = 1e-8);
        }
        // ρ=0, distinct means: hypoexponential convolution closed form
        let spec = ChannelSpec::new(
            vec![0.5f64.sqrt(); 2],
            vec![0.0, 0.0],
            vec![0.0, 6.0],
        )
        .unwrap();
        let ds = effective_scale(&spec).sigma_prime_sq.clone();
        let delta = sum_exp_scales(&spec).unwrap();
        let (d1, d2) = (ds[0], ds[1]);
        for y in [0.5, 2.0, 6.0] {
            let f = ln_f_y(y, &delta).unwrap().exp();
            let hypo =
                1.0 - (d1 * (-y / d1).exp() - d2 * (-y / d2).exp()) / (d1 - d2);
            assert_relative_eq!(f, hypo, max_relative = 1e-7);
        }
    }

    #[test]
    fn sandwich_brackets_analytic_outage() {
        // operating points with moderate outage; in very deep tails
        // (below ~1e-2) the mixture's relative tail bias can push the
        // approximation outside the exact-distribution bounds
        for (m, rho, db, rate) in [(2usize, 0.3f64, 7.0f64, 2.0f64), (3, 0.5, 10.0, 4.0)] {
            let spec = ChannelSpec::homogeneous(m, rho, db).unwrap();
            let (lo, hi) = sum_exp_cdf_bounds(&spec, rate).unwrap();
            let metrics = analyze(&spec, rate, &default_numerics()).unwrap();
            let p = *metrics.outage_per_round.last().unwrap();
            assert!(lo <= hi);
            assert!(
                lo <= p * 1.0001 && p <= hi * 1.0001,
                "M={m} rho={rho}: {lo} <= {p} <= {hi} violated"
            );
        }
    }

    #[test]
    fn analyze_invariants() {
        let spec = ChannelSpec::homogeneous(4, 0.5, 7.0).unwrap();
        let m = analyze(&spec, 2.0, &default_numerics()).unwrap();
        assert_eq!(m.outage_per_round.len(), 4);
        for k in 1..4 {
            assert!(m.outage_per_round[k] <= m.outage_per_round[k - 1] + 1e-6);
        }
        assert!(m.avg_transmissions >= 1.0 && m.avg_transmissions <= 4.0);
        assert!(m.ltat >= 0.0 && m.ltat <= 2.0);
    }

    #[test]
    fn diversity_slopes() {
        let grid: Vec<f64> = (0..=5).map(|i| 20.0 + 4.0 * i as f64).collect();
        let d1 = estimate_diversity_order(1, 0.0, 2.0, &grid).unwrap();
        assert!((d1 - 1.0).abs() < 0.05, "M=1 slope {d1}");
        let d2 = estimate_diversity_order(2, 0.5, 2.0, &grid).unwrap();
        assert!((d2 - 2.0).abs() < 0.3, "M=2 slope {d2}");
        let dc = estimate_diversity_order(4, 1.0, 2.0, &grid).unwrap();
        assert!((dc - 1.0).abs() < 0.05, "rho=1 slope {dc}");
        assert!(estimate_diversity_order(2, 0.5, 2.0, &[20.0, 30.0][..1]).is_err());
        assert!(estimate_diversity_order(2, 0.5, 2.0, &[20.0, 30.0]).is_err());
    }

    #[test]
    fn mc_fallback_triggers_on_guard() {
        // huge rate at low SNR trips the Φ₂ guard
        let spec = ChannelSpec::homogeneous(4, 0.5, -10.0).unwrap();
        let cfg = SimConfig::new(100_000, 5);
        let (lo, hi) = sum_exp_cdf_bounds_or_mc(&spec, 12.0, &cfg).unwrap();
        assert!(lo.std_error.is_some() && hi.std_error.is_some());
        assert!(lo.value <= hi.value);
    }
}

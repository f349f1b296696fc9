//! Deterministic descriptors of the time-correlated Rayleigh HARQ link.
//!
//! The channel of round k is h_k = σ_k(λ_k u₀ + √(1−λ_k²) u_k) with a shared
//! circular Gaussian u₀, giving power-gain correlation ρ_{k,l} = λ_k²λ_l².
//! Sampling lives in [`crate::montecarlo`]; this module only derives scales.

use crate::specfun::{bessel_j0, ln_hyp0f1_1, QuadratureRule};
use crate::{HarqError, Result};
use serde::{Deserialize, Serialize};

/// Speed of light in m/s.
pub const C_LIGHT: f64 = 299_792_458.0;

/// Static parameters of an M-round HARQ link.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSpec {
    /// Maximum allowable transmissions M.
    pub rounds: usize,
    /// Rayleigh scale per round; E|h_k|² = 2σ_k².
    pub sigma: Vec<f64>,
    /// Generalized correlation parameters, |λ_k| < 1.
    pub lambda: Vec<f64>,
    /// Per-round transmit SNR P_k/𝔑_k in dB.
    pub snr_db: Vec<f64>,
}

/// Derived per-round scales used by the analytic pipeline.
#[derive(Debug, Clone)]
pub struct EffectiveScale {
    /// 2σ'_k² = 2σ_k²·(P_k/𝔑_k): mean received SNR of round k.
    pub sigma_prime_sq: Vec<f64>,
    /// w_k = 2σ'_k²(1−λ_k²).
    pub w: Vec<f64>,
    /// ϖ_k = (λ_k²/(1−λ_k²)) / (1 + Σ_l λ_l²/(1−λ_l²)); Σϖ < 1.
    pub varpi: Vec<f64>,
}

impl ChannelSpec {
    pub fn new(sigma: Vec<f64>, lambda: Vec<f64>, snr_db: Vec<f64>) -> Result<Self> {
        let m = sigma.len();
        if m == 0 {
            return Err(HarqError::Parameter("channel needs at least one round".into()));
        }
        if lambda.len() != m || snr_db.len() != m {
            return Err(HarqError::Parameter(format!(
                "inconsistent vector lengths: sigma {}, lambda {}, snr_db {}",
                m,
                lambda.len(),
                snr_db.len()
            )));
        }
        for &s in &sigma {
            if !(s > 0.0) {
                return Err(HarqError::Parameter(format!("sigma must be positive, got {s}")));
            }
        }
        for &l in &lambda {
            if !(l.abs() < 1.0) {
                return Err(HarqError::Parameter(format!(
                    "|lambda| < 1 required, got {l} (rho = 1 has a dedicated closed form)"
                )));
            }
        }
        for &g in &snr_db {
            if !g.is_finite() {
                return Err(HarqError::Parameter(format!("snr_db must be finite, got {g}")));
            }
        }
        Ok(ChannelSpec { rounds: m, sigma, lambda, snr_db })
    }

    /// Homogeneous setup used throughout the experiments: 2σ² = 1 (unit
    /// average channel power), equal SNR per round, common ρ_{k,l} = ρ.
    pub fn homogeneous(rounds: usize, rho: f64, gamma_t_db: f64) -> Result<Self> {
        let lambda = lambda_from_rho(rho)?;
        let sigma = vec![(0.5f64).sqrt(); rounds];
        ChannelSpec::new(sigma, vec![lambda; rounds], vec![gamma_t_db; rounds])
    }

    /// Linear transmit SNR of round k (0-based).
    pub fn snr_linear(&self, k: usize) -> f64 {
        10f64.powf(self.snr_db[k] / 10.0)
    }
}

/// Power-gain correlation ρ_{k,l} = λ_k²λ_l² (k ≠ l); 1 on the diagonal.
/// Indices are 1-based round numbers.
pub fn correlation_coefficient(spec: &ChannelSpec, k: usize, l: usize) -> Result<f64> {
    if k < 1 || k > spec.rounds || l < 1 || l > spec.rounds {
        return Err(HarqError::Parameter(format!(
            "round index out of range: k={k}, l={l}, M={}",
            spec.rounds
        )));
    }
    if k == l {
        return Ok(1.0);
    }
    let la = spec.lambda[k - 1];
    let lb = spec.lambda[l - 1];
    Ok(la * la * lb * lb)
}

/// Inverse of ρ = λ⁴ for the homogeneous case.
pub fn lambda_from_rho(rho: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(HarqError::Parameter(format!(
            "rho must lie in [0, 1), got {rho} (rho = 1 is the fully-correlated special case)"
        )));
    }
    Ok(rho.powf(0.25))
}

/// Jakes-model correlation ρ = J₀²(2π f_c τ v / c).
pub fn jakes_correlation(carrier_hz: f64, spacing_s: f64, speed_mps: f64) -> Result<f64> {
    if !(carrier_hz > 0.0) || !(spacing_s > 0.0) || !(speed_mps >= 0.0) {
        return Err(HarqError::Parameter(
            "jakes_correlation needs carrier_hz > 0, spacing_s > 0, speed_mps >= 0".into(),
        ));
    }
    let arg = 2.0 * std::f64::consts::PI * carrier_hz * spacing_s * speed_mps / C_LIGHT;
    let j = bessel_j0(arg)?;
    Ok(j * j)
}

/// Derives (2σ'_k², w_k, ϖ_k) from the spec.
pub fn effective_scale(spec: &ChannelSpec) -> EffectiveScale {
    let m = spec.rounds;
    let mut sigma_prime_sq = Vec::with_capacity(m);
    let mut w = Vec::with_capacity(m);
    let mut c = Vec::with_capacity(m); // λ²/(1−λ²)
    for k in 0..m {
        let sp2 = 2.0 * spec.sigma[k] * spec.sigma[k] * spec.snr_linear(k);
        let l2 = spec.lambda[k] * spec.lambda[k];
        sigma_prime_sq.push(sp2);
        w.push(sp2 * (1.0 - l2));
        c.push(l2 / (1.0 - l2));
    }
    let s: f64 = 1.0 + c.iter().sum::<f64>();
    let varpi = c.iter().map(|ck| ck / s).collect();
    EffectiveScale { sigma_prime_sq, w, varpi }
}

impl EffectiveScale {
    /// 1 + Σ λ²/(1−λ²), the normalizer behind ϖ. Recovered from Σϖ.
    pub fn mixing_norm(&self) -> f64 {
        let sv: f64 = self.varpi.iter().sum();
        1.0 / (1.0 - sv)
    }
}

/// Joint PDF of (γ₁,…,γ_M) at x, by quadrature over the shared mixing
/// variable. Test support for validating the Monte-Carlo sampler; the
/// metrics pipeline never touches it.
pub fn joint_snr_pdf(scale: &EffectiveScale, x: &[f64], quad: &QuadratureRule) -> Result<f64> {
    let m = scale.w.len();
    if x.len() != m {
        return Err(HarqError::Parameter(format!(
            "joint_snr_pdf: expected {} coordinates, got {}",
            m,
            x.len()
        )));
    }
    for &xi in x {
        if !(xi >= 0.0) {
            return Err(HarqError::Parameter(format!("snr coordinates must be >= 0, got {xi}")));
        }
    }
    // Conditioned on |u0|²/2 = t ~ Exp(1), each γ_k is noncentral-χ²(2);
    // pulling the normalizer S = 1/(1−Σϖ) into the substitution t = u/S
    // leaves a unit-weight Laguerre integral of Π ₀F₁(;1; ϖ_k ξ x_k/w_k).
    let s = scale.mixing_norm();
    let mut ln_pref = -s.ln();
    for k in 0..m {
        ln_pref += -x[k] / scale.w[k] - scale.w[k].ln();
    }
    let mut total = 0.0f64;
    for (q, &u) in quad.nodes.iter().enumerate() {
        let mut ln_term = quad.ln_weights[q];
        for k in 0..m {
            ln_term += ln_hyp0f1_1(scale.varpi[k] * u * x[k] / scale.w[k])?;
        }
        total += ln_term.exp();
    }
    Ok(ln_pref.exp() * total)
}

//! Gamma basis, measure-orthogonal polynomial construction, correction fit
//! and degree selection.
//!
//! The PDF of I_K^IR is approximated as φ(x)·ψ̂_N(x): a Gamma(ζ,θ) density
//! matched to the first two moments times a degree-N polynomial correction.
//! The correction is expanded in monic polynomials orthogonal under φ(x)dx
//! (built by the three-term recurrence from the Gamma moment sequence ν_n),
//! which diagonalizes the least-squares system: η_n = (Σ_k C_{n,k}M(k))/D_n.
//! Polynomial coefficient sums are accumulated in double-double precision —
//! the C_{n,k} alternate in sign and grow fast with n.

use crate::dd::Dd;
use crate::moments::MomentEngine;
use crate::{HarqError, Result};
use serde::{Deserialize, Serialize};

/// Degree cap N̂ for the polynomial correction.
pub const N_HAT: usize = 10;
/// Default MSE-reduction stopping tolerance ε.
pub const DEFAULT_EPSILON: f64 = 0.01;
/// Orthogonality / consistency residual tolerance.
const ORTHO_TOL: f64 = 1e-8;

/// Gamma(ζ,θ) basis measure and its raw moments ν_n = θⁿΓ(n+ζ)/Γ(ζ).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaBasis {
    pub zeta: f64,
    pub theta: f64,
    pub nu: Vec<f64>,
}

impl GammaBasis {
    /// Moments built by the recurrence ν_{n+1} = ν_n·θ(n+ζ), orders 0..=max_order.
    pub fn new(zeta: f64, theta: f64, max_order: usize) -> Result<Self> {
        if !(zeta > 0.0) || !(theta > 0.0) {
            return Err(HarqError::Parameter(format!(
                "GammaBasis needs zeta > 0 and theta > 0, got ({zeta}, {theta})"
            )));
        }
        let mut nu = Vec::with_capacity(max_order + 1);
        nu.push(1.0);
        for n in 0..max_order {
            let last = *nu.last().unwrap();
            nu.push(last * theta * (n as f64 + zeta));
        }
        Ok(GammaBasis { zeta, theta, nu })
    }
}

/// Matches Gamma(ζ,θ) to the first two moments of I_K^IR.
pub fn gamma_match(engine: &MomentEngine) -> Result<GammaBasis> {
    let m1 = engine.moment(1)?;
    let m2 = engine.moment(2)?;
    let var = m2 - m1 * m1;
    if !(var > 0.0) {
        return Err(HarqError::Conditioning(format!(
            "nonpositive variance estimate {var} (M(1)={m1}, M(2)={m2}, N_Q={}, N_t={})",
            engine.quad.order, engine.t_rule.order
        )));
    }
    GammaBasis::new(m1 * m1 / var, var / m1, 2 * N_HAT)
}

/// Monic polynomials orthogonal under the Gamma measure.
#[derive(Debug, Clone)]
pub struct OrthoPolyBasis {
    pub degree: usize,
    /// C[n][k]: coefficient of x^k in P_n; C[n][n] = 1.
    pub coeffs: Vec<Vec<f64>>,
    /// α_0..α_{N−1}.
    pub alpha: Vec<f64>,
    /// β_1..β_{N−1} (index n−1 holds β_n).
    pub beta: Vec<f64>,
    /// D_0..D_N.
    pub norms: Vec<f64>,
    cdd: Vec<Vec<Dd>>,
}

/// ⟨P_a, P_b⟩ = Σ_{i,j} C_{a,i} C_{b,j} ν_{i+j}, in double-double.
fn inner_dd(a: &[Dd], b: &[Dd], nu: &[f64]) -> Dd {
    let mut acc = Dd::ZERO;
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            acc = acc.add(ai.mul(*bj).mul_f64(nu[i + j]));
        }
    }
    acc
}

/// Builds P_0..P_N by the three-term recurrence
/// C_{n+1,k} = C_{n,k−1} − α_n C_{n,k} − β_n C_{n−1,k}.
pub fn build_ortho_basis(basis: &GammaBasis, degree: usize) -> Result<OrthoPolyBasis> {
    if degree > N_HAT {
        return Err(HarqError::Parameter(format!("degree {degree} exceeds cap {N_HAT}")));
    }
    if basis.nu.len() < 2 * degree + 1 {
        return Err(HarqError::Parameter(format!(
            "need nu up to order {}, have {}",
            2 * degree,
            basis.nu.len() - 1
        )));
    }
    let nu = &basis.nu;
    let mut cdd: Vec<Vec<Dd>> = vec![vec![Dd::ONE]]; // P_0 = 1
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    let mut norms_dd = vec![inner_dd(&cdd[0], &cdd[0], nu)]; // D_0 = ν_0 = 1

    for n in 0..degree {
        let pn = &cdd[n];
        // α_n = ⟨x P_n, P_n⟩ / D_n: shift indices by one in one factor
        let mut num = Dd::ZERO;
        for (i, ai) in pn.iter().enumerate() {
            for (j, aj) in pn.iter().enumerate() {
                num = num.add(ai.mul(*aj).mul_f64(nu[i + j + 1]));
            }
        }
        let an = num.div(norms_dd[n]);
        // β_n = D_n / D_{n−1}
        let bn = if n == 0 { Dd::ZERO } else { norms_dd[n].div(norms_dd[n - 1]) };
        let mut next = vec![Dd::ZERO; n + 2];
        for k in 0..=n + 1 {
            let mut c = if k >= 1 { pn[k - 1] } else { Dd::ZERO };
            if k <= n {
                c = c.sub(an.mul(pn[k]));
            }
            if n >= 1 && k <= n - 1 {
                c = c.sub(bn.mul(cdd[n - 1][k]));
            }
            next[k] = c;
        }
        let dn1 = inner_dd(&next, &next, nu);
        if !(dn1.to_f64() > 0.0) {
            return Err(HarqError::Conditioning(format!(
                "D_{} = {} not positive; reduce the degree below {}",
                n + 1,
                dn1.to_f64(),
                n + 1
            )));
        }
        alpha.push(an.to_f64());
        if n >= 1 {
            beta.push(bn.to_f64());
        }
        cdd.push(next);
        norms_dd.push(dn1);
    }

    // numeric orthogonality: |⟨P_n,P_m⟩| ≤ tol·√(D_n D_m) for n ≠ m
    for n in 0..=degree {
        for m in 0..n {
            let ip = inner_dd(&cdd[n], &cdd[m], nu).to_f64();
            let scale = (norms_dd[n].to_f64() * norms_dd[m].to_f64()).sqrt();
            if ip.abs() > ORTHO_TOL * scale {
                return Err(HarqError::Conditioning(format!(
                    "orthogonality residual |<P_{n},P_{m}>| = {:.3e} exceeds {ORTHO_TOL:.0e}·√(D D); reduce the degree",
                    ip.abs() / scale
                )));
            }
        }
    }

    Ok(OrthoPolyBasis {
        degree,
        coeffs: cdd
            .iter()
            .map(|row| row.iter().map(|c| c.to_f64()).collect())
            .collect(),
        alpha,
        beta,
        norms: norms_dd.iter().map(|d| d.to_f64()).collect(),
        cdd,
    })
}

impl OrthoPolyBasis {
    /// The TTRR leaves rows 0..=n unchanged, so truncation is a prefix copy.
    pub fn truncate(&self, degree: usize) -> Result<OrthoPolyBasis> {
        if degree > self.degree {
            return Err(HarqError::Parameter(format!(
                "cannot truncate degree {} basis to {degree}",
                self.degree
            )));
        }
        Ok(OrthoPolyBasis {
            degree,
            coeffs: self.coeffs[..=degree].to_vec(),
            alpha: self.alpha[..degree].to_vec(),
            beta: self.beta[..degree.saturating_sub(1)].to_vec(),
            norms: self.norms[..=degree].to_vec(),
            cdd: self.cdd[..=degree].to_vec(),
        })
    }

    /// Largest normalized cross-inner-product |⟨P_n,P_m⟩|/√(D_n D_m), n ≠ m:
    /// the orthogonality residual reported in fit diagnostics.
    pub fn max_cross_residual(&self, basis: &GammaBasis) -> f64 {
        let mut worst = 0.0f64;
        for n in 0..=self.degree {
            for m in 0..n {
                let ip = inner_dd(&self.cdd[n], &self.cdd[m], &basis.nu).to_f64();
                let scale = (self.norms[n] * self.norms[m]).sqrt();
                worst = worst.max(ip.abs() / scale);
            }
        }
        worst
    }
}

/// The fitted mixture representation of the CDF of I_K^IR.
#[derive(Debug, Clone)]
pub struct MutualInfoApprox {
    pub basis: GammaBasis,
    pub ortho: OrthoPolyBasis,
    /// Correction coordinates; η_0 = 1.
    pub eta: Vec<f64>,
    /// Mixture weights over Gamma(i+ζ,θ) CDFs; Σκ = 1.
    pub kappa: Vec<f64>,
    pub degree: usize,
    /// Δ_1..Δ_N.
    pub mse_reduction: Vec<f64>,
}

/// Serializable summary (ζ, θ, N, η, κ) for caching between invocations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub zeta: f64,
    pub theta: f64,
    pub degree: usize,
    pub eta: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl MutualInfoApprox {
    pub fn summary(&self) -> FitSummary {
        FitSummary {
            zeta: self.basis.zeta,
            theta: self.basis.theta,
            degree: self.degree,
            eta: self.eta.clone(),
            kappa: self.kappa.clone(),
        }
    }
}

/// Solves the diagonal least-squares system for η, folds it into the
/// mixture weights κ, and records the Δ sequence.
///
/// The moment-matching constraint makes the Lagrange multiplier exactly
/// zero, which surfaces numerically as Σκ = 1; that identity is asserted,
/// never repaired by renormalization.
pub fn fit_correction(
    engine: &MomentEngine,
    basis: &GammaBasis,
    ortho: &OrthoPolyBasis,
) -> Result<MutualInfoApprox> {
    let n = ortho.degree;
    let moments: Vec<f64> = (0..=n).map(|i| engine.moment(i)).collect::<Result<_>>()?;

    // b_m = Σ_k C_{m,k} M(k); η_m = b_m / D_m
    let mut eta_dd = Vec::with_capacity(n + 1);
    let mut b_dd = Vec::with_capacity(n + 1);
    for m in 0..=n {
        let mut b = Dd::ZERO;
        for (k, c) in ortho.cdd[m].iter().enumerate() {
            b = b.add(c.mul_f64(moments[k]));
        }
        b_dd.push(b);
        eta_dd.push(b.div(Dd::from(ortho.norms[m])));
    }

    // κ_i = ν_i Σ_{m≥i} η_m C_{m,i}
    let mut kappa = Vec::with_capacity(n + 1);
    let mut kappa_sum = Dd::ZERO;
    for i in 0..=n {
        let mut acc = Dd::ZERO;
        for m in i..=n {
            acc = acc.add(eta_dd[m].mul(ortho.cdd[m][i]));
        }
        let ki = acc.mul_f64(basis.nu[i]);
        kappa_sum = kappa_sum.add(ki);
        kappa.push(ki.to_f64());
    }
    let dev = (kappa_sum.to_f64() - 1.0).abs();
    if dev > ORTHO_TOL {
        return Err(HarqError::Consistency(format!(
            "mixture weights must sum to 1, got deviation {dev:.3e}"
        )));
    }

    // Δ_n = Σ_{m=1..n} b_m²/D_m
    let mut delta = Vec::with_capacity(n);
    let mut run = Dd::ZERO;
    for m in 1..=n {
        run = run.add(b_dd[m].mul(b_dd[m]).div(Dd::from(ortho.norms[m])));
        delta.push(run.to_f64());
    }

    Ok(MutualInfoApprox {
        basis: basis.clone(),
        ortho: ortho.clone(),
        eta: eta_dd.iter().map(|e| e.to_f64()).collect(),
        kappa,
        degree: n,
        mse_reduction: delta,
    })
}

/// Δ_n for n in 1..=degree.
pub fn mse_reduction(approx: &MutualInfoApprox, n: usize) -> Result<f64> {
    if n < 1 || n > approx.degree {
        return Err(HarqError::Parameter(format!(
            "mse_reduction index {n} outside 1..={}",
            approx.degree
        )));
    }
    Ok(approx.mse_reduction[n - 1])
}

/// Degree rule N = min{ min{n ≥ 3 : r_n ≤ ε}, N̂ } with
/// r_n = (Δ_n − Δ_{n−1})/Δ_n, and r_n = 0 when Δ_n = 0 (no reduction means
/// no gain, so the rule may stop there).
pub fn select_degree(
    engine: &MomentEngine,
    basis: &GammaBasis,
    cap: usize,
    tolerance: f64,
) -> Result<MutualInfoApprox> {
    if cap < 3 {
        return Err(HarqError::Parameter(format!("degree cap must be >= 3, got {cap}")));
    }
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(HarqError::Parameter(format!("tolerance must be in (0,1), got {tolerance}")));
    }
    // build at the cap, backing off if the recurrence loses orthogonality
    let mut cap = cap.min(N_HAT);
    let ortho = loop {
        match build_ortho_basis(basis, cap) {
            Ok(b) => break b,
            Err(HarqError::Conditioning(msg)) if cap > 3 => {
                log::warn!("degree cap reduced to {}: {msg}", cap - 1);
                cap -= 1;
            }
            Err(e) => return Err(e),
        }
    };
    let full = fit_correction(engine, basis, &ortho)?;
    let mut selected = cap;
    for n in 3..=cap {
        let dn = full.mse_reduction[n - 1];
        let dp = full.mse_reduction[n - 2];
        let rn = if dn == 0.0 { 0.0 } else { (dn - dp) / dn };
        if rn <= tolerance {
            selected = n;
            break;
        }
    }
    if selected == cap {
        return Ok(full);
    }
    fit_correction(engine, basis, &ortho.truncate(selected)?)
}

/// Full pipeline for one (channel, K): moments → Gamma match → degree
/// selection → fitted mixture.
pub fn fit_mutual_info(
    spec: &crate::channel::ChannelSpec,
    k: usize,
    n_q: usize,
    n_t: usize,
    cap: usize,
    tolerance: f64,
) -> Result<MutualInfoApprox> {
    let engine = MomentEngine::new(spec, k, n_q, n_t)?;
    let basis = gamma_match(&engine)?;
    select_degree(&engine, &basis, cap, tolerance)
}

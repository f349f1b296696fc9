//! Scalar special functions and Gauss-Laguerre quadrature.
//!
//! Everything here is a pure function; `QuadratureRule` is immutable after
//! construction and freely shareable across threads.

use crate::dd::Dd;
use crate::{HarqError, Result};
use std::sync::OnceLock;

/// Margin on the Σaₖ < 1 convergence guard of [`psi2_integral`].
pub const PSI2_SUM_MARGIN: f64 = 1e-6;
/// Default cap on y·Σδₖ⁻¹ for [`phi2_series`]; beyond it the alternating
/// shells cancel to the point where even compensated summation is unreliable.
pub const PHI2_GUARD: f64 = 30.0;

/// Gauss-Laguerre rule for the weight e^{-x} on (0, ∞).
///
/// `ln_weights[i] = ln(weights[i])` computed without underflow; for orders
/// beyond ~170 the largest nodes carry weights below f64 range and
/// `weights[i]` is a flushed-to-zero convenience value only.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub ln_weights: Vec<f64>,
}

/// Laguerre ladder L_0..L_n at x with dynamic rescaling.
/// Returns (L_n, L_{n-1}, L_{n+1}, ln_scale): true values are the returned
/// numbers times e^{ln_scale}.
fn laguerre_scaled(n: usize, x: f64) -> (f64, f64, f64, f64) {
    let mut p2 = 0.0f64;
    let mut p1 = 1.0f64;
    let mut ln_scale = 0.0f64;
    for k in 0..n {
        let kf = k as f64;
        let p0 = ((2.0 * kf + 1.0 - x) * p1 - kf * p2) / (kf + 1.0);
        p2 = p1;
        p1 = p0;
        if p1.abs() > 1e150 {
            p1 *= 1e-150;
            p2 *= 1e-150;
            ln_scale += 150.0 * std::f64::consts::LN_10;
        }
    }
    let nf = n as f64;
    let pnext = ((2.0 * nf + 1.0 - x) * p1 - nf * p2) / (nf + 1.0);
    (p1, p2, pnext, ln_scale)
}

/// Gauss-Laguerre nodes and weights by Newton iteration on L_n.
pub fn gauss_laguerre(order: usize) -> Result<QuadratureRule> {
    if order < 1 || order > 256 {
        return Err(HarqError::Parameter(format!(
            "gauss_laguerre order must be in 1..=256, got {order}"
        )));
    }
    let n = order;
    let nf = n as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut ln_weights = Vec::with_capacity(n);

    let mut z = 0.0f64;
    for i in 0..n {
        // initial guesses from Numerical Recipes (gaulag, alf = 0)
        if i == 0 {
            z = 3.0 / (1.0 + 2.4 * nf);
        } else if i == 1 {
            z += 15.0 / (1.0 + 2.5 * nf);
        } else {
            let ai = (i - 1) as f64;
            z += (1.0 + 2.55 * ai) / (1.9 * ai) * (z - nodes[i - 2]);
        }
        let mut converged = false;
        for _ in 0..100 {
            let (p1, p2, _, _) = laguerre_scaled(n, z);
            // L_n'(x) = n (L_n(x) - L_{n-1}(x)) / x
            let pp = nf * (p1 - p2) / z;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(HarqError::Conditioning(format!(
                "Laguerre root {i} of order {n} did not converge"
            )));
        }
        let (_, _, pnext, ln_scale) = laguerre_scaled(n, z);
        // w = x / ((n+1)^2 L_{n+1}(x)^2), evaluated in logs
        let ln_w =
            z.ln() - 2.0 * (nf + 1.0).ln() - 2.0 * (pnext.abs().ln() + ln_scale);
        nodes.push(z);
        ln_weights.push(ln_w);
        weights.push(ln_w.exp());
    }

    let sum_w: f64 = weights.iter().sum();
    let sum_wx: f64 = weights.iter().zip(&nodes).map(|(w, x)| w * x).sum();
    if (sum_w - 1.0).abs() > 1e-12 || (sum_wx - 1.0).abs() > 1e-12 {
        return Err(HarqError::Consistency(format!(
            "Laguerre rule order {n}: Σw = {sum_w}, Σwx = {sum_wx}"
        )));
    }
    Ok(QuadratureRule { order, nodes, weights, ln_weights })
}

/// ln Γ(x) for x > 0, Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x) = γ(a,x)/Γ(a).
pub fn reg_lower_gamma(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(HarqError::Parameter(format!("reg_lower_gamma needs a > 0, got {a}")));
    }
    if !(x >= 0.0) {
        return Err(HarqError::Parameter(format!("reg_lower_gamma needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x < a + 1.0 {
        // series for γ(a,x)
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..500 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-16 {
                let ln_pref = a * x.ln() - x - ln_gamma(a);
                return Ok((sum * ln_pref.exp()).min(1.0));
            }
        }
        Err(HarqError::Conditioning(format!("gser failed to converge for a={a}, x={x}")))
    } else {
        // Lentz continued fraction for Γ(a,x)
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                let ln_pref = a * x.ln() - x - ln_gamma(a);
                let q = (ln_pref.exp()) * h;
                return Ok((1.0 - q).clamp(0.0, 1.0));
            }
        }
        Err(HarqError::Conditioning(format!("gcf failed to converge for a={a}, x={x}")))
    }
}

/// ₀F₁(;1;z) = Σ z^k/(k!)² = I₀(2√z), for z ≥ 0.
pub fn hyp0f1_1(z: f64) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(HarqError::Parameter(format!("hyp0f1_1 needs z >= 0, got {z}")));
    }
    if z <= 100.0 {
        Ok(hyp0f1_series(z))
    } else {
        Ok(ln_hyp0f1_1(z)?.exp())
    }
}

fn hyp0f1_series(z: f64) -> f64 {
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for k in 1..500 {
        let kf = k as f64;
        term *= z / (kf * kf);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// ln ₀F₁(;1;z) without overflow; the large-z branch uses the uniform
/// asymptotic expansion of I₀(t), t = 2√z.
pub fn ln_hyp0f1_1(z: f64) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(HarqError::Parameter(format!("ln_hyp0f1_1 needs z >= 0, got {z}")));
    }
    if z <= 100.0 {
        return Ok(hyp0f1_series(z).ln());
    }
    let t = 2.0 * z.sqrt();
    // I0(t) ~ e^t/sqrt(2 pi t) * sum_k prod_{j<=k}(2j-1)^2 / (k! (8t)^k)
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for k in 1..40 {
        let kf = k as f64;
        let next = term * (2.0 * kf - 1.0) * (2.0 * kf - 1.0) / (8.0 * kf * t);
        if next >= term {
            break; // asymptotic tail starts diverging
        }
        term = next;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    Ok(t - 0.5 * (2.0 * std::f64::consts::PI * t).ln() + sum.ln())
}

/// Bessel function of the first kind, order zero.
pub fn bessel_j0(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(HarqError::Parameter(format!("bessel_j0 needs finite x, got {x}")));
    }
    let ax = x.abs();
    if ax <= 16.0 {
        // power series in compensated arithmetic (terms alternate and grow
        // to ~1e5 near ax = 16 before decaying)
        let q = -0.25 * x * x;
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for k in 1..80 {
            let kf = k as f64;
            term = term.mul_f64(q / (kf * kf));
            sum = sum.add(term);
            if term.hi.abs() < 1e-20 {
                break;
            }
        }
        Ok(sum.to_f64())
    } else {
        // Hankel asymptotic expansion
        let omega = ax - std::f64::consts::FRAC_PI_4;
        let mut p = 1.0f64;
        let mut q = 0.0f64;
        let mut term = 1.0f64;
        let mut sign_p = 1.0f64;
        let mut sign_q = 1.0f64;
        for m in 1..30 {
            let mf = m as f64;
            let next = term * (2.0 * mf - 1.0) * (2.0 * mf - 1.0) / (8.0 * mf * ax);
            if next >= term {
                break;
            }
            term = next;
            if m % 2 == 1 {
                q += sign_q * term;
                sign_q = -sign_q;
            } else {
                sign_p = -sign_p;
                p += sign_p * term;
            }
            if term < 1e-17 {
                break;
            }
        }
        Ok((2.0 / (std::f64::consts::PI * ax)).sqrt()
            * (p * omega.cos() + q * omega.sin()))
    }
}

fn psi2_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_laguerre(128).expect("order-128 Laguerre rule"))
}

/// Ψ₂^{(K)}(1; 1,…,1; a₁,…,a_K) = ∫₀^∞ e^{−t} Π_k ₀F₁(;1;a_k t) dt.
pub fn psi2_integral(a: &[f64]) -> Result<f64> {
    psi2_integral_guarded(a, PSI2_SUM_MARGIN)
}

/// [`psi2_integral`] with a configurable margin on the Σa < 1 guard.
pub fn psi2_integral_guarded(a: &[f64], margin: f64) -> Result<f64> {
    if a.is_empty() {
        return Err(HarqError::Parameter("psi2_integral needs K >= 1".into()));
    }
    for &ak in a {
        if !(ak >= 0.0) {
            return Err(HarqError::Parameter(format!(
                "psi2_integral needs a_k >= 0, got {ak}"
            )));
        }
    }
    let s: f64 = a.iter().sum();
    if s >= 1.0 - margin {
        return Err(HarqError::Domain(format!(
            "psi2_integral divergent regime: sum of arguments {s} >= 1"
        )));
    }
    let rule = psi2_rule();
    let mut total = 0.0f64;
    for j in 0..rule.order {
        let t = rule.nodes[j];
        let mut ln_term = rule.ln_weights[j];
        for &ak in a {
            ln_term += ln_hyp0f1_1(ak * t)?;
        }
        total += ln_term.exp();
    }
    Ok(total)
}

/// Φ₂^{(M)}(1,…,1; M+1; −y/δ₁,…,−y/δ_M), the confluent Lauricella series
/// appearing in the CDF of a sum of correlated exponentials.
///
/// Shells of fixed total degree L are complete homogeneous symmetric
/// polynomials h_L of the arguments, computed stably in the positive
/// variables y/δ_k via the Newton-identity recurrence; the outer alternating
/// sum is accumulated in double-double precision.
pub fn phi2_series(y: f64, delta: &[f64]) -> Result<f64> {
    phi2_series_guarded(y, delta, PHI2_GUARD)
}

/// [`phi2_series`] with a configurable cap on y·Σδₖ⁻¹.
pub fn phi2_series_guarded(y: f64, delta: &[f64], guard: f64) -> Result<f64> {
    if delta.is_empty() {
        return Err(HarqError::Parameter("phi2_series needs M >= 1".into()));
    }
    if !(y > 0.0) {
        return Err(HarqError::Parameter(format!("phi2_series needs y > 0, got {y}")));
    }
    for &d in delta {
        if !(d > 0.0) {
            return Err(HarqError::Parameter(format!(
                "phi2_series needs delta_k > 0, got {d}"
            )));
        }
    }
    let x: Vec<f64> = delta.iter().map(|&d| y / d).collect();
    let strain: f64 = x.iter().sum();
    if strain > guard {
        return Err(HarqError::Domain(format!(
            "phi2_series convergence guard violated: y * sum(1/delta) = {strain} > {guard}"
        )));
    }
    let m = delta.len() as f64;
    let umax = x.iter().cloned().fold(0.0f64, f64::max);
    if umax == 0.0 {
        return Ok(1.0);
    }
    let v: Vec<f64> = x.iter().map(|&xi| xi / umax).collect();

    const L_MAX: usize = 1200;
    let mut h: Vec<f64> = Vec::with_capacity(256);
    h.push(1.0);
    let mut vpow = v.clone();
    let mut psums: Vec<f64> = Vec::with_capacity(256); // psums[j-1] = p_j(v)

    let mut sum = Dd::ONE; // L = 0 shell
    let mut coef = 1.0f64; // umax^L / (M+1)_L
    let mut small_run = 0usize;
    for l in 1..=L_MAX {
        psums.push(vpow.iter().sum());
        for (vp, &vi) in vpow.iter_mut().zip(&v) {
            *vp *= vi;
        }
        // Newton's identity: L h_L = sum_{j=1..L} p_j h_{L-j}
        let mut acc = 0.0f64;
        for j in 1..=l {
            acc += psums[j - 1] * h[l - j];
        }
        let hl = acc / l as f64;
        h.push(hl);
        coef *= umax / (m + l as f64);
        let term = hl * coef;
        let signed = if l % 2 == 0 { term } else { -term };
        sum = sum.add_f64(signed);
        if term.abs() < 1e-14 {
            small_run += 1;
            if small_run >= 3 && l >= 8 {
                return Ok(sum.to_f64());
            }
        } else {
            small_run = 0;
        }
    }
    Err(HarqError::Consistency(format!(
        "phi2_series failed to converge within {L_MAX} shells (y={y})"
    )))
}

//! Differential-privacy accounting: Rényi DP of the (Poisson-subsampled)
//! Gaussian mechanism, conversion to (ε, δ), and the exponential-mechanism
//! bound. Everything here is an analytic upper bound; empirical lower bounds
//! live in `metrics` and never flow through this module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{log_add_exp, log_integrate, log_sum_exp, ln_binomial, normal_log_pdf};

/// Budgets above this ε are reported as vacuous rather than as guarantees.
pub const DEFAULT_VACUOUS_THRESHOLD: f64 = 5000.0;

/// One (order, RDP value) point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdpPoint {
    pub order: f64,
    pub value: f64,
}

/// RDP values over a grid of orders; orders strictly increasing, values ≥ 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    points: Vec<RdpPoint>,
}

impl RdpCurve {
    pub fn new(points: Vec<RdpPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("RDP curve needs at least one order".into()));
        }
        for w in points.windows(2) {
            if w[1].order <= w[0].order {
                return Err(Error::Validation("orders must be strictly increasing".into()));
            }
        }
        if points.iter().any(|p| p.order <= 1.0) {
            return Err(Error::Validation("orders must exceed 1".into()));
        }
        if points.iter().any(|p| !(p.value >= 0.0)) {
            return Err(Error::Validation("RDP values must be non-negative".into()));
        }
        Ok(RdpCurve { points })
    }

    pub fn points(&self) -> &[RdpPoint] {
        &self.points
    }

    pub fn value_at(&self, order: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.order == order)
            .map(|p| p.value)
    }

    fn merged_with(&self, other: &RdpCurve) -> RdpCurve {
        let mut pts = self.points.clone();
        for p in &other.points {
            if !pts.iter().any(|q| q.order == p.order) {
                pts.push(*p);
            }
        }
        pts.sort_by(|a, b| a.order.total_cmp(&b.order));
        RdpCurve { points: pts }
    }
}

/// {1.25, 1.5, 2, 3, ..., 64}.
pub fn default_order_grid() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5];
    orders.extend((2..=64).map(f64::from));
    orders
}

// ln E_{z~N(0,σ²)}[(μ(z)/μ₀(z))^α] for μ = (1-q)·N(0,σ²) + q·N(1,σ²).
// Integer orders use the exact binomial series; fractional orders fall back
// to log-domain quadrature (absolute tolerance on ρ better than 1e-10).
fn log_moment(q: f64, sigma: f64, alpha: f64) -> f64 {
    if q == 1.0 {
        return alpha * (alpha - 1.0) / (2.0 * sigma * sigma);
    }
    let two_sigma_sq = 2.0 * sigma * sigma;
    if alpha.fract() == 0.0 && alpha <= 1e6 {
        let a = alpha as u64;
        let ln_one_minus_q = (1.0 - q).ln();
        let terms: Vec<f64> = (0..=a)
            .map(|k| {
                let kf = k as f64;
                ln_binomial(alpha, kf)
                    + (alpha - kf) * ln_one_minus_q
                    + kf * q.ln()
                    + kf * (kf - 1.0) / two_sigma_sq
            })
            .collect();
        log_sum_exp(&terms)
    } else {
        let ln_one_minus_q = (1.0 - q).ln();
        let ln_q = q.ln();
        let integrand = |t: f64| {
            let s = (2.0 * sigma * t - 1.0) / two_sigma_sq;
            normal_log_pdf(t, 0.0, 1.0) + alpha * log_add_exp(ln_one_minus_q, ln_q + s)
        };
        let hi = alpha / sigma + 45.0;
        log_integrate(integrand, -45.0, hi, 1e-12)
    }
}

/// Per-order RDP of the Poisson-subsampled Gaussian mechanism composed
/// `steps` times. σ = 0 carries no noise and is rejected as non-private.
pub fn rdp_subsampled_gaussian(
    q: f64,
    sigma: f64,
    steps: usize,
    orders: &[f64],
) -> Result<RdpCurve> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Validation(format!("sample rate must be in (0,1], got {q}")));
    }
    if sigma == 0.0 {
        return Err(Error::NonPrivate(
            "subsampled Gaussian with sigma = 0 adds no noise".into(),
        ));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Validation(format!("noise multiplier must be positive, got {sigma}")));
    }
    if steps == 0 {
        return Err(Error::Validation("steps must be >= 1".into()));
    }
    if orders.is_empty() {
        return Err(Error::Validation("order grid is empty".into()));
    }
    let mut points = Vec::with_capacity(orders.len());
    for &alpha in orders {
        if alpha <= 1.0 || !alpha.is_finite() {
            return Err(Error::Validation(format!("orders must exceed 1, got {alpha}")));
        }
        let rho_once = (log_moment(q, sigma, alpha) / (alpha - 1.0)).max(0.0);
        points.push(RdpPoint {
            order: alpha,
            value: steps as f64 * rho_once,
        });
    }
    RdpCurve::new(points)
}

fn eps_at_order(rho: f64, alpha: f64, delta: f64) -> f64 {
    rho + ((alpha - 1.0) / alpha).ln() - (delta.ln() + alpha.ln()) / (alpha - 1.0)
}

/// Convert an RDP curve to an (ε, δ) guarantee: minimum over orders of the
/// order-optimized conversion, floored at zero.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<f64> {
    Ok(rdp_to_dp_detail(curve, delta)?.0)
}

fn rdp_to_dp_detail(curve: &RdpCurve, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Validation(format!("delta must be in (0,1), got {delta}")));
    }
    let mut best = (f64::INFINITY, 0.0);
    for p in curve.points() {
        let eps = eps_at_order(p.value, p.order, delta);
        if eps < best.0 {
            best = (eps, p.order);
        }
    }
    Ok((best.0.max(0.0), best.1))
}

/// End-to-end ε for a DP-SGD run: default order grid plus a fine sweep near
/// the minimizing order. Deterministic in its inputs; the returned curve is
/// exactly the grid the reported ε was minimized over.
pub fn dpsgd_epsilon(q: f64, sigma: f64, steps: usize, delta: f64) -> Result<(f64, RdpCurve)> {
    let orders = default_order_grid();
    let coarse = rdp_subsampled_gaussian(q, sigma, steps, &orders)?;
    let (_, best_order) = rdp_to_dp_detail(&coarse, delta)?;

    let idx = orders
        .iter()
        .position(|&o| o == best_order)
        .unwrap_or(orders.len() - 1);
    let lo = if idx == 0 { 1.0 + 1e-3 } else { orders[idx - 1] };
    let hi = if idx + 1 < orders.len() {
        orders[idx + 1]
    } else {
        orders[idx] * 2.0
    };
    let sweep: Vec<f64> = (1..40).map(|i| lo + (hi - lo) * i as f64 / 40.0).collect();
    let fine = rdp_subsampled_gaussian(q, sigma, steps, &sweep)?;
    let merged = coarse.merged_with(&fine);
    let eps = rdp_to_dp(&merged, delta)?;
    Ok((eps, merged))
}

/// Bisect the noise multiplier so the accounted ε hits `target_eps`.
pub fn calibrate_sigma(target_eps: f64, delta: f64, q: f64, steps: usize) -> Result<f64> {
    if !(target_eps > 0.0 && target_eps.is_finite()) {
        return Err(Error::Validation("target epsilon must be positive".into()));
    }
    let eps_of = |sigma: f64| -> Result<f64> { Ok(dpsgd_epsilon(q, sigma, steps, delta)?.0) };
    let mut lo = 1e-2;
    let mut hi = 1e4;
    if eps_of(lo)? < target_eps || eps_of(hi)? > target_eps {
        return Err(Error::Config(format!(
            "target epsilon {target_eps} not bracketed by sigma in [{lo}, {hi}]"
        )));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if eps_of(mid)? > target_eps {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) / hi < 1e-9 {
            break;
        }
    }
    Ok(hi)
}

/// ε of the exponential mechanism with per-example loss range [lo, hi]:
/// twice the range.
pub fn exponential_mechanism_epsilon(lo: f64, hi: f64) -> Result<f64> {
    if !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Validation(format!(
            "loss range [{lo}, {hi}] is not a finite interval"
        )));
    }
    Ok(2.0 * (hi - lo))
}

/// Accounting inputs sufficient to recompute a reported ε exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountingParams {
    pub sigma: f64,
    pub sample_rate: f64,
    pub steps: usize,
}

/// An analytic privacy guarantee attached to a trained model.
///
/// `epsilon` is `None` exactly when the mechanism is non-private; an ∞ is
/// never stored silently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub mechanism: String,
    pub accounting: Option<AccountingParams>,
}

impl PrivacyBudget {
    pub fn non_private(mechanism: impl Into<String>) -> Self {
        PrivacyBudget {
            epsilon: None,
            delta: 0.0,
            mechanism: mechanism.into(),
            accounting: None,
        }
    }

    pub fn is_non_private(&self) -> bool {
        self.epsilon.is_none()
    }

    /// ε above the reporting threshold: present but not meaningful.
    pub fn is_vacuous(&self, threshold: f64) -> bool {
        matches!(self.epsilon, Some(e) if e > threshold)
    }

    /// True when the budget is a usable formal guarantee.
    pub fn is_formal(&self, threshold: f64) -> bool {
        !self.is_non_private() && !self.is_vacuous(threshold)
    }
}

//! Closed-form constants, thresholds, and probability bounds.
//!
//! Probabilities here are upper bounds, not estimates, and are reported as
//! natural logarithms since values such as `n^(-2m)` underflow immediately.

use serde::Serialize;

use crate::distributions::PolyBoundParams;
use crate::error::{Error, Result};

/// `tau = 1 - (c ln m / (theta_lower n))^(1/q)`; fails when not in `(0, 1)`.
pub fn analytic_tau(c: f64, n: usize, m: usize, params: &PolyBoundParams) -> Result<f64> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "constant c must be positive, got {c}"
        )));
    }
    if n == 0 || m < 2 {
        return Err(Error::InvalidParameter(format!(
            "threshold formula needs n >= 1 and m >= 2, got n = {n}, m = {m}"
        )));
    }
    let base = c * (m as f64).ln() / (params.theta_lower * n as f64);
    let tau = 1.0 - base.powf(1.0 / params.q);
    if tau <= 0.0 {
        return Err(Error::ThresholdNonPositive(format!(
            "{c} ln {m} / ({} * {n}) = {base}: n too small for this constant",
            params.theta_lower
        )));
    }
    Ok(tau)
}

/// `tau' = 3 tau - 2`; may be negative.
pub fn tau_prime(tau: f64) -> f64 {
    3.0 * tau - 2.0
}

/// `C = 3^q * 64 * theta_upper / theta_lower`.
pub fn big_c_constant(q: f64, theta_upper: f64, theta_lower: f64) -> Result<f64> {
    if ![q, theta_upper, theta_lower]
        .iter()
        .all(|x| x.is_finite() && *x > 0.0)
    {
        return Err(Error::InvalidParameter(format!(
            "C needs positive inputs, got q = {q}, theta_upper = {theta_upper}, theta_lower = {theta_lower}"
        )));
    }
    Ok(3f64.powf(q) * 64.0 * theta_upper / theta_lower)
}

fn check_theta_q(theta: f64, q: f64) -> Result<()> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "theta must lie in (0, 1], got {theta}"
        )));
    }
    if !(q.is_finite() && q >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "q must be at least 1, got {q}"
        )));
    }
    Ok(())
}

/// `ln rho` with `rho = (1 - (theta / (r+1)^q)^(r+1))^(1/4)`.
pub fn ln_rho(theta: f64, q: f64, r: usize) -> Result<f64> {
    check_theta_q(theta, q)?;
    if r == 0 {
        return Err(Error::InvalidParameter("r must be at least 1".into()));
    }
    let r1 = (r + 1) as f64;
    let x = (r1 * (theta.ln() - q * r1.ln())).exp();
    Ok(0.25 * (-x).ln_1p())
}

pub fn rho(theta: f64, q: f64, r: usize) -> Result<f64> {
    ln_rho(theta, q, r).map(f64::exp)
}

/// Inputs of the non-existence bound. `r = floor(m / n)` and the remainder
/// `ell = m - r n` must satisfy `1 <= ell <= n - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonExistenceBoundParams {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub theta: f64,
    pub q: f64,
    pub epsilon: f64,
}

impl NonExistenceBoundParams {
    pub fn new(n: usize, m: usize, theta: f64, q: f64, epsilon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        let r = m / n;
        if r == 0 {
            return Err(Error::InvalidParameter(format!(
                "m = {m} < n = {n}: bound needs r >= 1"
            )));
        }
        if m == r * n {
            return Err(Error::InvalidParameter(format!(
                "ell = 0: m = {m} is divisible by n = {n}"
            )));
        }
        check_theta_q(theta, q)?;
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        Ok(NonExistenceBoundParams {
            n,
            m,
            r,
            theta,
            q,
            epsilon,
        })
    }

    pub fn ell(&self) -> usize {
        self.m - self.r * self.n
    }

    /// `n^eps <= ell <= n - n^eps`.
    pub fn in_epsilon_range(&self) -> bool {
        let (n, ell) = (self.n as f64, self.ell() as f64);
        let slack = n.powf(self.epsilon);
        ell >= slack && ell <= n - slack
    }
}

/// Log of the per-allocation envy-free probability bound and its weaker forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerAllocationBound {
    pub ln_rho: f64,
    /// `ell (n - ell) / (r (r+1)) * ln rho`.
    pub log: f64,
    /// `n min(ell, n - ell) / (2 r (r+1)) * ln rho`.
    pub log_min_form: f64,
    /// `n^(1+eps) / (2 r (r+1)) * ln rho`; valid only when `n^eps <= ell <= n - n^eps`.
    pub log_epsilon_form: f64,
    pub in_epsilon_range: bool,
}

pub fn per_allocation_ef_bound(p: &NonExistenceBoundParams) -> Result<PerAllocationBound> {
    let lr = ln_rho(p.theta, p.q, p.r)?;
    let (n, ell) = (p.n as f64, p.ell() as f64);
    let rr = (p.r * (p.r + 1)) as f64;
    Ok(PerAllocationBound {
        ln_rho: lr,
        log: ell * (n - ell) / rr * lr,
        log_min_form: n * ell.min(n - ell) / (2.0 * rr) * lr,
        log_epsilon_form: n.powf(1.0 + p.epsilon) / (2.0 * rr) * lr,
        in_epsilon_range: p.in_epsilon_range(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlobalBound {
    /// `m ln n + per-allocation log`: union bound over all `n^m` allocations.
    pub log_bound: f64,
    pub per_allocation_log: f64,
    /// `-2 m ln n`.
    pub target_log: f64,
    /// Per-allocation bound at most `n^(-2m)`.
    pub meets_target: bool,
}

pub fn global_nonexistence_bound(p: &NonExistenceBoundParams) -> Result<GlobalBound> {
    let per = per_allocation_ef_bound(p)?;
    let m_ln_n = p.m as f64 * (p.n as f64).ln();
    Ok(GlobalBound {
        log_bound: m_ln_n + per.log,
        per_allocation_log: per.log,
        target_log: -2.0 * m_ln_n,
        meets_target: per.log <= -2.0 * m_ln_n,
    })
}

/// `c = 0.1 eps theta / q`.
pub fn nonexistence_c(epsilon: f64, theta: f64, q: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    check_theta_q(theta, q)?;
    Ok(0.1 * epsilon * theta / q)
}

/// Largest admissible `r = floor(c ln n / ln ln n)`; needs `n >= 3`.
pub fn nonexistence_max_r(c: f64, n: usize) -> Result<u64> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "ln ln n needs n >= 3, got {n}"
        )));
    }
    let ln_n = (n as f64).ln();
    Ok((c * ln_n / ln_n.ln()).floor() as u64)
}

/// `n ln n`.
pub fn coupon_threshold(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "coupon threshold needs n >= 2, got {n}"
        )));
    }
    let n = n as f64;
    Ok(n * n.ln())
}

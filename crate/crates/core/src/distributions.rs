//! Utility distributions on `[0, 1]`.
//!
//! Each [`DistributionSpec`] can be sampled reproducibly through a
//! [`DrawStream`] and reports its upper tail `Pr[u > 1 - alpha]` in closed
//! form. Distributions with a density bounded on both sides of `[0, 1]` also
//! report the `(theta_lower, theta_upper, q)` sandwich
//! `theta_lower * alpha^q <= Pr[u > 1 - alpha] <= theta_upper * alpha^q`.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::fmt;

use libm::{erf, erfc};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf_inv, erfc_inv};

use crate::error::{Error, Result};
use crate::rng::DrawStream;

/// Highest staircase level carried explicitly. The residual tail mass beyond
/// it is folded into the last atom.
pub const STAIRCASE_LEVELS: u32 = 40;

/// Tolerance for the final cumulative probability of a table.
const TABLE_END_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    Uniform,
    TruncatedNormal {
        mu: f64,
        sigma: f64,
    },
    /// Discrete law with `Pr[u > 1 - 2^-i] = Pr[u >= 1 - 2^-i] = 2^(-i^2)`.
    Staircase,
    /// Step CDF: `points[k] = (value, Pr[u <= value])`.
    Table {
        points: Vec<(f64, f64)>,
    },
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionSpec::Uniform => write!(f, "uniform"),
            DistributionSpec::TruncatedNormal { mu, sigma } => {
                write!(f, "truncated_normal({mu},{sigma})")
            }
            DistributionSpec::Staircase => write!(f, "staircase"),
            DistributionSpec::Table { points } => write!(f, "table({})", points.len()),
        }
    }
}

/// Parameters of a two-sided polynomial bound at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyBoundParams {
    pub theta_lower: f64,
    pub theta_upper: f64,
    pub q: f64,
}

impl PolyBoundParams {
    pub fn new(theta_lower: f64, theta_upper: f64, q: f64) -> Result<Self> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(positive(theta_lower) && positive(theta_upper) && positive(q)) {
            return Err(Error::InvalidParameter(format!(
                "poly bound params must be positive, got ({theta_lower}, {theta_upper}, {q})"
            )));
        }
        if theta_lower > theta_upper {
            return Err(Error::InvalidParameter(format!(
                "theta_lower {theta_lower} exceeds theta_upper {theta_upper}"
            )));
        }
        Ok(PolyBoundParams {
            theta_lower,
            theta_upper,
            q,
        })
    }
}

/// One grid point of [`verify_poly_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolyBoundCheck {
    pub alpha: f64,
    pub tail: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

/// Value of the staircase atom for level `i`.
///
/// Level `i` carries mass `2^(-i^2) - 2^(-(i+1)^2)` at the midpoint of
/// `(1 - 2^-i, 1 - 2^-(i+1))`, so no atom sits on a level boundary and the
/// strict and non-strict tails coincide there.
pub fn staircase_atom(level: u32) -> f64 {
    1.0 - 3.0 * (-(f64::from(level) + 2.0)).exp2()
}

/// `Pr[u > 1 - 2^-level]` for the staircase law.
pub fn staircase_level_tail(level: u32) -> f64 {
    let l = f64::from(level);
    (-(l * l)).exp2()
}

/// Inverse-transform branch: level selected by a survival draw `w in (0, 1)`.
/// `Pr[level >= i] = Pr[w <= 2^(-i^2)]`.
pub(crate) fn staircase_level_for(w: f64) -> u32 {
    let mut level = 0;
    while level < STAIRCASE_LEVELS && w <= staircase_level_tail(level + 1) {
        level += 1;
    }
    level
}

/// Standard normal mass on `[lo, hi]`, evaluated on whichever side of zero
/// avoids cancellation.
fn std_normal_mass(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        0.5 * (erfc(lo * FRAC_1_SQRT_2) - erfc(hi * FRAC_1_SQRT_2))
    } else if hi <= 0.0 {
        0.5 * (erfc(-hi * FRAC_1_SQRT_2) - erfc(-lo * FRAC_1_SQRT_2))
    } else {
        0.5 * (erf(hi * FRAC_1_SQRT_2) - erf(lo * FRAC_1_SQRT_2))
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// A validated distribution with precomputed constants, ready to draw from.
#[derive(Debug, Clone)]
pub enum Sampler {
    Uniform,
    TruncatedNormal {
        mu: f64,
        sigma: f64,
        lo: f64,
        hi: f64,
    },
    Staircase,
    Table {
        values: Vec<f64>,
        cumulative: Vec<f64>,
    },
}

impl Sampler {
    pub fn sample(&self, rng: &mut DrawStream) -> f64 {
        match self {
            Sampler::Uniform => rng.next_unit(),
            Sampler::TruncatedNormal { mu, sigma, lo, hi } => {
                let u = rng.next_open_unit();
                let z = if *lo >= 0.0 {
                    // Upper tail: Q(z) = Q(lo) - u (Q(lo) - Q(hi)), Q(z) = erfc(z/sqrt2)/2.
                    let (qa, qb) = (erfc(lo * FRAC_1_SQRT_2), erfc(hi * FRAC_1_SQRT_2));
                    SQRT_2 * erfc_inv(qa - u * (qa - qb))
                } else if *hi <= 0.0 {
                    let (qa, qb) = (erfc(-lo * FRAC_1_SQRT_2), erfc(-hi * FRAC_1_SQRT_2));
                    -SQRT_2 * erfc_inv(qa + u * (qb - qa))
                } else {
                    let (ea, eb) = (erf(lo * FRAC_1_SQRT_2), erf(hi * FRAC_1_SQRT_2));
                    SQRT_2 * erf_inv(ea + u * (eb - ea))
                };
                (mu + sigma * z.clamp(*lo, *hi)).clamp(0.0, 1.0)
            }
            Sampler::Staircase => staircase_atom(staircase_level_for(rng.next_open_unit())),
            Sampler::Table { values, cumulative } => {
                let u = rng.next_unit();
                let k = cumulative.partition_point(|&c| c <= u);
                values[k.min(values.len() - 1)]
            }
        }
    }
}

impl DistributionSpec {
    pub fn truncated_normal(mu: f64, sigma: f64) -> Self {
        DistributionSpec::TruncatedNormal { mu, sigma }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler().map(|_| ())
    }

    pub fn sampler(&self) -> Result<Sampler> {
        match self {
            DistributionSpec::Uniform => Ok(Sampler::Uniform),
            DistributionSpec::Staircase => Ok(Sampler::Staircase),
            DistributionSpec::TruncatedNormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(Error::InvalidDistribution(format!(
                        "mu must be finite, got {mu}"
                    )));
                }
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(Error::InvalidDistribution(format!(
                        "sigma must be positive, got {sigma}"
                    )));
                }
                let (lo, hi) = (-mu / sigma, (1.0 - mu) / sigma);
                if std_normal_mass(lo, hi).partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                    return Err(Error::InvalidDistribution(format!(
                        "truncated normal ({mu}, {sigma}) has no representable mass on [0, 1]"
                    )));
                }
                Ok(Sampler::TruncatedNormal {
                    mu: *mu,
                    sigma: *sigma,
                    lo,
                    hi,
                })
            }
            DistributionSpec::Table { points } => {
                validate_table(points)?;
                let values = points.iter().map(|p| p.0).collect();
                let mut cumulative: Vec<f64> = points.iter().map(|p| p.1).collect();
                *cumulative.last_mut().expect("non-empty table") = 1.0;
                Ok(Sampler::Table { values, cumulative })
            }
        }
    }

    /// `Pr[u > 1 - alpha]`.
    pub fn tail_prob(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::AlphaOutOfRange(alpha));
        }
        let x = 1.0 - alpha;
        match self.sampler()? {
            Sampler::Uniform => Ok(alpha),
            Sampler::TruncatedNormal { mu, sigma, lo, hi } => {
                let z = ((x - mu) / sigma).max(lo);
                Ok((std_normal_mass(z, hi) / std_normal_mass(lo, hi)).clamp(0.0, 1.0))
            }
            Sampler::Staircase => Ok((0..=STAIRCASE_LEVELS)
                .find(|&i| staircase_atom(i) > x)
                .map_or(0.0, staircase_level_tail)),
            Sampler::Table { values, cumulative } => {
                let below = values.partition_point(|&v| v <= x);
                Ok(if below == 0 {
                    1.0
                } else {
                    (1.0 - cumulative[below - 1]).max(0.0)
                })
            }
        }
    }

    /// Density of a truncated normal on `[0, 1]`; `None` for other kinds
    /// except the uniform, whose density is 1.
    pub fn density(&self, x: f64) -> Option<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Some(0.0);
        }
        match self.sampler().ok()? {
            Sampler::Uniform => Some(1.0),
            Sampler::TruncatedNormal { mu, sigma, lo, hi } => {
                Some(std_normal_pdf((x - mu) / sigma) / (sigma * std_normal_mass(lo, hi)))
            }
            _ => None,
        }
    }

    /// Polynomial-boundedness parameters with `q = 1`, taken from the extreme
    /// values of the density on `[0, 1]`.
    pub fn poly_bound_params(&self) -> Result<PolyBoundParams> {
        match self {
            DistributionSpec::Uniform => PolyBoundParams::new(1.0, 1.0, 1.0),
            DistributionSpec::TruncatedNormal { mu, .. } => {
                self.validate()?;
                let f = |x| self.density(x).expect("truncated normal has a density");
                let lower = f(0.0).min(f(1.0));
                let upper = f(mu.clamp(0.0, 1.0));
                PolyBoundParams::new(lower, upper, 1.0)
            }
            other => Err(Error::NoPolyBound(other.to_string())),
        }
    }

    /// Smallest `t` with `Pr[u >= t] <= p`, found by bisection on the tail.
    pub fn upper_quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tail probability must lie in (0, 1), got {p}"
            )));
        }
        // Tail is nondecreasing in alpha; find the largest alpha with tail <= p.
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= 0.0 || mid == lo || mid == hi {
                break;
            }
            if self.tail_prob(mid)? <= p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(1.0 - lo)
    }
}

fn validate_table(points: &[(f64, f64)]) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidDistribution(msg));
    let Some(last) = points.last() else {
        return bad("table has no points".into());
    };
    for (k, &(v, c)) in points.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return bad(format!("table value {v} at position {k} outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&c) {
            return bad(format!(
                "cumulative probability {c} at position {k} outside [0, 1]"
            ));
        }
        if k > 0 {
            let (pv, pc) = points[k - 1];
            if v < pv {
                return bad(format!("table values not sorted at position {k}"));
            }
            if c < pc {
                return bad(format!("cumulative probabilities decrease at position {k}"));
            }
        }
    }
    if (last.1 - 1.0).abs() > TABLE_END_TOL {
        return bad(format!(
            "cumulative probabilities end at {} instead of 1",
            last.1
        ));
    }
    Ok(())
}

/// Draws one value.
pub fn sample(spec: &DistributionSpec, rng: &mut DrawStream) -> Result<f64> {
    Ok(spec.sampler()?.sample(rng))
}

/// Checks the claimed polynomial bound at each grid point.
pub fn verify_poly_bound(
    spec: &DistributionSpec,
    params: &PolyBoundParams,
    alpha_grid: &[f64],
) -> Result<Vec<PolyBoundCheck>> {
    alpha_grid
        .iter()
        .map(|&alpha| {
            let tail = spec.tail_prob(alpha)?;
            let scale = alpha.powf(params.q);
            Ok(PolyBoundCheck {
                alpha,
                tail,
                lower_ok: tail >= params.theta_lower * scale,
                upper_ok: tail <= params.theta_upper * scale,
            })
        })
        .collect()
}

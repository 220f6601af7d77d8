//! Logit-scale Wald intervals and the interval score.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::direct::DomainEstimate;
use crate::error::{Result, SaeError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformedEstimate {
    pub theta: f64,
    pub var_theta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.lower <= truth && truth <= self.upper
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Upper `(1 - level) / 2` standard normal quantile.
pub fn z_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(SaeError::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let std = Normal::standard();
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

/// Delta-method transform of a prevalence and its variance.
pub fn logit_transform_parts(p_hat: f64, variance: f64) -> Result<TransformedEstimate> {
    if !(p_hat > 0.0 && p_hat < 1.0) {
        return Err(SaeError::BoundaryEstimate(p_hat));
    }
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(SaeError::InvalidArgument(format!("variance must be finite and nonnegative, got {variance}")));
    }
    let d = p_hat * (1.0 - p_hat);
    Ok(TransformedEstimate {
        theta: logit(p_hat),
        var_theta: variance / (d * d),
    })
}

/// Delta-method transform of a domain estimate. Illegal estimates carry
/// variance zero.
pub fn logit_transform(est: &DomainEstimate) -> Result<TransformedEstimate> {
    let p = est.p_hat.ok_or_else(|| {
        SaeError::InvalidArgument(format!("domain `{}` has no estimate", est.domain_id))
    })?;
    let var = match est.variance {
        Some(v) => v,
        None if est.legality.is_illegal() => 0.0,
        None => {
            return Err(SaeError::InvalidArgument(format!(
                "domain `{}` has no variance",
                est.domain_id
            )))
        }
    };
    logit_transform_parts(p, var)
}

pub fn wald_interval(t: &TransformedEstimate, level: f64) -> Result<Interval> {
    let z = z_value(level)?;
    let half = z * t.var_theta.sqrt();
    Ok(Interval {
        lower: expit(t.theta - half),
        upper: expit(t.theta + half),
        level,
    })
}

/// Interval for a domain estimate, with the zero-width convention at `p̂`
/// when the variance is zero or undefined (including boundary estimates).
pub fn interval_for(est: &DomainEstimate, level: f64) -> Result<Option<Interval>> {
    z_value(level)?;
    let Some(p) = est.p_hat else {
        return Ok(None);
    };
    match est.variance {
        Some(v) if v > 0.0 => wald_interval(&logit_transform_parts(p, v)?, level).map(Some),
        _ => Ok(Some(Interval {
            lower: p,
            upper: p,
            level,
        })),
    }
}

pub const DEFAULT_SCORE_ALPHA: f64 = 0.2;

pub fn interval_score(iv: &Interval, truth: f64, alpha: f64) -> f64 {
    let over = (truth - iv.upper).max(0.0);
    let under = (iv.lower - truth).max(0.0);
    iv.width() + 2.0 / alpha * (over + under)
}

//! Closed-form coefficient transforms for the edges dissolution approximation,
//! the two-state dyad chain, and the error analysis of the old and new
//! sparse approximations.
//!
//! Extended reals are first class here: `theta_minus = -inf` means every edge
//! dissolves each step and `theta_plus = +inf` means every free dyad forms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse logit, with `+inf -> 1` and `-inf -> 0`.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Which transform turns an ergm linear predictor into formation/dissolution predictors.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Subtract `log(D - 1)`.
    Old,
    /// Subtract `log(D)`; the sparse limit of the exact transform.
    New,
    /// Match edge probability and duration exactly (dyad-independent models only).
    Exact,
}

impl Variant {
    /// Offset added to the ergm linear predictor to get the formation predictor.
    /// Only defined for `Old` and `New`, whose offsets do not depend on theta.
    pub fn formation_offset(self, duration: f64) -> Option<f64> {
        match self {
            Variant::Old => Some(-(duration - 1.0).ln()),
            Variant::New => Some(-duration.ln()),
            Variant::Exact => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Old => "old",
            Variant::New => "new",
            Variant::Exact => "exact",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "old" => Ok(Variant::Old),
            "new" => Ok(Variant::New),
            "exact" => Ok(Variant::Exact),
            other => Err(Error::Parse(format!("unknown variant {other:?}"))),
        }
    }
}

/// Formation and dissolution linear predictors for one dyad.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPair {
    pub theta_plus: f64,
    pub theta_minus: f64,
}

impl CoefficientPair {
    /// Per-step formation probability of an empty dyad.
    pub fn formation_prob(&self) -> f64 {
        expit(self.theta_plus)
    }

    /// Per-step survival probability of an edge, `1 - 1/D`.
    pub fn survival_prob(&self) -> f64 {
        expit(self.theta_minus)
    }
}

/// Cross-sectional and durational targets for one dyad.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct DyadTargets {
    pub p: f64,
    pub theta: f64,
    pub duration: f64,
}

impl DyadTargets {
    pub fn new(p: f64, duration: f64) -> Result<Self> {
        check_prob_open(p)?;
        check_duration(duration)?;
        Ok(DyadTargets {
            p,
            theta: logit(p),
            duration,
        })
    }
}

fn check_duration(d: f64) -> Result<()> {
    if d.is_finite() && d >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "mean duration must be finite and at least 1, got {d}"
        )))
    }
}

fn check_prob_open(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "edge probability must lie in (0, 1), got {p}"
        )))
    }
}

/// `theta_minus = log(D - 1)`, with `log 0 = -inf`.
fn dissolution_predictor(duration: f64) -> f64 {
    (duration - 1.0).ln()
}

pub fn transform_old(theta: f64, duration: f64) -> Result<CoefficientPair> {
    check_duration(duration)?;
    let tm = dissolution_predictor(duration);
    Ok(CoefficientPair {
        theta_plus: theta - tm,
        theta_minus: tm,
    })
}

pub fn transform_new(theta: f64, duration: f64) -> Result<CoefficientPair> {
    check_duration(duration)?;
    Ok(CoefficientPair {
        theta_plus: theta - duration.ln(),
        theta_minus: dissolution_predictor(duration),
    })
}

/// Exact matching of edge probability `logit^-1(theta)` and mean duration `D`.
/// Fails when `D < exp(theta)`; at equality the formation predictor is `+inf`.
pub fn transform_exact(theta: f64, duration: f64) -> Result<CoefficientPair> {
    check_duration(duration)?;
    let odds = theta.exp();
    let slack = duration - odds;
    let theta_plus = if slack.abs() <= 1e-14 * duration {
        f64::INFINITY
    } else if slack < 0.0 {
        return Err(Error::ConsistencyViolation {
            theta,
            duration,
            ratio: odds / duration,
        });
    } else {
        theta - slack.ln()
    };
    Ok(CoefficientPair {
        theta_plus,
        theta_minus: dissolution_predictor(duration),
    })
}

pub fn transform(variant: Variant, theta: f64, duration: f64) -> Result<CoefficientPair> {
    match variant {
        Variant::Old => transform_old(theta, duration),
        Variant::New => transform_new(theta, duration),
        Variant::Exact => transform_exact(theta, duration),
    }
}

/// Formation probability `q = p / ((1 - p) D)` giving equilibrium edge probability `p`.
pub fn formation_prob(p: f64, duration: f64) -> Result<f64> {
    check_prob_open(p)?;
    check_duration(duration)?;
    let q = p / ((1.0 - p) * duration);
    if q > 1.0 + 1e-14 {
        return Err(Error::ConsistencyViolation {
            theta: logit(p),
            duration,
            ratio: q,
        });
    }
    Ok(q.min(1.0))
}

/// Stationary edge probability `qD / (qD + 1)` of the two-state dyad chain.
pub fn equilibrium_edge_prob(q: f64, duration: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "formation probability must lie in [0, 1], got {q}"
        )));
    }
    check_duration(duration)?;
    let qd = q * duration;
    Ok(qd / (qd + 1.0))
}

/// The equilibrium edge probability actually attained when the given
/// sparse approximation is used for a dyad with target `p`.
pub fn approx_equilibrium(p: f64, duration: f64, variant: Variant) -> Result<f64> {
    check_prob_open(p)?;
    check_duration(duration)?;
    let alpha = match variant {
        Variant::Old => 1.0,
        Variant::New => 0.0,
        Variant::Exact => return Ok(p),
    };
    Ok(p * duration / (duration + p + alpha * (p - 1.0)))
}

/// Relative error `(p_variant - p) / p` in closed form.
pub fn relative_error(p: f64, duration: f64, variant: Variant) -> Result<f64> {
    check_prob_open(p)?;
    check_duration(duration)?;
    Ok(match variant {
        Variant::Old => (1.0 - 2.0 * p) / (duration + 2.0 * p - 1.0),
        Variant::New => -p / (duration + p),
        Variant::Exact => 0.0,
    })
}

/// Edge probability below which the new approximation has the smaller error.
///
/// This is the upper root of `4p^2 - p(2 - 3D) - D`, written as
/// `2D / (sqrt(4 + 4D + 9D^2) + 3D - 2)` to avoid cancellation at large `D`.
pub fn crossover_threshold(duration: f64) -> Result<f64> {
    if !(duration >= 1.0) || duration.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "mean duration must be at least 1, got {duration}"
        )));
    }
    if duration.is_infinite() {
        return Ok(1.0 / 3.0);
    }
    let d = duration;
    Ok(2.0 * d / ((4.0 + 4.0 * d + 9.0 * d * d).sqrt() + 3.0 * d - 2.0))
}

pub fn new_beats_old(p: f64, duration: f64) -> Result<bool> {
    check_prob_open(p)?;
    Ok(p < crossover_threshold(duration)?)
}

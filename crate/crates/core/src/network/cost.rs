use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BPR_ALPHA: f64 = 0.15;
pub const BPR_BETA: f64 = 4.0;

/// Link performance function mapping a flow (vehicles) to a travel time (minutes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CostFunction {
    /// `t0 * (1 + alpha * (x / capacity)^beta)`.
    Bpr {
        free_flow: f64,
        capacity: f64,
        alpha: f64,
        beta: f64,
    },
    /// `a + b * x`.
    Affine { a: f64, b: f64 },
}

#[inline]
fn pow_ratio(r: f64, beta: f64) -> f64 {
    if beta.fract() == 0.0 && (1.0..=16.0).contains(&beta) {
        r.powi(beta as i32)
    } else {
        r.powf(beta)
    }
}

fn check_flow(x: f64) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        Err(Error::Domain(format!(
            "link flow must be nonnegative, got {x}"
        )))
    } else {
        Ok(())
    }
}

impl CostFunction {
    /// BPR with the standard 0.15 / 4 shape parameters.
    pub fn bpr(free_flow: f64, capacity: f64) -> Self {
        CostFunction::Bpr {
            free_flow,
            capacity,
            alpha: BPR_ALPHA,
            beta: BPR_BETA,
        }
    }

    pub fn affine(a: f64, b: f64) -> Self {
        CostFunction::Affine { a, b }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CostFunction::Bpr {
                free_flow,
                capacity,
                alpha,
                beta,
            } => {
                free_flow.is_finite()
                    && free_flow > 0.0
                    && capacity.is_finite()
                    && capacity > 0.0
                    && alpha.is_finite()
                    && alpha >= 0.0
                    && beta.is_finite()
                    && beta >= 1.0
            }
            CostFunction::Affine { a, b } => a.is_finite() && a >= 0.0 && b.is_finite() && b >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "inadmissible cost function parameters: {self:?}"
            )))
        }
    }

    /// Travel time at flow `x`, without the domain check.
    #[inline]
    pub fn time(&self, x: f64) -> f64 {
        match *self {
            CostFunction::Bpr {
                free_flow,
                capacity,
                alpha,
                beta,
            } => free_flow * (1.0 + alpha * pow_ratio(x / capacity, beta)),
            CostFunction::Affine { a, b } => a + b * x,
        }
    }

    /// `c(x) + x * c'(x)`, without the domain check.
    #[inline]
    pub fn marginal(&self, x: f64) -> f64 {
        match *self {
            CostFunction::Bpr {
                free_flow,
                capacity,
                alpha,
                beta,
            } => free_flow * (1.0 + alpha * (1.0 + beta) * pow_ratio(x / capacity, beta)),
            CostFunction::Affine { a, b } => a + 2.0 * b * x,
        }
    }

    /// `∫_0^x c(s) ds`, the Beckmann contribution of one link.
    #[inline]
    pub fn integral(&self, x: f64) -> f64 {
        match *self {
            CostFunction::Bpr {
                free_flow,
                capacity,
                alpha,
                beta,
            } => {
                free_flow
                    * (x + alpha * capacity / (beta + 1.0) * pow_ratio(x / capacity, beta + 1.0))
            }
            CostFunction::Affine { a, b } => a * x + 0.5 * b * x * x,
        }
    }

    pub fn free_flow_time(&self) -> f64 {
        self.time(0.0)
    }

    /// Capacity used for volume normalisation; affine links have none.
    pub fn capacity(&self) -> Option<f64> {
        match *self {
            CostFunction::Bpr { capacity, .. } => Some(capacity),
            CostFunction::Affine { .. } => None,
        }
    }
}

/// Travel time of a link at flow `x`.
pub fn link_time(cost_fn: &CostFunction, x: f64) -> Result<f64> {
    check_flow(x)?;
    Ok(cost_fn.time(x))
}

/// Marginal (externality-inclusive) travel time `c(x) + x c'(x)`.
pub fn marginal_link_time(cost_fn: &CostFunction, x: f64) -> Result<f64> {
    check_flow(x)?;
    Ok(cost_fn.marginal(x))
}

//! The three supported losses — squared, Huber and logistic — together with
//! their derivatives, the local strong-convexity profile `rho`, and the
//! noise-calibrated Huber parameter.
//!
//! All three are even, convex, vanish at zero, and are twice differentiable
//! everywhere except the Huber kink at `±gamma`. The logistic loss is
//! evaluated through a softplus reformulation so it stays finite for any
//! representable argument.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which loss to use. Huber carries its kink parameter `gamma` (in units of
/// the response variable).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    Squared,
    Huber { gamma: f64 },
    Logistic,
}

/// log(1 + e^t) without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// 1/(1 + e^{-t}) without overflow.
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

const LN4: f64 = 1.3862943611198906; // ln 4

impl LossSpec {
    pub fn huber(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!(
                "huber gamma must be a positive finite real, got {gamma}"
            )));
        }
        Ok(LossSpec::Huber { gamma })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LossSpec::Squared => "squared",
            LossSpec::Huber { .. } => "huber",
            LossSpec::Logistic => "logistic",
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            LossSpec::Huber { gamma } => Some(*gamma),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LossSpec::Huber { gamma } = self {
            if !(*gamma > 0.0) || !gamma.is_finite() {
                return Err(Error::config(format!(
                    "loss.gamma must be a positive finite real, got {gamma}"
                )));
            }
        }
        Ok(())
    }

    fn check_finite(&self, op: &'static str, t: f64) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::NonFinite { op, value: t });
        }
        Ok(())
    }

    /// Loss value at `t`.
    pub fn value(&self, t: f64) -> Result<f64> {
        self.check_finite("loss_value", t)?;
        Ok(match self {
            LossSpec::Squared => t * t,
            LossSpec::Huber { gamma } => {
                let a = t.abs();
                if a <= *gamma {
                    0.5 * t * t
                } else {
                    gamma * a - 0.5 * gamma * gamma
                }
            }
            // -log(4 e^t / (1+e^t)^2) = -ln4 - t + 2 softplus(t)
            LossSpec::Logistic => -LN4 - t + 2.0 * softplus(t),
        })
    }

    /// First derivative at `t`. For Huber the kink uses the clamp value
    /// `gamma * sign(t)`, consistent with convexity.
    pub fn deriv(&self, t: f64) -> Result<f64> {
        self.check_finite("loss_deriv", t)?;
        Ok(match self {
            LossSpec::Squared => 2.0 * t,
            LossSpec::Huber { gamma } => t.clamp(-*gamma, *gamma),
            // 1 - 2/(e^t + 1) = tanh(t/2)
            LossSpec::Logistic => (0.5 * t).tanh(),
        })
    }

    /// Second derivative at `t`. The Huber value at the kink `|t| = gamma`
    /// is 0, the conservative side of the infimum.
    pub fn second_deriv(&self, t: f64) -> Result<f64> {
        self.check_finite("loss_second_deriv", t)?;
        Ok(match self {
            LossSpec::Squared => 2.0,
            LossSpec::Huber { gamma } => {
                if t.abs() < *gamma {
                    1.0
                } else {
                    0.0
                }
            }
            // 2 e^t / (1+e^t)^2 = 1/(2 cosh^2(t/2))
            LossSpec::Logistic => {
                let c = (0.5 * t).cosh();
                0.5 / (c * c)
            }
        })
    }

    /// Infimum of the second derivative over `[t1, t2] ⊂ [0, ∞)`, kinks
    /// excluded. Computed analytically: each supported loss has a second
    /// derivative that is constant or monotone on the positive half-line.
    pub fn rho(&self, t1: f64, t2: f64) -> Result<f64> {
        if !t1.is_finite() || !t2.is_finite() || t1 < 0.0 || t1 > t2 {
            return Err(Error::invalid(format!(
                "rho requires 0 <= t1 <= t2 finite, got ({t1}, {t2})"
            )));
        }
        Ok(match self {
            LossSpec::Squared => 2.0,
            LossSpec::Huber { gamma } => {
                if t2 < *gamma {
                    1.0
                } else {
                    0.0
                }
            }
            LossSpec::Logistic => self.second_deriv(t2)?,
        })
    }

    /// Global upper bound on the second derivative, used as the smoothness
    /// constant of the gradient.
    pub fn sup_second_deriv(&self) -> f64 {
        match self {
            LossSpec::Squared => 2.0,
            LossSpec::Huber { .. } => 1.0,
            LossSpec::Logistic => 0.5,
        }
    }
}

/// Huber parameter calibrated to the noise level and the intrinsic radius:
/// `gamma = c0 * max(sigma_estimate, r_q)`.
///
/// The loss is then strongly convex exactly where typical residuals live and
/// grows linearly beyond, which is what neutralizes heavy-tailed outliers.
pub fn calibrate_huber(sigma_estimate: f64, r_q: f64, c0: f64) -> Result<LossSpec> {
    if !(c0 > 0.0) || !c0.is_finite() {
        return Err(Error::invalid(format!("c0 must be positive, got {c0}")));
    }
    if !(sigma_estimate >= 0.0) || !(r_q >= 0.0) || !sigma_estimate.is_finite() || !r_q.is_finite()
    {
        return Err(Error::invalid(format!(
            "calibrate_huber needs nonnegative finite inputs, got sigma={sigma_estimate}, r_q={r_q}"
        )));
    }
    let scale = sigma_estimate.max(r_q);
    if scale == 0.0 {
        return Err(Error::Calibration(
            "both the noise estimate and the intrinsic radius are zero; \
             the Huber parameter is undefined in the noise-free, zero-complexity case"
                .to_string(),
        ));
    }
    LossSpec::huber(c0 * scale)
}

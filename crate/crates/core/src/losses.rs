//! Smooth, convex, nonnegative losses of a scalar decision value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `(a - b)^2 / 2`.
    Squared,
    /// `log(1 + exp(-b a))` with `b` in `{-1, +1}`.
    Logistic,
}

/// A loss together with its curvature constants in the decision value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Upper bound on the second derivative.
    pub beta: f64,
    /// Lower bound on the second derivative, valid for `|a| <= decision_bound`.
    pub sigma: f64,
    pub decision_bound: Option<f64>,
}

impl LossSpec {
    pub fn squared() -> Self {
        Self {
            kind: LossKind::Squared,
            beta: 1.0,
            sigma: 1.0,
            decision_bound: None,
        }
    }

    /// Logistic loss whose strong convexity is certified on `|a| <= bound`.
    ///
    /// An infinite bound leaves `sigma = 0`.
    pub fn logistic(decision_bound: f64) -> Result<Self> {
        if !(decision_bound > 0.0) {
            return Err(Error::InvalidInput(format!(
                "decision bound must be positive, got {decision_bound}"
            )));
        }
        let sigma = if decision_bound.is_finite() {
            sigmoid(decision_bound) * sigmoid(-decision_bound)
        } else {
            0.0
        };
        Ok(Self {
            kind: LossKind::Logistic,
            beta: 0.25,
            sigma,
            decision_bound: decision_bound.is_finite().then_some(decision_bound),
        })
    }

    /// Builds a spec for `kind`; `decision_bound` is only used by the logistic loss.
    pub fn for_kind(kind: LossKind, decision_bound: f64) -> Result<Self> {
        match kind {
            LossKind::Squared => Ok(Self::squared()),
            LossKind::Logistic => Self::logistic(decision_bound),
        }
    }
}

/// Numerically stable `1 / (1 + exp(-t))`.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(1 + exp(t))`.
pub fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t + (-t).exp()
    } else if t < -30.0 {
        t.exp()
    } else {
        t.exp().ln_1p()
    }
}

fn check_target(spec: &LossSpec, b: f64) -> Result<()> {
    if spec.kind == LossKind::Logistic && b != 1.0 && b != -1.0 {
        return Err(Error::InvalidTarget(b));
    }
    Ok(())
}

pub fn loss_value(spec: &LossSpec, a: f64, b: f64) -> Result<f64> {
    check_target(spec, b)?;
    Ok(match spec.kind {
        LossKind::Squared => 0.5 * (a - b) * (a - b),
        LossKind::Logistic => softplus(-b * a),
    })
}

/// Derivative of the loss in its first argument.
pub fn loss_derivative(spec: &LossSpec, a: f64, b: f64) -> Result<f64> {
    check_target(spec, b)?;
    Ok(match spec.kind {
        LossKind::Squared => a - b,
        LossKind::Logistic => -b * sigmoid(-b * a),
    })
}

/// Second derivative of the loss in its first argument.
pub fn loss_curvature(spec: &LossSpec, a: f64, b: f64) -> Result<f64> {
    check_target(spec, b)?;
    Ok(match spec.kind {
        LossKind::Squared => 1.0,
        LossKind::Logistic => sigmoid(a) * sigmoid(-a),
    })
}

/// `2 beta l(a, b) - l'(a, b)^2`, nonnegative for a `beta`-smooth nonnegative loss.
pub fn self_boundedness_gap(spec: &LossSpec, a: f64, b: f64) -> Result<f64> {
    let value = loss_value(spec, a, b)?;
    let slope = loss_derivative(spec, a, b)?;
    Ok(2.0 * spec.beta * value - slope * slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic() -> LossSpec {
        LossSpec::logistic(f64::INFINITY).unwrap()
    }

    #[test]
    fn squared_examples() {
        let sq = LossSpec::squared();
        assert_eq!(loss_value(&sq, 3.0, 1.0).unwrap(), 2.0);
        assert_eq!(loss_derivative(&sq, 3.0, 1.0).unwrap(), 2.0);
        assert_eq!(loss_value(&sq, -1.25, -1.25).unwrap(), 0.0);
        for (a, b) in [(3.0, 1.0), (-2.5, 0.25), (0.0, 7.0)] {
            assert_eq!(self_boundedness_gap(&sq, a, b).unwrap(), 0.0);
        }
    }

    #[test]
    fn logistic_examples() {
        let lg = logistic();
        assert!((loss_value(&lg, 0.0, 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(loss_derivative(&lg, 0.0, 1.0).unwrap(), -0.5);
        let d10 = loss_derivative(&lg, 10.0, 1.0).unwrap();
        // centered finite difference oracle
        let h = 1e-6;
        let fd = (loss_value(&lg, 10.0 + h, 1.0).unwrap()
            - loss_value(&lg, 10.0 - h, 1.0).unwrap())
            / (2.0 * h);
        assert!((d10 - fd).abs() <= 1e-6 * fd.abs());
        assert!((d10 + 4.5397868702434395e-5).abs() < 1e-15);
    }

    #[test]
    fn logistic_gap_examples() {
        let lg = logistic();
        let g0 = self_boundedness_gap(&lg, 0.0, 1.0).unwrap();
        assert!((g0 - (0.5 * std::f64::consts::LN_2 - 0.25)).abs() < 1e-15);
        assert!((g0 - 0.09657).abs() < 1e-5);
        let g = self_boundedness_gap(&lg, -50.0, 1.0).unwrap();
        assert!((g - 24.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_is_stable_in_the_tails() {
        let lg = logistic();
        assert_eq!(loss_value(&lg, -800.0, 1.0).unwrap(), 800.0);
        assert!(loss_value(&lg, 800.0, 1.0).unwrap() >= 0.0);
        assert_eq!(loss_derivative(&lg, -800.0, 1.0).unwrap(), -1.0);
    }

    #[test]
    fn logistic_rejects_non_binary_targets() {
        let lg = logistic();
        assert!(matches!(
            loss_value(&lg, 0.0, 0.5),
            Err(Error::InvalidTarget(_))
        ));
        assert!(matches!(
            loss_derivative(&lg, 0.0, 0.0),
            Err(Error::InvalidTarget(_))
        ));
    }

    #[test]
    fn logistic_sigma_is_endpoint_curvature() {
        let lg = LossSpec::logistic(2.0).unwrap();
        let e = (-2.0f64).exp();
        assert!((lg.sigma - e / (1.0 + e).powi(2)).abs() < 1e-16);
        assert!(lg.beta >= lg.sigma);
        assert!(LossSpec::logistic(0.0).is_err());
    }
}

//! Confidence gates that route between the AI models and the oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    /// Ensemble variance `σ̂²`; accept when below τ.
    Prediction,
    /// Match probability; accept when above τ.
    Generation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    AcceptAi,
    FallbackOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub kind: GateKind,
    pub confidence: f64,
    pub threshold: f64,
    pub route: Route,
}

/// Strict comparison in both directions; ties and NaN go to the oracle.
pub fn decide(kind: GateKind, confidence: f64, threshold: f64) -> RouteDecision {
    let accept = match kind {
        GateKind::Prediction => confidence < threshold,
        GateKind::Generation => confidence > threshold,
    };
    let route = if accept { Route::AcceptAi } else { Route::FallbackOracle };
    RouteDecision { kind, confidence, threshold, route }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    pub error_bound: f64,
    /// Validation points whose variance falls below `tau`.
    pub accepted: usize,
    pub total: usize,
    /// Mean absolute error over the accepted points (0 if none).
    pub accepted_mae: f64,
}

/// Picks the largest variance threshold τ for which the validation points
/// with `σ̂² < τ` have mean absolute error at most `error_bound`.
///
/// Cuts are only placed between distinct variances, halfway between them.
/// When every point qualifies τ sits just above the largest variance; when
/// none does τ equals the smallest variance, so nothing is accepted.
pub fn calibrate_tau(variances: &[f64], abs_errors: &[f64], error_bound: f64) -> Result<Calibration> {
    if variances.len() != abs_errors.len() || variances.is_empty() {
        return Err(Error::usage("calibration needs matching, non-empty variance and error lists"));
    }
    if variances.iter().chain(abs_errors).any(|v| !v.is_finite() || *v < 0.0) || !(error_bound > 0.0) {
        return Err(Error::usage("calibration inputs must be finite and non-negative"));
    }
    let mut pairs: Vec<(f64, f64)> = variances.iter().copied().zip(abs_errors.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();
    let mut best = (0usize, 0.0);
    let mut sum = 0.0;
    for k in 1..=n {
        sum += pairs[k - 1].1;
        let at_cut = k == n || pairs[k].0 > pairs[k - 1].0;
        if at_cut && sum / k as f64 <= error_bound {
            best = (k, sum / k as f64);
        }
    }
    let (accepted, accepted_mae) = best;
    let tau = if accepted == 0 {
        pairs[0].0
    } else if accepted == n {
        let top = pairs[n - 1].0;
        top + top.abs().max(1e-12) * 1e-6
    } else {
        0.5 * (pairs[accepted - 1].0 + pairs[accepted].0)
    };
    Ok(Calibration { tau, error_bound, accepted, total: n, accepted_mae })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decide_examples() {
        assert_eq!(decide(GateKind::Prediction, 0.0, 1e-6).route, Route::AcceptAi);
        assert_eq!(decide(GateKind::Prediction, 0.5, 0.5).route, Route::FallbackOracle);
        assert_eq!(decide(GateKind::Generation, 0.9, 0.9).route, Route::FallbackOracle);
        assert_eq!(decide(GateKind::Generation, 0.95, 0.9).route, Route::AcceptAi);
        assert_eq!(decide(GateKind::Prediction, f64::NAN, 1.0).route, Route::FallbackOracle);
        assert_eq!(decide(GateKind::Prediction, 1e9, f64::INFINITY).route, Route::AcceptAi);
    }

    #[test]
    fn calibration_respects_bound() {
        let var = [0.01, 0.02, 0.02, 0.05, 0.3, 0.9];
        let err = [0.05, 0.1, 0.15, 0.1, 0.6, 0.2];
        let c = calibrate_tau(&var, &err, 0.12).unwrap();
        // prefix of four has mean 0.1; prefix of five exceeds the bound
        assert_eq!(c.accepted, 4);
        assert!((c.tau - 0.175).abs() < 1e-15);
        assert!((c.accepted_mae - 0.1).abs() < 1e-15);
        let none = calibrate_tau(&[0.1, 0.2], &[1.0, 1.0], 0.12).unwrap();
        assert_eq!((none.accepted, none.tau), (0, 0.1));
        let all = calibrate_tau(&[0.1, 0.2], &[0.0, 0.0], 0.12).unwrap();
        assert_eq!(all.accepted, 2);
        assert!(all.tau > 0.2);
    }
}

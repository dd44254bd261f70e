//! Target-rate λ switch for rate-constrained training.
//!
//! The rate weight is `lambda_alpha` once the measured rate reaches the
//! target and `lambda_beta` below it; the training objective is
//! `distortion + lambda(rate) * rate`. The switch is memoryless.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("{name} must be finite and >= 0, got {value}")]
    BadLambda { name: &'static str, value: f64 },
    #[error("target_rate must be finite and > 0, got {0}")]
    BadTarget(f64),
    #[error("rate trace is empty")]
    EmptyTrace,
    #[error("rate at step {step} must be finite and >= 0, got {value}")]
    BadRate { step: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControllerConfig {
    pub lambda_alpha: f64,
    pub lambda_beta: f64,
    pub target_rate: f64,
}

impl ControllerConfig {
    pub fn new(
        lambda_alpha: f64,
        lambda_beta: f64,
        target_rate: f64,
    ) -> Result<Self, ControllerError> {
        for (name, value) in [("lambda_alpha", lambda_alpha), ("lambda_beta", lambda_beta)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ControllerError::BadLambda { name, value });
            }
        }
        if !(target_rate.is_finite() && target_rate > 0.0) {
            return Err(ControllerError::BadTarget(target_rate));
        }
        Ok(Self {
            lambda_alpha,
            lambda_beta,
            target_rate,
        })
    }

    /// Non-fatal configuration warnings. Over-target rates are expected to be
    /// penalised harder, i.e. `lambda_alpha > lambda_beta`.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.lambda_alpha <= self.lambda_beta {
            out.push(format!(
                "lambda_alpha ({}) <= lambda_beta ({}): rates above the target are not penalised harder",
                self.lambda_alpha, self.lambda_beta
            ));
        }
        out
    }
}

/// `lambda_alpha` when `rate >= target_rate`, else `lambda_beta`.
pub fn multiplex_lambda(rate: f64, cfg: &ControllerConfig) -> f64 {
    if rate >= cfg.target_rate {
        cfg.lambda_alpha
    } else {
        cfg.lambda_beta
    }
}

/// `distortion + multiplex_lambda(rate) * rate`.
pub fn total_loss(distortion: f64, rate: f64, cfg: &ControllerConfig) -> f64 {
    distortion + multiplex_lambda(rate, cfg) * rate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControllerStep {
    pub step: usize,
    pub rate: f64,
    pub lambda: f64,
    /// Objective with unit distortion: `1 + lambda * rate`.
    pub total_loss: f64,
}

/// Applies the switch to each measured rate of a training trace.
pub fn simulate_controller(
    trace: &[f64],
    cfg: &ControllerConfig,
) -> Result<Vec<ControllerStep>, ControllerError> {
    if trace.is_empty() {
        return Err(ControllerError::EmptyTrace);
    }
    trace
        .iter()
        .enumerate()
        .map(|(step, &rate)| {
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(ControllerError::BadRate { step, value: rate });
            }
            Ok(ControllerStep {
                step,
                rate,
                lambda: multiplex_lambda(rate, cfg),
                total_loss: total_loss(1.0, rate, cfg),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(a: f64, b: f64, t: f64) -> ControllerConfig {
        ControllerConfig::new(a, b, t).unwrap()
    }

    #[test]
    fn boundary_goes_to_alpha() {
        let c = cfg(2.0, 0.2, 0.15);
        assert_eq!(multiplex_lambda(0.15, &c), 2.0);
        assert_eq!(multiplex_lambda(0.15 - 1e-9, &c), 0.2);
        assert_eq!(multiplex_lambda(0.0, &c), 0.2);
    }

    #[test]
    fn total_loss_examples() {
        let c = cfg(2.0, 0.2, 0.15);
        assert_eq!(total_loss(1.0, 0.0, &c), 1.0);
        assert!((total_loss(0.0, 0.15, &c) - 0.30).abs() < 1e-15);
        assert!((total_loss(0.5, 0.1, &c) - 0.52).abs() < 1e-15);
    }

    #[test]
    fn trace_switching() {
        let c = cfg(2.0, 0.2, 0.15);
        let above = simulate_controller(&[0.2, 0.3, 0.16], &c).unwrap();
        assert!(above.iter().all(|s| s.lambda == 2.0));
        let crossing = simulate_controller(&[0.3, 0.2, 0.1, 0.05], &c).unwrap();
        let switches = crossing
            .windows(2)
            .filter(|w| w[0].lambda != w[1].lambda)
            .count();
        assert_eq!(switches, 1);
        assert_eq!(crossing[3].step, 3);
        assert!((crossing[0].total_loss - 1.6).abs() < 1e-15);
    }

    #[test]
    fn config_checks() {
        assert!(cfg(2.0, 0.2, 0.15).warnings().is_empty());
        assert_eq!(cfg(0.2, 0.2, 0.15).warnings().len(), 1);
        assert_eq!(
            ControllerConfig::new(1.0, 1.0, 0.0),
            Err(ControllerError::BadTarget(0.0))
        );
        assert!(ControllerConfig::new(-1.0, 1.0, 0.1).is_err());
        assert_eq!(
            simulate_controller(&[], &cfg(1.0, 0.5, 0.1)),
            Err(ControllerError::EmptyTrace)
        );
        assert!(simulate_controller(&[0.1, -0.1], &cfg(1.0, 0.5, 0.1)).is_err());
    }
}

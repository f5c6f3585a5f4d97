//! Hard and soft switching between objective and constraint subgradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ModelVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SwitchMode {
    Hard { epsilon: f64 },
    Soft { epsilon: f64, beta: f64 },
}

impl SwitchMode {
    pub fn hard(epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(SwitchMode::Hard { epsilon })
    }

    pub fn soft(epsilon: f64, beta: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "soft-switch beta {beta} must be finite and positive"
            )));
        }
        Ok(SwitchMode::Soft { epsilon, beta })
    }

    pub fn epsilon(&self) -> f64 {
        match *self {
            SwitchMode::Hard { epsilon } | SwitchMode::Soft { epsilon, .. } => epsilon,
        }
    }

    pub fn is_soft(&self) -> bool {
        matches!(self, SwitchMode::Soft { .. })
    }

    /// Membership of a round in the feasible set A. Hard mode uses
    /// `g_hat <= eps`; the soft-mode guarantee is stated with a strict
    /// inequality.
    pub fn in_feasible_set(&self, g_hat: f64) -> bool {
        match *self {
            SwitchMode::Hard { epsilon } => g_hat <= epsilon,
            SwitchMode::Soft { epsilon, .. } => g_hat < epsilon,
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "epsilon {epsilon} must be finite and >= 0"
        )));
    }
    Ok(())
}

/// Trimmed hinge `min(1, max(0, 1 + beta x))`.
pub fn sigma_beta(x: f64, beta: f64) -> f64 {
    (1.0 + beta * x).clamp(0.0, 1.0)
}

/// Weight placed on the constraint subgradient for this round.
pub fn switch_weight(mode: SwitchMode, g_hat: f64) -> f64 {
    match mode {
        SwitchMode::Hard { epsilon } => {
            if g_hat > epsilon {
                1.0
            } else {
                0.0
            }
        }
        SwitchMode::Soft { epsilon, beta } => sigma_beta(g_hat - epsilon, beta),
    }
}

/// `(1 - weight) grad_f + weight grad_g`; the endpoints return the input
/// vector unchanged.
pub fn blended_subgrad(weight: f64, grad_f: &ModelVector, grad_g: &ModelVector) -> Result<ModelVector> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::InvalidWeight(weight));
    }
    if grad_f.dim() != grad_g.dim() {
        return Err(Error::DimensionMismatch {
            expected: grad_f.dim(),
            found: grad_g.dim(),
        });
    }
    if weight == 0.0 {
        return Ok(grad_f.clone());
    }
    if weight == 1.0 {
        return Ok(grad_g.clone());
    }
    grad_f.scaled(1.0 - weight)?.axpy(weight, grad_g)
}

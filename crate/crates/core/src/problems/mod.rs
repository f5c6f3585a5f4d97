//! Client objective/constraint oracles and the federated problems built
//! from them.

mod dataset;
mod linear_ball;
mod logistic;
mod np;

use std::fmt;

use rand::RngCore;
use serde::Serialize;

pub use dataset::{load_csv, standardize_columns, synthetic_np_dataset, LabeledDataset, SyntheticSpec};
pub use linear_ball::{build_synthetic_linear_ball, LinearBallClient, LinearBallSpec};
pub use logistic::{logistic_grad_into, logistic_loss, logistic_loss_raw};
pub use np::{build_np_classification, NpClient, NpOptions, Partition};

use crate::error::{Error, Result};
use crate::numerics::{Domain, ModelVector};

/// Which of the two client oracles a local step queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Oracle {
    Objective,
    Constraint,
}

/// A client's convex objective `f_j` and constraint `g_j`, each with a
/// subgradient oracle and a Lipschitz bound valid on the run's domain.
pub trait ClientProblem: Send + Sync + fmt::Debug {
    fn client_id(&self) -> usize;
    fn dim(&self) -> usize;
    fn objective_value(&self, w: &ModelVector) -> f64;
    fn objective_subgrad(&self, w: &ModelVector) -> Result<ModelVector>;
    fn constraint_value(&self, w: &ModelVector) -> f64;
    fn constraint_subgrad(&self, w: &ModelVector) -> Result<ModelVector>;
    fn lipschitz(&self) -> f64;

    /// The subgradient used inside a local step. Exact by default;
    /// mini-batch clients draw from `rng`.
    fn local_subgrad(&self, w: &ModelVector, which: Oracle, rng: &mut dyn RngCore) -> Result<ModelVector> {
        let _ = rng;
        match which {
            Oracle::Objective => self.objective_subgrad(w),
            Oracle::Constraint => self.constraint_subgrad(w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum HintSource {
    /// Closed form from KKT conditions.
    Analytic,
    /// Exhaustive grid search at the given step.
    GridOracle { step: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimumHint {
    pub w_star: ModelVector,
    pub f_star: f64,
    pub source: HintSource,
}

/// `min f(w) = (1/n) sum_j f_j(w)` subject to `g(w) = (1/n) sum_j g_j(w) <= 0`
/// over the domain X.
#[derive(Debug)]
pub struct FederatedProblem {
    name: String,
    clients: Vec<Box<dyn ClientProblem>>,
    domain: Domain,
    dim: usize,
    lipschitz: f64,
    optimum_hint: Option<OptimumHint>,
}

impl FederatedProblem {
    pub fn new(name: impl Into<String>, clients: Vec<Box<dyn ClientProblem>>, domain: Domain) -> Result<Self> {
        let first = clients
            .first()
            .ok_or_else(|| Error::InvalidProblem("a problem needs at least one client".into()))?;
        let dim = first.dim();
        for c in &clients {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: c.dim(),
                });
            }
        }
        if let Some(d) = domain.dim() {
            if d != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: d,
                });
            }
        }
        let lipschitz = clients.iter().map(|c| c.lipschitz()).fold(0.0, f64::max);
        Ok(FederatedProblem {
            name: name.into(),
            clients,
            domain,
            dim,
            lipschitz,
            optimum_hint: None,
        })
    }

    pub fn with_optimum_hint(mut self, hint: OptimumHint) -> Self {
        self.optimum_hint = Some(hint);
        self
    }

    /// Swap the domain, dropping any optimum hint tied to the old one.
    pub fn with_domain(mut self, domain: Domain) -> Result<Self> {
        if let Some(d) = domain.dim() {
            if d != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: d,
                });
            }
        }
        if domain != self.domain {
            self.optimum_hint = None;
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn clients(&self) -> &[Box<dyn ClientProblem>] {
        &self.clients
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// The certified Lipschitz constant G (max over clients).
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn optimum_hint(&self) -> Option<&OptimumHint> {
        self.optimum_hint.as_ref()
    }

    fn check_dim(&self, w: &ModelVector) -> Result<()> {
        if w.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: w.dim(),
            });
        }
        Ok(())
    }

    /// `(f(w), g(w))`, averaged over clients in ascending id order.
    pub fn global_eval(&self, w: &ModelVector) -> Result<(f64, f64)> {
        self.check_dim(w)?;
        let n = self.clients.len() as f64;
        let (f, g) = self.clients.iter().fold((0.0, 0.0), |(f, g), c| {
            (f + c.objective_value(w), g + c.constraint_value(w))
        });
        Ok((f / n, g / n))
    }

    /// Per-client subgradients `(grad f_j(w), grad g_j(w))` in client order.
    pub fn client_subgrads(&self, w: &ModelVector) -> Result<Vec<(ModelVector, ModelVector)>> {
        self.check_dim(w)?;
        self.clients
            .iter()
            .map(|c| Ok((c.objective_subgrad(w)?, c.constraint_subgrad(w)?)))
            .collect()
    }
}

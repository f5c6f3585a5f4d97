//! Linear objective over a box with a Euclidean-ball constraint:
//! `f(w) = <c, w>`, `g(w) = ||w||^2 - r^2`. Its optimum `w* = -r c/||c||`,
//! `f* = -r ||c||` is known in closed form.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ClientProblem, FederatedProblem, HintSource, OptimumHint};
use crate::error::{Error, Result};
use crate::numerics::{Domain, ModelVector};
use crate::streams::{stream, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearBallSpec {
    pub direction: Vec<f64>,
    pub radius: f64,
    /// The domain is `[-half_width, half_width]^d`.
    pub half_width: f64,
    pub clients: usize,
    /// Standard deviation of the zero-mean per-client perturbation of `c`.
    pub perturbation: f64,
    pub seed: u64,
}

impl LinearBallSpec {
    pub fn new(direction: Vec<f64>, radius: f64) -> Self {
        LinearBallSpec {
            direction,
            radius,
            half_width: 2.0,
            clients: 1,
            perturbation: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearBallClient {
    id: usize,
    c: ModelVector,
    radius_sq: f64,
    lipschitz: f64,
}

impl ClientProblem for LinearBallClient {
    fn client_id(&self) -> usize {
        self.id
    }

    fn dim(&self) -> usize {
        self.c.dim()
    }

    fn objective_value(&self, w: &ModelVector) -> f64 {
        crate::numerics::dot(self.c.as_slice(), w.as_slice())
    }

    fn objective_subgrad(&self, _w: &ModelVector) -> Result<ModelVector> {
        Ok(self.c.clone())
    }

    fn constraint_value(&self, w: &ModelVector) -> f64 {
        w.norm_sq() - self.radius_sq
    }

    fn constraint_subgrad(&self, w: &ModelVector) -> Result<ModelVector> {
        w.scaled(2.0)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

pub fn build_synthetic_linear_ball(spec: &LinearBallSpec) -> Result<FederatedProblem> {
    let c = ModelVector::new(spec.direction.clone())?;
    let d = c.dim();
    let c_norm = c.norm();
    if d == 0 || c_norm == 0.0 {
        return Err(Error::InvalidProblem("direction must be a nonzero vector".into()));
    }
    if !(spec.radius > 0.0 && spec.radius < spec.half_width) {
        return Err(Error::InvalidProblem(format!(
            "need 0 < r < half-width, got r = {}, half-width = {}",
            spec.radius, spec.half_width
        )));
    }
    if spec.clients == 0 {
        return Err(Error::InvalidProblem("need at least one client".into()));
    }
    if !(spec.perturbation.is_finite() && spec.perturbation >= 0.0) {
        return Err(Error::InvalidProblem("perturbation must be finite and >= 0".into()));
    }
    let domain = Domain::cube(d, spec.half_width)?;

    // Zero-mean perturbations: draw, then subtract the sample mean.
    let mut rng = stream(spec.seed, Purpose::Problem, 0, 0);
    let mut noise: Vec<Vec<f64>> = (0..spec.clients)
        .map(|_| {
            (0..d)
                .map(|_| spec.perturbation * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mean: Vec<f64> = (0..d)
        .map(|i| noise.iter().map(|p| p[i]).sum::<f64>() / spec.clients as f64)
        .collect();
    for p in &mut noise {
        for (v, m) in p.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let client_cs: Vec<ModelVector> = noise
        .iter()
        .map(|p| ModelVector::new(c.as_slice().iter().zip(p).map(|(a, b)| a + b).collect()))
        .collect::<Result<_>>()?;

    let box_norm = domain.max_norm().expect("cube is bounded");
    let lipschitz = client_cs.iter().map(ModelVector::norm).fold(2.0 * box_norm, f64::max);

    let clients: Vec<Box<dyn ClientProblem>> = client_cs
        .into_iter()
        .enumerate()
        .map(|(id, c)| {
            Box::new(LinearBallClient {
                id,
                c,
                radius_sq: spec.radius * spec.radius,
                lipschitz,
            }) as Box<dyn ClientProblem>
        })
        .collect();

    let w_star = c.scaled(-spec.radius / c_norm)?;
    let hint = OptimumHint {
        w_star,
        f_star: -spec.radius * c_norm,
        source: HintSource::Analytic,
    };
    Ok(FederatedProblem::new("linear_ball", clients, domain)?.with_optimum_hint(hint))
}

//! Step-size/threshold calculators, averaged iterates, gradient-skewness
//! diagnostics, a grid-search optimum oracle and epsilon-solution verdicts.

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::engine::{RoundRecord, RunTrace};
use crate::error::{Error, Result};
use crate::numerics::{dot, ModelVector};
use crate::problems::{FederatedProblem, HintSource, OptimumHint};
use crate::switching::sigma_beta;

/// Convergence constant with every client participating.
pub fn gamma_full(local_steps: usize, q: f64, q0: f64) -> f64 {
    let e = local_steps as f64;
    2.0 * e * e + 2.0 * e * (1.0 - q).sqrt() / q + 4.0 * e * (10.0 * (1.0 - q0)).sqrt() / (q0 * q)
}

/// Convergence constant with `m` of `n` clients per round and
/// bidirectional compression.
pub fn gamma_partial(local_steps: usize, q: f64, q0: f64, clients: usize, participants: usize) -> f64 {
    let e = local_steps as f64;
    let ratio = clients as f64 / participants as f64;
    let q_sq = q * q;
    2.0 * e * e
        + 16.0 * e * ratio * (10.0 * (1.0 - q) * (1.0 - q0)).sqrt() / (q0 * q_sq)
        + 8.0 * e * (10.0 * (1.0 - q0)).sqrt() / (q0 * q)
        + 20.0 * e / q_sq
        + ratio * 4.0 * e * (10.0 * (1.0 - q)).sqrt() / q_sq
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Full,
    /// Client sampling with bidirectional error-feedback compression.
    Partial,
    /// Client sampling without compression (`q = q0 = 1`).
    PartialUncompressed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremInputs {
    pub regime: Regime,
    /// Bound on `||w_0 - w*||`.
    pub distance: f64,
    pub lipschitz: f64,
    pub local_steps: usize,
    pub rounds: usize,
    pub clients: usize,
    pub participants: usize,
    pub q: f64,
    pub q0: f64,
    /// Sub-Gaussian scale of the sampled constraint estimate.
    pub sigma: f64,
    /// Confidence level, in (0, 1).
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremOutputs {
    pub gamma: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub regime: Regime,
}

impl TheoremInputs {
    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::TheoremInputs(m));
        if !(self.distance.is_finite() && self.distance > 0.0) {
            return bad(format!("distance bound {} must be finite and positive", self.distance));
        }
        if !(self.lipschitz.is_finite() && self.lipschitz > 0.0) {
            return bad(format!(
                "Lipschitz bound {} must be finite and positive",
                self.lipschitz
            ));
        }
        if self.local_steps == 0 || self.rounds == 0 {
            return bad("local_steps and rounds must be at least 1".into());
        }
        if self.participants == 0 || self.participants > self.clients {
            return bad(format!(
                "participants {} outside 1..={}",
                self.participants, self.clients
            ));
        }
        for (name, v) in [("q", self.q), ("q0", self.q0)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} = {v} outside (0, 1]"));
            }
        }
        if self.regime != Regime::Full {
            if !(self.delta > 0.0 && self.delta < 1.0) {
                return bad(format!("delta = {} outside (0, 1)", self.delta));
            }
            if !(self.sigma.is_finite() && self.sigma >= 0.0) {
                return bad(format!("sigma = {} must be finite and >= 0", self.sigma));
            }
        }
        if self.regime == Regime::PartialUncompressed && (self.q != 1.0 || self.q0 != 1.0) {
            return bad("the uncompressed partial regime needs q = q0 = 1".into());
        }
        Ok(())
    }
}

/// Step size and constraint threshold under which the averaged iterate is
/// an epsilon-solution.
pub fn theorem1_params(inputs: &TheoremInputs) -> Result<TheoremOutputs> {
    inputs.check()?;
    let TheoremInputs {
        regime,
        distance: d,
        lipschitz: g,
        local_steps,
        rounds,
        clients,
        participants,
        q,
        q0,
        sigma,
        delta,
    } = *inputs;
    let e = local_steps as f64;
    let t = rounds as f64;
    let m = participants as f64;

    let gamma = match regime {
        Regime::Full => gamma_full(local_steps, q, q0),
        Regime::Partial => gamma_partial(local_steps, q, q0, clients, participants),
        Regime::PartialUncompressed => 2.0 * e * e,
    };
    let eta = (d * d / (2.0 * g * g * e * t * gamma)).sqrt();
    let optimization = (2.0 * d * d * g * g * gamma / (e * t)).sqrt();
    let sampling = 4.0 * g * d / (m * t).sqrt() * (2.0 * (3.0 / delta).ln()).sqrt()
        + 2.0 * sigma * (2.0 / m * (6.0 * t / delta).ln()).sqrt();
    let epsilon = match regime {
        Regime::Full => optimization,
        Regime::Partial => {
            let ratio = clients as f64 / m;
            optimization + ratio * 2.0 * d * g * (1.0 - q).sqrt() / (q * t) + sampling
        }
        Regime::PartialUncompressed => optimization + sampling,
    };
    Ok(TheoremOutputs {
        gamma,
        eta,
        epsilon,
        regime,
    })
}

/// Sample standard deviation of the per-client constraint values at `w`,
/// a rough plug-in for the sub-Gaussian scale of the sampled estimate.
pub fn estimate_sigma(problem: &FederatedProblem, w: &ModelVector) -> f64 {
    let values: Vec<f64> = problem.clients().iter().map(|c| c.constraint_value(w)).collect();
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

fn snapshot_of(r: &RoundRecord) -> Result<&ModelVector> {
    r.w_snapshot.as_ref().ok_or(Error::MissingSnapshot(r.t))
}

/// Uniform mean of `w_t` over the rounds flagged feasible during the run.
pub fn averaged_iterate_hard(trace: &RunTrace) -> Result<ModelVector> {
    let picked: Vec<&ModelVector> = trace
        .records
        .iter()
        .filter(|r| r.in_a)
        .map(|r| snapshot_of(r))
        .collect::<Result<_>>()?;
    if picked.is_empty() {
        return Err(Error::EmptyFeasibleSet);
    }
    ModelVector::weighted_mean(&picked, &vec![1.0; picked.len()])
}

/// Mean of `w_t` over rounds with `g(w_t) < epsilon`, weighted by
/// `1 - sigma_beta(g(w_t) - epsilon)`. Needs exact `g`, so sampled-client
/// runs are refused.
pub fn averaged_iterate_soft(trace: &RunTrace, beta: f64, epsilon: f64) -> Result<ModelVector> {
    if !trace.full_participation {
        return Err(Error::SoftAveragingNeedsFullParticipation);
    }
    let mut picked = Vec::new();
    let mut weights = Vec::new();
    for r in trace.records.iter().filter(|r| r.g_true < epsilon) {
        picked.push(snapshot_of(r)?);
        weights.push(1.0 - sigma_beta(r.g_true - epsilon, beta));
    }
    if picked.is_empty() {
        return Err(Error::EmptyFeasibleSet);
    }
    ModelVector::weighted_mean(&picked, &weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Skewness {
    /// `||a b^T - b a^T||_F` for the averaged gradients `a`, `b`.
    pub k_glob_frob: f64,
    /// `||(1/n) sum_j (a_j b_j^T - b_j a_j^T)||_F`.
    pub k_loc_frob: f64,
    /// `||K_loc - K_glob||_F`.
    pub k_diff_frob: f64,
    pub v_f: f64,
    pub v_g: f64,
    /// `sqrt(2 V_f V_g) - ||K_loc - K_glob||_F`; never below rounding noise.
    pub bound_gap: f64,
}

/// Squared Frobenius norm of `(1/n) sum_j (u_j v_j^T - v_j u_j^T)` from
/// inner products only.
fn skew_frob_sq(us: &[Vec<f64>], vs: &[Vec<f64>]) -> f64 {
    let n = us.len() as f64;
    let mut acc = 0.0;
    for (uj, vj) in us.iter().zip(vs) {
        for (uk, vk) in us.iter().zip(vs) {
            acc += 2.0 * (dot(uj, uk) * dot(vj, vk) - dot(uj, vk) * dot(vj, uk));
        }
    }
    (acc / (n * n)).max(0.0)
}

/// Objective/constraint gradient skewness at `w`, computed through Gram
/// products so no `d x d` matrix is formed.
pub fn skewness_diagnostics(problem: &FederatedProblem, w: &ModelVector) -> Result<Skewness> {
    let grads = problem.client_subgrads(w)?;
    let n = grads.len() as f64;
    let a = ModelVector::mean(grads.iter().map(|(f, _)| f))?;
    let b = ModelVector::mean(grads.iter().map(|(_, g)| g))?;
    let centered = |v: &ModelVector, mean: &ModelVector| -> Vec<f64> {
        v.as_slice().iter().zip(mean.as_slice()).map(|(x, m)| x - m).collect()
    };
    let alphas: Vec<Vec<f64>> = grads.iter().map(|(f, _)| centered(f, &a)).collect();
    let betas: Vec<Vec<f64>> = grads.iter().map(|(_, g)| centered(g, &b)).collect();
    let fs: Vec<Vec<f64>> = grads.iter().map(|(f, _)| f.as_slice().to_vec()).collect();
    let gs: Vec<Vec<f64>> = grads.iter().map(|(_, g)| g.as_slice().to_vec()).collect();

    let ab = a.dot(&b)?;
    let k_glob_frob = (2.0 * (a.norm_sq() * b.norm_sq() - ab * ab)).max(0.0).sqrt();
    let k_loc_frob = skew_frob_sq(&fs, &gs).sqrt();
    let k_diff_frob = skew_frob_sq(&alphas, &betas).sqrt();
    let v_f = alphas.iter().map(|v| dot(v, v)).sum::<f64>() / n;
    let v_g = betas.iter().map(|v| dot(v, v)).sum::<f64>() / n;
    Ok(Skewness {
        k_glob_frob,
        k_loc_frob,
        k_diff_frob,
        v_f,
        v_g,
        bound_gap: (2.0 * v_f * v_g).sqrt() - k_diff_frob,
    })
}

const MAX_GRID_DIM: usize = 3;

/// Exhaustive search over the grid `lower + step * i` inside the compact
/// domain, keeping points with `g <= 0`. Ties go to the lexicographically
/// smallest point.
pub fn brute_force_optimum(problem: &FederatedProblem, step: f64) -> Result<OptimumHint> {
    let d = problem.dim();
    if d > MAX_GRID_DIM {
        return Err(Error::GridTooLarge(d));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "grid step {step} must be finite and positive"
        )));
    }
    let domain = problem.domain();
    let (lower, upper) = domain.bounding_box().ok_or(Error::NoFiniteDiameter)?;
    let counts: Vec<usize> = lower
        .iter()
        .zip(&upper)
        .map(|(l, u)| ((u - l) / step + 1e-9).floor() as usize + 1)
        .collect();
    let inner: usize = counts[1..].iter().product();

    let point = |flat: usize| -> Vec<f64> {
        let mut rem = flat;
        let mut p = vec![0.0; d];
        for k in (0..d).rev() {
            p[k] = lower[k] + step * (rem % counts[k]) as f64;
            rem /= counts[k];
        }
        p
    };

    // Flat indices increase lexicographically, so keeping the first
    // strict improvement resolves ties toward the smallest point.
    let better = |a: Option<(f64, usize)>, b: Option<(f64, usize)>| match (a, b) {
        (Some(x), Some(y)) => Some(if y.0 < x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    };
    let best = (0..counts[0])
        .into_par_iter()
        .map(|i| {
            let mut best: Option<(f64, usize)> = None;
            for r in 0..inner {
                let flat = i * inner + r;
                let w = ModelVector::new(point(flat))?;
                if !domain.contains(&w) {
                    continue;
                }
                let (f, g) = problem.global_eval(&w)?;
                if g <= 0.0 {
                    best = better(best, Some((f, flat)));
                }
            }
            Ok::<_, Error>(best)
        })
        .try_reduce(|| None, |a, b| Ok(better(a, b)))?;

    let (f_star, flat) = best.ok_or(Error::NoFeasiblePoint)?;
    Ok(OptimumHint {
        w_star: ModelVector::new(point(flat))?,
        f_star,
        source: HintSource::GridOracle { step },
    })
}

fn unknown_if_none<S: Serializer, T: Serialize>(v: &Option<T>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => x.serialize(s),
        None => s.serialize_str("unknown"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    #[serde(serialize_with = "unknown_if_none")]
    pub subopt_gap: Option<f64>,
    pub violation: f64,
    #[serde(serialize_with = "unknown_if_none")]
    pub is_eps_solution: Option<bool>,
}

/// Judge `w_bar` against a known optimal value, if any. Both conditions are
/// inclusive.
pub fn verdict_with_optimum(
    problem: &FederatedProblem,
    w_bar: &ModelVector,
    f_star: Option<f64>,
    epsilon: f64,
) -> Result<Verdict> {
    let (f, g) = problem.global_eval(w_bar)?;
    let subopt_gap = f_star.map(|fs| f - fs);
    Ok(Verdict {
        subopt_gap,
        violation: g,
        is_eps_solution: subopt_gap.map(|gap| gap <= epsilon && g <= epsilon),
    })
}

/// Judge `w_bar` against the problem's own optimum hint.
pub fn verdict(problem: &FederatedProblem, w_bar: &ModelVector, epsilon: f64) -> Result<Verdict> {
    verdict_with_optimum(problem, w_bar, problem.optimum_hint().map(|h| h.f_star), epsilon)
}

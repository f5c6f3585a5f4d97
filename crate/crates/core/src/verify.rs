//! Reduced-scale invariant checks, runnable headlessly via `fedsgm verify`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::analysis::{gamma_full, skewness_diagnostics, theorem1_params, Regime, TheoremInputs};
use crate::compression::{uplink_ef_step, CompressorKind, CompressorSpec, EfResidual};
use crate::engine::{run, run_round, run_round_detailed, AlgoState, Compression, RoundConfig, RunTrace};
use crate::error::Result;
use crate::numerics::{Domain, ModelVector};
use crate::problems::{
    build_np_classification, synthetic_np_dataset, ClientProblem, FederatedProblem, NpOptions, Partition, SyntheticSpec,
};
use crate::streams::{stream, Purpose};
use crate::switching::SwitchMode;

/// Knobs for deliberately breaking a check, so the suite can be shown to
/// catch faults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Multiplies every compressor's declared `q` before the contraction
    /// check.
    pub declared_q_factor: f64,
    /// Multiplies the step size the drift run actually uses, while the
    /// bound is still evaluated at the nominal step.
    pub drift_eta_factor: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            declared_q_factor: 1.0,
            drift_eta_factor: 1.0,
            seed: 20_240_601,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> CheckResult {
    match outcome {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn np_problem(clients: usize, partition: Partition, domain: Domain, seed: u64) -> Result<FederatedProblem> {
    let data = synthetic_np_dataset(&SyntheticSpec {
        rows: 200,
        d_feat: 8,
        class_balance: 0.4,
        separation: 3.0,
        seed,
    })?;
    let opts = NpOptions {
        partition,
        ..NpOptions::iid(clients, seed)
    };
    build_np_classification(&data, &opts, domain)
}

fn gaussian(rng: &mut impl Rng, d: usize, scale: f64) -> Result<ModelVector> {
    ModelVector::new((0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
}

fn projection(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = stream(opts.seed, Purpose::Check, 0, 0);
    let domains = [
        Domain::cube(3, 1.0)?,
        Domain::ball(ModelVector::new(vec![0.5, -0.2, 1.0])?, 0.7)?,
    ];
    let mut worst = 0.0f64;
    for domain in &domains {
        for _ in 0..500 {
            let x = gaussian(&mut rng, 3, 3.0)?;
            let y = gaussian(&mut rng, 3, 3.0)?;
            let px = domain.project(&x)?;
            let py = domain.project(&y)?;
            if !domain.contains(&px) || domain.project(&px)? != px {
                return Ok((false, "projection not idempotent".into()));
            }
            worst = worst.max(px.distance(&py)? - x.distance(&y)?);
        }
    }
    Ok((worst <= 1e-12, format!("max expansion {worst:.2e}")))
}

fn contraction(opts: &VerifyOptions) -> Result<(bool, String)> {
    let d = 20;
    let mut rng = stream(opts.seed, Purpose::Check, 1, 0);
    let mut worst_margin = f64::NEG_INFINITY;
    for kind in [CompressorKind::TopK { k: 5 }, CompressorKind::UniformQuant { bits: 6 }] {
        let spec = CompressorSpec::new(kind, d)?;
        let q = (spec.contraction_q() * opts.declared_q_factor).min(1.0);
        for _ in 0..1000 {
            let v = gaussian(&mut rng, d, 1.0)?;
            let err = spec.compress(&v, &mut rng)?.checked_sub(&v)?.norm_sq();
            worst_margin = worst_margin.max(err - (1.0 - q) * v.norm_sq());
        }
    }
    let spec = CompressorSpec::new(CompressorKind::RandK { k: 5 }, d)?;
    let q = (spec.contraction_q() * opts.declared_q_factor).min(1.0);
    let v = gaussian(&mut rng, d, 1.0)?;
    let draws = 4000;
    let mut total = 0.0;
    for _ in 0..draws {
        total += spec.compress(&v, &mut rng)?.checked_sub(&v)?.norm_sq();
    }
    let ratio = total / draws as f64 / v.norm_sq();
    let passed = worst_margin <= 1e-12 && ratio <= (1.0 - q) * 1.05;
    Ok((
        passed,
        format!(
            "deterministic margin {worst_margin:.2e}, rand_k ratio {ratio:.4} vs {:.4}",
            1.0 - q
        ),
    ))
}

fn ef_telescoping(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = stream(opts.seed, Purpose::Check, 2, 0);
    let spec = CompressorSpec::new(CompressorKind::TopK { k: 2 }, 6)?;
    let mut residual = EfResidual::zero(0, 6);
    let mut sent_total = ModelVector::zeros(6);
    let mut delta_total = ModelVector::zeros(6);
    for _ in 0..50 {
        let delta = ModelVector::new((0..6).map(|_| f64::from(rng.gen_range(-8i32..=8))).collect())?;
        let (sent, next) = uplink_ef_step(&residual, &delta, &spec, &mut rng)?;
        sent_total = sent_total.checked_add(&sent)?;
        delta_total = delta_total.checked_add(&delta)?;
        residual = next;
    }
    let gap = sent_total.checked_add(&residual.value)?.distance(&delta_total)?;
    Ok((gap == 0.0, format!("sum sent + residual - sum delta = {gap}")))
}

fn base_config(
    problem: &FederatedProblem,
    rounds: usize,
    participants: usize,
    eta: f64,
    eps: f64,
    seed: u64,
) -> Result<RoundConfig> {
    let mut cfg = RoundConfig::new(
        rounds,
        3,
        problem.num_clients(),
        participants,
        eta,
        SwitchMode::hard(eps)?,
    );
    cfg.seed = seed;
    Ok(cfg)
}

fn csv_bytes(trace: &RunTrace) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    Ok(buf)
}

fn identity_equivalence(opts: &VerifyOptions) -> Result<(bool, String)> {
    let problem = np_problem(6, Partition::Iid, Domain::Unbounded, opts.seed)?;
    let off = base_config(&problem, 30, 3, 0.05, 0.4, opts.seed)?;
    let mut on = off.clone();
    on.compression = Compression::On {
        uplink: CompressorSpec::identity(problem.dim()),
        downlink: CompressorSpec::identity(problem.dim()),
    };
    let a = run(&off, &problem)?;
    let b = run(&on, &problem)?;
    let same = csv_bytes(&a)? == csv_bytes(&b)? && a.final_model() == b.final_model();
    Ok((same, "identity compressors vs no compression".into()))
}

fn determinism(opts: &VerifyOptions) -> Result<(bool, String)> {
    let problem = np_problem(6, Partition::Sorted, Domain::cube(8, 2.0)?, opts.seed)?;
    let mut cfg = base_config(&problem, 25, 4, 0.05, 0.4, opts.seed)?;
    cfg.compression = Compression::On {
        uplink: CompressorSpec::new(CompressorKind::RandK { k: 3 }, problem.dim())?,
        downlink: CompressorSpec::new(CompressorKind::TopK { k: 4 }, problem.dim())?,
    };
    let serial = csv_bytes(&run(&cfg, &problem)?)?;
    cfg.workers = 4;
    let parallel = csv_bytes(&run(&cfg, &problem)?)?;
    Ok((serial == parallel, "1 vs 4 workers".into()))
}

/// Linear objective with a never-active constraint: every local step moves
/// by exactly `eta * ||c||`, which makes the drift bound nearly tight.
#[derive(Debug)]
struct Drifter {
    c: ModelVector,
}

impl ClientProblem for Drifter {
    fn client_id(&self) -> usize {
        0
    }
    fn dim(&self) -> usize {
        self.c.dim()
    }
    fn objective_value(&self, w: &ModelVector) -> f64 {
        crate::numerics::dot(self.c.as_slice(), w.as_slice())
    }
    fn objective_subgrad(&self, _: &ModelVector) -> Result<ModelVector> {
        Ok(self.c.clone())
    }
    fn constraint_value(&self, _: &ModelVector) -> f64 {
        -1.0
    }
    fn constraint_subgrad(&self, w: &ModelVector) -> Result<ModelVector> {
        Ok(ModelVector::zeros(w.dim()))
    }
    fn lipschitz(&self) -> f64 {
        self.c.norm()
    }
}

/// Largest `(drift_sq_sum / bound, ||delta|| / (E G))` over a run at
/// `eta * eta_factor`, with both bounds taken at the nominal `eta`.
fn worst_bound_ratios(problem: &FederatedProblem, mut cfg: RoundConfig, eta_factor: f64) -> Result<(f64, f64)> {
    let eta = cfg.eta;
    cfg.eta *= eta_factor;
    let trace = run(&cfg, problem)?;
    let g = problem.lipschitz();
    let e = cfg.local_steps as f64;
    let drift_bound = eta * eta * e.powi(3) * g * g / 3.0 + 1e-9;
    let delta_bound = e * g + 1e-9;
    Ok(trace
        .records
        .iter()
        .flat_map(|r| &r.clients)
        .fold((0.0f64, 0.0f64), |(d, n), s| {
            (d.max(s.drift_sq_sum / drift_bound), n.max(s.delta_norm / delta_bound))
        }))
}

fn drift_and_delta(opts: &VerifyOptions) -> Result<(bool, String)> {
    let np = np_problem(6, Partition::Sorted, Domain::cube(8, 2.0)?, opts.seed)?;
    let mut cfg = base_config(&np, 30, 6, 0.1, 0.4, opts.seed)?;
    cfg.local_steps = 6;
    let (np_drift, np_delta) = worst_bound_ratios(&np, cfg, opts.drift_eta_factor)?;

    let tight = FederatedProblem::new(
        "drifter",
        vec![Box::new(Drifter {
            c: ModelVector::new(vec![3.0, -4.0])?,
        })],
        Domain::Unbounded,
    )?;
    let mut cfg = base_config(&tight, 5, 1, 0.1, 0.0, opts.seed)?;
    cfg.local_steps = 6;
    let (tight_drift, tight_delta) = worst_bound_ratios(&tight, cfg, opts.drift_eta_factor)?;

    let drift = np_drift.max(tight_drift);
    let delta = np_delta.max(tight_delta);
    Ok((
        drift <= 1.0 && delta <= 1.0,
        format!(
            "drift at {:.1}% of bound, |delta| at {:.1}% of EG",
            100.0 * drift,
            100.0 * delta
        ),
    ))
}

fn virtual_iterate(opts: &VerifyOptions) -> Result<(bool, String)> {
    let problem = np_problem(5, Partition::Iid, Domain::Unbounded, opts.seed)?;
    let mut cfg = base_config(&problem, 40, 5, 0.05, 0.4, opts.seed)?;
    cfg.compression = Compression::On {
        uplink: CompressorSpec::new(CompressorKind::TopK { k: 4 }, problem.dim())?,
        downlink: CompressorSpec::new(CompressorKind::TopK { k: 4 }, problem.dim())?,
    };
    let worst = virtual_iterate_residuals(&cfg, &problem)?
        .into_iter()
        .fold(0.0, f64::max);
    Ok((worst <= 1e-9, format!("max residual {worst:.2e}")))
}

/// Per-round `||v_{t+1} - (v_t - eta mean delta_t)||` for the virtual
/// sequence `v_t = x_t - eta * mean_j e_j`. Needs full participation and an
/// unbounded domain to hold.
pub fn virtual_iterate_residuals(cfg: &RoundConfig, problem: &FederatedProblem) -> Result<Vec<f64>> {
    let virtual_of = |s: &AlgoState| -> Result<ModelVector> {
        let residuals = s.residuals.as_ref().expect("compressed run");
        let mean_e = ModelVector::mean(residuals.iter().map(|r| &r.value))?;
        s.x.as_ref().expect("compressed run").axpy(-cfg.eta, &mean_e)
    };
    let mut state = AlgoState::initial(cfg, ModelVector::zeros(problem.dim()));
    let mut out = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let before = virtual_of(&state)?;
        let (next, _, outcomes) = run_round_detailed(&state, cfg, problem)?;
        let mean_delta = ModelVector::mean(outcomes.iter().map(|o| &o.delta))?;
        out.push(virtual_of(&next)?.distance(&before.axpy(-cfg.eta, &mean_delta)?)?);
        state = next;
    }
    Ok(out)
}

fn frozen_residuals(opts: &VerifyOptions) -> Result<(bool, String)> {
    let problem = np_problem(8, Partition::Sorted, Domain::cube(8, 2.0)?, opts.seed)?;
    let mut cfg = base_config(&problem, 40, 3, 0.05, 0.4, opts.seed)?;
    cfg.compression = Compression::On {
        uplink: CompressorSpec::new(CompressorKind::TopK { k: 2 }, problem.dim())?,
        downlink: CompressorSpec::new(CompressorKind::UniformQuant { bits: 8 }, problem.dim())?,
    };
    let violations = frozen_residual_violations(&cfg, &problem)?;
    Ok((violations == 0, format!("{violations} violations")))
}

/// Count (client, round) pairs where an unsampled client's residual changed.
pub fn frozen_residual_violations(cfg: &RoundConfig, problem: &FederatedProblem) -> Result<usize> {
    let mut state = AlgoState::initial(cfg, ModelVector::zeros(problem.dim()));
    let mut violations = 0;
    for _ in 0..cfg.rounds {
        let (next, record) = run_round(&state, cfg, problem)?;
        let before = state.residuals.as_ref().expect("compressed run");
        let after = next.residuals.as_ref().expect("compressed run");
        violations += (0..cfg.clients)
            .filter(|j| record.sampled.binary_search(j).is_err())
            .filter(|&j| {
                let (a, b) = (before[j].value.as_slice(), after[j].value.as_slice());
                a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits())
            })
            .count();
        state = next;
    }
    Ok(violations)
}

fn soft_limit(opts: &VerifyOptions) -> Result<(bool, String)> {
    let problem = np_problem(4, Partition::Iid, Domain::Unbounded, opts.seed)?;
    let hard = base_config(&problem, 30, 4, 0.05, 0.45, opts.seed)?;
    let mut soft = hard.clone();
    soft.switch = SwitchMode::soft(0.45, 1e9)?;
    let a = run(&hard, &problem)?;
    let b = run(&soft, &problem)?;
    let ramp_hit = a.records.iter().any(|r| r.g_hat > 0.45 - 1e-9 && r.g_hat <= 0.45);
    let weights_equal = a
        .records
        .iter()
        .zip(&b.records)
        .all(|(x, y)| x.switch_weight == y.switch_weight);
    Ok((
        ramp_hit || (weights_equal && a.final_model() == b.final_model()),
        if ramp_hit {
            "a round landed in the ramp; skipped".into()
        } else {
            "identical weights and final model".into()
        },
    ))
}

fn skewness(opts: &VerifyOptions) -> Result<(bool, String)> {
    let problem = np_problem(6, Partition::Sorted, Domain::Unbounded, opts.seed)?;
    let mut rng = stream(opts.seed, Purpose::Check, 3, 0);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let w = gaussian(&mut rng, problem.dim(), 1.0)?;
        worst = worst.min(skewness_diagnostics(&problem, &w)?.bound_gap);
    }
    let homogeneous = np_problem(6, Partition::Replicated, Domain::Unbounded, opts.seed)?;
    let w = gaussian(&mut rng, problem.dim(), 1.0)?;
    let diff = skewness_diagnostics(&homogeneous, &w)?.k_diff_frob;
    Ok((
        worst >= -1e-9 && diff <= 1e-9,
        format!("min bound gap {worst:.3e}, homogeneous diff {diff:.1e}"),
    ))
}

fn step_size_identity(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for (e, t, q, q0, regime) in [
        (1, 100, 1.0, 1.0, Regime::Full),
        (5, 500, 0.1, 0.1, Regime::Partial),
        (3, 4096, 0.5, 1.0, Regime::Full),
        (2, 77, 1.0, 1.0, Regime::PartialUncompressed),
    ] {
        let inputs = TheoremInputs {
            regime,
            distance: 2.5,
            lipschitz: 3.0,
            local_steps: e,
            rounds: t,
            clients: 20,
            participants: if regime == Regime::Full { 20 } else { 10 },
            q,
            q0,
            sigma: 0.1,
            delta: 0.05,
        };
        let out = theorem1_params(&inputs)?;
        let lhs = 2.0 * 9.0 * e as f64 * t as f64 * out.gamma * out.eta * out.eta;
        worst = worst.max((lhs / 6.25 - 1.0).abs());
    }
    let collapse = (1..10).all(|e| gamma_full(e, 1.0, 1.0) == 2.0 * (e * e) as f64);
    Ok((worst <= 1e-12 && collapse, format!("max relative error {worst:.1e}")))
}

/// Run every check.
pub fn run_checks(opts: &VerifyOptions) -> Vec<CheckResult> {
    vec![
        check("projection idempotent and non-expansive", projection(opts)),
        check("compressor contraction", contraction(opts)),
        check("error-feedback telescoping", ef_telescoping(opts)),
        check("identity compression equivalence", identity_equivalence(opts)),
        check("parallel determinism", determinism(opts)),
        check("local drift and delta bounds", drift_and_delta(opts)),
        check("virtual iterate identity", virtual_iterate(opts)),
        check("frozen residuals", frozen_residuals(opts)),
        check("soft switching hard limit", soft_limit(opts)),
        check("skewness bound", skewness(opts)),
        check("step size balances the bound", step_size_identity(opts)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_suite_passes() {
        let results = run_checks(&VerifyOptions::default());
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn misdeclared_q_is_caught() {
        let opts = VerifyOptions {
            declared_q_factor: 1.6,
            ..VerifyOptions::default()
        };
        assert!(!contraction(&opts).unwrap().0);
    }

    #[test]
    fn doubled_step_breaks_drift_bound() {
        let opts = VerifyOptions {
            drift_eta_factor: 2.0,
            ..VerifyOptions::default()
        };
        assert!(!drift_and_delta(&opts).unwrap().0);
    }
}

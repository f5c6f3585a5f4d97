//! The round loop: sample clients, query the constraint, run local steps,
//! aggregate (optionally through error-feedback compression), project, and
//! record.

use std::io::Write;

use rand::seq::index;
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::compression::{downlink_ef_step, message_bytes, uplink_ef_step, CompressorKind, CompressorSpec, EfResidual};
use crate::error::{Error, Result};
use crate::numerics::ModelVector;
use crate::problems::{ClientProblem, FederatedProblem, Oracle};
use crate::streams::{stream, Purpose};
use crate::switching::{blended_subgrad, switch_weight, SwitchMode};

#[derive(Debug, Clone, PartialEq)]
pub enum Compression {
    Off,
    On {
        uplink: CompressorSpec,
        downlink: CompressorSpec,
    },
}

impl Compression {
    pub fn is_on(&self) -> bool {
        matches!(self, Compression::On { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub rounds: usize,
    pub local_steps: usize,
    pub clients: usize,
    pub participants: usize,
    pub eta: f64,
    pub switch: SwitchMode,
    pub compression: Compression,
    pub seed: u64,
    /// Keep `w_t` every this many rounds; 1 keeps all of them.
    pub snapshot_cadence: usize,
    /// Worker threads for client computations. 0 uses the global rayon
    /// pool, 1 runs serially.
    pub workers: usize,
}

impl RoundConfig {
    pub fn new(
        rounds: usize,
        local_steps: usize,
        clients: usize,
        participants: usize,
        eta: f64,
        switch: SwitchMode,
    ) -> Self {
        RoundConfig {
            rounds,
            local_steps,
            clients,
            participants,
            eta,
            switch,
            compression: Compression::Off,
            seed: 0,
            snapshot_cadence: 1,
            workers: 1,
        }
    }

    pub fn full_participation(&self) -> bool {
        self.participants == self.clients
    }

    pub fn validate(&self, problem: &FederatedProblem) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.local_steps == 0 {
            return bad("local_steps must be at least 1".into());
        }
        if self.clients != problem.num_clients() {
            return bad(format!(
                "config has {} clients but the problem has {}",
                self.clients,
                problem.num_clients()
            ));
        }
        if self.participants == 0 || self.participants > self.clients {
            return Err(Error::Sampling {
                n: self.clients,
                m: self.participants,
            });
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad(format!("eta = {} must be finite and positive", self.eta));
        }
        if self.snapshot_cadence == 0 {
            return bad("snapshot_cadence must be at least 1".into());
        }
        if let Compression::On { uplink, downlink } = &self.compression {
            for spec in [uplink, downlink] {
                if spec.dim() != problem.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: problem.dim(),
                        found: spec.dim(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoState {
    /// The broadcast model `w_t`.
    pub w: ModelVector,
    /// The server model `x_t`, present only with compression on.
    pub x: Option<ModelVector>,
    /// Uplink residuals indexed by client id, present only with compression on.
    pub residuals: Option<Vec<EfResidual>>,
    pub t: usize,
}

impl AlgoState {
    pub fn initial(config: &RoundConfig, w0: ModelVector) -> Self {
        let dim = w0.dim();
        match config.compression {
            Compression::Off => AlgoState {
                w: w0,
                x: None,
                residuals: None,
                t: 0,
            },
            Compression::On { .. } => AlgoState {
                x: Some(w0.clone()),
                w: w0,
                residuals: Some((0..config.clients).map(|j| EfResidual::zero(j, dim)).collect()),
                t: 0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientRoundStats {
    pub client: usize,
    /// `sum_{tau < E} ||w_t - w_{j,tau}||^2` over the local trajectory.
    pub drift_sq_sum: f64,
    pub delta_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub t: usize,
    pub sampled: Vec<usize>,
    pub g_hat: f64,
    pub g_true: f64,
    pub f_true: f64,
    pub switch_weight: f64,
    pub in_a: bool,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub clients: Vec<ClientRoundStats>,
    /// `w_t`, the model the round started from.
    pub w_snapshot: Option<ModelVector>,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<RoundRecord>,
    pub final_state: AlgoState,
    /// Set when snapshots were thinned, so averaged iterates cannot be
    /// formed exactly.
    pub thinned: bool,
    pub switch: SwitchMode,
    pub full_participation: bool,
}

pub const TRACE_COLUMNS: [&str; 8] = [
    "t",
    "g_hat",
    "g_true",
    "f_true",
    "switch_weight",
    "in_A",
    "uplink_bytes",
    "downlink_bytes",
];

impl RunTrace {
    pub fn final_model(&self) -> &ModelVector {
        &self.final_state.w
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_COLUMNS)?;
        for r in &self.records {
            w.write_record([
                r.t.to_string(),
                r.g_hat.to_string(),
                r.g_true.to_string(),
                r.f_true.to_string(),
                r.switch_weight.to_string(),
                u8::from(r.in_a).to_string(),
                r.uplink_bytes.to_string(),
                r.downlink_bytes.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn total_bytes(&self) -> (u64, u64) {
        self.records
            .iter()
            .fold((0, 0), |(u, d), r| (u + r.uplink_bytes, d + r.downlink_bytes))
    }
}

/// A uniformly random `m`-subset of `0..n`, sorted ascending.
pub fn sample_clients<R: RngCore + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::Sampling { n, m });
    }
    if m == n {
        return Ok((0..n).collect());
    }
    let mut picked = index::sample(rng, n, m).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Mean of `g_j(w)` over the sampled clients, in ascending id order.
pub fn constraint_query(problem: &FederatedProblem, w: &ModelVector, sampled: &[usize]) -> f64 {
    let clients = problem.clients();
    let sum: f64 = sampled.iter().map(|&j| clients[j].constraint_value(w)).sum();
    sum / sampled.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    /// Sum of the subgradients used, `(w_t - w_{j,E}) / eta`.
    pub delta: ModelVector,
    pub drift_sq_sum: f64,
    pub final_iterate: ModelVector,
}

/// `E` unprojected local steps from `w_t` along the blended subgradient.
pub fn local_update(
    client: &dyn ClientProblem,
    w_t: &ModelVector,
    weight: f64,
    eta: f64,
    local_steps: usize,
    rng: &mut dyn RngCore,
) -> Result<LocalOutcome> {
    let mut w = w_t.clone();
    let mut delta = ModelVector::zeros(w_t.dim());
    let mut drift_sq_sum = 0.0;
    for _ in 0..local_steps {
        drift_sq_sum += w_t.checked_sub(&w)?.norm_sq();
        let grad_f = if weight < 1.0 {
            client.local_subgrad(&w, Oracle::Objective, rng)?
        } else {
            ModelVector::zeros(w.dim())
        };
        let grad_g = if weight > 0.0 {
            client.local_subgrad(&w, Oracle::Constraint, rng)?
        } else {
            ModelVector::zeros(w.dim())
        };
        let nu = blended_subgrad(weight, &grad_f, &grad_g)?;
        delta = delta.checked_add(&nu)?;
        w = w.axpy(-eta, &nu)?;
    }
    Ok(LocalOutcome {
        delta,
        drift_sq_sum,
        final_iterate: w,
    })
}

fn diverged(round: usize, client: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(what) => Error::Diverged { round, client, what },
        other => other,
    }
}

/// Execute one round from `state`. The problem and config must already
/// have been validated against each other.
pub fn run_round(
    state: &AlgoState,
    config: &RoundConfig,
    problem: &FederatedProblem,
) -> Result<(AlgoState, RoundRecord)> {
    run_round_detailed(state, config, problem).map(|(s, r, _)| (s, r))
}

/// [`run_round`], also returning each sampled client's local outcome in
/// ascending client order.
pub fn run_round_detailed(
    state: &AlgoState,
    config: &RoundConfig,
    problem: &FederatedProblem,
) -> Result<(AlgoState, RoundRecord, Vec<LocalOutcome>)> {
    let t = state.t;
    let round = t as u64;
    let dim = problem.dim();
    let clients = problem.clients();

    let sampled = sample_clients(
        config.clients,
        config.participants,
        &mut stream(config.seed, Purpose::Sample, round, 0),
    )?;
    let g_hat = constraint_query(problem, &state.w, &sampled);
    let weight = switch_weight(config.switch, g_hat);
    let (f_true, g_true) = problem.global_eval(&state.w)?;

    let work = |&j: &usize| -> Result<LocalOutcome> {
        let mut rng = stream(config.seed, Purpose::Batch, round, j as u64);
        local_update(
            clients[j].as_ref(),
            &state.w,
            weight,
            config.eta,
            config.local_steps,
            &mut rng,
        )
        .map_err(diverged(t, j))
    };
    let outcomes: Vec<LocalOutcome> = if config.workers == 1 {
        sampled.iter().map(work).collect::<Result<_>>()?
    } else {
        sampled.par_iter().map(work).collect::<Result<_>>()?
    };

    let stats = sampled
        .iter()
        .zip(&outcomes)
        .map(|(&client, o)| ClientRoundStats {
            client,
            drift_sq_sum: o.drift_sq_sum,
            delta_norm: o.delta.norm(),
        })
        .collect();

    let m = sampled.len() as u64;
    let n = config.clients as u64;
    let (next, uplink_bytes, downlink_bytes) = match &config.compression {
        Compression::Off => {
            let mean = ModelVector::mean(outcomes.iter().map(|o| &o.delta))?;
            let w = problem.domain().project(&state.w.axpy(-config.eta, &mean)?)?;
            let dense = message_bytes(CompressorKind::Identity, dim);
            let next = AlgoState {
                w,
                x: None,
                residuals: None,
                t: t + 1,
            };
            (next, m * dense, n * dense)
        }
        Compression::On { uplink, downlink } => {
            let x = state
                .x
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("compressed run without a server model".into()))?;
            let old = state
                .residuals
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("compressed run without residuals".into()))?;
            let mut residuals = old.clone();
            let mut sent = Vec::with_capacity(sampled.len());
            for (&j, o) in sampled.iter().zip(&outcomes) {
                let mut rng = stream(config.seed, Purpose::Compress, round, j as u64);
                let (v, e) = uplink_ef_step(&old[j], &o.delta, uplink, &mut rng).map_err(diverged(t, j))?;
                sent.push(v);
                residuals[j] = e;
            }
            let v = ModelVector::mean(&sent)?;
            let x_next = problem.domain().project(&x.axpy(-config.eta, &v)?)?;
            let mut rng = stream(config.seed, Purpose::Downlink, round, 0);
            let (_, w_next) = downlink_ef_step(&x_next, &state.w, downlink, &mut rng)?;
            let next = AlgoState {
                w: w_next,
                x: Some(x_next),
                residuals: Some(residuals),
                t: t + 1,
            };
            (next, m * uplink.message_bytes(), n * downlink.message_bytes())
        }
    };

    let snapshot = t.is_multiple_of(config.snapshot_cadence).then(|| state.w.clone());
    let record = RoundRecord {
        t,
        sampled,
        g_hat,
        g_true,
        f_true,
        switch_weight: weight,
        in_a: config.switch.in_feasible_set(g_hat),
        uplink_bytes,
        downlink_bytes,
        clients: stats,
        w_snapshot: snapshot,
    };
    Ok((next, record, outcomes))
}

/// Run `config.rounds` rounds from `w0`.
pub fn run_from(config: &RoundConfig, problem: &FederatedProblem, w0: ModelVector) -> Result<RunTrace> {
    config.validate(problem)?;
    if w0.dim() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            found: w0.dim(),
        });
    }
    // starting inside the domain keeps the diameter a valid distance bound
    let w0 = problem.domain().project(&w0)?;
    let body = || -> Result<RunTrace> {
        let mut state = AlgoState::initial(config, w0);
        let mut records = Vec::with_capacity(config.rounds);
        for _ in 0..config.rounds {
            let (next, record) = run_round(&state, config, problem)?;
            records.push(record);
            state = next;
        }
        Ok(RunTrace {
            records,
            final_state: state,
            thinned: config.snapshot_cadence > 1,
            switch: config.switch,
            full_participation: config.full_participation(),
        })
    };
    if config.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(body)
    } else {
        body()
    }
}

/// Run from the origin.
pub fn run(config: &RoundConfig, problem: &FederatedProblem) -> Result<RunTrace> {
    run_from(config, problem, ModelVector::zeros(problem.dim()))
}

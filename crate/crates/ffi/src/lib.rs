//! C interface to the fedsgm simulator.
//!
//! Every entry point returns a [`FedsgmStatus`]. On failure a message is
//! kept per thread and can be read with [`fedsgm_last_error`]. Problems and
//! traces are opaque handles released with their `_free` functions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fedsgm::analysis::{gamma_full, gamma_partial, theorem1_params, Regime, TheoremInputs};
use fedsgm::cli::cmd_run;
use fedsgm::compression::{CompressorKind, CompressorSpec};
use fedsgm::config::RunSpec;
use fedsgm::engine::{run, Compression, RoundConfig, RunTrace};
use fedsgm::problems::{
    build_np_classification, build_synthetic_linear_ball, synthetic_np_dataset, FederatedProblem, LinearBallSpec,
    NpOptions, SyntheticSpec,
};
use fedsgm::switching::SwitchMode;
use fedsgm::{Domain, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedsgmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    Diverged = 4,
    Io = 5,
    OutOfRange = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next fedsgm call on the same thread.
#[no_mangle]
pub extern "C" fn fedsgm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

struct Failure(FedsgmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Diverged { .. } | Error::NonFinite(_) => FedsgmStatus::Diverged,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Dataset { .. } | Error::DatasetShape { .. } => {
                FedsgmStatus::Io
            }
            Error::Config { .. } | Error::InvalidConfig(_) | Error::TheoremInputs(_) | Error::Sampling { .. } => {
                FedsgmStatus::InvalidConfig
            }
            _ => FedsgmStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: FedsgmStatus, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, message.into()))
}

/// Run `body`, translating errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FedsgmStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FedsgmStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            FedsgmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .map_or_else(|| fail(FedsgmStatus::NullPointer, format!("{name} is NULL")), Ok)
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .map_or_else(|| fail(FedsgmStatus::NullPointer, format!("{name} is NULL")), Ok)
}

unsafe fn c_path(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(FedsgmStatus::NullPointer, format!("{name} is NULL"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(FedsgmStatus::InvalidArgument, format!("{name} is not UTF-8")),
    }
}

/// Opaque federated problem.
pub struct FedsgmProblem(FederatedProblem);

/// Opaque record of a finished run.
pub struct FedsgmTrace(RunTrace);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FedsgmSyntheticParams {
    pub rows: usize,
    pub features: usize,
    /// Fraction of rows in the constrained class.
    pub class_balance: f64,
    pub separation: f64,
    pub clients: usize,
    pub seed: u64,
    /// Half-width of the box domain; zero or negative for an unbounded one.
    pub box_half_width: f64,
}

/// Build a Neyman-Pearson problem on synthetic Gaussian data with an IID
/// partition.
///
/// # Safety
/// `params` must point to a valid struct and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn fedsgm_problem_np_synthetic(
    params: *const FedsgmSyntheticParams,
    out: *mut *mut FedsgmProblem,
) -> FedsgmStatus {
    guard(|| {
        let p = *deref(params, "params")?;
        let out = out_ptr(out, "out")?;
        let data = synthetic_np_dataset(&SyntheticSpec {
            rows: p.rows,
            d_feat: p.features,
            class_balance: p.class_balance,
            separation: p.separation,
            seed: p.seed,
        })?;
        let domain = if p.box_half_width > 0.0 {
            Domain::cube(p.features, p.box_half_width)?
        } else {
            Domain::Unbounded
        };
        let problem = build_np_classification(&data, &NpOptions::iid(p.clients, p.seed), domain)?;
        *out = Box::into_raw(Box::new(FedsgmProblem(problem)));
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FedsgmLinearBallParams {
    /// Objective direction, `dim` entries.
    pub direction: *const f64,
    pub dim: usize,
    pub radius: f64,
    pub half_width: f64,
    pub clients: usize,
    pub perturbation: f64,
    pub seed: u64,
}

/// Build the linear-objective, ball-constraint benchmark.
///
/// # Safety
/// `params` must be valid, its `direction` must hold `dim` doubles, and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedsgm_problem_linear_ball(
    params: *const FedsgmLinearBallParams,
    out: *mut *mut FedsgmProblem,
) -> FedsgmStatus {
    guard(|| {
        let p = *deref(params, "params")?;
        let out = out_ptr(out, "out")?;
        if p.direction.is_null() {
            return fail(FedsgmStatus::NullPointer, "direction is NULL");
        }
        let spec = LinearBallSpec {
            direction: std::slice::from_raw_parts(p.direction, p.dim).to_vec(),
            radius: p.radius,
            half_width: p.half_width,
            clients: p.clients,
            perturbation: p.perturbation,
            seed: p.seed,
        };
        *out = Box::into_raw(Box::new(FedsgmProblem(build_synthetic_linear_ball(&spec)?)));
        Ok(())
    })
}

/// # Safety
/// `problem` must come from a `fedsgm_problem_*` constructor, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn fedsgm_problem_free(problem: *mut FedsgmProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FedsgmProblemInfo {
    pub dim: usize,
    pub clients: usize,
    pub lipschitz: f64,
    /// NaN when the domain is unbounded.
    pub diameter: f64,
}

/// # Safety
/// `problem` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedsgm_problem_info(
    problem: *const FedsgmProblem,
    out: *mut FedsgmProblemInfo,
) -> FedsgmStatus {
    guard(|| {
        let p = &deref(problem, "problem")?.0;
        *out_ptr(out, "out")? = FedsgmProblemInfo {
            dim: p.dim(),
            clients: p.num_clients(),
            lipschitz: p.lipschitz(),
            diameter: p.domain().diameter().unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedsgmCompressorKind {
    Identity = 0,
    TopK = 1,
    RandK = 2,
    UniformQuant = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FedsgmCompressor {
    pub kind: FedsgmCompressorKind,
    /// Kept coordinates for the sparsifiers, bit width for the quantizer.
    pub param: u32,
}

impl FedsgmCompressor {
    fn build(self, dim: usize) -> Result<CompressorSpec, Failure> {
        let kind = match self.kind {
            FedsgmCompressorKind::Identity => return Ok(CompressorSpec::identity(dim)),
            FedsgmCompressorKind::TopK => CompressorKind::TopK { k: self.param as usize },
            FedsgmCompressorKind::RandK => CompressorKind::RandK { k: self.param as usize },
            FedsgmCompressorKind::UniformQuant => CompressorKind::UniformQuant { bits: self.param },
        };
        Ok(CompressorSpec::new(kind, dim)?)
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FedsgmRunConfig {
    pub rounds: usize,
    pub local_steps: usize,
    pub participants: usize,
    pub eta: f64,
    pub epsilon: f64,
    /// Zero for hard switching; otherwise the soft-switching sharpness.
    pub beta: f64,
    pub compress: bool,
    pub uplink: FedsgmCompressor,
    pub downlink: FedsgmCompressor,
    pub seed: u64,
    /// Worker threads; 1 runs serially. Results do not depend on it.
    pub workers: usize,
}

fn round_config(c: &FedsgmRunConfig, problem: &FederatedProblem) -> Result<RoundConfig, Failure> {
    let switch = if c.beta > 0.0 {
        SwitchMode::soft(c.epsilon, c.beta)?
    } else {
        SwitchMode::hard(c.epsilon)?
    };
    let mut cfg = RoundConfig::new(
        c.rounds,
        c.local_steps,
        problem.num_clients(),
        c.participants,
        c.eta,
        switch,
    );
    cfg.seed = c.seed;
    cfg.workers = c.workers;
    if c.compress {
        cfg.compression = Compression::On {
            uplink: c.uplink.build(problem.dim())?,
            downlink: c.downlink.build(problem.dim())?,
        };
    }
    Ok(cfg)
}

/// Simulate a run starting from the zero model.
///
/// # Safety
/// `problem` and `config` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedsgm_run(
    problem: *const FedsgmProblem,
    config: *const FedsgmRunConfig,
    out: *mut *mut FedsgmTrace,
) -> FedsgmStatus {
    guard(|| {
        let problem = &deref(problem, "problem")?.0;
        let cfg = round_config(deref(config, "config")?, problem)?;
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(FedsgmTrace(run(&cfg, problem)?)));
        Ok(())
    })
}

/// # Safety
/// `trace` must come from `fedsgm_run`, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn fedsgm_trace_free(trace: *mut FedsgmTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of recorded rounds, or 0 for a NULL handle.
///
/// # Safety
/// `trace` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn fedsgm_trace_len(trace: *const FedsgmTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.records.len())
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FedsgmRoundRecord {
    pub t: usize,
    pub g_hat: f64,
    pub g_true: f64,
    pub f_true: f64,
    pub switch_weight: f64,
    pub in_a: bool,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
}

/// # Safety
/// `trace` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedsgm_trace_record(
    trace: *const FedsgmTrace,
    index: usize,
    out: *mut FedsgmRoundRecord,
) -> FedsgmStatus {
    guard(|| {
        let trace = &deref(trace, "trace")?.0;
        let Some(r) = trace.records.get(index) else {
            return fail(
                FedsgmStatus::OutOfRange,
                format!("round {index} out of range ({} recorded)", trace.records.len()),
            );
        };
        *out_ptr(out, "out")? = FedsgmRoundRecord {
            t: r.t,
            g_hat: r.g_hat,
            g_true: r.g_true,
            f_true: r.f_true,
            switch_weight: r.switch_weight,
            in_a: r.in_a,
            uplink_bytes: r.uplink_bytes,
            downlink_bytes: r.downlink_bytes,
        };
        Ok(())
    })
}

/// Copy the final model into `buf`, which must hold the problem dimension.
///
/// # Safety
/// `trace` must be a live handle and `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fedsgm_trace_final_model(
    trace: *const FedsgmTrace,
    buf: *mut f64,
    len: usize,
) -> FedsgmStatus {
    guard(|| {
        let w = deref(trace, "trace")?.0.final_model().as_slice();
        if buf.is_null() {
            return fail(FedsgmStatus::NullPointer, "buf is NULL");
        }
        if len != w.len() {
            return fail(
                FedsgmStatus::InvalidArgument,
                format!("buffer holds {len} values, model has {}", w.len()),
            );
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(w);
        Ok(())
    })
}

/// Write the trace in the CLI's `trace.csv` format.
///
/// # Safety
/// `trace` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedsgm_trace_write_csv(trace: *const FedsgmTrace, path: *const c_char) -> FedsgmStatus {
    guard(|| {
        let trace = &deref(trace, "trace")?.0;
        let file = std::fs::File::create(c_path(path, "path")?).map_err(Error::from)?;
        trace.write_csv(std::io::BufWriter::new(file))?;
        Ok(())
    })
}

/// Execute a TOML run file as `fedsgm run` would. `output_dir` may be NULL
/// to keep the directory named in the file.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `output_dir` one or NULL.
#[no_mangle]
pub unsafe extern "C" fn fedsgm_run_config_file(config_path: *const c_char, output_dir: *const c_char) -> FedsgmStatus {
    guard(|| {
        let mut spec = RunSpec::load(c_path(config_path, "config_path")?)?;
        if !output_dir.is_null() {
            spec.output_dir = c_path(output_dir, "output_dir")?;
        }
        cmd_run(&spec)?;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedsgmRegime {
    Full = 0,
    Partial = 1,
    PartialUncompressed = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FedsgmTheoremInputs {
    pub regime: FedsgmRegime,
    pub distance: f64,
    pub lipschitz: f64,
    pub local_steps: usize,
    pub rounds: usize,
    pub clients: usize,
    pub participants: usize,
    pub q: f64,
    pub q0: f64,
    pub sigma: f64,
    pub delta: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FedsgmTheoremOutputs {
    pub gamma: f64,
    pub eta: f64,
    pub epsilon: f64,
}

/// Step size and threshold for the given horizon and compression levels.
///
/// # Safety
/// `inputs` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedsgm_theorem_params(
    inputs: *const FedsgmTheoremInputs,
    out: *mut FedsgmTheoremOutputs,
) -> FedsgmStatus {
    guard(|| {
        let i = *deref(inputs, "inputs")?;
        let o = theorem1_params(&TheoremInputs {
            regime: match i.regime {
                FedsgmRegime::Full => Regime::Full,
                FedsgmRegime::Partial => Regime::Partial,
                FedsgmRegime::PartialUncompressed => Regime::PartialUncompressed,
            },
            distance: i.distance,
            lipschitz: i.lipschitz,
            local_steps: i.local_steps,
            rounds: i.rounds,
            clients: i.clients,
            participants: i.participants,
            q: i.q,
            q0: i.q0,
            sigma: i.sigma,
            delta: i.delta,
        })?;
        *out_ptr(out, "out")? = FedsgmTheoremOutputs {
            gamma: o.gamma,
            eta: o.eta,
            epsilon: o.epsilon,
        };
        Ok(())
    })
}

/// Convergence constant with every client participating.
#[no_mangle]
pub extern "C" fn fedsgm_gamma_full(local_steps: usize, q: f64, q0: f64) -> f64 {
    gamma_full(local_steps, q, q0)
}

/// Convergence constant with `participants` of `clients` sampled per round.
#[no_mangle]
pub extern "C" fn fedsgm_gamma_partial(
    local_steps: usize,
    q: f64,
    q0: f64,
    clients: usize,
    participants: usize,
) -> f64 {
    gamma_partial(local_steps, q, q0, clients, participants)
}

use std::ffi::{CStr, CString};
use std::ptr;

use fedsgm_ffi::*;

fn last_error() -> String {
    let p = fedsgm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn synthetic() -> *mut FedsgmProblem {
    let params = FedsgmSyntheticParams {
        rows: 150,
        features: 4,
        class_balance: 0.4,
        separation: 3.0,
        clients: 5,
        seed: 2,
        box_half_width: 3.0,
    };
    let mut problem = ptr::null_mut();
    assert_eq!(
        unsafe { fedsgm_problem_np_synthetic(&params, &mut problem) },
        FedsgmStatus::Ok
    );
    problem
}

fn config() -> FedsgmRunConfig {
    FedsgmRunConfig {
        rounds: 30,
        local_steps: 3,
        participants: 3,
        eta: 0.05,
        epsilon: 0.4,
        beta: 0.0,
        compress: true,
        uplink: FedsgmCompressor {
            kind: FedsgmCompressorKind::RandK,
            param: 2,
        },
        downlink: FedsgmCompressor {
            kind: FedsgmCompressorKind::UniformQuant,
            param: 8,
        },
        seed: 4,
        workers: 1,
    }
}

fn final_model(trace: *const FedsgmTrace, dim: usize) -> Vec<f64> {
    let mut w = vec![0.0; dim];
    assert_eq!(
        unsafe { fedsgm_trace_final_model(trace, w.as_mut_ptr(), dim) },
        FedsgmStatus::Ok
    );
    w
}

#[test]
fn run_round_trip() {
    let problem = synthetic();
    let mut info = FedsgmProblemInfo::default();
    assert_eq!(unsafe { fedsgm_problem_info(problem, &mut info) }, FedsgmStatus::Ok);
    assert_eq!((info.dim, info.clients), (4, 5));
    assert!((info.diameter - 12.0).abs() < 1e-12);

    let mut traces = [ptr::null_mut(); 2];
    for (workers, slot) in [1, 3].into_iter().zip(traces.iter_mut()) {
        let cfg = FedsgmRunConfig { workers, ..config() };
        assert_eq!(unsafe { fedsgm_run(problem, &cfg, slot) }, FedsgmStatus::Ok);
    }
    assert_eq!(unsafe { fedsgm_trace_len(traces[0]) }, 30);
    let mut rec = FedsgmRoundRecord::default();
    assert_eq!(
        unsafe { fedsgm_trace_record(traces[0], 29, &mut rec) },
        FedsgmStatus::Ok
    );
    assert_eq!(rec.t, 29);
    assert!(rec.switch_weight == 0.0 || rec.switch_weight == 1.0);
    assert_eq!(final_model(traces[0], 4), final_model(traces[1], 4));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("trace.csv").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { fedsgm_trace_write_csv(traces[0], path.as_ptr()) },
        FedsgmStatus::Ok
    );
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 31);

    unsafe {
        traces.into_iter().for_each(|t| fedsgm_trace_free(t));
        fedsgm_problem_free(problem);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let mut problem = ptr::null_mut();
    assert_eq!(
        unsafe { fedsgm_problem_np_synthetic(ptr::null(), &mut problem) },
        FedsgmStatus::NullPointer
    );
    assert!(last_error().contains("params"));

    let problem = synthetic();
    assert!(fedsgm_last_error().is_null());
    let mut trace = ptr::null_mut();
    let bad_k = FedsgmRunConfig {
        uplink: FedsgmCompressor {
            kind: FedsgmCompressorKind::TopK,
            param: 99,
        },
        ..config()
    };
    assert_eq!(
        unsafe { fedsgm_run(problem, &bad_k, &mut trace) },
        FedsgmStatus::InvalidArgument
    );
    assert!(last_error().contains("k = 99"));

    let too_many = FedsgmRunConfig {
        participants: 6,
        ..config()
    };
    assert_eq!(
        unsafe { fedsgm_run(problem, &too_many, &mut trace) },
        FedsgmStatus::InvalidConfig
    );
    assert!(trace.is_null());

    assert_eq!(unsafe { fedsgm_run(problem, &config(), &mut trace) }, FedsgmStatus::Ok);
    let mut rec = FedsgmRoundRecord::default();
    assert_eq!(
        unsafe { fedsgm_trace_record(trace, 30, &mut rec) },
        FedsgmStatus::OutOfRange
    );
    let mut short = [0.0; 2];
    assert_eq!(
        unsafe { fedsgm_trace_final_model(trace, short.as_mut_ptr(), 2) },
        FedsgmStatus::InvalidArgument
    );
    unsafe {
        fedsgm_trace_free(trace);
        fedsgm_problem_free(problem);
        fedsgm_trace_free(ptr::null_mut());
    }
}

#[test]
fn calculators_agree_with_the_library() {
    let inputs = FedsgmTheoremInputs {
        regime: FedsgmRegime::Full,
        distance: 1.0,
        lipschitz: 1.0,
        local_steps: 1,
        rounds: 4,
        clients: 1,
        participants: 1,
        q: 1.0,
        q0: 1.0,
        sigma: 0.0,
        delta: 0.5,
    };
    let mut out = FedsgmTheoremOutputs::default();
    assert_eq!(unsafe { fedsgm_theorem_params(&inputs, &mut out) }, FedsgmStatus::Ok);
    assert_eq!((out.gamma, out.eta, out.epsilon), (2.0, 0.25, 1.0));
    assert_eq!(
        fedsgm_gamma_partial(5, 0.1, 0.1, 20, 10),
        fedsgm::analysis::gamma_partial(5, 0.1, 0.1, 20, 10)
    );

    let bad = FedsgmTheoremInputs {
        regime: FedsgmRegime::PartialUncompressed,
        q: 0.5,
        clients: 4,
        participants: 2,
        ..inputs
    };
    assert_eq!(
        unsafe { fedsgm_theorem_params(&bad, &mut out) },
        FedsgmStatus::InvalidConfig
    );
}

#[test]
fn config_file_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "[problem.linear_ball]\nc = [1.0, 1.0]\nr = 1.0\n\n[rounds]\nrounds = 20\nlocal_steps = 2\nclients = 2\nparticipants = 2\n\n[switch]\nmode = \"hard\"\n\n[params.theorem]\n",
    )
    .unwrap();
    let config_c = CString::new(config.to_str().unwrap()).unwrap();
    let out_c = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { fedsgm_run_config_file(config_c.as_ptr(), out_c.as_ptr()) },
        FedsgmStatus::Ok
    );
    assert!(dir.path().join("out/summary.json").exists());

    let missing = CString::new(dir.path().join("absent.toml").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { fedsgm_run_config_file(missing.as_ptr(), ptr::null()) },
        FedsgmStatus::InvalidConfig
    );
    assert!(last_error().contains("absent.toml"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = include_str!("../include/fedsgm.h");
    for name in [
        "fedsgm_last_error",
        "fedsgm_problem_np_synthetic",
        "fedsgm_problem_linear_ball",
        "fedsgm_problem_free",
        "fedsgm_problem_info",
        "fedsgm_run",
        "fedsgm_trace_free",
        "fedsgm_trace_len",
        "fedsgm_trace_record",
        "fedsgm_trace_final_model",
        "fedsgm_trace_write_csv",
        "fedsgm_run_config_file",
        "fedsgm_theorem_params",
        "fedsgm_gamma_full",
        "fedsgm_gamma_partial",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

//! Command implementations behind the `fedsgm` binary: single runs, sweeps
//! and their on-disk outputs.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    averaged_iterate_hard, averaged_iterate_soft, skewness_diagnostics, verdict, Regime, Skewness, Verdict,
};
use crate::config::{RunSpec, SweepParam};
use crate::engine::{run, RunTrace};
use crate::error::{Error, Result};
use crate::streams::derive_seed;

/// Command-line overrides applied on top of a loaded spec.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub snapshot_cadence: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, spec: &mut RunSpec) {
        if let Some(dir) = &self.output_dir {
            spec.output_dir = dir.clone();
        }
        if let Some(seed) = self.seed {
            spec.rounds.seed = seed;
        }
        if let Some(c) = self.snapshot_cadence {
            spec.snapshot_cadence = c;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum AveragedVerdict {
    Available(Verdict),
    Unavailable { unavailable: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: RunSpec,
    pub seed: u64,
    pub final_f: f64,
    pub final_g: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub gamma: Option<f64>,
    pub regime: Option<Regime>,
    pub beta: Option<f64>,
    #[serde(rename = "A_size")]
    pub a_size: usize,
    pub rounds_run: usize,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub thinned: bool,
    pub w_bar_verdict: AveragedVerdict,
    pub final_skewness: Skewness,
}

/// Build, resolve and execute one spec.
pub fn execute(spec: &RunSpec) -> Result<(RunTrace, Summary)> {
    let problem = spec.build_problem()?;
    let resolved = spec.resolve(&problem)?;
    let trace = run(&resolved.config, &problem)?;
    let (final_f, final_g) = problem.global_eval(trace.final_model())?;

    let w_bar = match resolved.beta {
        Some(beta) => averaged_iterate_soft(&trace, beta, resolved.epsilon),
        None => averaged_iterate_hard(&trace),
    };
    let w_bar_verdict = match w_bar {
        Ok(w) => AveragedVerdict::Available(verdict(&problem, &w, resolved.epsilon)?),
        Err(e) => AveragedVerdict::Unavailable {
            unavailable: e.to_string(),
        },
    };
    let (uplink_bytes, downlink_bytes) = trace.total_bytes();
    let summary = Summary {
        config: spec.clone(),
        seed: resolved.config.seed,
        final_f,
        final_g,
        epsilon: resolved.epsilon,
        eta: resolved.config.eta,
        gamma: resolved.theorem.as_ref().map(|(_, o)| o.gamma),
        regime: resolved.theorem.as_ref().map(|(_, o)| o.regime),
        beta: resolved.beta,
        a_size: trace.records.iter().filter(|r| r.in_a).count(),
        rounds_run: trace.records.len(),
        uplink_bytes,
        downlink_bytes,
        thinned: trace.thinned,
        w_bar_verdict,
        final_skewness: skewness_diagnostics(&problem, trace.final_model())?,
    };
    Ok((trace, summary))
}

pub fn write_outputs(dir: &Path, trace: &RunTrace, summary: &Summary) -> Result<()> {
    fs::create_dir_all(dir)?;
    trace.write_csv(BufWriter::new(File::create(dir.join("trace.csv"))?))?;
    let json = serde_json::to_string_pretty(summary)?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

/// Execute a spec and write `trace.csv` and `summary.json` under its
/// output directory.
pub fn cmd_run(spec: &RunSpec) -> Result<Summary> {
    let (trace, summary) = execute(spec)?;
    write_outputs(&spec.output_dir, &trace, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub index: usize,
    pub seed: u64,
    pub coords: Vec<(SweepParam, f64)>,
    pub dir: PathBuf,
    pub outcome: std::result::Result<Summary, String>,
}

fn param_name(p: SweepParam) -> String {
    serde_json::to_value(p)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Cartesian product of the sweep axes, first axis slowest.
pub fn sweep_cells(spec: &RunSpec) -> Vec<Vec<(SweepParam, f64)>> {
    spec.sweep.iter().fold(vec![vec![]], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |&v| {
                    let mut cell = prefix.clone();
                    cell.push((axis.param, v));
                    cell
                })
            })
            .collect()
    })
}

/// Run every cell of the sweep. A failing cell is recorded and the rest
/// still run.
pub fn cmd_sweep(spec: &RunSpec) -> Result<Vec<SweepCell>> {
    if spec.sweep.is_empty() {
        return Err(Error::config("sweep", "no [[sweep]] axes given"));
    }
    let base_seed = spec.rounds.seed;
    let root = spec.output_dir.clone();
    fs::create_dir_all(&root)?;
    let cells: Vec<SweepCell> = sweep_cells(spec)
        .into_par_iter()
        .enumerate()
        .map(|(index, coords)| {
            let seed = derive_seed(base_seed, &[index as u64]);
            let dir = root.join(format!("cell_{index:03}"));
            let outcome = coords
                .iter()
                .try_fold(spec.clone(), |s, &(p, v)| s.with_override(p, v))
                .and_then(|mut s| {
                    s.rounds.seed = seed;
                    s.output_dir = dir.clone();
                    let (trace, summary) = execute(&s)?;
                    write_outputs(&dir, &trace, &summary)?;
                    Ok(summary)
                })
                .map_err(|e| e.to_string());
            SweepCell {
                index,
                seed,
                coords,
                dir,
                outcome,
            }
        })
        .collect();
    write_index(&root.join("index.csv"), spec, &cells)?;
    Ok(cells)
}

fn write_index(path: &Path, spec: &RunSpec, cells: &[SweepCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cell".to_string(), "seed".to_string()];
    header.extend(spec.sweep.iter().map(|a| param_name(a.param)));
    header.extend(
        [
            "status",
            "final_f",
            "final_g",
            "A_size",
            "eta_used",
            "epsilon_used",
            "w_bar_g",
            "error",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for cell in cells {
        let mut row = vec![cell.index.to_string(), cell.seed.to_string()];
        row.extend(cell.coords.iter().map(|(_, v)| v.to_string()));
        match &cell.outcome {
            Ok(s) => {
                let w_bar_g = match &s.w_bar_verdict {
                    AveragedVerdict::Available(v) => v.violation.to_string(),
                    AveragedVerdict::Unavailable { .. } => String::new(),
                };
                row.extend([
                    "ok".to_string(),
                    s.final_f.to_string(),
                    s.final_g.to_string(),
                    s.a_size.to_string(),
                    s.eta.to_string(),
                    s.epsilon.to_string(),
                    w_bar_g,
                    String::new(),
                ]);
            }
            Err(e) => {
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(e.clone());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

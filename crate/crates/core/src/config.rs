//! TOML run specification and its resolution into a problem plus a
//! concrete round configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{estimate_sigma, theorem1_params, Regime, TheoremInputs, TheoremOutputs};
use crate::compression::{CompressorKind, CompressorSpec};
use crate::engine::{Compression, RoundConfig};
use crate::error::{Error, Result};
use crate::numerics::{Domain, ModelVector};
use crate::problems::{
    build_np_classification, build_synthetic_linear_ball, load_csv, synthetic_np_dataset, FederatedProblem,
    LinearBallSpec, NpOptions, Partition, SyntheticSpec,
};
use crate::switching::SwitchMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub problem: ProblemSpec,
    pub rounds: RoundsSpec,
    pub switch: SwitchSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression: Option<CompressionSpec>,
    pub params: ParamMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepAxis>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub snapshot_cadence: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn one() -> usize {
    1
}

fn default_half_width() -> f64 {
    2.0
}

fn default_separation() -> f64 {
    4.0
}

fn default_delta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    #[default]
    Unbounded,
    /// `[-half_width, half_width]^d`.
    Box { half_width: f64 },
    /// Euclidean ball around the origin.
    Ball { radius: f64 },
}

impl DomainSpec {
    pub fn build(&self, dim: usize) -> Result<Domain> {
        match *self {
            DomainSpec::Unbounded => Ok(Domain::Unbounded),
            DomainSpec::Box { half_width } => Domain::cube(dim, half_width),
            DomainSpec::Ball { radius } => Domain::ball(ModelVector::zeros(dim), radius),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    NpCsv {
        path: PathBuf,
        #[serde(default)]
        partition: Partition,
        #[serde(default)]
        partition_seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        batch_size: Option<usize>,
        #[serde(default)]
        domain: DomainSpec,
    },
    NpSynthetic {
        rows: usize,
        d_feat: usize,
        class_balance: f64,
        #[serde(default = "default_separation")]
        separation: f64,
        seed: u64,
        #[serde(default)]
        partition: Partition,
        #[serde(default)]
        partition_seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        batch_size: Option<usize>,
        #[serde(default)]
        domain: DomainSpec,
    },
    LinearBall {
        c: Vec<f64>,
        r: f64,
        #[serde(default = "default_half_width")]
        half_width: f64,
        #[serde(default)]
        perturbation: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundsSpec {
    pub rounds: usize,
    pub local_steps: usize,
    pub clients: usize,
    pub participants: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchKind {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSpec {
    pub mode: SwitchKind,
    /// Soft-switch sharpness; defaults to `2 / epsilon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompressorConfig {
    Identity,
    TopK {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ratio: Option<f64>,
    },
    RandK {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ratio: Option<f64>,
    },
    UniformQuant {
        bits: u32,
    },
}

impl CompressorConfig {
    pub fn build(&self, dim: usize) -> Result<CompressorSpec> {
        let sparsifier = |random: bool, k: Option<usize>, ratio: Option<f64>| match (k, ratio) {
            (Some(k), None) => {
                let kind = if random {
                    CompressorKind::RandK { k }
                } else {
                    CompressorKind::TopK { k }
                };
                CompressorSpec::new(kind, dim)
            }
            (None, Some(r)) => CompressorSpec::sparsifier_with_ratio(random, r, dim),
            _ => Err(Error::InvalidCompressor("give exactly one of k and ratio".into())),
        };
        match *self {
            CompressorConfig::Identity => Ok(CompressorSpec::identity(dim)),
            CompressorConfig::TopK { k, ratio } => sparsifier(false, k, ratio),
            CompressorConfig::RandK { k, ratio } => sparsifier(true, k, ratio),
            CompressorConfig::UniformQuant { bits } => CompressorSpec::new(CompressorKind::UniformQuant { bits }, dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionSpec {
    pub uplink: CompressorConfig,
    pub downlink: CompressorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Value(f64),
    /// Sample spread of the per-client constraint values at `w_0`.
    Estimate(EstimateTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateTag {
    Estimate,
}

impl Default for SigmaSpec {
    fn default() -> Self {
        SigmaSpec::Value(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamMode {
    Manual {
        eta: f64,
        epsilon: f64,
    },
    /// Step size and threshold from the convergence guarantee. Unset
    /// bounds default to the domain diameter and the problem's Lipschitz
    /// constant.
    Theorem {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        distance: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
        #[serde(default)]
        sigma: SigmaSpec,
        #[serde(default = "default_delta")]
        delta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    LocalSteps,
    Participants,
    /// Fraction `m / n`, rounded to the nearest client count.
    Participation,
    /// `K / d` for every sparsifying compressor (turns compression on with
    /// top-k on both links if it was off).
    CompressionRatio,
    Eta,
    Epsilon,
    Rounds,
    Seed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

/// Everything needed to execute one run.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub config: RoundConfig,
    pub theorem: Option<(TheoremInputs, TheoremOutputs)>,
    pub epsilon: f64,
    pub beta: Option<f64>,
}

impl RunSpec {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let spec: RunSpec = toml::from_str(text).map_err(|e| Error::config(origin, e.to_string()))?;
        spec.validate(origin)?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let mut spec = Self::from_toml_str(&text, &path.display().to_string())?;
        // dataset paths are relative to the config file
        if let ProblemSpec::NpCsv { path: data, .. } = &mut spec.problem {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<serialize>", e.to_string()))
    }

    fn validate(&self, origin: &str) -> Result<()> {
        let err = |field: &str, msg: String| Err(Error::config(format!("{origin}: {field}"), msg));
        if self.snapshot_cadence == 0 {
            return err("snapshot_cadence", "must be at least 1".into());
        }
        if self.rounds.local_steps == 0 {
            return err("rounds.local_steps", "must be at least 1".into());
        }
        if self.rounds.participants == 0 || self.rounds.participants > self.rounds.clients {
            return err(
                "rounds.participants",
                format!("must lie in 1..={}", self.rounds.clients),
            );
        }
        if let ParamMode::Manual { eta, epsilon } = self.params {
            if !(eta.is_finite() && eta > 0.0) {
                return err("params.eta", format!("{eta} must be finite and positive"));
            }
            if !(epsilon.is_finite() && epsilon >= 0.0) {
                return err("params.epsilon", format!("{epsilon} must be finite and >= 0"));
            }
        }
        if let Some(beta) = self.switch.beta {
            if self.switch.mode == SwitchKind::Hard {
                return err("switch.beta", "only meaningful with mode = \"soft\"".into());
            }
            if !(beta.is_finite() && beta > 0.0) {
                return err("switch.beta", format!("{beta} must be finite and positive"));
            }
        }
        for (i, axis) in self.sweep.iter().enumerate() {
            if axis.values.is_empty() {
                return err(&format!("sweep[{i}].values"), "must not be empty".into());
            }
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<FederatedProblem> {
        let n = self.rounds.clients;
        match &self.problem {
            ProblemSpec::NpCsv {
                path,
                partition,
                partition_seed,
                batch_size,
                domain,
            } => {
                let data = load_csv(path)?;
                let opts = np_options(n, *partition, *partition_seed, *batch_size);
                build_np_classification(&data, &opts, domain.build(data.num_features())?)
            }
            ProblemSpec::NpSynthetic {
                rows,
                d_feat,
                class_balance,
                separation,
                seed,
                partition,
                partition_seed,
                batch_size,
                domain,
            } => {
                let data = synthetic_np_dataset(&SyntheticSpec {
                    rows: *rows,
                    d_feat: *d_feat,
                    class_balance: *class_balance,
                    separation: *separation,
                    seed: *seed,
                })?;
                let opts = np_options(n, *partition, *partition_seed, *batch_size);
                build_np_classification(&data, &opts, domain.build(*d_feat)?)
            }
            ProblemSpec::LinearBall {
                c,
                r,
                half_width,
                perturbation,
                seed,
            } => build_synthetic_linear_ball(&LinearBallSpec {
                direction: c.clone(),
                radius: *r,
                half_width: *half_width,
                clients: n,
                perturbation: *perturbation,
                seed: *seed,
            }),
        }
    }

    /// Turn the spec into a concrete round configuration for `problem`.
    pub fn resolve(&self, problem: &FederatedProblem) -> Result<ResolvedRun> {
        let dim = problem.dim();
        let compression = match &self.compression {
            None => Compression::Off,
            Some(c) => Compression::On {
                uplink: c.uplink.build(dim)?,
                downlink: c.downlink.build(dim)?,
            },
        };
        let r = &self.rounds;
        let (eta, epsilon, theorem) = match &self.params {
            ParamMode::Manual { eta, epsilon } => (*eta, *epsilon, None),
            ParamMode::Theorem {
                distance,
                lipschitz,
                sigma,
                delta,
            } => {
                let distance = match distance {
                    Some(d) => *d,
                    None => problem.domain().diameter().map_err(|_| {
                        Error::config(
                            "params.distance",
                            "the domain is unbounded; set a bounded domain or params.distance",
                        )
                    })?,
                };
                let (q, q0) = match &compression {
                    Compression::Off => (1.0, 1.0),
                    Compression::On { uplink, downlink } => (uplink.contraction_q(), downlink.contraction_q()),
                };
                let regime = if r.participants == r.clients {
                    Regime::Full
                } else if compression.is_on() {
                    Regime::Partial
                } else {
                    Regime::PartialUncompressed
                };
                let sigma = match sigma {
                    SigmaSpec::Value(s) => *s,
                    SigmaSpec::Estimate(_) => estimate_sigma(problem, &ModelVector::zeros(dim)),
                };
                let inputs = TheoremInputs {
                    regime,
                    distance,
                    lipschitz: lipschitz.unwrap_or(problem.lipschitz()),
                    local_steps: r.local_steps,
                    rounds: r.rounds,
                    clients: r.clients,
                    participants: r.participants,
                    q,
                    q0,
                    sigma,
                    delta: *delta,
                };
                let out = theorem1_params(&inputs)?;
                (out.eta, out.epsilon, Some((inputs, out)))
            }
        };
        let (switch, beta) = match self.switch.mode {
            SwitchKind::Hard => (SwitchMode::hard(epsilon)?, None),
            SwitchKind::Soft => {
                let beta = match self.switch.beta {
                    Some(b) => b,
                    None if epsilon > 0.0 => 2.0 / epsilon,
                    None => return Err(Error::config("switch.beta", "required when epsilon = 0")),
                };
                (SwitchMode::soft(epsilon, beta)?, Some(beta))
            }
        };
        let config = RoundConfig {
            rounds: r.rounds,
            local_steps: r.local_steps,
            clients: r.clients,
            participants: r.participants,
            eta,
            switch,
            compression,
            seed: r.seed,
            snapshot_cadence: self.snapshot_cadence,
            workers: r.workers,
        };
        config.validate(problem)?;
        Ok(ResolvedRun {
            config,
            theorem,
            epsilon,
            beta,
        })
    }

    /// The spec with one sweep coordinate applied.
    pub fn with_override(&self, param: SweepParam, value: f64) -> Result<RunSpec> {
        let mut s = self.clone();
        let count = |v: f64, what: &str| -> Result<usize> {
            if v.fract() != 0.0 || v < 0.0 {
                return Err(Error::config(format!("sweep.{what}"), format!("{v} is not a count")));
            }
            Ok(v as usize)
        };
        match param {
            SweepParam::LocalSteps => s.rounds.local_steps = count(value, "local_steps")?,
            SweepParam::Participants => s.rounds.participants = count(value, "participants")?,
            SweepParam::Participation => {
                if !(value > 0.0 && value <= 1.0) {
                    return Err(Error::config("sweep.participation", format!("{value} outside (0, 1]")));
                }
                s.rounds.participants = ((value * s.rounds.clients as f64).round() as usize).max(1);
            }
            SweepParam::CompressionRatio => {
                let ratio = Some(value);
                let apply = |c: &mut CompressorConfig| match c {
                    CompressorConfig::TopK { k, ratio: r } | CompressorConfig::RandK { k, ratio: r } => {
                        *k = None;
                        *r = ratio;
                    }
                    _ => {}
                };
                match &mut s.compression {
                    Some(c) => {
                        apply(&mut c.uplink);
                        apply(&mut c.downlink);
                    }
                    None => {
                        s.compression = Some(CompressionSpec {
                            uplink: CompressorConfig::TopK { k: None, ratio },
                            downlink: CompressorConfig::TopK { k: None, ratio },
                        })
                    }
                }
            }
            SweepParam::Eta | SweepParam::Epsilon => match &mut s.params {
                ParamMode::Manual { eta, epsilon } => {
                    if param == SweepParam::Eta {
                        *eta = value;
                    } else {
                        *epsilon = value;
                    }
                }
                ParamMode::Theorem { .. } => {
                    return Err(Error::config("sweep", "eta/epsilon sweeps need [params.manual]"))
                }
            },
            SweepParam::Rounds => s.rounds.rounds = count(value, "rounds")?,
            SweepParam::Seed => s.rounds.seed = value as u64,
        }
        s.sweep.clear();
        s.validate("sweep cell")?;
        Ok(s)
    }
}

fn np_options(clients: usize, partition: Partition, partition_seed: u64, batch_size: Option<usize>) -> NpOptions {
    NpOptions {
        clients,
        partition,
        partition_seed,
        batch_size,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NP: &str = r#"
output_dir = "runs/np"

[problem.np_synthetic]
rows = 200
d_feat = 6
class_balance = 0.4
seed = 3

[rounds]
rounds = 20
local_steps = 2
clients = 5
participants = 3
seed = 11

[switch]
mode = "soft"
beta = 30.0

[compression]
uplink = { kind = "top_k", ratio = 0.5 }
downlink = { kind = "uniform_quant", bits = 8 }

[params.manual]
eta = 0.05
epsilon = 0.1

[[sweep]]
param = "local_steps"
values = [1, 5]
"#;

    const BALL: &str = r#"
[problem.linear_ball]
c = [1.0, 1.0]
r = 1.0
perturbation = 0.3
seed = 2

[rounds]
rounds = 64
local_steps = 4
clients = 8
participants = 8

[switch]
mode = "hard"

[params.theorem]
"#;

    #[test]
    fn round_trip() {
        for text in [NP, BALL] {
            let spec = RunSpec::from_toml_str(text, "t").unwrap();
            let again = RunSpec::from_toml_str(&spec.to_toml_string().unwrap(), "t2").unwrap();
            assert_eq!(spec, again);
        }
    }

    #[test]
    fn defaults_fill_in() {
        let spec = RunSpec::from_toml_str(BALL, "t").unwrap();
        assert_eq!(spec.snapshot_cadence, 1);
        assert_eq!(spec.output_dir, PathBuf::from("out"));
        assert_eq!(spec.rounds.workers, 1);
        match spec.params {
            ParamMode::Theorem { sigma, delta, .. } => {
                assert_eq!(sigma, SigmaSpec::Value(0.0));
                assert_eq!(delta, 0.1);
            }
            _ => panic!("expected theorem mode"),
        }
        match spec.problem {
            ProblemSpec::LinearBall { half_width, .. } => assert_eq!(half_width, 2.0),
            _ => panic!("expected linear ball"),
        }
    }

    #[test]
    fn theorem_mode_rejects_manual_eta() {
        let text = BALL.replace("[params.theorem]", "[params.theorem]\neta = 0.1");
        assert!(RunSpec::from_toml_str(&text, "t").is_err());
    }

    #[test]
    fn sigma_can_be_estimated() {
        let text = BALL.replace("[params.theorem]", "[params.theorem]\nsigma = \"estimate\"");
        let spec = RunSpec::from_toml_str(&text, "t").unwrap();
        assert!(matches!(
            spec.params,
            ParamMode::Theorem {
                sigma: SigmaSpec::Estimate(_),
                ..
            }
        ));
    }

    #[test]
    fn errors_name_the_field() {
        let text = NP.replace("participants = 3", "participants = 9");
        let msg = RunSpec::from_toml_str(&text, "np.toml").unwrap_err().to_string();
        assert!(msg.contains("rounds.participants"), "{msg}");

        let text = NP.replace("rows = 200", "rows = \"many\"");
        let msg = RunSpec::from_toml_str(&text, "np.toml").unwrap_err().to_string();
        assert!(msg.contains("rows"), "{msg}");
    }

    #[test]
    fn theorem_resolution_on_the_ball() {
        let spec = RunSpec::from_toml_str(BALL, "t").unwrap();
        let problem = spec.build_problem().unwrap();
        let run = spec.resolve(&problem).unwrap();
        let (inputs, out) = run.theorem.unwrap();
        assert_eq!(inputs.regime, Regime::Full);
        assert!((inputs.distance - 4.0 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(inputs.lipschitz, problem.lipschitz());
        assert_eq!(out.gamma, 32.0);
        assert_eq!(run.config.eta, out.eta);
        assert_eq!(run.config.switch, SwitchMode::hard(out.epsilon).unwrap());
    }

    #[test]
    fn theorem_mode_needs_a_diameter() {
        let text = NP
            .replace("[params.manual]\neta = 0.05\nepsilon = 0.1", "[params.theorem]")
            .replace("[[sweep]]\nparam = \"local_steps\"\nvalues = [1, 5]", "");
        let spec = RunSpec::from_toml_str(&text, "t").unwrap();
        let problem = spec.build_problem().unwrap();
        assert!(spec.resolve(&problem).is_err());
    }

    #[test]
    fn soft_beta_defaults_to_two_over_epsilon() {
        let text = NP.replace("beta = 30.0\n", "");
        let spec = RunSpec::from_toml_str(&text, "t").unwrap();
        let problem = spec.build_problem().unwrap();
        let run = spec.resolve(&problem).unwrap();
        assert_eq!(run.beta, Some(20.0));
        assert_eq!(run.config.switch, SwitchMode::soft(0.1, 20.0).unwrap());
    }

    #[test]
    fn overrides() {
        let spec = RunSpec::from_toml_str(NP, "t").unwrap();
        let cell = spec.with_override(SweepParam::Participation, 1.0).unwrap();
        assert_eq!(cell.rounds.participants, 5);
        assert!(cell.sweep.is_empty());
        let cell = spec.with_override(SweepParam::CompressionRatio, 0.25).unwrap();
        assert_eq!(
            cell.compression.unwrap().uplink,
            CompressorConfig::TopK {
                k: None,
                ratio: Some(0.25)
            }
        );
        assert!(spec.with_override(SweepParam::LocalSteps, 1.5).is_err());
        assert!(spec.with_override(SweepParam::Participants, 0.0).is_err());
        let ball = RunSpec::from_toml_str(BALL, "t").unwrap();
        assert!(ball.with_override(SweepParam::Eta, 0.1).is_err());
    }

    #[test]
    fn compressor_configs() {
        assert_eq!(
            CompressorConfig::TopK {
                k: Some(3),
                ratio: None
            }
            .build(30)
            .unwrap()
            .kind(),
            CompressorKind::TopK { k: 3 }
        );
        assert_eq!(
            CompressorConfig::RandK {
                k: None,
                ratio: Some(0.1)
            }
            .build(30)
            .unwrap()
            .kind(),
            CompressorKind::RandK { k: 3 }
        );
        assert!(CompressorConfig::TopK {
            k: Some(3),
            ratio: Some(0.1)
        }
        .build(30)
        .is_err());
        assert!(CompressorConfig::TopK { k: None, ratio: None }.build(30).is_err());
    }
}

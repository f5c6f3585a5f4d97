//! Contractive compressors and the error-feedback recursions around them.
//!
//! A compressor `C` is contractive with accuracy `q` when
//! `E ||C(v) - v||^2 <= (1 - q) ||v||^2`. Uplink messages use EF14-style
//! residual accumulation; the downlink compresses successive model
//! differences.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ModelVector;

const INDEX_BYTES: u64 = 4;
const VALUE_BYTES: u64 = 8;
const CALIBRATION_VECTORS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompressorKind {
    Identity,
    TopK {
        k: usize,
    },
    RandK {
        k: usize,
    },
    /// Per-vector max-abs scaled uniform grid with `2^bits` levels.
    UniformQuant {
        bits: u32,
    },
}

/// A compressor bound to a model dimension, with its declared contraction
/// parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressorSpec {
    kind: CompressorKind,
    dim: usize,
    q: f64,
    calibrated_q: Option<f64>,
}

impl CompressorSpec {
    pub fn new(kind: CompressorKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidCompressor("dimension must be positive".into()));
        }
        let (q, calibrated_q) = match kind {
            CompressorKind::Identity => (1.0, None),
            CompressorKind::TopK { k } | CompressorKind::RandK { k } => {
                if k == 0 || k > dim {
                    return Err(Error::InvalidCompressor(format!("k = {k} must lie in 1..={dim}")));
                }
                (k as f64 / dim as f64, None)
            }
            CompressorKind::UniformQuant { bits } => {
                if !(2..=31).contains(&bits) {
                    return Err(Error::InvalidCompressor(format!(
                        "quantizer bits = {bits} must lie in 2..=31"
                    )));
                }
                // The max-abs entry is reproduced exactly and every other
                // entry moves by at most half a grid step M/(L-1), while
                // ||v||^2 >= M^2. Hence ||C(v)-v||^2 <= (d-1)/(L-1)^2 ||v||^2.
                let gaps = ((1u64 << bits) - 1) as f64;
                let q = 1.0 - (dim as f64 - 1.0) / (gaps * gaps);
                if q <= 0.0 {
                    return Err(Error::InvalidCompressor(format!(
                        "{bits}-bit quantizer is not certifiably contractive at d = {dim}"
                    )));
                }
                let spec = CompressorSpec {
                    kind,
                    dim,
                    q,
                    calibrated_q: None,
                };
                let calibrated = spec.calibrate();
                (q, Some(calibrated))
            }
        };
        Ok(CompressorSpec {
            kind,
            dim,
            q,
            calibrated_q,
        })
    }

    pub fn identity(dim: usize) -> Self {
        CompressorSpec {
            kind: CompressorKind::Identity,
            dim,
            q: 1.0,
            calibrated_q: None,
        }
    }

    /// Top-K or Rand-K with `k = ceil(ratio * dim)`.
    pub fn sparsifier_with_ratio(random: bool, ratio: f64, dim: usize) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::InvalidCompressor(format!("ratio {ratio} outside (0, 1]")));
        }
        let k = ((ratio * dim as f64).ceil() as usize).clamp(1, dim);
        let kind = if random {
            CompressorKind::RandK { k }
        } else {
            CompressorKind::TopK { k }
        };
        CompressorSpec::new(kind, dim)
    }

    pub fn kind(&self) -> CompressorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The declared accuracy `q` in `(0, 1]`.
    pub fn contraction_q(&self) -> f64 {
        self.q
    }

    /// For the quantizer: the smallest observed `1 - ||C(v)-v||^2/||v||^2`
    /// over a fixed Gaussian calibration set. Informational only.
    pub fn calibrated_q(&self) -> Option<f64> {
        self.calibrated_q
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, CompressorKind::Identity)
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self.kind, CompressorKind::RandK { .. })
    }

    pub fn message_bytes(&self) -> u64 {
        message_bytes(self.kind, self.dim)
    }

    pub fn compress<R: RngCore + ?Sized>(&self, v: &ModelVector, rng: &mut R) -> Result<ModelVector> {
        if v.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.dim(),
            });
        }
        if v.is_zero() {
            return Ok(v.clone());
        }
        match self.kind {
            CompressorKind::Identity => Ok(v.clone()),
            CompressorKind::TopK { k } => Ok(top_k(v, k)),
            CompressorKind::RandK { k } => {
                let mut out = vec![0.0; self.dim];
                for i in rand::seq::index::sample(rng, self.dim, k) {
                    out[i] = v.as_slice()[i];
                }
                ModelVector::new(out)
            }
            CompressorKind::UniformQuant { bits } => uniform_quant(v, bits),
        }
    }

    fn calibrate(&self) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7175_616e_7421);
        (0..CALIBRATION_VECTORS)
            .map(|_| {
                let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                let v = ModelVector::new(v).expect("gaussian draws are finite");
                let c = self.compress(&v, &mut rng).expect("dimension matches");
                let err = c.checked_sub(&v).expect("dimension matches").norm_sq();
                1.0 - err / v.norm_sq()
            })
            .fold(1.0, f64::min)
    }
}

fn top_k(v: &ModelVector, k: usize) -> ModelVector {
    let x = v.as_slice();
    let mut order: Vec<usize> = (0..x.len()).collect();
    // Stable sort: equal magnitudes keep ascending index order.
    order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()));
    let mut out = vec![0.0; x.len()];
    for &i in &order[..k] {
        out[i] = x[i];
    }
    ModelVector::new(out).expect("entries copied from a finite vector")
}

fn uniform_quant(v: &ModelVector, bits: u32) -> Result<ModelVector> {
    let max_abs = v.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gaps = ((1u64 << bits) - 1) as f64;
    let out = v
        .as_slice()
        .iter()
        .map(|&x| {
            let idx = ((x / max_abs + 1.0) * gaps / 2.0).round().clamp(0.0, gaps);
            max_abs * (2.0 * idx / gaps - 1.0)
        })
        .collect();
    ModelVector::new(out)
}

/// Bytes on the wire for one compressed message of dimension `d`: dense
/// doubles for identity, (value, u32 index) pairs for sparsifiers, packed
/// codes plus one f64 scale for the quantizer.
pub fn message_bytes(kind: CompressorKind, d: usize) -> u64 {
    let d = d as u64;
    match kind {
        CompressorKind::Identity => VALUE_BYTES * d,
        CompressorKind::TopK { k } | CompressorKind::RandK { k } => k as u64 * (VALUE_BYTES + INDEX_BYTES),
        CompressorKind::UniformQuant { bits } => (d * bits as u64).div_ceil(8) + VALUE_BYTES,
    }
}

/// A client's uplink error-feedback memory.
#[derive(Debug, Clone, PartialEq)]
pub struct EfResidual {
    pub value: ModelVector,
    pub owner: usize,
}

impl EfResidual {
    pub fn zero(owner: usize, dim: usize) -> Self {
        EfResidual {
            value: ModelVector::zeros(dim),
            owner,
        }
    }
}

/// One EF14 uplink step: send `C(e + delta)` and keep what was dropped.
pub fn uplink_ef_step<R: RngCore + ?Sized>(
    residual: &EfResidual,
    delta: &ModelVector,
    spec: &CompressorSpec,
    rng: &mut R,
) -> Result<(ModelVector, EfResidual)> {
    let corrected = residual.value.checked_add(delta)?;
    let sent = spec.compress(&corrected, rng)?;
    let value = corrected.checked_sub(&sent)?;
    Ok((
        sent,
        EfResidual {
            value,
            owner: residual.owner,
        },
    ))
}

/// One downlink step: broadcast `C0(x_{t+1} - w_t)` and return
/// `(message, w_{t+1})`.
pub fn downlink_ef_step<R: RngCore + ?Sized>(
    server_model: &ModelVector,
    broadcast_base: &ModelVector,
    spec: &CompressorSpec,
    rng: &mut R,
) -> Result<(ModelVector, ModelVector)> {
    let diff = server_model.checked_sub(broadcast_base)?;
    let message = spec.compress(&diff, rng)?;
    // w + (x - w) is not always x in floating point; with C0 = Id the
    // receiver holds x_{t+1} itself.
    let next = if spec.is_identity() {
        server_model.clone()
    } else {
        broadcast_base.checked_add(&message)?
    };
    Ok((message, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mv(v: &[f64]) -> ModelVector {
        ModelVector::new(v.to_vec()).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn top_k_keeps_largest() {
        let spec = CompressorSpec::new(CompressorKind::TopK { k: 1 }, 4).unwrap();
        let v = mv(&[3.0, 1.0, 1.0, 1.0]);
        let c = spec.compress(&v, &mut rng()).unwrap();
        assert_eq!(c, mv(&[3.0, 0.0, 0.0, 0.0]));
        let err = c.checked_sub(&v).unwrap().norm_sq();
        assert_eq!(err, 3.0);
        assert!(err <= (1.0 - spec.contraction_q()) * v.norm_sq());
        assert_eq!(spec.contraction_q(), 0.25);
    }

    #[test]
    fn top_k_ties_go_to_lowest_index() {
        let spec = CompressorSpec::new(CompressorKind::TopK { k: 2 }, 4).unwrap();
        let c = spec.compress(&mv(&[1.0, -2.0, 2.0, 2.0]), &mut rng()).unwrap();
        assert_eq!(c, mv(&[0.0, -2.0, 2.0, 0.0]));
    }

    #[test]
    fn identity_is_bit_exact() {
        let spec = CompressorSpec::identity(2);
        assert_eq!(spec.compress(&mv(&[5.0, -2.0]), &mut rng()).unwrap(), mv(&[5.0, -2.0]));
    }

    #[test]
    fn quantizer_matches_enumerated_grid() {
        // Independent oracle: enumerate the 4 levels on [-1, 1] and take the nearest.
        let levels: Vec<f64> = (0..4).map(|i| -1.0 + 2.0 * i as f64 / 3.0).collect();
        let nearest = |x: f64| {
            *levels
                .iter()
                .min_by(|a, b| (x - **a).abs().total_cmp(&(x - **b).abs()))
                .unwrap()
        };
        let spec = CompressorSpec::new(CompressorKind::UniformQuant { bits: 2 }, 2).unwrap();
        let out = spec.compress(&mv(&[1.0, -0.3]), &mut rng()).unwrap();
        assert_eq!(out.as_slice()[0], 1.0);
        assert!((out.as_slice()[1] - nearest(-0.3)).abs() < 1e-15);
        assert!((out.as_slice()[1] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_passes_through_every_kind() {
        let kinds = [
            CompressorKind::Identity,
            CompressorKind::TopK { k: 1 },
            CompressorKind::RandK { k: 2 },
            CompressorKind::UniformQuant { bits: 4 },
        ];
        for kind in kinds {
            let spec = CompressorSpec::new(kind, 3).unwrap();
            let z = ModelVector::zeros(3);
            assert_eq!(spec.compress(&z, &mut rng()).unwrap(), z);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(CompressorSpec::new(CompressorKind::TopK { k: 5 }, 4).is_err());
        assert!(CompressorSpec::new(CompressorKind::RandK { k: 0 }, 4).is_err());
        assert!(CompressorSpec::new(CompressorKind::UniformQuant { bits: 1 }, 4).is_err());
        // 2-bit grid cannot certify contraction at d = 30
        assert!(CompressorSpec::new(CompressorKind::UniformQuant { bits: 2 }, 30).is_err());
        let spec = CompressorSpec::new(CompressorKind::TopK { k: 2 }, 4).unwrap();
        assert!(spec.compress(&mv(&[1.0, 2.0]), &mut rng()).is_err());
    }

    #[test]
    fn quantizer_declared_q_is_below_calibration() {
        let spec = CompressorSpec::new(CompressorKind::UniformQuant { bits: 8 }, 30).unwrap();
        assert!(spec.contraction_q() <= spec.calibrated_q().unwrap());
        assert!(spec.contraction_q() > 0.99);
    }

    #[test]
    fn byte_accounting() {
        assert_eq!(message_bytes(CompressorKind::Identity, 100), 800);
        assert_eq!(message_bytes(CompressorKind::TopK { k: 10 }, 100), 120);
        assert_eq!(message_bytes(CompressorKind::UniformQuant { bits: 4 }, 100), 58);
    }

    #[test]
    fn uplink_examples() {
        let top1 = CompressorSpec::new(CompressorKind::TopK { k: 1 }, 2).unwrap();
        let (sent, res) = uplink_ef_step(&EfResidual::zero(0, 2), &mv(&[3.0, 1.0]), &top1, &mut rng()).unwrap();
        assert_eq!(sent, mv(&[3.0, 0.0]));
        assert_eq!(res.value, mv(&[0.0, 1.0]));

        let id = CompressorSpec::identity(2);
        let carried = EfResidual {
            value: mv(&[0.0, 1.0]),
            owner: 0,
        };
        let (sent, res) = uplink_ef_step(&carried, &ModelVector::zeros(2), &id, &mut rng()).unwrap();
        assert_eq!(sent, mv(&[0.0, 1.0]));
        assert_eq!(res.value, ModelVector::zeros(2));

        let (sent, res) = uplink_ef_step(&EfResidual::zero(0, 2), &ModelVector::zeros(2), &top1, &mut rng()).unwrap();
        assert!(sent.is_zero() && res.value.is_zero());
    }

    #[test]
    fn downlink_examples() {
        let top1 = CompressorSpec::new(CompressorKind::TopK { k: 1 }, 2).unwrap();
        let w = mv(&[1.0, 1.0]);
        let x = mv(&[1.5, 1.2]);
        let (msg, next) = downlink_ef_step(&x, &w, &top1, &mut rng()).unwrap();
        assert_eq!(msg, mv(&[0.5, 0.0]));
        assert_eq!(next, mv(&[1.5, 1.0]));

        let (msg, next) = downlink_ef_step(&w, &w, &top1, &mut rng()).unwrap();
        assert!(msg.is_zero());
        assert_eq!(next, w);

        // identity: the receiver ends up with x bit-exactly, even when
        // w + (x - w) would round differently
        let id = CompressorSpec::identity(2);
        let x = mv(&[1e-17, 0.1]);
        let (_, next) = downlink_ef_step(&x, &mv(&[1.0, 0.7]), &id, &mut rng()).unwrap();
        assert_eq!(next, x);
    }

    proptest! {
        #[test]
        fn deterministic_contraction(v in prop::collection::vec(-100.0..100.0f64, 1..40), k in 1usize..40, bits in 4u32..12) {
            let d = v.len();
            let v = mv(&v);
            let mut specs = vec![
                CompressorSpec::identity(d),
                CompressorSpec::new(CompressorKind::TopK { k: k.min(d) }, d).unwrap(),
            ];
            if let Ok(q) = CompressorSpec::new(CompressorKind::UniformQuant { bits }, d) {
                specs.push(q);
            }
            for spec in specs {
                let c = spec.compress(&v, &mut rng()).unwrap();
                let err = c.checked_sub(&v).unwrap().norm_sq();
                prop_assert!(err <= (1.0 - spec.contraction_q()) * v.norm_sq() + 1e-12);
            }
        }

        #[test]
        fn sparsifiers_are_scale_equivariant(
            v in prop::collection::vec(-10.0..10.0f64, 8),
            c in 0.01..100.0f64,
            seed in any::<u64>(),
        ) {
            let v = mv(&v);
            let scaled = v.scaled(c).unwrap();
            for kind in [CompressorKind::TopK { k: 3 }, CompressorKind::RandK { k: 3 }] {
                let spec = CompressorSpec::new(kind, 8).unwrap();
                let a = spec.compress(&scaled, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                let b = spec.compress(&v, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().scaled(c).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn ef_residual_telescopes(
            deltas in prop::collection::vec(prop::collection::vec(-64i32..64, 6), 1..30),
            seed in any::<u64>(),
        ) {
            // small-integer deltas keep every sum exact
            let spec = CompressorSpec::new(CompressorKind::TopK { k: 2 }, 6).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut residual = EfResidual::zero(0, 6);
            let mut sent_sum = ModelVector::zeros(6);
            let mut delta_sum = ModelVector::zeros(6);
            for d in deltas {
                let delta = mv(&d.iter().map(|&x| x as f64).collect::<Vec<_>>());
                let (sent, next) = uplink_ef_step(&residual, &delta, &spec, &mut rng).unwrap();
                sent_sum = sent_sum.checked_add(&sent).unwrap();
                delta_sum = delta_sum.checked_add(&delta).unwrap();
                residual = next;
            }
            prop_assert_eq!(residual.value.checked_add(&sent_sum).unwrap(), delta_sum);
        }
    }
}

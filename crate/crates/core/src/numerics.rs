//! Dense vectors and compact convex domains with closed-form Euclidean
//! projection.
//!
//! Every reduction here runs in ascending index order so that results are
//! bit-reproducible regardless of how callers schedule work.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// A dense real vector whose entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("vector entry {i}")));
        }
        Ok(ModelVector(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    fn ensure_dim(&self, other: &ModelVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &ModelVector, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_dim(other)?;
        ModelVector::new(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn checked_add(&self, other: &ModelVector) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn checked_sub(&self, other: &ModelVector) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: f64, other: &ModelVector) -> Result<Self> {
        self.zip_with(other, |a, b| a + alpha * b)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        ModelVector::new(self.0.iter().map(|&a| c * a).collect())
    }

    pub fn dot(&self, other: &ModelVector) -> Result<f64> {
        self.ensure_dim(other)?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(&self, other: &ModelVector) -> Result<f64> {
        Ok(self.checked_sub(other)?.norm())
    }

    /// Arithmetic mean, accumulated in the order given.
    pub fn mean<'a, I>(vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ModelVector>,
    {
        let mut iter = vectors.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidProblem("mean of an empty set of vectors".into()))?;
        let mut acc = first.0.clone();
        let mut count = 1usize;
        for v in iter {
            first.ensure_dim(v)?;
            for (a, b) in acc.iter_mut().zip(&v.0) {
                *a += b;
            }
            count += 1;
        }
        let inv = count as f64;
        ModelVector::new(acc.into_iter().map(|a| a / inv).collect())
    }

    /// Weighted sum `sum_i weights[i] * vectors[i] / sum_i weights[i]`, in order.
    pub fn weighted_mean(vectors: &[&ModelVector], weights: &[f64]) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::InvalidProblem("weighted mean of nothing".into()))?;
        let mut acc = vec![0.0; first.dim()];
        let mut total = 0.0;
        for (v, &w) in vectors.iter().zip(weights) {
            first.ensure_dim(v)?;
            for (a, b) in acc.iter_mut().zip(&v.0) {
                *a += w * b;
            }
            total += w;
        }
        if total == 0.0 {
            return Err(Error::ZeroWeights);
        }
        ModelVector::new(acc.into_iter().map(|a| a / total).collect())
    }
}

impl TryFrom<Vec<f64>> for ModelVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ModelVector::new(v)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// The feasible set X of the problem.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Unbounded,
    Box { lower: ModelVector, upper: ModelVector },
    Ball { center: ModelVector, radius: f64 },
}

impl Domain {
    pub fn unbounded() -> Self {
        Domain::Unbounded
    }

    pub fn boxed(lower: ModelVector, upper: ModelVector) -> Result<Self> {
        lower.ensure_dim(&upper)?;
        if lower.0.iter().zip(&upper.0).any(|(l, u)| l > u) {
            return Err(Error::InvalidDomain("box lower bound exceeds upper bound".into()));
        }
        Ok(Domain::Box { lower, upper })
    }

    /// The cube `[-half_width, half_width]^dim`.
    pub fn cube(dim: usize, half_width: f64) -> Result<Self> {
        if !(half_width.is_finite() && half_width >= 0.0) {
            return Err(Error::InvalidDomain(format!("cube half-width {half_width}")));
        }
        Domain::boxed(ModelVector(vec![-half_width; dim]), ModelVector(vec![half_width; dim]))
    }

    pub fn ball(center: ModelVector, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidDomain(format!("ball radius {radius}")));
        }
        Ok(Domain::Ball { center, radius })
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Domain::Unbounded => None,
            Domain::Box { lower, .. } => Some(lower.dim()),
            Domain::Ball { center, .. } => Some(center.dim()),
        }
    }

    pub fn is_compact(&self) -> bool {
        !matches!(self, Domain::Unbounded)
    }

    fn check_dim(&self, x: &ModelVector) -> Result<()> {
        match self.dim() {
            Some(d) if d != x.dim() => Err(Error::DimensionMismatch {
                expected: d,
                found: x.dim(),
            }),
            _ => Ok(()),
        }
    }

    pub fn contains(&self, x: &ModelVector) -> bool {
        match self {
            Domain::Unbounded => true,
            Domain::Box { lower, upper } => {
                x.dim() == lower.dim()
                    && x.0
                        .iter()
                        .zip(lower.0.iter().zip(&upper.0))
                        .all(|(v, (l, u))| l <= v && v <= u)
            }
            Domain::Ball { center, radius } => x.dim() == center.dim() && distance(&x.0, &center.0) <= *radius,
        }
    }

    /// Euclidean projection onto the domain. Points already inside are
    /// returned unchanged, bit for bit.
    pub fn project(&self, x: &ModelVector) -> Result<ModelVector> {
        self.check_dim(x)?;
        match self {
            Domain::Unbounded => Ok(x.clone()),
            Domain::Box { lower, upper } => Ok(ModelVector(
                x.0.iter()
                    .zip(lower.0.iter().zip(&upper.0))
                    .map(|(&v, (&l, &u))| v.clamp(l, u))
                    .collect(),
            )),
            Domain::Ball { center, radius } => {
                let dist = distance(&x.0, &center.0);
                if dist <= *radius {
                    return Ok(x.clone());
                }
                // Radial scaling can land one ulp outside the ball; shrink
                // until the membership test agrees so projection stays idempotent.
                let mut scale = *radius / dist;
                loop {
                    let p: Vec<f64> = x.0.iter().zip(&center.0).map(|(&v, &c)| c + (v - c) * scale).collect();
                    if distance(&p, &center.0) <= *radius {
                        return ModelVector::new(p);
                    }
                    scale *= 1.0 - f64::EPSILON;
                }
            }
        }
    }

    pub fn diameter(&self) -> Result<f64> {
        match self {
            Domain::Unbounded => Err(Error::NoFiniteDiameter),
            Domain::Box { lower, upper } => Ok(distance(&upper.0, &lower.0)),
            Domain::Ball { radius, .. } => Ok(2.0 * radius),
        }
    }

    /// `sup_{w in X} ||w||`, if the domain is bounded.
    pub fn max_norm(&self) -> Option<f64> {
        match self {
            Domain::Unbounded => None,
            Domain::Box { lower, upper } => Some(
                lower
                    .0
                    .iter()
                    .zip(&upper.0)
                    .map(|(l, u)| {
                        let m = l.abs().max(u.abs());
                        m * m
                    })
                    .sum::<f64>()
                    .sqrt(),
            ),
            Domain::Ball { center, radius } => Some(center.norm() + radius),
        }
    }

    /// Axis-aligned bounding box of a compact domain.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Domain::Unbounded => None,
            Domain::Box { lower, upper } => Some((lower.0.clone(), upper.0.clone())),
            Domain::Ball { center, radius } => Some((
                center.0.iter().map(|c| c - radius).collect(),
                center.0.iter().map(|c| c + radius).collect(),
            )),
        }
    }

    /// A uniformly random point of a compact domain (rejection sampling for
    /// the ball). Used by property checks.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<ModelVector> {
        let (lo, hi) = self.bounding_box()?;
        loop {
            let p: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .map(|(&l, &h)| if l == h { l } else { rng.gen_range(l..=h) })
                .collect();
            let p = ModelVector(p);
            if self.contains(&p) {
                return Some(p);
            }
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mv(v: &[f64]) -> ModelVector {
        ModelVector::new(v.to_vec()).unwrap()
    }

    fn unit_box() -> Domain {
        Domain::boxed(mv(&[0.0, 0.0]), mv(&[1.0, 1.0])).unwrap()
    }

    #[test]
    fn rejects_non_finite_entries() {
        assert!(ModelVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ModelVector::new(vec![f64::INFINITY]).is_err());
        assert!(mv(&[1e308]).scaled(10.0).is_err());
    }

    #[test]
    fn binary_ops_require_equal_dims() {
        let err = mv(&[1.0]).checked_add(&mv(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 1, found: 2 }));
    }

    #[test]
    fn ball_projection_scales_radially() {
        let ball = Domain::ball(ModelVector::zeros(2), 1.0).unwrap();
        let p = ball.project(&mv(&[3.0, 4.0])).unwrap();
        assert!((p.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((p.as_slice()[1] - 0.8).abs() < 1e-15);
        assert!(ball.contains(&p));
    }

    #[test]
    fn box_projection_clamps() {
        let b = unit_box();
        assert_eq!(b.project(&mv(&[0.5, 0.5])).unwrap(), mv(&[0.5, 0.5]));
        assert_eq!(b.project(&mv(&[-2.0, 3.0])).unwrap(), mv(&[0.0, 1.0]));
    }

    #[test]
    fn projection_dimension_mismatch() {
        assert!(unit_box().project(&mv(&[1.0])).is_err());
    }

    #[test]
    fn diameters() {
        let ball = Domain::ball(ModelVector::zeros(3), 1.0).unwrap();
        assert_eq!(ball.diameter().unwrap(), 2.0);
        assert_eq!(unit_box().diameter().unwrap(), 2f64.sqrt());
        assert!(matches!(Domain::Unbounded.diameter(), Err(Error::NoFiniteDiameter)));
    }

    #[test]
    fn invalid_domains() {
        assert!(Domain::boxed(mv(&[1.0]), mv(&[0.0])).is_err());
        assert!(Domain::ball(mv(&[0.0]), 0.0).is_err());
        assert!(Domain::ball(mv(&[0.0]), f64::INFINITY).is_err());
    }

    #[test]
    fn weighted_mean_with_unit_weights_matches_mean_formula() {
        let a = mv(&[1.0, 1.0]);
        let b = mv(&[3.0, 3.0]);
        let m = ModelVector::weighted_mean(&[&a, &b], &[1.0, 1.0]).unwrap();
        assert_eq!(m, mv(&[2.0, 2.0]));
    }

    fn domains() -> Vec<Domain> {
        vec![
            Domain::cube(3, 1.5).unwrap(),
            Domain::ball(mv(&[0.5, -1.0, 2.0]), 0.75).unwrap(),
            Domain::boxed(mv(&[-1.0, 0.0, 2.0]), mv(&[0.0, 0.0, 5.0])).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_feasible(x in prop::collection::vec(-10.0..10.0f64, 3)) {
            let x = mv(&x);
            for dom in domains() {
                let p = dom.project(&x).unwrap();
                prop_assert!(dom.contains(&p));
                prop_assert_eq!(dom.project(&p).unwrap(), p);
            }
        }

        #[test]
        fn projection_is_non_expansive(
            a in prop::collection::vec(-10.0..10.0f64, 3),
            b in prop::collection::vec(-10.0..10.0f64, 3),
        ) {
            let (a, b) = (mv(&a), mv(&b));
            for dom in domains() {
                let pa = dom.project(&a).unwrap();
                let pb = dom.project(&b).unwrap();
                prop_assert!(pa.distance(&pb).unwrap() <= a.distance(&b).unwrap() + 1e-12);
            }
        }

        #[test]
        fn interior_points_are_fixed(seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for dom in domains() {
                let p = dom.sample(&mut rng).unwrap();
                prop_assert_eq!(dom.project(&p).unwrap(), p);
            }
        }
    }
}

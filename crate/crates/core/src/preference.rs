//! Directional preferences and linear scalarization.
//!
//! A preference is a unit vector `v` in reward space; the reward it induces
//! for a response is the projection `v · r`. In two dimensions a preference
//! is fully described by its angle `atan2(v2, v1)`, and training draws that
//! angle uniformly from an arc.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::reward_model::RewardVector;
use crate::rng::{rng_from_seed, standard_normal};
use crate::{Error, Result};

/// Absolute tolerance on `| ||v|| - 1 |`.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// A unit vector in reward space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DirectionalPreference {
    components: Vec<f64>,
}

impl TryFrom<Vec<f64>> for DirectionalPreference {
    type Error = Error;

    fn try_from(components: Vec<f64>) -> Result<Self> {
        Self::new(components)
    }
}

impl From<DirectionalPreference> for Vec<f64> {
    fn from(v: DirectionalPreference) -> Self {
        v.components
    }
}

impl DirectionalPreference {
    /// Wraps `components`, which must already have unit norm.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.len() < 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: components.len(),
            });
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("preference {components:?}")));
        }
        let norm = l2_norm(&components);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotUnit(norm));
        }
        Ok(Self { components })
    }

    /// Rescales `raw` onto the unit sphere.
    pub fn normalized(mut raw: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&raw);
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize vector with norm {norm}"
            )));
        }
        raw.iter_mut().for_each(|c| *c /= norm);
        Self::new(raw)
    }

    /// `<cos θ, sin θ>`.
    pub fn from_angle(theta: f64) -> Self {
        Self {
            components: alloc::vec![libm::cos(theta), libm::sin(theta)],
        }
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn angle(&self) -> Result<f64> {
        angle_of(self)
    }
}

fn l2_norm(xs: &[f64]) -> f64 {
    libm::sqrt(xs.iter().map(|x| x * x).sum::<f64>())
}

/// An arc of 2-D preference angles, open-interval bounded by ±π/2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArcRepr", into = "ArcRepr")]
pub struct PreferenceArc {
    low: f64,
    high: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArcRepr {
    low: f64,
    high: f64,
}

impl TryFrom<ArcRepr> for PreferenceArc {
    type Error = Error;

    fn try_from(r: ArcRepr) -> Result<Self> {
        Self::new(r.low, r.high)
    }
}

impl From<PreferenceArc> for ArcRepr {
    fn from(a: PreferenceArc) -> Self {
        Self {
            low: a.low,
            high: a.high,
        }
    }
}

impl Default for PreferenceArc {
    /// From `<√2/2, -√2/2>` to `<1, 0>`.
    fn default() -> Self {
        Self {
            low: -core::f64::consts::FRAC_PI_4,
            high: 0.0,
        }
    }
}

impl PreferenceArc {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite()) {
            return Err(Error::InvalidArc(format!(
                "non-finite bounds ({low}, {high})"
            )));
        }
        if low >= high {
            return Err(Error::InvalidArc(format!(
                "angle_low {low} must be below angle_high {high}"
            )));
        }
        if low <= -FRAC_PI_2 || high >= FRAC_PI_2 {
            return Err(Error::InvalidArc(format!(
                "angles ({low}, {high}) must lie inside (-pi/2, pi/2)"
            )));
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    /// Angle at fraction `u ∈ [0, 1]` along the arc.
    pub fn angle_at(&self, u: f64) -> f64 {
        if u >= 1.0 {
            return self.high;
        }
        self.low + (self.high - self.low) * u
    }

    /// Preference at fraction `u ∈ [0, 1]` along the arc.
    pub fn point_at(&self, u: f64) -> DirectionalPreference {
        DirectionalPreference::from_angle(self.angle_at(u))
    }

    pub fn contains_angle(&self, theta: f64, tol: f64) -> bool {
        theta >= self.low - tol && theta <= self.high + tol
    }

    /// `n` equally spaced angles including both endpoints.
    pub fn equally_spaced(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => alloc::vec![self.angle_at(0.5)],
            _ => (0..n)
                .map(|i| self.angle_at(i as f64 / (n - 1) as f64))
                .collect(),
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DirectionalPreference {
        self.point_at(rng.gen::<f64>())
    }
}

/// Distribution preferences are drawn from during alignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PreferenceDistribution {
    /// Uniform angle on a 2-D arc.
    Arc { arc: PreferenceArc },
    /// Always the same direction; collapses the loop to scalar-reward RSF.
    Fixed { v: DirectionalPreference },
    /// Normalized Gaussian folded into one orthant (any `k`). `signs[i]` is
    /// the sign of component `i`.
    Orthant { signs: Vec<i8> },
}

impl Default for PreferenceDistribution {
    fn default() -> Self {
        Self::Arc {
            arc: PreferenceArc::default(),
        }
    }
}

impl PreferenceDistribution {
    pub fn dim(&self) -> usize {
        match self {
            Self::Arc { .. } => 2,
            Self::Fixed { v } => v.dim(),
            Self::Orthant { signs } => signs.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::Orthant { signs } = self {
            if signs.len() < 2 || signs.iter().any(|s| *s != 1 && *s != -1) {
                return Err(Error::InvalidArgument(format!(
                    "orthant signs must be ±1 with at least two entries, got {signs:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DirectionalPreference {
        match self {
            Self::Arc { arc } => arc.sample(rng),
            Self::Fixed { v } => v.clone(),
            Self::Orthant { signs } => loop {
                let raw: Vec<f64> = signs
                    .iter()
                    .map(|&s| f64::from(s) * standard_normal(rng).abs())
                    .collect();
                if let Ok(v) = DirectionalPreference::normalized(raw) {
                    break v;
                }
            },
        }
    }

    /// Whether `v` could have been produced by this distribution.
    pub fn contains(&self, v: &DirectionalPreference) -> bool {
        match self {
            Self::Arc { arc } => v
                .angle()
                .map(|a| arc.contains_angle(a, 1e-12))
                .unwrap_or(false),
            Self::Fixed { v: fixed } => fixed == v,
            Self::Orthant { signs } => {
                signs.len() == v.dim()
                    && signs
                        .iter()
                        .zip(v.components())
                        .all(|(&s, &c)| c == 0.0 || (c > 0.0) == (s > 0))
            }
        }
    }
}

/// Draws one preference uniformly (in angle) from `arc`.
pub fn sample_preference(arc: &PreferenceArc, seed: u64) -> DirectionalPreference {
    arc.sample(&mut rng_from_seed(seed))
}

/// `atan2(v2, v1)`; equals `arctan(v2 / v1)` whenever `v1 > 0`.
pub fn angle_of(v: &DirectionalPreference) -> Result<f64> {
    match v.components() {
        [v1, v2] => Ok(libm::atan2(*v2, *v1)),
        c => Err(Error::DimensionMismatch {
            expected: 2,
            got: c.len(),
        }),
    }
}

/// Preference-conditioned reward `v · r`.
pub fn scalarize(v: &DirectionalPreference, r: &RewardVector) -> Result<f64> {
    scalarize_slice(v.components(), r.values())
}

pub(crate) fn scalarize_slice(v: &[f64], r: &[f64]) -> Result<f64> {
    if v.len() != r.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            got: r.len(),
        });
    }
    Ok(v.iter().zip(r).map(|(a, b)| a * b).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};

    fn rv(xs: &[f64]) -> RewardVector {
        RewardVector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn arc_endpoints() {
        let arc = PreferenceArc::new(-FRAC_PI_4, 0.0).unwrap();
        let top = arc.point_at(1.0);
        assert_eq!(top.components(), &[1.0, 0.0]);
        let bottom = arc.point_at(0.0);
        assert!((bottom.components()[0] - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((bottom.components()[1] + FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arcs() {
        assert!(PreferenceArc::new(0.0, 0.0).is_err());
        assert!(PreferenceArc::new(0.2, -0.2).is_err());
        assert!(PreferenceArc::new(-FRAC_PI_2, 0.0).is_err());
        assert!(PreferenceArc::new(-0.1, FRAC_PI_2).is_err());
        assert!(PreferenceArc::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn angle_examples() {
        let v = DirectionalPreference::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(angle_of(&v).unwrap(), 0.0);
        let v = DirectionalPreference::new(vec![FRAC_1_SQRT_2, -FRAC_1_SQRT_2]).unwrap();
        assert!((angle_of(&v).unwrap() + FRAC_PI_4).abs() < 1e-15);
        let v = DirectionalPreference::new(vec![0.8, -0.6]).unwrap();
        // atan(-0.75)
        assert!((angle_of(&v).unwrap() - (-0.643_501_108_793_284_4)).abs() < 1e-12);
        let v3 = DirectionalPreference::normalized(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            angle_of(&v3),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 3
            })
        ));
    }

    #[test]
    fn scalarize_examples() {
        let e1 = DirectionalPreference::new(vec![1.0, 0.0]).unwrap();
        let e2 = DirectionalPreference::new(vec![0.0, 1.0]).unwrap();
        let v = DirectionalPreference::new(vec![0.8, -0.6]).unwrap();
        assert_eq!(scalarize(&e1, &rv(&[63.0, 40.0])).unwrap(), 63.0);
        assert_eq!(scalarize(&e2, &rv(&[63.0, 40.0])).unwrap(), 40.0);
        assert!((scalarize(&v, &rv(&[50.0, 30.0])).unwrap() - 22.0).abs() < 1e-12);
        assert!(scalarize(&e1, &rv(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn unit_norm_is_enforced() {
        assert!(matches!(
            DirectionalPreference::new(vec![1.0, 0.1]),
            Err(Error::NotUnit(_))
        ));
        assert!(DirectionalPreference::new(vec![1.0]).is_err());
        assert!(DirectionalPreference::normalized(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn sampling_is_seed_deterministic_and_on_arc() {
        let arc = PreferenceArc::default();
        let a = sample_preference(&arc, 11);
        assert_eq!(a, sample_preference(&arc, 11));
        let dist = PreferenceDistribution::Arc { arc };
        let mut rng = rng_from_seed(3);
        for _ in 0..1000 {
            let v = dist.sample(&mut rng);
            assert!(dist.contains(&v));
        }
    }

    #[test]
    fn orthant_sampling() {
        let dist = PreferenceDistribution::Orthant {
            signs: vec![1, -1, 1],
        };
        dist.validate().unwrap();
        let mut rng = rng_from_seed(5);
        for _ in 0..200 {
            let v = dist.sample(&mut rng);
            assert_eq!(v.dim(), 3);
            assert!(dist.contains(&v));
        }
        assert!(PreferenceDistribution::Orthant { signs: vec![1, 0] }
            .validate()
            .is_err());
    }

    #[test]
    fn equally_spaced_hits_endpoints() {
        let arc = PreferenceArc::default();
        let angles = arc.equally_spaced(10);
        assert_eq!(angles.len(), 10);
        assert_eq!(angles[0], -FRAC_PI_4);
        assert_eq!(angles[9], 0.0);
    }
}

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

use dpa_core::rng::rng_from_seed;
use dpa_core::*;
use proptest::prelude::*;

fn pref(theta: f64) -> DirectionalPreference {
    DirectionalPreference::from_angle(theta)
}

fn rv(a: f64, b: f64) -> RewardVector {
    RewardVector::new(vec![a, b]).unwrap()
}

/// Asymptotic Kolmogorov distribution tail with the Stephens small-sample
/// correction.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn angle_examples() {
    assert_eq!(
        angle_of(&DirectionalPreference::new(vec![1.0, 0.0]).unwrap()).unwrap(),
        0.0
    );
    let low = DirectionalPreference::new(vec![SQRT_2 / 2.0, -SQRT_2 / 2.0]).unwrap();
    assert!((angle_of(&low).unwrap() + FRAC_PI_4).abs() < 1e-15);
    let v = DirectionalPreference::new(vec![0.8, -0.6]).unwrap();
    assert!((angle_of(&v).unwrap() - (-0.75f64).atan()).abs() < 1e-15);
    assert!((angle_of(&v).unwrap() + 0.6435).abs() < 1e-4);
    let v3 = DirectionalPreference::normalized(vec![1.0, 1.0, 1.0]).unwrap();
    assert!(angle_of(&v3).is_err());
}

#[test]
fn scalarize_examples() {
    let r = rv(63.0, 40.0);
    assert_eq!(scalarize(&pref(0.0), &r).unwrap(), 63.0);
    let up = DirectionalPreference::new(vec![0.0, 1.0]).unwrap();
    assert_eq!(scalarize(&up, &r).unwrap(), 40.0);
    let v = DirectionalPreference::new(vec![0.8, -0.6]).unwrap();
    assert!((scalarize(&v, &rv(50.0, 30.0)).unwrap() - 22.0).abs() < 1e-12);
    let r3 = RewardVector::new(vec![1.0, 2.0, 3.0]).unwrap();
    assert!(matches!(
        scalarize(&v, &r3),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn arc_endpoints() {
    let arc = PreferenceArc::default();
    assert_eq!(arc.point_at(1.0).components(), &[1.0, 0.0]);
    let low = arc.point_at(0.0);
    assert!((low.components()[0] - SQRT_2 / 2.0).abs() < 1e-15);
    assert!((low.components()[1] + SQRT_2 / 2.0).abs() < 1e-15);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(PreferenceArc::new(0.0, 0.0).is_err());
    assert!(PreferenceArc::new(0.1, -0.1).is_err());
    assert!(PreferenceArc::new(-FRAC_PI_2, 0.0).is_err());
    assert!(PreferenceArc::new(0.0, FRAC_PI_2).is_err());
    assert!(matches!(
        DirectionalPreference::new(vec![1.0, 1.0]),
        Err(Error::NotUnit(_))
    ));
    assert!(DirectionalPreference::new(vec![1.0]).is_err());
    assert!(DirectionalPreference::new(vec![f64::NAN, 0.0]).is_err());
    assert!(DirectionalPreference::normalized(vec![0.0, 0.0]).is_err());
    assert!(serde_json::from_str::<DirectionalPreference>("[0.5, 0.5]").is_err());
}

#[test]
fn sampling_is_deterministic_and_on_arc() {
    let arc = PreferenceArc::default();
    for seed in 0..200 {
        let v = sample_preference(&arc, seed);
        assert_eq!(v, sample_preference(&arc, seed));
        let theta = v.angle().unwrap();
        assert!((-FRAC_PI_4..=0.0).contains(&theta));
    }
}

#[test]
fn ks_uniform_angles() {
    let arc = PreferenceArc::default();
    let mut rng = rng_from_seed(20_240_101);
    let n = 10_000;
    let mut u: Vec<f64> = (0..n)
        .map(|_| (arc.sample(&mut rng).angle().unwrap() + FRAC_PI_4) / FRAC_PI_4)
        .collect();
    u.sort_by(f64::total_cmp);
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let hi = (i + 1) as f64 / n as f64 - x;
            let lo = x - i as f64 / n as f64;
            hi.max(lo)
        })
        .fold(0.0, f64::max);
    let p = ks_p_value(d, n);
    assert!(p > 0.01, "KS D = {d}, p = {p}");
}

#[test]
fn ks_detects_a_skewed_sampler() {
    // Guards the statistic itself: squared uniforms must fail.
    let mut rng = rng_from_seed(3);
    let n = 10_000;
    let mut u: Vec<f64> = (0..n)
        .map(|_| rand::Rng::gen::<f64>(&mut rng).powi(2))
        .collect();
    u.sort_by(f64::total_cmp);
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).max(x - i as f64 / n as f64))
        .fold(0.0, f64::max);
    assert!(ks_p_value(d, n) < 1e-6);
}

#[test]
fn orthant_sampler_respects_signs() {
    let dist = PreferenceDistribution::Orthant {
        signs: vec![1, -1, 1],
    };
    let mut rng = rng_from_seed(5);
    for _ in 0..500 {
        let v = dist.sample(&mut rng);
        let c = v.components();
        assert!(c[0] >= 0.0 && c[1] <= 0.0 && c[2] >= 0.0);
        assert!(dist.contains(&v));
    }
}

proptest! {
    #[test]
    fn unit_norm_holds(theta in -3.1f64..3.1, raw in prop::collection::vec(-10.0f64..10.0, 2..6)) {
        let v = pref(theta);
        let norm = v.components().iter().map(|c| c * c).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() <= 1e-9);
        prop_assume!(raw.iter().map(|c| c * c).sum::<f64>() > 1e-6);
        let w = DirectionalPreference::normalized(raw).unwrap();
        let norm = w.components().iter().map(|c| c * c).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn scalarize_is_linear(
        theta in -1.5f64..1.5,
        r1 in prop::array::uniform2(0.0f64..100.0),
        r2 in prop::array::uniform2(0.0f64..100.0),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let v = pref(theta);
        let mix = RewardVector::new(vec![a * r1[0] + b * r2[0], a * r1[1] + b * r2[1]]).unwrap();
        let lhs = scalarize(&v, &mix).unwrap();
        let rhs = a * scalarize(&v, &rv(r1[0], r1[1])).unwrap()
            + b * scalarize(&v, &rv(r2[0], r2[1])).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9);
    }

    #[test]
    fn angle_round_trips(u in 0.0f64..=1.0) {
        let arc = PreferenceArc::default();
        let theta = arc.angle_at(u);
        prop_assert!((angle_of(&arc.point_at(u)).unwrap() - theta).abs() <= 1e-12);
    }

    #[test]
    fn argmax_is_scale_invariant(
        theta in -1.5f64..1.5,
        rewards in prop::collection::vec(prop::array::uniform2(0.0f64..100.0), 1..20),
        c in 1e-3f64..1e3,
    ) {
        let v = pref(theta);
        let argmax = |scale: f64| {
            let s: Vec<f64> = rewards
                .iter()
                .map(|r| scalarize(&v, &rv(scale * r[0], scale * r[1])).unwrap())
                .collect();
            alignment::argmax_first(&s).unwrap()
        };
        prop_assert_eq!(argmax(1.0), argmax(c));
    }
}

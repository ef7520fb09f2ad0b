use std::f64::consts::PI;

use kinetrail::effect::EmissionKind;
use kinetrail::geometry::{to_spherical, SphericalPoint};
use kinetrail::kinematics::{apply_trail_step, boundary_points, EmissionShape, Kinematics, Trail, TrailStep};
use kinetrail::metrics::{duration_factor, hausdorff, kinematic_distance, similarity_from_parts, MetricParams};
use kinetrail::search::{slog, slog_inv};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = EmissionKind> {
    prop_oneof![
        Just(EmissionKind::Circle),
        Just(EmissionKind::Cylinder),
        Just(EmissionKind::Sphere)
    ]
}

fn shape() -> impl Strategy<Value = EmissionShape> {
    (kind(), 0.01..4.0f64, 0.0..3.0f64).prop_map(|(k, r, h)| {
        EmissionShape::new(k, r, if k == EmissionKind::Cylinder { h } else { 0.0 })
    })
}

fn step() -> impl Strategy<Value = TrailStep> {
    (-0.5..0.8f64, -0.4..0.4f64, -2.0..2.0f64).prop_map(|(r, t, p)| TrailStep::new(r, t, p))
}

fn kinematics() -> impl Strategy<Value = Kinematics> {
    (shape(), prop::collection::vec(step(), 1..10), 0.05..8.0f64).prop_map(|(shape, steps, duration)| {
        Kinematics {
            shape,
            trail: Trail { steps },
            duration,
        }
    })
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64]
}

fn brute_directed(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    let (x, y, z) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
                    (x * x + y * y + z * z).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hausdorff_matches_brute_force(
        a in prop::collection::vec(point(), 1..40),
        b in prop::collection::vec(point(), 1..40),
    ) {
        let h = hausdorff(&a, &b).unwrap();
        let want = brute_directed(&a, &b).max(brute_directed(&b, &a));
        prop_assert_eq!(h.to_bits(), want.to_bits());
        prop_assert_eq!(h.to_bits(), hausdorff(&b, &a).unwrap().to_bits());
    }

    #[test]
    fn kinematic_distance_axioms(a in kinematics(), b in kinematics()) {
        let p = MetricParams::default();
        let ab = kinematic_distance(&a, &b, &p).unwrap();
        let ba = kinematic_distance(&b, &a, &p).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!(ab >= 0.0);
        prop_assert!(kinematic_distance(&a, &a, &p).unwrap() <= 1e-9);
    }

    #[test]
    fn duration_factor_is_symmetric_and_at_least_one(
        dc in 0.01..50.0f64,
        di in 0.01..50.0f64,
        alpha in 0.0..4.0f64,
    ) {
        let f = duration_factor(dc, di, alpha).unwrap();
        prop_assert_eq!(f, duration_factor(di, dc, alpha).unwrap());
        prop_assert!(f >= 1.0);
    }

    #[test]
    fn similarity_stays_in_unit_interval(
        sem in -1.0..1.0f64,
        dk in 0.0..1e6f64,
        w in 0.0..=1.0f64,
        sigma in 1e-3..1e3f64,
    ) {
        let s = similarity_from_parts(sem, dk, w, sigma);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn slog_round_trips(x in -1e6..1e6f64) {
        let back = slog_inv(slog(x));
        prop_assert!((back - x).abs() <= 1e-9 * x.abs().max(1.0));
    }

    #[test]
    fn steps_keep_coordinates_canonical(
        s in shape(),
        steps in prop::collection::vec(step(), 0..20),
        m in 4usize..48,
    ) {
        let mut state = boundary_points(&s, m).unwrap();
        for st in &steps {
            state = apply_trail_step(&state, st);
            for p in &state.boundary {
                prop_assert!(p.r >= 0.0);
                prop_assert!((0.0..=PI).contains(&p.theta));
                prop_assert!((0.0..2.0 * PI).contains(&p.phi));
            }
        }
    }

    #[test]
    fn spherical_conversion_round_trips(p in point()) {
        let s = to_spherical(p).unwrap();
        let q = SphericalPoint::new(s.r, s.theta, s.phi).to_cartesian();
        for (a, b) in p.iter().zip(q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_trail_leaves_boundary_unchanged() {
    let s = boundary_points(&EmissionShape::new(EmissionKind::Sphere, 1.3, 0.0), 64).unwrap();
    let mut t = s.clone();
    for _ in 0..8 {
        t = apply_trail_step(&t, &TrailStep::new(0.0, 0.0, 0.0));
    }
    for (a, b) in s.to_cartesian().iter().zip(t.to_cartesian()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

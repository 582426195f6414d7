mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unicol::gradcheck::{gradcheck, relative_error, GradcheckSettings, Quantity};
use unicol::scenarios::{box_swap, sphere_swap};

#[test]
fn relative_error_examples() {
    assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    assert_eq!(relative_error(&[1.0, 2.5], &[1.0, 2.0]), 0.25);
    // Below the floor the error is absolute.
    assert_eq!(relative_error(&[1e-7], &[0.0]), 1e-7 / 1e-6);
    assert_eq!(relative_error(&[], &[]), 0.0);
}

#[test]
fn sphere_only_scene_skips_parameter_quantities() {
    let report = gradcheck(&sphere_swap(8).unwrap(), &GradcheckSettings::default()).unwrap();
    assert!(report.passed());
    for q in &report.quantities {
        match q.quantity {
            Quantity::InnerGradient | Quantity::Sensitivity => {
                assert_eq!(q.skipped.as_deref(), Some("empty parameter space, skipped"));
                assert_eq!(q.checks, 0);
            }
            Quantity::DistanceGradient | Quantity::Pipeline => {
                assert!(q.skipped.is_none());
                assert!(q.checks > 0);
            }
        }
    }
}

#[test]
fn random_scenes_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..3 {
        let scene = common::random_two_robot_scene(&mut rng, 5);
        let report = gradcheck(
            &scene,
            &GradcheckSettings {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.quantities);
    }
}

#[test]
fn every_corrupted_quantity_is_named() {
    let scene = box_swap(6).unwrap();
    for q in Quantity::ALL {
        let settings = GradcheckSettings {
            corrupt: Some(q),
            ..Default::default()
        };
        let report = gradcheck(&scene, &settings).unwrap();
        assert_eq!(report.failures(), vec![q]);
    }
}

#[test]
fn same_seed_same_report() {
    let scene = box_swap(6).unwrap();
    let settings = GradcheckSettings {
        seed: 42,
        ..Default::default()
    };
    assert_eq!(
        gradcheck(&scene, &settings).unwrap(),
        gradcheck(&scene, &settings).unwrap()
    );
}

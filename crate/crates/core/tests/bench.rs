use unicol::bench::{hausdorff_to_unit_box, kind_pair_study, unit_box_approximation, ApproxFamily};
use unicol::distance::InnerSettings;

#[test]
fn margin_box_error_is_the_rounded_corner() {
    // The cube corner is 0.02·√3 from the core corner, and the margin covers 0.02 of it.
    let prims = unit_box_approximation(ApproxFamily::Box, 1).unwrap();
    let expected = 0.02 * (3f64.sqrt() - 1.0);
    let got = hausdorff_to_unit_box(&prims);
    assert!((got - expected).abs() < 1e-3, "{got} vs {expected}");
}

#[test]
fn circumscribed_sphere_error_is_radius_minus_half() {
    let prims = unit_box_approximation(ApproxFamily::Spheres, 1).unwrap();
    let expected = 3f64.sqrt() / 2.0 - 0.5;
    let got = hausdorff_to_unit_box(&prims);
    assert!((got - expected).abs() < 1e-3, "{got} vs {expected}");
}

#[test]
fn approximations_have_the_requested_count() {
    for family in [ApproxFamily::Spheres, ApproxFamily::Capsules] {
        for k in 1..=12 {
            assert_eq!(unit_box_approximation(family, k).unwrap().len(), k);
        }
    }
    assert!(unit_box_approximation(ApproxFamily::Spheres, 0).is_err());
}

#[test]
fn pair_study_is_reproducible() {
    let settings = InnerSettings::default();
    let a = kind_pair_study(50, 3, &settings);
    let b = kind_pair_study(50, 3, &settings);
    assert_eq!(a.len(), 10);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(
            (x.min_steps, x.max_steps, x.mean_steps),
            (y.min_steps, y.max_steps, y.mean_steps)
        );
    }
}

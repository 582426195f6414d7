use nalgebra::{DMatrix, Point3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unicol::bench::{kind_pairs, random_pose, random_primitive};
use unicol::distance::{solve_inner, InnerSettings};
use unicol::geometry::Pose;
use unicol::primitives::Primitive;
use unicol::sensitivity::{pair_derivatives, sensitivity_matrix, MovingPrimitive};

const TIGHT: InnerSettings = InnerSettings {
    w_r: 1e-4,
    w_c: 1e4,
    grad_tol: 1e-11,
    max_iters: 100,
};

/// Two free bodies at `x[..6]` and `x[6..]`.
fn bodies(a: &Primitive, b: &Primitive, x: &[f64]) -> (MovingPrimitive, MovingPrimitive) {
    (
        MovingPrimitive::free_body(a, &Pose::from_coords(&x[..6]), 12, 0),
        MovingPrimitive::free_body(b, &Pose::from_coords(&x[6..]), 12, 6),
    )
}

/// Central differences of the inner argmin, re-solving from scratch at each probe.
fn argmin_differences(a: &Primitive, b: &Primitive, x: &[f64], h: f64) -> DMatrix<f64> {
    let m = a.dim() + b.dim();
    let mut out = DMatrix::zeros(m, x.len());
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        let mut solve_at = |v: f64| {
            probe[k] = v;
            let (ma, mb) = bodies(a, b, &probe);
            let r = solve_inner(&ma.world, &mb.world, &TIGHT, None).unwrap();
            assert!(r.converged);
            r.t_star
        };
        let up = solve_at(x[k] + h);
        let down = solve_at(x[k] - h);
        probe[k] = x[k];
        out.set_column(k, &((up - down) / (2.0 * h)));
    }
    out
}

fn capsule(start: [f64; 3], axis: [f64; 3]) -> Primitive {
    Primitive::capsule(Point3::from(start), Vector3::from(axis), 0.1).unwrap()
}

#[test]
fn crossing_capsules_follow_the_closed_form() {
    // A spans x in [-1, 1]; B spans y in [-1, 1] one unit above. Sliding B along x by d
    // moves the optimum of (2u - d)² + w_R u² to u = 2d / (4 + w_R).
    let a = capsule([-1.0, 0.0, 0.0], [2.0, 0.0, 0.0]);
    let b = capsule([0.0, -1.0, 1.0], [0.0, 2.0, 0.0]);
    let x = [0.0; 12];
    let (ma, mb) = bodies(&a, &b, &x);
    let r = solve_inner(&ma.world, &mb.world, &TIGHT, None).unwrap();
    let dt = sensitivity_matrix(&ma, &mb, &r, &TIGHT).unwrap();
    let slope = 2.0 / (4.0 + TIGHT.w_r);
    assert!((dt[(0, 6)] - slope).abs() < 1e-9);
    assert!((dt[(0, 0)] + slope).abs() < 1e-9);
    assert!((dt[(1, 1)] - slope).abs() < 1e-9);
    assert!((dt[(1, 7)] + slope).abs() < 1e-9);
    // Vertical motion changes neither parameter.
    assert!(dt[(0, 8)].abs() < 1e-12 && dt[(1, 2)].abs() < 1e-12);

    let fd = argmin_differences(&a, &b, &x, 1e-6);
    assert!((&dt - &fd).amax() < 1e-6, "{}", (&dt - &fd).amax());
}

#[test]
fn parallel_capsules_stay_finite_and_exact() {
    // Sliding B along the shared axis by d: with s = t_a + t_b - 1 and e = t_a - t_b the
    // objective is (e - d)² + w_R (s² + e²) / 2, so e = d / (1 + w_R / 2).
    let a = capsule([-0.5, 0.0, 0.0], [1.0, 0.0, 0.0]);
    let b = capsule([-0.5, 0.0, 0.5], [1.0, 0.0, 0.0]);
    let x = [0.0; 12];
    let (ma, mb) = bodies(&a, &b, &x);
    let r = solve_inner(&ma.world, &mb.world, &TIGHT, None).unwrap();
    assert!((r.t_star[0] - 0.5).abs() < 1e-12 && (r.t_star[1] - 0.5).abs() < 1e-12);
    let d = pair_derivatives(&ma, &mb, &r, &TIGHT).unwrap();
    assert!(d
        .dt_dx
        .iter()
        .chain(d.grad_x.iter())
        .chain(d.hess_xx.iter())
        .all(|v| v.is_finite()));
    let slope = 1.0 / (2.0 + TIGHT.w_r);
    assert!((d.dt_dx[(0, 6)] - slope).abs() < 1e-9);
    assert!((d.dt_dx[(1, 6)] + slope).abs() < 1e-9);
    // Tilting B about y by θ: with u = t_a - 0.5, v = t_b - 0.5 the objective is
    // (u - v - θ/2)² + (1/2 - vθ)² + w_R (u² + v²) to first order, whose optimum moves as
    // du/dθ = (1 + w_R) / (2 w_R (2 + w_R)) and dv/dθ = 1 / (2 w_R (2 + w_R)).
    let w = TIGHT.w_r;
    let du = (1.0 + w) / (2.0 * w * (2.0 + w));
    let dv = 1.0 / (2.0 * w * (2.0 + w));
    assert!((d.dt_dx[(0, 10)] - du).abs() < 1e-6 * du);
    assert!((d.dt_dx[(1, 10)] - dv).abs() < 1e-6 * dv);

    // Translations are well conditioned and the problem is quadratic in them, so a large
    // difference step is exact up to the argmin tolerance.
    let fd = argmin_differences(&a, &b, &x, 1e-3);
    for k in [0, 1, 2, 6, 7, 8] {
        let err = (d.dt_dx.column(k) - fd.column(k)).amax();
        assert!(err < 1e-5, "column {k}: {err}");
    }
}

#[test]
fn hessian_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (ka, kb) in kind_pairs() {
        let a = random_primitive(&mut rng, ka);
        let b = random_primitive(&mut rng, kb);
        let mut x = random_pose(&mut rng, 1.25).coords().to_vec();
        x.extend(random_pose(&mut rng, 1.25).coords());
        let (ma, mb) = bodies(&a, &b, &x);
        let r = solve_inner(&ma.world, &mb.world, &TIGHT, None).unwrap();
        let h = pair_derivatives(&ma, &mb, &r, &TIGHT).unwrap().hess_xx;
        assert_eq!(h, h.transpose());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(200) })]

    #[test]
    fn sensitivity_matches_argmin_differences(seed in any::<u64>(), combo in 0usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ka, kb) = kind_pairs()[combo];
        let a = random_primitive(&mut rng, ka);
        let b = random_primitive(&mut rng, kb);
        let mut x = random_pose(&mut rng, 1.25).coords().to_vec();
        x.extend(random_pose(&mut rng, 1.25).coords());
        let (ma, mb) = bodies(&a, &b, &x);
        let r = solve_inner(&ma.world, &mb.world, &TIGHT, None).unwrap();
        let dt = sensitivity_matrix(&ma, &mb, &r, &TIGHT).unwrap();
        prop_assert_eq!(dt.shape(), (a.dim() + b.dim(), 12));
        let fd = argmin_differences(&a, &b, &x, 1e-6);
        let scale = fd.amax().max(1e-6);
        prop_assert!((&dt - &fd).amax() / scale <= 1e-3, "{}", (&dt - &fd).amax() / scale);
    }

    #[test]
    fn distance_gradient_matches_differences(seed in any::<u64>(), combo in 0usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ka, kb) = kind_pairs()[combo];
        let a = random_primitive(&mut rng, ka);
        let b = random_primitive(&mut rng, kb);
        let mut x = random_pose(&mut rng, 1.25).coords().to_vec();
        x.extend(random_pose(&mut rng, 1.25).coords());
        let (ma, mb) = bodies(&a, &b, &x);
        let r = solve_inner(&ma.world, &mb.world, &TIGHT, None).unwrap();
        let grad = pair_derivatives(&ma, &mb, &r, &TIGHT).unwrap().grad_x;
        let h = 1e-6;
        let mut probe = x.clone();
        let mut worst: f64 = 0.0;
        for k in 0..12 {
            let mut d_at = |v: f64| {
                probe[k] = v;
                let (ma, mb) = bodies(&a, &b, &probe);
                solve_inner(&ma.world, &mb.world, &TIGHT, None).unwrap().d_sq
            };
            let fd = (d_at(x[k] + h) - d_at(x[k] - h)) / (2.0 * h);
            probe[k] = x[k];
            worst = worst.max((fd - grad[k]).abs());
        }
        prop_assert!(worst / grad.amax().max(1e-6) <= 1e-3);
    }
}

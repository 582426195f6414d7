//! Reference distances with hard box constraints and no regularization.
//!
//! These are test oracles for the Newton solver in [`crate::distance`]. They share no code
//! with it beyond evaluating `||P_A - P_B||²`.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::primitives::WorldPrimitive;

/// Upper bound on grid evaluations per pass; higher-dimensional pairs get coarser grids.
const MAX_GRID_EVALS: usize = 1 << 24;

fn squared_distance(a: &WorldPrimitive, b: &WorldPrimitive, t: &[f64]) -> f64 {
    let la = a.dim();
    (a.point_unchecked(&t[..la]) - b.point_unchecked(&t[la..])).norm_squared()
}

/// Per-dimension grid size used by [`brute_force_distance`] for `dim` parameters.
pub fn effective_resolution(resolution: usize, dim: usize) -> usize {
    if dim == 0 {
        return 1;
    }
    let cap = (MAX_GRID_EVALS as f64).powf(1.0 / dim as f64).floor() as usize;
    resolution.clamp(2, cap.max(2))
}

fn grid_search(
    a: &WorldPrimitive,
    b: &WorldPrimitive,
    lower: &[f64],
    upper: &[f64],
    points: usize,
) -> (f64, Vec<f64>) {
    let m = lower.len();
    let mut idx = vec![0usize; m];
    let mut t = lower.to_vec();
    let mut best = (f64::INFINITY, t.clone());
    loop {
        for k in 0..m {
            t[k] = lower[k] + (upper[k] - lower[k]) * idx[k] as f64 / (points - 1) as f64;
        }
        let d = squared_distance(a, b, &t);
        if d < best.0 {
            best = (d, t.clone());
        }
        // odometer increment
        let mut k = 0;
        while k < m {
            idx[k] += 1;
            if idx[k] < points {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == m {
            return best;
        }
    }
}

/// Minimum of `||P_A - P_B||²` over a uniform grid on `[0,1]^m`, followed by one finer grid
/// over the cells adjacent to the best grid point.
///
/// The per-dimension resolution is capped so a pass stays under 2^24 evaluations; for box–box
/// pairs that means roughly 16 points per dimension, so use [`exact_distance`] there.
pub fn brute_force_distance(a: &WorldPrimitive, b: &WorldPrimitive, resolution: usize) -> f64 {
    let m = a.dim() + b.dim();
    if m == 0 {
        return squared_distance(a, b, &[]);
    }
    let points = effective_resolution(resolution, m);
    let lower = vec![0.0; m];
    let upper = vec![1.0; m];
    let (coarse, best) = grid_search(a, b, &lower, &upper, points);

    let cell = 1.0 / (points - 1) as f64;
    let lo: Vec<f64> = best.iter().map(|&x| (x - cell).max(0.0)).collect();
    let hi: Vec<f64> = best.iter().map(|&x| (x + cell).min(1.0)).collect();
    let (fine, _) = grid_search(a, b, &lo, &hi, points);
    coarse.min(fine)
}

/// Exact constrained minimum of `||P_A - P_B||²` over `[0,1]^m` by enumerating box faces.
///
/// Each face fixes some coordinates at 0 or 1 and minimizes the remaining least-squares
/// problem in closed form; candidates outside the box are discarded. Since the difference
/// spans at most three dimensions, faces with more than three free coordinates never hold
/// an isolated minimizer and are skipped, as are faces with a singular Gram matrix.
pub fn exact_distance(a: &WorldPrimitive, b: &WorldPrimitive) -> f64 {
    exact_closest(a, b).0
}

/// Like [`exact_distance`], also returning a minimizing parameter vector.
pub fn exact_closest(a: &WorldPrimitive, b: &WorldPrimitive) -> (f64, Vec<f64>) {
    let cols: Vec<Vector3<f64>> = a
        .vectors
        .iter()
        .copied()
        .chain(b.vectors.iter().map(|v| -v))
        .collect();
    let m = cols.len();
    let base = a.anchor - b.anchor;
    let mut best = (f64::INFINITY, vec![0.5; m]);
    let faces = 3usize.pow(m as u32);
    let mut state = vec![0u8; m];
    let mut t = vec![0.0; m];
    for code in 0..faces {
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..m).filter(|&k| state[k] == 2).collect();
        if free.len() > 3 {
            continue;
        }
        let mut offset = base;
        for k in 0..m {
            if state[k] != 2 {
                t[k] = state[k] as f64;
                offset += cols[k] * t[k];
            }
        }
        if !free.is_empty() {
            let n = free.len();
            let mut gram = Matrix3::<f64>::identity();
            let mut rhs = Vector3::zeros();
            for (i, &fi) in free.iter().enumerate() {
                rhs[i] = -cols[fi].dot(&offset);
                for (j, &fj) in free.iter().enumerate() {
                    gram[(i, j)] = cols[fi].dot(&cols[fj]);
                }
            }
            let scale: f64 = free.iter().map(|&k| cols[k].norm_squared()).product();
            let det = gram.determinant();
            if det <= 1e-14 * scale {
                continue;
            }
            let Some(inv) = gram.try_inverse() else {
                continue;
            };
            let sol = inv * rhs;
            let tol = 1e-9;
            if (0..n).any(|i| sol[i] < -tol || sol[i] > 1.0 + tol) {
                continue;
            }
            for (i, &fi) in free.iter().enumerate() {
                t[fi] = sol[i].clamp(0.0, 1.0);
            }
        }
        let d = squared_distance(a, b, &t);
        if d < best.0 {
            best = (d, t.clone());
        }
    }
    best
}

/// Closest points for the exact minimizer.
pub fn exact_closest_points(a: &WorldPrimitive, b: &WorldPrimitive) -> (Point3<f64>, Point3<f64>) {
    let (_, t) = exact_closest(a, b);
    let la = a.dim();
    (a.point_unchecked(&t[..la]), b.point_unchecked(&t[la..]))
}

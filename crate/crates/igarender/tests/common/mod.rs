//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use igarender::camera::Vec3;
use igarender::spline::{BSplineVolume, KnotVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Cox–de Boor recursion on the raw knot list, with `0/0 = 0` and the
/// last non-empty span closed at the right end.
pub fn cox_de_boor(knots: &[f64], i: usize, p: usize, t: f64) -> f64 {
    if p == 0 {
        let (a, b) = (knots[i], knots[i + 1]);
        let last = *knots.last().unwrap();
        if a <= t && t < b {
            return 1.0;
        }
        // closed right end on the last non-empty span
        if t == last && b == last && a < b {
            return 1.0;
        }
        return 0.0;
    }
    let mut v = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 > 0.0 {
        v += (t - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, t);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + p + 1] - t) / d2 * cox_de_boor(knots, i + 1, p - 1, t);
    }
    v
}

pub fn naive_basis(kv: &KnotVector, t: f64) -> Vec<f64> {
    (0..kv.num_basis()).map(|i| cox_de_boor(kv.knots(), i, kv.degree(), t)).collect()
}

/// Full tensor-product sum over every control point.
pub fn naive_eval(vol: &BSplineVolume, p: &Vec3) -> Vec<f64> {
    let k = vol.knots();
    let b: Vec<Vec<f64>> = (0..3).map(|a| naive_basis(&k[a], p[a])).collect();
    let [nu, nv, nw] = vol.size();
    let mut out = vec![0.0; vol.dim()];
    for kk in 0..nw {
        for j in 0..nv {
            for i in 0..nu {
                let w = b[0][i] * b[1][j] * b[2][kk];
                if w == 0.0 {
                    continue;
                }
                for (o, c) in out.iter_mut().zip(vol.control_point(i, j, kk)) {
                    *o += w * c;
                }
            }
        }
    }
    out
}

/// Open knot vector on `[0, 1]` with random interior knots, some repeated.
pub fn random_knots(rng: &mut ChaCha8Rng, p: usize, interior: usize) -> KnotVector {
    let mut inner: Vec<f64> = Vec::new();
    while inner.len() < interior {
        let x = (rng.gen_range(0.05..0.95f64) * 64.0).round() / 64.0;
        let reps = if rng.gen_bool(0.2) { p.min(2) } else { 1 };
        for _ in 0..reps.min(interior - inner.len()) {
            inner.push(x);
        }
    }
    inner.sort_by(f64::total_cmp);
    let mut k = vec![0.0; p + 1];
    k.extend(inner);
    k.extend(vec![1.0; p + 1]);
    KnotVector::new(k, p).unwrap()
}

pub fn random_volume(rng: &mut ChaCha8Rng, dim: usize) -> BSplineVolume {
    let kv: [KnotVector; 3] = std::array::from_fn(|_| {
        let p = rng.gen_range(1..=3);
        let interior = rng.gen_range(0..=4);
        random_knots(rng, p, interior)
    });
    let n = kv.iter().map(|k| k.num_basis()).product::<usize>() * dim;
    let points = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    BSplineVolume::new(kv, dim, points).unwrap()
}

/// Smallest distance of `t` to an interior knot.
pub fn knot_distance(kv: &KnotVector, t: f64) -> f64 {
    kv.knots().iter().filter(|&&k| k > 0.0 && k < 1.0).map(|k| (k - t).abs()).fold(f64::INFINITY, f64::min)
}

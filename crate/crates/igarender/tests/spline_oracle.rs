mod common;

use common::{knot_distance, naive_basis, naive_eval, random_knots, random_volume};
use igarender::camera::Vec3;
use igarender::models;
use igarender::spline::{BSplineVolume, Face, JetOrder, KnotVector, SplineError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn evaluation_matches_cox_de_boor() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let vol = random_volume(&mut rng, 3);
        for _ in 0..500 {
            let p = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let fast = vol.eval(&p, JetOrder::Value).unwrap().value;
            for (a, b) in fast.iter().zip(naive_eval(&vol, &p)) {
                worst = worst.max((a - b).abs());
            }
        }
        for p in [Vec3::zeros(), Vec3::repeat(1.0), Vec3::new(1.0, 0.0, 0.5)] {
            let fast = vol.eval(&p, JetOrder::Value).unwrap().value;
            for (a, b) in fast.iter().zip(naive_eval(&vol, &p)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < 1e-12, "max deviation {worst:e}");
}

fn fd_scale(m: &[[f64; 3]]) -> f64 {
    m.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300)
}

#[test]
fn derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut worst_j, mut worst_h) = (0.0f64, 0.0f64);
    let (hj, hh) = (1e-6, 1e-5);
    let mut tested = 0;
    while tested < 2000 {
        let vol = random_volume(&mut rng, 3);
        for _ in 0..100 {
            let p = Vec3::new(rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99));
            if (0..3).any(|a| knot_distance(&vol.knots()[a], p[a]) < 4.0 * hh) {
                continue;
            }
            tested += 1;
            let jet = vol.eval(&p, JetOrder::Second).unwrap();
            let js = fd_scale(&jet.jacobian);
            for a in 0..3 {
                let e = Vec3::ith(a, 1.0);
                let fp = vol.eval(&(p + e * hj), JetOrder::First).unwrap();
                let fm = vol.eval(&(p - e * hj), JetOrder::First).unwrap();
                for c in 0..3 {
                    let fd = (fp.value[c] - fm.value[c]) / (2.0 * hj);
                    worst_j = worst_j.max((fd - jet.jacobian[c][a]).abs() / js);
                }
                let gp = vol.eval(&(p + e * hh), JetOrder::First).unwrap();
                let gm = vol.eval(&(p - e * hh), JetOrder::First).unwrap();
                for c in 0..3 {
                    let hs = jet.hessian[c].iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(js);
                    for b in 0..3 {
                        let fd = (gp.jacobian[c][b] - gm.jacobian[c][b]) / (2.0 * hh);
                        worst_h = worst_h.max((fd - jet.hessian[c][a][b]).abs() / hs);
                    }
                }
            }
        }
    }
    assert!(worst_j < 1e-6, "Jacobian relative error {worst_j:e}");
    assert!(worst_h < 1e-4, "Hessian relative error {worst_h:e}");
}

#[test]
fn eval3_agrees_with_generic_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let vol = random_volume(&mut rng, 3);
    for _ in 0..200 {
        let p = Vec3::new(rng.gen(), rng.gen(), rng.gen());
        let g = vol.eval(&p, JetOrder::Second).unwrap();
        let m = vol.eval3(&p, JetOrder::Second).unwrap();
        for c in 0..3 {
            assert_eq!(g.value[c], m.value[c]);
            for a in 0..3 {
                assert_eq!(g.jacobian[c][a], m.jacobian[(c, a)]);
                for b in 0..3 {
                    assert_eq!(g.hessian[c][a][b], m.hessian[c][(a, b)]);
                }
            }
        }
    }
}

#[test]
fn face_restriction_matches_volume() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..10 {
        let vol = random_volume(&mut rng, 3);
        for face in Face::ALL {
            let patch = vol.restrict_to_face(face);
            for _ in 0..50 {
                let (s, t): (f64, f64) = (rng.gen(), rng.gen());
                let a = patch.eval(s, t).unwrap().value;
                let b = vol.eval(&face.embed(s, t), JetOrder::Value).unwrap().value;
                for c in 0..3 {
                    assert!((a[c] - b[c]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn second_derivative_bound_dominates_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..10 {
        let vol = random_volume(&mut rng, 3);
        for bp in vol.boundary_patches() {
            let bound = bp.patch.second_derivative_bound();
            let n = 40;
            for i in 0..=n {
                for j in 0..=n {
                    let (s, t) = (i as f64 / n as f64, j as f64 / n as f64);
                    let jet = bp.patch.eval(s, t).unwrap();
                    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    assert!(norm(&jet.dss) <= bound.ss * (1.0 + 1e-12) + 1e-12);
                    assert!(norm(&jet.dtt) <= bound.tt * (1.0 + 1e-12) + 1e-12);
                    assert!(norm(&jet.dst) <= bound.st * (1.0 + 1e-12) + 1e-12);
                }
            }
        }
    }
}

#[test]
fn knot_vector_validation() {
    assert!(matches!(KnotVector::new(vec![0.0, 0.0, 1.0, 0.5], 1), Err(SplineError::Decreasing(_))));
    assert!(KnotVector::new(vec![0.0, 1.0], 1).is_err());
    assert!(KnotVector::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2).is_ok());
    let kv = KnotVector::new(vec![0.0, 0.0, 1.0, 1.0], 1).unwrap();
    assert!(kv.find_span(1.5).is_err());
    let vol = models::identity_cube();
    assert!(vol.eval(&Vec3::new(0.5, 1.2, 0.5), JetOrder::Value).is_err());
    let kvs = [kv.clone(), kv.clone(), kv];
    assert!(matches!(BSplineVolume::new(kvs, 3, vec![0.0; 5]), Err(SplineError::ControlNetSize { .. })));
}

#[test]
fn affine_maps_are_reproduced() {
    let vol = models::box_volume(Vec3::new(-1.0, 2.0, 0.5), Vec3::new(3.0, 2.5, 4.0), 3, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..100 {
        let p = Vec3::new(rng.gen(), rng.gen(), rng.gen());
        let jet = vol.eval3(&p, JetOrder::Second).unwrap();
        let expect = Vec3::new(-1.0 + 4.0 * p.x, 2.0 + 0.5 * p.y, 0.5 + 3.5 * p.z);
        assert!((jet.value - expect).norm() < 1e-13);
        assert!(jet.hessian.iter().all(|h| h.norm() < 1e-11));
    }
}

fn knot_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..=4, proptest::collection::vec(0.0f64..1.0, 0..6)).prop_map(|(p, mut inner)| {
        inner.sort_by(f64::total_cmp);
        let mut k = vec![0.0; p + 1];
        k.extend(inner);
        k.extend(vec![1.0; p + 1]);
        (p, k)
    })
}

proptest! {
    #[test]
    fn basis_is_a_nonnegative_partition_of_unity((p, k) in knot_strategy(), t in 0.0f64..=1.0) {
        let kv = KnotVector::new(k, p).unwrap();
        let span = kv.find_span(t).unwrap();
        let b = kv.basis_with_derivatives(span, t, 2);
        let sum: f64 = b.values().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(b.values().iter().all(|&v| v >= -1e-14));
        // derivatives of a partition of unity sum to zero
        prop_assert!(b.order(1).iter().sum::<f64>().abs() < 1e-8 * (1.0 + b.order(1).iter().map(|x| x.abs()).sum::<f64>()));
        let naive = naive_basis(&kv, t);
        for (a, v) in b.values().iter().enumerate() {
            prop_assert!((naive[span - p + a] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn find_span_matches_linear_scan((p, k) in knot_strategy(), t in 0.0f64..=1.0) {
        let kv = KnotVector::new(k.clone(), p).unwrap();
        let n = kv.num_basis();
        let expect = if t == 1.0 {
            (p..n).rev().find(|&s| k[s] < k[s + 1]).unwrap()
        } else {
            (p..n).rev().find(|&s| k[s] <= t).unwrap()
        };
        prop_assert_eq!(kv.find_span(t).unwrap(), expect);
    }

    #[test]
    fn greville_points_reproduce_linear_functions(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rng.gen_range(1..=3);
        let interior = rng.gen_range(0..4);
        let kv = random_knots(&mut rng, p, interior);
        let gr = kv.greville();
        let t: f64 = rng.gen();
        let b = naive_basis(&kv, t);
        let s: f64 = b.iter().zip(&gr).map(|(w, g)| w * g).sum();
        prop_assert!((s - t).abs() < 1e-12);
    }
}

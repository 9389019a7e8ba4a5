use std::f64::consts::PI;

use igarender::camera::{RaySegment, Vec3};
use igarender::inversion::{
    boundary_walk, explicit_rk_step, handle_degenerate_entry, implicit_euler_step, implicit_residual, newton_invert,
    pullback_w, ray_distance, sample_segment, GeometryMap, IntegratorSpec, InversionError, Method, SegmentField,
};
use igarender::models;
use igarender::pipeline;
use igarender::spline::JetOrder;
use igarender::testmaps::AnalyticMap;
use nalgebra::{Matrix3, Matrix3x2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn affine() -> AnalyticMap {
    let a = Matrix3::new(1.5, 0.2, -0.1, 0.3, 0.9, 0.2, -0.2, 0.1, 1.2);
    AnalyticMap::Affine { a, b: Vec3::new(0.3, -0.7, 2.0) }
}

fn field(front: Vec3, back: Vec3, c: f64) -> SegmentField {
    SegmentField::new(RaySegment::new(front, back).unwrap(), c)
}

fn rand_vec(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(rng.gen(), rng.gen(), rng.gen())
}

#[test]
fn vector_field_splits_into_orthogonal_parts() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let f = field(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.9, 0.5, 0.4), 2.5);
    let d = f.segment.dir;
    for _ in 0..100 {
        let g = rand_vec(&mut rng) * 3.0;
        let perp = f.velocity(&g) - d;
        assert!(perp.dot(&d).abs() < 1e-12);
        let on_line = f.segment.at(rng.gen::<f64>() * f.segment.length);
        assert!((f.velocity(&on_line) - d).norm() < 1e-12);
        let f0 = SegmentField { c: 0.0, ..f };
        assert_eq!(f0.velocity(&g), d);
    }
    // constant Jacobian: eigenvalues {-c, -c, 0}, V_par in the null space
    let j = f.jacobian();
    let mut ev: Vec<f64> = j.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    assert!((ev[0] + 2.5).abs() < 1e-12 && (ev[1] + 2.5).abs() < 1e-12 && ev[2].abs() < 1e-12);
    assert!((j * d).norm() < 1e-12);
    let g = Vec3::new(0.4, 1.1, -0.3);
    for a in 0..3 {
        let e = Vec3::ith(a, 1e-6);
        let fd = (f.velocity(&(g + e)) - f.velocity(&(g - e))) / 2e-6;
        assert!((fd - j.column(a)).norm() < 1e-8);
    }
}

#[test]
fn pullback_matches_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let f = field(Vec3::new(0.0, 0.2, 0.5), Vec3::new(1.0, 0.8, 0.4), 1.0);
    let aff = affine();
    let AnalyticMap::Affine { a, b } = aff else { unreachable!() };
    let ainv = a.try_inverse().unwrap();
    for _ in 0..100 {
        let p = rand_vec(&mut rng);
        let w = pullback_w(&AnalyticMap::Identity, &p, &f).unwrap();
        assert!((w - f.velocity(&p)).norm() < 1e-14);
        let w = pullback_w(&aff, &p, &f).unwrap();
        assert!((w - ainv * f.velocity(&(a * p + b))).norm() < 1e-12);
        let w = pullback_w(&AnalyticMap::Sine, &p, &f).unwrap();
        let g = Vec3::new(p.x, 0.3 * (2.0 * PI * p.x).sin() + p.y, p.z);
        let v = f.velocity(&g);
        let expect = Vec3::new(v.x, v.y - 0.6 * PI * (2.0 * PI * p.x).cos() * v.x, v.z);
        assert!((w - expect).norm() < 1e-12);
    }
}

#[test]
fn newton_is_exact_on_linear_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..50 {
        let target = rand_vec(&mut rng);
        let r = newton_invert(&AnalyticMap::Identity, &target, &rand_vec(&mut rng), 1e-13).unwrap();
        assert!(r.iterations <= 1 && (r.point - target).norm() < 1e-13);
        let p = rand_vec(&mut rng) * 0.8 + Vec3::repeat(0.1);
        let g = affine().jet(&p, JetOrder::Value).unwrap().value;
        let r = newton_invert(&affine(), &g, &Vec3::repeat(0.5), 1e-12).unwrap();
        assert!(r.iterations <= 1 && (r.point - p).norm() < 1e-12);
    }
}

#[test]
fn constant_field_is_integrated_exactly_by_every_method() {
    let f = field(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.8, 0.6, 0.7), 0.0);
    let p = Vec3::new(0.1, 0.2, 0.3);
    let h = 0.05;
    for m in Method::ALL {
        let next = match m {
            Method::RootFinding => continue,
            Method::Irk1 => implicit_euler_step(&AnalyticMap::Identity, &p, &f, h).unwrap(),
            _ => explicit_rk_step(&AnalyticMap::Identity, &p, &f, m.tableau().unwrap(), h).unwrap(),
        };
        assert!((next - (p + f.segment.dir * h)).norm() < 1e-15, "{m}");
    }
}

#[test]
fn implicit_euler_hits_linear_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for _ in 0..20 {
        let c = rng.gen_range(0.5..200.0);
        let f = field(Vec3::new(0.2, 0.3, 0.4), Vec3::new(0.7, 0.6, 0.5), c);
        let p = Vec3::new(0.3, 0.45, 0.5) + rand_vec(&mut rng) * 0.05;
        let h = 0.02;
        let next = implicit_euler_step(&AnalyticMap::Identity, &p, &f, h).unwrap();
        // z = h d + hc/(1+hc) · P (g_front − p)
        let d = f.segment.dir;
        let r = f.segment.front - p;
        let pr = r - d * r.dot(&d);
        let z = d * h + pr * (h * c / (1.0 + h * c));
        assert!((next - (p + z)).norm() < 1e-12);
    }
}

#[test]
fn implicit_residual_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let vol = models::twisted_bar();
    let g0 = vol.eval3(&Vec3::new(0.2, 0.3, 0.1), JetOrder::Value).unwrap().value;
    let g1 = vol.eval3(&Vec3::new(0.7, 0.6, 0.3), JetOrder::Value).unwrap().value;
    let f = field(g0, g1, 30.0);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p = Vec3::new(0.3, 0.4, 0.2) + rand_vec(&mut rng) * 0.3;
        let z = (rand_vec(&mut rng) - Vec3::repeat(0.5)) * 0.02;
        let h = 0.01;
        let (_, jg) = implicit_residual(&vol, &p, &f, h, &z).unwrap();
        let eps = 1e-7;
        for a in 0..3 {
            let e = Vec3::ith(a, eps);
            let gp = implicit_residual(&vol, &p, &f, h, &(z + e)).unwrap().0;
            let gm = implicit_residual(&vol, &p, &f, h, &(z - e)).unwrap().0;
            let fd = (gp - gm) / (2.0 * eps);
            worst = worst.max((fd - jg.column(a)).norm() / jg.norm());
        }
    }
    assert!(worst < 1e-5, "relative error {worst:e}");
}

#[test]
fn boundary_walk_projects_onto_affine_face() {
    let aff = affine();
    let AnalyticMap::Affine { a, b } = aff else { unreachable!() };
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    for _ in 0..20 {
        // target off the x = 0 face whose projection lands inside it
        let yz = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8));
        let on_face = a * Vec3::new(0.0, yz.0, yz.1) + b;
        let normal = a.column(1).cross(&a.column(2)).normalize();
        let g = on_face - normal * rng.gen_range(0.05..0.3);
        let r = boundary_walk(&aff, &Vec3::new(0.0, 0.5, 0.5), (0, false), &g, 1e-14).unwrap();
        let m = Matrix3x2::from_columns(&[a.column(1), a.column(2)]);
        let ls = m.svd(true, true).solve(&(g - b), 1e-14).unwrap();
        assert_eq!(r.point.x, 0.0);
        assert!((r.point.y - ls[0]).abs() < 1e-10 && (r.point.z - ls[1]).abs() < 1e-10, "{:?} vs {ls:?}", r.point);
    }
}

#[test]
fn degenerate_entry_on_collapsed_edge() {
    let vols = models::bent_assembly();
    let vol = &vols[1];
    let p_front = Vec3::new(0.5, 0.0, 1.0);
    let p_back = Vec3::new(0.4, 0.6, 0.3);
    let g_front = vol.eval3(&p_front, JetOrder::Value).unwrap().value;
    let g_back = vol.eval3(&p_back, JetOrder::Value).unwrap().value;
    let seg = RaySegment::new(g_front, g_back).unwrap();
    let tol = |_: &Vec3| 1e-6;

    let a = handle_degenerate_entry(vol, &seg, &p_front, &p_back, &tol).unwrap().expect("singular entry");
    let b = handle_degenerate_entry(vol, &seg, &p_front, &p_back, &tol).unwrap().unwrap();
    assert_eq!(a, b);
    assert!(!a.attempts.is_empty() && a.attempts.windows(2).all(|w| w[1].0 == 2.0 * w[0].0));
    assert!(handle_degenerate_entry(vol, &seg, &p_back, &p_front, &tol).unwrap().is_none());

    for m in Method::ALL {
        let spec = IntegratorSpec::new(m, seg.length / 64.0);
        let out = sample_segment(vol, &seg, &p_front, &p_back, &spec, &tol).unwrap();
        assert!(out.stats.degenerate_entry.is_some(), "{m}");
        assert!(!out.stats.truncated, "{m}");
        let worst = out.samples.iter().map(|s| ray_distance(&seg, &s.jet.value)).fold(0.0, f64::max);
        assert!(worst < 1e-3 * seg.length, "{m}: {worst:e}");
    }
}

#[test]
fn root_finding_recovers_the_ray_to_tolerance() {
    let map = AnalyticMap::DampedSine;
    let pf = Vec3::new(0.0, 0.3, 0.5);
    let pb = Vec3::new(1.0, 0.7, 0.5);
    let gf = map.jet(&pf, JetOrder::Value).unwrap().value;
    let gb = map.jet(&pb, JetOrder::Value).unwrap().value;
    let seg = RaySegment::new(gf, gb).unwrap();
    let spec = IntegratorSpec { method: Method::RootFinding, c: 0.0, ds: 0.01, tolerance: Some(1e-14) };
    let out = sample_segment(&map, &seg, &pf, &pb, &spec, &|_| 1e-14).unwrap();
    assert!(out.samples.len() > 200);
    let worst = out.samples.iter().map(|s| ray_distance(&seg, &s.jet.value)).fold(0.0, f64::max);
    assert!(worst <= 1e-13, "{worst:e}");
    assert!(out.samples.windows(2).all(|w| w[1].s > w[0].s));
}

#[test]
fn singular_jacobian_is_reported() {
    let flat = AnalyticMap::Affine { a: Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0), b: Vec3::zeros() };
    let e = newton_invert(&flat, &Vec3::new(0.5, 0.5, 0.3), &Vec3::repeat(0.5), 1e-12).unwrap_err();
    assert!(matches!(e, InversionError::Singular { .. }));
}

#[test]
fn concave_face_scene_stays_pixel_accurate() {
    let scene = models::annular_scene(160, 120, Method::Rk4);
    let out = pipeline::render(&scene).unwrap();
    assert!(out.audit.max_delta_p <= 1.0, "{}", out.audit.to_text());
    assert_eq!(out.audit.depth_violations, 0);
    assert_eq!(out.audit.flagged_pixels, 0);
    assert!(out.audit.segments > 1000);
}

use igarender::camera::Vec3;
use igarender::models;
use igarender::scene::FieldSource;
use igarender::shading::{param_quality, von_mises_from_gradient};
use igarender::spline::{BSplineVolume, JetOrder};
use nalgebra::{Matrix3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Displacement spline on the bar's knots with control points `f(geometry point)`.
fn displacement(geom: &BSplineVolume, f: impl Fn(&[f64]) -> [f64; 3]) -> BSplineVolume {
    let points = geom.points().chunks(3).flat_map(f).collect();
    BSplineVolume::new(geom.knots().clone(), 3, points).unwrap()
}

fn interior_points(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Vec3::new(rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99))).collect()
}

fn von_mises_on_bar(f: impl Fn(&[f64]) -> [f64; 3]) -> Vec<f64> {
    let bar = models::twisted_bar();
    let field = FieldSource::VonMises(displacement(&bar, f));
    interior_points(500, 7)
        .iter()
        .map(|p| field.value(p, &bar.eval3(p, JetOrder::First).unwrap()).unwrap())
        .collect()
}

#[test]
fn zero_displacement_has_no_stress() {
    assert!(von_mises_on_bar(|_| [0.0; 3]).iter().all(|v| v.abs() <= 1e-10));
}

#[test]
fn hydrostatic_displacement_has_no_stress() {
    let lambda = 0.37;
    let vm = von_mises_on_bar(|g| [lambda * g[0], lambda * g[1], lambda * g[2]]);
    assert!(vm.iter().all(|v| v.abs() <= 1e-10), "{:?}", vm.iter().cloned().fold(0.0, f64::max));
}

#[test]
fn simple_shear_gives_three_quarters_gamma_squared() {
    let gamma = 0.2;
    let expect = 0.75 * gamma * gamma;
    for v in von_mises_on_bar(|g| [gamma * g[1], 0.0, 0.0]) {
        assert!((v - expect).abs() <= 1e-10, "{v} vs {expect}");
    }
}

#[test]
fn von_mises_of_pure_rotation_gradient_is_zero() {
    let w = Matrix3::new(0.0, -0.3, 0.2, 0.3, 0.0, -0.1, -0.2, 0.1, 0.0);
    assert!(von_mises_from_gradient(&w).abs() < 1e-15);
}

#[test]
fn quality_closed_forms() {
    let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
    assert!((param_quality(&r) - 1.0 / 3f64.sqrt()).abs() < 1e-14);
    for s in [0.5, 2.0, 7.0] {
        let q = param_quality(&(r * s));
        assert!((q - s * s / 3f64.sqrt()).abs() < 1e-12 * s * s);
    }
    let singular = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 5.0);
    assert!(param_quality(&singular).abs() < 1e-14);
    assert_eq!(param_quality(&Matrix3::zeros()), 0.0);
    let mut flipped = Matrix3::identity();
    flipped[(0, 0)] = -1.0;
    assert!(param_quality(&flipped) < 0.0);
}

#[test]
fn quality_is_invariant_under_rotating_the_geometry() {
    let bar = models::twisted_bar();
    let r = Rotation3::from_euler_angles(0.7, 0.2, -0.4);
    let rotated = displacement(&bar, |g| {
        let v = r * Vec3::new(g[0], g[1], g[2]);
        [v.x, v.y, v.z]
    });
    for p in interior_points(500, 9) {
        let a = FieldSource::Quality.value(&p, &bar.eval3(&p, JetOrder::First).unwrap()).unwrap();
        let b = FieldSource::Quality.value(&p, &rotated.eval3(&p, JetOrder::First).unwrap()).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
}

//! Synthetic test models and ready-to-render scenes: a tapered, twisted
//! bar; a bent two-block assembly whose second block has a collapsed edge;
//! a two-block channel; and an annular sector with a concave face.

use std::f64::consts::PI;

use crate::camera::{Camera, Vec3};
use crate::inversion::{IntegratorSpec, Method};
use crate::scene::{default_samples, Background, Block, FieldSource, Scene};
use crate::shading::{param_quality, TfNode, TransferFunction};
use crate::spline::{BSplineVolume, JetOrder, KnotVector};

fn knots(n: usize, p: usize) -> KnotVector {
    KnotVector::open_uniform(n, p).expect("valid open knot vector")
}

/// Volume with control points `f(greville_u, greville_v, greville_w)`.
pub fn sample_net<F>(kv: [KnotVector; 3], dim: usize, f: F) -> BSplineVolume
where
    F: Fn(f64, f64, f64) -> Vec<f64>,
{
    let g = [kv[0].greville(), kv[1].greville(), kv[2].greville()];
    BSplineVolume::from_fn(kv, dim, |i, j, k| f(g[0][i], g[1][j], g[2][k])).expect("consistent control net")
}

/// Affine box `[lo, hi]` of degree `p` with `n` control points per axis.
pub fn box_volume(lo: Vec3, hi: Vec3, p: usize, n: usize) -> BSplineVolume {
    sample_net([knots(n, p), knots(n, p), knots(n, p)], 3, |u, v, w| {
        vec![lo.x + (hi.x - lo.x) * u, lo.y + (hi.y - lo.y) * v, lo.z + (hi.z - lo.z) * w]
    })
}

pub fn identity_cube() -> BSplineVolume {
    box_volume(Vec3::zeros(), Vec3::repeat(1.0), 1, 2)
}

/// Scalar spline reproducing an affine function of the parameter point.
pub fn affine_scalar(c0: f64, grad: Vec3) -> BSplineVolume {
    sample_net([knots(2, 1), knots(2, 1), knots(2, 1)], 1, |u, v, w| vec![c0 + grad.dot(&Vec3::new(u, v, w))])
}

/// Quadratic bar of 5 × 5 × 17 control points, 4 long, whose square cross
/// section tapers to 65% and turns by a quarter turn along its length.
pub fn twisted_bar() -> BSplineVolume {
    sample_net([knots(5, 2), knots(5, 2), knots(17, 2)], 3, |u, v, w| {
        let scale = 1.0 - 0.35 * w;
        let (x, y) = ((u - 0.5) * scale, (v - 0.5) * scale);
        let (s, c) = (0.5 * PI * w).sin_cos();
        vec![c * x - s * y, s * x + c * y, 4.0 * w]
    })
}

/// Bends the `z` axis around a circle of radius `r` in the `x`–`z` plane.
fn bend(x: f64, y: f64, z: f64, r: f64) -> Vec<f64> {
    let (s, c) = (z / r).sin_cos();
    vec![(r + x) * c - r, y, (r + x) * s]
}

/// Two quadratic blocks along a bent axis. The second block narrows so that
/// its edge `v = 0, w = 1` collapses to a single point.
pub fn bent_assembly() -> Vec<BSplineVolume> {
    const R: f64 = 3.0;
    let first = sample_net([knots(3, 2), knots(3, 2), knots(4, 2)], 3, |u, v, w| bend(u, v, 1.5 * w, R));
    let second = sample_net([knots(3, 2), knots(3, 2), knots(3, 2)], 3, |u, v, w| {
        bend(u * (1.0 - w + w * v), v, 1.5 + w, R)
    });
    vec![first, second]
}

/// Two unit boxes side by side along `x`, sharing the face `x = 1`.
pub fn channel() -> Vec<BSplineVolume> {
    vec![
        box_volume(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0), 1, 2),
        box_volume(Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 1.0, 1.0), 1, 2),
    ]
}

/// Quadratic annular sector: radius `1 + v` for `v ∈ [0, 1]`, angle
/// `2πu/3`, height `w`. The inner face `v = 0` is concave.
pub fn annular_sector() -> BSplineVolume {
    // a quarter of a circle per span keeps the control polygon close
    let nu = 6;
    sample_net([knots(nu, 2), knots(3, 2), knots(3, 2)], 3, |u, v, w| {
        let a = 2.0 * PI / 3.0 * u;
        let r = 1.0 + v;
        vec![r * a.cos(), r * a.sin(), w]
    })
}

/// Five-node blue-to-red ramp over `[lo, hi]` with opacity `alpha`
/// per reference length.
pub fn ramp(lo: f64, hi: f64, alpha: f64, xi: f64) -> TransferFunction {
    let colors = [[0.1, 0.2, 0.9], [0.1, 0.8, 0.9], [0.2, 0.9, 0.2], [0.95, 0.9, 0.1], [0.9, 0.1, 0.1]];
    let nodes = colors
        .iter()
        .enumerate()
        .map(|(i, &color)| TfNode { value: lo + (hi - lo) * i as f64 / 4.0, color, alpha })
        .collect();
    TransferFunction::new(nodes, xi).expect("valid ramp")
}

/// Range of the parametrization quality over a `n³` parameter grid.
pub fn quality_range(volume: &BSplineVolume, n: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let p = Vec3::new(i as f64, j as f64, k as f64) / (n - 1) as f64;
                let q = param_quality(&volume.eval3(&p, JetOrder::First).expect("inside").jacobian);
                lo = lo.min(q);
                hi = hi.max(q);
            }
        }
    }
    (lo, hi)
}

/// Look-at camera placement of a fixture scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub fov_y_deg: f64,
    pub near: f64,
}

pub const BAR_VIEW: View = View { eye: [5.2, 2.4, 0.3], target: [0.0, 0.0, 1.9], fov_y_deg: 40.0, near: 0.1 };
pub const EDGE_VIEW: View = View { eye: [1.8, 2.6, 4.6], target: [-0.4, 0.5, 1.4], fov_y_deg: 40.0, near: 0.1 };
pub const ANNULUS_VIEW: View = View { eye: [-0.2, -3.2, 1.6], target: [0.1, 1.0, 0.5], fov_y_deg: 45.0, near: 0.1 };

impl View {
    pub fn camera(&self, width: u32, height: u32) -> Camera {
        Camera::look_at(
            Vec3::from(self.eye),
            Vec3::from(self.target),
            Vec3::new(0.0, 1.0, 0.0),
            self.fov_y_deg.to_radians(),
            width,
            height,
            self.near,
        )
        .expect("valid camera")
    }
}

fn scene_from(camera: Camera, blocks: Vec<Block>, transfer: TransferFunction, method: Method) -> Scene {
    let mut scene = Scene {
        camera,
        blocks,
        transfer,
        cut_planes: Vec::new(),
        integrator: IntegratorSpec::new(method, 1.0),
        supersample: true,
        background: Background::checkerboard(),
        audit: true,
    };
    scene.integrator.ds = scene.diagonal() / default_samples(method);
    scene
}

/// Twisted bar seen from the side, colored by parametrization quality.
pub fn twisted_bar_scene(width: u32, height: u32, method: Method) -> Scene {
    let bar = twisted_bar();
    let camera = BAR_VIEW.camera(width, height);
    let (lo, hi) = quality_range(&bar, 9);
    let blocks = vec![Block { id: 0, geometry: bar, field: FieldSource::Quality }];
    let mut scene = scene_from(camera, blocks, ramp(lo, hi, 0.02, 1.0), method);
    let xi = scene.diagonal() / 512.0;
    scene.transfer = scene.transfer.with_reference_length(xi).expect("positive");
    scene
}

/// Bent assembly looking at the collapsed edge, colored by quality.
pub fn collapsed_edge_scene(width: u32, height: u32, method: Method) -> Scene {
    let vols = bent_assembly();
    let camera = EDGE_VIEW.camera(width, height);
    let (lo, hi) = vols.iter().map(|v| quality_range(v, 9)).fold((f64::INFINITY, f64::NEG_INFINITY), |a, b| {
        (a.0.min(b.0), a.1.max(b.1))
    });
    let blocks = vols
        .into_iter()
        .enumerate()
        .map(|(id, geometry)| Block { id, geometry, field: FieldSource::Quality })
        .collect();
    let mut scene = scene_from(camera, blocks, ramp(lo, hi, 0.03, 1.0), method);
    let xi = scene.diagonal() / 512.0;
    scene.transfer = scene.transfer.with_reference_length(xi).expect("positive");
    scene
}

/// Annular sector seen across its axis, so that rays graze the concave face.
pub fn annular_scene(width: u32, height: u32, method: Method) -> Scene {
    let vol = annular_sector();
    let camera = ANNULUS_VIEW.camera(width, height);
    let rho = affine_scalar(0.0, Vec3::new(0.0, 1.0, 0.0));
    let blocks = vec![Block { id: 0, geometry: vol, field: FieldSource::Scalar(rho) }];
    let mut scene = scene_from(camera, blocks, ramp(0.0, 1.0, 0.05, 1.0), method);
    let xi = scene.diagonal() / 512.0;
    scene.transfer = scene.transfer.with_reference_length(xi).expect("positive");
    scene
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inversion::is_regular;

    #[test]
    fn bar_has_425_control_points() {
        let b = twisted_bar();
        assert_eq!(b.size(), [5, 5, 17]);
        assert_eq!(b.points().len(), 425 * 3);
    }

    #[test]
    fn assembly_edge_collapses_and_faces_match() {
        let v = bent_assembly();
        let a = v[1].eval3(&Vec3::new(0.0, 0.0, 1.0), JetOrder::Value).unwrap().value;
        let b = v[1].eval3(&Vec3::new(1.0, 0.0, 1.0), JetOrder::Value).unwrap().value;
        assert!((a - b).norm() < 1e-14);
        assert!(!is_regular(&v[1], &Vec3::new(0.5, 0.0, 1.0)));
        assert!(is_regular(&v[1], &Vec3::new(0.5, 0.5, 0.5)));
        for (s, t) in [(0.0, 0.0), (0.3, 0.7), (1.0, 1.0)] {
            let x = v[0].eval3(&Vec3::new(s, t, 1.0), JetOrder::Value).unwrap().value;
            let y = v[1].eval3(&Vec3::new(s, t, 0.0), JetOrder::Value).unwrap().value;
            assert_eq!(x, y);
        }
    }

    #[test]
    fn greville_box_is_affine() {
        let b = box_volume(Vec3::new(-1.0, 0.0, 2.0), Vec3::new(1.0, 3.0, 2.5), 3, 6);
        let g = b.eval3(&Vec3::new(0.25, 0.5, 0.75), JetOrder::Value).unwrap().value;
        assert!((g - Vec3::new(-0.5, 1.5, 2.375)).norm() < 1e-14);
    }
}

//! Closed-form maps for exercising the inversion methods. Planar maps are
//! embedded as `(x, y, z) ↦ (f₁(x, y), f₂(x, y), z)`.

use std::f64::consts::PI;

use nalgebra::Matrix3;

use crate::camera::Vec3;
use crate::inversion::GeometryMap;
use crate::spline::{Jet3, JetOrder, SplineError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticMap {
    Identity,
    /// `A p + b`.
    Affine { a: Matrix3<f64>, b: Vec3 },
    /// `(x, 0.3 sin(2πx) + y)`.
    Sine,
    /// `(2x, y + 0.3 (1 − x) sin(10πx))`, the convergence-study map.
    DampedSine,
}

impl AnalyticMap {
    pub const NAMES: [&'static str; 3] = ["identity", "sine", "damped-sine"];

    pub fn by_name(name: &str) -> Option<AnalyticMap> {
        match name {
            "identity" => Some(AnalyticMap::Identity),
            "sine" => Some(AnalyticMap::Sine),
            "damped-sine" => Some(AnalyticMap::DampedSine),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnalyticMap::Identity => "identity",
            AnalyticMap::Affine { .. } => "affine",
            AnalyticMap::Sine => "sine",
            AnalyticMap::DampedSine => "damped-sine",
        }
    }

    /// Largest deviation between the closed-form derivatives and central
    /// differences at a few interior points, relative to derivative size.
    pub fn self_check(&self) -> f64 {
        let h = 1e-6;
        let mut worst = 0.0f64;
        for p in [Vec3::new(0.13, 0.41, 0.5), Vec3::new(0.52, 0.77, 0.3), Vec3::new(0.91, 0.08, 0.6)] {
            let jet = self.eval(&p);
            for a in 0..3 {
                let e = Vec3::ith(a, h);
                let (jp, jm) = (self.eval(&(p + e)), self.eval(&(p - e)));
                let fd = (jp.value - jm.value) / (2.0 * h);
                let col = jet.jacobian.column(a);
                worst = worst.max((fd - col).norm() / (1.0 + col.norm()));
                let fdj = (jp.jacobian - jm.jacobian) / (2.0 * h);
                for c in 0..3 {
                    for b in 0..3 {
                        let exact = jet.hessian[c][(a, b)];
                        worst = worst.max((fdj[(c, b)] - exact).abs() / (1.0 + exact.abs()));
                    }
                }
            }
        }
        worst
    }

    fn eval(&self, p: &Vec3) -> Jet3 {
        let (x, y, z) = (p.x, p.y, p.z);
        let zero = [Matrix3::zeros(); 3];
        match self {
            AnalyticMap::Identity => Jet3 { value: *p, jacobian: Matrix3::identity(), hessian: zero },
            AnalyticMap::Affine { a, b } => Jet3 { value: a * p + b, jacobian: *a, hessian: zero },
            AnalyticMap::Sine => {
                let w = 2.0 * PI;
                let value = Vec3::new(x, 0.3 * (w * x).sin() + y, z);
                let mut jacobian = Matrix3::identity();
                jacobian[(1, 0)] = 0.3 * w * (w * x).cos();
                let mut hessian = zero;
                hessian[1][(0, 0)] = -0.3 * w * w * (w * x).sin();
                Jet3 { value, jacobian, hessian }
            }
            AnalyticMap::DampedSine => {
                let w = 10.0 * PI;
                let (s, c) = (w * x).sin_cos();
                let value = Vec3::new(2.0 * x, y + 0.3 * (1.0 - x) * s, z);
                let mut jacobian = Matrix3::identity();
                jacobian[(0, 0)] = 2.0;
                jacobian[(1, 0)] = -0.3 * s + 0.3 * (1.0 - x) * w * c;
                let mut hessian = zero;
                hessian[1][(0, 0)] = -0.6 * w * c - 0.3 * (1.0 - x) * w * w * s;
                Jet3 { value, jacobian, hessian }
            }
        }
    }
}

impl GeometryMap for AnalyticMap {
    fn jet(&self, p: &Vec3, _order: JetOrder) -> Result<Jet3, SplineError> {
        Ok(self.eval(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registered_maps_pass_self_check() {
        for name in AnalyticMap::NAMES {
            let m = AnalyticMap::by_name(name).unwrap();
            assert_eq!(m.name(), name);
            assert!(m.self_check() < 1e-6, "{name}: {}", m.self_check());
        }
        assert!(AnalyticMap::by_name("nope").is_none());
    }

    #[test]
    fn damped_sine_endpoints() {
        let m = AnalyticMap::DampedSine;
        let a = m.jet(&Vec3::new(0.0, 0.3, 0.5), JetOrder::Value).unwrap().value;
        let b = m.jet(&Vec3::new(1.0, 0.7, 0.5), JetOrder::Value).unwrap().value;
        assert!((a - Vec3::new(0.0, 0.3, 0.5)).norm() < 1e-15);
        assert!((b - Vec3::new(2.0, 0.7, 0.5)).norm() < 1e-15);
    }
}

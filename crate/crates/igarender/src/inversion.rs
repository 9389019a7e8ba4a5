//! Pixel-accurate approximation of the inverse geometry map along a view-ray
//! segment.
//!
//! Two families are provided: Newton root finding on `φ(p) − g_i` for each
//! sample `g_i`, and integration of the pulled-back vector field
//! `J_φ(p) W(p) = V(φ(p))` with explicit Runge–Kutta schemes or implicit
//! Euler. Both work on anything implementing [`GeometryMap`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix3x2, Vector2, QR, U3};
use thiserror::Error;

use crate::camera::{RaySegment, Vec3};
use crate::spline::{BSplineVolume, Jet3, JetOrder, SplineError};

/// Reciprocal condition estimate below which `J_φ` counts as singular.
pub const RCOND_MIN: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;
pub const LINE_SEARCH_MAX_HALVINGS: usize = 20;
/// Consecutive clamps onto one face that trigger the boundary walk.
pub const CLAMP_STREAK: usize = 3;
/// Newton gives up after this many consecutive steps that each shrink the
/// residual by less than `1 − STALL_RATIO`.
pub const STALL_STEPS: usize = 5;
pub const STALL_RATIO: f64 = 0.99;
pub const DEGENERATE_START: f64 = 1e-3;
pub const DEGENERATE_CAP: f64 = 1e-1;

/// A differentiable map from the parameter cube into world space.
pub trait GeometryMap: Send + Sync {
    fn jet(&self, p: &Vec3, order: JetOrder) -> Result<Jet3, SplineError>;
}

impl GeometryMap for BSplineVolume {
    fn jet(&self, p: &Vec3, order: JetOrder) -> Result<Jet3, SplineError> {
        self.eval3(p, order)
    }
}

impl<M: GeometryMap + ?Sized> GeometryMap for &M {
    fn jet(&self, p: &Vec3, order: JetOrder) -> Result<Jet3, SplineError> {
        (**self).jet(p, order)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InversionError {
    #[error("Jacobian is singular at {point:?} (rcond {rcond:e})")]
    Singular { point: Vec3, rcond: f64 },
    #[error("Newton did not reach tolerance after {iterations} iterations (residual {residual:e})")]
    NoConvergence { best: Vec3, residual: f64, iterations: usize },
    #[error("implicit Euler inner Newton failed (residual {residual:e})")]
    InnerNewton { residual: f64 },
    #[error("boundary walk exceeded its iteration cap (residual {residual:e})")]
    WalkFailed { best: Vec3, residual: f64 },
    #[error("degenerate entry could not be resolved after {attempts} attempts")]
    DegenerateEntry { attempts: usize },
    #[error(transparent)]
    Eval(#[from] SplineError),
}

pub fn clamp_unit(p: &Vec3) -> Vec3 {
    p.map(|x| x.clamp(0.0, 1.0))
}

/// QR factorization of a Jacobian with a cheap reciprocal condition
/// estimate taken from the diagonal of `R`.
pub struct JacobianQr {
    qr: QR<f64, U3, U3>,
    pub rcond: f64,
}

impl JacobianQr {
    pub fn factor(j: &Matrix3<f64>, at: &Vec3) -> Result<Self, InversionError> {
        let qr = j.qr();
        let diag = qr.r().diagonal().map(f64::abs);
        let (lo, hi) = (diag.min(), diag.max());
        let rcond = if hi > 0.0 && hi.is_finite() { lo / hi } else { 0.0 };
        if !(rcond >= RCOND_MIN) {
            return Err(InversionError::Singular { point: *at, rcond });
        }
        Ok(JacobianQr { qr, rcond })
    }

    pub fn solve(&self, b: &Vec3) -> Vec3 {
        self.qr.solve(b).expect("factor() rejects singular R")
    }

    pub fn solve_matrix(&self, b: &Matrix3<f64>) -> Matrix3<f64> {
        self.qr.solve(b).expect("factor() rejects singular R")
    }
}

/// The view-ray vector field `V(g) = V_∥ + c·V_⊥(g)` for one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentField {
    pub segment: RaySegment,
    pub c: f64,
}

impl SegmentField {
    pub fn new(segment: RaySegment, c: f64) -> Self {
        debug_assert!(c >= 0.0);
        SegmentField { segment, c }
    }

    /// Component of `g_front − g` perpendicular to the segment.
    pub fn perpendicular(&self, g: &Vec3) -> Vec3 {
        let r = self.segment.front - g;
        r - self.segment.dir * r.dot(&self.segment.dir)
    }

    pub fn velocity(&self, g: &Vec3) -> Vec3 {
        self.segment.dir + self.perpendicular(g) * self.c
    }

    /// Constant Jacobian `c (C − I)` with `C = V_∥ V_∥ᵀ`.
    pub fn jacobian(&self) -> Matrix3<f64> {
        let d = self.segment.dir;
        (d * d.transpose() - Matrix3::identity()) * self.c
    }
}

/// Pulled-back field `W(p)` together with the jet and factorization used.
pub struct Pullback {
    pub w: Vec3,
    pub jet: Jet3,
    pub qr: JacobianQr,
}

pub fn pullback<M: GeometryMap + ?Sized>(
    map: &M,
    p: &Vec3,
    field: &SegmentField,
    order: JetOrder,
) -> Result<Pullback, InversionError> {
    let jet = map.jet(p, order.max(JetOrder::First))?;
    let qr = JacobianQr::factor(&jet.jacobian, p)?;
    let w = qr.solve(&field.velocity(&jet.value));
    Ok(Pullback { w, jet, qr })
}

/// Solves `J_φ(p) W = V(φ(p))`.
pub fn pullback_w<M: GeometryMap + ?Sized>(map: &M, p: &Vec3, field: &SegmentField) -> Result<Vec3, InversionError> {
    pullback(map, p, field, JetOrder::First).map(|pb| pb.w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonResult {
    pub point: Vec3,
    pub value: Vec3,
    pub residual: f64,
    pub iterations: usize,
    /// Set when the iteration was rescued by a walk along a cube face.
    pub walked: bool,
}

/// Face of the cube a clamp pinned an iterate to, as `(axis, upper)`.
fn clamped_face(raw: &Vec3) -> Option<(usize, bool)> {
    (0..3).find_map(|a| {
        if raw[a] < 0.0 {
            Some((a, false))
        } else if raw[a] > 1.0 {
            Some((a, true))
        } else {
            None
        }
    })
}

/// Newton–Raphson for `φ(x) = g_target` with QR solves, clamping to the
/// cube and backtracking on `‖F‖`. Stops once `‖F‖ ≤ tol`; repeated clamps
/// onto one face hand over to [`boundary_walk`].
pub fn newton_invert<M: GeometryMap + ?Sized>(
    map: &M,
    g_target: &Vec3,
    x0: &Vec3,
    tol: f64,
) -> Result<NewtonResult, InversionError> {
    newton_impl(map, g_target, x0, tol, true)
}

fn newton_impl<M: GeometryMap + ?Sized>(
    map: &M,
    g_target: &Vec3,
    x0: &Vec3,
    tol: f64,
    allow_walk: bool,
) -> Result<NewtonResult, InversionError> {
    let mut x = clamp_unit(x0);
    let mut jet = map.jet(&x, JetOrder::First)?;
    let mut f = jet.value - g_target;
    let mut r = f.norm();
    let mut streak: Option<((usize, bool), usize)> = None;
    let mut slow = 0;
    for it in 0..NEWTON_MAX_ITER {
        if r <= tol {
            return Ok(NewtonResult { point: x, value: jet.value, residual: r, iterations: it, walked: false });
        }
        let qr = JacobianQr::factor(&jet.jacobian, &x)?;
        let dx = qr.solve(&-f);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=LINE_SEARCH_MAX_HALVINGS {
            let raw = x + dx * lambda;
            let cand = clamp_unit(&raw);
            let cjet = map.jet(&cand, JetOrder::First)?;
            let cf = cjet.value - g_target;
            let cr = cf.norm();
            if cr < r {
                accepted = Some((raw, cand, cjet, cf, cr));
                break;
            }
            lambda *= 0.5;
        }
        let Some((raw, cand, cjet, cf, cr)) = accepted else {
            // stalled: a face-bound iterate may still be rescued by walking
            if allow_walk && r > tol && on_face(&x).is_some() {
                return walk_then_newton(map, g_target, &x, on_face(&x).unwrap(), tol);
            }
            return Err(InversionError::NoConvergence { best: x, residual: r, iterations: it });
        };
        slow = if cr > STALL_RATIO * r { slow + 1 } else { 0 };
        x = cand;
        jet = cjet;
        f = cf;
        r = cr;
        if slow >= STALL_STEPS && r > tol {
            return Err(InversionError::NoConvergence { best: x, residual: r, iterations: it + 1 });
        }
        if let Some(face) = clamped_face(&raw) {
            let count = match streak {
                Some((prev, n)) if prev == face => n + 1,
                _ => 1,
            };
            streak = Some((face, count));
            if allow_walk && count >= CLAMP_STREAK && r > tol {
                return walk_then_newton(map, g_target, &x, face, tol);
            }
        } else {
            streak = None;
        }
    }
    if r <= tol {
        return Ok(NewtonResult { point: x, value: jet.value, residual: r, iterations: NEWTON_MAX_ITER, walked: false });
    }
    Err(InversionError::NoConvergence { best: x, residual: r, iterations: NEWTON_MAX_ITER })
}

fn on_face(x: &Vec3) -> Option<(usize, bool)> {
    (0..3).find_map(|a| {
        if x[a] == 0.0 {
            Some((a, false))
        } else if x[a] == 1.0 {
            Some((a, true))
        } else {
            None
        }
    })
}

fn walk_then_newton<M: GeometryMap + ?Sized>(
    map: &M,
    g_target: &Vec3,
    x: &Vec3,
    face: (usize, bool),
    tol: f64,
) -> Result<NewtonResult, InversionError> {
    let walked = boundary_walk(map, x, face, g_target, tol)?;
    if walked.residual <= tol {
        return Ok(NewtonResult { walked: true, ..walked });
    }
    // the ray may re-enter the cube past this face point
    match newton_impl(map, g_target, &walked.point, tol, false) {
        Ok(res) => Ok(NewtonResult { walked: true, ..res }),
        Err(InversionError::NoConvergence { best, residual, iterations }) if residual < walked.residual => {
            Err(InversionError::NoConvergence { best, residual, iterations })
        }
        Err(_) => Err(InversionError::NoConvergence {
            best: walked.point,
            residual: walked.residual,
            iterations: walked.iterations,
        }),
    }
}

/// Gauss–Newton on `‖φ(x) − g_target‖` restricted to one cube face,
/// keeping the two free coordinates inside `[0, 1]`.
pub fn boundary_walk<M: GeometryMap + ?Sized>(
    map: &M,
    start: &Vec3,
    face: (usize, bool),
    g_target: &Vec3,
    tol: f64,
) -> Result<NewtonResult, InversionError> {
    let (axis, upper) = face;
    let free = match axis {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    };
    let mut x = clamp_unit(start);
    x[axis] = if upper { 1.0 } else { 0.0 };
    let mut jet = map.jet(&x, JetOrder::First)?;
    let mut f = jet.value - g_target;
    let mut r = f.norm();
    let mut slow = 0;
    for it in 0..NEWTON_MAX_ITER {
        if r <= tol {
            return Ok(NewtonResult { point: x, value: jet.value, residual: r, iterations: it, walked: true });
        }
        let j2 = Matrix3x2::from_columns(&[jet.jacobian.column(free[0]), jet.jacobian.column(free[1])]);
        let qr = j2.qr();
        let rdiag = qr.r().diagonal().map(f64::abs);
        if !(rdiag.min() > RCOND_MIN * rdiag.max()) {
            return Err(InversionError::Singular { point: x, rcond: 0.0 });
        }
        // least-squares step: R d = -Qᵀ F
        let qtf = qr.q().transpose() * f;
        let d: Vector2<f64> = qr.r().solve_upper_triangular(&-qtf).expect("checked diagonal");
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=LINE_SEARCH_MAX_HALVINGS {
            let mut cand = x;
            cand[free[0]] = (x[free[0]] + lambda * d[0]).clamp(0.0, 1.0);
            cand[free[1]] = (x[free[1]] + lambda * d[1]).clamp(0.0, 1.0);
            let cjet = map.jet(&cand, JetOrder::First)?;
            let cf = cjet.value - g_target;
            let cr = cf.norm();
            if cr < r {
                accepted = Some((cand, cjet, cf, cr));
                break;
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((cand, cjet, cf, cr)) => {
                let moved = (cand - x).norm();
                slow = if cr > STALL_RATIO * r { slow + 1 } else { 0 };
                x = cand;
                jet = cjet;
                f = cf;
                r = cr;
                // creeping towards a positive minimum counts as arrived
                if moved <= 1e-15 || (slow >= STALL_STEPS && r > tol) {
                    break;
                }
            }
            // local minimum of the distance on this face
            None => return Ok(NewtonResult { point: x, value: jet.value, residual: r, iterations: it, walked: true }),
        }
        if it + 1 == NEWTON_MAX_ITER {
            return Err(InversionError::WalkFailed { best: x, residual: r });
        }
    }
    Ok(NewtonResult { point: x, value: jet.value, residual: r, iterations: NEWTON_MAX_ITER, walked: true })
}

/// Inversion methods: explicit Runge–Kutta of orders 1–5, implicit Euler,
/// and per-sample root finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rk1,
    Irk1,
    Rk2,
    Rk3,
    Rk4,
    Rk4ThreeEighths,
    Rkf5,
    RootFinding,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Rk1,
        Method::Irk1,
        Method::Rk2,
        Method::Rk3,
        Method::Rk4,
        Method::Rk4ThreeEighths,
        Method::Rkf5,
        Method::RootFinding,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Rk1 => "rk1",
            Method::Irk1 => "irk1",
            Method::Rk2 => "rk2",
            Method::Rk3 => "rk3",
            Method::Rk4 => "rk4",
            Method::Rk4ThreeEighths => "rk4-38",
            Method::Rkf5 => "rkf",
            Method::RootFinding => "rf",
        }
    }

    /// Nominal convergence order of the ODE schemes.
    pub fn order(&self) -> Option<u32> {
        match self {
            Method::Rk1 | Method::Irk1 => Some(1),
            Method::Rk2 => Some(2),
            Method::Rk3 => Some(3),
            Method::Rk4 | Method::Rk4ThreeEighths => Some(4),
            Method::Rkf5 => Some(5),
            Method::RootFinding => None,
        }
    }

    /// Weight of the perpendicular field component used by default.
    pub fn default_c(&self) -> f64 {
        match self {
            Method::Irk1 => 100.0,
            _ => 1.0,
        }
    }

    pub fn tableau(&self) -> Option<&'static Tableau> {
        match self {
            Method::Rk1 => Some(&EULER),
            Method::Rk2 => Some(&MIDPOINT),
            Method::Rk3 => Some(&KUTTA3),
            Method::Rk4 => Some(&CLASSIC4),
            Method::Rk4ThreeEighths => Some(&THREE_EIGHTHS),
            Method::Rkf5 => Some(&FEHLBERG5),
            Method::Irk1 | Method::RootFinding => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown integration method `{0}` (expected one of rk1, irk1, rk2, rk3, rk4, rk4-38, rkf, rf)")]
pub struct UnknownMethod(pub String);

impl FromStr for Method {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace(['_', ' '], "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .or(match key.as_str() {
                "rk4-3/8" | "rk438" => Some(Method::Rk4ThreeEighths),
                "rkf5" | "rkf45" => Some(Method::Rkf5),
                "euler" => Some(Method::Rk1),
                "implicit-euler" => Some(Method::Irk1),
                "root-finding" | "newton" => Some(Method::RootFinding),
                _ => None,
            })
            .ok_or_else(|| UnknownMethod(s.to_string()))
    }
}

/// Explicit Butcher tableau (strictly lower-triangular `a`).
#[derive(Debug)]
pub struct Tableau {
    pub a: &'static [&'static [f64]],
    pub b: &'static [f64],
}

pub static EULER: Tableau = Tableau { a: &[&[]], b: &[1.0] };
pub static MIDPOINT: Tableau = Tableau { a: &[&[], &[0.5]], b: &[0.0, 1.0] };
pub static KUTTA3: Tableau = Tableau { a: &[&[], &[0.5], &[-1.0, 2.0]], b: &[1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0] };
pub static CLASSIC4: Tableau = Tableau {
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
};
pub static THREE_EIGHTHS: Tableau = Tableau {
    a: &[&[], &[1.0 / 3.0], &[-1.0 / 3.0, 1.0], &[1.0, -1.0, 1.0]],
    b: &[1.0 / 8.0, 3.0 / 8.0, 3.0 / 8.0, 1.0 / 8.0],
};
/// Fehlberg's six-stage pair, propagating the fifth-order solution.
pub static FEHLBERG5: Tableau = Tableau {
    a: &[
        &[],
        &[1.0 / 4.0],
        &[3.0 / 32.0, 9.0 / 32.0],
        &[1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0],
        &[439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0],
        &[-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
    ],
    b: &[16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0],
};

/// Method plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSpec {
    pub method: Method,
    pub c: f64,
    /// Sample distance in world units.
    pub ds: f64,
    /// Fixed Newton tolerance for root finding; `None` uses the pixel
    /// frustum of each sample.
    pub tolerance: Option<f64>,
}

impl IntegratorSpec {
    pub fn new(method: Method, ds: f64) -> Self {
        IntegratorSpec { method, c: method.default_c(), ds, tolerance: None }
    }
}

/// One explicit Runge–Kutta step of size `h` on `p' = W(p)`; stage points
/// and the result are clamped to the cube.
pub fn explicit_rk_step<M: GeometryMap + ?Sized>(
    map: &M,
    p: &Vec3,
    field: &SegmentField,
    tableau: &Tableau,
    h: f64,
) -> Result<Vec3, InversionError> {
    let stages = tableau.b.len();
    let mut k = [Vec3::zeros(); 6];
    for i in 0..stages {
        let mut q = *p;
        for (j, &a) in tableau.a[i].iter().enumerate() {
            if a != 0.0 {
                q += k[j] * (h * a);
            }
        }
        k[i] = pullback_w(map, &clamp_unit(&q), field)?;
    }
    let mut next = *p;
    for i in 0..stages {
        if tableau.b[i] != 0.0 {
            next += k[i] * (h * tableau.b[i]);
        }
    }
    Ok(clamp_unit(&next))
}

/// Residual `G(z) = z − h W(pⁿ + z)` and its exact Jacobian from
/// `J_φ J_G = H_φ·(z − G) + (I − h J_V) J_φ`, reusing one QR of `J_φ`.
pub fn implicit_residual<M: GeometryMap + ?Sized>(
    map: &M,
    p: &Vec3,
    field: &SegmentField,
    h: f64,
    z: &Vec3,
) -> Result<(Vec3, Matrix3<f64>), InversionError> {
    let q = p + z;
    let pb = pullback(map, &q, field, JetOrder::Second)?;
    let g = z - pb.w * h;
    let hw = pb.w * h;
    let rhs = pb.jet.hessian_contract(&hw) + (Matrix3::identity() - field.jacobian() * h) * pb.jet.jacobian;
    Ok((g, pb.qr.solve_matrix(&rhs)))
}

/// One implicit Euler step solved for the increment `z` by Newton's method.
pub fn implicit_euler_step<M: GeometryMap + ?Sized>(
    map: &M,
    p: &Vec3,
    field: &SegmentField,
    h: f64,
) -> Result<Vec3, InversionError> {
    let keep_inside = |z: Vec3| clamp_unit(&(p + z)) - p;
    let mut z = keep_inside(pullback_w(map, p, field)? * h);
    let mut last = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let (g, jg) = implicit_residual(map, p, field, h, &z)?;
        let gn = g.norm();
        if gn <= 1e-15 + 1e-12 * z.norm() {
            return Ok(clamp_unit(&(p + z)));
        }
        let Some(dz) = jg.lu().solve(&-g) else {
            return Err(InversionError::InnerNewton { residual: gn });
        };
        let znew = keep_inside(z + dz);
        if (znew - z).norm() <= 1e-16 * (1.0 + z.norm()) {
            // pinned by the cube or at round-off level
            return Ok(clamp_unit(&(p + znew)));
        }
        z = znew;
        last = gn;
    }
    Err(InversionError::InnerNewton { residual: last })
}

/// Outcome of the entry-point repair for a singular Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryRepair {
    pub g_front: Vec3,
    pub p_front: Vec3,
    /// Shift along the ray in world units.
    pub delta: f64,
    /// `(δ, ε)` tried, in order.
    pub attempts: Vec<(f64, f64)>,
}

/// If `J_φ` is singular at the entry point, shrinks the segment: moves the
/// entry by `δ` along the ray and restarts Newton from
/// `p_front + ε (p_back − p_front)/‖·‖`, doubling both on failure.
/// Returns `Ok(None)` when the entry is regular.
pub fn handle_degenerate_entry<M: GeometryMap + ?Sized>(
    map: &M,
    segment: &RaySegment,
    p_front: &Vec3,
    p_back: &Vec3,
    tol: &dyn Fn(&Vec3) -> f64,
) -> Result<Option<EntryRepair>, InversionError> {
    let jet = map.jet(p_front, JetOrder::First)?;
    if JacobianQr::factor(&jet.jacobian, p_front).is_ok() {
        return Ok(None);
    }
    let pdir = (p_back - p_front).try_normalize(0.0).unwrap_or_else(|| Vec3::repeat(1.0 / 3f64.sqrt()));
    let pspan = (p_back - p_front).norm().max(1e-6);
    let mut frac = DEGENERATE_START;
    let mut attempts = Vec::new();
    while frac <= DEGENERATE_CAP * (1.0 + 1e-12) {
        let delta = frac * segment.length;
        let eps = frac * pspan;
        attempts.push((delta, eps));
        log::debug!("degenerate entry: trying delta={delta:e} eps={eps:e}");
        let g = segment.at(delta);
        let x0 = clamp_unit(&(p_front + pdir * eps));
        if let Ok(res) = newton_invert(map, &g, &x0, tol(&g)) {
            let regular = map
                .jet(&res.point, JetOrder::First)
                .ok()
                .map(|j| JacobianQr::factor(&j.jacobian, &res.point).is_ok())
                .unwrap_or(false);
            if regular {
                return Ok(Some(EntryRepair { g_front: g, p_front: res.point, delta, attempts }));
            }
        }
        frac *= 2.0;
    }
    Err(InversionError::DegenerateEntry { attempts: attempts.len() })
}

/// A sample along a segment: arc length, parameter point and the jet there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub s: f64,
    pub p: Vec3,
    pub jet: Jet3,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SamplerStats {
    pub newton_iterations: usize,
    pub singular_recoveries: usize,
    pub boundary_walks: usize,
    pub degenerate_entry: Option<Vec<(f64, f64)>>,
    /// Set when sampling stopped before reaching the exit point.
    pub truncated: bool,
    /// Samples dropped because their image did not advance along the ray
    /// (the trajectory was pinned to a cube face).
    pub stalled: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSamples {
    pub samples: Vec<Sample>,
    pub stats: SamplerStats,
}

/// Arc-length positions `0, Δs, 2Δs, …, L` with a shortened last step.
/// A last step below `1e-6 Δs` is merged into the one before it.
pub fn sample_positions(length: f64, ds: f64) -> Vec<f64> {
    let n = (length / ds).ceil().max(1.0) as usize;
    let mut s: Vec<f64> = (0..n).map(|i| i as f64 * ds).filter(|&s| s < length).collect();
    if s.len() > 1 && length - s[s.len() - 1] < 1e-6 * ds {
        s.pop();
    }
    s.push(length);
    s
}

/// Walks from `p_front` to `p_back` along `segment`, producing parameter
/// points whose images follow the ray, using the method in `spec`.
///
/// `tol` gives the pixel-frustum tolerance for a world point; it bounds the
/// Newton residual of root finding and of the singularity fallbacks.
pub fn sample_segment<M: GeometryMap + ?Sized>(
    map: &M,
    segment: &RaySegment,
    p_front: &Vec3,
    p_back: &Vec3,
    spec: &IntegratorSpec,
    tol: &dyn Fn(&Vec3) -> f64,
) -> Result<SegmentSamples, InversionError> {
    let mut stats = SamplerStats::default();
    let mut seg = *segment;
    let mut p0 = clamp_unit(p_front);
    let mut offset = 0.0;
    match handle_degenerate_entry(map, segment, &p0, p_back, tol)? {
        None => {}
        Some(fix) => {
            stats.degenerate_entry = Some(fix.attempts);
            if fix.delta >= segment.length {
                return Ok(SegmentSamples { samples: Vec::new(), stats });
            }
            offset = fix.delta;
            seg = RaySegment { front: fix.g_front, length: segment.length - fix.delta, ..*segment };
            p0 = fix.p_front;
        }
    }
    let field = SegmentField::new(seg, spec.c);
    let positions = sample_positions(seg.length, spec.ds);
    let mut samples = Vec::with_capacity(positions.len());
    samples.push(Sample { s: offset, p: p0, jet: map.jet(&p0, JetOrder::First)? });
    let mut cursor = p0;

    for w in positions.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        let h = s1 - s0;
        let prev = cursor;
        let target = seg.at(s1);
        let is_last = s1 == seg.length;
        // a quarter sample distance keeps neighbouring samples in depth order
        let goal = spec.tolerance.unwrap_or_else(|| tol(&target).min(0.25 * spec.ds));
        let root = |stats: &mut SamplerStats| match newton_invert(map, &target, &prev, goal) {
            Ok(r) => {
                stats.newton_iterations += r.iterations;
                stats.boundary_walks += r.walked as usize;
                Ok(r.point)
            }
            // still inside the pixel frustum
            Err(InversionError::NoConvergence { best, residual, iterations }) if residual <= tol(&target) => {
                stats.newton_iterations += iterations;
                Ok(best)
            }
            Err(e) => Err(e),
        };
        let step = match spec.method {
            Method::RootFinding => root(&mut stats),
            Method::Irk1 => implicit_euler_step(map, &prev, &field, h),
            m => explicit_rk_step(map, &prev, &field, m.tableau().expect("explicit"), h),
        };
        let next = match step {
            Ok(p) => Some(p),
            Err(InversionError::Eval(e)) => return Err(e.into()),
            Err(err) if spec.method == Method::RootFinding => {
                log::trace!("sample at s={s1}: {err}");
                None
            }
            Err(err) => {
                log::trace!("sample at s={s1}: {err}; falling back to root finding");
                stats.singular_recoveries += 1;
                root(&mut stats).ok()
            }
        };
        // the exit point's preimage is known from the surface intersection
        let next = next.or_else(|| is_last.then(|| clamp_unit(p_back)));
        let Some(next) = next else {
            stats.truncated = true;
            break;
        };
        cursor = next;
        let jet = map.jet(&next, JetOrder::First)?;
        let last = samples.last().expect("seeded above");
        if (jet.value - last.jet.value).dot(&seg.dir) <= 0.0 {
            // pinned to the boundary: keep integrating but emit nothing
            stats.stalled += 1;
            continue;
        }
        samples.push(Sample { s: offset + s1, p: next, jet });
    }
    Ok(SegmentSamples { samples, stats })
}

/// Distance from `φ(p)` to the segment's line, the per-sample error of the
/// convergence study.
pub fn ray_distance(segment: &RaySegment, g: &Vec3) -> f64 {
    segment.distance_to_line(g)
}

/// Convenience for tests and tools: is `J_φ` regular at `p`?
pub fn is_regular<M: GeometryMap + ?Sized>(map: &M, p: &Vec3) -> bool {
    map.jet(p, JetOrder::First)
        .map(|j| JacobianQr::factor(&j.jacobian, p).is_ok())
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Affine map `A p + b`.
    pub struct Affine {
        pub a: Matrix3<f64>,
        pub b: Vec3,
    }

    impl GeometryMap for Affine {
        fn jet(&self, p: &Vec3, _: JetOrder) -> Result<Jet3, SplineError> {
            Ok(Jet3 { value: self.a * p + self.b, jacobian: self.a, hessian: [Matrix3::zeros(); 3] })
        }
    }

    fn identity() -> Affine {
        Affine { a: Matrix3::identity(), b: Vec3::zeros() }
    }

    fn seg(a: Vec3, b: Vec3) -> RaySegment {
        RaySegment::new(a, b).unwrap()
    }

    #[test]
    fn field_on_line_is_parallel() {
        let f = SegmentField::new(seg(Vec3::zeros(), Vec3::new(1.0, 2.0, 2.0)), 3.0);
        let g = f.segment.at(0.7);
        assert!((f.velocity(&g) - f.segment.dir).norm() < 1e-15);
        let f0 = SegmentField::new(f.segment, 0.0);
        assert_eq!(f0.velocity(&Vec3::new(5.0, -1.0, 2.0)), f.segment.dir);
        assert_eq!(f0.jacobian(), Matrix3::zeros());
    }

    #[test]
    fn field_jacobian_eigenstructure() {
        let f = SegmentField::new(seg(Vec3::zeros(), Vec3::new(0.3, -0.4, 1.2)), 2.5);
        let j = f.jacobian();
        assert!((j * f.segment.dir).norm() < 1e-14);
        let mut ev: Vec<f64> = j.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] + 2.5).abs() < 1e-12 && (ev[1] + 2.5).abs() < 1e-12 && ev[2].abs() < 1e-12);
    }

    #[test]
    fn newton_identity_one_iteration() {
        let g = Vec3::new(0.2, 0.9, 0.4);
        let r = newton_invert(&identity(), &g, &Vec3::repeat(0.5), 1e-14).unwrap();
        assert_eq!(r.iterations, 1);
        assert!((r.point - g).norm() < 1e-15);
    }

    #[test]
    fn newton_affine_exact_in_one_step() {
        let m = Affine {
            a: Matrix3::new(2.0, 0.3, 0.0, -0.1, 1.5, 0.2, 0.0, 0.4, 0.8),
            b: Vec3::new(1.0, -2.0, 0.5),
        };
        let p = Vec3::new(0.3, 0.6, 0.2);
        let g = m.a * p + m.b;
        let r = newton_invert(&m, &g, &Vec3::repeat(0.5), 1e-13).unwrap();
        assert_eq!(r.iterations, 1);
        assert!((r.point - p).norm() < 1e-14);
    }

    #[test]
    fn singular_jacobian_is_reported() {
        let m = Affine { a: Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0), b: Vec3::zeros() };
        let err = newton_invert(&m, &Vec3::new(0.1, 0.1, 0.1), &Vec3::repeat(0.5), 1e-12).unwrap_err();
        assert!(matches!(err, InversionError::Singular { .. }));
    }

    #[test]
    fn constant_field_is_integrated_exactly() {
        let s = seg(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.6, 0.7, 0.8));
        let field = SegmentField::new(s, 0.0);
        for m in [Method::Rk1, Method::Rk2, Method::Rk3, Method::Rk4, Method::Rk4ThreeEighths, Method::Rkf5] {
            let next = explicit_rk_step(&identity(), &s.front, &field, m.tableau().unwrap(), 0.05).unwrap();
            assert!((next - (s.front + s.dir * 0.05)).norm() < 1e-15, "{m}");
        }
    }

    #[test]
    fn implicit_euler_identity_fixed_point() {
        // z = h (V∥ + c((f − p − z) − ⟨f − p − z, V∥⟩V∥)) is linear in z
        let s = seg(Vec3::new(0.2, 0.2, 0.2), Vec3::new(0.8, 0.5, 0.4));
        let field = SegmentField::new(s, 7.0);
        let p = Vec3::new(0.35, 0.3, 0.22);
        let h = 0.03;
        let z = implicit_euler_step(&identity(), &p, &field, h).unwrap() - p;
        // closed form: (I − h J_V) z = h V(p)
        let expect = (Matrix3::identity() - field.jacobian() * h).try_inverse().unwrap() * (field.velocity(&p) * h);
        assert!((z - expect).norm() < 1e-12);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("RK4-3/8".parse::<Method>().unwrap(), Method::Rk4ThreeEighths);
        assert!("rk9".parse::<Method>().is_err());
    }

    #[test]
    fn sample_positions_end_on_length() {
        let s = sample_positions(1.0, 0.3);
        assert_eq!(s.len(), 5);
        assert_eq!(*s.last().unwrap(), 1.0);
        assert_eq!(sample_positions(0.9, 0.3).len(), 4);
    }

    #[test]
    fn regular_entry_is_untouched() {
        let s = seg(Vec3::new(0.1, 0.1, 0.0), Vec3::new(0.1, 0.1, 1.0));
        let r = handle_degenerate_entry(&identity(), &s, &Vec3::new(0.1, 0.1, 0.0), &Vec3::new(0.1, 0.1, 1.0), &|_| 1e-9);
        assert_eq!(r.unwrap(), None);
    }
}

//! Knot vectors and tensor-product B-spline evaluation with first and
//! second derivatives.
//!
//! All parameter domains are normalized to `[0, 1]` when a spline is
//! constructed, so derivatives are always taken with respect to the unit
//! cube (or unit square for boundary patches).

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Largest supported polynomial degree in any direction.
pub const MAX_DEGREE: usize = 7;
const MAX_ORDER: usize = MAX_DEGREE + 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplineError {
    #[error("degree {0} exceeds the supported maximum of {MAX_DEGREE}")]
    DegreeTooHigh(usize),
    #[error("knot vector of degree {degree} needs at least {min} knots, got {len}")]
    TooFewKnots { len: usize, degree: usize, min: usize },
    #[error("knot vector decreases at index {0}")]
    Decreasing(usize),
    #[error("knot vector contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("knot vector has no non-degenerate span")]
    DegenerateDomain,
    #[error("parameter {t} outside domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("control net holds {got} values, expected {expected}")]
    ControlNetSize { got: usize, expected: usize },
    #[error("control point dimension must be at least 1")]
    ZeroDimension,
    #[error("operation needs a {expected}-dimensional spline, this one is {got}-dimensional")]
    WrongDimension { expected: usize, got: usize },
}

/// Non-decreasing knot sequence together with the degree it serves.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self, SplineError> {
        if degree > MAX_DEGREE {
            return Err(SplineError::DegreeTooHigh(degree));
        }
        let min = 2 * (degree + 1);
        if knots.len() < min {
            return Err(SplineError::TooFewKnots { len: knots.len(), degree, min });
        }
        if let Some(i) = knots.iter().position(|k| !k.is_finite()) {
            return Err(SplineError::NonFinite(i));
        }
        if let Some(i) = knots.windows(2).position(|w| w[1] < w[0]) {
            return Err(SplineError::Decreasing(i + 1));
        }
        let kv = KnotVector { knots, degree };
        if kv.domain_min() >= kv.domain_max() {
            return Err(SplineError::DegenerateDomain);
        }
        Ok(kv)
    }

    /// Open uniform (clamped) knot vector on `[0, 1]` with `n` basis functions.
    pub fn open_uniform(n: usize, degree: usize) -> Result<Self, SplineError> {
        if n < degree + 1 {
            return Err(SplineError::TooFewKnots { len: n + degree + 1, degree, min: 2 * (degree + 1) });
        }
        let inner = n - degree;
        let mut knots = vec![0.0; degree + 1];
        for i in 1..inner {
            knots.push(i as f64 / inner as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::new(knots, degree)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions (control points in this direction).
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn domain_min(&self) -> f64 {
        self.knots[self.degree]
    }

    pub fn domain_max(&self) -> f64 {
        self.knots[self.num_basis()]
    }

    /// Greville abscissae, one per basis function. Control points placed at
    /// `f(greville)` reproduce any affine `f` exactly.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        if p == 0 {
            return (0..self.num_basis()).map(|i| 0.5 * (self.knots[i] + self.knots[i + 1])).collect();
        }
        (0..self.num_basis()).map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64).collect()
    }

    /// Affinely rescales the knots so the active domain becomes `[0, 1]`.
    pub fn normalized(&self) -> KnotVector {
        let (lo, hi) = (self.domain_min(), self.domain_max());
        let scale = 1.0 / (hi - lo);
        let n = self.num_basis();
        let knots = self
            .knots
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                // pin the domain ends exactly
                if i >= self.degree && i <= n && k == lo {
                    0.0
                } else if i >= self.degree && i <= n && k == hi {
                    1.0
                } else {
                    (k - lo) * scale
                }
            })
            .collect();
        KnotVector { knots, degree: self.degree }
    }

    /// Index `s` of the knot span containing `t`, with `knots[s] <= t < knots[s+1]`.
    /// At the domain maximum the last non-degenerate span is returned.
    pub fn find_span(&self, t: f64) -> Result<usize, SplineError> {
        let (lo, hi) = (self.domain_min(), self.domain_max());
        if !(t >= lo && t <= hi) {
            return Err(SplineError::OutOfDomain { t, lo, hi });
        }
        let n = self.num_basis();
        if t == hi {
            let mut s = n - 1;
            while self.knots[s] >= self.knots[s + 1] {
                s -= 1;
            }
            return Ok(s);
        }
        // binary search over [p, n-1]
        let (mut low, mut high) = (self.degree, n);
        while high - low > 1 {
            let mid = (low + high) / 2;
            if t < self.knots[mid] {
                high = mid;
            } else {
                low = mid;
            }
        }
        Ok(low)
    }

    /// Nonzero basis functions and derivatives at `t` (Piegl–Tiller A2.3).
    ///
    /// Derivative orders above the degree are returned as zero.
    #[inline]
    pub fn basis_with_derivatives(&self, span: usize, t: f64, nders: usize) -> BasisDerivs {
        let p = self.degree;
        let u = &self.knots;
        let nd = nders.min(2);
        let mut out = BasisDerivs { degree: p, ders: [[0.0; MAX_ORDER]; 3] };

        let mut ndu = [[0.0f64; MAX_ORDER]; MAX_ORDER];
        let mut left = [0.0f64; MAX_ORDER];
        let mut right = [0.0f64; MAX_ORDER];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        for j in 0..=p {
            out.ders[0][j] = ndu[j][p];
        }

        let mut a = [[0.0f64; MAX_ORDER]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize) - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                out.ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=nd.min(p) {
            for j in 0..=p {
                out.ders[k][j] *= factor;
            }
            factor *= (p - k) as f64;
        }
        out
    }
}

/// The `p + 1` nonzero basis values and their first two derivatives.
#[derive(Debug, Clone, Copy)]
pub struct BasisDerivs {
    degree: usize,
    ders: [[f64; MAX_ORDER]; 3],
}

impl BasisDerivs {
    /// Derivative of order `k` (0..=2) of the `p + 1` active functions.
    pub fn order(&self, k: usize) -> &[f64] {
        &self.ders[k][..=self.degree]
    }

    pub fn values(&self) -> &[f64] {
        self.order(0)
    }
}

/// How many derivative orders to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum JetOrder {
    Value = 0,
    First = 1,
    Second = 2,
}

const WEIGHTS: usize = 10;

fn first_of(s: &[f64; WEIGHTS]) -> [f64; 3] {
    [s[1], s[2], s[3]]
}

fn second_of(s: &[f64; WEIGHTS]) -> [[f64; 3]; 3] {
    [[s[4], s[7], s[8]], [s[7], s[5], s[9]], [s[8], s[9], s[6]]]
}

/// Value, Jacobian and Hessian of a `d`-valued spline at a parameter point.
///
/// `jacobian[c][a]` is `∂S_c/∂p_a`; `hessian[c][a][b]` is `∂²S_c/∂p_a∂p_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineJet {
    pub value: Vec<f64>,
    pub jacobian: Vec<[f64; 3]>,
    pub hessian: Vec<[[f64; 3]; 3]>,
}

/// Jet of a map `R³ → R³` in matrix form.
///
/// `jacobian[(c, a)] = ∂φ_c/∂p_a`; `hessian[c][(a, b)] = ∂²φ_c/∂p_a∂p_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet3 {
    pub value: Vector3<f64>,
    pub jacobian: Matrix3<f64>,
    pub hessian: [Matrix3<f64>; 3],
}

impl Jet3 {
    /// Contracts the Hessian with `w` in its first parameter slot:
    /// `out[(c, b)] = Σ_a ∂²φ_c/∂p_a∂p_b · w_a`.
    pub fn hessian_contract(&self, w: &Vector3<f64>) -> Matrix3<f64> {
        let mut out = Matrix3::zeros();
        for c in 0..3 {
            let row = self.hessian[c] * w;
            for b in 0..3 {
                out[(c, b)] = row[b];
            }
        }
        out
    }
}

/// Trivariate tensor-product B-spline with `d`-dimensional control points.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineVolume {
    knots: [KnotVector; 3],
    dim: usize,
    /// Flat control net, `i` fastest, then `j`, then `k`; `dim` values per point.
    points: Vec<f64>,
}

impl BSplineVolume {
    /// Builds a volume; knot domains are normalized to `[0, 1]`.
    pub fn new(knots: [KnotVector; 3], dim: usize, points: Vec<f64>) -> Result<Self, SplineError> {
        if dim == 0 {
            return Err(SplineError::ZeroDimension);
        }
        let expected = knots.iter().map(KnotVector::num_basis).product::<usize>() * dim;
        if points.len() != expected {
            return Err(SplineError::ControlNetSize { got: points.len(), expected });
        }
        let knots = [knots[0].normalized(), knots[1].normalized(), knots[2].normalized()];
        Ok(BSplineVolume { knots, dim, points })
    }

    /// Builds a volume from a closure over control-point indices `(i, j, k)`.
    pub fn from_fn<F>(knots: [KnotVector; 3], dim: usize, mut f: F) -> Result<Self, SplineError>
    where
        F: FnMut(usize, usize, usize) -> Vec<f64>,
    {
        let [l, m, n] = [knots[0].num_basis(), knots[1].num_basis(), knots[2].num_basis()];
        let mut points = Vec::with_capacity(l * m * n * dim);
        for k in 0..n {
            for j in 0..m {
                for i in 0..l {
                    let cp = f(i, j, k);
                    if cp.len() != dim {
                        return Err(SplineError::WrongDimension { expected: dim, got: cp.len() });
                    }
                    points.extend_from_slice(&cp);
                }
            }
        }
        Self::new(knots, dim, points)
    }

    pub fn knots(&self) -> &[KnotVector; 3] {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Control-net size `(l, m, n)`.
    pub fn size(&self) -> [usize; 3] {
        [self.knots[0].num_basis(), self.knots[1].num_basis(), self.knots[2].num_basis()]
    }

    pub fn control_point(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let [l, m, _] = self.size();
        let idx = ((k * m + j) * l + i) * self.dim;
        &self.points[idx..idx + self.dim]
    }

    #[inline]
    fn basis_at(&self, p: &Vector3<f64>, order: JetOrder) -> Result<[(usize, BasisDerivs); 3], SplineError> {
        let k = &self.knots;
        let span = [k[0].find_span(p[0])?, k[1].find_span(p[1])?, k[2].find_span(p[2])?];
        let n = order as usize;
        Ok([
            (span[0], k[0].basis_with_derivatives(span[0], p[0], n)),
            (span[1], k[1].basis_with_derivatives(span[1], p[1], n)),
            (span[2], k[2].basis_with_derivatives(span[2], p[2], n)),
        ])
    }

    /// Evaluates the tensor-product sum and (optionally) its derivatives.
    ///
    /// The three basis computations are shared by value, Jacobian and Hessian.
    pub fn eval(&self, p: &Vector3<f64>, order: JetOrder) -> Result<SplineJet, SplineError> {
        let sums: Vec<[f64; WEIGHTS]> = match self.dim {
            3 => self.sums::<3>(p, order, 0)?.to_vec(),
            d => (0..d).map(|c| self.sums::<1>(p, order, c).map(|s| s[0])).collect::<Result<_, _>>()?,
        };
        Ok(SplineJet {
            value: sums.iter().map(|s| s[0]).collect(),
            jacobian: if order >= JetOrder::First { sums.iter().map(first_of).collect() } else { Vec::new() },
            hessian: if order >= JetOrder::Second { sums.iter().map(second_of).collect() } else { Vec::new() },
        })
    }

    /// Jet of a 3-vector valued volume in matrix form.
    pub fn eval3(&self, p: &Vector3<f64>, order: JetOrder) -> Result<Jet3, SplineError> {
        if self.dim != 3 {
            return Err(SplineError::WrongDimension { expected: 3, got: self.dim });
        }
        let sums = self.sums::<3>(p, order, 0)?;
        let mut jet = Jet3 { value: Vector3::zeros(), jacobian: Matrix3::zeros(), hessian: [Matrix3::zeros(); 3] };
        for (c, s) in sums.iter().enumerate() {
            jet.value[c] = s[0];
            for (a, g) in first_of(s).into_iter().enumerate() {
                jet.jacobian[(c, a)] = g;
            }
            let h = second_of(s);
            jet.hessian[c] = Matrix3::from_fn(|a, b| h[a][b]);
        }
        Ok(jet)
    }

    /// Value and gradient of a scalar volume.
    pub fn eval_scalar(&self, p: &Vector3<f64>, order: JetOrder) -> Result<(f64, Vector3<f64>), SplineError> {
        if self.dim != 1 {
            return Err(SplineError::WrongDimension { expected: 1, got: self.dim });
        }
        let [s] = self.sums::<1>(p, order.min(JetOrder::First), 0)?;
        Ok((s[0], Vector3::from(first_of(&s))))
    }

    /// Weighted sums for components `first .. first + D`, laid out as value,
    /// `∂u ∂v ∂w`, then `∂uu ∂vv ∂ww ∂uv ∂uw ∂vw`; entries beyond `order`
    /// are zero.
    fn sums<const D: usize>(&self, p: &Vector3<f64>, order: JetOrder, first: usize) -> Result<[[f64; WEIGHTS]; D], SplineError> {
        fn pad<const D: usize, const N: usize>(s: [[f64; N]; D]) -> [[f64; WEIGHTS]; D] {
            s.map(|c| {
                let mut out = [0.0; WEIGHTS];
                out[..N].copy_from_slice(&c);
                out
            })
        }
        Ok(match order {
            JetOrder::Value => pad(self.accumulate::<D, 1>(p, first)?),
            JetOrder::First => pad(self.accumulate::<D, 4>(p, first)?),
            JetOrder::Second => self.accumulate::<D, WEIGHTS>(p, first)?,
        })
    }

    /// Core loop over the `(p+1)³` supporting control points; `N` is 1, 4
    /// or 10 weights for value, first or second order.
    fn accumulate<const D: usize, const N: usize>(&self, p: &Vector3<f64>, first: usize) -> Result<[[f64; N]; D], SplineError> {
        let order = match N {
            1 => JetOrder::Value,
            4 => JetOrder::First,
            _ => JetOrder::Second,
        };
        let basis = self.basis_at(p, order)?;
        let [pu, pv, pw] = [self.knots[0].degree(), self.knots[1].degree(), self.knots[2].degree()];
        let [l, m, _] = self.size();
        let (su, bu) = &basis[0];
        let (sv, bv) = &basis[1];
        let (sw, bw) = &basis[2];
        let d = self.dim;
        let mut sums = [[0.0; N]; D];
        let mut wt = [0.0; N];
        for c in 0..=pw {
            let k = sw - pw + c;
            let w = [bw.ders[0][c], bw.ders[1][c], bw.ders[2][c]];
            for b in 0..=pv {
                let j = sv - pv + b;
                let v = [bv.ders[0][b], bv.ders[1][b], bv.ders[2][b]];
                let (v0w0, v1w0, v0w1) = (v[0] * w[0], v[1] * w[0], v[0] * w[1]);
                let row = ((k * m + j) * l + su - pu) * d + first;
                for a in 0..=pu {
                    let u = [bu.ders[0][a], bu.ders[1][a], bu.ders[2][a]];
                    wt[0] = u[0] * v0w0;
                    if N > 1 {
                        wt[1] = u[1] * v0w0;
                        wt[2] = u[0] * v1w0;
                        wt[3] = u[0] * v0w1;
                    }
                    if N > 4 {
                        wt[4] = u[2] * v0w0;
                        wt[5] = u[0] * v[2] * w[0];
                        wt[6] = u[0] * v[0] * w[2];
                        wt[7] = u[1] * v1w0;
                        wt[8] = u[1] * v0w1;
                        wt[9] = u[0] * v[1] * w[1];
                    }
                    let cp: &[f64; D] = self.points[row + a * d..][..D].try_into().expect("D components");
                    for (sum, &x) in sums.iter_mut().zip(cp) {
                        for (s, &t) in sum.iter_mut().zip(&wt) {
                            *s += t * x;
                        }
                    }
                }
            }
        }
        Ok(sums)
    }

    /// Axis-aligned bounding box of the control net (contains the image by
    /// the convex-hull property). Only meaningful for `dim == 3`.
    pub fn control_bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for cp in self.points.chunks(self.dim) {
            for a in 0..self.dim.min(3) {
                lo[a] = lo[a].min(cp[a]);
                hi[a] = hi[a].max(cp[a]);
            }
        }
        (lo, hi)
    }

    /// Restriction of the volume to each of the six faces of the parameter cube.
    pub fn boundary_patches(&self) -> Vec<BoundaryPatch> {
        Face::ALL.iter().map(|&face| BoundaryPatch { face, patch: self.restrict_to_face(face) }).collect()
    }

    /// Contracts the control net against the basis at the face's fixed
    /// parameter value, which is exact for any knot vector.
    pub fn restrict_to_face(&self, face: Face) -> BSplinePatch {
        let axis = face.axis;
        let [fa, fb] = face.free_axes();
        let t = face.fixed_value();
        let kv = &self.knots[axis];
        let span = kv.find_span(t).expect("face value lies in the normalized domain");
        let basis = kv.basis_with_derivatives(span, t, 0);
        let size = self.size();
        let (ns, nt) = (size[fa], size[fb]);
        let d = self.dim;
        let mut points = vec![0.0; ns * nt * d];
        for jt in 0..nt {
            for is in 0..ns {
                let out = &mut points[(jt * ns + is) * d..(jt * ns + is + 1) * d];
                for (r, &nval) in basis.values().iter().enumerate() {
                    if nval == 0.0 {
                        continue;
                    }
                    let mut idx = [0usize; 3];
                    idx[axis] = span - kv.degree() + r;
                    idx[fa] = is;
                    idx[fb] = jt;
                    let cp = self.control_point(idx[0], idx[1], idx[2]);
                    for c in 0..d {
                        out[c] += nval * cp[c];
                    }
                }
            }
        }
        BSplinePatch { knots: [self.knots[fa].clone(), self.knots[fb].clone()], dim: d, points }
    }
}

/// One face of the parameter cube: `p[axis] = side`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Face {
    pub axis: usize,
    /// `false` for the face at 0, `true` for the face at 1.
    pub upper: bool,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face { axis: 0, upper: false },
        Face { axis: 0, upper: true },
        Face { axis: 1, upper: false },
        Face { axis: 1, upper: true },
        Face { axis: 2, upper: false },
        Face { axis: 2, upper: true },
    ];

    /// The two free parameter axes in increasing order.
    pub fn free_axes(&self) -> [usize; 2] {
        match self.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }

    pub fn fixed_value(&self) -> f64 {
        if self.upper {
            1.0
        } else {
            0.0
        }
    }

    /// Maps patch coordinates `(s, t)` to the 3D parameter point on this face.
    pub fn embed(&self, s: f64, t: f64) -> Vector3<f64> {
        let [a, b] = self.free_axes();
        let mut p = Vector3::zeros();
        p[self.axis] = self.fixed_value();
        p[a] = s;
        p[b] = t;
        p
    }

    /// Outward normal of the face in parameter space.
    pub fn outward_normal(&self) -> Vector3<f64> {
        let mut n = Vector3::zeros();
        n[self.axis] = if self.upper { 1.0 } else { -1.0 };
        n
    }

    /// True when `e_s × e_t` (free axes in order) points inward, i.e. the
    /// natural `(s, t)` winding must be flipped to face outward.
    pub fn flips_winding(&self) -> bool {
        let [a, b] = self.free_axes();
        let natural = Vector3::<f64>::ith(a, 1.0).cross(&Vector3::ith(b, 1.0));
        natural.dot(&self.outward_normal()) < 0.0
    }
}

/// Tensor-product B-spline surface, `s` fastest in the flat control net.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplinePatch {
    knots: [KnotVector; 2],
    dim: usize,
    points: Vec<f64>,
}

/// Value plus first and second partials of a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchJet {
    pub value: Vec<f64>,
    pub ds: Vec<f64>,
    pub dt: Vec<f64>,
    pub dss: Vec<f64>,
    pub dst: Vec<f64>,
    pub dtt: Vec<f64>,
}

impl BSplinePatch {
    pub fn new(knots: [KnotVector; 2], dim: usize, points: Vec<f64>) -> Result<Self, SplineError> {
        if dim == 0 {
            return Err(SplineError::ZeroDimension);
        }
        let expected = knots[0].num_basis() * knots[1].num_basis() * dim;
        if points.len() != expected {
            return Err(SplineError::ControlNetSize { got: points.len(), expected });
        }
        Ok(BSplinePatch { knots: [knots[0].normalized(), knots[1].normalized()], dim, points })
    }

    pub fn knots(&self) -> &[KnotVector; 2] {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn size(&self) -> [usize; 2] {
        [self.knots[0].num_basis(), self.knots[1].num_basis()]
    }

    pub fn control_point(&self, i: usize, j: usize) -> &[f64] {
        let idx = (j * self.knots[0].num_basis() + i) * self.dim;
        &self.points[idx..idx + self.dim]
    }

    pub fn eval(&self, s: f64, t: f64) -> Result<PatchJet, SplineError> {
        let ss = self.knots[0].find_span(s)?;
        let st = self.knots[1].find_span(t)?;
        let bs = self.knots[0].basis_with_derivatives(ss, s, 2);
        let bt = self.knots[1].basis_with_derivatives(st, t, 2);
        let (ps, pt) = (self.knots[0].degree(), self.knots[1].degree());
        let d = self.dim;
        let mut jet = PatchJet {
            value: vec![0.0; d],
            ds: vec![0.0; d],
            dt: vec![0.0; d],
            dss: vec![0.0; d],
            dst: vec![0.0; d],
            dtt: vec![0.0; d],
        };
        for b in 0..=pt {
            let j = st - pt + b;
            for a in 0..=ps {
                let i = ss - ps + a;
                let cp = self.control_point(i, j);
                let (u0, u1, u2) = (bs.ders[0][a], bs.ders[1][a], bs.ders[2][a]);
                let (v0, v1, v2) = (bt.ders[0][b], bt.ders[1][b], bt.ders[2][b]);
                for c in 0..d {
                    let x = cp[c];
                    jet.value[c] += u0 * v0 * x;
                    jet.ds[c] += u1 * v0 * x;
                    jet.dt[c] += u0 * v1 * x;
                    jet.dss[c] += u2 * v0 * x;
                    jet.dst[c] += u1 * v1 * x;
                    jet.dtt[c] += u0 * v2 * x;
                }
            }
        }
        Ok(jet)
    }

    /// Control net of the derivative surface along `dir` (0 = s, 1 = t).
    fn derivative_net(&self, dir: usize) -> Option<BSplinePatch> {
        let kv = &self.knots[dir];
        let p = kv.degree();
        if p == 0 {
            return None;
        }
        let [ns, nt] = self.size();
        let u = kv.knots();
        let d = self.dim;
        let (ms, mt) = if dir == 0 { (ns - 1, nt) } else { (ns, nt - 1) };
        let mut points = vec![0.0; ms * mt * d];
        for j in 0..mt {
            for i in 0..ms {
                let (i1, j1) = if dir == 0 { (i + 1, j) } else { (i, j + 1) };
                let idx = if dir == 0 { i } else { j };
                let denom = u[idx + p + 1] - u[idx + 1];
                if denom <= 0.0 {
                    continue;
                }
                let scale = p as f64 / denom;
                let a = self.control_point(i, j);
                let b = self.control_point(i1, j1);
                for c in 0..d {
                    points[(j * ms + i) * d + c] = scale * (b[c] - a[c]);
                }
            }
        }
        let mut knots = self.knots.clone();
        knots[dir] = KnotVector { knots: u[1..u.len() - 1].to_vec(), degree: p - 1 };
        Some(BSplinePatch { knots, dim: d, points })
    }

    fn max_point_norm(&self) -> f64 {
        self.points
            .chunks(self.dim)
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Upper bounds on the sup-norms of `∂²S/∂s²`, `∂²S/∂t²` and `∂²S/∂s∂t`
    /// from the derivative control nets (convex-hull property).
    pub fn second_derivative_bound(&self) -> SecondDerivativeBound {
        let twice = |a: usize, b: usize| {
            self.derivative_net(a).and_then(|n| n.derivative_net(b)).map_or(0.0, |n| n.max_point_norm())
        };
        SecondDerivativeBound { ss: twice(0, 0), tt: twice(1, 1), st: twice(0, 1) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SecondDerivativeBound {
    pub ss: f64,
    pub tt: f64,
    pub st: f64,
}

/// A boundary face of a volume together with its surface restriction.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPatch {
    pub face: Face,
    pub patch: BSplinePatch,
}

impl BoundaryPatch {
    /// Embeds patch coordinates into the parent volume's parameter cube.
    pub fn embed(&self, s: f64, t: f64) -> Vector3<f64> {
        self.face.embed(s, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(knots: &[f64], p: usize) -> KnotVector {
        KnotVector::new(knots.to_vec(), p).unwrap()
    }

    #[test]
    fn span_lookup_basic() {
        let k = kv(&[0.0, 0.0, 1.0, 2.0, 2.0], 1);
        assert_eq!(k.find_span(0.5).unwrap(), 1);
        assert_eq!(k.find_span(2.0).unwrap(), 2);
        assert_eq!(k.find_span(1.0).unwrap(), 2);
        assert!(matches!(k.find_span(2.5), Err(SplineError::OutOfDomain { .. })));
        assert!(k.find_span(f64::NAN).is_err());
    }

    #[test]
    fn domain_max_skips_repeated_interior_knots() {
        let k = kv(&[0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0], 2);
        assert_eq!(k.find_span(1.0).unwrap(), 3);
        assert_eq!(k.find_span(0.0).unwrap(), 2);
    }

    #[test]
    fn invalid_knot_vectors() {
        assert!(matches!(KnotVector::new(vec![0.0, 0.0, 1.0], 1), Err(SplineError::TooFewKnots { .. })));
        assert!(matches!(KnotVector::new(vec![0.0, 1.0, 0.5, 1.0], 1), Err(SplineError::Decreasing(2))));
        assert!(matches!(KnotVector::new(vec![1.0, 1.0, 1.0, 1.0], 1), Err(SplineError::DegenerateDomain)));
    }

    #[test]
    fn linear_hats_at_midspan() {
        let k = kv(&[0.0, 0.0, 1.0, 2.0, 2.0], 1);
        let s = k.find_span(0.5).unwrap();
        let b = k.basis_with_derivatives(s, 0.5, 2);
        assert_eq!(b.values(), &[0.5, 0.5]);
        assert_eq!(b.order(2), &[0.0, 0.0]);
    }

    #[test]
    fn normalization_maps_domain_to_unit_interval() {
        let k = kv(&[2.0, 2.0, 2.0, 3.0, 6.0, 6.0, 6.0], 2).normalized();
        assert_eq!(k.domain_min(), 0.0);
        assert_eq!(k.domain_max(), 1.0);
        assert!((k.knots()[3] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn face_winding_points_outward() {
        for f in Face::ALL {
            let [a, b] = f.free_axes();
            let mut n = Vector3::<f64>::ith(a, 1.0).cross(&Vector3::ith(b, 1.0));
            if f.flips_winding() {
                n = -n;
            }
            assert_eq!(n, f.outward_normal());
        }
    }

    #[test]
    fn u_squared_patch_bound() {
        // S(s, t) = (s, t, s²) as a quadratic-in-s, linear-in-t Bezier patch.
        let ks = KnotVector::open_uniform(3, 2).unwrap();
        let kt = KnotVector::open_uniform(2, 1).unwrap();
        let mut pts = Vec::new();
        for j in 0..2 {
            for (i, z) in [0.0, 0.0, 1.0].iter().enumerate() {
                pts.extend_from_slice(&[i as f64 / 2.0, j as f64, *z]);
            }
        }
        let patch = BSplinePatch::new([ks, kt], 3, pts).unwrap();
        let b = patch.second_derivative_bound();
        assert!((b.ss - 2.0).abs() < 1e-12);
        assert_eq!(b.tt, 0.0);
        assert_eq!(b.st, 0.0);
        let jet = patch.eval(0.3, 0.7).unwrap();
        assert!((jet.value[2] - 0.09).abs() < 1e-14);
        assert!((jet.dss[2] - 2.0).abs() < 1e-12);
    }
}

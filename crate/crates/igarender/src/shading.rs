//! Transfer functions, front-to-back compositing with opacity correction,
//! supersampling between field samples, and derived scalar fields.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::spline::Jet3;

pub type Rgb = [f64; 3];

/// Opacity above which a ray is considered saturated.
pub const EARLY_TERMINATION: f64 = 0.999;
/// Substeps per transfer-function node crossed by a linear field segment.
pub const SUBSTEPS_PER_NODE: usize = 16;
pub const MAX_SUBSTEPS: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShadingError {
    #[error("transfer function needs at least one node")]
    NoNodes,
    #[error("transfer function node values must increase strictly (node {0})")]
    NotIncreasing(usize),
    #[error("transfer function node {0} has color or opacity outside [0, 1]")]
    OutOfRange(usize),
    #[error("reference length must be positive, got {0}")]
    BadReferenceLength(f64),
    #[error("geometry Jacobian is singular")]
    SingularJacobian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TfNode {
    pub value: f64,
    pub color: Rgb,
    pub alpha: f64,
}

/// Piecewise-linear map from field value to color and opacity; `alpha` is
/// the opacity of a slab of thickness `reference_length`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    nodes: Vec<TfNode>,
    reference_length: f64,
}

impl TransferFunction {
    pub fn new(nodes: Vec<TfNode>, reference_length: f64) -> Result<Self, ShadingError> {
        if nodes.is_empty() {
            return Err(ShadingError::NoNodes);
        }
        if let Some(i) = nodes.windows(2).position(|w| !(w[1].value > w[0].value)) {
            return Err(ShadingError::NotIncreasing(i + 1));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if let Some(i) = nodes.iter().position(|n| !n.color.iter().all(|&c| unit(c)) || !unit(n.alpha)) {
            return Err(ShadingError::OutOfRange(i));
        }
        if !(reference_length > 0.0) {
            return Err(ShadingError::BadReferenceLength(reference_length));
        }
        Ok(TransferFunction { nodes, reference_length })
    }

    pub fn nodes(&self) -> &[TfNode] {
        &self.nodes
    }

    pub fn reference_length(&self) -> f64 {
        self.reference_length
    }

    pub fn with_reference_length(mut self, xi: f64) -> Result<Self, ShadingError> {
        if !(xi > 0.0) {
            return Err(ShadingError::BadReferenceLength(xi));
        }
        self.reference_length = xi;
        Ok(self)
    }

    /// Color and opacity at `value`, clamped to the end nodes.
    pub fn sample(&self, value: f64) -> (Rgb, f64) {
        let n = &self.nodes;
        let first = n[0];
        let last = n[n.len() - 1];
        if !(value > first.value) {
            return (first.color, first.alpha);
        }
        if value >= last.value {
            return (last.color, last.alpha);
        }
        let i = n.partition_point(|node| node.value <= value);
        let (a, b) = (n[i - 1], n[i]);
        let t = (value - a.value) / (b.value - a.value);
        let lerp = |x: f64, y: f64| x + (y - x) * t;
        (
            [lerp(a.color[0], b.color[0]), lerp(a.color[1], b.color[1]), lerp(a.color[2], b.color[2])],
            lerp(a.alpha, b.alpha),
        )
    }

    /// Number of node values strictly between `a` and `b`.
    pub fn nodes_between(&self, a: f64, b: f64) -> usize {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.nodes.iter().filter(|n| n.value > lo && n.value < hi).count()
    }
}

/// Accumulated premultiplied color and opacity along a ray.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompositeState {
    pub color: Rgb,
    pub alpha: f64,
}

impl CompositeState {
    pub fn saturated(&self) -> bool {
        self.alpha > EARLY_TERMINATION
    }

    /// Blends the accumulated color over a background.
    pub fn over(&self, background: Rgb) -> Rgb {
        let t = 1.0 - self.alpha;
        [
            self.color[0] + t * background[0],
            self.color[1] + t * background[1],
            self.color[2] + t * background[2],
        ]
    }
}

/// One front-to-back compositing step of length `ds` with opacity
/// corrected to the reference length `xi`.
pub fn composite_step(state: &mut CompositeState, color: Rgb, alpha: f64, ds: f64, xi: f64) {
    let t = (1.0 - alpha).powf(ds / xi);
    let w = (1.0 - t) * (1.0 - state.alpha);
    for c in 0..3 {
        state.color[c] += w * color[c];
    }
    state.alpha += w;
}

/// Number of substeps for a linear field segment from `a` to `b`.
pub fn substeps_for(tf: &TransferFunction, a: f64, b: f64) -> usize {
    (1 + SUBSTEPS_PER_NODE * tf.nodes_between(a, b)).min(MAX_SUBSTEPS)
}

/// Composites `m` equal substeps across a segment of length `ds`, with the
/// field interpolated linearly from `prev` to `cur` (values at substep midpoints).
pub fn supersample_segment(
    tf: &TransferFunction,
    prev: f64,
    cur: f64,
    ds: f64,
    m: usize,
    state: &mut CompositeState,
) {
    let m = m.max(1);
    let h = ds / m as f64;
    for k in 0..m {
        let v = prev + (cur - prev) * ((k as f64 + 0.5) / m as f64);
        let (c, a) = tf.sample(v);
        composite_step(state, c, a, h, tf.reference_length);
    }
}

/// Parametrization quality `det(J_φ) / ‖J_φ‖_F`; zero when `J_φ = 0`.
pub fn param_quality(jacobian: &Matrix3<f64>) -> f64 {
    let f = jacobian.norm();
    if f == 0.0 {
        0.0
    } else {
        jacobian.determinant() / f
    }
}

/// Von Mises measure from the geometry and displacement jets.
///
/// The spatial displacement gradient `X = J_{u∘φ⁻¹}` is recovered from
/// `J_φᵀ Xᵀ = J_uᵀ`, symmetrized to `σ`, and combined with squared normal
/// differences.
pub fn von_mises(geometry: &Jet3, displacement: &Jet3) -> Result<f64, ShadingError> {
    let jt = geometry.jacobian.transpose();
    let lu = jt.lu();
    let xt = lu.solve(&displacement.jacobian.transpose()).ok_or(ShadingError::SingularJacobian)?;
    if !xt.iter().all(|v| v.is_finite()) {
        return Err(ShadingError::SingularJacobian);
    }
    let x = xt.transpose();
    Ok(von_mises_from_gradient(&x))
}

/// Von Mises measure of the symmetric part of a displacement gradient.
pub fn von_mises_from_gradient(grad: &Matrix3<f64>) -> f64 {
    let s = (grad + grad.transpose()) * 0.5;
    let d12 = s[(0, 0)] - s[(1, 1)];
    let d23 = s[(1, 1)] - s[(2, 2)];
    let d31 = s[(2, 2)] - s[(0, 0)];
    (d12 * d12 + d23 * d23 + d31 * d31 + 6.0 * (s[(0, 1)].powi(2) + s[(1, 2)].powi(2) + s[(2, 0)].powi(2))) / 2.0
}

//! In-memory scene description shared by the direct and voxel renderers.

use crate::camera::{Camera, Vec3};
use crate::inversion::{IntegratorSpec, Method};
use crate::shading::{self, Rgb, ShadingError, TransferFunction};
use crate::spline::{BSplineVolume, JetOrder, Jet3, SplineError};

/// Scalar field rendered inside a block.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    /// A scalar spline `ρ` on the block's parameter domain.
    Scalar(BSplineVolume),
    /// Parametrization quality of the geometry map.
    Quality,
    /// Von Mises measure of a displacement spline `u`.
    VonMises(BSplineVolume),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Shading(#[from] ShadingError),
}

impl FieldSource {
    pub fn name(&self) -> &'static str {
        match self {
            FieldSource::Scalar(_) => "rho",
            FieldSource::Quality => "quality",
            FieldSource::VonMises(_) => "vonmises",
        }
    }

    /// Field value at parameter point `p` given the geometry jet there.
    pub fn value(&self, p: &Vec3, geometry: &Jet3) -> Result<f64, FieldError> {
        match self {
            FieldSource::Scalar(rho) => Ok(rho.eval_scalar(p, JetOrder::Value)?.0),
            FieldSource::Quality => Ok(shading::param_quality(&geometry.jacobian)),
            FieldSource::VonMises(u) => {
                let uj = u.eval3(p, JetOrder::First)?;
                Ok(shading::von_mises(geometry, &uj)?)
            }
        }
    }
}

/// One volume block `G_α`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: usize,
    pub geometry: BSplineVolume,
    pub field: FieldSource,
}

/// Half-space clip: points with `normal · (g − point) < 0` are removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutPlane {
    pub point: Vec3,
    pub normal: Vec3,
}

impl CutPlane {
    pub fn signed_distance(&self, g: &Vec3) -> f64 {
        self.normal.dot(&(g - self.point))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Background {
    Constant(Rgb),
    /// Two-tone checkerboard marking transparent regions.
    Checkerboard { light: Rgb, dark: Rgb, cell: u32 },
}

impl Background {
    pub fn checkerboard() -> Self {
        Background::Checkerboard { light: [0.8; 3], dark: [0.6; 3], cell: 8 }
    }

    pub fn at(&self, x: u32, y: u32) -> Rgb {
        match *self {
            Background::Constant(c) => c,
            Background::Checkerboard { light, dark, cell } => {
                let cell = cell.max(1);
                if ((x / cell) + (y / cell)).is_multiple_of(2) {
                    light
                } else {
                    dark
                }
            }
        }
    }
}

/// Everything needed to render one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub camera: Camera,
    pub blocks: Vec<Block>,
    pub transfer: TransferFunction,
    pub cut_planes: Vec<CutPlane>,
    pub integrator: IntegratorSpec,
    pub supersample: bool,
    pub background: Background,
    /// Record per-sample pixel-accuracy and depth-order audits.
    pub audit: bool,
}

impl Scene {
    /// World bounding box of all blocks (control-net hull).
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        self.blocks.iter().map(|b| b.geometry.control_bounds()).reduce(|a, b| (a.0.inf(&b.0), a.1.sup(&b.1)))
    }

    pub fn diagonal(&self) -> f64 {
        self.bounds().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(1.0)
    }

    /// Sample distance `diagonal / samples`.
    pub fn ds_for_samples(&self, samples: f64) -> f64 {
        self.diagonal() / samples
    }

    /// Default sample distance for `method`: samples per scene diagonal.
    pub fn default_ds(&self, method: Method) -> f64 {
        self.diagonal() / default_samples(method)
    }
}

/// Samples per scene diagonal used when no sample distance is given.
/// Explicit Euler needs denser sampling to stay inside the pixel.
pub fn default_samples(method: Method) -> f64 {
    match method {
        Method::Rk1 => 1024.0,
        _ => 256.0,
    }
}

//! TOML scene files.
//!
//! ```toml
//! [camera]
//! eye = [5.2, 2.4, 0.3]
//! look_at = [0.0, 0.0, 1.9]
//! width = 320
//! height = 240
//!
//! [[block]]
//! geometry = "bar.vol"
//! field = "quality"
//!
//! [transfer]
//! nodes = [
//!   { value = 0.0, color = [0.1, 0.2, 0.9], alpha = 0.02 },
//!   { value = 1.0, color = [0.9, 0.1, 0.1], alpha = 0.02 },
//! ]
//!
//! [integrator]
//! method = "rk4"
//! ```
//!
//! Volume paths are resolved relative to the scene file. Omitted settings
//! get defaults which [`load_scene`] reports back.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Camera, Vec3};
use crate::inversion::{IntegratorSpec, Method};
use crate::models;
use crate::scene::{default_samples, Background, Block, CutPlane, FieldSource, Scene};
use crate::shading::{TfNode, TransferFunction};
use crate::spline::BSplineVolume;
use crate::volfile::{self, VolumeError};

pub const DEFAULT_FOV_Y_DEG: f64 = 40.0;
pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_UP: [f64; 3] = [0.0, 1.0, 0.0];
/// Default transfer-function reference length as a fraction of the diagonal.
pub const DEFAULT_XI_FRACTION: f64 = 1.0 / 512.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub camera: CameraSection,
    #[serde(rename = "block")]
    pub blocks: Vec<BlockSection>,
    pub transfer: TransferSection,
    #[serde(rename = "cut_plane", default, skip_serializing_if = "Vec::is_empty")]
    pub cut_planes: Vec<CutPlaneSection>,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub eye: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov_y_deg: Option<f64>,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Rho,
    Quality,
    VonMises,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSection {
    pub geometry: PathBuf,
    pub field: FieldKind,
    /// Scalar spline for `field = "rho"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<PathBuf>,
    /// Displacement spline for `field = "vonmises"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacement: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    pub value: f64,
    pub color: [f64; 3],
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub nodes: Vec<NodeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_length: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutPlaneSection {
    pub point: [f64; 3],
    pub normal: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Sample distance in world units; exclusive with `samples`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ds: Option<f64>,
    /// Samples per scene diagonal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackgroundSection {
    Named(String),
    Color([f64; 3]),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersample: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<BackgroundSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<bool>,
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{path}: `{field}`: {msg}")]
    Invalid { path: String, field: String, msg: String },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{0}")]
    Serialize(String),
}

/// A validated scene plus the defaults that were filled in, one
/// `field = value` line each.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub scene: Scene,
    pub defaults: Vec<String>,
}

impl SceneFile {
    pub fn parse(text: &str, path: &str) -> Result<SceneFile, SceneError> {
        toml::from_str(text).map_err(|e| SceneError::Parse { path: path.to_string(), msg: e.to_string() })
    }

    pub fn to_toml(&self) -> Result<String, SceneError> {
        toml::to_string(self).map_err(|e| SceneError::Serialize(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        fs::write(path, self.to_toml()?).map_err(|source| SceneError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<SceneFile, SceneError> {
        let p = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| SceneError::Io { path: p.clone(), source })?;
        SceneFile::parse(&text, &p)
    }

    /// Builds the scene; volume paths are taken relative to `base`.
    pub fn resolve(&self, base: &Path, path: &str) -> Result<LoadedScene, SceneError> {
        let invalid = |field: &str, msg: String| SceneError::Invalid { path: path.to_string(), field: field.to_string(), msg };
        let mut defaults = Vec::new();

        let cam = &self.camera;
        let up = cam.up.unwrap_or_else(|| {
            defaults.push(format!("camera.up = {DEFAULT_UP:?}"));
            DEFAULT_UP
        });
        let fov = cam.fov_y_deg.unwrap_or_else(|| {
            defaults.push(format!("camera.fov_y_deg = {DEFAULT_FOV_Y_DEG}"));
            DEFAULT_FOV_Y_DEG
        });
        let near = cam.near.unwrap_or_else(|| {
            defaults.push(format!("camera.near = {DEFAULT_NEAR}"));
            DEFAULT_NEAR
        });
        let camera = Camera::look_at(
            Vec3::from(cam.eye),
            Vec3::from(cam.look_at),
            Vec3::from(up),
            fov.to_radians(),
            cam.width,
            cam.height,
            near,
        )
        .map_err(|e| invalid("camera", e.to_string()))?;

        if self.blocks.is_empty() {
            return Err(invalid("block", "at least one block is required".into()));
        }
        let load = |p: &Path| volfile::load_volume(&base.join(p));
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (id, b) in self.blocks.iter().enumerate() {
            let geometry = load(&b.geometry)?;
            if geometry.dim() != 3 {
                return Err(invalid(&format!("block[{id}].geometry"), format!("expected a 3D map, got dim {}", geometry.dim())));
            }
            let field = match b.field {
                FieldKind::Quality => FieldSource::Quality,
                FieldKind::Rho => {
                    let f = b.scalar.as_ref().ok_or_else(|| invalid(&format!("block[{id}].scalar"), "required for field = \"rho\"".into()))?;
                    let rho = load(f)?;
                    if rho.dim() != 1 {
                        return Err(invalid(&format!("block[{id}].scalar"), format!("expected a scalar volume, got dim {}", rho.dim())));
                    }
                    FieldSource::Scalar(rho)
                }
                FieldKind::VonMises => {
                    let f = b
                        .displacement
                        .as_ref()
                        .ok_or_else(|| invalid(&format!("block[{id}].displacement"), "required for field = \"vonmises\"".into()))?;
                    let u = load(f)?;
                    if u.dim() != 3 {
                        return Err(invalid(&format!("block[{id}].displacement"), format!("expected a 3D volume, got dim {}", u.dim())));
                    }
                    FieldSource::VonMises(u)
                }
            };
            blocks.push(Block { id, geometry, field });
        }

        let mut cut_planes = Vec::new();
        for (i, c) in self.cut_planes.iter().enumerate() {
            let normal = Vec3::from(c.normal);
            if !(normal.norm() > 0.0) || !normal.iter().all(|x| x.is_finite()) {
                return Err(invalid(&format!("cut_plane[{i}].normal"), "must be a nonzero finite vector".into()));
            }
            cut_planes.push(CutPlane { point: Vec3::from(c.point), normal: normal.normalize() });
        }

        let integ = &self.integrator;
        let method: Method = match &integ.method {
            Some(m) => m.parse().map_err(|e: crate::inversion::UnknownMethod| invalid("integrator.method", e.to_string()))?,
            None => {
                defaults.push("integrator.method = \"rk4\"".into());
                Method::Rk4
            }
        };
        let mut integrator = IntegratorSpec::new(method, 1.0);
        match integ.c {
            Some(c) if c > 0.0 && c.is_finite() => integrator.c = c,
            Some(c) => return Err(invalid("integrator.c", format!("must be positive, got {c}"))),
            None => defaults.push(format!("integrator.c = {}", integrator.c)),
        }
        if let Some(t) = integ.tolerance {
            if !(t > 0.0) {
                return Err(invalid("integrator.tolerance", format!("must be positive, got {t}")));
            }
            integrator.tolerance = Some(t);
        }

        let nodes: Vec<TfNode> =
            self.transfer.nodes.iter().map(|n| TfNode { value: n.value, color: n.color, alpha: n.alpha }).collect();
        let out = &self.output;
        let background = match &out.background {
            None => {
                defaults.push("output.background = \"checkerboard\"".into());
                Background::checkerboard()
            }
            Some(BackgroundSection::Named(n)) if n == "checkerboard" => Background::checkerboard(),
            Some(BackgroundSection::Named(n)) => {
                return Err(invalid("output.background", format!("unknown background `{n}`, expected \"checkerboard\" or [r, g, b]")))
            }
            Some(BackgroundSection::Color(c)) => {
                if !c.iter().all(|x| (0.0..=1.0).contains(x)) {
                    return Err(invalid("output.background", "color components must lie in [0, 1]".into()));
                }
                Background::Constant(*c)
            }
        };
        let supersample = out.supersample.unwrap_or_else(|| {
            defaults.push("output.supersample = true".into());
            true
        });
        let audit = out.audit.unwrap_or_else(|| {
            defaults.push("output.audit = false".into());
            false
        });

        // placeholder transfer function until the diagonal is known
        let transfer = TransferFunction::new(nodes, 1.0).map_err(|e| invalid("transfer.nodes", e.to_string()))?;
        let mut scene = Scene { camera, blocks, transfer, cut_planes, integrator, supersample, background, audit };
        let diag = scene.diagonal();

        scene.integrator.ds = match (integ.ds, integ.samples) {
            (Some(_), Some(_)) => return Err(invalid("integrator", "give either `ds` or `samples`, not both".into())),
            (Some(ds), None) if ds > 0.0 && ds.is_finite() => ds,
            (Some(ds), None) => return Err(invalid("integrator.ds", format!("must be positive, got {ds}"))),
            (None, Some(n)) if n > 0.0 && n.is_finite() => diag / n,
            (None, Some(n)) => return Err(invalid("integrator.samples", format!("must be positive, got {n}"))),
            (None, None) => {
                let n = default_samples(method);
                defaults.push(format!("integrator.ds = {} ({n} samples per diagonal)", diag / n));
                diag / n
            }
        };
        let xi = match self.transfer.reference_length {
            Some(x) if x > 0.0 && x.is_finite() => x,
            Some(x) => return Err(invalid("transfer.reference_length", format!("must be positive, got {x}"))),
            None => {
                let x = diag * DEFAULT_XI_FRACTION;
                defaults.push(format!("transfer.reference_length = {x}"));
                x
            }
        };
        scene.transfer = scene.transfer.with_reference_length(xi).map_err(|e| invalid("transfer.reference_length", e.to_string()))?;
        for d in &defaults {
            log::info!("{path}: default {d}");
        }
        Ok(LoadedScene { scene, defaults })
    }
}

/// Reads and validates a scene file.
pub fn load_scene(path: &Path) -> Result<LoadedScene, SceneError> {
    let file = SceneFile::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    file.resolve(base, &path.display().to_string())
}

/// Built-in scenes that can be written out as scene plus volume files.
pub const FIXTURES: [&str; 3] = ["twisted-bar", "collapsed-edge", "annulus"];

/// A scene file together with the volumes it references, keyed by the
/// relative path used in the file.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub file: SceneFile,
    pub volumes: Vec<(PathBuf, BSplineVolume)>,
}

impl Fixture {
    /// Writes `scene.toml` and the volume files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, SceneError> {
        fs::create_dir_all(dir).map_err(|source| SceneError::Io { path: dir.display().to_string(), source })?;
        for (rel, vol) in &self.volumes {
            volfile::save_volume(vol, &dir.join(rel))?;
        }
        let path = dir.join("scene.toml");
        self.file.save(&path)?;
        Ok(path)
    }
}

pub fn fixture(name: &str, width: u32, height: u32, method: Method) -> Option<Fixture> {
    let (scene, view, stem) = match name {
        "twisted-bar" => (models::twisted_bar_scene(width, height, method), models::BAR_VIEW, "bar"),
        "collapsed-edge" => (models::collapsed_edge_scene(width, height, method), models::EDGE_VIEW, "edge"),
        "annulus" => (models::annular_scene(width, height, method), models::ANNULUS_VIEW, "annulus"),
        _ => return None,
    };
    let mut volumes = Vec::new();
    let mut blocks = Vec::new();
    for b in &scene.blocks {
        let geometry = PathBuf::from(format!("{stem}{}.vol", b.id));
        volumes.push((geometry.clone(), b.geometry.clone()));
        let mut section = BlockSection { geometry, field: FieldKind::Quality, scalar: None, displacement: None };
        match &b.field {
            FieldSource::Quality => {}
            FieldSource::Scalar(rho) => {
                let p = PathBuf::from(format!("{stem}{}_rho.vol", b.id));
                volumes.push((p.clone(), rho.clone()));
                section.field = FieldKind::Rho;
                section.scalar = Some(p);
            }
            FieldSource::VonMises(u) => {
                let p = PathBuf::from(format!("{stem}{}_u.vol", b.id));
                volumes.push((p.clone(), u.clone()));
                section.field = FieldKind::VonMises;
                section.displacement = Some(p);
            }
        }
        blocks.push(section);
    }
    let nodes = scene.transfer.nodes().iter().map(|n| NodeSection { value: n.value, color: n.color, alpha: n.alpha }).collect();
    let file = SceneFile {
        camera: CameraSection {
            eye: view.eye,
            look_at: view.target,
            up: Some(DEFAULT_UP),
            fov_y_deg: Some(view.fov_y_deg),
            width,
            height,
            near: Some(view.near),
        },
        blocks,
        transfer: TransferSection { nodes, reference_length: Some(scene.transfer.reference_length()) },
        cut_planes: Vec::new(),
        integrator: IntegratorSection {
            method: Some(method.name().to_string()),
            c: Some(scene.integrator.c),
            ds: Some(scene.integrator.ds),
            samples: None,
            tolerance: None,
        },
        output: OutputSection {
            supersample: Some(scene.supersample),
            background: Some(BackgroundSection::Named("checkerboard".into())),
            audit: Some(scene.audit),
        },
    };
    Some(Fixture { file, volumes })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[camera]
eye = [0.5, 0.5, 3.0]
look_at = [0.5, 0.5, 0.5]
width = 8
height = 6

[[block]]
geometry = "cube.vol"
field = "quality"

[transfer]
nodes = [{ value = 0.0, color = [1.0, 1.0, 1.0], alpha = 0.5 }]
"#;

    #[test]
    fn minimal_scene_gets_defaults() {
        let dir = tempfile::tempdir().unwrap();
        volfile::save_volume(&models::identity_cube(), &dir.path().join("cube.vol")).unwrap();
        let path = dir.path().join("s.toml");
        fs::write(&path, MINIMAL).unwrap();
        let loaded = load_scene(&path).unwrap();
        let s = &loaded.scene;
        assert_eq!(s.integrator.method, Method::Rk4);
        assert_eq!(s.integrator.c, 1.0);
        assert!((s.integrator.ds - 3f64.sqrt() / 256.0).abs() < 1e-15);
        assert!((s.transfer.reference_length() - 3f64.sqrt() / 512.0).abs() < 1e-15);
        assert!(loaded.defaults.iter().any(|d| d.starts_with("integrator.ds")));
        assert!(loaded.defaults.iter().any(|d| d.starts_with("camera.near")));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let bad = MINIMAL.replace("width = 8", "width = \"wide\"");
        let e = SceneFile::parse(&bad, "s.toml").unwrap_err().to_string();
        assert!(e.contains("width"), "{e}");
        let file = SceneFile::parse(&MINIMAL.replace("quality", "rho"), "s.toml").unwrap();
        let e = file.resolve(Path::new("/nonexistent"), "s.toml");
        assert!(matches!(e, Err(SceneError::Volume(_))));
    }
}

//! View-dependent tessellation of block boundary surfaces and collection of
//! every ray/surface intersection into per-pixel lists.

use crate::bvh::Bvh;
use crate::camera::{Camera, Ray, Vec3};
use crate::spline::{BSplinePatch, BSplineVolume, BoundaryPatch, Face, JetOrder, SecondDerivativeBound};

/// Upper limit on subdivisions per patch direction.
pub const MAX_LEVEL: usize = 2048;

/// Triangle of a boundary tessellation, carrying both its geometry-space
/// vertices and their parameter-cube preimages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceTriangle {
    pub geom: [Vec3; 3],
    pub param: [Vec3; 3],
    pub block: usize,
}

impl SurfaceTriangle {
    /// Unnormalized normal; outward for blocks with positive orientation.
    pub fn normal(&self) -> Vec3 {
        (self.geom[1] - self.geom[0]).cross(&(self.geom[2] - self.geom[0]))
    }
}

/// One ray hit with a block boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntersectionRecord {
    pub depth: f64,
    pub param_point: Vec3,
    pub block: usize,
    pub front_facing: bool,
    pub used: bool,
}

pub type PixelIntersectionList = Vec<IntersectionRecord>;

/// Fraction of the world-space pixel footprint granted to the surface
/// approximation error; the rest absorbs off-axis projection slope.
fn error_budget(cam: &Camera, depth: f64) -> f64 {
    let aspect = cam.width() as f64 / cam.height() as f64;
    let tan_half = (cam.fov_y() / 2.0).tan();
    let slope = 1.0 + (aspect.max(1.0) * tan_half).powi(2);
    0.5 * cam.pixel_footprint(depth) / slope.sqrt()
}

/// Nearest view depth of the patch's control net, clamped to the near plane.
fn nearest_depth(patch: &BSplinePatch, cam: &Camera) -> f64 {
    patch
        .points()
        .chunks(patch.dim())
        .map(|c| cam.view_depth(&Vec3::new(c[0], c[1], c.get(2).copied().unwrap_or(0.0))))
        .fold(f64::INFINITY, f64::min)
        .max(cam.near())
}

fn level_for(curvature: f64, tol: f64) -> usize {
    if curvature <= 0.0 {
        return 1;
    }
    let n = (curvature / (8.0 * tol)).sqrt().ceil();
    if n.is_finite() {
        (n as usize).clamp(1, MAX_LEVEL)
    } else {
        MAX_LEVEL
    }
}

/// Subdivisions `(N_s, N_t)` such that the linear-interpolation error
/// `(1/N)²/8 · B` per direction stays within half of the error budget at
/// the patch's nearest depth. The mixed-derivative bound is charged to
/// both directions, since `2 h_s h_t B_st ≤ (h_s² + h_t²) B_st`.
pub fn tessellation_level(patch: &BSplinePatch, cam: &Camera, bounds: &SecondDerivativeBound) -> (usize, usize) {
    let tol = 0.5 * error_budget(cam, nearest_depth(patch, cam));
    (level_for(bounds.ss + bounds.st, tol), level_for(bounds.tt + bounds.st, tol))
}

fn grid_triangles<F>(face: Face, level: (usize, usize), block: usize, flip: bool, mut vertex: F) -> Vec<SurfaceTriangle>
where
    F: FnMut(&Vec3) -> Vec3,
{
    let (ns, nt) = level;
    let params: Vec<Vec3> = (0..=nt)
        .flat_map(|j| (0..=ns).map(move |i| face.embed(i as f64 / ns as f64, j as f64 / nt as f64)))
        .collect();
    let geoms: Vec<Vec3> = params.iter().map(&mut vertex).collect();
    let id = |i: usize, j: usize| j * (ns + 1) + i;
    let flip = flip ^ face.flips_winding();
    let mut out = Vec::with_capacity(2 * ns * nt);
    for j in 0..nt {
        for i in 0..ns {
            let quad = [id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)];
            for tri in [[quad[0], quad[1], quad[2]], [quad[0], quad[2], quad[3]]] {
                let tri = if flip { [tri[0], tri[2], tri[1]] } else { tri };
                out.push(SurfaceTriangle {
                    geom: tri.map(|k| geoms[k]),
                    param: tri.map(|k| params[k]),
                    block,
                });
            }
        }
    }
    out
}

/// Uniform parameter-grid triangulation of one boundary patch, with
/// vertices evaluated on the patch itself.
pub fn tessellate(patch: &BoundaryPatch, level: (usize, usize), block: usize) -> Vec<SurfaceTriangle> {
    let level = (level.0.max(1), level.1.max(1));
    let [a, b] = patch.face.free_axes();
    grid_triangles(patch.face, level, block, false, |p| {
        let jet = patch.patch.eval(p[a], p[b]).expect("grid point inside the unit square");
        Vec3::new(jet.value[0], jet.value[1], jet.value[2])
    })
}

/// Sign of `det J_φ` at the cube center; negative maps mirror the cube and
/// need reversed winding for outward normals.
pub fn orientation(volume: &BSplineVolume) -> f64 {
    volume
        .eval3(&Vec3::repeat(0.5), JetOrder::First)
        .map(|j| j.jacobian.determinant().signum())
        .unwrap_or(1.0)
}

/// Per-axis subdivision counts shared by every face of a block, so that
/// faces meeting at an edge sample it at identical parameters.
pub fn block_levels(volume: &BSplineVolume, cam: &Camera) -> [usize; 3] {
    let mut levels = [1usize; 3];
    for bp in volume.boundary_patches() {
        let bounds = bp.patch.second_derivative_bound();
        let (ns, nt) = tessellation_level(&bp.patch, cam, &bounds);
        let [a, b] = bp.face.free_axes();
        levels[a] = levels[a].max(ns);
        levels[b] = levels[b].max(nt);
    }
    levels
}

/// Watertight tessellation of all six faces of a block. Vertices are
/// evaluated through the volume so shared edges are bit-identical.
pub fn tessellate_block(volume: &BSplineVolume, cam: &Camera, block: usize) -> Vec<SurfaceTriangle> {
    let levels = block_levels(volume, cam);
    let flip = orientation(volume) < 0.0;
    let mut out = Vec::new();
    for face in Face::ALL {
        let [a, b] = face.free_axes();
        out.extend(grid_triangles(face, (levels[a], levels[b]), block, flip, |p| {
            volume.eval3(p, JetOrder::Value).expect("grid point inside the unit cube").value
        }));
    }
    out
}

/// Indexed text dump of a tessellation:
/// `v x y z u v w` lines, then `f block i j k` lines with 0-based indices.
/// Bit-identical vertices share one index.
pub fn dump_indexed(tris: &[SurfaceTriangle]) -> String {
    use std::collections::HashMap;
    use std::fmt::Write as _;
    let mut index: HashMap<[u64; 6], usize> = HashMap::new();
    let mut verts = String::new();
    let mut faces = String::new();
    for t in tris {
        let mut ids = [0usize; 3];
        for c in 0..3 {
            let (g, p) = (t.geom[c], t.param[c]);
            let key = [g.x, g.y, g.z, p.x, p.y, p.z].map(f64::to_bits);
            let next = index.len();
            ids[c] = *index.entry(key).or_insert_with(|| {
                let _ = writeln!(verts, "v {:?} {:?} {:?} {:?} {:?} {:?}", g.x, g.y, g.z, p.x, p.y, p.z);
                next
            });
        }
        let _ = writeln!(faces, "f {} {} {} {}", t.block, ids[0], ids[1], ids[2]);
    }
    format!("# vertices {} triangles {}\n{verts}{faces}", index.len(), tris.len())
}

/// Converts raw triangle hits into intersection records.
pub fn intersect_ray(bvh: &Bvh, ray: &Ray, t_min: f64) -> PixelIntersectionList {
    bvh.intersect_all(ray, t_min)
        .into_iter()
        .map(|h| {
            let tri = &bvh.triangles()[h.triangle];
            let mut p = tri.param[0] * h.bary[0] + tri.param[1] * h.bary[1] + tri.param[2] * h.bary[2];
            for a in 0..3 {
                // coordinates shared by all three vertices are kept exact
                if tri.param[0][a] == tri.param[1][a] && tri.param[1][a] == tri.param[2][a] {
                    p[a] = tri.param[0][a];
                }
                p[a] = p[a].clamp(0.0, 1.0);
            }
            IntersectionRecord {
                depth: h.t,
                param_point: p,
                block: tri.block,
                front_facing: tri.normal().dot(&ray.direction) < 0.0,
                used: false,
            }
        })
        .collect()
}

/// Intersection lists for every pixel of the camera, row-major.
pub fn intersect_scene(bvh: &Bvh, cam: &Camera) -> Vec<PixelIntersectionList> {
    use rayon::prelude::*;
    let (w, h) = (cam.width(), cam.height());
    (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = cam.primary_ray(i % w, i / w);
            intersect_ray(bvh, &ray, cam.near_plane_t(&ray))
        })
        .collect()
}

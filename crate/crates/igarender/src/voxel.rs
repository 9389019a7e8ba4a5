//! Voxelized baseline: resample the field onto a regular grid by inverting
//! the geometry map at voxel centers, then ray-march the grid with
//! trilinear interpolation.

use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{Ray, Vec3};
use crate::image::Image;
use crate::inversion::{newton_invert, sample_positions};
use crate::pipeline::{InverseSeeds, SEED_GRID};
use crate::scene::{Block, Scene};
use crate::shading::{self, CompositeState, Rgb};
use crate::spline::JetOrder;

/// Relative Newton tolerance for locating voxel centers.
const LOCATE_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum VoxelError {
    #[error("grid resolution must be at least 2 per axis, got {0:?}")]
    Resolution([usize; 3]),
    #[error("no blocks to voxelize")]
    Empty,
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

/// Cell-centered scalar grid with an inside flag per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub res: [usize; 3],
    pub lo: Vec3,
    pub hi: Vec3,
    pub values: Vec<f64>,
    /// 1 inside some block, 0 outside.
    pub inside: Vec<f64>,
}

impl VoxelGrid {
    pub fn cell_size(&self) -> Vec3 {
        (self.hi - self.lo).component_div(&Vec3::new(self.res[0] as f64, self.res[1] as f64, self.res[2] as f64))
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.res[0] * (j + self.res[1] * k)
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.lo + (Vec3::new(i as f64, j as f64, k as f64) + Vec3::repeat(0.5)).component_mul(&self.cell_size())
    }

    pub fn inside_count(&self) -> usize {
        self.inside.iter().filter(|&&f| f > 0.5).count()
    }

    /// Trilinear `(value, inside)` at `g`, clamped to the outermost centers.
    pub fn sample(&self, g: &Vec3) -> (f64, f64) {
        let h = self.cell_size();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let f = ((g[a] - self.lo[a]) / h[a] - 0.5).clamp(0.0, (self.res[a] - 1) as f64);
            let i = (f.floor() as usize).min(self.res[a] - 2);
            base[a] = i;
            frac[a] = f - i as f64;
        }
        let (mut v, mut inside) = (0.0, 0.0);
        for corner in 0..8 {
            let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let w: f64 = (0..3).map(|a| if d[a] == 1 { frac[a] } else { 1.0 - frac[a] }).product();
            if w == 0.0 {
                continue;
            }
            let idx = self.index(base[0] + d[0], base[1] + d[1], base[2] + d[2]);
            v += w * self.values[idx];
            inside += w * self.inside[idx];
        }
        (v, inside)
    }
}

const GRID_MAGIC: &str = "igavox 1";

impl VoxelGrid {
    /// Text form: header, `res`, `lo`, `hi`, then one `value inside` line
    /// per voxel with `i` varying fastest.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = format!("{GRID_MAGIC}\nres {} {} {}\n", self.res[0], self.res[1], self.res[2]);
        let _ = writeln!(out, "lo {:?} {:?} {:?}\nhi {:?} {:?} {:?}", self.lo.x, self.lo.y, self.lo.z, self.hi.x, self.hi.y, self.hi.z);
        for (v, f) in self.values.iter().zip(&self.inside) {
            let _ = writeln!(out, "{v:?} {}", *f as u8);
        }
        out
    }

    pub fn from_text(text: &str, path: &str) -> Result<VoxelGrid, VoxelError> {
        let err = |msg: String| VoxelError::Format { path: path.to_string(), msg };
        let mut lines = text.lines().enumerate();
        if lines.next().map(|l| l.1.trim()) != Some(GRID_MAGIC) {
            return Err(err(format!("expected `{GRID_MAGIC}` header")));
        }
        let mut header = |key: &str| -> Result<Vec<String>, VoxelError> {
            let (n, l) = lines.next().ok_or_else(|| err(format!("missing `{key}`")))?;
            let w: Vec<&str> = l.split_whitespace().collect();
            if w.len() != 4 || w[0] != key {
                return Err(err(format!("line {}: expected `{key}` and three values", n + 1)));
            }
            Ok(w[1..].iter().map(|s| s.to_string()).collect())
        };
        let bad = |n: usize| err(format!("line {n}: not a number"));
        let res: Vec<usize> = header("res")?.iter().map(|s| s.parse().map_err(|_| bad(2))).collect::<Result<_, _>>()?;
        let lo: Vec<f64> = header("lo")?.iter().map(|s| s.parse().map_err(|_| bad(3))).collect::<Result<_, _>>()?;
        let hi: Vec<f64> = header("hi")?.iter().map(|s| s.parse().map_err(|_| bad(4))).collect::<Result<_, _>>()?;
        let res = [res[0], res[1], res[2]];
        if res.iter().any(|&r| r < 2) {
            return Err(VoxelError::Resolution(res));
        }
        let count = res[0] * res[1] * res[2];
        let (mut values, mut inside) = (Vec::with_capacity(count), Vec::with_capacity(count));
        for (n, l) in lines {
            let w: Vec<&str> = l.split_whitespace().collect();
            if w.is_empty() {
                continue;
            }
            let v: f64 = w[0].parse().map_err(|_| bad(n + 1))?;
            let f: f64 = w.get(1).ok_or_else(|| bad(n + 1))?.parse().map_err(|_| bad(n + 1))?;
            values.push(v);
            inside.push(f);
        }
        if values.len() != count {
            return Err(err(format!("expected {count} voxels, found {}", values.len())));
        }
        Ok(VoxelGrid { res, lo: Vec3::new(lo[0], lo[1], lo[2]), hi: Vec3::new(hi[0], hi[1], hi[2]), values, inside })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), VoxelError> {
        std::fs::write(path, self.to_text())
            .map_err(|e| VoxelError::Io { path: path.display().to_string(), msg: e.to_string() })
    }

    pub fn load(path: &std::path::Path) -> Result<VoxelGrid, VoxelError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| VoxelError::Io { path: p.clone(), msg: e.to_string() })?;
        VoxelGrid::from_text(&text, &p)
    }
}

/// Block and parameter point of `g`, trying the previous voxel's solution
/// before the nearest coarse seeds.
fn locate(
    blocks: &[Block],
    seeds: &[InverseSeeds],
    g: &Vec3,
    tol: f64,
    hint: Option<(usize, Vec3)>,
) -> Option<(usize, Vec3)> {
    if let Some((b, x0)) = hint {
        if let Ok(r) = newton_invert(&blocks[b].geometry, g, &x0, tol) {
            return Some((b, r.point));
        }
    }
    for (b, (block, s)) in blocks.iter().zip(seeds).enumerate() {
        let (lo, hi) = block.geometry.control_bounds();
        if (0..3).any(|a| g[a] < lo[a] - tol || g[a] > hi[a] + tol) {
            continue;
        }
        for x0 in s.nearest(g, 2) {
            if let Ok(r) = newton_invert(&block.geometry, g, &x0, tol) {
                return Some((b, r.point));
            }
        }
    }
    None
}

/// Samples the blocks' fields at the voxel centers of a grid spanning the
/// blocks' bounding box.
pub fn voxelize(blocks: &[Block], res: [usize; 3]) -> Result<VoxelGrid, VoxelError> {
    if res.iter().any(|&r| r < 2) {
        return Err(VoxelError::Resolution(res));
    }
    let (lo, hi) = blocks
        .iter()
        .map(|b| b.geometry.control_bounds())
        .reduce(|a, b| (a.0.inf(&b.0), a.1.sup(&b.1)))
        .ok_or(VoxelError::Empty)?;
    let tol = LOCATE_REL_TOL * (hi - lo).norm();
    let seeds: Vec<InverseSeeds> = blocks.iter().map(|b| InverseSeeds::new(&b.geometry, SEED_GRID)).collect();
    let mut grid = VoxelGrid { res, lo, hi, values: Vec::new(), inside: Vec::new() };
    let rows: Vec<Vec<Option<f64>>> = (0..res[1] * res[2])
        .into_par_iter()
        .map(|row| {
            let (j, k) = (row % res[1], row / res[1]);
            let mut hint = None;
            (0..res[0])
                .map(|i| {
                    let found = locate(blocks, &seeds, &grid.center(i, j, k), tol, hint);
                    hint = found;
                    let (b, p) = found?;
                    let geometry = &blocks[b].geometry;
                    let jet = geometry.eval3(&p, JetOrder::First).ok()?;
                    blocks[b].field.value(&p, &jet).ok()
                })
                .collect()
        })
        .collect();
    let cells: Vec<Option<f64>> = rows.into_iter().flatten().collect();
    grid.values = cells.iter().map(|c| c.unwrap_or(0.0)).collect();
    grid.inside = cells.iter().map(|c| if c.is_some() { 1.0 } else { 0.0 }).collect();
    Ok(grid)
}

/// Ray parameters where `ray` enters and leaves the box, if it hits.
fn slab(ray: &Ray, lo: &Vec3, hi: &Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        let inv = 1.0 / ray.direction[a];
        let (mut ta, mut tb) = ((lo[a] - ray.origin[a]) * inv, (hi[a] - ray.origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Ray marching through the grid at spacing `diagonal / samples` (shorter
/// last step at the grid exit), with the scene's transfer function,
/// compositing, cut planes and background.
/// Samples whose interpolated inside flag is below 0.5 are skipped.
pub fn render_voxel(scene: &Scene, grid: &VoxelGrid, samples: f64) -> Image {
    let cam = &scene.camera;
    let (w, h) = (cam.width(), cam.height());
    let ds = scene.ds_for_samples(samples);
    let tf = &scene.transfer;
    let colors: Vec<Rgb> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let ray = cam.primary_ray(x, y);
            let mut state = CompositeState::default();
            if let Some((t0, t1)) = slab(&ray, &grid.lo, &grid.hi) {
                let start = t0.max(cam.near_plane_t(&ray));
                let mut prev: Option<(f64, f64)> = None;
                if t1 > start {
                    for s in sample_positions(t1 - start, ds) {
                        if state.saturated() {
                            break;
                        }
                        let g = ray.at(start + s);
                        let (v, inside) = grid.sample(&g);
                        let kept = scene.cut_planes.iter().all(|p| p.signed_distance(&g) >= 0.0);
                        if inside >= 0.5 && kept {
                            if let Some((s0, v0)) = prev {
                                let m = if scene.supersample { shading::substeps_for(tf, v0, v) } else { 1 };
                                shading::supersample_segment(tf, v0, v, s - s0, m, &mut state);
                            }
                            prev = Some((s, v));
                        } else {
                            prev = None;
                        }
                    }
                }
            }
            state.over(scene.background.at(x, y))
        })
        .collect();
    Image::from_rgb(w, h, &colors).expect("one color per pixel")
}

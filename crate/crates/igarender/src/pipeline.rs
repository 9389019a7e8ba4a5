//! Per-frame rendering: boundary intersections, blockwise depth sorting
//! into entry/exit pairs, cut-plane and near-plane clipping, and marching
//! each segment with pixel-accurate inverse-map samples.

use rayon::prelude::*;
use thiserror::Error;

use crate::bvh::Bvh;
use crate::camera::{Camera, Ray, RaySegment, Vec3};
use crate::image::Image;
use crate::inversion::{newton_invert, sample_segment, IntegratorSpec, InversionError};
use crate::scene::{Block, CutPlane, Scene};
use crate::shading::{self, CompositeState, Rgb, TransferFunction};
use crate::spline::{BSplineVolume, JetOrder};
use crate::surfnet::{intersect_ray, tessellate_block, IntersectionRecord, SurfaceTriangle};

/// Inversion failed somewhere on the pixel (segment dropped or truncated).
pub const FLAG_INVERSION: u32 = 1;
/// A sample projected outside its pixel.
pub const FLAG_DELTA_P: u32 = 1 << 1;
/// A sample came before its predecessor along the ray.
pub const FLAG_DEPTH_ORDER: u32 = 1 << 2;
/// An intersection record could not be paired.
pub const FLAG_UNMATCHED: u32 = 1 << 3;
/// The field could not be evaluated at a sample.
pub const FLAG_FIELD: u32 = 1 << 4;
/// A singular entry point was moved into the block.
pub const FLAG_DEGENERATE_ENTRY: u32 = 1 << 5;

/// Flags that mark a pixel as wrong rather than merely noteworthy.
pub const FLAG_ERRORS: u32 = FLAG_INVERSION | FLAG_DELTA_P | FLAG_DEPTH_ORDER | FLAG_UNMATCHED | FLAG_FIELD;

/// Relative slack for treating two record depths as coincident.
const COINCIDENT_REL: f64 = 1e-9;
/// Parameter-grid resolution of the inverse-map seeds per axis.
pub const SEED_GRID: usize = 8;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("block {block}: {reason}")]
    InvalidBlock { block: usize, reason: String },
    #[error("invalid integrator: {0}")]
    InvalidIntegrator(String),
    #[error("invalid cut plane {0}: normal must be non-zero")]
    InvalidCutPlane(usize),
}

/// Entry and exit records of one block along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPair {
    pub front: IntersectionRecord,
    pub back: IntersectionRecord,
    pub block: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SortedPairs {
    pub pairs: Vec<SegmentPair>,
    /// Exit records without an entry in a block with an odd record count:
    /// the near plane lies inside that block.
    pub near_clipped: Vec<IntersectionRecord>,
    /// Records that could not be paired (grazing rays).
    pub unmatched: usize,
}

fn coincident_slack(depth: f64) -> f64 {
    COINCIDENT_REL * depth.abs().max(1.0)
}

/// Blockwise depth sorting: repeatedly takes the nearest unused exit
/// record and pairs it with the nearest unused entry record of the same
/// block that does not lie behind it. Marks consumed records as used.
pub fn depth_sort_pairs(list: &mut [IntersectionRecord]) -> SortedPairs {
    let mut out = SortedPairs::default();
    let nearest = |list: &[IntersectionRecord], pred: &dyn Fn(&IntersectionRecord) -> bool| {
        list.iter()
            .enumerate()
            .filter(|(_, r)| !r.used && pred(r))
            .min_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
    };
    while let Some(bi) = nearest(list, &|r| !r.front_facing) {
        list[bi].used = true;
        let back = list[bi];
        let limit = back.depth + coincident_slack(back.depth);
        match nearest(list, &|r| r.front_facing && r.block == back.block && r.depth <= limit) {
            Some(fi) => {
                list[fi].used = true;
                out.pairs.push(SegmentPair { front: list[fi], back, block: back.block });
            }
            None => {
                let count = list.iter().filter(|r| r.block == back.block).count();
                if count % 2 == 1 {
                    out.near_clipped.push(back);
                } else {
                    out.unmatched += 1;
                }
            }
        }
    }
    out.unmatched += list.iter().filter(|r| !r.used).count();
    out
}

/// A segment end with both its world and parameter positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Endpoint {
    pub g: Vec3,
    pub p: Vec3,
    /// Ray parameter of `g`.
    pub t: f64,
}

/// A segment of a view ray inside one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub block: usize,
    pub front: Endpoint,
    pub back: Endpoint,
}

impl Segment {
    pub fn from_pair(ray: &Ray, pair: &SegmentPair) -> Self {
        let end = |r: &IntersectionRecord| Endpoint { g: ray.at(r.depth), p: r.param_point, t: r.depth };
        Segment { block: pair.block, front: end(&pair.front), back: end(&pair.back) }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClipError {
    #[error("no parameter point found for the clipped endpoint: {0}")]
    Inversion(#[from] InversionError),
}

/// Coarse samples `(p, φ(p))` of a block for seeding Newton's method.
#[derive(Debug, Clone)]
pub struct InverseSeeds {
    seeds: Vec<(Vec3, Vec3)>,
}

impl InverseSeeds {
    pub fn new(volume: &BSplineVolume, n: usize) -> Self {
        let n = n.max(2);
        let mut seeds = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let p = Vec3::new(i as f64, j as f64, k as f64) / (n - 1) as f64;
                    if let Ok(jet) = volume.eval3(&p, JetOrder::Value) {
                        seeds.push((p, jet.value));
                    }
                }
            }
        }
        InverseSeeds { seeds }
    }

    /// Parameter points of the `count` seeds nearest to `g`.
    pub fn nearest(&self, g: &Vec3, count: usize) -> Vec<Vec3> {
        let mut d: Vec<(f64, usize)> =
            self.seeds.iter().enumerate().map(|(i, s)| ((s.1 - g).norm_squared(), i)).collect();
        let count = count.min(d.len());
        if count == 0 {
            return Vec::new();
        }
        d.select_nth_unstable_by(count - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(count);
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().map(|(_, i)| self.seeds[i].0).collect()
    }
}

/// Inverts `g` trying each start point in turn.
pub fn invert_from(volume: &BSplineVolume, g: &Vec3, starts: &[Vec3], tol: f64) -> Result<Vec3, InversionError> {
    let mut last = InversionError::DegenerateEntry { attempts: 0 };
    for x0 in starts {
        match newton_invert(volume, g, x0, tol) {
            Ok(r) => return Ok(r.point),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Clips a segment against cut planes, which keep `n·(g − g₀) ≥ 0`.
/// Returns `Ok(None)` when nothing remains.
pub fn clip_segment(
    seg: &Segment,
    planes: &[CutPlane],
    volume: &BSplineVolume,
    tol: &dyn Fn(&Vec3) -> f64,
) -> Result<Option<Segment>, ClipError> {
    let mut s = *seg;
    for plane in planes {
        let sf = plane.signed_distance(&s.front.g);
        let sb = plane.signed_distance(&s.back.g);
        if sf < 0.0 && sb < 0.0 {
            return Ok(None);
        }
        if sf >= 0.0 && sb >= 0.0 {
            continue;
        }
        let u = sf / (sf - sb);
        let g = s.front.g + (s.back.g - s.front.g) * u;
        let t = s.front.t + (s.back.t - s.front.t) * u;
        let starts = if u < 0.5 { [s.front.p, s.back.p] } else { [s.back.p, s.front.p] };
        let p = invert_from(volume, &g, &starts, tol(&g))?;
        let cut = Endpoint { g, p, t };
        if sf < 0.0 {
            s.front = cut;
        } else {
            s.back = cut;
        }
    }
    Ok(Some(s))
}

/// Builds the entry point on the near plane for an exit record whose
/// block contains the near plane.
pub fn near_clip_front(
    ray: &Ray,
    cam: &Camera,
    back: &IntersectionRecord,
    volume: &BSplineVolume,
    seeds: &InverseSeeds,
) -> Result<Segment, ClipError> {
    let t = cam.near_plane_t(ray);
    let g = ray.at(t);
    let mut starts = vec![back.param_point];
    starts.extend(seeds.nearest(&g, 4));
    let p = invert_from(volume, &g, &starts, cam.frustum_tolerance(&g))?;
    Ok(Segment {
        block: back.block,
        front: Endpoint { g, p, t },
        back: Endpoint { g: ray.at(back.depth), p: back.param_point, t: back.depth },
    })
}

/// Audit data for one pixel.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PixelAudit {
    pub flags: u32,
    pub max_delta_p: f64,
    pub samples: usize,
    pub depth_violations: usize,
    pub segments: usize,
    pub boundary_walks: usize,
    pub singular_recoveries: usize,
}

impl PixelAudit {
    fn merge(&mut self, o: &PixelAudit) {
        self.flags |= o.flags;
        self.max_delta_p = self.max_delta_p.max(o.max_delta_p);
        self.samples += o.samples;
        self.depth_violations += o.depth_violations;
        self.segments += o.segments;
        self.boundary_walks += o.boundary_walks;
        self.singular_recoveries += o.singular_recoveries;
    }
}

/// Rendering options that can change without re-tessellating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchSettings {
    pub spec: IntegratorSpec,
    pub supersample: bool,
    pub audit: bool,
}

/// Samples one segment and composites it into `state`.
pub fn march_segment(
    ray: &Ray,
    cam: &Camera,
    block: &Block,
    seg: &Segment,
    settings: &MarchSettings,
    tf: &TransferFunction,
    state: &mut CompositeState,
) -> PixelAudit {
    let mut audit = PixelAudit { segments: 1, ..Default::default() };
    let Some(rs) = RaySegment::new(seg.front.g, seg.back.g) else {
        return audit;
    };
    let tol = |g: &Vec3| cam.frustum_tolerance(g);
    let out = match sample_segment(&block.geometry, &rs, &seg.front.p, &seg.back.p, &settings.spec, &tol) {
        Ok(o) => o,
        Err(e) => {
            log::debug!("pixel {:?} block {}: {e}", ray.pixel, block.id);
            audit.flags |= FLAG_INVERSION;
            return audit;
        }
    };
    let st = &out.stats;
    if st.truncated {
        audit.flags |= FLAG_INVERSION;
    }
    if st.degenerate_entry.is_some() {
        audit.flags |= FLAG_DEGENERATE_ENTRY;
    }
    audit.boundary_walks = st.boundary_walks;
    audit.singular_recoveries = st.singular_recoveries;
    audit.samples = out.samples.len();

    if settings.audit {
        let mut prev_depth = f64::NEG_INFINITY;
        for s in &out.samples {
            match cam.delta_p(ray.pixel, &s.jet.value) {
                Ok(dp) => audit.max_delta_p = audit.max_delta_p.max(dp),
                Err(_) => audit.max_delta_p = f64::INFINITY,
            }
            let d = ray.depth(&s.jet.value);
            if d < prev_depth {
                audit.depth_violations += 1;
            }
            prev_depth = prev_depth.max(d);
        }
        if audit.max_delta_p > 1.0 {
            audit.flags |= FLAG_DELTA_P;
        }
        if audit.depth_violations > 0 {
            audit.flags |= FLAG_DEPTH_ORDER;
        }
    }

    let mut prev: Option<(f64, f64)> = None;
    for s in &out.samples {
        if state.saturated() {
            break;
        }
        let value = match block.field.value(&s.p, &s.jet) {
            Ok(v) => Some(v),
            Err(e) => {
                log::trace!("field at {:?}: {e}", s.p);
                audit.flags |= FLAG_FIELD;
                None
            }
        };
        if let (Some((s0, v0)), Some(v1)) = (prev, value) {
            let ds = s.s - s0;
            if ds > 0.0 {
                let m = if settings.supersample { shading::substeps_for(tf, v0, v1) } else { 1 };
                shading::supersample_segment(tf, v0, v1, ds, m, state);
            }
        }
        prev = value.map(|v| (s.s, v));
    }
    audit
}

/// Scene with tessellated block boundaries for the current camera.
pub struct Prepared<'a> {
    pub scene: &'a Scene,
    pub bvh: Bvh,
    seeds: Vec<InverseSeeds>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameAudit {
    pub max_delta_p: f64,
    pub samples: usize,
    pub depth_violations: usize,
    pub segments: usize,
    pub flagged_pixels: usize,
    pub degenerate_entries: usize,
    pub boundary_walks: usize,
    pub singular_recoveries: usize,
    pub triangles: usize,
}

impl FrameAudit {
    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        format!(
            "max_delta_p={:.6}\nsamples={}\ndepth_violations={}\nsegments={}\nflagged_pixels={}\n\
             degenerate_entries={}\nboundary_walks={}\nsingular_recoveries={}\ntriangles={}\n",
            self.max_delta_p,
            self.samples,
            self.depth_violations,
            self.segments,
            self.flagged_pixels,
            self.degenerate_entries,
            self.boundary_walks,
            self.singular_recoveries,
            self.triangles
        )
    }
}

pub struct RenderOutput {
    pub image: Image,
    /// Unquantized colors, row-major.
    pub colors: Vec<Rgb>,
    pub pixels: Vec<PixelAudit>,
    pub audit: FrameAudit,
}

impl RenderOutput {
    /// Diagnostic image: black where clean, otherwise a color per flag.
    pub fn flag_image(&self) -> Image {
        let data = self
            .pixels
            .iter()
            .map(|a| {
                let f = a.flags;
                if f & FLAG_INVERSION != 0 {
                    [255, 0, 0]
                } else if f & FLAG_DELTA_P != 0 {
                    [255, 255, 0]
                } else if f & FLAG_DEPTH_ORDER != 0 {
                    [255, 0, 255]
                } else if f & FLAG_UNMATCHED != 0 {
                    [0, 255, 255]
                } else if f & FLAG_FIELD != 0 {
                    [255, 128, 0]
                } else if f & FLAG_DEGENERATE_ENTRY != 0 {
                    [0, 0, 255]
                } else {
                    [0, 0, 0]
                }
            })
            .collect();
        Image::from_pixels(self.image.width(), self.image.height(), data).expect("one audit per pixel")
    }
}

pub fn validate(scene: &Scene) -> Result<(), RenderError> {
    for (i, b) in scene.blocks.iter().enumerate() {
        let bad = |reason: &str| RenderError::InvalidBlock { block: i, reason: reason.to_string() };
        if b.id != i {
            return Err(bad("block ids must equal their position"));
        }
        if b.geometry.dim() != 3 {
            return Err(bad("geometry must have 3-dimensional control points"));
        }
        match &b.field {
            crate::scene::FieldSource::Scalar(r) if r.dim() != 1 => return Err(bad("scalar field must be 1-dimensional")),
            crate::scene::FieldSource::VonMises(u) if u.dim() != 3 => {
                return Err(bad("displacement must be 3-dimensional"))
            }
            _ => {}
        }
    }
    let s = &scene.integrator;
    if !(s.ds > 0.0) || !s.ds.is_finite() {
        return Err(RenderError::InvalidIntegrator(format!("sample distance must be positive, got {}", s.ds)));
    }
    if !(s.c >= 0.0) {
        return Err(RenderError::InvalidIntegrator(format!("c must be non-negative, got {}", s.c)));
    }
    if let Some(t) = s.tolerance {
        if !(t > 0.0) {
            return Err(RenderError::InvalidIntegrator(format!("tolerance must be positive, got {t}")));
        }
    }
    if let Some(i) = scene.cut_planes.iter().position(|p| !(p.normal.norm() > 0.0)) {
        return Err(RenderError::InvalidCutPlane(i));
    }
    Ok(())
}

/// Tessellates all blocks for the scene camera.
pub fn prepare(scene: &Scene) -> Result<Prepared<'_>, RenderError> {
    validate(scene)?;
    let tris: Vec<SurfaceTriangle> = scene
        .blocks
        .par_iter()
        .map(|b| tessellate_block(&b.geometry, &scene.camera, b.id))
        .collect::<Vec<_>>()
        .concat();
    let seeds = scene.blocks.iter().map(|b| InverseSeeds::new(&b.geometry, SEED_GRID)).collect();
    Ok(Prepared { scene, bvh: Bvh::build(tris), seeds })
}

impl Prepared<'_> {
    pub fn settings(&self) -> MarchSettings {
        MarchSettings { spec: self.scene.integrator, supersample: self.scene.supersample, audit: self.scene.audit }
    }

    pub fn render(&self) -> RenderOutput {
        self.render_with(&self.settings())
    }

    /// Renders with alternative integrator/sampling settings.
    pub fn render_with(&self, settings: &MarchSettings) -> RenderOutput {
        let cam = &self.scene.camera;
        let (w, h) = (cam.width(), cam.height());
        let results: Vec<(Rgb, PixelAudit)> =
            (0..w * h).into_par_iter().map(|i| self.render_pixel(i % w, i / w, settings)).collect();
        let mut audit = FrameAudit { triangles: self.bvh.triangles().len(), ..Default::default() };
        let mut colors = Vec::with_capacity(results.len());
        let mut pixels = Vec::with_capacity(results.len());
        for (c, a) in results {
            audit.max_delta_p = audit.max_delta_p.max(a.max_delta_p);
            audit.samples += a.samples;
            audit.depth_violations += a.depth_violations;
            audit.segments += a.segments;
            audit.boundary_walks += a.boundary_walks;
            audit.singular_recoveries += a.singular_recoveries;
            audit.flagged_pixels += (a.flags & FLAG_ERRORS != 0) as usize;
            audit.degenerate_entries += (a.flags & FLAG_DEGENERATE_ENTRY != 0) as usize;
            colors.push(c);
            pixels.push(a);
        }
        let image = Image::from_rgb(w, h, &colors).expect("one color per pixel");
        RenderOutput { image, colors, pixels, audit }
    }

    /// Color and audit of pixel `(x, y)`.
    pub fn render_pixel(&self, x: u32, y: u32, settings: &MarchSettings) -> (Rgb, PixelAudit) {
        let scene = self.scene;
        let cam = &scene.camera;
        let ray = cam.primary_ray(x, y);
        let mut audit = PixelAudit::default();
        let mut list = intersect_ray(&self.bvh, &ray, cam.near_plane_t(&ray));
        let sorted = depth_sort_pairs(&mut list);
        if sorted.unmatched > 0 {
            audit.flags |= FLAG_UNMATCHED;
        }
        let mut segments: Vec<Segment> = sorted.pairs.iter().map(|p| Segment::from_pair(&ray, p)).collect();
        for back in &sorted.near_clipped {
            let b = back.block;
            match near_clip_front(&ray, cam, back, &scene.blocks[b].geometry, &self.seeds[b]) {
                Ok(s) => segments.push(s),
                Err(e) => {
                    log::debug!("pixel {:?}: near clip failed: {e}", ray.pixel);
                    audit.flags |= FLAG_INVERSION;
                }
            }
        }
        segments.sort_by(|a, b| a.front.t.total_cmp(&b.front.t).then(a.block.cmp(&b.block)));

        let tol = |g: &Vec3| cam.frustum_tolerance(g);
        let mut state = CompositeState::default();
        for seg in &segments {
            if state.saturated() {
                break;
            }
            let block = &scene.blocks[seg.block];
            let seg = match clip_segment(seg, &scene.cut_planes, &block.geometry, &tol) {
                Ok(Some(s)) => s,
                Ok(None) => continue,
                Err(e) => {
                    log::debug!("pixel {:?}: cut plane: {e}", ray.pixel);
                    audit.flags |= FLAG_INVERSION;
                    continue;
                }
            };
            let a = march_segment(&ray, cam, block, &seg, settings, &scene.transfer, &mut state);
            audit.merge(&a);
        }
        (state.over(scene.background.at(x, y)), audit)
    }
}

/// Tessellates and renders the scene.
pub fn render(scene: &Scene) -> Result<RenderOutput, RenderError> {
    Ok(prepare(scene)?.render())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(depth: f64, block: usize, front: bool) -> IntersectionRecord {
        IntersectionRecord { depth, param_point: Vec3::zeros(), block, front_facing: front, used: false }
    }

    #[test]
    fn single_pair() {
        let mut l = vec![rec(2.0, 0, false), rec(1.0, 0, true)];
        let s = depth_sort_pairs(&mut l);
        assert_eq!(s.pairs.len(), 1);
        assert_eq!((s.pairs[0].front.depth, s.pairs[0].back.depth), (1.0, 2.0));
        assert_eq!(s.unmatched, 0);
    }

    #[test]
    fn interleaved_blocks_match_by_id() {
        let mut l = vec![rec(1.0, 1, true), rec(1.5, 2, true), rec(2.0, 1, false), rec(3.0, 2, false)];
        let s = depth_sort_pairs(&mut l);
        let got: Vec<(f64, f64, usize)> = s.pairs.iter().map(|p| (p.front.depth, p.back.depth, p.block)).collect();
        assert_eq!(got, vec![(1.0, 2.0, 1), (1.5, 3.0, 2)]);
    }

    #[test]
    fn shared_face_never_crosses_blocks() {
        let mut l = vec![rec(1.0, 0, true), rec(2.0, 0, false), rec(2.0, 1, true), rec(3.0, 1, false)];
        let s = depth_sort_pairs(&mut l);
        assert!(s.pairs.iter().all(|p| p.front.block == p.back.block));
        assert_eq!(s.pairs.len(), 2);
    }

    #[test]
    fn odd_count_goes_to_near_clip() {
        let mut l = vec![rec(1.0, 0, false), rec(2.0, 0, true), rec(3.0, 0, false)];
        let s = depth_sort_pairs(&mut l);
        assert_eq!(s.near_clipped.len(), 1);
        assert_eq!(s.near_clipped[0].depth, 1.0);
        assert_eq!(s.pairs.len(), 1);
        assert_eq!(s.unmatched, 0);
    }

    #[test]
    fn lone_back_with_even_count_is_unmatched() {
        let mut l = vec![rec(1.0, 0, false), rec(3.0, 0, true)];
        let s = depth_sort_pairs(&mut l);
        assert!(s.pairs.is_empty());
        assert_eq!(s.unmatched, 2);
        assert!(depth_sort_pairs(&mut []).pairs.is_empty());
    }
}

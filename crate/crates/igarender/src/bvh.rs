//! Bounding-volume hierarchy over surface triangles, returning every hit
//! along a ray rather than the nearest one.

use crate::camera::{Ray, Vec3};
use crate::surfnet::SurfaceTriangle;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb { lo: Vec3::repeat(f64::INFINITY), hi: Vec3::repeat(f64::NEG_INFINITY) }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.lo = self.lo.inf(&o.lo);
        self.hi = self.hi.sup(&o.hi);
    }

    /// Slab test with a small relative pad so grazing rays are not culled early.
    fn hit(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let pad = 1e-9 * (1.0 + self.hi[a].abs().max(self.lo[a].abs()));
            let ta = (self.lo[a] - pad - origin[a]) * inv_dir[a];
            let tb = (self.hi[a] + pad - origin[a]) * inv_dir[a];
            let (near, far) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            // NaN (0 * inf) means the origin sits on the slab plane; keep it
            if near > t0 {
                t0 = near;
            }
            if far < t1 {
                t1 = far;
            }
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, count: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Median-split BVH. Triangle order is preserved in `triangles()` so hit
/// indices refer back to the caller's input order.
#[derive(Debug, Clone)]
pub struct Bvh {
    triangles: Vec<SurfaceTriangle>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Raw ray/triangle hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleHit {
    pub triangle: usize,
    pub t: f64,
    /// Barycentric weights of the three vertices.
    pub bary: [f64; 3],
}

impl Bvh {
    pub fn build(triangles: Vec<SurfaceTriangle>) -> Self {
        let mut order: Vec<usize> = (0..triangles.len()).collect();
        let centroids: Vec<Vec3> =
            triangles.iter().map(|t| (t.geom[0] + t.geom[1] + t.geom[2]) / 3.0).collect();
        let mut nodes = Vec::new();
        if !triangles.is_empty() {
            let n = order.len();
            build_node(&triangles, &centroids, &mut order, 0, n, &mut nodes);
        }
        Bvh { triangles, order, nodes }
    }

    pub fn triangles(&self) -> &[SurfaceTriangle] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// All hits with `t > t_min`, sorted by `t` then triangle index.
    pub fn intersect_all(&self, ray: &Ray, t_min: f64) -> Vec<TriangleHit> {
        let mut hits = Vec::new();
        if self.nodes.is_empty() {
            return hits;
        }
        let inv = ray.direction.map(|d| 1.0 / d);
        let prep = RayPrep::new(ray);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if !node.bounds().hit(&ray.origin, &inv, f64::INFINITY) {
                continue;
            }
            match *node {
                Node::Leaf { start, count, .. } => {
                    for &ti in &self.order[start..start + count] {
                        if let Some((t, bary)) = prep.intersect(&self.triangles[ti]) {
                            if t > t_min {
                                hits.push(TriangleHit { triangle: ti, t, bary });
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        hits.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.triangle.cmp(&b.triangle)));
        hits
    }
}

fn build_node(
    tris: &[SurfaceTriangle],
    centroids: &[Vec3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cb = Aabb::empty();
    for &i in &order[start..end] {
        for v in &tris[i].geom {
            bounds.grow(v);
        }
        cb.grow(&centroids[i]);
    }
    let idx = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, count: end - start });
        return idx;
    }
    let ext = cb.hi - cb.lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = (start + end) / 2;
    order[start..end].sort_by(|&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b)));
    nodes.push(Node::Leaf { bounds, start, count: 0 });
    let left = build_node(tris, centroids, order, start, mid, nodes);
    let right = build_node(tris, centroids, order, mid, end, nodes);
    let mut merged = *nodes[left].bounds();
    merged.merge(nodes[right].bounds());
    nodes[idx] = Node::Inner { bounds: merged, left, right };
    idx
}

/// Per-ray constants of the watertight ray/triangle test (Woop et al. 2013).
struct RayPrep {
    origin: Vec3,
    kx: usize,
    ky: usize,
    kz: usize,
    sx: f64,
    sy: f64,
    sz: f64,
}

impl RayPrep {
    fn new(ray: &Ray) -> Self {
        let d = ray.direction;
        let kz = d.iamax();
        let mut kx = (kz + 1) % 3;
        let mut ky = (kx + 1) % 3;
        if d[kz] < 0.0 {
            std::mem::swap(&mut kx, &mut ky);
        }
        RayPrep { origin: ray.origin, kx, ky, kz, sx: d[kx] / d[kz], sy: d[ky] / d[kz], sz: 1.0 / d[kz] }
    }

    fn shear(&self, v: &Vec3) -> (f64, f64, f64) {
        let a = v - self.origin;
        (a[self.kx] - self.sx * a[self.kz], a[self.ky] - self.sy * a[self.kz], self.sz * a[self.kz])
    }

    /// Edge functions that are exactly zero are resolved by a fixed ownership
    /// rule so a ray through a shared edge hits exactly one of two
    /// consistently wound neighbours (and both or neither on a silhouette).
    fn intersect(&self, tri: &SurfaceTriangle) -> Option<(f64, [f64; 3])> {
        let (ax, ay, az) = self.shear(&tri.geom[0]);
        let (bx, by, bz) = self.shear(&tri.geom[1]);
        let (cx, cy, cz) = self.shear(&tri.geom[2]);
        // u: edge b→c, v: edge c→a, w: edge a→b
        let u = cx * by - cy * bx;
        let v = ax * cy - ay * cx;
        let w = bx * ay - by * ax;
        let det = u + v + w;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let positive = det > 0.0;
        let edges = [(u, (bx, by), (cx, cy)), (v, (cx, cy), (ax, ay)), (w, (ax, ay), (bx, by))];
        for (e, p, q) in edges {
            if e == 0.0 {
                // lexicographic owner; reversed for back-facing orientation
                let owns = (p.0, p.1) < (q.0, q.1);
                if owns != positive {
                    return None;
                }
            } else if (e > 0.0) != positive {
                return None;
            }
        }
        let t = (u * az + v * bz + w * cz) / det;
        Some((t, [u / det, v / det, w / det]))
    }
}

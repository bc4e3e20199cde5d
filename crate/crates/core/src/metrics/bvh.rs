//! Bounding-volume hierarchy for nearest-primitive queries over points and
//! triangles.

use crate::mesh::Vec3;

/// Something a BVH can hold.
pub trait Primitive {
    fn bounds(&self) -> (Vec3, Vec3);
    fn centroid(&self) -> Vec3;
    fn distance_squared(&self, p: &Vec3) -> f64;
}

impl Primitive for Vec3 {
    fn bounds(&self) -> (Vec3, Vec3) {
        (*self, *self)
    }

    fn centroid(&self) -> Vec3 {
        *self
    }

    fn distance_squared(&self, p: &Vec3) -> f64 {
        (self - p).norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle(pub [Vec3; 3]);

impl Primitive for Triangle {
    fn bounds(&self) -> (Vec3, Vec3) {
        let [a, b, c] = self.0;
        (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
    }

    fn centroid(&self) -> Vec3 {
        (self.0[0] + self.0[1] + self.0[2]) / 3.0
    }

    fn distance_squared(&self, p: &Vec3) -> f64 {
        (closest_point_on_triangle(p, &self.0) - p).norm_squared()
    }
}

/// Closest point to `p` on the closed triangle, by Voronoi-region
/// classification.
pub fn closest_point_on_triangle(p: &Vec3, tri: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: `order[start..start + count]`. Inner (`count == 0`): `left`
    /// and `right` child indices.
    start: usize,
    count: usize,
    left: usize,
    right: usize,
}

#[derive(Debug, Clone)]
pub struct Bvh<P> {
    prims: Vec<P>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

fn box_distance_squared(lo: &Vec3, hi: &Vec3, p: &Vec3) -> f64 {
    let mut d = 0.0;
    for k in 0..3 {
        let v = if p[k] < lo[k] {
            lo[k] - p[k]
        } else if p[k] > hi[k] {
            p[k] - hi[k]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

impl<P: Primitive> Bvh<P> {
    /// Median-split build along the widest centroid axis.
    pub fn build(prims: Vec<P>) -> Self {
        let mut bvh = Bvh {
            order: (0..prims.len()).collect(),
            prims,
            nodes: Vec::new(),
        };
        if !bvh.prims.is_empty() {
            let bounds: Vec<(Vec3, Vec3)> = bvh.prims.iter().map(|p| p.bounds()).collect();
            let centroids: Vec<Vec3> = bvh.prims.iter().map(|p| p.centroid()).collect();
            let n = bvh.prims.len();
            bvh.build_node(&bounds, &centroids, 0, n);
        }
        bvh
    }

    fn build_node(&mut self, bounds: &[(Vec3, Vec3)], centroids: &[Vec3], start: usize, end: usize) -> usize {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut clo = lo;
        let mut chi = hi;
        for &i in &self.order[start..end] {
            lo = lo.inf(&bounds[i].0);
            hi = hi.sup(&bounds[i].1);
            clo = clo.inf(&centroids[i]);
            chi = chi.sup(&centroids[i]);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            start,
            count: end - start,
            left: usize::MAX,
            right: usize::MAX,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let extent = chi - clo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        let left = self.build_node(bounds, centroids, start, mid);
        let right = self.build_node(bounds, centroids, mid, end);
        let node = &mut self.nodes[id];
        node.count = 0;
        node.left = left;
        node.right = right;
        id
    }

    pub fn len(&self) -> usize {
        self.prims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prims.is_empty()
    }

    pub fn primitives(&self) -> &[P] {
        &self.prims
    }

    /// Squared distance to the nearest primitive and its index, or `None`
    /// when empty.
    pub fn nearest(&self, p: &Vec3) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if box_distance_squared(&node.lo, &node.hi, p) > best.0 {
                continue;
            }
            if node.count > 0 {
                for &i in &self.order[node.start..node.start + node.count] {
                    let d = self.prims[i].distance_squared(p);
                    if d < best.0 || (d == best.0 && i < best.1) {
                        best = (d, i);
                    }
                }
            } else {
                let (l, r) = (&self.nodes[node.left], &self.nodes[node.right]);
                let dl = box_distance_squared(&l.lo, &l.hi, p);
                let dr = box_distance_squared(&r.lo, &r.hi, p);
                // Visit the nearer child first.
                if dl <= dr {
                    stack.push(node.right);
                    stack.push(node.left);
                } else {
                    stack.push(node.left);
                    stack.push(node.right);
                }
            }
        }
        Some(best)
    }
}

//! Axis-aligned bounding-volume hierarchy over mesh triangles for exact
//! closest-point queries. Traversal prunes nodes whose box distance exceeds
//! the current best, so reported minima are global, not approximate.

use nalgebra::Point3;

use crate::mesh::SurfaceMesh;

#[derive(Debug, Clone, Copy)]
pub struct ClosestPoint {
    /// Closest point on the surface.
    pub point: Point3<f64>,
    /// Euclidean distance from the query to `point` (mm).
    pub distance: f64,
    /// Index of the triangle realizing the minimum.
    pub triangle: usize,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Point3<f64>,
    max: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow_point(&mut self, p: &Point3<f64>) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    fn distance_squared(&self, p: &Point3<f64>) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let d = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d2 += d * d;
        }
        d2
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        count: usize,
    },
    Inner {
        aabb_left: Aabb,
        aabb_right: Aabb,
        left: usize,
        right: usize,
    },
}

/// BVH over the triangles of one mesh. Immutable and reentrant.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    // Triangle corner positions in BVH order; `tri_ids` maps back to mesh ids.
    corners: Vec<[Point3<f64>; 3]>,
    tri_ids: Vec<usize>,
    nodes: Vec<Node>,
    root_aabb: Aabb,
}

const LEAF_SIZE: usize = 4;

impl TriangleBvh {
    pub fn new(mesh: &SurfaceMesh) -> Self {
        let mut corners: Vec<[Point3<f64>; 3]> = (0..mesh.triangle_count())
            .map(|t| mesh.triangle_points(t))
            .collect();
        let mut tri_ids: Vec<usize> = (0..mesh.triangle_count()).collect();
        let centroids: Vec<Point3<f64>> = corners
            .iter()
            .map(|c| Point3::from((c[0].coords + c[1].coords + c[2].coords) / 3.0))
            .collect();
        let mut order: Vec<usize> = (0..corners.len()).collect();
        let mut nodes = Vec::new();
        let root = build_node(&mut order, &centroids, &corners, &mut nodes);
        // Reorder triangles into the BVH's contiguous layout.
        let mut new_corners = Vec::with_capacity(corners.len());
        let mut new_ids = Vec::with_capacity(corners.len());
        for &i in &order {
            new_corners.push(corners[i]);
            new_ids.push(tri_ids[i]);
        }
        corners = new_corners;
        tri_ids = new_ids;
        let mut root_aabb = Aabb::empty();
        for c in &corners {
            for p in c {
                root_aabb.grow_point(p);
            }
        }
        debug_assert_eq!(root, nodes.len() - 1);
        Self {
            corners,
            tri_ids,
            nodes,
            root_aabb,
        }
    }

    /// Exact closest point on the mesh surface from `query`.
    pub fn closest_point(&self, query: &Point3<f64>) -> ClosestPoint {
        let mut best = ClosestPoint {
            point: *query,
            distance: f64::INFINITY,
            triangle: usize::MAX,
        };
        let mut best_d2 = f64::INFINITY;
        self.search(
            self.nodes.len() - 1,
            &self.root_aabb,
            query,
            &mut best,
            &mut best_d2,
        );
        best
    }

    fn search(
        &self,
        node: usize,
        aabb: &Aabb,
        query: &Point3<f64>,
        best: &mut ClosestPoint,
        best_d2: &mut f64,
    ) {
        if aabb.distance_squared(query) >= *best_d2 {
            return;
        }
        match &self.nodes[node] {
            Node::Leaf { start, count } => {
                for k in *start..*start + *count {
                    let [a, b, c] = self.corners[k];
                    let p = closest_point_on_triangle(query, &a, &b, &c);
                    let d2 = (p - query).norm_squared();
                    if d2 < *best_d2 {
                        *best_d2 = d2;
                        *best = ClosestPoint {
                            point: p,
                            distance: d2.sqrt(),
                            triangle: self.tri_ids[k],
                        };
                    }
                }
            }
            Node::Inner {
                aabb_left,
                aabb_right,
                left,
                right,
            } => {
                let dl = aabb_left.distance_squared(query);
                let dr = aabb_right.distance_squared(query);
                if dl <= dr {
                    self.search(*left, aabb_left, query, best, best_d2);
                    if dr < *best_d2 {
                        self.search(*right, aabb_right, query, best, best_d2);
                    }
                } else {
                    self.search(*right, aabb_right, query, best, best_d2);
                    if dl < *best_d2 {
                        self.search(*left, aabb_left, query, best, best_d2);
                    }
                }
            }
        }
    }
}

/// Builds the subtree over `order` (triangle indices), returning the node id.
/// Leaves store a contiguous range of the final order.
fn build_node(
    order: &mut [usize],
    centroids: &[Point3<f64>],
    corners: &[[Point3<f64>; 3]],
    nodes: &mut Vec<Node>,
) -> usize {
    build_range(order, 0, centroids, corners, nodes)
}

fn build_range(
    order: &mut [usize],
    offset: usize,
    centroids: &[Point3<f64>],
    corners: &[[Point3<f64>; 3]],
    nodes: &mut Vec<Node>,
) -> usize {
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            count: order.len(),
        });
        return nodes.len() - 1;
    }
    // Split at the median along the widest centroid axis.
    let mut cmin = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut cmax = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &i in order.iter() {
        for k in 0..3 {
            cmin[k] = cmin[k].min(centroids[i][k]);
            cmax[k] = cmax[k].max(centroids[i][k]);
        }
    }
    let mut axis = 0;
    for k in 1..3 {
        if cmax[k] - cmin[k] > cmax[axis] - cmin[axis] {
            axis = k;
        }
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a][axis]
            .partial_cmp(&centroids[b][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let (left_slice, right_slice) = order.split_at_mut(mid);
    let left = build_range(left_slice, offset, centroids, corners, nodes);
    let right = build_range(right_slice, offset + mid, centroids, corners, nodes);
    let aabb_of = |slice: &[usize]| {
        let mut bb = Aabb::empty();
        for &i in slice {
            for p in &corners[i] {
                bb.grow_point(p);
            }
        }
        bb
    };
    nodes.push(Node::Inner {
        aabb_left: aabb_of(left_slice),
        aabb_right: aabb_of(right_slice),
        left,
        right,
    });
    nodes.len() - 1
}

/// Closest point on the closed triangle (a, b, c) to p (Ericson, Real-Time
/// Collision Detection, section 5.1.5).
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Point3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;

    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Convenience one-shot query; build a [`TriangleBvh`] for repeated use.
pub fn closest_point(mesh: &SurfaceMesh, query: &Point3<f64>) -> ClosestPoint {
    TriangleBvh::new(mesh).closest_point(query)
}

/// Brute-force reference scan over all triangles.
pub fn closest_point_brute_force(mesh: &SurfaceMesh, query: &Point3<f64>) -> ClosestPoint {
    let mut best = ClosestPoint {
        point: *query,
        distance: f64::INFINITY,
        triangle: usize::MAX,
    };
    for t in 0..mesh.triangle_count() {
        let [a, b, c] = mesh.triangle_points(t);
        let p = closest_point_on_triangle(query, &a, &b, &c);
        let d = (p - query).norm();
        if d < best.distance {
            best = ClosestPoint {
                point: p,
                distance: d,
                triangle: t,
            };
        }
    }
    best
}

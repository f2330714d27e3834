//! Template construction: surface resampling by quadric edge collapse with
//! tangential relaxation, and per-vertex averaging of registered instances
//! into a mean template.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use nalgebra::{Matrix3, Point3, Vector3};
use thiserror::Error;

use crate::bvh::TriangleBvh;
use crate::mesh::{MeshError, SurfaceMesh};
use crate::registration::RegisteredMesh;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("target vertex count {target} is out of range (need 4 ..= {max})")]
    InvalidTarget { target: usize, max: usize },
    #[error("decimation stalled at {reached} vertices before reaching {target} without breaking manifoldness")]
    CannotReachTarget { reached: usize, target: usize },
    #[error("registered instances do not share topology: {details}")]
    TopologyMismatch { details: String },
    #[error("at least one registered instance is required")]
    EmptyInput,
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Mean template with provenance.
#[derive(Debug, Clone)]
pub struct TemplateModel {
    pub mesh: SurfaceMesh,
    pub organ: String,
    pub seed_case: String,
    pub averaged_over: Vec<String>,
}

/// Resample a surface down to exactly `target_vertices` vertices using
/// iterative quadric-error edge collapse followed by tangential relaxation
/// (vertices are projected back onto the input surface).
pub fn resample_surface(
    mesh: &SurfaceMesh,
    target_vertices: usize,
) -> Result<SurfaceMesh, TemplateError> {
    if target_vertices < 4 || target_vertices > mesh.vertex_count() {
        return Err(TemplateError::InvalidTarget {
            target: target_vertices,
            max: mesh.vertex_count(),
        });
    }
    if target_vertices == mesh.vertex_count() {
        return Ok(mesh.clone());
    }
    let decimated = Decimator::new(mesh).run(target_vertices)?;
    let relaxed = tangential_relaxation(&decimated, mesh, 3, 0.5)?;
    Ok(relaxed)
}

/// Vertexwise arithmetic mean of registered instances sharing one topology.
pub fn build_mean_template(registered: &[RegisteredMesh]) -> Result<TemplateModel, TemplateError> {
    build_mean_template_named(registered, "", "")
}

pub fn build_mean_template_named(
    registered: &[RegisteredMesh],
    organ: &str,
    seed_case: &str,
) -> Result<TemplateModel, TemplateError> {
    let first = registered.first().ok_or(TemplateError::EmptyInput)?;
    for r in registered.iter().skip(1) {
        if !r.mesh.same_topology(&first.mesh) {
            return Err(TemplateError::TopologyMismatch {
                details: format!(
                    "instance for target {:?} has {} vertices / {} triangles, expected {} / {}",
                    r.target,
                    r.mesh.vertex_count(),
                    r.mesh.triangle_count(),
                    first.mesh.vertex_count(),
                    first.mesh.triangle_count()
                ),
            });
        }
    }
    let n = first.mesh.vertex_count();
    let m = registered.len() as f64;
    let mut mean = vec![Vector3::zeros(); n];
    for r in registered {
        for (acc, v) in mean.iter_mut().zip(r.mesh.vertices()) {
            *acc += v.coords;
        }
    }
    let verts: Vec<Point3<f64>> = mean.into_iter().map(|v| Point3::from(v / m)).collect();
    Ok(TemplateModel {
        mesh: first.mesh.with_vertices(verts)?,
        organ: organ.to_string(),
        seed_case: seed_case.to_string(),
        averaged_over: registered.iter().map(|r| r.target.clone()).collect(),
    })
}

// --- quadric edge collapse -------------------------------------------------

/// Symmetric 4x4 quadric, upper triangle stored as 10 floats.
#[derive(Debug, Clone, Copy)]
struct Quadric {
    q: [f64; 10],
}

impl Quadric {
    fn zero() -> Self {
        Self { q: [0.0; 10] }
    }

    /// Area-weighted plane quadric for plane n.x + d = 0.
    fn from_plane(n: Vector3<f64>, d: f64, area: f64) -> Self {
        let (a, b, c) = (n.x, n.y, n.z);
        Self {
            q: [
                area * a * a,
                area * a * b,
                area * a * c,
                area * a * d,
                area * b * b,
                area * b * c,
                area * b * d,
                area * c * c,
                area * c * d,
                area * d * d,
            ],
        }
    }

    fn add(&mut self, other: &Quadric) {
        for k in 0..10 {
            self.q[k] += other.q[k];
        }
    }

    fn evaluate(&self, p: &Point3<f64>) -> f64 {
        let (x, y, z) = (p.x, p.y, p.z);
        self.q[0] * x * x
            + 2.0 * self.q[1] * x * y
            + 2.0 * self.q[2] * x * z
            + 2.0 * self.q[3] * x
            + self.q[4] * y * y
            + 2.0 * self.q[5] * y * z
            + 2.0 * self.q[6] * y
            + self.q[7] * z * z
            + 2.0 * self.q[8] * z
            + self.q[9]
    }

    /// Minimizing position, if the 3x3 system is well conditioned.
    fn optimal_point(&self) -> Option<Point3<f64>> {
        let a = Matrix3::new(
            self.q[0], self.q[1], self.q[2], self.q[1], self.q[4], self.q[5], self.q[2], self.q[5],
            self.q[7],
        );
        let b = Vector3::new(-self.q[3], -self.q[6], -self.q[8]);
        let det = a.determinant();
        if det.abs() < 1e-12 * a.norm().powi(3).max(1e-30) {
            return None;
        }
        a.try_inverse().map(|inv| Point3::from(inv * b))
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    stamp: u64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // Reversed: BinaryHeap is a max-heap, we want the cheapest collapse first.
    // Ties break on vertex ids for determinism.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.a.cmp(&self.a))
            .then(other.b.cmp(&self.b))
    }
}

struct Decimator {
    positions: Vec<Point3<f64>>,
    tris: Vec<[usize; 3]>,
    tri_alive: Vec<bool>,
    vertex_tris: Vec<BTreeSet<usize>>,
    vertex_alive: Vec<bool>,
    quadrics: Vec<Quadric>,
    version: Vec<u64>,
    heap: BinaryHeap<Candidate>,
    alive_count: usize,
}

impl Decimator {
    fn new(mesh: &SurfaceMesh) -> Self {
        let positions: Vec<Point3<f64>> = mesh.vertices().to_vec();
        let tris: Vec<[usize; 3]> = mesh.triangles().to_vec();
        let mut vertex_tris = vec![BTreeSet::new(); positions.len()];
        for (t, tri) in tris.iter().enumerate() {
            for &v in tri {
                vertex_tris[v].insert(t);
            }
        }
        let mut quadrics = vec![Quadric::zero(); positions.len()];
        for tri in &tris {
            let [a, b, c] = *tri;
            let e1 = positions[b] - positions[a];
            let e2 = positions[c] - positions[a];
            let cross = e1.cross(&e2);
            let area = 0.5 * cross.norm();
            if area < 1e-30 {
                continue;
            }
            let n = cross.normalize();
            let d = -n.dot(&positions[a].coords);
            let q = Quadric::from_plane(n, d, area);
            quadrics[a].add(&q);
            quadrics[b].add(&q);
            quadrics[c].add(&q);
        }
        let mut dec = Self {
            alive_count: positions.len(),
            version: vec![0; positions.len()],
            vertex_alive: vec![true; positions.len()],
            tri_alive: vec![true; tris.len()],
            positions,
            tris,
            vertex_tris,
            quadrics,
            heap: BinaryHeap::new(),
        };
        for &(a, b) in mesh.edge_map().keys() {
            dec.push_candidate(a, b);
        }
        dec
    }

    fn push_candidate(&mut self, a: usize, b: usize) {
        let (a, b) = (a.min(b), a.max(b));
        let mut q = self.quadrics[a];
        q.add(&self.quadrics[b]);
        let placement = self.placement_candidates(a, b, &q)[0];
        let cost = q.evaluate(&placement);
        self.heap.push(Candidate {
            cost,
            a,
            b,
            stamp: self.version[a] + self.version[b],
        });
    }

    fn placement_candidates(&self, a: usize, b: usize, q: &Quadric) -> Vec<Point3<f64>> {
        let pa = self.positions[a];
        let pb = self.positions[b];
        let mid = Point3::from((pa.coords + pb.coords) / 2.0);
        let mut out = Vec::with_capacity(4);
        if let Some(opt) = q.optimal_point() {
            // Keep the optimal point only when it stays near the edge.
            if (opt - mid).norm() <= 3.0 * (pa - pb).norm().max(1e-12) {
                out.push(opt);
            }
        }
        out.push(mid);
        out.push(pa);
        out.push(pb);
        out
    }

    fn neighbors(&self, v: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &t in &self.vertex_tris[v] {
            for &w in &self.tris[t] {
                if w != v {
                    out.insert(w);
                }
            }
        }
        out
    }

    fn run(mut self, target: usize) -> Result<SurfaceMesh, TemplateError> {
        while self.alive_count > target {
            let Some(cand) = self.heap.pop() else {
                return Err(TemplateError::CannotReachTarget {
                    reached: self.alive_count,
                    target,
                });
            };
            let Candidate { a, b, stamp, .. } = cand;
            if !self.vertex_alive[a] || !self.vertex_alive[b] {
                continue;
            }
            if stamp != self.version[a] + self.version[b] {
                continue;
            }
            self.try_collapse(a, b);
        }
        self.compact()
    }

    fn try_collapse(&mut self, a: usize, b: usize) {
        let shared: Vec<usize> = self.vertex_tris[a]
            .intersection(&self.vertex_tris[b])
            .copied()
            .collect();
        if shared.is_empty() || shared.len() > 2 {
            return;
        }
        // Link condition: common vertex neighbors must be exactly the third
        // vertices of the shared triangles, otherwise the collapse pinches
        // the surface.
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        let common: BTreeSet<usize> = na.intersection(&nb).copied().collect();
        let thirds: BTreeSet<usize> = shared
            .iter()
            .map(|&t| {
                self.tris[t]
                    .iter()
                    .copied()
                    .find(|&v| v != a && v != b)
                    .expect("shared triangle has a third vertex")
            })
            .collect();
        if common != thirds {
            return;
        }

        let mut q = self.quadrics[a];
        q.add(&self.quadrics[b]);
        let affected: Vec<usize> = self.vertex_tris[a]
            .union(&self.vertex_tris[b])
            .copied()
            .filter(|t| !shared.contains(t))
            .collect();
        let placement = self
            .placement_candidates(a, b, &q)
            .into_iter()
            .find(|p| !self.flips_normals(&affected, a, b, p));
        let Some(new_pos) = placement else {
            return;
        };

        // Commit: collapse b into a.
        for &t in &shared {
            self.tri_alive[t] = false;
            for &v in &self.tris[t].clone() {
                self.vertex_tris[v].remove(&t);
            }
        }
        let b_tris: Vec<usize> = self.vertex_tris[b].iter().copied().collect();
        for t in b_tris {
            for v in self.tris[t].iter_mut() {
                if *v == b {
                    *v = a;
                }
            }
            self.vertex_tris[a].insert(t);
        }
        self.vertex_tris[b].clear();
        self.vertex_alive[b] = false;
        self.positions[a] = new_pos;
        self.quadrics[a] = q;
        self.alive_count -= 1;

        // Only the merged vertex changed position and quadric; candidates
        // between two of its neighbors stay valid, so only edges incident to
        // `a` need fresh entries.
        self.version[a] += 1;
        for n in self.neighbors(a) {
            self.push_candidate(a, n);
        }
    }

    /// Would moving the merged vertex to `new_pos` flip or squash any of the
    /// surviving triangles?
    fn flips_normals(&self, tris: &[usize], a: usize, b: usize, new_pos: &Point3<f64>) -> bool {
        for &t in tris {
            let tri = self.tris[t];
            let old = [
                self.positions[tri[0]],
                self.positions[tri[1]],
                self.positions[tri[2]],
            ];
            let mut new = old;
            for (k, &v) in tri.iter().enumerate() {
                if v == a || v == b {
                    new[k] = *new_pos;
                }
            }
            let n_old = (old[1] - old[0]).cross(&(old[2] - old[0]));
            let n_new = (new[1] - new[0]).cross(&(new[2] - new[0]));
            let area_old = n_old.norm();
            let area_new = n_new.norm();
            if area_new < 1e-12 * area_old.max(1e-30) {
                return true;
            }
            if n_old.dot(&n_new) <= 0.0 {
                return true;
            }
        }
        false
    }

    fn compact(self) -> Result<SurfaceMesh, TemplateError> {
        let mut remap = vec![usize::MAX; self.positions.len()];
        let mut verts = Vec::with_capacity(self.alive_count);
        for (v, alive) in self.vertex_alive.iter().enumerate() {
            if *alive {
                remap[v] = verts.len();
                verts.push(self.positions[v]);
            }
        }
        let tris: Vec<[usize; 3]> = self
            .tris
            .iter()
            .zip(&self.tri_alive)
            .filter(|(_, alive)| **alive)
            .map(|(t, _)| [remap[t[0]], remap[t[1]], remap[t[2]]])
            .collect();
        Ok(SurfaceMesh::new(verts, tris)?)
    }
}

/// A few rounds of tangential smoothing with projection back onto the
/// original surface. Boundary vertices are left untouched.
fn tangential_relaxation(
    mesh: &SurfaceMesh,
    original: &SurfaceMesh,
    rounds: usize,
    strength: f64,
) -> Result<SurfaceMesh, TemplateError> {
    let bvh = TriangleBvh::new(original);
    let n = mesh.vertex_count();

    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for tri in mesh.triangles() {
        for k in 0..3 {
            neighbors[tri[k]].insert(tri[(k + 1) % 3]);
            neighbors[tri[k]].insert(tri[(k + 2) % 3]);
        }
    }
    let mut boundary = vec![false; n];
    for ((a, b), tris) in mesh.edge_map() {
        if tris.len() == 1 {
            boundary[a] = true;
            boundary[b] = true;
        }
    }

    let mut verts: Vec<Point3<f64>> = mesh.vertices().to_vec();
    let tris = mesh.triangles();
    for _ in 0..rounds {
        // Area-weighted vertex normals at the current positions.
        let mut normals = vec![Vector3::zeros(); n];
        for tri in tris {
            let e1 = verts[tri[1]] - verts[tri[0]];
            let e2 = verts[tri[2]] - verts[tri[0]];
            let cross = e1.cross(&e2);
            for &v in tri {
                normals[v] += cross;
            }
        }
        let mut next = verts.clone();
        for v in 0..n {
            if boundary[v] || neighbors[v].is_empty() {
                continue;
            }
            let mut centroid = Vector3::zeros();
            for &w in &neighbors[v] {
                centroid += verts[w].coords;
            }
            centroid /= neighbors[v].len() as f64;
            let delta = centroid - verts[v].coords;
            let nrm = normals[v].norm();
            let tangential = if nrm > 1e-30 {
                let unit = normals[v] / nrm;
                delta - unit * unit.dot(&delta)
            } else {
                delta
            };
            let moved = Point3::from(verts[v].coords + strength * tangential);
            next[v] = bvh.closest_point(&moved).point;
        }
        verts = next;
    }
    Ok(mesh.with_vertices(verts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;
    use crate::registration::DisplacementField;
    use crate::shapes;

    fn registered_from(mesh: SurfaceMesh, target: &str) -> RegisteredMesh {
        let n = mesh.vertex_count();
        RegisteredMesh {
            displacement: DisplacementField::new(vec![Vector3::zeros(); n], "t").unwrap(),
            mesh,
            source_template: "t".into(),
            target: target.into(),
            energy_log: Vec::new(),
            converged: true,
        }
    }

    #[test]
    fn resample_to_own_count_is_identity() {
        let mesh = shapes::icosphere(2);
        let out = resample_surface(&mesh, mesh.vertex_count()).unwrap();
        assert_eq!(out.vertices(), mesh.vertices());
        assert_eq!(out.triangles(), mesh.triangles());
    }

    #[test]
    fn sphere_2562_resamples_to_400_vertices_796_triangles() {
        let sphere = shapes::icosphere(4);
        assert_eq!(sphere.vertex_count(), 2562);
        let out = resample_surface(&sphere, 400).unwrap();
        assert_eq!(out.vertex_count(), 400);
        assert_eq!(out.triangle_count(), 796);
        assert!(out.is_closed());
    }

    #[test]
    fn resampled_sphere_stays_close_to_unit_sphere() {
        let sphere = shapes::icosphere(4);
        let out = resample_surface(&sphere, 400).unwrap();
        for v in out.vertices() {
            let deviation = (v.coords.norm() - 1.0).abs();
            assert!(deviation < 0.05, "radial deviation {deviation}");
        }
        let hd = metrics::hausdorff_distance(&sphere, &out);
        assert!(
            hd < 2.0 * sphere.mean_edge_length(),
            "hausdorff {hd} vs edge bound {}",
            2.0 * sphere.mean_edge_length()
        );
    }

    #[test]
    fn aggressive_resample_preserves_closedness() {
        let sphere = shapes::icosphere(3);
        let out = resample_surface(&sphere, 40).unwrap();
        assert_eq!(out.vertex_count(), 40);
        assert!(out.is_closed());
        assert_eq!(out.triangle_count(), 2 * 40 - 4);
    }

    #[test]
    fn invalid_targets_are_rejected() {
        let mesh = shapes::icosphere(1);
        assert!(matches!(
            resample_surface(&mesh, 3),
            Err(TemplateError::InvalidTarget { .. })
        ));
        assert!(matches!(
            resample_surface(&mesh, mesh.vertex_count() + 1),
            Err(TemplateError::InvalidTarget { .. })
        ));
    }

    #[test]
    fn mean_of_single_input_is_identity() {
        let mesh = shapes::icosphere(1);
        let model = build_mean_template(&[registered_from(mesh.clone(), "a")]).unwrap();
        assert_eq!(model.mesh.vertices(), mesh.vertices());
    }

    #[test]
    fn mean_of_shifted_pair_is_midpoint() {
        let mesh = shapes::icosphere(1);
        let shifted = mesh.translated(Vector3::new(2.0, 0.0, 0.0));
        let model = build_mean_template(&[
            registered_from(mesh.clone(), "a"),
            registered_from(shifted, "b"),
        ])
        .unwrap();
        let expected = mesh.translated(Vector3::new(1.0, 0.0, 0.0));
        for (got, want) in model.mesh.vertices().iter().zip(expected.vertices()) {
            assert!((got - want).norm() < 1e-12);
        }
    }

    #[test]
    fn mean_matches_columnwise_oracle_and_is_permutation_invariant() {
        use rand::{Rng, SeedableRng};
        let base = shapes::icosphere(1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let instances: Vec<RegisteredMesh> = (0..25)
            .map(|k| {
                let verts: Vec<Point3<f64>> = base
                    .vertices()
                    .iter()
                    .map(|p| {
                        Point3::new(
                            p.x + rng.gen_range(-1.0..1.0),
                            p.y + rng.gen_range(-1.0..1.0),
                            p.z + rng.gen_range(-1.0..1.0),
                        )
                    })
                    .collect();
                registered_from(base.with_vertices(verts).unwrap(), &format!("case{k}"))
            })
            .collect();
        let model = build_mean_template(&instances).unwrap();

        // Independent column-mean oracle.
        for i in 0..base.vertex_count() {
            let mut acc = Vector3::zeros();
            for inst in &instances {
                acc += inst.mesh.vertices()[i].coords;
            }
            let expected = acc / instances.len() as f64;
            assert!((model.mesh.vertices()[i].coords - expected).norm() < 1e-12);
        }

        let mut reversed = instances.clone();
        reversed.reverse();
        let model_rev = build_mean_template(&reversed).unwrap();
        for (a, b) in model.mesh.vertices().iter().zip(model_rev.mesh.vertices()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn mean_of_identical_copies_is_idempotent() {
        let mesh = shapes::icosphere(1);
        let inputs: Vec<RegisteredMesh> =
            (0..7).map(|_| registered_from(mesh.clone(), "x")).collect();
        let model = build_mean_template(&inputs).unwrap();
        for (a, b) in model.mesh.vertices().iter().zip(mesh.vertices()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn topology_mismatch_is_rejected() {
        let a = registered_from(shapes::icosphere(1), "a");
        let b = registered_from(shapes::icosphere(2), "b");
        assert!(matches!(
            build_mean_template(&[a, b]),
            Err(TemplateError::TopologyMismatch { .. })
        ));
    }
}

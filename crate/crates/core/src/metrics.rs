//! Surface similarity criteria: bidirectional mean distance, Hausdorff
//! distance, Laplacian of the displacement field, and a voxelized Dice
//! coefficient, plus a bundled report for target localization error.

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::bvh::TriangleBvh;
use crate::laplacian::LaplacianOperator;
use crate::mesh::{MeshError, SurfaceMesh};
use crate::topology::Weighting;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dice coefficient requires closed (watertight) meshes; {which} mesh is open")]
    OpenMesh { which: &'static str },
    #[error("voxel size must be positive, got {0}")]
    InvalidVoxel(f64),
    #[error("meshes must share topology to compare displacement smoothness")]
    TopologyMismatch,
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// How the two directional point-to-surface distances are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanDistanceMode {
    /// Sum of all distances divided by the total sample count.
    #[default]
    Pooled,
    /// Average of the two directional means.
    AveragedDirections,
}

/// Bundled similarity metrics for one mesh pair.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub mean_distance: f64,
    pub hausdorff: f64,
    pub laplacian_mean: f64,
    pub laplacian_max: f64,
    pub dice: f64,
    pub provenance: String,
}

/// Mean of the nearest bidirectional point-to-surface distances (mm).
pub fn mean_distance(a: &SurfaceMesh, b: &SurfaceMesh) -> f64 {
    mean_distance_with_mode(a, b, MeanDistanceMode::Pooled)
}

pub fn mean_distance_with_mode(a: &SurfaceMesh, b: &SurfaceMesh, mode: MeanDistanceMode) -> f64 {
    let bvh_a = TriangleBvh::new(a);
    let bvh_b = TriangleBvh::new(b);
    mean_distance_prebuilt(a, &bvh_a, b, &bvh_b, mode)
}

/// Variant taking prebuilt BVHs so iterative callers can reuse them.
pub fn mean_distance_prebuilt(
    a: &SurfaceMesh,
    bvh_a: &TriangleBvh,
    b: &SurfaceMesh,
    bvh_b: &TriangleBvh,
    mode: MeanDistanceMode,
) -> f64 {
    let sum_ab: f64 = a
        .vertices()
        .iter()
        .map(|v| bvh_b.closest_point(v).distance)
        .sum();
    let sum_ba: f64 = b
        .vertices()
        .iter()
        .map(|v| bvh_a.closest_point(v).distance)
        .sum();
    match mode {
        MeanDistanceMode::Pooled => {
            (sum_ab + sum_ba) / (a.vertex_count() + b.vertex_count()) as f64
        }
        MeanDistanceMode::AveragedDirections => {
            0.5 * (sum_ab / a.vertex_count() as f64 + sum_ba / b.vertex_count() as f64)
        }
    }
}

/// Sample points used for the Hausdorff approximation: vertices, edge
/// midpoints, and face barycenters. The approximation error is bounded by
/// half the maximum edge length of the sampled mesh.
fn hausdorff_samples(mesh: &SurfaceMesh) -> Vec<Point3<f64>> {
    let mut points: Vec<Point3<f64>> = mesh.vertices().to_vec();
    for &(i, j) in mesh.edge_map().keys() {
        points.push(Point3::from(
            (mesh.vertices()[i].coords + mesh.vertices()[j].coords) / 2.0,
        ));
    }
    for t in 0..mesh.triangle_count() {
        let [a, b, c] = mesh.triangle_points(t);
        points.push(Point3::from((a.coords + b.coords + c.coords) / 3.0));
    }
    points
}

/// Symmetric Hausdorff distance (mm), approximated from vertex, edge-midpoint
/// and barycenter samples on both surfaces.
pub fn hausdorff_distance(a: &SurfaceMesh, b: &SurfaceMesh) -> f64 {
    let bvh_a = TriangleBvh::new(a);
    let bvh_b = TriangleBvh::new(b);
    let d_ab = hausdorff_samples(a)
        .iter()
        .map(|p| bvh_b.closest_point(p).distance)
        .fold(0.0, f64::max);
    let d_ba = hausdorff_samples(b)
        .iter()
        .map(|p| bvh_a.closest_point(p).distance)
        .fold(0.0, f64::max);
    d_ab.max(d_ba)
}

/// Per-vertex magnitude of the discrete Laplacian of `field` on `mesh`,
/// returned as (mean, max) in mm. Uses cotangent weights.
pub fn laplacian_of_displacement(
    mesh: &SurfaceMesh,
    field: &[Vector3<f64>],
) -> Result<(f64, f64), MetricsError> {
    let lap = LaplacianOperator::from_mesh(mesh, Weighting::Cotangent)?;
    let out = lap.apply(field)?;
    let mags: Vec<f64> = out.iter().map(|v| v.norm()).collect();
    let mean = mags.iter().sum::<f64>() / mags.len() as f64;
    let max = mags.iter().fold(0.0f64, |m, &v| m.max(v));
    Ok((mean, max))
}

/// Volumetric Dice similarity coefficient of two closed meshes, computed by
/// voxelizing both on a shared grid with parity ray casting along +x.
pub fn dice_coefficient(
    a: &SurfaceMesh,
    b: &SurfaceMesh,
    voxel_mm: f64,
) -> Result<f64, MetricsError> {
    if !voxel_mm.is_finite() || voxel_mm <= 0.0 {
        return Err(MetricsError::InvalidVoxel(voxel_mm));
    }
    if !a.is_closed() {
        return Err(MetricsError::OpenMesh { which: "first" });
    }
    if !b.is_closed() {
        return Err(MetricsError::OpenMesh { which: "second" });
    }

    let (amin, amax) = a.aabb();
    let (bmin, bmax) = b.aabb();
    let mut min = Point3::new(amin.x.min(bmin.x), amin.y.min(bmin.y), amin.z.min(bmin.z));
    let mut max = Point3::new(amax.x.max(bmax.x), amax.y.max(bmax.y), amax.z.max(bmax.z));
    for k in 0..3 {
        min[k] -= 2.0 * voxel_mm;
        max[k] += 2.0 * voxel_mm;
    }
    let nx = ((max.x - min.x) / voxel_mm).ceil() as usize;
    let ny = ((max.y - min.y) / voxel_mm).ceil() as usize;
    let nz = ((max.z - min.z) / voxel_mm).ceil() as usize;

    // Tiny fixed lateral offsets keep rays away from edges and vertices.
    let off_y = voxel_mm * 1.2345e-4;
    let off_z = voxel_mm * 2.6789e-4;

    let mut inter = 0usize;
    let mut vol_a = 0usize;
    let mut vol_b = 0usize;
    let cols_a = ColumnIndex::new(a, min, voxel_mm, ny, nz, off_y, off_z);
    let cols_b = ColumnIndex::new(b, min, voxel_mm, ny, nz, off_y, off_z);
    for iz in 0..nz {
        for iy in 0..ny {
            let xs_a = cols_a.crossings(iy, iz);
            let xs_b = cols_b.crossings(iy, iz);
            if xs_a.is_empty() && xs_b.is_empty() {
                continue;
            }
            let mut in_a = false;
            let mut ka = 0;
            let mut in_b = false;
            let mut kb = 0;
            for ix in 0..nx {
                let x = min.x + (ix as f64 + 0.5) * voxel_mm;
                while ka < xs_a.len() && xs_a[ka] < x {
                    in_a = !in_a;
                    ka += 1;
                }
                while kb < xs_b.len() && xs_b[kb] < x {
                    in_b = !in_b;
                    kb += 1;
                }
                vol_a += in_a as usize;
                vol_b += in_b as usize;
                inter += (in_a && in_b) as usize;
            }
        }
    }

    if vol_a + vol_b == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * inter as f64 / (vol_a + vol_b) as f64)
}

/// Per-column x-crossings of one mesh, bucketed by (y, z) voxel column.
struct ColumnIndex {
    crossings: Vec<Vec<f64>>,
    ny: usize,
}

impl ColumnIndex {
    fn new(
        mesh: &SurfaceMesh,
        grid_min: Point3<f64>,
        voxel: f64,
        ny: usize,
        nz: usize,
        off_y: f64,
        off_z: f64,
    ) -> Self {
        let mut crossings = vec![Vec::new(); ny * nz];
        for t in 0..mesh.triangle_count() {
            let [a, b, c] = mesh.triangle_points(t);
            let ymin = a.y.min(b.y).min(c.y);
            let ymax = a.y.max(b.y).max(c.y);
            let zmin = a.z.min(b.z).min(c.z);
            let zmax = a.z.max(b.z).max(c.z);
            let iy0 = (((ymin - grid_min.y) / voxel - 1.0).floor().max(0.0)) as usize;
            let iy1 = ((((ymax - grid_min.y) / voxel) + 1.0).ceil() as usize).min(ny);
            let iz0 = (((zmin - grid_min.z) / voxel - 1.0).floor().max(0.0)) as usize;
            let iz1 = ((((zmax - grid_min.z) / voxel) + 1.0).ceil() as usize).min(nz);
            for iz in iz0..iz1 {
                let z = grid_min.z + (iz as f64 + 0.5) * voxel + off_z;
                for iy in iy0..iy1 {
                    let y = grid_min.y + (iy as f64 + 0.5) * voxel + off_y;
                    if let Some(x) = ray_x_crossing(&a, &b, &c, y, z) {
                        crossings[iz * ny + iy].push(x);
                    }
                }
            }
        }
        for list in &mut crossings {
            list.sort_by(|p, q| p.partial_cmp(q).unwrap());
        }
        Self { crossings, ny }
    }

    fn crossings(&self, iy: usize, iz: usize) -> &[f64] {
        &self.crossings[iz * self.ny + iy]
    }
}

/// Intersection x of triangle (a, b, c) with the line {(t, y, z)}, if any.
/// Half-open barycentric bounds make shared-edge hits count exactly once.
fn ray_x_crossing(
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
    y: f64,
    z: f64,
) -> Option<f64> {
    // Solve in the (y, z) plane: p = a + u*(b-a) + v*(c-a).
    let e1y = b.y - a.y;
    let e1z = b.z - a.z;
    let e2y = c.y - a.y;
    let e2z = c.z - a.z;
    let det = e1y * e2z - e1z * e2y;
    if det.abs() < 1e-14 {
        return None; // Triangle parallel to the ray direction.
    }
    let py = y - a.y;
    let pz = z - a.z;
    let u = (py * e2z - pz * e2y) / det;
    let v = (e1y * pz - e1z * py) / det;
    if u < 0.0 || v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(a.x + u * (b.x - a.x) + v * (c.x - a.x))
}

/// Metric bundle for a predicted target region against ground truth. When the
/// meshes share topology the smoothness of the per-vertex error field is
/// included; Dice uses the given voxel size.
pub fn gtv_localization_error(
    predicted: &SurfaceMesh,
    truth: &SurfaceMesh,
    voxel_mm: f64,
) -> Result<MetricReport, MetricsError> {
    let md = mean_distance(predicted, truth);
    let hd = hausdorff_distance(predicted, truth);
    let dice = dice_coefficient(predicted, truth, voxel_mm)?;
    let (lmean, lmax) = if predicted.same_topology(truth) {
        let field: Vec<Vector3<f64>> = predicted
            .vertices()
            .iter()
            .zip(truth.vertices())
            .map(|(p, t)| p - t)
            .collect();
        laplacian_of_displacement(truth, &field)?
    } else {
        return Err(MetricsError::TopologyMismatch);
    };
    Ok(MetricReport {
        mean_distance: md,
        hausdorff: hd,
        laplacian_mean: lmean,
        laplacian_max: lmax,
        dice,
        provenance: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvh;
    use crate::shapes;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perturbed_sphere(seed: u64, scale: f64) -> SurfaceMesh {
        let base = shapes::icosphere(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let verts: Vec<Point3<f64>> = base
            .vertices()
            .iter()
            .map(|p| Point3::from(p.coords * (scale + rng.gen_range(-0.02..0.02))))
            .collect();
        base.with_vertices(verts).unwrap()
    }

    #[test]
    fn identical_meshes_have_zero_mean_distance() {
        let mesh = shapes::icosphere(1);
        assert!(mean_distance(&mesh, &mesh) < 1e-12);
    }

    #[test]
    fn parallel_unit_squares_mean_distance_is_separation() {
        let a = shapes::unit_square();
        let b = a.translated(Vector3::new(0.0, 0.0, 0.75));
        assert!((mean_distance(&a, &b) - 0.75).abs() < 1e-12);
        // Both combination modes agree for equal vertex counts.
        assert!(
            (mean_distance_with_mode(&a, &b, MeanDistanceMode::AveragedDirections) - 0.75).abs()
                < 1e-12
        );
    }

    #[test]
    fn mean_distance_matches_brute_force_scan() {
        let a = perturbed_sphere(1, 1.0);
        let b = perturbed_sphere(2, 1.1);
        let fast = mean_distance(&a, &b);
        let sum_ab: f64 = a
            .vertices()
            .iter()
            .map(|v| bvh::closest_point_brute_force(&b, v).distance)
            .sum();
        let sum_ba: f64 = b
            .vertices()
            .iter()
            .map(|v| bvh::closest_point_brute_force(&a, v).distance)
            .sum();
        let brute = (sum_ab + sum_ba) / (a.vertex_count() + b.vertex_count()) as f64;
        assert!((fast - brute).abs() < 1e-9);
    }

    #[test]
    fn mean_distance_is_symmetric() {
        let a = perturbed_sphere(3, 1.0);
        let b = perturbed_sphere(4, 1.05);
        assert!((mean_distance(&a, &b) - mean_distance(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_zero_for_identical_meshes() {
        let mesh = shapes::icosphere(2);
        assert!(hausdorff_distance(&mesh, &mesh) < 1e-12);
    }

    #[test]
    fn hausdorff_concentric_spheres() {
        let a = shapes::icosphere(3);
        let scaled: Vec<Point3<f64>> = a
            .vertices()
            .iter()
            .map(|p| Point3::from(p.coords * 1.1))
            .collect();
        let b = a.with_vertices(scaled).unwrap();
        let hd = hausdorff_distance(&a, &b);
        assert!((hd - 0.1).abs() < 0.02, "hd {hd}");
    }

    #[test]
    fn hausdorff_close_to_dense_sampling_oracle() {
        let a = perturbed_sphere(5, 1.0);
        let b = perturbed_sphere(6, 1.08);
        let approx = hausdorff_distance(&a, &b);

        // Oracle: 1e5 random barycentric samples per mesh.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut dense = |src: &SurfaceMesh, dst: &SurfaceMesh| -> f64 {
            let bvh = TriangleBvh::new(dst);
            let mut best = 0.0f64;
            for _ in 0..100_000 {
                let t = rng.gen_range(0..src.triangle_count());
                let [p0, p1, p2] = src.triangle_points(t);
                let mut u: f64 = rng.gen();
                let mut v: f64 = rng.gen();
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                let p = Point3::from(p0.coords + u * (p1 - p0) + v * (p2 - p0));
                best = best.max(bvh.closest_point(&p).distance);
            }
            best
        };
        let oracle = dense(&a, &b).max(dense(&b, &a));
        let bound = 0.5 * a.max_edge_length().max(b.max_edge_length());
        assert!(
            (approx - oracle).abs() <= bound,
            "approx {approx}, oracle {oracle}, bound {bound}"
        );
    }

    #[test]
    fn hausdorff_not_below_mean_distance() {
        let a = perturbed_sphere(7, 1.0);
        let b = perturbed_sphere(8, 1.15);
        assert!(hausdorff_distance(&a, &b) >= mean_distance(&a, &b));
    }

    #[test]
    fn laplacian_of_constant_field_is_zero() {
        let mesh = shapes::icosphere(1);
        let field = vec![Vector3::new(3.0, -1.0, 2.0); mesh.vertex_count()];
        let (mean, max) = laplacian_of_displacement(&mesh, &field).unwrap();
        assert!(mean < 1e-12);
        assert!(max < 1e-12);
    }

    #[test]
    fn laplacian_of_positions_is_curvature_magnitude() {
        let mesh = shapes::icosphere(2);
        let field: Vec<Vector3<f64>> = mesh.vertices().iter().map(|p| p.coords).collect();
        let lap = LaplacianOperator::from_mesh(&mesh, Weighting::Cotangent).unwrap();
        let applied = lap.apply(&field).unwrap();
        let expected_mean =
            applied.iter().map(|v| v.norm()).sum::<f64>() / mesh.vertex_count() as f64;
        let (mean, _) = laplacian_of_displacement(&mesh, &field).unwrap();
        assert!((mean - expected_mean).abs() < 1e-12);
    }

    #[test]
    fn laplacian_size_mismatch_is_error() {
        let mesh = shapes::tetrahedron();
        assert!(laplacian_of_displacement(&mesh, &[Vector3::zeros(); 2]).is_err());
    }

    #[test]
    fn dice_of_identical_closed_meshes_is_one() {
        let cube = shapes::box_mesh(Point3::origin(), Vector3::new(0.5, 0.5, 0.5));
        let d = dice_coefficient(&cube, &cube, 0.02).unwrap();
        assert!((d - 1.0).abs() < 0.01, "dice {d}");
    }

    #[test]
    fn dice_of_disjoint_shapes_is_zero() {
        let a = shapes::box_mesh(Point3::origin(), Vector3::new(0.5, 0.5, 0.5));
        let b = shapes::box_mesh(Point3::new(5.0, 0.0, 0.0), Vector3::new(0.5, 0.5, 0.5));
        let d = dice_coefficient(&a, &b, 0.05).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn dice_of_half_overlapping_unit_cubes() {
        let a = shapes::box_mesh(Point3::new(0.5, 0.5, 0.5), Vector3::new(0.5, 0.5, 0.5));
        let b = shapes::box_mesh(Point3::new(1.0, 0.5, 0.5), Vector3::new(0.5, 0.5, 0.5));
        let d = dice_coefficient(&a, &b, 0.01).unwrap();
        assert!((d - 0.5).abs() < 0.02, "dice {d}");
    }

    #[test]
    fn dice_rejects_open_mesh() {
        let open = shapes::unit_square();
        let cube = shapes::box_mesh(Point3::origin(), Vector3::new(0.5, 0.5, 0.5));
        assert!(matches!(
            dice_coefficient(&open, &cube, 0.1),
            Err(MetricsError::OpenMesh { which: "first" })
        ));
    }

    #[test]
    fn dice_is_symmetric() {
        let a = shapes::box_mesh(Point3::new(0.0, 0.0, 0.0), Vector3::new(0.6, 0.5, 0.5));
        let b = shapes::box_mesh(Point3::new(0.3, 0.2, 0.0), Vector3::new(0.5, 0.5, 0.6));
        let dab = dice_coefficient(&a, &b, 0.05).unwrap();
        let dba = dice_coefficient(&b, &a, 0.05).unwrap();
        assert!((dab - dba).abs() < 1e-12);
    }

    #[test]
    fn metrics_invariant_under_rigid_motion() {
        let a = perturbed_sphere(10, 1.0);
        let b = perturbed_sphere(11, 1.1);
        let rot = Rotation3::from_euler_angles(0.4, -0.2, 0.9);
        let shift = Vector3::new(3.0, -2.0, 1.0);
        let move_mesh = |m: &SurfaceMesh| {
            let verts: Vec<Point3<f64>> = m.vertices().iter().map(|p| rot * p + shift).collect();
            m.with_vertices(verts).unwrap()
        };
        let (ra, rb) = (move_mesh(&a), move_mesh(&b));
        assert!((mean_distance(&a, &b) - mean_distance(&ra, &rb)).abs() < 1e-9);
        assert!((hausdorff_distance(&a, &b) - hausdorff_distance(&ra, &rb)).abs() < 1e-9);
    }

    #[test]
    fn localization_report_for_exact_prediction() {
        let truth = shapes::icosphere(2);
        let scaled: Vec<Point3<f64>> = truth
            .vertices()
            .iter()
            .map(|p| Point3::from(p.coords * 20.0))
            .collect();
        let truth = truth.with_vertices(scaled).unwrap();
        let report = gtv_localization_error(&truth, &truth, 1.0).unwrap();
        assert!(report.mean_distance < 1e-12);
        assert!(report.hausdorff < 1e-12);
        assert!(report.laplacian_mean < 1e-12);
        assert!((report.dice - 1.0).abs() < 0.02);
    }

    #[test]
    fn localization_report_for_shifted_prediction() {
        // Convex truth shifted by d: tangential parts of the surface slide,
        // so the point-to-surface MD is below d. For a sphere of radius R the
        // expected distance has a closed 1D quadrature over cos(theta).
        let (radius, shift) = (20.0, 3.0);
        let base = shapes::icosphere(3);
        let scaled: Vec<Point3<f64>> = base
            .vertices()
            .iter()
            .map(|p| Point3::from(p.coords * radius))
            .collect();
        let truth = base.with_vertices(scaled).unwrap();
        let pred = truth.translated(Vector3::new(shift, 0.0, 0.0));
        let report = gtv_localization_error(&pred, &truth, 1.0).unwrap();

        // Quadrature oracle: mean over the sphere of
        // |sqrt(R^2 + d^2 + 2 R d t) - R| with t = cos(theta) uniform.
        let steps = 200_000;
        let mut oracle = 0.0;
        for k in 0..steps {
            let t = -1.0 + 2.0 * (k as f64 + 0.5) / steps as f64;
            oracle += ((radius * radius + shift * shift + 2.0 * radius * shift * t).sqrt()
                - radius)
                .abs();
        }
        oracle /= steps as f64;
        assert!(
            (report.mean_distance - oracle).abs() < 0.1,
            "md {} vs oracle {oracle}",
            report.mean_distance
        );
        // The true Hausdorff equals the full shift on the shift axis.
        assert!((report.hausdorff - shift).abs() < 0.1);
        assert!(report.hausdorff >= report.mean_distance);
        assert!(report.laplacian_mean < 1e-9);
    }
}

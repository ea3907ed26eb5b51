//! Indexed triangle meshes and the per-face quantities derived from them.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Cross-product norms below this are treated as zero area.
const DEGENERATE_AREA_EPS: f64 = 1e-12;

/// An indexed triangle mesh. Immutable after construction; derived
/// quantities are computed by the free functions in this module.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Build a mesh, rejecting out-of-range indices and faces with repeated
    /// vertex indices.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fid, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(Error::Topology(format!(
                        "face {fid} references vertex {v}, but the mesh has {n} vertices"
                    )));
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Topology(format!(
                    "face {fid} has repeated vertex indices {f:?}"
                )));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Same connectivity, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Mismatch(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
        })
    }

    /// True if `other` has identical face triples and vertex count.
    pub fn same_connectivity(&self, other: &TriMesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.faces == other.faces
    }

    pub fn face_vertices(&self, fid: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[fid];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }
}

/// Per-face values aligned with the mesh's face indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField<S> {
    data: Vec<S>,
}

impl<S> FaceField<S> {
    /// Wrap per-face data; the length must equal the mesh's face count.
    pub fn new(mesh: &TriMesh, data: Vec<S>) -> Result<Self> {
        if data.len() != mesh.face_count() {
            return Err(Error::Mismatch(format!(
                "face field has {} entries for a mesh with {} faces",
                data.len(),
                mesh.face_count()
            )));
        }
        Ok(Self { data })
    }

    pub fn from_fn(mesh: &TriMesh, f: impl FnMut(usize) -> S) -> Self {
        Self {
            data: (0..mesh.face_count()).map(f).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, S> {
        self.data.iter()
    }
}

impl<S> std::ops::Index<usize> for FaceField<S> {
    type Output = S;
    fn index(&self, fid: usize) -> &S {
        &self.data[fid]
    }
}

/// Unit face normals plus a flag for zero-area faces, which receive the
/// fallback normal (0,0,1) and are skipped by downstream metrics.
#[derive(Debug, Clone)]
pub struct FaceNormals {
    normals: FaceField<Vec3>,
    degenerate: Vec<bool>,
}

impl FaceNormals {
    pub fn normal(&self, fid: usize) -> Vec3 {
        self.normals[fid]
    }

    pub fn is_degenerate(&self, fid: usize) -> bool {
        self.degenerate[fid]
    }

    pub fn field(&self) -> &FaceField<Vec3> {
        &self.normals
    }

    pub fn degenerate_flags(&self) -> &[bool] {
        &self.degenerate
    }
}

/// Normalized cross product of each face's edge vectors, following the
/// face's vertex winding.
pub fn face_normals(mesh: &TriMesh) -> FaceNormals {
    let mut normals = Vec::with_capacity(mesh.face_count());
    let mut degenerate = vec![false; mesh.face_count()];
    for (fid, _) in mesh.faces().iter().enumerate() {
        let [a, b, c] = mesh.face_vertices(fid);
        let cross = (b - a).cross(&(c - a));
        let len = cross.norm();
        if len <= DEGENERATE_AREA_EPS {
            normals.push(Vec3::new(0.0, 0.0, 1.0));
            degenerate[fid] = true;
        } else {
            normals.push(cross / len);
        }
    }
    FaceNormals {
        normals: FaceField { data: normals },
        degenerate,
    }
}

/// Arithmetic mean of each face's three vertices.
pub fn face_centroids(mesh: &TriMesh) -> FaceField<Vec3> {
    FaceField::from_fn(mesh, |fid| {
        let [a, b, c] = mesh.face_vertices(fid);
        (a + b + c) / 3.0
    })
}

/// Twice-area of each face (cross product norm). Zero for degenerate faces.
pub fn face_double_areas(mesh: &TriMesh) -> FaceField<f64> {
    FaceField::from_fn(mesh, |fid| {
        let [a, b, c] = mesh.face_vertices(fid);
        (b - a).cross(&(c - a)).norm()
    })
}

/// Mean length over the mesh's unique undirected edges.
pub fn average_edge_length(mesh: &TriMesh) -> Result<f64> {
    let mut seen = std::collections::HashSet::new();
    let mut total = 0.0;
    let mut count = 0usize;
    for f in mesh.faces() {
        for (i, j) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                total += (mesh.vertices()[i] - mesh.vertices()[j]).norm();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Topology("mesh has no edges".into()));
    }
    Ok(total / count as f64)
}

/// Dual graph: for each face, the faces sharing an edge with it.
/// Non-manifold edges contribute all incident faces.
pub fn face_adjacency(mesh: &TriMesh) -> Vec<Vec<usize>> {
    let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (fid, f) in mesh.faces().iter().enumerate() {
        for (i, j) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            edge_faces
                .entry((i.min(j), i.max(j)))
                .or_default()
                .push(fid);
        }
    }
    let mut adj = vec![Vec::new(); mesh.face_count()];
    for faces in edge_faces.values() {
        for &a in faces {
            for &b in faces {
                if a != b && !adj[a].contains(&b) {
                    adj[a].push(b);
                }
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

/// One-ring facet normal variation: for face f with edge-adjacent set A(f),
/// the mean over g in A(f) of |n_g - mean({n_f} ∪ {n_g})|^2.
pub fn one_ring_normal_variance(mesh: &TriMesh, normals: &FaceNormals) -> FaceField<f64> {
    let adj = face_adjacency(mesh);
    FaceField::from_fn(mesh, |fid| {
        let ring = &adj[fid];
        if ring.is_empty() {
            return 0.0;
        }
        let mut mean = normals.normal(fid);
        for &g in ring {
            mean += normals.normal(g);
        }
        mean /= (ring.len() + 1) as f64;
        let sum: f64 = ring
            .iter()
            .map(|&g| (normals.normal(g) - mean).norm_squared())
            .sum();
        sum / ring.len() as f64
    })
}

/// Area-weighted vertex normals (mean of incident face area vectors).
/// Vertices with no non-degenerate incident face get (0,0,1).
pub fn vertex_normals(mesh: &TriMesh) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); mesh.vertex_count()];
    for (fid, f) in mesh.faces().iter().enumerate() {
        let [a, b, c] = mesh.face_vertices(fid);
        let area_vec = (b - a).cross(&(c - a));
        for &v in f {
            acc[v] += area_vec;
        }
    }
    acc.into_iter()
        .map(|v| {
            let n = v.norm();
            if n <= DEGENERATE_AREA_EPS {
                Vec3::new(0.0, 0.0, 1.0)
            } else {
                v / n
            }
        })
        .collect()
}

/// Faces incident to each vertex.
pub fn vertex_face_incidence(mesh: &TriMesh) -> Vec<Vec<usize>> {
    let mut inc = vec![Vec::new(); mesh.vertex_count()];
    for (fid, f) in mesh.faces().iter().enumerate() {
        for &v in f {
            inc[v].push(fid);
        }
    }
    inc
}

/// Derived per-face data bundled for the pipeline: computed once, shared
/// read-only afterwards.
#[derive(Debug, Clone)]
pub struct SurfaceData {
    pub normals: FaceNormals,
    pub centroids: FaceField<Vec3>,
    pub adjacency: Vec<Vec<usize>>,
    pub variance: FaceField<f64>,
    pub avg_edge_length: f64,
}

impl SurfaceData {
    pub fn compute(mesh: &TriMesh) -> Result<Self> {
        let normals = face_normals(mesh);
        let variance = one_ring_normal_variance(mesh, &normals);
        Ok(Self {
            centroids: face_centroids(mesh),
            adjacency: face_adjacency(mesh),
            avg_edge_length: average_edge_length(mesh)?,
            normals,
            variance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_out_of_range_index() {
        let verts = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let err = TriMesh::new(verts, vec![[0, 1, 99]]).unwrap_err();
        assert!(matches!(err, Error::Topology(_)));
    }

    #[test]
    fn rejects_repeated_index() {
        let verts = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriMesh::new(verts, vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn planar_face_normal_follows_winding() {
        let verts = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let ccw = TriMesh::new(verts.clone(), vec![[0, 1, 2]]).unwrap();
        let cw = TriMesh::new(verts, vec![[0, 2, 1]]).unwrap();
        assert_relative_eq!(face_normals(&ccw).normal(0), Vec3::new(0.0, 0.0, 1.0));
        assert_relative_eq!(face_normals(&cw).normal(0), Vec3::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn zero_area_sliver_gets_fallback() {
        let verts = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        let mesh = TriMesh::new(verts, vec![[0, 1, 2]]).unwrap();
        let normals = face_normals(&mesh);
        assert!(normals.is_degenerate(0));
        assert_eq!(normals.normal(0), Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn normals_are_unit_length() {
        let mesh = shapes::icosphere(1.0, 2);
        let normals = face_normals(&mesh);
        for fid in 0..mesh.face_count() {
            assert!((normals.normal(fid).norm() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn centroid_of_right_triangle() {
        let verts = vec![Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0)];
        let mesh = TriMesh::new(verts, vec![[0, 1, 2]]).unwrap();
        assert_relative_eq!(face_centroids(&mesh)[0], Vec3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn centroids_translate_with_the_mesh() {
        let mesh = shapes::unit_cube();
        let shift = Vec3::new(1.5, -2.0, 0.25);
        let moved = mesh
            .with_vertices(mesh.vertices().iter().map(|v| v + shift).collect())
            .unwrap();
        let a = face_centroids(&mesh);
        let b = face_centroids(&moved);
        for fid in 0..mesh.face_count() {
            assert_relative_eq!(a[fid] + shift, b[fid], epsilon = 1e-12);
        }
    }

    #[test]
    fn cube_average_edge_length_closed_form() {
        // 18 unique edges: 12 axis-aligned of length 1, 6 face diagonals of sqrt(2).
        let mesh = shapes::unit_cube();
        let expected = (12.0 + 6.0 * 2f64.sqrt()) / 18.0;
        assert_relative_eq!(average_edge_length(&mesh).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn edge_length_scales_homogeneously() {
        let mesh = shapes::icosphere(1.0, 1);
        let scaled = mesh
            .with_vertices(mesh.vertices().iter().map(|v| v * 3.5).collect())
            .unwrap();
        assert_relative_eq!(
            average_edge_length(&scaled).unwrap(),
            3.5 * average_edge_length(&mesh).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn triangle_345_average_edge() {
        let verts = vec![Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0), Vec3::new(3.0, 4.0, 0.0)];
        let mesh = TriMesh::new(verts, vec![[0, 1, 2]]).unwrap();
        assert_relative_eq!(average_edge_length(&mesh).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_mesh_has_no_edges() {
        let mesh = TriMesh::new(vec![Vec3::zeros()], vec![]).unwrap();
        assert!(average_edge_length(&mesh).is_err());
    }

    #[test]
    fn adjacency_of_two_triangles() {
        let verts = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(1.0, 1.0, 0.0)];
        let mesh = TriMesh::new(verts, vec![[0, 1, 2], [1, 3, 2]]).unwrap();
        let adj = face_adjacency(&mesh);
        assert_eq!(adj[0], vec![1]);
        assert_eq!(adj[1], vec![0]);
    }

    #[test]
    fn closed_cube_faces_have_three_neighbors() {
        let adj = face_adjacency(&shapes::unit_cube());
        for list in &adj {
            assert_eq!(list.len(), 3);
        }
    }

    #[test]
    fn strip_boundary_faces_have_at_most_two_neighbors() {
        let mesh = shapes::grid_plane(3, 1, 1.0);
        let adj = face_adjacency(&mesh);
        assert!(adj.iter().any(|l| l.len() <= 2));
        // symmetry and self-freedom
        for (f, list) in adj.iter().enumerate() {
            assert!(!list.contains(&f));
            for &g in list {
                assert!(adj[g].contains(&f));
            }
        }
    }

    #[test]
    fn flat_plane_variance_is_zero() {
        let mesh = shapes::grid_plane(4, 4, 1.0);
        let normals = face_normals(&mesh);
        let var = one_ring_normal_variance(&mesh, &normals);
        for &v in var.as_slice() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn cube_face_variance_matches_hand_evaluation() {
        // On the unit cube every triangle is adjacent to its coplanar twin and
        // two perpendicular faces. With n_f = z, ring normals {z, a, b} where
        // a ⟂ z, b ⟂ z, a ⟂ b:
        //   mean = (a + b + 2z)/4, and the ring deviations give
        //   (0.375 + 0.875 + 0.875)/3 = 0.7083...
        let mesh = shapes::unit_cube();
        let normals = face_normals(&mesh);
        let var = one_ring_normal_variance(&mesh, &normals);
        let expected = (0.375 + 0.875 + 0.875) / 3.0;
        for &v in var.as_slice() {
            assert_relative_eq!(v, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn variance_is_rotation_invariant() {
        let mesh = shapes::icosphere(1.0, 2);
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.2);
        let rotated = mesh
            .with_vertices(mesh.vertices().iter().map(|v| rot * v).collect())
            .unwrap();
        let a = one_ring_normal_variance(&mesh, &face_normals(&mesh));
        let b = one_ring_normal_variance(&rotated, &face_normals(&rotated));
        for fid in 0..mesh.face_count() {
            assert!((a[fid] - b[fid]).abs() <= 1e-6);
        }
    }

    #[test]
    fn noisy_plane_variance_positive() {
        let mesh = shapes::grid_plane(6, 6, 1.0);
        let noisy = crate::noise::add_noise(
            &mesh,
            &crate::noise::NoiseSpec::gaussian_normal(0.3, 7),
        )
        .unwrap();
        let var = one_ring_normal_variance(&noisy, &face_normals(&noisy));
        let positive = var.iter().filter(|&&v| v > 0.0).count();
        assert!(positive as f64 > 0.9 * var.len() as f64);
    }
}

//! Geodesic distance fields on the mesh surface.
//!
//! Default backend is the heat method (Crane et al.): one implicit heat
//! step from the source, normalize the negated gradient, then recover the
//! distance with a Poisson solve. A Dijkstra fallback walks mesh edges and
//! doubles as a cheap oracle. Patch growth consumes these fields through
//! the nine-distance face-to-face rule.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write as _;
use std::path::Path;

use crate::mesh::{average_edge_length, face_normals, FaceField, TriMesh, Vec3};
use crate::sparse::{solve_cg, PinnedOp, SparseMatrix};
use crate::{Error, Result};

/// Cotangent weights below this are clamped up, so obtuse slivers cannot
/// flip the sign structure of the stiffness matrix.
const COT_CLAMP: f64 = 1e-8;

/// The heat solve's solution spans many orders of magnitude and the
/// gradient stage normalizes it per face, so far-field values must be
/// resolved well below the peak; 1e-8 would leave them under solver noise.
const HEAT_CG_TOL: f64 = 1e-12;

/// Distance-field backend. Heat is the default for dataset preparation;
/// Dijkstra over-measures slightly but needs no linear solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeodesicBackend {
    Heat { time_scale: f64 },
    Dijkstra,
}

impl Default for GeodesicBackend {
    fn default() -> Self {
        GeodesicBackend::Heat { time_scale: 1.0 }
    }
}

/// Per-vertex geodesic distances from one source vertex. Vertices outside
/// the source's connected component are infinite.
#[derive(Debug, Clone)]
pub struct VertexDistanceField {
    pub source: usize,
    pub distances: Vec<f64>,
}

impl VertexDistanceField {
    pub fn distance(&self, vertex: usize) -> f64 {
        self.distances[vertex]
    }

    pub fn is_reached(&self, vertex: usize) -> bool {
        self.distances[vertex].is_finite()
    }
}

/// Computes a distance field with the chosen backend.
pub fn vertex_distances(
    mesh: &TriMesh,
    source: usize,
    backend: GeodesicBackend,
) -> Result<VertexDistanceField> {
    match backend {
        GeodesicBackend::Heat { time_scale } => heat_geodesic(mesh, source, time_scale),
        GeodesicBackend::Dijkstra => Ok(dijkstra_geodesic(mesh, source)),
    }
}

/// One-shot heat-method distances. For many sources on the same mesh,
/// build a [`HeatGeodesics`] once and reuse it.
pub fn heat_geodesic(mesh: &TriMesh, source: usize, time_scale: f64) -> Result<VertexDistanceField> {
    HeatGeodesics::new(mesh, time_scale)?.distances_from(source)
}

/// Prefactored per-mesh state for the heat method: operators, per-face
/// gradient bases, and cotangents. Solves are per-source.
pub struct HeatGeodesics<'m> {
    mesh: &'m TriMesh,
    /// A + t·S with lumped vertex-area mass A and cotan stiffness S.
    heat_matrix: SparseMatrix,
    stiffness: SparseMatrix,
    /// Vertices with no non-degenerate incident face; their rows are
    /// identity in both operators.
    isolated: Vec<bool>,
    /// Vertices on an open boundary (edge with a single incident face).
    boundary: Vec<bool>,
    /// Per face, per corner v: (n̂ × e_opposite(v)) / (2·area).
    grad_basis: Vec<[Vec3; 3]>,
    /// Clamped cotangent of the interior angle at each face corner.
    corner_cot: Vec<[f64; 3]>,
    degenerate: Vec<bool>,
    adjacency: Vec<Vec<usize>>,
}

impl<'m> HeatGeodesics<'m> {
    pub fn new(mesh: &'m TriMesh, time_scale: f64) -> Result<Self> {
        if time_scale <= 0.0 || !time_scale.is_finite() {
            return Err(Error::Config(format!(
                "heat time scale must be positive and finite, got {time_scale}"
            )));
        }
        let n = mesh.vertex_count();
        let h = average_edge_length(mesh)?;
        let t = time_scale * h * h;
        let normals = face_normals(mesh);

        let mut stiff_triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut mass = vec![0.0f64; n];
        let mut grad_basis = vec![[Vec3::zeros(); 3]; mesh.face_count()];
        let mut corner_cot = vec![[0.0f64; 3]; mesh.face_count()];
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut edge_faces: std::collections::HashMap<(usize, usize), u32> =
            std::collections::HashMap::new();

        for (fid, face) in mesh.faces().iter().enumerate() {
            if normals.is_degenerate(fid) {
                continue;
            }
            let p = mesh.face_vertices(fid);
            let double_area = (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
            let n_hat = normals.normal(fid);
            for c in 0..3 {
                let (i, j, k) = (c, (c + 1) % 3, (c + 2) % 3);
                // gradient hat-basis: rotate the opposite edge into the face
                grad_basis[fid][i] = n_hat.cross(&(p[k] - p[j])) / double_area;
                // cot of the interior angle at corner i
                let e1 = p[j] - p[i];
                let e2 = p[k] - p[i];
                corner_cot[fid][i] = (e1.dot(&e2) / double_area).max(COT_CLAMP);
            }
            for c in 0..3 {
                let (i, j, k) = (face[c], face[(c + 1) % 3], face[(c + 2) % 3]);
                let _ = k;
                // edge (i,j) is opposite corner c+2
                let w = corner_cot[fid][(c + 2) % 3] / 2.0;
                stiff_triplets.push((i, i, w));
                stiff_triplets.push((j, j, w));
                stiff_triplets.push((i, j, -w));
                stiff_triplets.push((j, i, -w));
                mass[i] += double_area / 6.0;
                adjacency[i].push(j);
                adjacency[j].push(i);
                *edge_faces.entry((i.min(j), i.max(j))).or_insert(0) += 1;
            }
        }
        for list in adjacency.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        let mut boundary = vec![false; n];
        for (&(i, j), &count) in &edge_faces {
            if count == 1 {
                boundary[i] = true;
                boundary[j] = true;
            }
        }

        let isolated: Vec<bool> = mass.iter().map(|&a| a == 0.0).collect();
        let mut heat_triplets: Vec<(usize, usize, f64)> = stiff_triplets
            .iter()
            .map(|&(i, j, w)| (i, j, t * w))
            .collect();
        for v in 0..n {
            heat_triplets.push((v, v, if isolated[v] { 1.0 } else { mass[v] }));
            if isolated[v] {
                stiff_triplets.push((v, v, 1.0));
            }
        }

        Ok(HeatGeodesics {
            mesh,
            heat_matrix: SparseMatrix::from_triplets(n, &heat_triplets),
            stiffness: SparseMatrix::from_triplets(n, &stiff_triplets),
            isolated,
            boundary,
            grad_basis,
            corner_cot,
            degenerate: normals.degenerate_flags().to_vec(),
            adjacency,
        })
    }

    /// Vertices connected to `source` through non-degenerate faces.
    fn reached_mask(&self, source: usize) -> Vec<bool> {
        let mut reached = vec![false; self.mesh.vertex_count()];
        let mut stack = vec![source];
        reached[source] = true;
        while let Some(v) = stack.pop() {
            for &w in &self.adjacency[v] {
                if !reached[w] {
                    reached[w] = true;
                    stack.push(w);
                }
            }
        }
        reached
    }

    pub fn distances_from(&self, source: usize) -> Result<VertexDistanceField> {
        let n = self.mesh.vertex_count();
        assert!(source < n, "source vertex {source} out of range");
        let reached = self.reached_mask(source);
        let max_iters = 5 * n.max(4);

        // stage 1: one implicit heat step from a unit source. On open
        // meshes the natural Neumann condition compresses distances along
        // the boundary and an absorbing Dirichlet condition stretches
        // them; averaging the two solutions cancels the leading error.
        // A boundary source keeps its one-ring unpinned so the Dirichlet
        // condition cannot swallow the heat impulse itself.
        let mut rhs = vec![0.0; n];
        rhs[source] = 1.0;
        let mut u = solve_cg(&self.heat_matrix, &rhs, HEAT_CG_TOL, max_iters)?;
        if self.boundary.iter().any(|&b| b) {
            let mut dirichlet = self.boundary.clone();
            dirichlet[source] = false;
            if self.boundary[source] {
                for &w in &self.adjacency[source] {
                    dirichlet[w] = false;
                }
            }
            let op = PinnedOp::new(&self.heat_matrix, &dirichlet);
            let mut rhs_d = rhs.clone();
            for (v, &pin) in dirichlet.iter().enumerate() {
                if pin {
                    rhs_d[v] = 0.0;
                }
            }
            let u_d = solve_cg(&op, &rhs_d, HEAT_CG_TOL, max_iters)?;
            for (a, b) in u.iter_mut().zip(&u_d) {
                *a = 0.5 * (*a + b);
            }
        }

        // stage 2: normalized negative gradient per face
        let mut field = vec![Vec3::zeros(); self.mesh.face_count()];
        for (fid, face) in self.mesh.faces().iter().enumerate() {
            if self.degenerate[fid] {
                continue;
            }
            let mut g = Vec3::zeros();
            for c in 0..3 {
                g += u[face[c]] * self.grad_basis[fid][c];
            }
            let norm = g.norm();
            if norm > 0.0 {
                field[fid] = -g / norm;
            }
        }

        // stage 3: integrated divergence and the pinned Poisson solve
        let mut div = vec![0.0f64; n];
        for (fid, face) in self.mesh.faces().iter().enumerate() {
            if self.degenerate[fid] {
                continue;
            }
            let p = self.mesh.face_vertices(fid);
            let x = field[fid];
            for c in 0..3 {
                let (i, j, k) = (c, (c + 1) % 3, (c + 2) % 3);
                let e1 = p[j] - p[i];
                let e2 = p[k] - p[i];
                div[face[i]] += 0.5
                    * (self.corner_cot[fid][k] * e1.dot(&x)
                        + self.corner_cot[fid][j] * e2.dot(&x));
            }
        }

        let pinned: Vec<bool> = (0..n)
            .map(|v| v == source || self.isolated[v] || !reached[v])
            .collect();
        let mut b: Vec<f64> = div.iter().map(|d| -d).collect();
        for (v, &pin) in pinned.iter().enumerate() {
            if pin {
                b[v] = 0.0;
            }
        }
        let op = PinnedOp::new(&self.stiffness, &pinned);
        let phi = solve_cg(&op, &b, HEAT_CG_TOL, max_iters)?;

        let distances = (0..n)
            .map(|v| if reached[v] { phi[v].max(0.0) } else { f64::INFINITY })
            .collect();
        Ok(VertexDistanceField { source, distances })
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    vertex: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we want the smallest distance
        other
            .dist
            .partial_cmp(&self.dist)
            .expect("distances are never NaN")
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path distances along mesh edges with Euclidean weights. An
/// upper bound on the true surface geodesic.
pub fn dijkstra_geodesic(mesh: &TriMesh, source: usize) -> VertexDistanceField {
    let n = mesh.vertex_count();
    assert!(source < n, "source vertex {source} out of range");
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for face in mesh.faces() {
        for c in 0..3 {
            let (i, j) = (face[c], face[(c + 1) % 3]);
            let w = (mesh.vertices()[i] - mesh.vertices()[j]).norm();
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
    }

    let mut dist = vec![f64::INFINITY; n];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry { dist: 0.0, vertex: source });
    while let Some(HeapEntry { dist: d, vertex: v }) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(w, len) in &adjacency[v] {
            let cand = d + len;
            if cand < dist[w] {
                dist[w] = cand;
                heap.push(HeapEntry { dist: cand, vertex: w });
            }
        }
    }
    VertexDistanceField { source, distances: dist }
}

/// Face-to-face distances by the nine-distance rule: the minimum over all
/// (seed vertex, target vertex) pairs of the vertex distance fields. The
/// three fields must be sourced at the seed face's vertices.
pub fn face_to_face_distance(
    mesh: &TriMesh,
    seed_face: usize,
    fields: &[VertexDistanceField; 3],
) -> FaceField<f64> {
    let seed = mesh.faces()[seed_face];
    let mut sources: Vec<usize> = fields.iter().map(|f| f.source).collect();
    sources.sort_unstable();
    let mut expect = seed.to_vec();
    expect.sort_unstable();
    assert_eq!(sources, expect, "fields must be sourced at the seed face's vertices");

    FaceField::from_fn(mesh, |fid| {
        let mut best = f64::INFINITY;
        for field in fields {
            for &w in &mesh.faces()[fid] {
                let d = field.distance(w);
                if d < best {
                    best = d;
                }
            }
        }
        best
    })
}

/// Debug dump: one `vertex,distance` row per vertex.
pub fn write_distance_csv(field: &VertexDistanceField, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    writeln!(w, "vertex,distance")?;
    for (v, d) in field.distances.iter().enumerate() {
        writeln!(w, "{v},{d}")?;
    }
    Ok(())
}

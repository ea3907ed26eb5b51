//! Patch extraction: anisotropic seed sampling, geodesic patch growth,
//! per-face K-nearest neighbor indices, ground-truth pairing, and rotation /
//! jitter augmentation. A patch is the network's unit of work: N faces sorted
//! by geodesic distance from a seed, their unit normals, and an N x K index
//! matrix of intra-patch neighbors.

use crate::engine::{Real, Tensor};
use crate::geodesic::{
    dijkstra_geodesic, face_to_face_distance, GeodesicBackend, HeatGeodesics, VertexDistanceField,
};
use crate::mesh::{face_adjacency, face_centroids, face_normals, FaceField, FaceNormals, TriMesh, Vec3};
use crate::net::NeighborTable;
use crate::{Error, Result};
use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::{BinaryHeap, HashMap};

/// One training or inference sample. Rows are patch-local: row r everywhere
/// refers to face `face_ids[r]`. Normals are stored in 32-bit floats, the
/// dataset file's precision, so a written and re-read sample is bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub seed_face: usize,
    /// Patch faces sorted by non-decreasing geodesic distance; seed first.
    pub face_ids: Vec<usize>,
    /// Unit facet normals of the (noisy) mesh, one row per face.
    pub normals: Vec<[f32; 3]>,
    /// K nearest intra-patch faces per row; never contains the row itself.
    pub neighbor_index: NeighborTable,
    /// Ground-truth normals, row-aligned with `normals`; absent at inference.
    pub gt_normals: Option<Vec<[f32; 3]>>,
}

impl PatchSample {
    pub fn n(&self) -> usize {
        self.face_ids.len()
    }

    pub fn k(&self) -> usize {
        self.neighbor_index.k()
    }

    pub fn normals_tensor<R: Real>(&self) -> Tensor<R> {
        rows_to_tensor(&self.normals)
    }

    pub fn gt_tensor<R: Real>(&self) -> Option<Tensor<R>> {
        self.gt_normals.as_ref().map(|g| rows_to_tensor(g))
    }

    /// Structural invariants: seed-first distinct ids, unit rows, index
    /// bounds and self-exclusion, aligned ground truth.
    pub fn validate(&self) -> Result<()> {
        let n = self.face_ids.len();
        if n == 0 {
            return Err(Error::DataFormat("patch has no faces".into()));
        }
        if self.face_ids[0] != self.seed_face {
            return Err(Error::DataFormat(format!(
                "patch row 0 is face {}, expected the seed {}",
                self.face_ids[0], self.seed_face
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.face_ids.iter().all(|f| seen.insert(*f)) {
            return Err(Error::DataFormat("patch face ids repeat".into()));
        }
        if self.normals.len() != n {
            return Err(Error::DataFormat(format!(
                "{} normal rows for {} faces",
                self.normals.len(),
                n
            )));
        }
        let unit = |rows: &[[f32; 3]], what: &str| -> Result<()> {
            for (r, row) in rows.iter().enumerate() {
                let norm = (row[0] as f64).hypot(row[1] as f64).hypot(row[2] as f64);
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::DataFormat(format!(
                        "{what} row {r} has norm {norm}"
                    )));
                }
            }
            Ok(())
        };
        unit(&self.normals, "normals")?;
        if let Some(gt) = &self.gt_normals {
            if gt.len() != n {
                return Err(Error::DataFormat(format!(
                    "{} ground-truth rows for {} faces",
                    gt.len(),
                    n
                )));
            }
            unit(gt, "ground-truth normals")?;
        }
        if self.neighbor_index.n() != n {
            return Err(Error::DataFormat(format!(
                "neighbor index covers {} rows, patch has {n}",
                self.neighbor_index.n()
            )));
        }
        for r in 0..n {
            if self.neighbor_index.row(r).contains(&r) {
                return Err(Error::DataFormat(format!(
                    "neighbor index row {r} contains itself"
                )));
            }
        }
        Ok(())
    }
}

fn rows_to_tensor<R: Real>(rows: &[[f32; 3]]) -> Tensor<R> {
    let mut data = Vec::with_capacity(rows.len() * 3);
    for row in rows {
        data.extend(row.iter().map(|&v| R::from_f64(v as f64)));
    }
    Tensor::new(vec![rows.len(), 3], data).expect("rows are rectangular")
}

fn vec3_to_f32(v: Vec3) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

/// Draw `count` distinct seed faces, probability proportional to the face's
/// normal variance plus a small floor so flat regions stay reachable.
pub fn sample_seed_faces(
    mesh: &TriMesh,
    variance: &FaceField<f64>,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<usize>> {
    if variance.len() != mesh.face_count() {
        return Err(Error::Mismatch(format!(
            "variance field covers {} faces, mesh has {}",
            variance.len(),
            mesh.face_count()
        )));
    }
    if count > mesh.face_count() {
        return Err(Error::Config(format!(
            "cannot sample {count} seeds from {} faces",
            mesh.face_count()
        )));
    }
    let vmax = variance.iter().cloned().fold(0.0f64, f64::max);
    let floor = 1e-6 * if vmax > 0.0 { vmax } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let picked = rand::seq::index::sample_weighted(
        &mut rng,
        mesh.face_count(),
        |f| variance.as_slice()[f] + floor,
        count,
    )
    .map_err(|e| Error::Numerical(format!("weighted sampling failed: {e}")))?;
    Ok(picked.into_vec())
}

/// Per-mesh state for growing many patches: the heat solver is factored once
/// and shared across seeds (it is read-only per solve).
pub struct PatchGrower<'m> {
    mesh: &'m TriMesh,
    backend: GeodesicBackend,
    heat: Option<HeatGeodesics<'m>>,
}

impl<'m> PatchGrower<'m> {
    pub fn new(mesh: &'m TriMesh, backend: GeodesicBackend) -> Result<Self> {
        let heat = match backend {
            GeodesicBackend::Heat { time_scale } => Some(HeatGeodesics::new(mesh, time_scale)?),
            GeodesicBackend::Dijkstra => None,
        };
        Ok(PatchGrower {
            mesh,
            backend,
            heat,
        })
    }

    fn vertex_field(&self, source: usize) -> Result<VertexDistanceField> {
        match (&self.heat, self.backend) {
            (Some(h), _) => h.distances_from(source),
            (None, _) => Ok(dijkstra_geodesic(self.mesh, source)),
        }
    }

    /// Distances from the seed face to every face (nine-distance rule).
    pub fn face_distances(&self, seed_face: usize) -> Result<FaceField<f64>> {
        let [a, b, c] = self.mesh.faces()[seed_face];
        let fields = [
            self.vertex_field(a)?,
            self.vertex_field(b)?,
            self.vertex_field(c)?,
        ];
        Ok(face_to_face_distance(self.mesh, seed_face, &fields))
    }

    /// The seed plus its n-1 geodesically nearest faces, distance-sorted.
    /// A component smaller than n yields all its faces.
    pub fn grow(&self, seed_face: usize, n: usize) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        if seed_face >= self.mesh.face_count() {
            return Err(Error::Mismatch(format!(
                "seed face {seed_face} out of range",
            )));
        }
        if n == 1 {
            return Ok(vec![seed_face]);
        }
        let dist = self.face_distances(seed_face)?;
        let mut order: Vec<(f64, usize)> = dist
            .iter()
            .enumerate()
            .filter(|&(fid, d)| fid != seed_face && d.is_finite())
            .map(|(fid, &d)| (d, fid))
            .collect();
        order.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut ids = Vec::with_capacity(n.min(order.len() + 1));
        ids.push(seed_face);
        ids.extend(order.iter().take(n - 1).map(|&(_, fid)| fid));
        Ok(ids)
    }
}

/// One-shot patch growth. For many seeds, build a [`PatchGrower`] instead.
pub fn grow_patch(
    mesh: &TriMesh,
    seed_face: usize,
    n: usize,
    backend: GeodesicBackend,
) -> Result<Vec<usize>> {
    PatchGrower::new(mesh, backend)?.grow(seed_face, n)
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    row: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Reverse on distance: BinaryHeap is a max-heap.
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.row.cmp(&self.row))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// K nearest intra-patch faces per row, by shortest path in the patch's dual
/// graph with centroid-distance edge weights. Rows the dual graph cannot
/// reach sort last (by row index); rows short of K repeat their last valid
/// neighbor, so the matrix stays rectangular and never contains the row
/// itself.
pub fn build_neighbor_index(mesh: &TriMesh, face_ids: &[usize], k: usize) -> Result<NeighborTable> {
    let n = face_ids.len();
    if n < 2 {
        return Err(Error::Mismatch(
            "a neighbor index needs at least two faces".into(),
        ));
    }
    if k == 0 {
        return Err(Error::Config("neighbor count must be positive".into()));
    }
    let mut row_of: HashMap<usize, usize> = HashMap::with_capacity(n);
    for (r, &fid) in face_ids.iter().enumerate() {
        if fid >= mesh.face_count() {
            return Err(Error::Mismatch(format!("face {fid} out of range")));
        }
        if row_of.insert(fid, r).is_some() {
            return Err(Error::Mismatch(format!("face {fid} appears twice")));
        }
    }
    let adjacency = face_adjacency(mesh);
    let centroids = face_centroids(mesh);
    let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (r, &fid) in face_ids.iter().enumerate() {
        for &nb in &adjacency[fid] {
            if let Some(&s) = row_of.get(&nb) {
                let w = (centroids.as_slice()[fid] - centroids.as_slice()[nb]).norm();
                edges[r].push((s, w));
            }
        }
    }

    let mut idx = Vec::with_capacity(n * k);
    let mut dist = vec![f64::INFINITY; n];
    for r in 0..n {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        dist[r] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry { dist: 0.0, row: r });
        while let Some(HeapEntry { dist: d, row }) = heap.pop() {
            if d > dist[row] {
                continue;
            }
            for &(next, w) in &edges[row] {
                let cand = d + w;
                if cand < dist[next] {
                    dist[next] = cand;
                    heap.push(HeapEntry {
                        dist: cand,
                        row: next,
                    });
                }
            }
        }
        let mut order: Vec<usize> = (0..n).filter(|&s| s != r).collect();
        order.sort_unstable_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        let take = k.min(order.len());
        idx.extend_from_slice(&order[..take]);
        for _ in take..k {
            idx.push(order[take - 1]);
        }
    }
    NeighborTable::new(n, k, idx)
}

/// Patch extraction against an optional ground-truth mesh with identical
/// connectivity. Normals come from the noisy mesh; ground-truth rows use the
/// same face ids, which keeps every loss row aligned by construction.
pub struct PatchExtractor<'a> {
    noisy: &'a TriMesh,
    grower: PatchGrower<'a>,
    noisy_normals: FaceNormals,
    gt_normals: Option<FaceNormals>,
}

impl<'a> PatchExtractor<'a> {
    pub fn new(
        noisy: &'a TriMesh,
        gt: Option<&'a TriMesh>,
        backend: GeodesicBackend,
    ) -> Result<Self> {
        if let Some(gt) = gt {
            if !noisy.same_connectivity(gt) {
                return Err(Error::Mismatch(
                    "noisy and ground-truth meshes differ in connectivity".into(),
                ));
            }
        }
        Ok(PatchExtractor {
            noisy,
            grower: PatchGrower::new(noisy, backend)?,
            noisy_normals: face_normals(noisy),
            gt_normals: gt.map(face_normals),
        })
    }

    pub fn extract(&self, seed_face: usize, n: usize, k: usize) -> Result<PatchSample> {
        let face_ids = self.grower.grow(seed_face, n)?;
        if face_ids.len() < 2 {
            return Err(Error::Mismatch(format!(
                "patch at seed {seed_face} has {} faces; need at least 2",
                face_ids.len()
            )));
        }
        let neighbor_index = build_neighbor_index(self.noisy, &face_ids, k)?;
        let normals: Vec<[f32; 3]> = face_ids
            .iter()
            .map(|&f| vec3_to_f32(self.noisy_normals.normal(f)))
            .collect();
        let gt_normals = self.gt_normals.as_ref().map(|gn| {
            face_ids
                .iter()
                .map(|&f| vec3_to_f32(gn.normal(f)))
                .collect()
        });
        Ok(PatchSample {
            seed_face,
            face_ids,
            normals,
            neighbor_index,
            gt_normals,
        })
    }
}

/// Grow one training pair: patch on the noisy mesh, ground truth row-aligned.
pub fn extract_patch_pair(
    noisy: &TriMesh,
    gt: &TriMesh,
    seed_face: usize,
    n: usize,
    k: usize,
    backend: GeodesicBackend,
) -> Result<PatchSample> {
    PatchExtractor::new(noisy, Some(gt), backend)?.extract(seed_face, n, k)
}

/// Rotation + jitter augmentation with an explicit rotation and RNG; the
/// public entry point draws both from a seed.
pub fn augment_patch_with(
    sample: &PatchSample,
    rotation: &UnitQuaternion<f64>,
    jitter_sigma: f64,
    rng: &mut impl Rng,
) -> PatchSample {
    let rotate = |rows: &[[f32; 3]]| -> Vec<[f32; 3]> {
        rows.iter()
            .map(|r| {
                let v = Vec3::new(r[0] as f64, r[1] as f64, r[2] as f64);
                vec3_to_f32(rotation * v)
            })
            .collect()
    };
    let mut normals = rotate(&sample.normals);
    let gt_normals = sample.gt_normals.as_ref().map(|g| rotate(g));
    if jitter_sigma > 0.0 {
        let gauss = Normal::new(0.0, jitter_sigma).expect("positive sigma");
        for row in &mut normals {
            let mut v = Vec3::new(
                row[0] as f64 + gauss.sample(rng),
                row[1] as f64 + gauss.sample(rng),
                row[2] as f64 + gauss.sample(rng),
            );
            let norm = v.norm();
            if norm > 1e-12 {
                v /= norm;
            }
            *row = vec3_to_f32(v);
        }
    }
    PatchSample {
        seed_face: sample.seed_face,
        face_ids: sample.face_ids.clone(),
        normals,
        neighbor_index: sample.neighbor_index.clone(),
        gt_normals,
    }
}

/// Augment one sample: a uniformly random rotation applied to both normal
/// sets, then Gaussian jitter on the noisy normals only (renormalized).
/// The neighbor index is untouched; rotation cannot change it and jitter
/// must not (the patch geometry did not move).
pub fn augment_patch(sample: &PatchSample, rng_seed: u64, jitter_sigma: f64) -> PatchSample {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let rotation = random_rotation(&mut rng);
    augment_patch_with(sample, &rotation, jitter_sigma, &mut rng)
}

/// Uniform rotation: a unit quaternion from four iid standard normals.
pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let gauss = Normal::new(0.0, 1.0).expect("unit sigma");
    loop {
        let q = Quaternion::new(
            gauss.sample(rng),
            gauss.sample(rng),
            gauss.sample(rng),
            gauss.sample(rng),
        );
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

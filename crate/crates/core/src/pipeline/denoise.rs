//! Full-mesh inference: cover the mesh with patches, run the network on
//! each, integrate the per-patch predictions into one normal per face, and
//! move vertices to agree with those normals.

use crate::engine::{Graph, Tensor};
use crate::geodesic::GeodesicBackend;
use crate::mesh::{
    face_normals, one_ring_normal_variance, vertex_face_incidence, FaceField, FaceNormals,
    TriMesh, Vec3,
};
use crate::net::{forward, ModelParams};
use crate::patch::{build_neighbor_index, PatchGrower};
use crate::{Error, Result};
use rayon::prelude::*;
use std::path::Path;

/// One patch of a coverage plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoveragePatch {
    pub seed_face: usize,
    pub face_ids: Vec<usize>,
}

/// Patches whose union is every face of the mesh at least once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoveragePlan {
    pub patches: Vec<CoveragePatch>,
}

impl CoveragePlan {
    pub fn covers_all(&self, face_count: usize) -> bool {
        let mut seen = vec![false; face_count];
        for p in &self.patches {
            for &f in &p.face_ids {
                seen[f] = true;
            }
        }
        seen.iter().all(|&b| b)
    }
}

/// Greedy coverage: repeatedly seed at the uncovered face with the highest
/// normal variance (ties to the smaller id) and grow an n-face patch, until
/// no face is uncovered. Deterministic, unlike training's randomized seeds:
/// inference output must be reproducible.
pub fn plan_coverage(
    mesh: &TriMesh,
    n: usize,
    variance: &FaceField<f64>,
    backend: GeodesicBackend,
) -> Result<CoveragePlan> {
    if variance.len() != mesh.face_count() {
        return Err(Error::Mismatch(format!(
            "variance field covers {} faces, mesh has {}",
            variance.len(),
            mesh.face_count()
        )));
    }
    if n == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    let grower = PatchGrower::new(mesh, backend)?;
    let mut covered = vec![false; mesh.face_count()];
    let mut remaining = mesh.face_count();
    let mut patches = Vec::new();
    while remaining > 0 {
        let seed = (0..mesh.face_count())
            .filter(|&f| !covered[f])
            .max_by(|&a, &b| {
                variance.as_slice()[a]
                    .total_cmp(&variance.as_slice()[b])
                    .then(b.cmp(&a))
            })
            .expect("remaining > 0");
        let face_ids = grower.grow(seed, n)?;
        for &f in &face_ids {
            if !covered[f] {
                covered[f] = true;
                remaining -= 1;
            }
        }
        patches.push(CoveragePatch {
            seed_face: seed,
            face_ids,
        });
    }
    Ok(CoveragePlan { patches })
}

/// The network's output on one coverage patch, row-aligned with `face_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPrediction {
    pub face_ids: Vec<usize>,
    pub normals: Vec<[f32; 3]>,
}

/// Per face: the normalized mean of all covering patches' predictions.
/// Faces whose predictions cancel out (mean norm below 1e-6), and faces no
/// patch covers, keep their fallback normal.
pub fn integrate_normals(
    mesh: &TriMesh,
    predictions: &[PatchPrediction],
    fallback: &FaceNormals,
) -> Result<FaceField<Vec3>> {
    let f = mesh.face_count();
    let mut sum = vec![Vec3::zeros(); f];
    let mut count = vec![0u32; f];
    for (pi, p) in predictions.iter().enumerate() {
        if p.face_ids.len() != p.normals.len() {
            return Err(Error::Mismatch(format!(
                "prediction {pi}: {} face ids, {} normal rows",
                p.face_ids.len(),
                p.normals.len()
            )));
        }
        for (&fid, row) in p.face_ids.iter().zip(&p.normals) {
            if fid >= f {
                return Err(Error::Mismatch(format!(
                    "prediction {pi} names face {fid}, mesh has {f}"
                )));
            }
            sum[fid] += Vec3::new(row[0] as f64, row[1] as f64, row[2] as f64);
            count[fid] += 1;
        }
    }
    let data = (0..f)
        .map(|fid| {
            if count[fid] == 0 {
                return fallback.normal(fid);
            }
            let mean = sum[fid] / count[fid] as f64;
            let norm = mean.norm();
            if norm <= 1e-6 {
                fallback.normal(fid)
            } else {
                mean / norm
            }
        })
        .collect();
    FaceField::new(mesh, data)
}

/// Jacobi-style vertex update toward the target facet normals: each sweep
/// recomputes centroids from the current positions, then moves every vertex
/// by the mean of its incident faces' normal-projection residuals.
/// Connectivity is untouched.
pub fn vertex_update(
    mesh: &TriMesh,
    target_normals: &FaceField<Vec3>,
    iterations: usize,
) -> Result<TriMesh> {
    if target_normals.len() != mesh.face_count() {
        return Err(Error::Mismatch(format!(
            "{} target normals for {} faces",
            target_normals.len(),
            mesh.face_count()
        )));
    }
    for (fid, n) in target_normals.iter().enumerate() {
        if (n.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "target normal {fid} has norm {}, expected unit length",
                n.norm()
            )));
        }
    }
    let incidence = vertex_face_incidence(mesh);
    let mut pos = mesh.vertices().to_vec();
    for _ in 0..iterations {
        let centroids: Vec<Vec3> = mesh
            .faces()
            .iter()
            .map(|f| (pos[f[0]] + pos[f[1]] + pos[f[2]]) / 3.0)
            .collect();
        pos = pos
            .par_iter()
            .enumerate()
            .map(|(v, &x)| {
                let inc = &incidence[v];
                if inc.is_empty() {
                    return x;
                }
                let mut delta = Vec3::zeros();
                for &fid in inc {
                    let n = target_normals.as_slice()[fid];
                    delta += n * n.dot(&(centroids[fid] - x));
                }
                x + delta / inc.len() as f64
            })
            .collect();
    }
    mesh.with_vertices(pos)
}

/// Inference knobs. The patch size is clamped to the mesh's face count, so
/// the default suits small meshes as well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseOptions {
    /// Vertex-update sweeps after normal integration.
    pub iterations: usize,
    /// Faces per coverage patch.
    pub patch_size: usize,
    pub backend: GeodesicBackend,
}

impl Default for DenoiseOptions {
    fn default() -> Self {
        DenoiseOptions {
            iterations: 20,
            patch_size: 256,
            backend: GeodesicBackend::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenoiseResult {
    pub mesh: TriMesh,
    /// The integrated (unit) target normals the vertex update chased.
    pub normals: FaceField<Vec3>,
}

/// Denoise a whole mesh with a trained model: coverage patches, per-patch
/// network forward passes (parallel; parameters are shared read-only),
/// deterministic mean integration, then the vertex update.
pub fn denoise_mesh(
    mesh: &TriMesh,
    params: &ModelParams<f32>,
    options: &DenoiseOptions,
) -> Result<DenoiseResult> {
    if mesh.face_count() < 2 {
        return Err(Error::Mismatch(
            "denoising needs a mesh with at least two faces".into(),
        ));
    }
    params.config.validate()?;
    let n = options.patch_size.clamp(2, mesh.face_count());
    let normals = face_normals(mesh);
    let variance = one_ring_normal_variance(mesh, &normals);
    let plan = plan_coverage(mesh, n, &variance, options.backend)?;
    let k = params.config.k3;
    let predictions: Vec<PatchPrediction> = plan
        .patches
        .par_iter()
        .map(|patch| {
            let rows: Vec<[f32; 3]> = patch
                .face_ids
                .iter()
                .map(|&fid| {
                    let v = normals.normal(fid);
                    [v.x as f32, v.y as f32, v.z as f32]
                })
                .collect();
            // An undersized component cannot feed the network; its faces
            // keep their own normals.
            if patch.face_ids.len() < 2 {
                return Ok(PatchPrediction {
                    face_ids: patch.face_ids.clone(),
                    normals: rows,
                });
            }
            let table = build_neighbor_index(mesh, &patch.face_ids, k)?;
            let mut g = Graph::<f32>::new();
            let bp = params.bind(&mut g);
            let flat: Vec<f32> = rows.iter().flatten().copied().collect();
            let x = g.input(Tensor::new(vec![rows.len(), 3], flat)?);
            let out = forward(&mut g, x, &table, &bp, &params.config)?;
            let pred = g.value(out.final_normals);
            let data = pred.data();
            let normals = (0..rows.len())
                .map(|r| [data[3 * r], data[3 * r + 1], data[3 * r + 2]])
                .collect();
            Ok(PatchPrediction {
                face_ids: patch.face_ids.clone(),
                normals,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let integrated = integrate_normals(mesh, &predictions, &normals)?;
    let out = vertex_update(mesh, &integrated, options.iterations)?;
    Ok(DenoiseResult {
        mesh: out,
        normals: integrated,
    })
}

pub fn denoise_mesh_from_checkpoint(
    mesh: &TriMesh,
    checkpoint: impl AsRef<Path>,
    options: &DenoiseOptions,
) -> Result<DenoiseResult> {
    let params = ModelParams::<f32>::load(checkpoint)?;
    denoise_mesh(mesh, &params, options)
}

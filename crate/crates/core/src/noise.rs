//! Synthetic noise models for building (noisy, clean) training pairs.
//!
//! All magnitudes are multiples of the clean mesh's average edge length, so
//! a given `level` means the same thing across meshes of different scale.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mesh::{average_edge_length, vertex_normals, TriMesh};
use crate::{Error, Result};

/// Noise family. Gaussian comes in two direction modes; impulsive touches
/// only a random subset of vertices; uniform is per-coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    GaussianNormal,
    GaussianIso,
    Impulsive,
    Uniform,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NoiseKind::GaussianNormal => "gaussian-normal",
            NoiseKind::GaussianIso => "gaussian-iso",
            NoiseKind::Impulsive => "impulsive",
            NoiseKind::Uniform => "uniform",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-normal" => Ok(NoiseKind::GaussianNormal),
            "gaussian-iso" => Ok(NoiseKind::GaussianIso),
            "impulsive" => Ok(NoiseKind::Impulsive),
            "uniform" => Ok(NoiseKind::Uniform),
            other => Err(Error::Config(format!(
                "unknown noise kind {other:?}; expected gaussian-normal, \
                 gaussian-iso, impulsive, or uniform"
            ))),
        }
    }
}

/// Full description of one noise draw; serializable so a noisy mesh can be
/// regenerated bit-identically from its sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Standard deviation (or uniform bound) as a multiple of l̄ₑ.
    pub level: f64,
    /// Fraction of vertices displaced; only read for impulsive noise.
    #[serde(default = "default_impulse_fraction")]
    pub impulse_fraction: f64,
    pub rng_seed: u64,
}

fn default_impulse_fraction() -> f64 {
    0.1
}

impl NoiseSpec {
    pub fn gaussian_normal(level: f64, rng_seed: u64) -> Self {
        Self { kind: NoiseKind::GaussianNormal, level, impulse_fraction: 0.1, rng_seed }
    }

    pub fn gaussian_iso(level: f64, rng_seed: u64) -> Self {
        Self { kind: NoiseKind::GaussianIso, level, impulse_fraction: 0.1, rng_seed }
    }

    pub fn impulsive(level: f64, impulse_fraction: f64, rng_seed: u64) -> Self {
        Self { kind: NoiseKind::Impulsive, level, impulse_fraction, rng_seed }
    }

    pub fn uniform(level: f64, rng_seed: u64) -> Self {
        Self { kind: NoiseKind::Uniform, level, impulse_fraction: 0.1, rng_seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.level.is_finite() || self.level < 0.0 {
            return Err(Error::Config(format!(
                "noise level must be finite and >= 0, got {}",
                self.level
            )));
        }
        if self.kind == NoiseKind::Impulsive
            && !(self.impulse_fraction > 0.0 && self.impulse_fraction <= 1.0)
        {
            return Err(Error::Config(format!(
                "impulse fraction must lie in (0, 1], got {}",
                self.impulse_fraction
            )));
        }
        Ok(())
    }
}

/// Applies `spec` to a clean mesh. Connectivity is untouched; only vertex
/// positions move. Deterministic for a fixed seed.
pub fn add_noise(mesh: &TriMesh, spec: &NoiseSpec) -> Result<TriMesh> {
    spec.validate()?;
    let sigma = spec.level * average_edge_length(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut vertices = mesh.vertices().to_vec();

    match spec.kind {
        NoiseKind::GaussianNormal => {
            let normals = vertex_normals(mesh);
            let gauss = Normal::new(0.0, sigma).expect("sigma >= 0");
            for (v, n) in vertices.iter_mut().zip(&normals) {
                *v += gauss.sample(&mut rng) * n;
            }
        }
        NoiseKind::GaussianIso => {
            // per-coordinate std sigma/sqrt(3) keeps E||delta||^2 = sigma^2
            let gauss = Normal::new(0.0, sigma / 3f64.sqrt()).expect("sigma >= 0");
            for v in vertices.iter_mut() {
                for c in 0..3 {
                    v[c] += gauss.sample(&mut rng);
                }
            }
        }
        NoiseKind::Impulsive => {
            let count = (spec.impulse_fraction * mesh.vertex_count() as f64).round() as usize;
            let mut chosen = sample(&mut rng, mesh.vertex_count(), count).into_vec();
            chosen.sort_unstable();
            let normals = vertex_normals(mesh);
            let gauss = Normal::new(0.0, sigma).expect("sigma >= 0");
            for vid in chosen {
                vertices[vid] += gauss.sample(&mut rng) * normals[vid];
            }
        }
        NoiseKind::Uniform => {
            let bound = Uniform::new_inclusive(-sigma, sigma)
                .map_err(|e| Error::Config(format!("uniform noise bounds: {e}")))?;
            for v in vertices.iter_mut() {
                for c in 0..3 {
                    v[c] += bound.sample(&mut rng);
                }
            }
        }
    }
    mesh.with_vertices(vertices)
}

/// One generated pair plus the spec that reproduces it.
#[derive(Debug, Clone)]
pub struct NoisyPair {
    /// Index into the clean-mesh list this pair was generated from.
    pub clean_index: usize,
    pub noisy: TriMesh,
    pub spec: NoiseSpec,
}

/// Generates one noisy mesh per (mesh, level, kind) triple. Each pair gets
/// its own seed derived from `rng_seed`, recorded in the returned spec so
/// any pair can be regenerated in isolation.
pub fn make_paired_set(
    cleans: &[TriMesh],
    levels: &[f64],
    kinds: &[NoiseKind],
    impulse_fraction: f64,
    rng_seed: u64,
) -> Result<Vec<NoisyPair>> {
    let mut jobs = Vec::new();
    for (mi, _) in cleans.iter().enumerate() {
        for &level in levels {
            for &kind in kinds {
                let pair_seed = derive_seed(rng_seed, jobs.len() as u64);
                jobs.push((
                    mi,
                    NoiseSpec { kind, level, impulse_fraction, rng_seed: pair_seed },
                ));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(mi, spec)| {
            Ok(NoisyPair { clean_index: mi, noisy: add_noise(&cleans[mi], &spec)?, spec })
        })
        .collect()
}

// splitmix64 step keeps per-pair streams decorrelated for adjacent indices
pub(crate) fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{grid_plane, icosphere};

    fn displacement_stats(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn zero_level_is_identity() {
        let mesh = icosphere(1.0, 2);
        for kind in [
            NoiseKind::GaussianNormal,
            NoiseKind::GaussianIso,
            NoiseKind::Impulsive,
            NoiseKind::Uniform,
        ] {
            let spec = NoiseSpec { kind, level: 0.0, impulse_fraction: 0.1, rng_seed: 7 };
            let noisy = add_noise(&mesh, &spec).unwrap();
            assert_eq!(noisy.vertices(), mesh.vertices());
            assert_eq!(noisy.faces(), mesh.faces());
        }
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let mesh = icosphere(1.0, 2);
        let spec = NoiseSpec::gaussian_normal(0.3, 42);
        let a = add_noise(&mesh, &spec).unwrap();
        let b = add_noise(&mesh, &spec).unwrap();
        assert_eq!(a.vertices(), b.vertices());
        let other = add_noise(&mesh, &NoiseSpec::gaussian_normal(0.3, 43)).unwrap();
        assert_ne!(a.vertices(), other.vertices());
    }

    #[test]
    fn gaussian_normal_statistics_on_large_plane() {
        // 100x100 cells -> 10201 vertices; plane normals are +z so the
        // signed displacement is just the z delta
        let mesh = grid_plane(100, 100, 0.05);
        let le = average_edge_length(&mesh).unwrap();
        let sigma = 0.2 * le;
        let noisy = add_noise(&mesh, &NoiseSpec::gaussian_normal(0.2, 11)).unwrap();
        let deltas: Vec<f64> = mesh
            .vertices()
            .iter()
            .zip(noisy.vertices())
            .map(|(a, b)| b.z - a.z)
            .collect();
        let (mean, std) = displacement_stats(&deltas);
        assert!((std - sigma).abs() / sigma < 0.03, "std {std} vs sigma {sigma}");
        assert!(mean.abs() < 0.05 * sigma, "mean {mean} vs sigma {sigma}");
    }

    #[test]
    fn gaussian_iso_matches_expected_norm() {
        let mesh = grid_plane(100, 100, 0.05);
        let sigma = 0.2 * average_edge_length(&mesh).unwrap();
        let noisy = add_noise(&mesh, &NoiseSpec::gaussian_iso(0.2, 19)).unwrap();
        let mean_sq: f64 = mesh
            .vertices()
            .iter()
            .zip(noisy.vertices())
            .map(|(a, b)| (b - a).norm_squared())
            .sum::<f64>()
            / mesh.vertex_count() as f64;
        assert!((mean_sq - sigma * sigma).abs() / (sigma * sigma) < 0.05);
    }

    #[test]
    fn uniform_bounds_and_spread() {
        let mesh = grid_plane(100, 100, 0.05);
        let sigma = 0.3 * average_edge_length(&mesh).unwrap();
        let noisy = add_noise(&mesh, &NoiseSpec::uniform(0.3, 23)).unwrap();
        let mut per_coord = Vec::new();
        for (a, b) in mesh.vertices().iter().zip(noisy.vertices()) {
            let d = b - a;
            for c in 0..3 {
                assert!(d[c].abs() <= sigma);
                per_coord.push(d[c]);
            }
        }
        // std of U(-s, s) is s/sqrt(3)
        let (_, std) = displacement_stats(&per_coord);
        let expected = sigma / 3f64.sqrt();
        assert!((std - expected).abs() / expected < 0.03);
    }

    #[test]
    fn impulsive_moves_exact_count() {
        let mesh = grid_plane(9, 9, 1.0); // 100 vertices
        let spec = NoiseSpec::impulsive(0.5, 0.1, 3);
        let noisy = add_noise(&mesh, &spec).unwrap();
        let moved = mesh
            .vertices()
            .iter()
            .zip(noisy.vertices())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(moved, 10);
    }

    #[test]
    fn paired_set_cardinality_and_regeneration() {
        let cleans = vec![icosphere(1.0, 1), grid_plane(4, 4, 1.0)];
        let pairs = make_paired_set(
            &cleans,
            &[0.1, 0.2, 0.3],
            &[NoiseKind::GaussianNormal],
            0.1,
            99,
        )
        .unwrap();
        assert_eq!(pairs.len(), 6);
        for pair in &pairs {
            // the recorded spec regenerates the pair bit-identically
            let again = add_noise(&cleans[pair.clean_index], &pair.spec).unwrap();
            assert_eq!(again.vertices(), pair.noisy.vertices());
        }
        let again = make_paired_set(
            &cleans,
            &[0.1, 0.2, 0.3],
            &[NoiseKind::GaussianNormal],
            0.1,
            99,
        )
        .unwrap();
        for (a, b) in pairs.iter().zip(&again) {
            assert_eq!(a.noisy.vertices(), b.noisy.vertices());
        }
    }

    #[test]
    fn zero_level_list_gives_clean_pairs() {
        let cleans = vec![icosphere(1.0, 1)];
        let pairs =
            make_paired_set(&cleans, &[0.0], &[NoiseKind::Uniform], 0.1, 5).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].noisy.vertices(), cleans[0].vertices());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mesh = icosphere(1.0, 1);
        assert!(add_noise(&mesh, &NoiseSpec::gaussian_normal(-1.0, 0)).is_err());
        assert!(add_noise(&mesh, &NoiseSpec::impulsive(0.1, 0.0, 0)).is_err());
        assert!(add_noise(&mesh, &NoiseSpec::impulsive(0.1, 1.5, 0)).is_err());
    }

    #[test]
    fn spec_roundtrips_through_toml() {
        let spec = NoiseSpec::impulsive(0.25, 0.2, 1234);
        let text = toml::to_string(&spec).unwrap();
        let back: NoiseSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}

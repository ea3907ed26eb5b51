//! Orchestration: dataset assembly, the training loop, full-mesh inference
//! with patch coverage, and the iterative vertex update.

mod denoise;
mod train;

pub use denoise::{
    denoise_mesh, denoise_mesh_from_checkpoint, integrate_normals, plan_coverage, vertex_update,
    CoveragePatch, CoveragePlan, DenoiseOptions, DenoiseResult, PatchPrediction,
};
pub use train::{train, train_on, TrainReport};

use crate::dataset::PatchDataset;
use crate::geodesic::GeodesicBackend;
use crate::mesh::{face_normals, one_ring_normal_variance, TriMesh};
use crate::net::ModelConfig;
use crate::noise::derive_seed;
use crate::patch::{sample_seed_faces, PatchExtractor};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Dataset-shape half of a preset: how patches are cropped for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetPlan {
    /// Patches cropped per training mesh (clamped to its face count).
    pub patches_per_mesh: usize,
    /// Faces per patch, N.
    pub patch_size: usize,
    /// Stored neighbors per face, K; must be at least the model's k3.
    pub neighbor_count: usize,
}

/// Named bundles of model scale, dataset shape, and schedule. The two
/// paper-scale presets assume hours of CPU time; desk fits in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPreset {
    PaperSynthetic,
    PaperReal,
    Desk,
}

impl TrainPreset {
    pub fn model(self) -> ModelConfig {
        match self {
            TrainPreset::PaperSynthetic => ModelConfig::paper_synthetic(),
            TrainPreset::PaperReal => ModelConfig::paper_real(),
            TrainPreset::Desk => ModelConfig::desk(),
        }
    }

    pub fn dataset_plan(self) -> DatasetPlan {
        match self {
            TrainPreset::PaperSynthetic => DatasetPlan {
                patches_per_mesh: 100,
                patch_size: 800,
                neighbor_count: 50,
            },
            TrainPreset::PaperReal => DatasetPlan {
                patches_per_mesh: 200,
                patch_size: 800,
                neighbor_count: 150,
            },
            TrainPreset::Desk => DatasetPlan {
                patches_per_mesh: 16,
                patch_size: 256,
                neighbor_count: 24,
            },
        }
    }

    /// A full training configuration; dataset and output paths left empty
    /// for the caller to fill in.
    pub fn config(self) -> TrainConfig {
        let desk = self == TrainPreset::Desk;
        TrainConfig {
            dataset: PathBuf::new(),
            out_dir: PathBuf::new(),
            model: self.model(),
            batch_size: if desk { 8 } else { 10 },
            learning_rate: 0.001,
            epochs: if desk { 200 } else { 400 },
            augment_rotation: true,
            jitter_sigma: 0.01,
            rng_seed: 0,
            checkpoint_every: 50,
        }
    }
}

impl std::str::FromStr for TrainPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-synthetic" => Ok(TrainPreset::PaperSynthetic),
            "paper-real" => Ok(TrainPreset::PaperReal),
            "desk" => Ok(TrainPreset::Desk),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; expected paper-synthetic, paper-real, or desk"
            ))),
        }
    }
}

impl std::fmt::Display for TrainPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainPreset::PaperSynthetic => "paper-synthetic",
            TrainPreset::PaperReal => "paper-real",
            TrainPreset::Desk => "desk",
        })
    }
}

/// Everything `train` needs. Serializable as TOML; unknown keys are errors
/// so config typos fail loudly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Patch dataset to train on.
    pub dataset: PathBuf,
    /// Directory receiving checkpoints and the loss curve.
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Apply a uniformly random rotation to each sample, every epoch.
    pub augment_rotation: bool,
    /// Gaussian jitter applied to noisy normals during augmentation; 0 turns
    /// it off.
    pub jitter_sigma: f64,
    pub rng_seed: u64,
    /// Save an intermediate checkpoint every this many epochs; 0 keeps only
    /// the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainPreset::PaperSynthetic.config()
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let cfg: TrainConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("bad training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "jitter sigma must be non-negative, got {}",
                self.jitter_sigma
            )));
        }
        Ok(())
    }
}

/// Crop a training dataset from (noisy, ground-truth) mesh pairs: seeds are
/// drawn proportionally to one-ring normal variance, patches grown
/// geodesically. Patches that cannot reach the full size (undersized
/// connected components) are dropped; the network trains on fixed N.
pub fn assemble_dataset(
    pairs: &[(TriMesh, TriMesh)],
    plan: DatasetPlan,
    backend: GeodesicBackend,
    rng_seed: u64,
    provenance: impl Into<String>,
) -> Result<PatchDataset> {
    if plan.patch_size < 2 {
        return Err(Error::Config("patch size must be at least 2".into()));
    }
    let mut samples = Vec::new();
    for (mi, (noisy, clean)) in pairs.iter().enumerate() {
        let normals = face_normals(noisy);
        let variance = one_ring_normal_variance(noisy, &normals);
        let count = plan.patches_per_mesh.min(noisy.face_count());
        let seeds = sample_seed_faces(noisy, &variance, count, derive_seed(rng_seed, mi as u64))?;
        let extractor = PatchExtractor::new(noisy, Some(clean), backend)?;
        let patches = seeds
            .par_iter()
            .map(|&s| extractor.extract(s, plan.patch_size, plan.neighbor_count))
            .collect::<Result<Vec<_>>>()?;
        samples.extend(patches.into_iter().filter(|p| p.n() == plan.patch_size));
    }
    if samples.is_empty() {
        return Err(Error::DataFormat(
            "no full-size patches could be cropped from the given meshes".into(),
        ));
    }
    PatchDataset::new(
        plan.patch_size,
        plan.neighbor_count,
        provenance,
        samples,
    )
}

//! Evaluation: the mean angular-difference metric, normalized cross-method
//! scores, per-face error-map export (PLY + CSV), and robustness sweeps.

use crate::io::save_ply_with_face_colors;
use crate::mesh::{face_normals, TriMesh};
use crate::net::ModelParams;
use crate::noise::{add_noise, NoiseKind, NoiseSpec};
use crate::pipeline::{denoise_mesh, DenoiseOptions};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// The angular-difference metric for one (ground truth, denoised) pair.
/// `per_face_degrees` has one entry per face, `NaN` marking faces that are
/// degenerate in either mesh; those are excluded from the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaRecord {
    pub mesh_id: String,
    pub method_id: String,
    pub noise_level: Option<f64>,
    /// Mean angular difference over non-degenerate faces, in degrees.
    pub theta_degrees: f64,
    pub per_face_degrees: Vec<f64>,
}

/// Per-face angle between corresponding facet normals, in degrees; the mean
/// skips degenerate faces. Labels start empty; callers tag records with
/// their own mesh/method bookkeeping.
pub fn mean_angular_difference(gt: &TriMesh, denoised: &TriMesh) -> Result<ThetaRecord> {
    if !gt.same_connectivity(denoised) {
        return Err(Error::Mismatch(
            "theta needs meshes with identical connectivity".into(),
        ));
    }
    let gn = face_normals(gt);
    let dn = face_normals(denoised);
    let mut per_face = Vec::with_capacity(gt.face_count());
    let mut sum = 0.0f64;
    let mut counted = 0usize;
    for fid in 0..gt.face_count() {
        if gn.is_degenerate(fid) || dn.is_degenerate(fid) {
            per_face.push(f64::NAN);
            continue;
        }
        // atan2 form, not acos(dot): identical normals give exactly 0 (the
        // self-cross-product is exact zero) and antiparallel ones exactly
        // 180, where acos(clamp(dot)) loses ~1e-7 degrees to rounding.
        let a = gn.normal(fid);
        let b = dn.normal(fid);
        let angle = a.cross(&b).norm().atan2(a.dot(&b)).to_degrees();
        per_face.push(angle);
        sum += angle;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Numerical(
            "every face is degenerate; theta undefined".into(),
        ));
    }
    Ok(ThetaRecord {
        mesh_id: String::new(),
        method_id: String::new(),
        noise_level: None,
        theta_degrees: sum / counted as f64,
        per_face_degrees: per_face,
    })
}

/// Methods x models matrix of mean angles and the normalized scores derived
/// from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub methods: Vec<String>,
    pub models: Vec<String>,
    /// theta_bar[method][model], degrees.
    pub theta_bar: Vec<Vec<f64>>,
    /// scores[method][model] in [0,1]; 1 is the best method for that model.
    pub scores: Vec<Vec<f64>>,
}

/// Per model (column): score = 1 - (theta - min)/(max - min), so the best
/// method scores 1 and the worst 0. A degenerate column (all methods equal)
/// scores 1 everywhere: no method is worse than another.
pub fn normalized_scores(
    methods: Vec<String>,
    models: Vec<String>,
    theta_bar: Vec<Vec<f64>>,
) -> Result<ScoreTable> {
    if theta_bar.len() != methods.len() {
        return Err(Error::Mismatch(format!(
            "{} rows of theta for {} methods",
            theta_bar.len(),
            methods.len()
        )));
    }
    for (mi, row) in theta_bar.iter().enumerate() {
        if row.len() != models.len() {
            return Err(Error::Mismatch(format!(
                "method {mi} has {} entries for {} models",
                row.len(),
                models.len()
            )));
        }
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite theta {bad} for method {mi}"
            )));
        }
    }
    let mut scores = vec![vec![0.0; models.len()]; methods.len()];
    for col in 0..models.len() {
        let column: Vec<f64> = theta_bar.iter().map(|row| row[col]).collect();
        let min = column.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (mi, &v) in column.iter().enumerate() {
            scores[mi][col] = if max > min { 1.0 - (v - min) / (max - min) } else { 1.0 };
        }
    }
    Ok(ScoreTable {
        methods,
        models,
        theta_bar,
        scores,
    })
}

/// 256-entry diverging blue-white-red ramp (piecewise-linear in sRGB through
/// the classic cool/warm endpoints), used for all error maps. Entry 0 is the
/// cool end (no error), entry 255 the warm end (clamp angle).
pub fn error_ramp() -> [[u8; 3]; 256] {
    const COOL: [f64; 3] = [59.0, 76.0, 192.0];
    const MID: [f64; 3] = [221.0, 221.0, 221.0];
    const WARM: [f64; 3] = [180.0, 4.0, 38.0];
    let mut ramp = [[0u8; 3]; 256];
    for (i, entry) in ramp.iter_mut().enumerate() {
        let t = i as f64 / 255.0;
        let (a, b, s) = if t < 0.5 {
            (COOL, MID, t * 2.0)
        } else {
            (MID, WARM, (t - 0.5) * 2.0)
        };
        for c in 0..3 {
            entry[c] = (a[c] + (b[c] - a[c]) * s).round() as u8;
        }
    }
    ramp
}

/// Faces that are degenerate in either mesh get this color instead of a ramp
/// entry.
pub const DEGENERATE_COLOR: [u8; 3] = [255, 0, 255];

/// Writes the denoised mesh as a PLY with per-face error colors (angle
/// mapped linearly onto [`error_ramp`] over [0, max_angle_degrees], clamped)
/// and, when asked, a CSV of the raw angles. Returns the underlying record.
pub fn export_error_map(
    gt: &TriMesh,
    denoised: &TriMesh,
    ply_path: impl AsRef<Path>,
    csv_path: Option<&Path>,
    max_angle_degrees: f64,
) -> Result<ThetaRecord> {
    if !(max_angle_degrees.is_finite() && max_angle_degrees > 0.0) {
        return Err(Error::Config(format!(
            "error-map clamp must be positive, got {max_angle_degrees}"
        )));
    }
    let record = mean_angular_difference(gt, denoised)?;
    let ramp = error_ramp();
    let colors: Vec<[u8; 3]> = record
        .per_face_degrees
        .iter()
        .map(|&a| {
            if a.is_nan() {
                DEGENERATE_COLOR
            } else {
                let t = (a / max_angle_degrees).clamp(0.0, 1.0);
                ramp[(t * 255.0).round() as usize]
            }
        })
        .collect();
    save_ply_with_face_colors(denoised, &colors, ply_path)?;
    if let Some(csv) = csv_path {
        let mut w = std::io::BufWriter::new(std::fs::File::create(csv)?);
        writeln!(w, "face,angle_degrees")?;
        for (fid, a) in record.per_face_degrees.iter().enumerate() {
            writeln!(w, "{fid},{a}")?;
        }
        w.flush()?;
    }
    Ok(record)
}

/// Which robustness axis a sweep walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepSuite {
    /// Same shape at several tessellation densities, fixed noise.
    Resolution,
    /// One mesh, increasing noise level.
    NoiseLevel,
    /// One mesh, different noise kinds at a fixed level.
    NoisePattern,
}

impl std::str::FromStr for SweepSuite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resolution" => Ok(SweepSuite::Resolution),
            "noise-level" => Ok(SweepSuite::NoiseLevel),
            "noise-pattern" => Ok(SweepSuite::NoisePattern),
            other => Err(Error::Config(format!(
                "unknown sweep suite {other:?}; expected resolution, noise-level, or noise-pattern"
            ))),
        }
    }
}

impl std::fmt::Display for SweepSuite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepSuite::Resolution => "resolution",
            SweepSuite::NoiseLevel => "noise-level",
            SweepSuite::NoisePattern => "noise-pattern",
        })
    }
}

/// Sweep description, loadable from TOML. One checkpoint denoises every
/// variant; nothing is retrained between rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub suite: SweepSuite,
    pub checkpoint: PathBuf,
    /// Clean input meshes. Resolution sweeps walk all of them; the other
    /// suites use the first.
    pub meshes: Vec<PathBuf>,
    /// Noise levels for noise-level sweeps.
    pub levels: Vec<f64>,
    /// Noise kinds for noise-pattern sweeps.
    pub kinds: Vec<String>,
    /// Fixed kind for resolution and noise-level sweeps.
    pub kind: String,
    /// Fixed level for resolution and noise-pattern sweeps.
    pub level: f64,
    pub impulse_fraction: f64,
    pub rng_seed: u64,
    pub iterations: usize,
    pub patch_size: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let opts = DenoiseOptions::default();
        SweepConfig {
            suite: SweepSuite::NoiseLevel,
            checkpoint: PathBuf::new(),
            meshes: Vec::new(),
            levels: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            kinds: vec![
                "gaussian-normal".into(),
                "gaussian-iso".into(),
                "impulsive".into(),
                "uniform".into(),
            ],
            kind: "gaussian-normal".into(),
            level: 0.2,
            impulse_fraction: 0.1,
            rng_seed: 0,
            iterations: opts.iterations,
            patch_size: opts.patch_size,
        }
    }
}

impl SweepConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("bad sweep config: {e}")))
    }
}

/// One sweep row: the swept variant, theta of the raw noisy input, and theta
/// after denoising.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: String,
    pub theta_noisy: f64,
    pub theta_denoised: f64,
}

/// Runs a sweep over pre-loaded clean meshes with pre-loaded parameters;
/// callers resolve paths. Rows come back in sweep order.
pub fn run_sweep(
    config: &SweepConfig,
    cleans: &[TriMesh],
    params: &ModelParams<f32>,
) -> Result<Vec<SweepRow>> {
    if cleans.is_empty() {
        return Err(Error::Config("sweep needs at least one input mesh".into()));
    }
    let options = DenoiseOptions {
        iterations: config.iterations,
        patch_size: config.patch_size,
        ..DenoiseOptions::default()
    };
    let fixed_kind: NoiseKind = config.kind.parse()?;
    let spec = |kind: NoiseKind, level: f64, idx: u64| NoiseSpec {
        kind,
        level,
        impulse_fraction: config.impulse_fraction,
        rng_seed: crate::noise::derive_seed(config.rng_seed, idx),
    };
    let mut jobs: Vec<(String, &TriMesh, NoiseSpec)> = Vec::new();
    match config.suite {
        SweepSuite::Resolution => {
            for (i, mesh) in cleans.iter().enumerate() {
                jobs.push((
                    format!("mesh{}:{}f", i, mesh.face_count()),
                    mesh,
                    spec(fixed_kind, config.level, i as u64),
                ));
            }
        }
        SweepSuite::NoiseLevel => {
            for (i, &level) in config.levels.iter().enumerate() {
                jobs.push((format!("level:{level}"), &cleans[0], spec(fixed_kind, level, i as u64)));
            }
        }
        SweepSuite::NoisePattern => {
            for (i, name) in config.kinds.iter().enumerate() {
                let kind: NoiseKind = name.parse()?;
                jobs.push((format!("kind:{kind}"), &cleans[0], spec(kind, config.level, i as u64)));
            }
        }
    }
    let mut rows = Vec::with_capacity(jobs.len());
    for (variant, clean, spec) in jobs {
        let noisy = add_noise(clean, &spec)?;
        let theta_noisy = mean_angular_difference(clean, &noisy)?.theta_degrees;
        let denoised = denoise_mesh(&noisy, params, &options)?;
        let theta_denoised = mean_angular_difference(clean, &denoised.mesh)?.theta_degrees;
        rows.push(SweepRow {
            variant,
            theta_noisy,
            theta_denoised,
        });
    }
    Ok(rows)
}

/// CSV with one row per sweep variant.
pub fn write_sweep_csv(path: impl AsRef<Path>, suite: SweepSuite, rows: &[SweepRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    writeln!(w, "suite,variant,theta_noisy,theta_denoised")?;
    for r in rows {
        writeln!(w, "{suite},{},{},{}", r.variant, r.theta_noisy, r.theta_denoised)?;
    }
    w.flush()?;
    Ok(())
}

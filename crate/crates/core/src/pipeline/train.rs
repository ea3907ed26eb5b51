//! The training loop: shuffled mini-batches, per-sample augmentation, data-
//! parallel gradient evaluation with a fixed-order reduction (bit-identical
//! across thread counts), Adam updates, a loss curve, and checkpoints.

use super::TrainConfig;
use crate::dataset::{read_dataset, PatchDataset};
use crate::engine::{adam_step, AdamState, Graph, Real, Tensor};
use crate::net::{forward, loss_deep, loss_residual, loss_total, ModelParams};
use crate::noise::derive_seed;
use crate::patch::{augment_patch_with, random_rotation, PatchSample};
use crate::{Error, Result};
use nalgebra::UnitQuaternion;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// The final checkpoint (`model.mdck` in the output directory).
    pub checkpoint: PathBuf,
    /// CSV of per-epoch mean training loss.
    pub loss_csv: PathBuf,
    pub epoch_losses: Vec<f64>,
    pub optimizer_steps: usize,
}

pub fn train(config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let dataset = read_dataset(&config.dataset)?;
    train_on(config, &dataset)
}

/// Train on an already-loaded dataset. Streams: the shuffle order, the
/// parameter init, and every augmentation draw all derive from
/// `config.rng_seed`, so a rerun reproduces the loss curve bit for bit.
pub fn train_on(config: &TrainConfig, dataset: &PatchDataset) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::DataFormat("training dataset is empty".into()));
    }
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.gt_normals.is_none() {
            return Err(Error::DataFormat(format!(
                "sample {i} has no ground truth; training needs paired patches"
            )));
        }
    }
    config
        .model
        .validate_against_table(dataset.neighbor_count)?;
    std::fs::create_dir_all(&config.out_dir)?;

    let mut params = ModelParams::<f32>::init(config.model.clone(), config.rng_seed)?;
    let mut adam = AdamState::with_hyperparameters(
        params.tensors(),
        config.learning_rate,
        0.9,
        0.999,
        1e-8,
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, u64::MAX));
    let augmenting = config.augment_rotation || config.jitter_sigma > 0.0;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let per_sample: Vec<(f64, Vec<Tensor<f32>>)> = batch
                .par_iter()
                .map(|&si| {
                    let sample = &dataset.samples[si];
                    let augmented;
                    let sample: &PatchSample = if augmenting {
                        let aug_seed = derive_seed(
                            derive_seed(config.rng_seed, 1 + epoch as u64),
                            si as u64,
                        );
                        let mut rng = ChaCha8Rng::seed_from_u64(aug_seed);
                        let rotation = if config.augment_rotation {
                            random_rotation(&mut rng)
                        } else {
                            UnitQuaternion::identity()
                        };
                        augmented =
                            augment_patch_with(sample, &rotation, config.jitter_sigma, &mut rng);
                        &augmented
                    } else {
                        sample
                    };
                    sample_gradient(&params, config, sample, scale)
                })
                .collect::<Result<Vec<_>>>()?;

            // Fixed-order reduction: rayon's collect preserves input order,
            // so the f32 sums below do not depend on thread scheduling.
            let mut grads: Vec<Tensor<f32>> = params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.dims().to_vec()))
                .collect();
            let mut batch_loss = 0.0f64;
            for (loss, sample_grads) in &per_sample {
                batch_loss += loss;
                for (acc, g) in grads.iter_mut().zip(sample_grads) {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {}, batch {bi}; aborting instead of clipping",
                    epoch + 1
                )));
            }
            loss_sum += batch_loss;
            adam_step(params.tensors_mut(), &grads, &mut adam)?;
            steps += 1;
        }
        epoch_losses.push(loss_sum / dataset.len() as f64);

        if config.checkpoint_every > 0
            && (epoch + 1) % config.checkpoint_every == 0
            && epoch + 1 < config.epochs
        {
            let path = config
                .out_dir
                .join(format!("checkpoint-{:04}.mdck", epoch + 1));
            params.save(&path)?;
        }
    }

    let checkpoint = config.out_dir.join("model.mdck");
    params.save(&checkpoint)?;
    let loss_csv = config.out_dir.join("loss.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&loss_csv)?);
    writeln!(w, "epoch,loss")?;
    for (e, l) in epoch_losses.iter().enumerate() {
        writeln!(w, "{},{}", e + 1, l)?;
    }
    w.flush()?;
    Ok(TrainReport {
        checkpoint,
        loss_csv,
        epoch_losses,
        optimizer_steps: steps,
    })
}

/// Loss and parameter gradients for one sample, scaled by the batch-mean
/// factor. Each call builds its own tape, so samples evaluate in parallel
/// against shared read-only parameters.
fn sample_gradient(
    params: &ModelParams<f32>,
    config: &TrainConfig,
    sample: &PatchSample,
    scale: f64,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut g = Graph::<f32>::new();
    let bp = params.bind(&mut g);
    let x = g.input(sample.normals_tensor::<f32>());
    let gt = g.input(sample.gt_tensor::<f32>().expect("checked by train_on"));
    let out = forward(&mut g, x, &sample.neighbor_index, &bp, &config.model)?;
    let deep = loss_deep(
        &mut g,
        out.final_normals,
        &out.intermediate_normals,
        gt,
        config.model.supervise_intermediate,
    )?;
    let resid = loss_residual(&mut g, &out.residuals)?;
    let total = loss_total(&mut g, deep, resid, config.model.alpha)?;
    let contribution = g.scale(total, scale);
    g.backward(contribution)?;
    let loss = g.value(total).item().to_f64();
    let grads = bp
        .vals
        .iter()
        .map(|&v| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(g.value(v).dims().to_vec()))
        })
        .collect();
    Ok((loss, grads))
}

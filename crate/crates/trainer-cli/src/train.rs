//! SGD-with-momentum training over a run configuration, with per-epoch
//! metrics records and checkpointing.
//!
//! Everything is derived from the run seed: parameter init uses per-tensor
//! streams, the per-epoch shuffle uses a stream derived from (seed, epoch),
//! and batches are processed sequentially with fixed-order reductions. Two
//! runs of the same configuration therefore produce byte-identical metrics
//! files and checkpoints, and a resumed run continues the exact trajectory
//! of an uninterrupted one.

use std::io::Write;
use std::path::{Path, PathBuf};

use fm_core::Scalar;
use nn_engine::Network;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_checkpoint, restore, save_checkpoint, snapshot};
use crate::config::{ConfigError, DataSpec, RunConfig};
use crate::dataset::{load_csv, load_idx, synth_dataset, DataError, Dataset};
use crate::error::CliError;
use crate::netdesc::{build_network, canonical_text, parse_net_file, NetDescription};
use crate::record::render_record;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
}

impl EpochRecord {
    pub fn render(&self) -> String {
        render_record(&[
            ("epoch", self.epoch.to_string()),
            ("train_loss", self.train_loss.to_string()),
            ("train_acc", self.train_acc.to_string()),
            ("eval_acc", self.eval_acc.to_string()),
        ])
    }
}

#[derive(Debug)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub param_count: usize,
    pub start_epoch: usize,
}

/// Deterministic forward-only pass: accuracy (argmax with ties broken toward
/// the lowest class index) and mean loss.
pub fn evaluate<S: Scalar>(
    net: &Network<S>,
    data: &Dataset<S>,
    batch_size: usize,
) -> Result<(f64, f64), CliError> {
    if data.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    let n = data.len();
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    let mut start = 0usize;
    while start < n {
        let end = (start + batch_size).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let batch = data.images.select_batch(&indices);
        let labels = &data.labels[start..end];
        let logits = net.forward(&batch)?;
        let (loss, _) = nn_engine::softmax_xent(&logits, labels)?;
        loss_sum += loss.to_f64() * (end - start) as f64;
        let classes = logits.channels();
        for (row, &label) in (0..logits.batch()).zip(labels) {
            let mut best_class = 0usize;
            let mut best = logits.get(row, 0, 0, 0);
            for c in 1..classes {
                let v = logits.get(row, c, 0, 0);
                if v > best {
                    best = v;
                    best_class = c;
                }
            }
            if best_class == label {
                correct += 1;
            }
        }
        start = end;
    }
    Ok((correct as f64 / n as f64, loss_sum / n as f64))
}

pub fn load_train_data<S: Scalar>(cfg: &RunConfig) -> Result<Dataset<S>, CliError> {
    Ok(match &cfg.data {
        DataSpec::Synth {
            seed,
            n,
            classes,
            height,
            width,
            channels,
        } => synth_dataset(*seed, *n, *classes, *height, *width, *channels)?,
        DataSpec::Idx { images, labels, .. } => load_idx(images, labels)?,
        DataSpec::Csv {
            path,
            height,
            width,
            channels,
            ..
        } => load_csv(path, *channels, *height, *width)?,
    })
}

pub fn load_eval_data<S: Scalar>(cfg: &RunConfig) -> Result<Option<Dataset<S>>, CliError> {
    Ok(match &cfg.data {
        DataSpec::Idx {
            eval_images: Some(images),
            eval_labels: Some(labels),
            ..
        } => Some(load_idx(images, labels)?),
        DataSpec::Csv {
            eval_path: Some(path),
            height,
            width,
            channels,
            ..
        } => Some(load_csv(path, *channels, *height, *width)?),
        _ => None,
    })
}

pub fn require_net_desc(cfg: &RunConfig) -> Result<NetDescription, CliError> {
    let path = cfg.net_path.as_ref().ok_or(ConfigError::MissingKey {
        key: "net.path".into(),
    })?;
    Ok(parse_net_file(path)?)
}

fn shuffle_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Trains per the configuration, optionally resuming from a checkpoint made
/// by an identical configuration (modulo the epoch target).
///
/// `progress` receives each epoch record as it is produced.
pub fn train<S: Scalar>(
    cfg: &RunConfig,
    resume: Option<&Path>,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainSummary, CliError> {
    let desc = require_net_desc(cfg)?;
    let net_text = canonical_text(&desc);
    let train_data: Dataset<S> = load_train_data(cfg)?;
    let eval_data: Option<Dataset<S>> = load_eval_data(cfg)?;

    let mut net: Network<S> = build_network(&desc, cfg.parametrization, cfg.grad_mode, cfg.seed)?;
    let infos = net.param_infos();
    let mut velocities: Vec<Vec<S>> = infos.iter().map(|p| vec![S::ZERO; p.len()]).collect();

    let mut start_epoch = 0usize;
    if let Some(ck_path) = resume {
        let ck = load_checkpoint(ck_path)?;
        if ck.seed != cfg.seed
            || ck.grad_mode != cfg.grad_mode
            || ck.parametrization != cfg.parametrization
            || ck.net_text != net_text
        {
            return Err(CliError::Usage(format!(
                "checkpoint `{}` was produced by a different run configuration",
                ck_path.display()
            )));
        }
        restore(&mut net, &mut velocities, &ck)?;
        start_epoch = ck.epochs_done as usize;
    }

    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| CliError::Io {
        path: cfg.out_dir.clone(),
        source,
    })?;
    let metrics_path = cfg.out_dir.join("metrics.txt");
    let checkpoint_path = cfg.out_dir.join("model.fm3d");
    let mut metrics = std::fs::File::create(&metrics_path).map_err(|source| CliError::Io {
        path: metrics_path.clone(),
        source,
    })?;

    let n = train_data.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let momentum = S::from_f64(cfg.momentum);
    let lr = S::from_f64(cfg.learning_rate);
    let mut records = Vec::new();

    for epoch in start_epoch + 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng(cfg.seed, epoch));
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_data.images.select_batch(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_data.labels[i]).collect();
            let (loss, grads) = net.loss_and_grads(&batch, &labels)?;
            if !loss.is_finite() {
                return Err(CliError::NonFiniteLoss {
                    step: (epoch - 1) * batches_per_epoch + batch_no,
                });
            }
            for (t, grad) in grads.iter().enumerate() {
                let velocity = &mut velocities[t];
                let params = net.param_mut(t);
                for ((p, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
        }
        if !net.all_params_finite() {
            return Err(CliError::NonFiniteParams { epoch });
        }

        let (train_acc, train_loss) = evaluate(&net, &train_data, cfg.batch_size)?;
        let eval_acc = match &eval_data {
            Some(eval) => evaluate(&net, eval, cfg.batch_size)?.0,
            None => train_acc,
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            train_acc,
            eval_acc,
        };
        writeln!(metrics, "{}", record.render()).map_err(|source| CliError::Io {
            path: metrics_path.clone(),
            source,
        })?;
        progress(&record);
        records.push(record);

        let ck = snapshot(
            &net,
            &velocities,
            cfg.grad_mode,
            cfg.parametrization,
            epoch as u32,
            cfg.seed,
            net_text.clone(),
        );
        save_checkpoint(&checkpoint_path, &ck)?;
    }

    // An epoch target at or below the resume point still leaves a valid
    // checkpoint behind for downstream evaluation.
    if records.is_empty() {
        let ck = snapshot(
            &net,
            &velocities,
            cfg.grad_mode,
            cfg.parametrization,
            start_epoch as u32,
            cfg.seed,
            net_text.clone(),
        );
        save_checkpoint(&checkpoint_path, &ck)?;
    }

    Ok(TrainSummary {
        records,
        metrics_path,
        checkpoint_path,
        param_count: net.param_count(),
        start_epoch,
    })
}

/// Rebuilds a model from a checkpoint's embedded description and parameters.
pub fn network_from_checkpoint<S: Scalar>(
    ck: &crate::checkpoint::Checkpoint,
) -> Result<Network<S>, CliError> {
    let desc = crate::netdesc::parse_net_str(&ck.net_text)?;
    let mut net = build_network(&desc, ck.parametrization, ck.grad_mode, ck.seed)?;
    let mut velocities: Vec<Vec<S>> = net
        .param_infos()
        .iter()
        .map(|p| vec![S::ZERO; p.len()])
        .collect();
    restore(&mut net, &mut velocities, ck)?;
    Ok(net)
}

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::checkpoint::rounded_to_f32;
use super::config::TrainConfig;
use super::eval::evaluate;
use crate::data::{crop_view, make_pairs, Dataset, PairIndex};
use crate::error::{Error, Result};
use crate::numcore::{sgd_step, Rng, Tensor};
use crate::ranker::{CategoryNet, PairTarget, ScoringNet};

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub heldout_acc: f64,
    pub lambda_fraction: f64,
}

pub struct TrainOutcome {
    pub net: ScoringNet,
    pub metrics: Vec<EpochMetrics>,
    /// Pairs withheld from training (indices into the training data).
    pub heldout: Vec<PairIndex>,
}

/// An independent random crop per pyramid level.
fn views(net: &ScoringNet, image: &Tensor, crop_fraction: f64, rng: &mut Rng) -> Result<Vec<Tensor>> {
    (0..net.n_views())
        .map(|_| {
            if crop_fraction < 1.0 {
                crop_view(image, crop_fraction, rng)
            } else {
                Ok(image.clone())
            }
        })
        .collect()
}

fn step(net: &mut ScoringNet, config: &TrainConfig) -> Result<()> {
    let n_stn = net.stns.iter().map(|s| s.layers().len()).sum::<usize>();
    for (i, layer) in net.layers_mut().into_iter().enumerate() {
        let lr = if i < n_stn {
            config.learning_rate * config.stn_lr_scale
        } else {
            config.learning_rate
        };
        sgd_step(layer, lr, config.momentum)?;
    }
    Ok(())
}

/// Trains a fresh network on pairs sampled from `data`.
///
/// Held-out metrics are computed on the parameters rounded to `f32`, which
/// is exactly what a saved checkpoint contains, so evaluating the
/// checkpoint later reproduces them.
pub fn train(config: &TrainConfig, data: &Dataset, category: Option<CategoryNet>) -> Result<TrainOutcome> {
    train_with(config, data, category, |_, _| Ok(ControlFlow::Continue(())))
}

/// Like [`train`], calling `on_epoch` after each epoch's metrics. Training
/// stops early when it returns `ControlFlow::Break`.
pub fn train_with(
    config: &TrainConfig,
    data: &Dataset,
    category: Option<CategoryNet>,
    mut on_epoch: impl FnMut(&ScoringNet, &EpochMetrics) -> Result<ControlFlow<()>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.variant.uses_category() && category.is_none() {
        return Err(Error::Config(format!(
            "variant {} needs a pre-trained category checkpoint",
            config.variant
        )));
    }
    let mut rng = Rng::new(config.seed);
    let mut net = ScoringNet::new(config.arch(), category, &mut rng.fork())?;
    let mut pairs = make_pairs(&data.manifest, config.pair_budget, &mut rng.fork())?;
    if pairs.len() < 2 {
        return Err(Error::Validation("need at least 2 pairs to hold one out".into()));
    }
    let n_held = ((pairs.len() as f64 * config.heldout_fraction).round() as usize).clamp(1, pairs.len() - 1);
    let heldout = pairs.split_off(pairs.len() - n_held);
    let mut train_pairs = pairs;
    let mut epoch_rng = rng.fork();

    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        epoch_rng.shuffle(&mut train_pairs);
        let mut loss_sum = 0.0;
        for (b, batch) in train_pairs.chunks(config.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            for p in batch {
                let left = views(&net, &data.images[p.left], config.crop_fraction, &mut epoch_rng)?;
                let right = views(&net, &data.images[p.right], config.crop_fraction, &mut epoch_rng)?;
                let target = PairTarget {
                    y: p.y(),
                    scores: Some((data.score(p.left), data.score(p.right))),
                };
                let l: Vec<&Tensor> = left.iter().collect();
                let r: Vec<&Tensor> = right.iter().collect();
                let fwd = net.forward_pair(&l, &r, target)?;
                let total = fwd.breakdown.total;
                if !total.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss {total} at epoch {epoch}, batch {b}, pair ({}, {}): scores {} / {}",
                        p.left, p.right, fwd.traces[0].v, fwd.traces[1].v
                    )));
                }
                loss_sum += total;
                net.backward_pair(&fwd, scale)?;
            }
            step(&mut net, config).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            })?;
        }
        let report = evaluate(&rounded_to_f32(&net), &data.images, &heldout)?;
        let m = EpochMetrics {
            epoch,
            mean_loss: loss_sum / train_pairs.len() as f64,
            heldout_acc: report.accuracy,
            lambda_fraction: report.lambda_fraction,
        };
        let flow = on_epoch(&net, &m)?;
        metrics.push(m);
        if flow.is_break() {
            break;
        }
    }
    Ok(TrainOutcome { net, metrics, heldout })
}

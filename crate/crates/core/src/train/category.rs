use super::config::CategoryConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numcore::{sgd_step, Rng};
use crate::ranker::CategoryNet;

pub struct CategoryOutcome {
    pub net: CategoryNet,
    pub train_accuracy: f64,
    pub final_loss: f64,
}

/// Trains the softmax category classifier on every labelled image.
pub fn pretrain_category(config: &CategoryConfig, data: &Dataset) -> Result<CategoryOutcome> {
    config.validate()?;
    if !data.manifest.has_categories() {
        return Err(Error::Validation("manifest has no categories".into()));
    }
    let labels: Vec<usize> = data
        .manifest
        .entries
        .iter()
        .map(|e| e.category.expect("validated") as usize)
        .collect();
    let mut distinct = labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Validation(format!(
            "only {} category present; a classifier needs at least 2",
            distinct.len()
        )));
    }
    let (c, h, w) = data.images[0].dims3()?;
    if h != w {
        return Err(Error::Validation(format!("category images must be square, got {h}x{w}")));
    }
    let mut rng = Rng::new(config.seed);
    let mut net = CategoryNet::new(c, h, config.category_dim, data.manifest.n_categories(), &mut rng.fork())?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut final_loss = f64::NAN;
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                sum += net.accumulate(&data.images[i], labels[i], scale)?;
            }
            for l in net.layers_mut() {
                sgd_step(l, config.learning_rate, config.momentum)?;
            }
        }
        final_loss = sum / data.len() as f64;
        if !final_loss.is_finite() {
            return Err(Error::Numerical(format!("category loss became {final_loss}")));
        }
    }
    let correct = (0..data.len())
        .map(|i| net.predict(&data.images[i]).map(|p| usize::from(p == labels[i])))
        .sum::<Result<usize>>()?;
    Ok(CategoryOutcome {
        net,
        train_accuracy: correct as f64 / data.len() as f64,
        final_loss,
    })
}

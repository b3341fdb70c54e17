use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{load_image, PairIndex, PairRecord};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::ranker::{combined_loss, rank_loss, ScoreTrace, ScoringNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub accuracy: f64,
    /// Out-of-bounds fraction over every (image, level) scored.
    pub lambda_fraction: f64,
    pub mean_rank_loss: f64,
    /// Mean of the gated total (rank term plus spatial penalties).
    pub mean_loss: f64,
}

/// 2AFC credit: 1 for the right order, 0 for the wrong one, 0.5 when the
/// scores tie or the label is a tie.
pub fn pair_credit(v1: f64, v2: f64, y: f64) -> f64 {
    if y == 0.5 || v1 == v2 {
        0.5
    } else if (v1 > v2) == (y == 1.0) {
        1.0
    } else {
        0.0
    }
}

/// Scores each distinct image once, then aggregates over pairs.
/// `pairs` index into `images`.
pub fn evaluate(net: &ScoringNet, images: &[Tensor], pairs: &[PairIndex]) -> Result<EvalReport> {
    let triples: Vec<(usize, usize, f64)> = pairs.iter().map(|p| (p.left, p.right, p.y())).collect();
    evaluate_indexed(net, images, &triples)
}

fn evaluate_indexed(net: &ScoringNet, images: &[Tensor], pairs: &[(usize, usize, f64)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty pair list".into()));
    }
    let mut traces: HashMap<usize, ScoreTrace> = HashMap::new();
    for &(l, r, _) in pairs {
        for i in [l, r] {
            if !traces.contains_key(&i) {
                let image = images.get(i).ok_or_else(|| {
                    Error::Validation(format!("pair refers to image {i} of {}", images.len()))
                })?;
                traces.insert(i, net.score(image)?);
            }
        }
    }
    let (mut credit, mut rank, mut total) = (0.0, 0.0, 0.0);
    for &(l, r, y) in pairs {
        let (a, b) = (&traces[&l], &traces[&r]);
        credit += pair_credit(a.v, b.v, y);
        let rl = rank_loss(a.v, b.v, y)?;
        rank += rl;
        total += combined_loss(rl, &a.bounds, &b.bounds).total;
    }
    let (mut oob, mut levels) = (0usize, 0usize);
    for t in traces.values() {
        levels += t.bounds.len();
        oob += t.bounds.iter().filter(|b| b.out_of_bounds()).count();
    }
    let n = pairs.len() as f64;
    Ok(EvalReport {
        pairs: pairs.len(),
        accuracy: credit / n,
        lambda_fraction: if levels == 0 { 0.0 } else { oob as f64 / levels as f64 },
        mean_rank_loss: rank / n,
        mean_loss: total / n,
    })
}

/// Evaluates an exported pair list, decoding each distinct image once.
pub fn evaluate_records(net: &ScoringNet, records: &[PairRecord]) -> Result<EvalReport> {
    let mut index: HashMap<PathBuf, usize> = HashMap::new();
    let mut images = Vec::new();
    let mut triples = Vec::with_capacity(records.len());
    for r in records {
        let mut id = |p: &PathBuf| -> Result<usize> {
            if let Some(&i) = index.get(p) {
                return Ok(i);
            }
            images.push(load_image(p)?);
            index.insert(p.clone(), images.len() - 1);
            Ok(images.len() - 1)
        };
        let l = id(&r.left)?;
        let rr = id(&r.right)?;
        triples.push((l, rr, r.y));
    }
    evaluate_indexed(net, &images, &triples)
}

//! Analytic gradients against central finite differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};
use crate::ranker::{ArchConfig, CategoryNet, PairTarget, ScoringNet, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub variant: Variant,
    pub image_size: usize,
    pub feature_dim: usize,
    pub category_dim: usize,
    /// Parameters sampled from each weight and each bias tensor.
    pub samples_per_tensor: usize,
    pub step: f64,
    /// Relative error bound for the 99% quantile.
    pub tolerance: f64,
    /// Bound on the largest relative error.
    pub max_tolerance: f64,
    /// Gradients smaller than this are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            variant: Variant::Base,
            image_size: 64,
            feature_dim: 32,
            category_dim: 16,
            samples_per_tensor: 6,
            step: 1e-5,
            tolerance: 1e-5,
            max_tolerance: 1e-4,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Perturbations that crossed a relu kink, a sampler cell edge or an
    /// out-of-bounds indicator.
    pub skipped_discontinuity: usize,
    pub failed: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub variant: Variant,
    pub checked: usize,
    pub skipped_discontinuity: usize,
    pub failed: usize,
    /// Fraction of checked parameters within `tolerance`.
    pub fraction_within: f64,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub max_tolerance: f64,
    pub passed: bool,
    pub tensors: Vec<TensorCheck>,
}

pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Toy model with every layer live: the head and the localization output
/// layers get small random weights (fresh ones are zero, which would zero
/// most gradients), and extractor biases are lifted off the relu kink.
pub fn toy_model(config: &GradCheckConfig) -> Result<ScoringNet> {
    let mut rng = Rng::new(config.seed);
    let arch = ArchConfig {
        variant: config.variant,
        image_size: config.image_size,
        feature_dim: config.feature_dim,
        category_dim: config.category_dim,
        ..ArchConfig::default()
    };
    let category = if config.variant.uses_category() {
        Some(CategoryNet::new(arch.in_channels, arch.image_size, arch.category_dim, 3, &mut rng)?)
    } else {
        None
    };
    let mut net = ScoringNet::new(arch, category, &mut rng)?;
    let width = net.head.weight.value.len() as f64;
    for v in net.head.weight.value.data_mut() {
        *v = rng.uniform_range(-1.0, 1.0) / width.sqrt();
    }
    for stn in &mut net.stns {
        for v in stn.fc2.weight.value.data_mut() {
            *v = rng.uniform_range(-0.02, 0.02);
        }
        for v in stn.fc1.bias.value.data_mut() {
            *v = 0.1;
        }
    }
    for l in net.extractor.layers_mut() {
        l.bias.value.fill(0.05);
    }
    Ok(net)
}

fn toy_image(size: usize, rng: &mut Rng) -> Tensor {
    // Smooth blobs plus noise: varied but not pathological.
    let (cx, cy) = (rng.uniform_range(0.2, 0.8), rng.uniform_range(0.2, 0.8));
    let data = (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f64 / size as f64, (i / size) as f64 / size as f64);
            let r2 = (x - cx).powi(2) + (y - cy).powi(2);
            0.6 * (-r2 * 12.0).exp() + 0.4 * rng.uniform()
        })
        .collect();
    Tensor::from_vec(&[1, size, size], data).expect("sized")
}

struct Case {
    net: ScoringNet,
    left: Vec<Tensor>,
    right: Vec<Tensor>,
    target: PairTarget,
}

impl Case {
    fn loss(&self, net: &ScoringNet) -> Result<(f64, u64)> {
        let l: Vec<&Tensor> = self.left.iter().collect();
        let r: Vec<&Tensor> = self.right.iter().collect();
        let f = net.forward_pair(&l, &r, self.target)?;
        Ok((f.breakdown.total, f.fingerprint()))
    }
}

/// Two fixed pairs: one with every ROI inside the image (rank path) and,
/// for variants with localization, one whose last level is pushed out of
/// bounds (spatial path).
fn cases(config: &GradCheckConfig) -> Result<Vec<Case>> {
    let base = toy_model(config)?;
    let mut rng = Rng::new(config.seed ^ 0x5eed);
    let n_views = base.n_views();
    let mut make = |net: ScoringNet, y: f64| {
        let left: Vec<Tensor> = (0..n_views).map(|_| toy_image(config.image_size, &mut rng)).collect();
        let right: Vec<Tensor> = (0..n_views).map(|_| toy_image(config.image_size, &mut rng)).collect();
        let target = PairTarget {
            y,
            scores: Some((rng.uniform(), rng.uniform())),
        };
        Case { net, left, right, target }
    };
    let mut out = vec![make(base.clone(), 1.0)];
    let mut shifted = base;
    if let Some(last) = shifted.stns.last_mut() {
        let b = last.fc2.bias.value.data_mut();
        b[1] = 1.3;
        b[2] = -0.4;
    }
    out.push(make(shifted, 0.0));
    Ok(out)
}

fn sample_indices(len: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    if len <= k {
        return (0..len).collect();
    }
    rand::seq::index::sample(rng.raw(), len, k).into_vec()
}

pub fn grad_check(config: &GradCheckConfig) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&config.step) {
        return Err(Error::Config(format!("step must lie in [1e-6, 1e-3], got {}", config.step)));
    }
    if config.samples_per_tensor == 0 {
        return Err(Error::Config("samples_per_tensor must be positive".into()));
    }
    let h = config.step;
    let mut pick = Rng::new(config.seed ^ 0xc0ffee);
    let cases = cases(config)?;
    let names: Vec<String> = cases[0].net.layers().iter().map(|l| l.name.clone()).collect();
    let mut tensors: Vec<TensorCheck> = names
        .iter()
        .flat_map(|n| ["weight", "bias"].map(|s| format!("{n}.{s}")))
        .map(|name| TensorCheck {
            name,
            checked: 0,
            skipped_discontinuity: 0,
            failed: 0,
            max_rel_error: 0.0,
        })
        .collect();
    let mut errors = Vec::new();

    for case in &cases {
        let (_, fp0) = case.loss(&case.net)?;
        let l: Vec<&Tensor> = case.left.iter().collect();
        let r: Vec<&Tensor> = case.right.iter().collect();
        let fwd = case.net.forward_pair(&l, &r, case.target)?;
        let mut analytic = case.net.clone();
        analytic.zero_grad();
        analytic.backward_pair(&fwd, 1.0)?;

        for (li, name) in names.iter().enumerate() {
            for (pi, which) in ["weight", "bias"].into_iter().enumerate() {
                let param = |net: &ScoringNet| -> Tensor {
                    let layer = net.layers()[li];
                    if pi == 0 { layer.weight.value.clone() } else { layer.bias.value.clone() }
                };
                let len = param(&case.net).len();
                let grads = {
                    let layer = analytic.layers()[li];
                    if pi == 0 { layer.weight.grad.clone() } else { layer.bias.grad.clone() }
                };
                let entry = &mut tensors[2 * li + pi];
                debug_assert_eq!(entry.name, format!("{name}.{which}"));
                for idx in sample_indices(len, config.samples_per_tensor, &mut pick) {
                    let eval = |delta: f64| -> Result<(f64, u64)> {
                        let mut net = case.net.clone();
                        let layer = &mut net.layers_mut()[li];
                        let t = if pi == 0 { &mut layer.weight.value } else { &mut layer.bias.value };
                        t.data_mut()[idx] += delta;
                        case.loss(&net)
                    };
                    let (lp, fpp) = eval(h)?;
                    let (lm, fpm) = eval(-h)?;
                    if fpp != fp0 || fpm != fp0 {
                        entry.skipped_discontinuity += 1;
                        continue;
                    }
                    let numeric = (lp - lm) / (2.0 * h);
                    let e = rel_error(grads.data()[idx], numeric, config.floor);
                    entry.checked += 1;
                    entry.max_rel_error = entry.max_rel_error.max(e);
                    if !(e < config.tolerance) {
                        entry.failed += 1;
                    }
                    errors.push(e);
                }
            }
        }
    }
    let checked = errors.len();
    let within = errors.iter().filter(|&&e| e < config.tolerance).count();
    let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
    let fraction_within = if checked == 0 { 0.0 } else { within as f64 / checked as f64 };
    Ok(GradCheckReport {
        variant: config.variant,
        checked,
        skipped_discontinuity: tensors.iter().map(|t| t.skipped_discontinuity).sum(),
        failed: checked - within,
        fraction_within,
        max_rel_error,
        tolerance: config.tolerance,
        max_tolerance: config.max_tolerance,
        passed: checked > 0 && fraction_within >= 0.99 && max_rel_error < config.max_tolerance,
        tensors,
    })
}

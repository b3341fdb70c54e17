use crate::error::{dim_check, Error, Result};
use crate::numcore::{avgpool2_forward, fc_backward, fc_forward, relu_backward, relu_forward, LayerParams, Rng, Tensor};

/// Largest side the category network reads; larger inputs are mean-pooled
/// down to it first.
pub const CATEGORY_SIDE: usize = 16;

/// Small softmax classifier whose hidden activations supplement the
/// ranking features. Trained separately and frozen inside a ranker.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryNet {
    pub in_channels: usize,
    pub input_size: usize,
    pub fc1: LayerParams,
    pub fc2: LayerParams,
}

impl CategoryNet {
    fn pool_steps(input_size: usize) -> Result<usize> {
        let mut side = input_size;
        let mut steps = 0;
        while side > CATEGORY_SIDE {
            if side % 2 != 0 {
                return Err(Error::Config(format!(
                    "category input size {input_size} cannot be pooled down to {CATEGORY_SIDE}"
                )));
            }
            side /= 2;
            steps += 1;
        }
        Ok(steps)
    }

    fn pooled_side(input_size: usize) -> Result<usize> {
        Ok(input_size >> Self::pool_steps(input_size)?)
    }

    pub fn new(
        in_channels: usize,
        input_size: usize,
        category_dim: usize,
        n_categories: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_categories < 2 {
            return Err(Error::Validation(format!(
                "category classifier needs at least 2 categories, got {n_categories}"
            )));
        }
        let side = Self::pooled_side(input_size)?;
        Ok(CategoryNet {
            in_channels,
            input_size,
            fc1: LayerParams::dense("category.fc1", category_dim, in_channels * side * side, rng),
            fc2: LayerParams::dense("category.fc2", n_categories, category_dim, rng),
        })
    }

    pub fn category_dim(&self) -> usize {
        self.fc1.out_features()
    }

    pub fn n_categories(&self) -> usize {
        self.fc2.out_features()
    }

    pub fn layers(&self) -> [&LayerParams; 2] {
        [&self.fc1, &self.fc2]
    }

    pub fn layers_mut(&mut self) -> [&mut LayerParams; 2] {
        [&mut self.fc1, &mut self.fc2]
    }

    fn pooled(&self, image: &Tensor) -> Result<Tensor> {
        let (c, h, w) = image.dims3()?;
        dim_check("category", "channels", self.in_channels, c)?;
        dim_check("category", "height", self.input_size, h)?;
        dim_check("category", "width", self.input_size, w)?;
        let mut x = image.clone();
        for _ in 0..Self::pool_steps(self.input_size)? {
            x = avgpool2_forward(&x)?;
        }
        Ok(x)
    }

    /// Hidden activations fed to the ranking head.
    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        let x = self.pooled(image)?;
        Ok(relu_forward(&fc_forward(&x, &self.fc1)?))
    }

    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        fc_forward(&self.features(image)?, &self.fc2)
    }

    pub fn predict(&self, image: &Tensor) -> Result<usize> {
        let logits = self.logits(image)?;
        Ok(argmax(logits.data()))
    }

    /// Softmax cross-entropy on one labelled image; accumulates gradients
    /// and returns the loss.
    pub fn accumulate(&mut self, image: &Tensor, label: usize, scale: f64) -> Result<f64> {
        let x = self.pooled(image)?;
        let pre = fc_forward(&x, &self.fc1)?;
        let hidden = relu_forward(&pre);
        let logits = fc_forward(&hidden, &self.fc2)?;
        let probs = softmax(logits.data());
        let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
        let mut g = probs;
        g[label] -= 1.0;
        g.iter_mut().for_each(|v| *v *= scale);
        let g = Tensor::from_vec(&[g.len()], g)?;
        let g_hidden = fc_backward(&hidden, &mut self.fc2, &g)?;
        let g_pre = relu_backward(&pre, &g_hidden)?;
        fc_backward(&x, &mut self.fc1, &g_pre)?;
        Ok(loss)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

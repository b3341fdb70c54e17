use crate::error::{dim_check, Error, Result};
use crate::numcore::{
    avgpool2_backward, avgpool2_forward, conv2d_backward, conv2d_backward_params, conv2d_forward,
    fc_backward, fc_forward, relu_backward, relu_forward, Fingerprint, LayerParams, Rng, Tensor,
};

const KERNELS: [usize; 3] = [5, 3, 3];

/// Feature extractor shared by every sub-image of both branches:
/// three (conv → relu → pool2) blocks, then fc → relu.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub in_channels: usize,
    pub input_size: usize,
    pub convs: [LayerParams; 3],
    pub fc: LayerParams,
}

pub struct ExtractorCache {
    input: Tensor,
    /// Conv pre-activations.
    pre: [Tensor; 3],
    /// Pooled block outputs (inputs of the next block).
    pooled: [Tensor; 3],
    fc_pre: Tensor,
}

impl ExtractorCache {
    pub fn push_masks(&self, fp: &mut Fingerprint) {
        for p in &self.pre {
            fp.push_mask(p);
        }
        fp.push_mask(&self.fc_pre);
    }
}

impl FeatureExtractor {
    /// Side of the final pooled map, if `input_size` survives all blocks
    /// with even extents before every pool.
    pub fn final_side(input_size: usize) -> Option<usize> {
        let mut side = input_size;
        for k in KERNELS {
            side = side.checked_sub(k - 1)?;
            if side == 0 || side % 2 != 0 {
                return None;
            }
            side /= 2;
        }
        Some(side)
    }

    pub fn new(
        in_channels: usize,
        input_size: usize,
        channels: [usize; 3],
        feature_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let side = Self::final_side(input_size).ok_or_else(|| {
            Error::Config(format!(
                "extractor input size {input_size} does not survive conv5/conv3/conv3 + pool2 blocks"
            ))
        })?;
        let convs = [
            LayerParams::conv("extractor.conv1", channels[0], in_channels, KERNELS[0], rng),
            LayerParams::conv("extractor.conv2", channels[1], channels[0], KERNELS[1], rng),
            LayerParams::conv("extractor.conv3", channels[2], channels[1], KERNELS[2], rng),
        ];
        let fc = LayerParams::dense("extractor.fc", feature_dim, channels[2] * side * side, rng);
        Ok(FeatureExtractor {
            in_channels,
            input_size,
            convs,
            fc,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.fc.out_features()
    }

    pub fn layers(&self) -> [&LayerParams; 4] {
        [&self.convs[0], &self.convs[1], &self.convs[2], &self.fc]
    }

    pub fn layers_mut(&mut self) -> [&mut LayerParams; 4] {
        let [a, b, c] = &mut self.convs;
        [a, b, c, &mut self.fc]
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ExtractorCache)> {
        let (c, h, w) = input.dims3()?;
        dim_check("extractor", "channels", self.in_channels, c)?;
        dim_check("extractor", "height", self.input_size, h)?;
        dim_check("extractor", "width", self.input_size, w)?;
        let mut x = input.clone();
        let mut pre = Vec::with_capacity(3);
        let mut pooled = Vec::with_capacity(3);
        for conv in &self.convs {
            let a = conv2d_forward(&x, conv, 1)?;
            x = avgpool2_forward(&relu_forward(&a))?;
            pre.push(a);
            pooled.push(x.clone());
        }
        let fc_pre = fc_forward(&x, &self.fc)?;
        let features = relu_forward(&fc_pre);
        let cache = ExtractorCache {
            input: input.clone(),
            pre: pre.try_into().expect("three blocks"),
            pooled: pooled.try_into().expect("three blocks"),
            fc_pre,
        };
        Ok((features, cache))
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `want_input_grad` is set.
    pub fn backward(
        &mut self,
        cache: &ExtractorCache,
        grad: &Tensor,
        want_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let g = relu_backward(&cache.fc_pre, grad)?;
        let mut g = fc_backward(&cache.pooled[2], &mut self.fc, &g)?;
        for i in (0..3).rev() {
            let g_r = avgpool2_backward(cache.pre[i].shape(), &g)?;
            let g_a = relu_backward(&cache.pre[i], &g_r)?;
            let input = if i == 0 { &cache.input } else { &cache.pooled[i - 1] };
            if i == 0 && !want_input_grad {
                conv2d_backward_params(input, &mut self.convs[0], 1, &g_a)?;
                return Ok(None);
            }
            g = conv2d_backward(input, &mut self.convs[i], 1, &g_a)?;
        }
        Ok(Some(g))
    }
}

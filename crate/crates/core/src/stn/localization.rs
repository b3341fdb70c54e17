use super::affine::AffineParams;
use crate::error::{dim_check, Result};
use crate::numcore::{
    avgpool2_backward, avgpool2_forward, conv2d_backward, conv2d_backward_params, conv2d_forward,
    fc_backward, fc_forward, relu_backward, relu_forward, Fingerprint, LayerParams, Rng, Tensor,
};

const KERNEL: usize = 5;

/// Channel widths of the localization network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocShape {
    pub in_channels: usize,
    pub input_size: usize,
    /// 2×2 average pools applied to the input before the first conv.
    pub pool: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
}

impl LocShape {
    /// Side seen by the first conv, if the input pools evenly.
    pub fn conv_input_side(&self) -> Option<usize> {
        let f = 1usize.checked_shl(self.pool as u32)?;
        (self.input_size % f == 0 && self.input_size >= f).then(|| self.input_size / f)
    }

    /// Spatial side after both conv + pool blocks, if the input size admits them.
    pub fn pooled_side(input_size: usize) -> Option<usize> {
        let a = input_size.checked_sub(KERNEL - 1)?;
        if a == 0 || a % 2 != 0 {
            return None;
        }
        let b = (a / 2).checked_sub(KERNEL - 1)?;
        if b == 0 || b % 2 != 0 {
            return None;
        }
        Some(b / 2)
    }
}

/// Regresses `(s, t_x, t_y)` from an image:
/// [pool]* → conv5 → relu → pool → conv5 → relu → pool → fc → relu → fc(3).
///
/// The last layer starts with zero weights and bias `(init_scale, 0, 0)`,
/// so a fresh network returns a centred ROI of side `init_scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationNet {
    pub shape: LocShape,
    pub init_scale: f64,
    pub conv1: LayerParams,
    pub conv2: LayerParams,
    pub fc1: LayerParams,
    pub fc2: LayerParams,
}

pub struct LocCache {
    input: Tensor,
    a1: Tensor,
    p1: Tensor,
    a2: Tensor,
    p2: Tensor,
    h: Tensor,
    hr: Tensor,
}

impl LocCache {
    pub fn push_masks(&self, fp: &mut Fingerprint) {
        fp.push_mask(&self.a1);
        fp.push_mask(&self.a2);
        fp.push_mask(&self.h);
    }
}

impl LocalizationNet {
    pub fn new(prefix: &str, shape: LocShape, init_scale: f64, rng: &mut Rng) -> Result<Self> {
        let side = shape.conv_input_side().and_then(LocShape::pooled_side).ok_or_else(|| {
            crate::Error::Config(format!(
                "localization input size {} (pooled {} times) does not survive two conv5 + pool2 blocks",
                shape.input_size, shape.pool
            ))
        })?;
        let conv1 = LayerParams::conv(format!("{prefix}.conv1"), shape.conv1, shape.in_channels, KERNEL, rng);
        let conv2 = LayerParams::conv(format!("{prefix}.conv2"), shape.conv2, shape.conv1, KERNEL, rng);
        let fc1 = LayerParams::dense(format!("{prefix}.fc1"), shape.hidden, shape.conv2 * side * side, rng);
        let mut fc2 = LayerParams::zeros(format!("{prefix}.fc2"), &[3, shape.hidden], 3);
        fc2.bias.value.data_mut()[0] = init_scale;
        Ok(LocalizationNet {
            shape,
            init_scale,
            conv1,
            conv2,
            fc1,
            fc2,
        })
    }

    pub fn layers(&self) -> [&LayerParams; 4] {
        [&self.conv1, &self.conv2, &self.fc1, &self.fc2]
    }

    pub fn layers_mut(&mut self) -> [&mut LayerParams; 4] {
        [&mut self.conv1, &mut self.conv2, &mut self.fc1, &mut self.fc2]
    }

    pub fn localize(&self, image: &Tensor) -> Result<AffineParams> {
        self.forward(image).map(|(a, _)| a)
    }

    pub fn forward(&self, image: &Tensor) -> Result<(AffineParams, LocCache)> {
        let (c, h, w) = image.dims3()?;
        dim_check("localize", "channels", self.shape.in_channels, c)?;
        dim_check("localize", "height", self.shape.input_size, h)?;
        dim_check("localize", "width", self.shape.input_size, w)?;
        let mut x = image.clone();
        for _ in 0..self.shape.pool {
            x = avgpool2_forward(&x)?;
        }
        let a1 = conv2d_forward(&x, &self.conv1, 1)?;
        let p1 = avgpool2_forward(&relu_forward(&a1))?;
        let a2 = conv2d_forward(&p1, &self.conv2, 1)?;
        let p2 = avgpool2_forward(&relu_forward(&a2))?;
        let h = fc_forward(&p2, &self.fc1)?;
        let hr = relu_forward(&h);
        let out = fc_forward(&hr, &self.fc2)?;
        let o = out.data();
        let params = AffineParams::new(o[0], o[1], o[2]);
        Ok((
            params,
            LocCache {
                input: x,
                a1,
                p1,
                a2,
                p2,
                h,
                hr,
            },
        ))
    }

    /// Accumulates parameter gradients for an upstream `d/d(s, t_x, t_y)`.
    pub fn backward(&mut self, cache: &LocCache, grad: [f64; 3]) -> Result<()> {
        if grad.iter().all(|&g| g == 0.0) {
            return Ok(());
        }
        let g_out = Tensor::from_vec(&[3], grad.to_vec())?;
        let g_hr = fc_backward(&cache.hr, &mut self.fc2, &g_out)?;
        let g_h = relu_backward(&cache.h, &g_hr)?;
        if g_h.data().iter().all(|&g| g == 0.0) {
            return Ok(());
        }
        let g_p2 = fc_backward(&cache.p2, &mut self.fc1, &g_h)?;
        let g_r2 = avgpool2_backward(cache.a2.shape(), &g_p2)?;
        let g_a2 = relu_backward(&cache.a2, &g_r2)?;
        let g_p1 = conv2d_backward(&cache.p1, &mut self.conv2, 1, &g_a2)?;
        let g_r1 = avgpool2_backward(cache.a1.shape(), &g_p1)?;
        let g_a1 = relu_backward(&cache.a1, &g_r1)?;
        conv2d_backward_params(&cache.input, &mut self.conv1, 1, &g_a1)
    }
}

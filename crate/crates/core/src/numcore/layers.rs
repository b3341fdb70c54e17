//! Hand-written differentiable layers.
//!
//! Every backward function accumulates parameter gradients into the
//! `grad` buffers of its [`LayerParams`] and returns the gradient with
//! respect to the layer input. Convolutions are valid-only (no padding).

use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{dim_check, Error, Result};

/// A learnable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Param {
            value,
            grad,
            velocity,
        }
    }
}

/// Weight and bias of one layer.
///
/// Convolution weights are `[out, in, k, k]`, dense weights `[out, in]`,
/// biases `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub name: String,
    pub weight: Param,
    pub bias: Param,
}

impl LayerParams {
    pub fn new(name: impl Into<String>, weight: Tensor, bias: Tensor) -> Self {
        LayerParams {
            name: name.into(),
            weight: Param::new(weight),
            bias: Param::new(bias),
        }
    }

    /// Convolution kernel with fan-in scaled uniform init (±sqrt(6/fan_in)), zero bias.
    pub fn conv(name: impl Into<String>, out_c: usize, in_c: usize, k: usize, rng: &mut Rng) -> Self {
        let weight = fan_in_uniform(&[out_c, in_c, k, k], in_c * k * k, rng);
        Self::new(name, weight, Tensor::zeros(&[out_c]))
    }

    /// Dense layer with fan-in scaled uniform init, zero bias.
    pub fn dense(name: impl Into<String>, out: usize, input: usize, rng: &mut Rng) -> Self {
        let weight = fan_in_uniform(&[out, input], input, rng);
        Self::new(name, weight, Tensor::zeros(&[out]))
    }

    pub fn zeros(name: impl Into<String>, weight_shape: &[usize], out: usize) -> Self {
        Self::new(name, Tensor::zeros(weight_shape), Tensor::zeros(&[out]))
    }

    pub fn zero_grad(&mut self) {
        self.weight.grad.fill(0.0);
        self.bias.grad.fill(0.0);
    }

    pub fn scale_grad(&mut self, factor: f64) {
        for g in self
            .weight
            .grad
            .data_mut()
            .iter_mut()
            .chain(self.bias.grad.data_mut())
        {
            *g *= factor;
        }
    }

    pub fn grad_is_zero(&self) -> bool {
        self.weight.grad.data().iter().chain(self.bias.grad.data()).all(|&g| g == 0.0)
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.value.len() + self.bias.value.len()
    }
}

fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::from_vec(shape, data).expect("shape and data agree")
}

fn conv_dims(input: &Tensor, params: &LayerParams, stride: usize) -> Result<ConvDims> {
    let (ic, h, w) = input.dims3()?;
    let ws = params.weight.value.shape();
    if ws.len() != 4 || ws[2] != ws[3] {
        return Err(Error::Validation(format!(
            "{}: convolution weight must be [out, in, k, k], got {ws:?}",
            params.name
        )));
    }
    if stride == 0 {
        return Err(Error::Validation("convolution stride must be positive".into()));
    }
    let (oc, k) = (ws[0], ws[2]);
    dim_check("conv2d", "input channels", ws[1], ic)?;
    if h < k {
        return Err(Error::Dimension { op: "conv2d", axis: "height", expected: k, found: h });
    }
    if w < k {
        return Err(Error::Dimension { op: "conv2d", axis: "width", expected: k, found: w });
    }
    Ok(ConvDims {
        ic,
        h,
        w,
        oc,
        k,
        oh: (h - k) / stride + 1,
        ow: (w - k) / stride + 1,
        stride,
    })
}

#[derive(Clone, Copy)]
struct ConvDims {
    ic: usize,
    h: usize,
    w: usize,
    oc: usize,
    k: usize,
    oh: usize,
    ow: usize,
    stride: usize,
}

pub fn conv2d_forward(input: &Tensor, params: &LayerParams, stride: usize) -> Result<Tensor> {
    let d = conv_dims(input, params, stride)?;
    let x = input.data();
    let wt = params.weight.value.data();
    let bias = params.bias.value.data();
    let mut out = vec![0.0; d.oc * d.oh * d.ow];
    for o in 0..d.oc {
        let plane = &mut out[o * d.oh * d.ow..(o + 1) * d.oh * d.ow];
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..d.ic {
            let src = &x[i * d.h * d.w..(i + 1) * d.h * d.w];
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let wv = wt[((o * d.ic + i) * d.k + ky) * d.k + kx];
                    for oy in 0..d.oh {
                        let row = &src[(oy * d.stride + ky) * d.w + kx..];
                        let dst = &mut plane[oy * d.ow..(oy + 1) * d.ow];
                        if d.stride == 1 {
                            for (o_px, s) in dst.iter_mut().zip(&row[..d.ow]) {
                                *o_px += wv * s;
                            }
                        } else {
                            for (ox, o_px) in dst.iter_mut().enumerate() {
                                *o_px += wv * row[ox * d.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[d.oc, d.oh, d.ow], out)
}

/// Accumulates kernel and bias gradients and returns the input gradient.
pub fn conv2d_backward(
    input: &Tensor,
    params: &mut LayerParams,
    stride: usize,
    upstream: &Tensor,
) -> Result<Tensor> {
    conv2d_backward_impl(input, params, stride, upstream, true).map(|g| g.expect("requested"))
}

/// As [`conv2d_backward`] but skips the input gradient (first layer of a stack
/// whose input is not differentiable).
pub fn conv2d_backward_params(
    input: &Tensor,
    params: &mut LayerParams,
    stride: usize,
    upstream: &Tensor,
) -> Result<()> {
    conv2d_backward_impl(input, params, stride, upstream, false).map(|_| ())
}

fn conv2d_backward_impl(
    input: &Tensor,
    params: &mut LayerParams,
    stride: usize,
    upstream: &Tensor,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    let d = conv_dims(input, params, stride)?;
    let (uc, uh, uw) = upstream.dims3()?;
    dim_check("conv2d_backward", "upstream channels", d.oc, uc)?;
    dim_check("conv2d_backward", "upstream height", d.oh, uh)?;
    dim_check("conv2d_backward", "upstream width", d.ow, uw)?;

    let x = input.data();
    let up = upstream.data();
    let mut gin = if want_input_grad { vec![0.0; x.len()] } else { Vec::new() };
    let wt = params.weight.value.data().to_vec();
    let gw = params.weight.grad.data_mut();
    for o in 0..d.oc {
        let up_plane = &up[o * d.oh * d.ow..(o + 1) * d.oh * d.ow];
        for i in 0..d.ic {
            let src = &x[i * d.h * d.w..(i + 1) * d.h * d.w];
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let widx = ((o * d.ic + i) * d.k + ky) * d.k + kx;
                    let mut acc = 0.0;
                    for oy in 0..d.oh {
                        let row = &src[(oy * d.stride + ky) * d.w + kx..];
                        let g = &up_plane[oy * d.ow..(oy + 1) * d.ow];
                        if d.stride == 1 {
                            acc += g.iter().zip(&row[..d.ow]).map(|(a, b)| a * b).sum::<f64>();
                        } else {
                            for (ox, gv) in g.iter().enumerate() {
                                acc += gv * row[ox * d.stride];
                            }
                        }
                    }
                    gw[widx] += acc;
                    if want_input_grad {
                        let wv = wt[widx];
                        let gplane = &mut gin[i * d.h * d.w..(i + 1) * d.h * d.w];
                        for oy in 0..d.oh {
                            let base = (oy * d.stride + ky) * d.w + kx;
                            let g = &up_plane[oy * d.ow..(oy + 1) * d.ow];
                            if d.stride == 1 {
                                for (dst, gv) in gplane[base..base + d.ow].iter_mut().zip(g) {
                                    *dst += wv * gv;
                                }
                            } else {
                                for (ox, gv) in g.iter().enumerate() {
                                    gplane[base + ox * d.stride] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let gb = params.bias.grad.data_mut();
    for o in 0..d.oc {
        gb[o] += up[o * d.oh * d.ow..(o + 1) * d.oh * d.ow].iter().sum::<f64>();
    }
    if want_input_grad {
        Ok(Some(Tensor::from_vec(input.shape(), gin)?))
    } else {
        Ok(None)
    }
}

/// Affine map `W·x + b` on the flattened input. Output shape is `[out]`.
pub fn fc_forward(input: &Tensor, params: &LayerParams) -> Result<Tensor> {
    let ws = params.weight.value.shape();
    if ws.len() != 2 {
        return Err(Error::Validation(format!(
            "{}: dense weight must be [out, in], got {ws:?}",
            params.name
        )));
    }
    let (out, n_in) = (ws[0], ws[1]);
    dim_check("fc", "input features", n_in, input.len())?;
    let x = input.data();
    let wt = params.weight.value.data();
    let b = params.bias.value.data();
    let y = (0..out)
        .map(|o| {
            b[o] + wt[o * n_in..(o + 1) * n_in]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
        })
        .collect();
    Tensor::from_vec(&[out], y)
}

/// Input gradient has the same shape as `input`.
pub fn fc_backward(input: &Tensor, params: &mut LayerParams, upstream: &Tensor) -> Result<Tensor> {
    let ws = params.weight.value.shape().to_vec();
    let (out, n_in) = (ws[0], ws[1]);
    dim_check("fc_backward", "input features", n_in, input.len())?;
    dim_check("fc_backward", "upstream features", out, upstream.len())?;
    let x = input.data();
    let up = upstream.data();
    let mut gin = vec![0.0; n_in];
    {
        let wt = params.weight.value.data();
        for (o, &g) in up.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (dst, w) in gin.iter_mut().zip(&wt[o * n_in..(o + 1) * n_in]) {
                *dst += g * w;
            }
        }
    }
    let gw = params.weight.grad.data_mut();
    for (o, &g) in up.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (dst, v) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
            *dst += g * v;
        }
    }
    for (dst, g) in params.bias.grad.data_mut().iter_mut().zip(up) {
        *dst += g;
    }
    Tensor::from_vec(input.shape(), gin)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&x| x.max(0.0)).collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// `pre` is the forward input; the mask is `pre > 0`.
pub fn relu_backward(pre: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    dim_check("relu_backward", "element count", pre.len(), upstream.len())?;
    let data = pre
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(pre.shape(), data)
}

/// 2×2 non-overlapping mean pooling.
pub fn avgpool2_forward(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    if h % 2 != 0 {
        return Err(Error::Dimension { op: "avgpool2", axis: "height", expected: h + 1, found: h });
    }
    if w % 2 != 0 {
        return Err(Error::Dimension { op: "avgpool2", axis: "width", expected: w + 1, found: w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..];
        for oy in 0..oh {
            let r0 = &src[2 * oy * w..];
            let r1 = &src[(2 * oy + 1) * w..];
            for ox in 0..ow {
                out[(ch * oh + oy) * ow + ox] =
                    0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

pub fn avgpool2_backward(input_shape: &[usize], upstream: &Tensor) -> Result<Tensor> {
    let [c, h, w] = *input_shape else {
        return Err(Error::Dimension { op: "avgpool2_backward", axis: "rank", expected: 3, found: input_shape.len() });
    };
    let (uc, oh, ow) = upstream.dims3()?;
    dim_check("avgpool2_backward", "channels", c, uc)?;
    dim_check("avgpool2_backward", "height", h / 2, oh)?;
    dim_check("avgpool2_backward", "width", w / 2, ow)?;
    let up = upstream.data();
    let mut gin = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                gin[(ch * h + y) * w + x] = 0.25 * up[(ch * oh + y / 2) * ow + x / 2];
            }
        }
    }
    Tensor::from_vec(input_shape, gin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut p = x.clone();
                p.data_mut()[i] += h;
                let mut m = x.clone();
                m.data_mut()[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn one_by_one_kernel_doubles() {
        let p = LayerParams::new(
            "k",
            Tensor::filled(&[1, 1, 1, 1], 2.0),
            Tensor::zeros(&[1]),
        );
        let out = conv2d_forward(&Tensor::filled(&[1, 3, 3], 1.0), &p, 1).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut rng = Rng::new(1);
        let p = LayerParams::new(
            "k",
            Tensor::zeros(&[2, 3, 3, 3]),
            Tensor::from_vec(&[2], vec![0.7, 0.7]).unwrap(),
        );
        let out = conv2d_forward(&random_tensor(&[3, 6, 5], &mut rng), &p, 1).unwrap();
        assert_eq!(out.shape(), &[2, 4, 3]);
        assert!(out.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn ramp_with_averaging_kernel() {
        // Ramp x[r][c] = 4r + c; 2×2 mean at (r, c) = 4r + c + 2.5.
        let input = Tensor::from_vec(&[1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let p = LayerParams::new("avg", Tensor::filled(&[1, 1, 2, 2], 0.25), Tensor::zeros(&[1]));
        let out = conv2d_forward(&input, &p, 1).unwrap();
        let expected = [2.5, 3.5, 4.5, 6.5, 7.5, 8.5, 10.5, 11.5, 12.5];
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert_eq!(out.data(), &expected);
    }

    #[test]
    fn output_extent_follows_stride_rule() {
        let mut rng = Rng::new(2);
        let p = LayerParams::conv("c", 2, 1, 3, &mut rng);
        let out = conv2d_forward(&random_tensor(&[1, 9, 8], &mut rng), &p, 2).unwrap();
        assert_eq!(out.shape(), &[2, 4, 3]);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let mut rng = Rng::new(3);
        let p = LayerParams::conv("c", 2, 3, 3, &mut rng);
        let err = conv2d_forward(&Tensor::zeros(&[2, 5, 5]), &p, 1).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "input channels", .. }), "{err}");
        let err = conv2d_forward(&Tensor::zeros(&[3, 2, 5]), &p, 1).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "height", .. }), "{err}");
    }

    #[test]
    fn conv_backward_zero_upstream() {
        let mut rng = Rng::new(4);
        let mut p = LayerParams::conv("c", 2, 2, 3, &mut rng);
        let x = random_tensor(&[2, 5, 5], &mut rng);
        let g = conv2d_backward(&x, &mut p, 1, &Tensor::zeros(&[2, 3, 3])).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert!(p.weight.grad.data().iter().all(|&v| v == 0.0));
        assert!(p.bias.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_backward_scalar_chain_rule() {
        let mut p = LayerParams::new("k", Tensor::filled(&[1, 1, 1, 1], 3.0), Tensor::zeros(&[1]));
        let x = Tensor::filled(&[1, 1, 1], 2.0);
        let gin = conv2d_backward(&x, &mut p, 1, &Tensor::filled(&[1, 1, 1], 5.0)).unwrap();
        assert_eq!(gin.data(), &[15.0]);
        assert_eq!(p.weight.grad.data(), &[10.0]);
        assert_eq!(p.bias.grad.data(), &[5.0]);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for stride in [1, 2] {
            let mut rng = Rng::new(10 + stride as u64);
            let mut p = LayerParams::conv("c", 3, 2, 3, &mut rng);
            p.bias.value = random_tensor(&[3], &mut rng);
            let x = random_tensor(&[2, 7, 6], &mut rng);
            let probe = random_tensor(conv2d_forward(&x, &p, stride).unwrap().shape(), &mut rng);
            let gin = conv2d_backward(&x, &mut p, stride, &probe).unwrap();

            let fx = |xx: &Tensor| dot(&conv2d_forward(xx, &p, stride).unwrap(), &probe);
            for (a, n) in gin.data().iter().zip(central_diff(fx, &x, 1e-5)) {
                assert!(rel_err(*a, n) < 1e-6, "input grad {a} vs {n}");
            }
            let fw = |w: &Tensor| {
                let mut q = p.clone();
                q.weight.value = w.clone();
                dot(&conv2d_forward(&x, &q, stride).unwrap(), &probe)
            };
            for (a, n) in p.weight.grad.data().iter().zip(central_diff(fw, &p.weight.value, 1e-5)) {
                assert!(rel_err(*a, n) < 1e-6, "weight grad {a} vs {n}");
            }
            let fb = |b: &Tensor| {
                let mut q = p.clone();
                q.bias.value = b.clone();
                dot(&conv2d_forward(&x, &q, stride).unwrap(), &probe)
            };
            for (a, n) in p.bias.grad.data().iter().zip(central_diff(fb, &p.bias.value, 1e-5)) {
                assert!(rel_err(*a, n) < 1e-6, "bias grad {a} vs {n}");
            }
        }
    }

    #[test]
    fn params_only_backward_matches_full() {
        let mut rng = Rng::new(5);
        let mut p = LayerParams::conv("c", 2, 1, 3, &mut rng);
        let mut q = p.clone();
        let x = random_tensor(&[1, 6, 6], &mut rng);
        let up = random_tensor(&[2, 4, 4], &mut rng);
        conv2d_backward(&x, &mut p, 1, &up).unwrap();
        conv2d_backward_params(&x, &mut q, 1, &up).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn fc_identity_and_bias() {
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let p = LayerParams::new("fc", eye, Tensor::zeros(&[3]));
        let x = Tensor::from_vec(&[3], vec![0.3, -1.0, 2.5]).unwrap();
        assert_eq!(fc_forward(&x, &p).unwrap().data(), x.data());

        let b = Tensor::from_vec(&[2], vec![1.5, -0.5]).unwrap();
        let p = LayerParams::new("fc", Tensor::zeros(&[2, 3]), b.clone());
        assert_eq!(fc_forward(&x, &p).unwrap().data(), b.data());
    }

    #[test]
    fn fc_gradients_match_finite_differences() {
        let mut rng = Rng::new(6);
        let mut p = LayerParams::dense("fc", 4, 12, &mut rng);
        p.bias.value = random_tensor(&[4], &mut rng);
        let x = random_tensor(&[3, 2, 2], &mut rng);
        let probe = random_tensor(&[4], &mut rng);
        let gin = fc_backward(&x, &mut p, &probe).unwrap();
        assert_eq!(gin.shape(), x.shape());
        let fx = |xx: &Tensor| dot(&fc_forward(xx, &p).unwrap(), &probe);
        for (a, n) in gin.data().iter().zip(central_diff(fx, &x, 1e-5)) {
            assert!(rel_err(*a, n) < 1e-6);
        }
        let fw = |w: &Tensor| {
            let mut q = p.clone();
            q.weight.value = w.clone();
            dot(&fc_forward(&x, &q).unwrap(), &probe)
        };
        for (a, n) in p.weight.grad.data().iter().zip(central_diff(fw, &p.weight.value, 1e-5)) {
            assert!(rel_err(*a, n) < 1e-6);
        }
    }

    #[test]
    fn relu_cases() {
        let neg = Tensor::from_vec(&[4], vec![-1.0, -0.1, -3.0, -1e-9]).unwrap();
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
        let g = relu_backward(&neg, &Tensor::filled(&[4], 1.0)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));

        let pos = Tensor::from_vec(&[3], vec![0.5, 1.0, 7.0]).unwrap();
        assert_eq!(relu_forward(&pos), pos);
        let up = Tensor::from_vec(&[3], vec![2.0, -1.0, 0.25]).unwrap();
        assert_eq!(relu_backward(&pos, &up).unwrap(), up);
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let mut rng = Rng::new(7);
        let mut x = random_tensor(&[20], &mut rng);
        for v in x.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        let probe = random_tensor(&[20], &mut rng);
        let g = relu_backward(&x, &probe).unwrap();
        let f = |xx: &Tensor| dot(&relu_forward(xx), &probe);
        for (a, n) in g.data().iter().zip(central_diff(f, &x, 1e-5)) {
            assert!(rel_err(*a, n) < 1e-6 || (a.abs() < 1e-12 && n.abs() < 1e-12));
        }
    }

    #[test]
    fn avgpool_cases() {
        let c = Tensor::filled(&[2, 4, 6], 0.3);
        let p = avgpool2_forward(&c).unwrap();
        assert_eq!(p.shape(), &[2, 2, 3]);
        assert!(p.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));

        let x = Tensor::from_vec(&[1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(avgpool2_forward(&x).unwrap().data(), &[1.5]);

        let err = avgpool2_forward(&Tensor::zeros(&[1, 3, 4])).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "height", .. }));
    }

    #[test]
    fn avgpool_preserves_mean_and_gradient() {
        let mut rng = Rng::new(8);
        let x = random_tensor(&[3, 8, 10], &mut rng);
        let p = avgpool2_forward(&x).unwrap();
        assert!((p.mean() - x.mean()).abs() < 1e-12);

        let probe = random_tensor(p.shape(), &mut rng);
        let g = avgpool2_backward(x.shape(), &probe).unwrap();
        let f = |xx: &Tensor| dot(&avgpool2_forward(xx).unwrap(), &probe);
        for (a, n) in g.data().iter().zip(central_diff(f, &x, 1e-5)) {
            assert!(rel_err(*a, n) < 1e-6);
        }
    }
}

use super::layers::LayerParams;
use crate::error::{Error, Result};

/// SGD with momentum:
/// `velocity ← momentum·velocity + grad; value ← value − lr·velocity`,
/// then gradients are zeroed.
///
/// A non-finite gradient aborts before anything is modified.
pub fn sgd_step(params: &mut LayerParams, learning_rate: f64, momentum: f64) -> Result<()> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(Error::Config(format!("learning rate must be non-negative, got {learning_rate}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
    }
    for (suffix, p) in [("weight", &params.weight), ("bias", &params.bias)] {
        if let Some(i) = p.grad.data().iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient in {}.{suffix} at index {i}: {}",
                params.name,
                p.grad.data()[i]
            )));
        }
    }
    for p in [&mut params.weight, &mut params.bias] {
        let grads = p.grad.data().to_vec();
        for ((w, v), g) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.velocity.data_mut())
            .zip(grads)
        {
            *v = momentum * *v + g;
            *w -= learning_rate * *v;
        }
        p.grad.fill(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn scalar(w: f64) -> LayerParams {
        LayerParams::new("s", Tensor::filled(&[1, 1], w), Tensor::zeros(&[1]))
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = scalar(0.37);
        let before = p.clone();
        sgd_step(&mut p, 0.1, 0.9).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn plain_descent_without_momentum() {
        let mut p = scalar(1.0);
        p.weight.grad.data_mut()[0] = 2.0;
        p.bias.grad.data_mut()[0] = -1.0;
        sgd_step(&mut p, 0.25, 0.0).unwrap();
        assert_eq!(p.weight.value.data(), &[0.5]);
        assert_eq!(p.bias.value.data(), &[0.25]);
        assert_eq!(p.weight.grad.data(), &[0.0]);
    }

    #[test]
    fn two_momentum_steps() {
        let mut p = scalar(0.0);
        let mut prev = 0.0;
        let mut deltas = Vec::new();
        for _ in 0..2 {
            p.weight.grad.data_mut()[0] = 1.0;
            sgd_step(&mut p, 0.1, 0.9).unwrap();
            let w = p.weight.value.data()[0];
            deltas.push(w - prev);
            prev = w;
        }
        assert!((deltas[0] + 0.1).abs() < 1e-15);
        assert!((deltas[1] + 0.19).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = scalar(1.0);
        p.name = "head".into();
        p.bias.grad.data_mut()[0] = f64::NAN;
        let before = p.clone();
        let err = sgd_step(&mut p, 0.1, 0.9).unwrap_err();
        assert!(err.to_string().contains("head.bias"), "{err}");
        assert_eq!(p.weight.value, before.weight.value);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let mut p = scalar(1.0);
        assert!(sgd_step(&mut p, -0.1, 0.9).is_err());
        assert!(sgd_step(&mut p, 0.1, 1.0).is_err());
    }
}

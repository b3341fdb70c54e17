//! Dense tensors, hand-differentiated layers, SGD with momentum and an
//! explicit-state RNG. Everything is `f64`.

mod fingerprint;
mod layers;
mod optim;
mod rng;
mod tensor;

pub use layers::{
    avgpool2_backward, avgpool2_forward, conv2d_backward, conv2d_backward_params, conv2d_forward,
    fc_backward, fc_forward, relu_backward, relu_forward, LayerParams, Param,
};
pub use fingerprint::Fingerprint;
pub use optim::sgd_step;
pub use rng::Rng;
pub use tensor::Tensor;

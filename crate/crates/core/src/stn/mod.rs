//! Spatial transformer: localization networks regressing the 3-parameter
//! affine, grid generation, bilinear sampling, and the out-of-bounds
//! indicator with its displacement penalty.

mod affine;
mod localization;
mod sampler;

pub use affine::{
    affine_grid, affine_grid_backward, bounds_check, spatial_loss, spatial_loss_grad, AffineParams,
    BoundsReport, SamplingGrid, BOUNDS_EPS,
};
pub use localization::{LocCache, LocShape, LocalizationNet};
pub use sampler::{bilinear_sample, bilinear_sample_backward, push_cells, SampleGrads};

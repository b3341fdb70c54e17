//! The restricted affine family `[[s, 0, t_x], [0, s, t_y]]`, its sampling
//! grid, and the out-of-bounds indicator with the displacement penalty.
//!
//! Coordinates are normalized to `[-1, 1]²` with `(-1, -1)` at the centre
//! of the top-left pixel and `(1, 1)` at the centre of the bottom-right one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack on the corner rule so that the identity transform (corners
/// exactly at ±1) counts as in bounds.
pub const BOUNDS_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams { s: 1.0, tx: 0.0, ty: 0.0 };

    pub fn new(s: f64, tx: f64, ty: f64) -> Self {
        AffineParams { s, tx, ty }
    }

    pub fn centered(s: f64) -> Self {
        AffineParams { s, tx: 0.0, ty: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.tx.is_finite() && self.ty.is_finite()
    }

    /// The four ROI corners `(t_x ± s, t_y ± s)`.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let AffineParams { s, tx, ty } = *self;
        [
            (tx - s, ty - s),
            (tx + s, ty - s),
            (tx - s, ty + s),
            (tx + s, ty + s),
        ]
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.s, self.tx, self.ty]
    }
}

/// Source coordinates for every output pixel, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingGrid {
    pub out_h: usize,
    pub out_w: usize,
    /// `(x_src, y_src)` per output pixel.
    pub coords: Vec<(f64, f64)>,
}

impl SamplingGrid {
    pub fn get(&self, row: usize, col: usize) -> (f64, f64) {
        self.coords[row * self.out_w + col]
    }
}

/// Normalized lattice position of index `i` out of `n` (`n ≥ 2`).
pub(crate) fn lattice(i: usize, n: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (n - 1) as f64
}

pub fn affine_grid(params: &AffineParams, out_h: usize, out_w: usize) -> Result<SamplingGrid> {
    if out_h < 2 {
        return Err(Error::Dimension { op: "affine_grid", axis: "height", expected: 2, found: out_h });
    }
    if out_w < 2 {
        return Err(Error::Dimension { op: "affine_grid", axis: "width", expected: 2, found: out_w });
    }
    let xs: Vec<f64> = (0..out_w).map(|j| lattice(j, out_w)).collect();
    let mut coords = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let yo = lattice(i, out_h);
        for &xo in &xs {
            coords.push((params.s * xo + params.tx, params.s * yo + params.ty));
        }
    }
    Ok(SamplingGrid { out_h, out_w, coords })
}

/// Chains per-coordinate gradients back to `(d/ds, d/dt_x, d/dt_y)`.
pub fn affine_grid_backward(grid_grad: &[(f64, f64)], out_h: usize, out_w: usize) -> Result<[f64; 3]> {
    if grid_grad.len() != out_h * out_w {
        return Err(Error::Dimension {
            op: "affine_grid_backward",
            axis: "grid points",
            expected: out_h * out_w,
            found: grid_grad.len(),
        });
    }
    let xs: Vec<f64> = (0..out_w).map(|j| lattice(j, out_w)).collect();
    let (mut ds, mut dtx, mut dty) = (0.0, 0.0, 0.0);
    for i in 0..out_h {
        let yo = lattice(i, out_h);
        for (j, &xo) in xs.iter().enumerate() {
            let (gx, gy) = grid_grad[i * out_w + j];
            ds += gx * xo + gy * yo;
            dtx += gx;
            dty += gy;
        }
    }
    Ok([ds, dtx, dty])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    /// 1 when some ROI corner leaves `[-1, 1]²`.
    pub lambda: u8,
    /// `(C_x − s·t_x)² + (C_y − s·t_y)²` with the image centre `C = (0, 0)`.
    pub spatial_loss: f64,
}

impl BoundsReport {
    pub fn out_of_bounds(&self) -> bool {
        self.lambda == 1
    }
}

pub fn bounds_check(params: &AffineParams) -> BoundsReport {
    let out = params
        .corners()
        .iter()
        .any(|&(x, y)| x.abs() > 1.0 + BOUNDS_EPS || y.abs() > 1.0 + BOUNDS_EPS);
    BoundsReport {
        lambda: u8::from(out),
        spatial_loss: spatial_loss(params),
    }
}

pub fn spatial_loss(params: &AffineParams) -> f64 {
    let dx = params.s * params.tx;
    let dy = params.s * params.ty;
    dx * dx + dy * dy
}

/// Gradient of [`spatial_loss`] with respect to `(s, t_x, t_y)`.
pub fn spatial_loss_grad(params: &AffineParams) -> [f64; 3] {
    let AffineParams { s, tx, ty } = *params;
    [
        2.0 * s * (tx * tx + ty * ty),
        2.0 * s * s * tx,
        2.0 * s * s * ty,
    ]
}

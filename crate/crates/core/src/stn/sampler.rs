//! Bilinear sampling with zero padding and its exact backward pass.

use super::affine::SamplingGrid;
use crate::error::{dim_check, Result};
use crate::numcore::{Fingerprint, Tensor};

/// Distance under which a pixel coordinate is treated as lying exactly on
/// the lattice, so that sampling at pixel centres reproduces the input.
const LATTICE_SNAP: f64 = 1e-9;

/// Maps a normalized coordinate to `(floor index, fractional weight)` in
/// pixel units for an axis of `n` pixels.
fn locate(coord: f64, n: usize) -> (i64, f64) {
    let mut p = (coord + 1.0) * 0.5 * (n - 1) as f64;
    let r = p.round();
    if (p - r).abs() < LATTICE_SNAP {
        p = r;
    }
    let f = p.floor();
    (f as i64, p - f)
}

#[inline]
fn pixel(plane: &[f64], h: usize, w: usize, y: i64, x: i64) -> f64 {
    if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
        0.0
    } else {
        plane[y as usize * w + x as usize]
    }
}

/// Samples every channel of `image` at the grid's source coordinates.
/// Neighbours outside the image contribute zero.
pub fn bilinear_sample(image: &Tensor, grid: &SamplingGrid) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    let x = image.data();
    let n = grid.out_h * grid.out_w;
    let mut out = vec![0.0; c * n];
    for (k, &(gx, gy)) in grid.coords.iter().enumerate() {
        let (x0, wx) = locate(gx, w);
        let (y0, wy) = locate(gy, h);
        for ch in 0..c {
            let plane = &x[ch * h * w..(ch + 1) * h * w];
            let v00 = pixel(plane, h, w, y0, x0);
            let v01 = pixel(plane, h, w, y0, x0 + 1);
            let v10 = pixel(plane, h, w, y0 + 1, x0);
            let v11 = pixel(plane, h, w, y0 + 1, x0 + 1);
            out[ch * n + k] =
                (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
        }
    }
    Tensor::from_vec(&[c, grid.out_h, grid.out_w], out)
}

pub struct SampleGrads {
    /// `None` when the image gradient was not requested.
    pub image: Option<Tensor>,
    /// `(d/dx_src, d/dy_src)` per grid point, summed over channels.
    pub grid: Vec<(f64, f64)>,
}

pub fn bilinear_sample_backward(
    image: &Tensor,
    grid: &SamplingGrid,
    upstream: &Tensor,
    want_image_grad: bool,
) -> Result<SampleGrads> {
    let (c, h, w) = image.dims3()?;
    let (uc, uh, uw) = upstream.dims3()?;
    dim_check("bilinear_sample_backward", "channels", c, uc)?;
    dim_check("bilinear_sample_backward", "height", grid.out_h, uh)?;
    dim_check("bilinear_sample_backward", "width", grid.out_w, uw)?;
    let x = image.data();
    let up = upstream.data();
    let n = grid.out_h * grid.out_w;
    let sx = 0.5 * (w - 1) as f64;
    let sy = 0.5 * (h - 1) as f64;
    let mut gimg = if want_image_grad { vec![0.0; x.len()] } else { Vec::new() };
    let mut ggrid = vec![(0.0, 0.0); n];
    for (k, &(gx, gy)) in grid.coords.iter().enumerate() {
        let (x0, wx) = locate(gx, w);
        let (y0, wy) = locate(gy, h);
        let (mut dpx, mut dpy) = (0.0, 0.0);
        for ch in 0..c {
            let g = up[ch * n + k];
            if g == 0.0 {
                continue;
            }
            let plane = &x[ch * h * w..(ch + 1) * h * w];
            let v00 = pixel(plane, h, w, y0, x0);
            let v01 = pixel(plane, h, w, y0, x0 + 1);
            let v10 = pixel(plane, h, w, y0 + 1, x0);
            let v11 = pixel(plane, h, w, y0 + 1, x0 + 1);
            dpx += g * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
            dpy += g * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
            if want_image_grad {
                let gp = &mut gimg[ch * h * w..(ch + 1) * h * w];
                for (yy, xx, wt) in [
                    (y0, x0, (1.0 - wy) * (1.0 - wx)),
                    (y0, x0 + 1, (1.0 - wy) * wx),
                    (y0 + 1, x0, wy * (1.0 - wx)),
                    (y0 + 1, x0 + 1, wy * wx),
                ] {
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        gp[yy as usize * w + xx as usize] += g * wt;
                    }
                }
            }
        }
        ggrid[k] = (dpx * sx, dpy * sy);
    }
    let image_grad = if want_image_grad {
        Some(Tensor::from_vec(image.shape(), gimg)?)
    } else {
        None
    };
    Ok(SampleGrads {
        image: image_grad,
        grid: ggrid,
    })
}

/// Mixes the interpolation cell of every grid point into `fp`; the sampler
/// is smooth in the coordinates as long as no cell changes.
pub fn push_cells(fp: &mut Fingerprint, grid: &SamplingGrid, h: usize, w: usize) {
    for &(gx, gy) in &grid.coords {
        let (x0, _) = locate(gx, w);
        let (y0, _) = locate(gy, h);
        fp.push_u64((x0 as u64) << 32 ^ (y0 as u64 & 0xffff_ffff));
    }
}

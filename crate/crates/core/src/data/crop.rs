use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};

/// Side of a crop keeping `area_fraction` of a `size`-pixel side:
/// `floor(size · √fraction)`, forced even. A fraction of 1 keeps the
/// full side.
pub fn crop_side(size: usize, area_fraction: f64) -> Result<usize> {
    if !(area_fraction > 0.0 && area_fraction <= 1.0) {
        return Err(Error::Config(format!("crop area fraction must lie in (0, 1], got {area_fraction}")));
    }
    if area_fraction == 1.0 {
        return Ok(size);
    }
    let side = (size as f64 * area_fraction.sqrt()).floor() as usize;
    let side = side - side % 2;
    if side < 2 {
        return Err(Error::Config(format!(
            "crop of {area_fraction} leaves no pixels of a side of {size}"
        )));
    }
    Ok(side)
}

/// Top-left corner and extents of a random window covering `area_fraction`.
fn window(h: usize, w: usize, area_fraction: f64, rng: &mut Rng) -> Result<(usize, usize, usize, usize)> {
    let (ch, cw) = (crop_side(h, area_fraction)?, crop_side(w, area_fraction)?);
    if (ch, cw) == (h, w) {
        return Ok((0, 0, h, w));
    }
    let y0 = rng.below(h - ch + 1);
    let x0 = rng.below(w - cw + 1);
    Ok((y0, x0, ch, cw))
}

/// Random crop covering `area_fraction` of the image at a uniform offset.
pub fn crop_augment(image: &Tensor, area_fraction: f64, rng: &mut Rng) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    let (y0, x0, ch, cw) = window(h, w, area_fraction, rng)?;
    if (ch, cw) == (h, w) {
        return Ok(image.clone());
    }
    let src = image.data();
    let mut out = Vec::with_capacity(c * ch * cw);
    for k in 0..c {
        for y in 0..ch {
            let row = (k * h + y0 + y) * w + x0;
            out.extend_from_slice(&src[row..row + cw]);
        }
    }
    Tensor::from_vec(&[c, ch, cw], out)
}

/// A random crop left in place at native resolution, with everything
/// outside the window set to zero.
///
/// Resizing the crop back to full size would resample at a non-integer
/// ratio and smear pixel-scale texture, so the network input keeps the
/// original extents and pixel grid instead.
pub fn crop_view(image: &Tensor, area_fraction: f64, rng: &mut Rng) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    let (y0, x0, ch, cw) = window(h, w, area_fraction, rng)?;
    if (ch, cw) == (h, w) {
        return Ok(image.clone());
    }
    let src = image.data();
    let mut out = Tensor::zeros(&[c, h, w]);
    let dst = out.data_mut();
    for k in 0..c {
        for y in y0..y0 + ch {
            let row = (k * h + y) * w;
            dst[row + x0..row + x0 + cw].copy_from_slice(&src[row + x0..row + x0 + cw]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor {
        Tensor::from_vec(&[1, h, w], (0..h * w).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn side_rule() {
        assert_eq!(crop_side(64, 0.9).unwrap(), 60);
        assert_eq!(crop_side(64, 1.0).unwrap(), 64);
        assert_eq!(crop_side(63, 1.0).unwrap(), 63);
        assert_eq!(crop_side(32, 0.9).unwrap(), 30);
        assert!(crop_side(64, 0.0).is_err());
        assert!(crop_side(64, 1.5).is_err());
    }

    #[test]
    fn full_fraction_is_identity() {
        let img = ramp(8, 8);
        assert_eq!(crop_augment(&img, 1.0, &mut Rng::new(1)).unwrap(), img);
    }

    #[test]
    fn crops_are_contiguous_windows() {
        let img = ramp(64, 64);
        let c = crop_augment(&img, 0.9, &mut Rng::new(2)).unwrap();
        assert_eq!(c.shape(), &[1, 60, 60]);
        let d = c.data();
        let (y0, x0) = ((d[0] as usize) / 64, (d[0] as usize) % 64);
        assert!(y0 <= 4 && x0 <= 4);
        for y in 0..60 {
            for x in 0..60 {
                assert_eq!(d[y * 60 + x], ((y0 + y) * 64 + x0 + x) as f64);
            }
        }
    }

    #[test]
    fn offsets_vary() {
        let img = ramp(64, 64);
        let mut rng = Rng::new(3);
        let firsts: std::collections::HashSet<u64> = (0..20)
            .map(|_| crop_augment(&img, 0.9, &mut rng).unwrap().data()[0] as u64)
            .collect();
        assert!(firsts.len() > 1);
    }

    #[test]
    fn views_keep_the_pixel_grid() {
        let img = ramp(64, 64);
        let v = crop_view(&img, 0.9, &mut Rng::new(4)).unwrap();
        assert_eq!(v.shape(), &[1, 64, 64]);
        let kept: Vec<usize> = (0..64 * 64).filter(|&i| v.data()[i] != 0.0 || i == 0).collect();
        for &i in &kept {
            assert_eq!(v.data()[i], i as f64);
        }
        // A 60×60 window, except that the ramp's own zero at index 0 may hide.
        assert!(kept.len() == 3600 || kept.len() == 3601);
        assert_eq!(crop_view(&img, 1.0, &mut Rng::new(4)).unwrap(), img);
    }
}

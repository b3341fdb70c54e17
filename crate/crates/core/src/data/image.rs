use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Reads an 8-bit grayscale or RGB PNG as a `[C, H, W]` tensor in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| Error::io(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::io(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::io(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::io(
            path,
            format!("unsupported bit depth {:?} (only 8-bit is supported)", info.bit_depth),
        ));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::io(
                path,
                format!("unsupported color type {other:?} (expected grayscale or RGB)"),
            ))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = vec![0.0; channels * h * w];
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        for x in 0..w {
            for c in 0..channels {
                data[(c * h + y) * w + x] = f64::from(row[x * channels + c]) / 255.0;
            }
        }
    }
    Tensor::from_vec(&[channels, h, w], data)
}

/// Quantizes `[0, 1]` to 8 bits with round-half-up; out-of-range values clamp.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes a 1- or 3-channel tensor as an 8-bit PNG.
pub fn save_image(image: &Tensor, path: &Path) -> Result<()> {
    let (c, h, w) = image.dims3()?;
    let color = match c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => {
            return Err(Error::Validation(format!(
                "cannot save a {c}-channel image (expected 1 or 3)"
            )))
        }
    };
    let mut bytes = vec![0u8; c * h * w];
    let d = image.data();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                bytes[(y * w + x) * c + ch] = quantize(d[(ch * h + y) * w + x]);
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::io(path, e))?;
    writer.write_image_data(&bytes).map_err(|e| Error::io(path, e))?;
    writer.finish().map_err(|e| Error::io(path, e))
}

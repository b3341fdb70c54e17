//! Planted-attribute images: one textured "signal" square whose mean
//! intensity is the score, hidden among flat distractor squares.
//!
//! The signal is a checkerboard of `level ± contrast% · level`, so its
//! texture energy grows with the score while flat squares have none. Its
//! origin sits on the checker-cell lattice, which keeps the texture intact
//! under 2×2 average pooling.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{quantize, save_image};
use super::manifest::{Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};

/// Size regime of planted squares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Side 3/16 of the image (about 3.5% of its area), checker cells of
    /// 1/32 image side.
    Fine,
    /// Side 37.5–50% of the image, checker cells of 1/16 image side.
    Coarse,
    /// Fine or coarse with equal probability, per image.
    Mixed,
    /// The signal covers the whole image.
    Full,
}

impl Placement {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(Placement::Fine),
            "coarse" => Ok(Placement::Coarse),
            "mixed" => Ok(Placement::Mixed),
            "full" => Ok(Placement::Full),
            other => Err(Error::Config(format!(
                "unknown placement {other:?} (expected fine, coarse, mixed or full)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub image_size: usize,
    pub placement: Placement,
    pub distractors: usize,
    /// Number of categories; 0 disables them.
    pub n_categories: usize,
    /// Probability that an image's category is its score-quantile bin
    /// rather than a uniform draw.
    pub category_correlation: f64,
    /// Checker amplitude as a percentage of the signal level, so the
    /// texture's energy grows with the score.
    pub contrast: u8,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 1000,
            image_size: 64,
            placement: Placement::Fine,
            distractors: 5,
            n_categories: 0,
            category_correlation: 0.8,
            contrast: 100,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn border(&self) -> usize {
        if self.n_categories > 0 {
            (self.image_size / 32).max(1)
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n < 2 {
            return bad(format!("need at least 2 images, got {}", self.n));
        }
        if self.image_size < 16 || self.image_size % 16 != 0 {
            return bad(format!("image size must be a positive multiple of 16, got {}", self.image_size));
        }
        if self.n_categories == 1 {
            return bad("a single category carries no information; use 0 or at least 2".into());
        }
        if self.n_categories > 0 && self.placement == Placement::Full {
            return bad("full-image placement leaves no room for category borders".into());
        }
        if !(0.0..=1.0).contains(&self.category_correlation) {
            return bad(format!("category correlation must lie in [0, 1], got {}", self.category_correlation));
        }
        if self.contrast == 0 || self.contrast > 100 {
            return bad(format!("contrast must lie in 1..=100, got {}", self.contrast));
        }
        Ok(())
    }
}

/// A flat distractor square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Square {
    pub x: usize,
    pub y: usize,
    pub side: usize,
    pub level: u8,
}

/// Where and how the signal was planted in one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub path: PathBuf,
    pub score: f64,
    /// Mean 8-bit level of the signal square.
    pub level: u8,
    pub x: usize,
    pub y: usize,
    pub side: usize,
    pub cell: usize,
    pub coarse: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<u32>,
    pub distractors: Vec<Square>,
}

pub struct SynthImage {
    pub image: Tensor,
    pub record: PlacementRecord,
}

/// Darkest signal level, so even the faintest texture is visible.
const MIN_LEVEL: usize = 16;

fn even_in(lo: usize, hi: usize, step: usize, rng: &mut Rng) -> usize {
    let lo = lo.div_ceil(step) * step;
    let hi = (hi / step * step).max(lo);
    lo + step * rng.below((hi - lo) / step + 1)
}

/// Side and checker cell of a square under `placement`.
fn draw_size(size: usize, placement: Placement, rng: &mut Rng) -> (usize, usize, bool) {
    let coarse = match placement {
        Placement::Fine => false,
        Placement::Coarse => true,
        Placement::Mixed => rng.coin(),
        Placement::Full => return (size, 1, true),
    };
    if coarse {
        let cell = size / 16;
        (even_in(size * 3 / 8, size / 2, 2 * cell, rng), cell, true)
    } else {
        let cell = (size / 32).max(1);
        (even_in(size * 3 / 16, size * 3 / 16, 2 * cell, rng), cell, false)
    }
}

fn fill(pixels: &mut [u8], size: usize, sq: &Square) {
    for y in sq.y..sq.y + sq.side {
        pixels[y * size + sq.x..y * size + sq.x + sq.side].fill(sq.level);
    }
}

/// Draws all images in memory. Paths in the records are bare file names.
pub fn synth_render(config: &SynthConfig) -> Result<Vec<SynthImage>> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);
    let size = config.image_size;
    let border = config.border();
    let inner = size - 2 * border;
    // Highest level whose bright cells still fit in 8 bits.
    let top = 255 * 100 / (100 + config.contrast as usize);
    let mut out = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let mut pixels = vec![0u8; size * size];
        let mut distractors = Vec::with_capacity(config.distractors);
        let placement = if config.placement == Placement::Full { Placement::Fine } else { config.placement };
        for _ in 0..config.distractors {
            let (side, _, _) = draw_size(size, placement, &mut rng);
            let sq = Square {
                x: border + rng.below(inner - side + 1),
                y: border + rng.below(inner - side + 1),
                side,
                level: rng.below(256) as u8,
            };
            fill(&mut pixels, size, &sq);
            distractors.push(sq);
        }
        let (side, cell, coarse) = draw_size(size, config.placement, &mut rng);
        let level = (MIN_LEVEL + rng.below(top - MIN_LEVEL + 1)) as u8;
        let delta = ((level as usize * config.contrast as usize + 50) / 100) as u8;
        let slots = (inner - side) / cell + 1;
        let (x0, y0) = (border + cell * rng.below(slots), border + cell * rng.below(slots));
        for y in 0..side {
            for x in 0..side {
                let hi = (x / cell + y / cell) % 2 == 0;
                pixels[(y0 + y) * size + x0 + x] = if hi { level + delta } else { level - delta };
            }
        }
        out.push((
            pixels,
            PlacementRecord {
                path: PathBuf::from(format!("img_{i:05}.png")),
                score: f64::from(level) / 255.0,
                level,
                x: x0,
                y: y0,
                side,
                cell,
                coarse,
                category: None,
                distractors,
            },
        ));
    }

    if config.n_categories > 0 {
        let k = config.n_categories;
        let mut order: Vec<usize> = (0..out.len()).collect();
        order.sort_by(|&a, &b| out[a].1.level.cmp(&out[b].1.level).then(a.cmp(&b)));
        let mut bin = vec![0; out.len()];
        for (rank, &i) in order.iter().enumerate() {
            bin[i] = rank * k / out.len();
        }
        for (i, (pixels, rec)) in out.iter_mut().enumerate() {
            let cat = if rng.uniform() < config.category_correlation { bin[i] } else { rng.below(k) };
            let v = quantize((cat + 1) as f64 / (k + 1) as f64);
            for y in 0..size {
                for x in 0..size {
                    if x < border || y < border || x >= size - border || y >= size - border {
                        pixels[y * size + x] = v;
                    }
                }
            }
            rec.category = Some(cat as u32);
        }
    }

    Ok(out
        .into_iter()
        .map(|(pixels, record)| SynthImage {
            image: Tensor::from_vec(
                &[1, size, size],
                pixels.into_iter().map(|p| f64::from(p) / 255.0).collect(),
            )
            .expect("sized buffer"),
            record,
        })
        .collect())
}

pub struct SynthOutput {
    pub manifest: Manifest,
    pub records: Vec<PlacementRecord>,
    pub manifest_path: PathBuf,
    pub placements_path: PathBuf,
}

/// Writes PNGs, `manifest.jsonl` and `placements.jsonl` into `dir`.
pub fn synth_generate(config: &SynthConfig, dir: &Path) -> Result<SynthOutput> {
    let images = synth_render(config)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(images.len());
    let mut records = Vec::with_capacity(images.len());
    let mut lines = String::new();
    for img in images {
        let path = dir.join(&img.record.path);
        save_image(&img.image, &path)?;
        entries.push(ManifestEntry {
            path,
            score: img.record.score,
            category: img.record.category,
        });
        lines.push_str(&serde_json::to_string(&img.record).expect("record serializes"));
        lines.push('\n');
        records.push(img.record);
    }
    let manifest = Manifest::new(entries)?;
    let manifest_path = dir.join("manifest.jsonl");
    manifest.save(&manifest_path)?;
    let placements_path = dir.join("placements.jsonl");
    fs::write(&placements_path, lines).map_err(|e| Error::io(&placements_path, e))?;
    Ok(SynthOutput {
        manifest,
        records,
        manifest_path,
        placements_path,
    })
}

pub fn load_placements(path: &Path) -> Result<Vec<PlacementRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Mean 8-bit level inside the recorded signal square, recomputed from
/// pixels. Integer arithmetic keeps equal levels exactly equal.
pub fn oracle_level(image: &Tensor, record: &PlacementRecord) -> Result<f64> {
    let (_, h, w) = image.dims3()?;
    if record.x + record.side > w || record.y + record.side > h {
        return Err(Error::Validation(format!(
            "placement of {} lies outside a {h}x{w} image",
            record.path.display()
        )));
    }
    let d = image.data();
    let mut sum = 0u64;
    for y in record.y..record.y + record.side {
        for x in record.x..record.x + record.side {
            sum += u64::from(quantize(d[y * w + x]));
        }
    }
    Ok(sum as f64 / (record.side * record.side) as f64)
}

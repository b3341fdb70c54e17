use serde::{Deserialize, Serialize};

use super::category::CategoryNet;
use super::extractor::{ExtractorCache, FeatureExtractor};
use super::loss::{check_label, combined_loss, rank_loss_unchecked, sigmoid, LossBreakdown};
use crate::error::{dim_check, Error, Result};
use crate::numcore::{avgpool2_forward, fc_backward, fc_forward, Fingerprint, LayerParams, Rng, Tensor};
use crate::stn::{
    affine_grid, affine_grid_backward, bilinear_sample, bilinear_sample_backward, bounds_check,
    push_cells, spatial_loss_grad, AffineParams, BoundsReport, LocCache, LocShape, LocalizationNet,
    SamplingGrid,
};

/// Architecture family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One spatial transformer; features of the image and its ROI.
    Base,
    /// Three spatial transformers on a 1×, ½×, ¼× pyramid.
    M,
    /// `Base` plus frozen category features.
    C,
    /// `M` plus frozen category features.
    Mc,
    /// No spatial transformer; features of the whole image only.
    #[serde(alias = "siamese-ablation")]
    Siamese,
    /// `Siamese` features with a squared-error head trained on raw scores.
    #[serde(alias = "regression-ablation")]
    Regression,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Base,
        Variant::M,
        Variant::C,
        Variant::Mc,
        Variant::Siamese,
        Variant::Regression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::M => "m",
            Variant::C => "c",
            Variant::Mc => "mc",
            Variant::Siamese => "siamese",
            Variant::Regression => "regression",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "m" => Ok(Variant::M),
            "c" => Ok(Variant::C),
            "mc" => Ok(Variant::Mc),
            "siamese" | "siamese-ablation" => Ok(Variant::Siamese),
            "regression" | "regression-ablation" => Ok(Variant::Regression),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?} (expected base, m, c, mc, siamese or regression)"
            ))),
        }
    }

    /// Number of spatial transformer levels.
    pub fn levels(self) -> usize {
        match self {
            Variant::Base | Variant::C => 1,
            Variant::M | Variant::Mc => 3,
            Variant::Siamese | Variant::Regression => 0,
        }
    }

    pub fn uses_category(self) -> bool {
        matches!(self, Variant::C | Variant::Mc)
    }

    pub fn is_pairwise(self) -> bool {
        self != Variant::Regression
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Shape of a scoring network. Persisted in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub variant: Variant,
    pub image_size: usize,
    pub in_channels: usize,
    /// Side of every sub-image fed to the feature extractor.
    pub roi_size: usize,
    pub feature_dim: usize,
    pub extractor_channels: [usize; 3],
    pub loc_channels: [usize; 2],
    pub loc_hidden: usize,
    /// Localization nets see their level image average-pooled down to
    /// at most this side.
    pub loc_input_size: usize,
    /// Initial ROI scale of the first level; level `j` starts at `base_scale / 2^j`.
    pub base_scale: f64,
    pub category_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            variant: Variant::Base,
            image_size: 64,
            in_channels: 1,
            roi_size: 32,
            feature_dim: 32,
            extractor_channels: [4, 8, 8],
            loc_channels: [4, 8],
            loc_hidden: 32,
            loc_input_size: 32,
            base_scale: 0.5,
            category_dim: 16,
        }
    }
}

impl ArchConfig {
    /// Number of 2×2 poolings that take the full image to `roi_size`.
    fn global_pool_steps(&self) -> Result<usize> {
        let mut side = self.image_size;
        let mut steps = 0;
        while side > self.roi_size && side % 2 == 0 {
            side /= 2;
            steps += 1;
        }
        if side != self.roi_size {
            return Err(Error::Config(format!(
                "image size {} must be roi size {} times a power of two",
                self.image_size, self.roi_size
            )));
        }
        Ok(steps)
    }

    /// Localization network shape for pyramid level `j`.
    pub fn loc_shape(&self, j: usize) -> LocShape {
        let input_size = self.image_size >> j;
        let mut pool = 0;
        while (input_size >> pool) > self.loc_input_size && (input_size >> pool) % 2 == 0 {
            pool += 1;
        }
        LocShape {
            in_channels: self.in_channels,
            input_size,
            pool,
            conv1: self.loc_channels[0],
            conv2: self.loc_channels[1],
            hidden: self.loc_hidden,
        }
    }

    pub fn level_scales(&self) -> Vec<f64> {
        (0..self.variant.levels())
            .map(|j| self.base_scale / f64::from(1u32 << j))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("in_channels", self.in_channels),
            ("roi_size", self.roi_size),
            ("feature_dim", self.feature_dim),
            ("loc_hidden", self.loc_hidden),
            ("loc_input_size", self.loc_input_size),
            ("category_dim", self.category_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.extractor_channels.contains(&0) || self.loc_channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if !(self.base_scale.is_finite() && self.base_scale > 0.0) {
            return Err(Error::Config(format!("base_scale must be positive, got {}", self.base_scale)));
        }
        self.global_pool_steps()?;
        if FeatureExtractor::final_side(self.roi_size).is_none() {
            return Err(Error::Config(format!(
                "roi size {} does not fit the feature extractor",
                self.roi_size
            )));
        }
        for j in 0..self.variant.levels() {
            let factor = 1usize << j;
            if self.image_size % factor != 0 {
                return Err(Error::Dimension {
                    op: "pyramid",
                    axis: "image size",
                    expected: self.image_size.next_multiple_of(factor),
                    found: self.image_size,
                });
            }
            let side = self.image_size / factor;
            if self.loc_shape(j).conv_input_side().and_then(LocShape::pooled_side).is_none() {
                return Err(Error::Config(format!(
                    "pyramid level {} (side {side}) is too small for the localization network",
                    j + 1
                )));
            }
        }
        Ok(())
    }

    /// Width of the concatenated feature vector `t_R`.
    pub fn head_width(&self) -> usize {
        let category = if self.variant.uses_category() { self.category_dim } else { 0 };
        (1 + self.variant.levels()) * self.feature_dim + category
    }
}

/// Result of scoring one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTrace {
    pub v: f64,
    pub affines: Vec<AffineParams>,
    pub bounds: Vec<BoundsReport>,
    /// Concatenated features `t_R` (the ranking head's input).
    pub features: Vec<f64>,
}

struct LevelCache {
    input: Tensor,
    loc: LocCache,
    grid: SamplingGrid,
    roi: ExtractorCache,
}

/// Everything one branch's backward pass needs.
pub struct BranchCache {
    global: ExtractorCache,
    levels: Vec<LevelCache>,
    t_r: Tensor,
}

impl BranchCache {
    fn push_fingerprint(&self, fp: &mut Fingerprint) {
        self.global.push_masks(fp);
        for level in &self.levels {
            level.loc.push_masks(fp);
            let (_, h, w) = level.input.dims3().expect("rank-3 level input");
            push_cells(fp, &level.grid, h, w);
            level.roi.push_masks(fp);
        }
    }
}

/// Supervision for one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairTarget {
    /// 1 when the left image has the stronger attribute, 0 when the right
    /// does, 0.5 for ties.
    pub y: f64,
    /// Raw attribute scores, used by the regression ablation.
    pub scores: Option<(f64, f64)>,
}

impl PairTarget {
    pub fn label(y: f64) -> Self {
        PairTarget { y, scores: None }
    }
}

pub struct PairForward {
    pub breakdown: LossBreakdown,
    pub traces: [ScoreTrace; 2],
    target: PairTarget,
    caches: [BranchCache; 2],
}

impl PairForward {
    /// Identifies the piecewise-smooth region the forward pass fell in:
    /// relu masks, sampler cells and indicators.
    pub fn fingerprint(&self) -> u64 {
        let mut fp = Fingerprint::default();
        for c in &self.caches {
            c.push_fingerprint(&mut fp);
        }
        for &l in self.breakdown.lambdas.iter().flatten() {
            fp.push_u64(u64::from(l));
        }
        fp.value()
    }
}

/// One siamese scoring network. Both branches of a pair run through this
/// single set of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoringNet {
    pub arch: ArchConfig,
    pub stns: Vec<LocalizationNet>,
    pub extractor: FeatureExtractor,
    pub head: LayerParams,
    /// Frozen; never receives gradients.
    pub category: Option<CategoryNet>,
}

impl ScoringNet {
    /// Fresh network. Localization nets start at their level's scale with
    /// zero translation and the ranking head starts at zero, so an
    /// untrained network scores every image identically.
    pub fn new(arch: ArchConfig, category: Option<CategoryNet>, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        match (&category, arch.variant.uses_category()) {
            (None, true) => {
                return Err(Error::Config(format!(
                    "variant {} requires a pre-trained category network",
                    arch.variant
                )))
            }
            (Some(_), false) => {
                return Err(Error::Config(format!(
                    "variant {} takes no category network",
                    arch.variant
                )))
            }
            (Some(c), true) => {
                dim_check("category", "feature width", arch.category_dim, c.category_dim())?;
                dim_check("category", "input size", arch.image_size, c.input_size)?;
                dim_check("category", "channels", arch.in_channels, c.in_channels)?;
            }
            (None, false) => {}
        }
        let mut stns = Vec::new();
        for (j, scale) in arch.level_scales().into_iter().enumerate() {
            stns.push(LocalizationNet::new(&format!("stn{}", j + 1), arch.loc_shape(j), scale, rng)?);
        }
        let extractor = FeatureExtractor::new(
            arch.in_channels,
            arch.roi_size,
            arch.extractor_channels,
            arch.feature_dim,
            rng,
        )?;
        let head = LayerParams::zeros("head", &[1, arch.head_width()], 1);
        Ok(ScoringNet {
            arch,
            stns,
            extractor,
            head,
            category,
        })
    }

    pub fn variant(&self) -> Variant {
        self.arch.variant
    }

    /// Learnable layers in a fixed order: localization nets, extractor, head.
    pub fn layers(&self) -> Vec<&LayerParams> {
        let mut out: Vec<&LayerParams> = Vec::new();
        for s in &self.stns {
            out.extend(s.layers());
        }
        out.extend(self.extractor.layers());
        out.push(&self.head);
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LayerParams> {
        let mut out: Vec<&mut LayerParams> = Vec::new();
        for s in &mut self.stns {
            out.extend(s.layers_mut());
        }
        out.extend(self.extractor.layers_mut());
        out.push(&mut self.head);
        out
    }

    pub fn frozen_layers(&self) -> Vec<&LayerParams> {
        self.category.iter().flat_map(|c| c.layers()).collect()
    }

    pub fn zero_grad(&mut self) {
        for l in self.layers_mut() {
            l.zero_grad();
        }
    }

    /// Number of input views a forward pass consumes: one per pyramid
    /// level, or one for the STN-free ablations.
    pub fn n_views(&self) -> usize {
        self.arch.variant.levels().max(1)
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let (c, h, w) = image.dims3()?;
        dim_check("score", "channels", self.arch.in_channels, c)?;
        dim_check("score", "height", self.arch.image_size, h)?;
        dim_check("score", "width", self.arch.image_size, w)?;
        Ok(())
    }

    /// Scores one image (no augmentation).
    pub fn score(&self, image: &Tensor) -> Result<ScoreTrace> {
        let views = vec![image; self.n_views()];
        self.forward_branch(&views).map(|(t, _)| t)
    }

    /// Single-scale scoring: `t_R = [f_R(I), f_R(S(I))]`.
    pub fn score_single(&self, image: &Tensor) -> Result<ScoreTrace> {
        if self.arch.variant.levels() != 1 {
            return Err(Error::Config(format!("{} is not a single-scale variant", self.variant())));
        }
        self.score(image)
    }

    /// Pyramid scoring over `I`, `I×0.5`, `I×0.25`.
    pub fn score_pyramid(&self, image: &Tensor) -> Result<ScoreTrace> {
        if self.arch.variant.levels() != 3 {
            return Err(Error::Config(format!("{} is not a multiscale variant", self.variant())));
        }
        self.score(image)
    }

    pub fn score_with_category(&self, image: &Tensor) -> Result<ScoreTrace> {
        if self.category.is_none() {
            return Err(Error::Config(format!("{} has no category network", self.variant())));
        }
        self.score(image)
    }

    /// Frozen category features of an image, if the variant has them.
    pub fn category_features(&self, image: &Tensor) -> Result<Option<Tensor>> {
        self.category.as_ref().map(|c| c.features(image)).transpose()
    }

    /// Forward pass of one branch. `views[j]` is the full-size input of
    /// level `j`; view 0 also feeds the whole-image features and the
    /// category network.
    pub fn forward_branch(&self, views: &[&Tensor]) -> Result<(ScoreTrace, BranchCache)> {
        dim_check("score", "views", self.n_views(), views.len())?;
        for v in views {
            self.check_image(v)?;
        }
        let mut global_in = views[0].clone();
        for _ in 0..self.arch.global_pool_steps()? {
            global_in = avgpool2_forward(&global_in)?;
        }
        let (global_feat, global) = self.extractor.forward(&global_in)?;
        let mut t_r: Vec<f64> = global_feat.into_vec();

        let mut levels = Vec::with_capacity(self.stns.len());
        let mut affines = Vec::with_capacity(self.stns.len());
        let mut bounds = Vec::with_capacity(self.stns.len());
        for (j, stn) in self.stns.iter().enumerate() {
            let mut input = views[j].clone();
            for _ in 0..j {
                input = avgpool2_forward(&input)?;
            }
            let (affine, loc) = stn.forward(&input)?;
            if !affine.is_finite() {
                return Err(Error::Numerical(format!("stn{} produced non-finite affine {affine:?}", j + 1)));
            }
            let grid = affine_grid(&affine, self.arch.roi_size, self.arch.roi_size)?;
            let roi_img = bilinear_sample(&input, &grid)?;
            let (feat, roi) = self.extractor.forward(&roi_img)?;
            t_r.extend_from_slice(feat.data());
            affines.push(affine);
            bounds.push(bounds_check(&affine));
            levels.push(LevelCache { input, loc, grid, roi });
        }
        if let Some(cat) = &self.category {
            t_r.extend_from_slice(cat.features(views[0])?.data());
        }
        let t_r = Tensor::from_vec(&[t_r.len()], t_r)?;
        let v = fc_forward(&t_r, &self.head)?.data()[0];
        let trace = ScoreTrace {
            v,
            affines,
            bounds,
            features: t_r.data().to_vec(),
        };
        Ok((trace, BranchCache { global, levels, t_r }))
    }

    /// Exact regions (the bilinear-sampled sub-images) the extractor sees
    /// for each pyramid level of an un-augmented image.
    pub fn regions(&self, image: &Tensor) -> Result<Vec<(AffineParams, BoundsReport, Tensor)>> {
        self.check_image(image)?;
        let mut out = Vec::new();
        for (j, stn) in self.stns.iter().enumerate() {
            let mut input = image.clone();
            for _ in 0..j {
                input = avgpool2_forward(&input)?;
            }
            let affine = stn.localize(&input)?;
            let grid = affine_grid(&affine, self.arch.roi_size, self.arch.roi_size)?;
            out.push((affine, bounds_check(&affine), bilinear_sample(&input, &grid)?));
        }
        Ok(out)
    }

    /// Forward pass of a pair plus its loss terms.
    pub fn forward_pair(&self, left: &[&Tensor], right: &[&Tensor], target: PairTarget) -> Result<PairForward> {
        check_label(target.y)?;
        let (t1, c1) = self.forward_branch(left)?;
        let (t2, c2) = self.forward_branch(right)?;
        let breakdown = if self.variant().is_pairwise() {
            let rank = rank_loss_unchecked(t1.v - t2.v, target.y);
            combined_loss(rank, &t1.bounds, &t2.bounds)
        } else {
            let (s1, s2) = target.scores.ok_or_else(|| {
                Error::Config("regression variant needs raw scores for both images".into())
            })?;
            let mse = 0.5 * ((t1.v - s1).powi(2) + (t2.v - s2).powi(2));
            LossBreakdown::from_parts(mse, [vec![], vec![]], [vec![], vec![]])
        };
        Ok(PairForward {
            breakdown,
            traces: [t1, t2],
            target,
            caches: [c1, c2],
        })
    }

    /// Accumulates `scale · ∂L/∂θ` into every learnable parameter.
    ///
    /// The rank term reaches all learnable layers through both branches;
    /// spatial terms reach only the localization nets; the category
    /// network receives nothing. Indicators are constants here.
    pub fn backward_pair(&mut self, fwd: &PairForward, scale: f64) -> Result<()> {
        let [t1, t2] = &fwd.traces;
        let (dv1, dv2) = if self.variant().is_pairwise() {
            let g = fwd.breakdown.gate() * (sigmoid(t1.v - t2.v) - fwd.target.y);
            (g, -g)
        } else {
            let (s1, s2) = fwd.target.scores.expect("checked in forward");
            (t1.v - s1, t2.v - s2)
        };
        for (branch, (dv, trace)) in [(dv1, t1), (dv2, t2)].into_iter().enumerate() {
            let spatial: Vec<[f64; 3]> = trace
                .affines
                .iter()
                .zip(&trace.bounds)
                .map(|(a, b)| {
                    if b.out_of_bounds() {
                        spatial_loss_grad(a).map(|g| g * scale)
                    } else {
                        [0.0; 3]
                    }
                })
                .collect();
            self.backward_branch(&fwd.caches[branch], dv * scale, &spatial)?;
        }
        Ok(())
    }

    fn backward_branch(&mut self, cache: &BranchCache, dv: f64, spatial: &[[f64; 3]]) -> Result<()> {
        let mut affine_grads: Vec<[f64; 3]> = spatial.to_vec();
        if dv != 0.0 {
            let g_t = fc_backward(&cache.t_r, &mut self.head, &Tensor::from_vec(&[1], vec![dv])?)?;
            let f = self.arch.feature_dim;
            let g = g_t.data();
            self.extractor
                .backward(&cache.global, &Tensor::from_vec(&[f], g[..f].to_vec())?, false)?;
            for (j, level) in cache.levels.iter().enumerate() {
                let slice = Tensor::from_vec(&[f], g[(j + 1) * f..(j + 2) * f].to_vec())?;
                let g_roi = self
                    .extractor
                    .backward(&level.roi, &slice, true)?
                    .expect("input gradient requested");
                let grads = bilinear_sample_backward(&level.input, &level.grid, &g_roi, false)?;
                let g_aff = affine_grid_backward(&grads.grid, level.grid.out_h, level.grid.out_w)?;
                for k in 0..3 {
                    affine_grads[j][k] += g_aff[k];
                }
            }
        }
        for ((stn, level), g) in self.stns.iter_mut().zip(&cache.levels).zip(affine_grads) {
            stn.backward(&level.loc, g)?;
        }
        Ok(())
    }
}

use super::manifest::Manifest;
use crate::error::Result;
use crate::numcore::Tensor;

/// A manifest with all of its images decoded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub images: Vec<Tensor>,
}

impl Dataset {
    pub fn load(manifest: Manifest) -> Result<Self> {
        let images = manifest.load_images()?;
        Ok(Dataset { manifest, images })
    }

    pub fn from_parts(manifest: Manifest, images: Vec<Tensor>) -> Self {
        assert_eq!(manifest.len(), images.len());
        Dataset { manifest, images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn score(&self, i: usize) -> f64 {
        self.manifest.entries[i].score
    }
}

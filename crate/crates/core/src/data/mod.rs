//! Samples, PNG ingestion, deterministic splitting, augmentation, the
//! synthetic scene generator and the on-disk dataset layout.

mod layout;
mod png;
mod prefetch;
mod synth;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::SegMask;
use crate::tensor::{Shape, Tensor};

pub use layout::{load_dataset, write_synthetic_dataset, Dataset, DatasetManifest, ManifestEntry, SplitName, MANIFEST_FILE};
pub use png::{load_mask, load_rgb, load_sample, quantize, save_gray, save_mask, save_rgb, MASK_THRESHOLD};
pub use prefetch::Prefetch;
pub use synth::{synth_scene, MIN_BLOB_AREA};

#[derive(Clone, Debug)]
pub struct Sample {
    /// `(1, 3, H, W)` in `[0, 1]`.
    pub image: Tensor,
    pub mask: SegMask,
    /// Fold-ridge pixels; never overlaps the mask.
    pub hf_region: Option<SegMask>,
    pub id: String,
}

impl Sample {
    pub fn new(image: Tensor, mask: SegMask, hf_region: Option<SegMask>, id: impl Into<String>) -> Result<Self> {
        let s = image.shape();
        if s.b() != 1 || s.c() != 3 {
            return Err(Error::shape("Sample", format!("image must be (1, 3, H, W), got {s}")));
        }
        if mask.dims() != (s.h(), s.w()) {
            return Err(Error::shape("Sample", format!("mask {:?} vs image {s}", mask.dims())));
        }
        if let Some(hf) = &hf_region {
            if hf.dims() != mask.dims() {
                return Err(Error::shape("Sample", "hf region and mask sizes differ"));
            }
            if !hf.is_disjoint(&mask) {
                return Err(Error::Invalid("hf region overlaps mask positives".into()));
            }
        }
        Ok(Sample {
            image,
            mask,
            hf_region,
            id: id.into(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    /// Resizes the image bilinearly and the masks by nearest neighbour.
    pub fn resized(&self, size: usize) -> Result<Sample> {
        if self.dims() == (size, size) {
            return Ok(self.clone());
        }
        Ok(Sample {
            image: self.image.resize_bilinear(size, size)?.detach(),
            mask: self.mask.resize_nearest(size, size),
            hf_region: self.hf_region.as_ref().map(|m| m.resize_nearest(size, size)),
            id: self.id.clone(),
        })
    }

    pub fn vflip(&self) -> Sample {
        Sample {
            image: self.image.vflip().detach(),
            mask: self.mask.vflip(),
            hf_region: self.hf_region.as_ref().map(SegMask::vflip),
            id: self.id.clone(),
        }
    }
}

/// Index lists of a train/val/test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` by `seed`; validation and test get `⌊n/10⌋` each and the
/// remainder goes to training.
pub fn split_dataset(n: usize, seed: u64) -> Result<Split> {
    if n < 10 {
        return Err(Error::Invalid(format!("splitting needs at least 10 entries, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = n / 10;
    let test = idx.split_off(n - k);
    let val = idx.split_off(n - 2 * k);
    Ok(Split { train: idx, val, test })
}

/// Flips image, mask and fold region together with probability `p`.
pub fn augment_vflip(s: &Sample, p: f64, rng: &mut impl Rng) -> Result<Sample> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Invalid(format!("flip probability {p} outside [0, 1]")));
    }
    if p > 0.0 && rng.random::<f64>() < p {
        Ok(s.vflip())
    } else {
        Ok(s.clone())
    }
}

/// Stacks samples of equal size into `(B, 3, H, W)` plus their masks.
pub fn collate(samples: &[Sample]) -> Result<crate::pedm::Batch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Invalid("cannot collate an empty batch".into()))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    for s in samples {
        if s.dims() != (h, w) {
            return Err(Error::shape("collate", format!("{:?} vs {:?}", s.dims(), (h, w))));
        }
        data.extend_from_slice(s.image.data());
    }
    let images = Tensor::new(Shape::new(samples.len(), 3, h, w), data)?;
    crate::pedm::Batch::new(images, samples.iter().map(|s| s.mask.clone()).collect())
}

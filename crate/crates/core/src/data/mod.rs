//! Image and mask ingestion, manifests, synthetic data and map export.

mod codec;
mod manifest;
mod synth;

use std::path::Path;

pub use codec::{
    decode_gray, decode_image, decode_mask, encode_saliency, load_image, load_mask, load_saliency, quantize, save_saliency, RgbImage, MASK_THRESHOLD,
    MAX_SIDE,
};
pub(crate) use codec::write as write_file;
pub use manifest::{Manifest, ManifestEntry, Split};
pub use synth::{synth_generate, synth_pair, SynthSet, MAX_FOREGROUND, MIN_FOREGROUND};

use crate::error::{Error, Result};
use crate::metrics::GroundTruthMask;
use crate::tensor::Tensor4;

/// Loads one pair: the image bilinear-resized to `size` and scaled to [0,1],
/// the mask nearest-resized and binarized at 128. Without `size` both keep
/// the image's native dims.
pub fn load_pair(image: &Path, mask: &Path, size: Option<(usize, usize)>) -> Result<(Tensor4<f32>, GroundTruthMask)> {
    if manifest::stem(image) != manifest::stem(mask) {
        return Err(Error::Data(format!(
            "image {} and mask {} have different names",
            image.display(),
            mask.display()
        )));
    }
    let img = load_image(image)?;
    let size = size.unwrap_or((img.height, img.width));
    Ok((img.to_tensor(Some(size)), load_mask(mask, Some(size))?))
}

/// All pairs of a manifest decoded into memory, in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub names: Vec<String>,
    pub images: Vec<Tensor4<f32>>,
    pub masks: Vec<GroundTruthMask>,
}

impl Dataset {
    pub fn load(manifest: &Manifest, size: (usize, usize)) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::Data("manifest lists no pairs".into()));
        }
        let mut ds = Dataset {
            names: Vec::with_capacity(manifest.len()),
            images: Vec::with_capacity(manifest.len()),
            masks: Vec::with_capacity(manifest.len()),
        };
        for i in 0..manifest.len() {
            let (img, mask) = load_pair(&manifest.image_path(i), &manifest.mask_path(i), Some(size))?;
            ds.names.push(manifest.entries[i].name());
            ds.images.push(img);
            ds.masks.push(mask);
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Stacked (n,3,h,w) inputs and (n,1,h,w) {0,1} targets for `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
        let images: Vec<Tensor4<f32>> = indices.iter().map(|&i| self.images[i].clone()).collect();
        let targets = indices
            .iter()
            .map(|&i| {
                let m = &self.masks[i];
                let data = m.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                Tensor4::from_vec((1, 1, m.height(), m.width()), data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((Tensor4::stack(&images)?, Tensor4::stack(&targets)?))
    }
}

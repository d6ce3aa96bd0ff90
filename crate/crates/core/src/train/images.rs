use std::borrow::Borrow;
use std::sync::Arc;

use candle_core::{Device, Tensor};
use image::imageops::FilterType;
use image::RgbImage;

use crate::data::{LabelVector, Manifest};
use crate::error::{Error, Result};

/// ImageNet channel means and standard deviations used for input scaling.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// A decoded image resized to the model's square input, with its labels.
#[derive(Clone, Debug)]
pub struct Sample {
    pub record_id: String,
    pub image: Arc<RgbImage>,
    pub labels: LabelVector,
}

pub fn decode_file(path: &std::path::Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(image::load_from_memory(&bytes)?.to_rgb8())
}

pub fn resize_square(image: &RgbImage, size: usize) -> RgbImage {
    if image.dimensions() == (size as u32, size as u32) {
        return image.clone();
    }
    image::imageops::resize(image, size as u32, size as u32, FilterType::Triangle)
}

/// Decodes and resizes every record. Undecodable images are skipped and
/// returned with their error.
pub fn load_samples(manifest: &Manifest, size: usize) -> (Vec<Sample>, Vec<(String, Error)>) {
    let mut samples = Vec::with_capacity(manifest.len());
    let mut failed = Vec::new();
    for r in &manifest.records {
        match decode_file(&manifest.image_path(r)) {
            Ok(img) => samples.push(Sample {
                record_id: r.record_id.clone(),
                image: Arc::new(resize_square(&img, size)),
                labels: r.labels,
            }),
            Err(e) => {
                log::warn!("skipping {}: {e}", r.record_id);
                failed.push((r.record_id.clone(), e));
            }
        }
    }
    (samples, failed)
}

/// `(N, 3, H, W)` float tensor normalized with the ImageNet statistics.
pub fn to_tensor<I: Borrow<RgbImage>>(images: &[I]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?.borrow();
    let (w, h) = first.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![0f32; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        let img = img.borrow();
        if img.dimensions() != (w, h) {
            return Err(Error::invalid("images in a batch must share one size"));
        }
        let base = n * 3 * plane;
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[base + c * plane + i] = (px.0[c] as f32 / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
            }
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h as usize, w as usize), &Device::Cpu)?)
}

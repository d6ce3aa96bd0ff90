//! Synthetic image fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use cvtk_core::data::{ImageRecord, LabelVector, Manifest};
use cvtk_core::train::Sample;
use cvtk_core::TaskId;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stripes whose orientation encodes the class: 0 horizontal, 1 vertical.
/// Colours, period and phase are random.
pub fn stripes(class: usize, size: u32, rng: &mut impl Rng) -> RgbImage {
    let a: [u8; 3] = [rng.random_range(0..90), rng.random_range(0..90), rng.random_range(0..90)];
    let b: [u8; 3] = [rng.random_range(165..=255), rng.random_range(165..=255), rng.random_range(165..=255)];
    let period = rng.random_range(4..=8u32);
    let phase = rng.random_range(0..period);
    RgbImage::from_fn(size, size, |x, y| {
        let t = if class == 0 { y } else { x };
        if ((t + phase) / (period / 2).max(1)) % 2 == 0 {
            Rgb(a)
        } else {
            Rgb(b)
        }
    })
}

/// `n` stripe images alternating between the two classes.
pub fn stripe_set(n: usize, size: u32, seed: u64) -> Vec<(RgbImage, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| (stripes(i % 2, size, &mut rng), i % 2)).collect()
}

/// In-memory samples labeled for `task` (class index = stripe class).
pub fn samples(set: &[(RgbImage, usize)], task: TaskId) -> Vec<Sample> {
    set.iter()
        .enumerate()
        .map(|(i, (img, c))| Sample {
            record_id: format!("img{i:04}"),
            image: Arc::new(img.clone()),
            labels: LabelVector::single(task, *c),
        })
        .collect()
}

/// Writes the images as PNGs under `dir` and returns a manifest over them.
pub fn write_set(dir: &Path, prefix: &str, set: &[(RgbImage, usize)], task: TaskId) -> Manifest {
    std::fs::create_dir_all(dir).unwrap();
    let records = set
        .iter()
        .enumerate()
        .map(|(i, (img, c))| {
            let name = format!("{prefix}{i:04}.png");
            img.save(dir.join(&name)).unwrap();
            ImageRecord::new(format!("{prefix}{i:04}"), "synthetic", dir.join(&name).to_string_lossy(), LabelVector::single(task, *c))
        })
        .collect();
    Manifest::new(records, None)
}

/// Uniform RGB noise; distinct seeds give perceptually unrelated images.
pub fn noise_image(seed: u64, size: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(size, size, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

//! Grad-CAM localization maps and heat-map overlays.
//!
//! The map for class `c` weights each final convolutional feature map `A_k` by
//! the spatial mean of `∂y_c/∂A_k`, sums over channels and rectifies. The
//! result is upsampled bilinearly to image size and min-max normalized.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[cfg(feature = "nn")]
mod gradcam;
#[cfg(feature = "nn")]
pub use gradcam::{grad_cam, grad_cam_with_head};

/// Overlay opacity of the heat map.
pub const OVERLAY_ALPHA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamMap {
    pub target_class: usize,
    /// Rectified map at feature resolution, row-major `grid_h × grid_w`.
    pub grid: Vec<f64>,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Upsampled, normalized map, row-major `height × width`.
    pub upsampled: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

impl CamMap {
    pub fn grid_at(&self, y: usize, x: usize) -> f64 {
        self.grid[y * self.grid_w + x]
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.upsampled[y * self.width + x]
    }

    /// (y, x) of the upsampled maximum, first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let i = self
            .upsampled
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0;
        (i / self.width, i % self.width)
    }
}

/// Builds a map from feature maps and the target score's gradient with
/// respect to them, both `channels × h × w` row-major.
pub fn cam_from_gradients(
    features: &[f64],
    gradients: &[f64],
    dims: (usize, usize, usize),
    target_class: usize,
    out_size: (usize, usize),
) -> Result<CamMap> {
    let (c, h, w) = dims;
    let (height, width) = out_size;
    if features.len() != c * h * w || gradients.len() != c * h * w {
        return Err(Error::invalid("feature and gradient sizes do not match their dimensions"));
    }
    if c == 0 || h == 0 || w == 0 || height == 0 || width == 0 {
        return Err(Error::invalid("empty feature map or output size"));
    }
    let plane = h * w;
    let weights: Vec<f64> = gradients.chunks(plane).map(|g| g.iter().sum::<f64>() / plane as f64).collect();
    let mut grid = vec![0.0; plane];
    for (k, a) in features.chunks(plane).enumerate() {
        for (g, &v) in grid.iter_mut().zip(a) {
            *g += weights[k] * v;
        }
    }
    for g in &mut grid {
        *g = g.max(0.0);
    }
    let mut upsampled = upsample_bilinear(&grid, h, w, height, width);
    normalize(&mut upsampled);
    Ok(CamMap { target_class, grid, grid_h: h, grid_w: w, upsampled, height, width })
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn upsample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |o: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, out_h, h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, out_w, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Min-max normalization to [0, 1]. A constant positive map becomes all ones,
/// an all-zero map stays zero.
fn normalize(v: &mut [f64]) {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    if hi <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
    } else if hi - lo <= hi * 1e-12 {
        v.iter_mut().for_each(|x| *x = 1.0);
    } else {
        v.iter_mut().for_each(|x| *x = (*x - lo) / (hi - lo));
    }
}

/// Jet colormap: dark blue at 0 through cyan, yellow, to dark red at 1.
pub fn jet(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let ramp = |x: f64| (1.5 - (4.0 * v - x).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)].map(|c| (c * 255.0).round() as u8)
}

/// Alpha-blends the jet-colored map over the image.
pub fn overlay(cam: &CamMap, image: &RgbImage) -> Result<RgbImage> {
    if (image.width() as usize, image.height() as usize) != (cam.width, cam.height) {
        return Err(Error::invalid(format!(
            "map is {}x{} but image is {}x{}",
            cam.width,
            cam.height,
            image.width(),
            image.height()
        )));
    }
    Ok(RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let heat = jet(cam.at(y as usize, x as usize));
        let px = image.get_pixel(x, y).0;
        Rgb(std::array::from_fn(|i| {
            ((1.0 - OVERLAY_ALPHA) * px[i] as f64 + OVERLAY_ALPHA * heat[i] as f64).round() as u8
        }))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_positive_map_is_all_ones() {
        let cam = cam_from_gradients(&[2.0; 9], &[0.5; 9], (1, 3, 3), 0, (12, 12)).unwrap();
        assert!(cam.upsampled.iter().all(|&v| v == 1.0));
        assert!(cam.grid.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_channel_closed_form() {
        // A1 = [[1,2],[3,4]], A2 = [[4,0],[1,2]]; gradient means 0.5 and -0.25.
        let features = [1.0, 2.0, 3.0, 4.0, 4.0, 0.0, 1.0, 2.0];
        let grads = [0.5, 0.5, 0.5, 0.5, 0.0, -0.5, -0.5, 0.0];
        let cam = cam_from_gradients(&features, &grads, (2, 2, 2), 1, (2, 2)).unwrap();
        let expected = [0.0f64, 1.0, 1.25, 1.5];
        for (g, e) in cam.grid.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12);
        }
        // Same size: upsampling is the identity, then min-max.
        for (u, e) in cam.upsampled.iter().zip(expected) {
            assert!((u - e / 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_evidence_is_rectified() {
        let cam = cam_from_gradients(&[1.0, 2.0, 3.0, 4.0], &[-1.0; 4], (1, 2, 2), 0, (4, 4)).unwrap();
        assert!(cam.grid.iter().all(|&v| v == 0.0));
        assert!(cam.upsampled.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsampling_identity_and_corners() {
        let src = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(upsample_bilinear(&src, 2, 2, 2, 2), src.to_vec());
        let up = upsample_bilinear(&src, 2, 2, 4, 4);
        assert_eq!(up[0], 0.0);
        assert_eq!(up[15], 3.0);
        assert!(up.iter().all(|&v| (0.0..=3.0).contains(&v)));
    }

    #[test]
    fn overlay_shape_zero_color_and_determinism() {
        let img = RgbImage::from_fn(6, 4, |x, y| Rgb([(x * 40) as u8, (y * 60) as u8, 200]));
        let zero = CamMap {
            target_class: 0,
            grid: vec![0.0],
            grid_h: 1,
            grid_w: 1,
            upsampled: vec![0.0; 24],
            height: 4,
            width: 6,
        };
        let out = overlay(&zero, &img).unwrap();
        assert_eq!(out.dimensions(), img.dimensions());
        let c0 = jet(0.0);
        for (o, i) in out.pixels().zip(img.pixels()) {
            for k in 0..3 {
                assert_eq!(o.0[k], ((i.0[k] as f64 + c0[k] as f64) * 0.5).round() as u8);
            }
        }
        assert_eq!(overlay(&zero, &img).unwrap().into_raw(), out.into_raw());
        let small = RgbImage::new(3, 3);
        assert!(overlay(&zero, &small).is_err());
    }

    #[test]
    fn jet_endpoints() {
        assert_eq!(jet(0.0), [0, 0, 128]);
        assert_eq!(jet(1.0), [128, 0, 0]);
        assert_eq!(jet(0.5), [128, 255, 128]);
    }
}

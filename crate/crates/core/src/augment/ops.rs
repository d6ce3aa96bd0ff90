use image::{Rgb, RgbImage};

const FILL: [u8; 3] = [128, 128, 128];
// ImageNet mean color, 0..255.
const CUTOUT_FILL: [u8; 3] = [124, 116, 104];

pub(super) fn map_lut(image: &RgbImage, f: impl Fn(u8) -> u8) -> RgbImage {
    let lut: Vec<u8> = (0..=255u8).map(f).collect();
    let mut out = image.clone();
    for v in out.iter_mut() {
        *v = lut[*v as usize];
    }
    out
}

fn map_channels(image: &RgbImage, luts: &[[u8; 256]; 3]) -> RgbImage {
    let mut out = image.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            p[c] = luts[c][p[c] as usize];
        }
    }
    out
}

fn histograms(image: &RgbImage) -> [[u64; 256]; 3] {
    let mut h = [[0u64; 256]; 3];
    for p in image.pixels() {
        for c in 0..3 {
            h[c][p[c] as usize] += 1;
        }
    }
    h
}

fn identity_lut() -> [u8; 256] {
    std::array::from_fn(|i| i as u8)
}

/// Per-channel linear stretch of [min, max] onto [0, 255].
pub(super) fn autocontrast(image: &RgbImage) -> RgbImage {
    let hist = histograms(image);
    let luts = hist.map(|h| {
        let lo = h.iter().position(|&n| n > 0);
        let hi = h.iter().rposition(|&n| n > 0);
        match (lo, hi) {
            (Some(lo), Some(hi)) if hi > lo => {
                let scale = 255.0 / (hi - lo) as f64;
                let offset = -(lo as f64) * scale;
                std::array::from_fn(|i| (i as f64 * scale + offset).clamp(0.0, 255.0) as u8)
            }
            _ => identity_lut(),
        }
    });
    map_channels(image, &luts)
}

/// Per-channel histogram equalization (cumulative-histogram lookup).
pub(super) fn equalize(image: &RgbImage) -> RgbImage {
    let hist = histograms(image);
    let luts = hist.map(|h| {
        let nonzero: Vec<u64> = h.iter().copied().filter(|&n| n > 0).collect();
        if nonzero.len() <= 1 {
            return identity_lut();
        }
        let step = (nonzero.iter().sum::<u64>() - nonzero[nonzero.len() - 1]) / 255;
        if step == 0 {
            return identity_lut();
        }
        let mut lut = [0u8; 256];
        let mut n = step / 2;
        for i in 0..256 {
            lut[i] = (n / step).min(255) as u8;
            n += h[i];
        }
        lut
    });
    map_channels(image, &luts)
}

fn luma(p: &Rgb<u8>) -> f64 {
    (299.0 * f64::from(p[0]) + 587.0 * f64::from(p[1]) + 114.0 * f64::from(p[2])) / 1000.0
}

fn blend_with(image: &RgbImage, degenerate: impl Fn(u32, u32, usize) -> f64, factor: f64) -> RgbImage {
    let mut out = image.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        for c in 0..3 {
            let d = degenerate(x, y, c);
            p[c] = (d + factor * (f64::from(p[c]) - d)).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

pub(super) fn color(image: &RgbImage, factor: f64) -> RgbImage {
    blend_with(image, |x, y, _| luma(image.get_pixel(x, y)).round(), factor)
}

pub(super) fn contrast(image: &RgbImage, factor: f64) -> RgbImage {
    let n = (image.width() * image.height()).max(1) as f64;
    let mean = (image.pixels().map(|p| luma(p).round()).sum::<f64>() / n).round();
    blend_with(image, |_, _, _| mean, factor)
}

pub(super) fn brightness(image: &RgbImage, factor: f64) -> RgbImage {
    blend_with(image, |_, _, _| 0.0, factor)
}

/// Blend against a 3x3 smoothing filter (center weight 5, neighbors 1); the
/// one-pixel border keeps its original values.
pub(super) fn sharpness(image: &RgbImage, factor: f64) -> RgbImage {
    let (w, h) = image.dimensions();
    let smooth = |x: u32, y: u32, c: usize| -> f64 {
        if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
            return f64::from(image.get_pixel(x, y)[c]);
        }
        let mut acc = 0.0;
        for dy in 0..3 {
            for dx in 0..3 {
                let wgt = if dx == 1 && dy == 1 { 5.0 } else { 1.0 };
                acc += wgt * f64::from(image.get_pixel(x + dx - 1, y + dy - 1)[c]);
            }
        }
        (acc / 13.0).round()
    };
    blend_with(image, smooth, factor)
}

/// Inverse-mapped warp with bilinear sampling. `src` maps an output pixel
/// center to a source position in pixel-center coordinates.
fn warp(image: &RgbImage, src: impl Fn(f64, f64) -> (f64, f64)) -> RgbImage {
    let (w, h) = image.dimensions();
    let mut out = RgbImage::new(w, h);
    let (wf, hf) = (f64::from(w), f64::from(h));
    for (x, y, p) in out.enumerate_pixels_mut() {
        let (sx, sy) = src(f64::from(x), f64::from(y));
        if sx < -0.5 || sy < -0.5 || sx > wf - 0.5 || sy > hf - 0.5 {
            *p = Rgb(FILL);
            continue;
        }
        let x0 = sx.floor().max(0.0);
        let y0 = sy.floor().max(0.0);
        let fx = (sx - x0).clamp(0.0, 1.0);
        let fy = (sy - y0).clamp(0.0, 1.0);
        let (x0, y0) = (x0 as u32, y0 as u32);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let (a, b) = (image.get_pixel(x0, y0), image.get_pixel(x1, y0));
        let (c_, d) = (image.get_pixel(x0, y1), image.get_pixel(x1, y1));
        for c in 0..3 {
            let top = f64::from(a[c]) * (1.0 - fx) + f64::from(b[c]) * fx;
            let bot = f64::from(c_[c]) * (1.0 - fx) + f64::from(d[c]) * fx;
            p[c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Affine warp with coefficients (a, b, c, d, e, f): output (x, y) samples the
/// source at (a·x + b·y + c, d·x + e·y + f).
pub(super) fn affine(image: &RgbImage, m: [f64; 6]) -> RgbImage {
    warp(image, |x, y| {
        (m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5])
    })
}

/// Rotation about the image center, `degrees` counter-clockwise.
pub(super) fn rotate(image: &RgbImage, degrees: f64) -> RgbImage {
    let (w, h) = image.dimensions();
    let (cx, cy) = ((f64::from(w) - 1.0) / 2.0, (f64::from(h) - 1.0) / 2.0);
    let (s, c) = degrees.to_radians().sin_cos();
    warp(image, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + c * dx - s * dy, cy + s * dx + c * dy)
    })
}

/// Fills a `side`×`side` square centered at `center`, clipped to the image.
pub(super) fn cutout(image: &RgbImage, side: u32, center: (u32, u32)) -> RgbImage {
    let mut out = image.clone();
    if side == 0 {
        return out;
    }
    let (w, h) = image.dimensions();
    let half = side / 2;
    let x0 = center.0.saturating_sub(half);
    let y0 = center.1.saturating_sub(half);
    let x1 = (center.0.saturating_sub(half) + side).min(w);
    let y1 = (center.1.saturating_sub(half) + side).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            out.put_pixel(x, y, Rgb(CUTOUT_FILL));
        }
    }
    out
}

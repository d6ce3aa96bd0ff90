//! Browser bindings: RandAugment explorer, significance calculator and
//! pseudo-label balancing explorer.

use cvtk_core::augment::AugmentPolicy;
use cvtk_core::eval::{bowker_table, mcnemar_counts};
use cvtk_core::noisy_student::{filter_and_balance, PseudoLabel};
use cvtk_core::TaskId;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Augmented {
    rgba: Vec<u8>,
    ops: Vec<String>,
}

#[wasm_bindgen]
impl Augmented {
    /// RGBA pixels, same size as the input.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// Transforms applied, in order, comma separated.
    #[wasm_bindgen(getter)]
    pub fn ops(&self) -> String {
        self.ops.join(", ")
    }
}

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Applies RandAugment(n, m) to an RGBA canvas buffer. Alpha is set opaque.
#[wasm_bindgen]
pub fn randaugment(rgba: &[u8], width: u32, height: u32, n: usize, m: u8, seed: u64) -> Result<Augmented, JsError> {
    if rgba.len() != (width * height * 4) as usize {
        return Err(err("pixel buffer does not match width × height × 4"));
    }
    let img = RgbImage::from_fn(width, height, |x, y| {
        let i = ((y * width + x) * 4) as usize;
        Rgb([rgba[i], rgba[i + 1], rgba[i + 2]])
    });
    let policy = AugmentPolicy::new(n, m).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out, kinds) = policy.apply_traced(&img, &mut rng);
    let rgba = out.pixels().flat_map(|p| [p[0], p[1], p[2], 255]).collect();
    Ok(Augmented { rgba, ops: kinds.iter().map(|k| k.name().to_string()).collect() })
}

/// McNemar's test from discordant counts, as JSON.
#[wasm_bindgen]
pub fn mcnemar(b: usize, c: usize) -> Result<String, JsError> {
    serde_json::to_string(&mcnemar_counts(b, c)).map_err(err)
}

/// Bowker's test on a square table given as a JSON array of rows.
#[wasm_bindgen]
pub fn bowker(table_json: &str) -> Result<String, JsError> {
    let table: Vec<Vec<usize>> = serde_json::from_str(table_json).map_err(err)?;
    if table.len() < 2 || table.iter().any(|r| r.len() != table.len()) {
        return Err(err("table must be square with at least two classes"));
    }
    serde_json::to_string(&bowker_table(&table)).map_err(err)
}

#[derive(Serialize)]
struct ClassRow {
    label: String,
    predicted: usize,
    above_threshold: usize,
    kept: usize,
    min_kept_confidence: Option<f64>,
}

/// Draws `count` synthetic teacher predictions for `task` (class skew and
/// sharpness set by `skew` and `sharpness`), then filters and balances them
/// at `threshold`. Returns per-class counts as JSON.
#[wasm_bindgen]
pub fn balance(task: &str, threshold: f64, count: usize, skew: f64, sharpness: f64, seed: u64) -> Result<String, JsError> {
    let task: TaskId = task.parse().map_err(err)?;
    let schema = task.schema();
    let k = schema.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pseudo: Vec<PseudoLabel> = (0..count)
        .map(|i| {
            // Class c is the favourite with weight skew^-c.
            let weights: Vec<f64> = (0..k).map(|c| skew.powi(-(c as i32))).collect();
            let mut pick = rng.random::<f64>() * weights.iter().sum::<f64>();
            let fav = weights.iter().position(|w| {
                pick -= w;
                pick <= 0.0
            });
            let fav = fav.unwrap_or(k - 1);
            let logits: Vec<f64> =
                (0..k).map(|c| rng.random::<f64>() + if c == fav { sharpness * rng.random::<f64>() } else { 0.0 }).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let probs: Vec<f32> = logits.iter().map(|l| (l.exp() / z) as f32).collect();
            PseudoLabel::from_probs(format!("u{i:05}"), format!("u{i:05}.png"), &probs)
        })
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let kept = filter_and_balance(&pseudo, threshold, task).map_err(err)?;
    let rows: Vec<ClassRow> = (0..k)
        .map(|c| {
            let of_class = || pseudo.iter().filter(move |p| p.class_index == c);
            let kept_conf: Vec<f64> = kept
                .records
                .iter()
                .filter(|r| r.labels.get(task) == Some(c))
                .filter_map(|r| pseudo.iter().find(|p| p.record_id == r.record_id).map(|p| p.confidence))
                .collect();
            ClassRow {
                label: schema.label_name(c).unwrap_or("?").to_string(),
                predicted: of_class().count(),
                above_threshold: of_class().filter(|p| p.confidence > threshold).count(),
                kept: kept_conf.len(),
                min_kept_confidence: kept_conf.iter().copied().reduce(f64::min),
            }
        })
        .collect();
    serde_json::to_string(&rows).map_err(err)
}

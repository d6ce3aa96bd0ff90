//! Desk-scale acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed; the process
//! exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::time::{Duration, Instant};

use candle_core::{Device, Tensor, Var, D};
use cvtk_core::augment::{transform, AugmentPolicy, TransformKind};
use cvtk_core::curation::{find_duplicates, make_splits, resolve_cross_split_duplicates, ImageSignature};
use cvtk_core::data::{ImageRecord, LabelVector, Manifest, Split};
use cvtk_core::eval::{bowker, evaluate, mcnemar, significance_matrix};
use cvtk_core::explain::{grad_cam, grad_cam_with_head, CamMap};
use cvtk_core::merge::{complete_label_subset, merge_multitask};
use cvtk_core::models::{build_model, count_parameters, BuildOptions};
use cvtk_core::multitask::{batch_loss, HeadLayout};
use cvtk_core::noisy_student::{filter_and_balance, train_student, NoisyStudentConfig, PseudoLabel};
use cvtk_core::pipeline::{
    classify_stream, read_source, throughput_report, AnnotatedRecord, Classifiers, PipelineConfig, PipelineMode,
    RunLog, StageTimings,
};
use cvtk_core::train::{
    build_single_task, evaluate_samples, fit, Checkpoint, CheckpointMeta, DevMetrics, PlateauScheduler, Sampler,
    TrainConfig,
};
use cvtk_core::TaskId;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within_time(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {:.1} s, limit {:.0} s", t.as_secs_f64(), limit.as_secs_f64()))
}

// ---------------------------------------------------------------- 1

fn ce(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - logits[target]
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let layout = HeadLayout::new(vec![TaskId::Informativeness, TaskId::DamageSeverity], vec![2, 3]).map_err(e2s)?;
    let logits: Vec<Vec<f64>> = vec![
        vec![1.0, -0.5, 0.2, 0.3, -1.0],
        vec![0.3, 0.8, 2.0, -1.0, 0.5],
        vec![-1.2, 0.4, 0.0, 1.5, 0.7],
    ];
    // Row 1 is fully masked; row 2 lacks its damage label.
    let labels: Vec<Vec<i64>> = vec![vec![1, 2], vec![-1, -1], vec![0, -1]];
    let closed = (ce(&logits[0][0..2], 1) + ce(&logits[2][0..2], 0)) / 2.0 + ce(&logits[0][2..5], 2);

    let dev = Device::Cpu;
    let lab = Tensor::new(labels.clone(), &dev).map_err(e2s)?;
    let loss_at = |l: &[Vec<f64>]| -> Result<f64, String> {
        let p = Tensor::new(l.to_vec(), &dev).map_err(e2s)?;
        batch_loss(&p, &lab, &layout).map_err(e2s)?.to_scalar::<f64>().map_err(e2s)
    };
    let got = loss_at(&logits)?;
    ensure((got - closed).abs() < 1e-6, || format!("loss {got} vs closed form {closed}"))?;

    let var = Var::new(logits.clone(), &dev).map_err(e2s)?;
    let grads = batch_loss(var.as_tensor(), &lab, &layout).map_err(e2s)?.backward().map_err(e2s)?;
    let g = grads.get(var.as_tensor()).ok_or("no gradient")?.to_vec2::<f64>().map_err(e2s)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for r in 0..3 {
        for c in 0..5 {
            let mut plus = logits.clone();
            plus[r][c] += h;
            let mut minus = logits.clone();
            minus[r][c] -= h;
            let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
            worst = worst.max((g[r][c] - fd).abs());
            scale = scale.max(fd.abs());
        }
    }
    let rel = worst / scale;
    ensure(rel < 1e-4, || format!("gradient vs finite differences: relative error {rel:e}"))?;
    let masked_zero = g[1].iter().all(|&v| v == 0.0) && g[2][2..5].iter().all(|&v| v == 0.0);
    ensure(masked_zero, || format!("masked gradient segments not zero: {:?} / {:?}", g[1], &g[2][2..5]))?;
    within_time(start, Duration::from_secs(1))?;
    Ok(format!("loss {got:.9} = closed form {closed:.9}; grad rel. error {rel:.1e}; masked segments exactly 0"))
}

// ---------------------------------------------------------------- 2

fn random_signature_set(rng: &mut ChaCha8Rng, n: usize) -> Vec<ImageSignature> {
    let mut sigs: Vec<ImageSignature> = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("r{i:04}");
        let roll = rng.random::<f64>();
        let sig = if i > 0 && roll < 0.08 {
            let src = &sigs[rng.random_range(0..i)];
            ImageSignature { record_id: id, phash: src.phash, exact_digest: src.exact_digest.clone() }
        } else if i > 0 && roll < 0.2 {
            let src = &sigs[rng.random_range(0..i)];
            let mut phash = src.phash;
            for _ in 0..rng.random_range(0..=4) {
                phash ^= 1u64 << rng.random_range(0..64);
            }
            ImageSignature { record_id: id, phash, exact_digest: format!("d{i}") }
        } else {
            ImageSignature { record_id: id, phash: rng.random(), exact_digest: format!("d{i}") }
        };
        sigs.push(sig);
    }
    sigs
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let ratios = [0.7, 0.1, 0.2];
    let task = TaskId::DamageSeverity;
    let mut total_groups = 0;
    let mut total_moved = 0;
    for fixture in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(fixture);
        let n = rng.random_range(20..300);
        // Skewed class sizes, some records unlabeled for the stratification task.
        let records: Vec<ImageRecord> = (0..n)
            .map(|i| {
                let roll = rng.random::<f64>();
                let labels = if roll < 0.05 {
                    LabelVector::empty()
                } else {
                    LabelVector::single(task, if roll < 0.6 { 0 } else if roll < 0.85 { 1 } else { 2 })
                };
                ImageRecord::new(format!("r{i:04}"), "fixture", format!("r{i:04}.png"), labels)
            })
            .collect();
        let manifest = Manifest::new(records, None);
        let sigs = random_signature_set(&mut rng, n);
        let groups = find_duplicates(&sigs, 10);
        let plan = make_splits(&manifest, ratios, fixture, task).map_err(e2s)?;

        // Stratification on the planned split.
        let mut per_class: BTreeMap<Option<usize>, [usize; 3]> = BTreeMap::new();
        for r in &manifest.records {
            let s = plan.get(&r.record_id).ok_or("record without a split")?;
            per_class.entry(r.labels.get(task)).or_default()[s.index()] += 1;
        }
        for (class, counts) in &per_class {
            let size: usize = counts.iter().sum();
            for (k, &c) in counts.iter().enumerate() {
                let expected = size as f64 * ratios[k];
                ensure((c as f64 - expected).abs() <= 1.0, || {
                    format!("fixture {fixture}: class {class:?} of size {size} has {counts:?}")
                })?;
            }
        }

        let (resolved, moved) = resolve_cross_split_duplicates(&plan, &groups);
        total_groups += groups.len();
        total_moved += moved;
        for g in &groups {
            let splits: BTreeSet<Split> = g.members.iter().filter_map(|m| resolved.get(m)).collect();
            ensure(splits.len() <= 1, || format!("fixture {fixture}: group {:?} spans {splits:?}", g.members))?;
        }
        let parts = resolved.partition(&manifest);
        let mut seen = BTreeSet::new();
        for p in &parts {
            for r in &p.records {
                ensure(seen.insert(r.record_id.clone()), || format!("fixture {fixture}: {} in two splits", r.record_id))?;
            }
        }
        ensure(seen.len() == manifest.len(), || format!("fixture {fixture}: partition covers {} of {n}", seen.len()))?;
    }
    within_time(start, Duration::from_secs(30))?;
    Ok(format!("200 fixtures, {total_groups} duplicate groups, {total_moved} records moved; no spanning group, partitions exact, strata within ±1"))
}

// ---------------------------------------------------------------- 3

type Splits = [Manifest; 3];

fn random_per_task(rng: &mut ChaCha8Rng) -> BTreeMap<TaskId, Splits> {
    let universe = rng.random_range(30..200);
    let mut out = BTreeMap::new();
    for task in TaskId::ALL {
        let mut parts: [Vec<ImageRecord>; 3] = Default::default();
        for i in 0..universe {
            if rng.random::<f64>() < 0.5 {
                let class = rng.random_range(0..task.schema().num_classes());
                let split = rng.random_range(0..3);
                parts[split].push(ImageRecord::new(format!("im{i}"), "fixture", format!("im{i}.png"), LabelVector::single(task, class)));
            }
        }
        let [a, b, c] = parts;
        out.insert(task, [Manifest::new(a, Some(Split::Train)), Manifest::new(b, Some(Split::Dev)), Manifest::new(c, Some(Split::Test))]);
    }
    out
}

/// Per-task split manifests reproducing the published multi-task counts:
/// per-task totals per split and the aligned subsets (info+hum, info+ds, all four).
fn published_fixture() -> BTreeMap<TaskId, Splits> {
    use TaskId::*;
    // (label set, train, dev, test) image counts.
    let atoms: [(&[TaskId], [usize; 3]); 8] = [
        (&[DisasterTypes, Informativeness, Humanitarian, DamageSeverity], [2303, 761, 2494]),
        (&[Informativeness, Humanitarian], [2354, 35, 13]),
        (&[Informativeness, DamageSeverity], [17067, 1473, 1732]),
        (&[Informativeness, DisasterTypes], [8186, 1036, 2224]),
        (&[Informativeness], [10949, 1891, 7199]),
        (&[Humanitarian], [3943, 1209, 3657]),
        (&[DamageSeverity], [4044, 1251, 3771]),
        (&[DisasterTypes], [507, 0, 0]),
    ];
    let mut parts: BTreeMap<TaskId, [Vec<ImageRecord>; 3]> = TaskId::ALL.iter().map(|&t| (t, Default::default())).collect();
    let mut next = 0usize;
    for (tasks, counts) in atoms {
        for (split, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                let id = format!("pub{next:06}");
                next += 1;
                for &t in tasks {
                    let rec = ImageRecord::new(id.clone(), "published", format!("{id}.jpg"), LabelVector::single(t, next % t.schema().num_classes()));
                    parts.get_mut(&t).unwrap()[split].push(rec);
                }
            }
        }
    }
    parts
        .into_iter()
        .map(|(t, [a, b, c])| (t, [Manifest::new(a, Some(Split::Train)), Manifest::new(b, Some(Split::Dev)), Manifest::new(c, Some(Split::Test))]))
        .collect()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    for fixture in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + fixture);
        let per_task = random_per_task(&mut rng);
        let merged = merge_multitask(&per_task).map_err(e2s)?;
        let mut home: HashMap<&str, usize> = HashMap::new();
        for (i, m) in merged.iter().enumerate() {
            for r in &m.records {
                ensure(home.insert(&r.record_id, i).is_none(), || format!("fixture {fixture}: {} in two splits", r.record_id))?;
            }
        }
        // Conservation: each input (record, task, label) appears exactly once.
        let mut inputs = 0;
        let mut oracle_home: HashMap<String, usize> = HashMap::new();
        for (task, splits) in &per_task {
            for (i, m) in splits.iter().enumerate() {
                for r in &m.records {
                    inputs += 1;
                    let e = oracle_home.entry(r.record_id.clone()).or_insert(i);
                    *e = (*e).max(i);
                    let found: usize = merged
                        .iter()
                        .flat_map(|m| &m.records)
                        .filter(|o| o.record_id == r.record_id && o.labels.get(*task) == r.labels.get(*task))
                        .count();
                    ensure(found == 1, || format!("fixture {fixture}: ({}, {task}) found {found} times", r.record_id))?;
                }
            }
        }
        let outputs: usize = merged.iter().flat_map(|m| &m.records).map(|r| r.labels.present().count()).sum();
        ensure(outputs == inputs, || format!("fixture {fixture}: {inputs} input labels, {outputs} output labels"))?;
        for (id, &i) in &home {
            ensure(oracle_home[*id] == i, || format!("fixture {fixture}: {id} placed in split {i}, expected {}", oracle_home[*id]))?;
        }
    }

    let merged = merge_multitask(&published_fixture()).map_err(e2s)?;
    let totals = |tasks: &[TaskId]| -> Vec<usize> { complete_label_subset(&merged, tasks).iter().map(Manifest::len).collect() };
    let info_hum = totals(&[TaskId::Informativeness, TaskId::Humanitarian]);
    let info_ds = totals(&[TaskId::Informativeness, TaskId::DamageSeverity]);
    let all4 = totals(&TaskId::ALL);
    let dt: Vec<usize> = merged.iter().map(|m| m.labeled_for(TaskId::DisasterTypes).len()).collect();
    ensure(info_hum == [4657, 796, 2507], || format!("info+hum {info_hum:?}"))?;
    ensure(all4 == [2303, 761, 2494], || format!("all four {all4:?}"))?;
    ensure(info_ds == [19370, 2234, 4226], || format!("info+ds {info_ds:?}"))?;
    ensure(dt == [10996, 1797, 4718], || format!("disaster types {dt:?}"))?;
    let (ih, a4): (usize, usize) = (info_hum.iter().sum(), all4.iter().sum());
    ensure(ih == 7960 && a4 == 5558, || format!("totals {ih} / {a4}"))?;
    within_time(start, Duration::from_secs(30))?;
    Ok(format!("100 random merges disjoint and conserving; published fixture gives {ih} (info+hum) and {a4} (all four)"))
}

// ---------------------------------------------------------------- 4

fn textured(seed: u64, w: u32, h: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fx, fy) = (rng.random_range(0.05..0.2), rng.random_range(0.05..0.2));
    RgbImage::from_fn(w, h, |x, y| {
        let v = |p: f64| (127.5 + 120.0 * (x as f64 * fx + y as f64 * fy + p).sin()) as u8;
        Rgb([v(0.0), v(2.0), v(4.0)])
    })
}

fn mad(a: &RgbImage, b: &RgbImage) -> f64 {
    a.as_raw().iter().zip(b.as_raw()).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum::<f64>() / (255.0 * a.as_raw().len() as f64)
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    ensure(TransformKind::ALL.len() == 16, || format!("{} transforms", TransformKind::ALL.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (i, &kind) in TransformKind::ALL.iter().enumerate() {
        for (w, h) in [(48, 32), (17, 29), (1, 1)] {
            let img = textured(i as u64, w, h);
            for m in [0u8, 1, 9, 15, 30] {
                let out = transform(kind, m, &img, &mut rng).map_err(e2s)?;
                ensure(out.dimensions() == (w, h), || format!("{kind:?} m={m} changed {w}x{h} to {:?}", out.dimensions()))?;
                ensure(out.as_raw().len() == img.as_raw().len(), || format!("{kind:?} changed the channel layout"))?;
            }
        }
    }
    let img = textured(99, 64, 64);
    let mut worst = 0.0f64;
    for kind in [TransformKind::Rotate, TransformKind::ShearX, TransformKind::TranslateX] {
        let out = transform(kind, 0, &img, &mut rng).map_err(e2s)?;
        let d = mad(&img, &out);
        worst = worst.max(d);
        ensure(d < 1.0 / 255.0, || format!("{kind:?} at magnitude 0 differs by {d}"))?;
    }
    let policy = AugmentPolicy::default();
    for seed in 0..20 {
        let a = policy.apply(&img, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = policy.apply(&img, &mut ChaCha8Rng::seed_from_u64(seed));
        ensure(a.as_raw() == b.as_raw(), || format!("seed {seed}: outputs differ"))?;
    }
    within_time(start, Duration::from_secs(30))?;
    Ok(format!("16 transforms keep size and 8-bit range; magnitude-0 geometric MAD ≤ {:.2e}; seeded outputs byte-identical", worst))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let lr = 1e-5;
    let mut s = PlateauScheduler::new(lr, 0.1, 10);
    let mut seen = Vec::new();
    for _ in 0..11 {
        seen.push(s.lr());
        s.step(0.5);
    }
    ensure(seen.iter().all(|&v| v == lr), || format!("rate changed early: {seen:?}"))?;
    ensure(s.lr() == lr * 0.1, || format!("after 11 flat epochs lr = {}, expected {}", s.lr(), lr * 0.1))?;

    let task = TaskId::Informativeness;
    let set = common::stripe_set(32, 32, 5);
    let samples = common::samples(&set, task);
    let config = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 150,
        backbone: "resnet18".into(),
        pretrained: false,
        image_size: Some(32),
        seed: 5,
        stop_at_dev_accuracy: Some(1.0),
        ..TrainConfig::default()
    };
    let model = build_single_task("resnet18", task, 2, &config.build_options()).map_err(e2s)?;
    let outcome = fit(&model, &samples, &[], &samples, &config, None, Sampler::Plain, config.max_epochs).map_err(e2s)?;
    let epochs = outcome.history.len();
    let acc = evaluate_samples(&model, &samples, 64).map_err(e2s)?.accuracy;
    ensure(acc == 1.0, || format!("train accuracy {acc} after {epochs} epochs"))?;
    within_time(start, Duration::from_secs(600))?;
    Ok(format!(
        "scheduler drops to {:.0e} after 11 flat epochs; ResNet18 reaches train accuracy 1.0 at epoch {epochs} ({:.0} s)",
        s.lr(),
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 6

fn check_balance(pseudo: &[PseudoLabel], threshold: f64, task: TaskId) -> Result<(), String> {
    let out = filter_and_balance(pseudo, threshold, task).map_err(e2s)?;
    let k = task.schema().num_classes();
    let conf: HashMap<&str, &PseudoLabel> = pseudo.iter().map(|p| (p.record_id.as_str(), p)).collect();
    let survivors: Vec<Vec<f64>> =
        (0..k).map(|c| pseudo.iter().filter(|p| p.class_index == c && p.confidence > threshold).map(|p| p.confidence).collect()).collect();
    let m = survivors.iter().map(Vec::len).min().unwrap_or(0);
    let mut kept: Vec<Vec<f64>> = vec![Vec::new(); k];
    for r in &out.records {
        let p = conf[r.record_id.as_str()];
        ensure(p.confidence > threshold, || format!("kept {} at confidence {} ≤ {threshold}", r.record_id, p.confidence))?;
        ensure(r.labels.get(task) == Some(p.class_index), || "label differs from pseudo class".into())?;
        kept[p.class_index].push(p.confidence);
    }
    for c in 0..k {
        ensure(kept[c].len() == m, || format!("class {c} keeps {}, expected {m}", kept[c].len()))?;
        let mut sorted = survivors[c].clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut got = kept[c].clone();
        got.sort_by(|a, b| b.total_cmp(a));
        ensure(got == sorted[..m], || format!("class {c} did not keep its top-{m} confidences"))?;
    }
    Ok(())
}

fn write_toy(dir: &std::path::Path, set: &[(RgbImage, usize)], task: TaskId) -> Manifest {
    common::write_set(dir, "toy", set, task)
}

fn criterion_6() -> Outcome {
    for trial in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + trial);
        let task = TaskId::ALL[rng.random_range(0..4)];
        let k = task.schema().num_classes();
        let n = rng.random_range(0..120);
        // Confidences on a coarse grid so ties with the threshold occur.
        let pseudo: Vec<PseudoLabel> = (0..n)
            .map(|i| PseudoLabel {
                record_id: format!("u{i}"),
                image_ref: format!("u{i}.png"),
                class_index: rng.random_range(0..k),
                confidence: rng.random_range(1..=20) as f64 / 20.0,
            })
            .collect();
        let threshold = rng.random_range(1..=19) as f64 / 20.0;
        check_balance(&pseudo, threshold, task).map_err(|e| format!("trial {trial} ({task}, t={threshold}): {e}"))?;
    }

    // Degenerate self-training: the pseudo set is the labeled set itself.
    let task = TaskId::Informativeness;
    let dir = tempfile::tempdir().map_err(e2s)?;
    let set = common::stripe_set(32, 32, 6);
    let labeled = write_toy(dir.path(), &set, task);
    let samples = common::samples(&set, task);
    let config = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 40,
        backbone: "tinycnn".into(),
        pretrained: false,
        image_size: Some(32),
        seed: 6,
        ..TrainConfig::default()
    };
    let model = build_single_task("tinycnn", task, 2, &config.build_options()).map_err(e2s)?;
    let outcome = fit(&model, &samples, &[], &samples, &config, None, Sampler::Plain, config.max_epochs).map_err(e2s)?;
    let teacher_acc = evaluate_samples(&model, &samples, 64).map_err(e2s)?.accuracy;
    let teacher = Checkpoint::new(CheckpointMeta::new(&model, &config, outcome.best_epoch, outcome.best_dev, None), model).map_err(e2s)?;
    let ns = NoisyStudentConfig { student_epochs: 40, ..NoisyStudentConfig::for_task(task) };
    let run = train_student(&teacher, &labeled, &labeled, &labeled, task, &config, &ns).map_err(e2s)?;
    let student_acc = evaluate_samples(&run.checkpoint.model, &samples, 64).map_err(e2s)?.accuracy;
    ensure((student_acc - teacher_acc).abs() <= 0.02, || format!("teacher {teacher_acc:.4}, student {student_acc:.4}"))?;
    Ok(format!(
        "300 random pseudo sets balanced, top-confidence and strictly above threshold; teacher {teacher_acc:.3} vs student {student_acc:.3} train accuracy"
    ))
}

// ---------------------------------------------------------------- 7

/// Upper tail of chi-square(1) at x via Simpson integration of the normal density.
fn chi2_1_sf_oracle(x: f64) -> f64 {
    let z = x.sqrt();
    let (a, b, n) = (z, z + 14.0, 200_000);
    let h = (b - a) / n as f64;
    let phi = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = phi(a) + phi(b);
    for i in 1..n {
        s += phi(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * s * h / 3.0
}

fn criterion_7() -> Outcome {
    let schema = TaskId::Informativeness.schema();
    let report = evaluate(&[0, 1, 1, 1], &[0, 0, 1, 1], schema).map_err(e2s)?;
    let expected = 0.5 * (2.0 / 3.0) + 0.5 * (4.0 / 5.0);
    ensure((report.f1 - expected).abs() < 1e-6, || format!("weighted F1 {} vs {expected}", report.f1))?;
    ensure(report.accuracy == 0.75, || format!("accuracy {}", report.accuracy))?;

    // b = 5 (only A right), c = 15 (only B right), 30 concordant.
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut gold = Vec::new();
    for (pa, pb, n) in [(1, 0, 5), (0, 1, 15), (1, 1, 20), (0, 0, 10)] {
        for _ in 0..n {
            a.push(pa);
            b.push(pb);
            gold.push(1);
        }
    }
    let r = mcnemar(&a, &b, &gold).map_err(e2s)?;
    let oracle = chi2_1_sf_oracle(4.05);
    ensure((r.statistic - 4.05).abs() < 1e-12, || format!("McNemar statistic {}", r.statistic))?;
    ensure((r.p_value - oracle).abs() < 1e-3, || format!("McNemar p {} vs oracle {oracle}", r.p_value))?;
    let swapped = mcnemar(&b, &a, &gold).map_err(e2s)?;
    ensure(swapped.p_value == r.p_value, || "McNemar not symmetric".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut pa = Vec::new();
    let mut pb = Vec::new();
    for _ in 0..40 {
        let (i, j) = (rng.random_range(0..4), rng.random_range(0..4));
        pa.extend([i, j]);
        pb.extend([j, i]);
    }
    let bw = bowker(&pa, &pb, 4).map_err(e2s)?;
    ensure(bw.statistic == 0.0 && bw.p_value == 1.0, || format!("symmetric table gives {} / {}", bw.statistic, bw.p_value))?;

    let gold4: Vec<usize> = (0..200).map(|_| rng.random_range(0..4)).collect();
    let models: Vec<(String, Vec<usize>)> = (0..4)
        .map(|m| {
            let p = gold4.iter().map(|&g| if rng.random::<f64>() < 0.5 + 0.1 * m as f64 { g } else { rng.random_range(0..4) }).collect();
            (format!("m{m}"), p)
        })
        .collect();
    let matrix = significance_matrix(&models, &gold4, TaskId::Humanitarian.schema()).map_err(e2s)?;
    for i in 0..4 {
        for j in 0..4 {
            ensure(matrix.p_value(i, j) == matrix.p_value(j, i), || format!("matrix asymmetric at ({i}, {j})"))?;
        }
    }
    Ok(format!(
        "weighted F1 {:.6}; McNemar 4.05, p {:.6} (oracle {oracle:.6}); Bowker 0 / 1 on symmetric table; matrix symmetric",
        report.f1, r.p_value
    ))
}

// ---------------------------------------------------------------- 8

fn linear_head(w: Vec<Vec<f64>>) -> impl Fn(&Tensor) -> cvtk_core::Result<Tensor> {
    move |f: &Tensor| {
        let pooled = f.mean(D::Minus1)?.mean(D::Minus1)?;
        let wt = Tensor::new(w.clone(), f.device())?.to_dtype(f.dtype())?;
        Ok(pooled.matmul(&wt.t()?)?)
    }
}

fn check_cam(cam: &CamMap) -> Result<(), String> {
    ensure(cam.grid.iter().all(|&v| v >= 0.0), || "negative grid value".into())?;
    ensure(cam.upsampled.iter().all(|&v| (0.0..=1.0).contains(&v)), || "upsampled map outside [0, 1]".into())?;
    let max = cam.upsampled.iter().cloned().fold(0.0, f64::max);
    if cam.grid.iter().any(|&v| v > 0.0) {
        ensure((max - 1.0).abs() < 1e-12, || format!("upsampled max {max}"))?;
    }
    Ok(())
}

fn criterion_8() -> Outcome {
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..50 {
        let feats = Tensor::randn(0f64, 1.0, (1, 6, 5, 7), &dev).map_err(e2s)?.relu().map_err(e2s)?;
        let w: Vec<Vec<f64>> = (0..3).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let class = trial % 3;
        let cam = grad_cam_with_head(&feats, linear_head(w.clone()), class, class, (20, 28)).map_err(e2s)?;
        check_cam(&cam).map_err(|e| format!("trial {trial}: {e}"))?;
        // Scale covariance through a nonlinear head.
        let nonlinear = |scale: f64| {
            let w = w.clone();
            move |f: &Tensor| -> cvtk_core::Result<Tensor> { Ok((linear_head(w.clone())(f)?.tanh()? * scale)?) }
        };
        let base = grad_cam_with_head(&feats, nonlinear(1.0), class, class, (20, 28)).map_err(e2s)?;
        let scaled = grad_cam_with_head(&feats, nonlinear(3.7), class, class, (20, 28)).map_err(e2s)?;
        let diff = base.upsampled.iter().zip(&scaled.upsampled).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(diff < 1e-9, || format!("trial {trial}: scaling the score changed the map by {diff}"))?;
    }

    // A real backbone: rectified and normalized.
    let model = build_model("tinycnn", HeadLayout::single(TaskId::Humanitarian), &BuildOptions { seed: 8, ..Default::default() })
        .map_err(e2s)?;
    let img = textured(8, 40, 30);
    for class in 0..4 {
        check_cam(&grad_cam(&model, &img, 0, class).map_err(e2s)?).map_err(|e| format!("tinycnn class {class}: {e}"))?;
    }

    // Two blobs: red at rows/cols 4..12, blue at 20..28 of a 32×32 image.
    let img = RgbImage::from_fn(32, 32, |x, y| {
        let inside = |lo: u32| (lo..lo + 8).contains(&x) && (lo..lo + 8).contains(&y);
        if inside(4) {
            Rgb([230, 20, 20])
        } else if inside(20) {
            Rgb([20, 20, 230])
        } else {
            Rgb([90, 90, 90])
        }
    });
    let x = Tensor::from_vec(img.as_raw().iter().map(|&v| v as f64 / 255.0).collect::<Vec<_>>(), (32, 32, 3), &dev)
        .and_then(|t| t.permute((2, 0, 1))?.unsqueeze(0))
        .map_err(e2s)?;
    // Colour-detector channels pooled 4×4 to an 8×8 grid.
    let chan = |t: &Tensor, c: usize| t.narrow(1, c, 1);
    let (r, g, b) = (chan(&x, 0).map_err(e2s)?, chan(&x, 1).map_err(e2s)?, chan(&x, 2).map_err(e2s)?);
    let red = (&r - ((&g + &b).map_err(e2s)? * 0.5).map_err(e2s)?).and_then(|t| t.relu()).map_err(e2s)?;
    let blue = (&b - ((&r + &g).map_err(e2s)? * 0.5).map_err(e2s)?).and_then(|t| t.relu()).map_err(e2s)?;
    let feats = Tensor::cat(&[red, blue], 1).and_then(|t| t.avg_pool2d(4)).map_err(e2s)?;
    let head = || linear_head(vec![vec![1.0, -0.5], vec![-0.5, 1.0]]);
    let cam_red = grad_cam_with_head(&feats, head(), 0, 0, (32, 32)).map_err(e2s)?;
    let cam_blue = grad_cam_with_head(&feats, head(), 1, 1, (32, 32)).map_err(e2s)?;
    let in_blob = |(y, x): (usize, usize), lo: usize| (lo..lo + 8).contains(&y) && (lo..lo + 8).contains(&x);
    ensure(in_blob(cam_red.argmax(), 4), || format!("red-class argmax at {:?}", cam_red.argmax()))?;
    ensure(in_blob(cam_blue.argmax(), 20), || format!("blue-class argmax at {:?}", cam_blue.argmax()))?;
    ensure(cam_red.upsampled != cam_blue.upsampled, || "class maps identical".into())?;

    // 2 channels on a 2×2 grid, GAP + linear head: alpha_k = W[c][k] / 4.
    let feats = Tensor::new(vec![vec![vec![1.0f64, 2.0], vec![3.0, 4.0]], vec![vec![0.5, -1.0], vec![2.0, 0.0]]], &dev)
        .and_then(|t| t.unsqueeze(0))
        .map_err(e2s)?;
    let w = vec![vec![0.6, -0.2], vec![-0.3, 0.9]];
    // Class 0: relu(0.15 A0 - 0.05 A1); class 1: relu(-0.075 A0 + 0.225 A1).
    let closed = [[0.125, 0.35, 0.35, 0.6], [0.0375, 0.0, 0.225, 0.0]];
    let mut worst = 0.0f64;
    for class in 0..2 {
        let cam = grad_cam_with_head(&feats, linear_head(w.clone()), class, class, (2, 2)).map_err(e2s)?;
        for (got, want) in cam.grid.iter().zip(closed[class]) {
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst < 1e-6, || format!("closed form differs by {worst}"))?;
    Ok(format!(
        "50 random maps rectified/normalized/scale-invariant; blob argmaxes {:?} and {:?}; closed form within {worst:.1e}",
        cam_red.argmax(),
        cam_blue.argmax()
    ))
}

// ---------------------------------------------------------------- 9

/// Accepts writes until `limit` flushes have happened, then fails like a dead pipe.
struct DiesAfter {
    buf: Vec<u8>,
    flushes: usize,
    limit: usize,
}

impl Write for DiesAfter {
    fn write(&mut self, data: &[u8]) -> std::io::Result<usize> {
        if self.flushes >= self.limit {
            return Err(std::io::Error::new(std::io::ErrorKind::BrokenPipe, "killed"));
        }
        self.buf.extend_from_slice(data);
        Ok(data.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        self.flushes += 1;
        Ok(())
    }
}

fn parse_records(bytes: &[u8]) -> Result<Vec<AnnotatedRecord>, String> {
    let text = std::str::from_utf8(bytes).map_err(e2s)?;
    ensure(text.is_empty() || text.ends_with('\n'), || "output ends mid-record".into())?;
    text.lines().map(|l| serde_json::from_str(l).map_err(|e| format!("bad record {l:?}: {e}"))).collect()
}

fn criterion_9() -> Outcome {
    let config = TrainConfig { backbone: "tinycnn".into(), pretrained: false, image_size: Some(32), ..TrainConfig::default() };
    let model = build_model("tinycnn", HeadLayout::for_tasks(&TaskId::ALL).map_err(e2s)?, &config.build_options()).map_err(e2s)?;
    let dev0 = DevMetrics { accuracy: 0.0, loss: 0.0, per_task: Vec::new() };
    let ckpt = Checkpoint::new(CheckpointMeta::new(&model, &config, 0, dev0, None), model).map_err(e2s)?;
    let classifiers = Classifiers::Multitask(ckpt);
    let pcfg = PipelineConfig { mode: PipelineMode::Multitask, ..PipelineConfig::default() };

    let dir = tempfile::tempdir().map_err(e2s)?;
    let three = dir.path().join("three");
    std::fs::create_dir_all(&three).map_err(e2s)?;
    let set = common::stripe_set(3, 40, 9);
    for (i, (img, _)) in set.iter().enumerate() {
        let noisy = RgbImage::from_fn(40, 40, |x, y| {
            let p = img.get_pixel(x, y);
            Rgb([p[0], p[1].wrapping_add((x * 7 + y * 13 + i as u32 * 50) as u8), p[2]])
        });
        noisy.save(three.join(format!("img{i}.png"))).map_err(e2s)?;
    }
    let mut out = Vec::new();
    classify_stream(read_source(&three).map_err(e2s)?, &classifiers, &pcfg, &mut out).map_err(e2s)?;
    let recs = parse_records(&out)?;
    ensure(recs.len() == 3, || format!("{} records", recs.len()))?;
    for r in &recs {
        ensure(r.predictions.len() == 4 && r.duplicate_of.is_none() && r.error.is_none(), || format!("record {r:?}"))?;
        for (t, p) in &r.predictions {
            let s: f32 = p.probs.iter().sum();
            ensure(p.probs.len() == t.schema().num_classes() && (s - 1.0).abs() < 1e-4, || format!("{t} probs {:?}", p.probs))?;
        }
    }

    let dup = dir.path().join("dup");
    std::fs::create_dir_all(&dup).map_err(e2s)?;
    for (i, name) in ["img0.png", "img1.png", "img2.png"].iter().enumerate() {
        std::fs::copy(three.join(name), dup.join(format!("a{i}.png"))).map_err(e2s)?;
    }
    std::fs::copy(three.join("img1.png"), dup.join("b_copy.png")).map_err(e2s)?;
    let mut out = Vec::new();
    classify_stream(read_source(&dup).map_err(e2s)?, &classifiers, &pcfg, &mut out).map_err(e2s)?;
    let recs = parse_records(&out)?;
    ensure(recs.len() == 4, || format!("{} records for 4 inputs", recs.len()))?;
    let copy = recs.iter().find(|r| r.record_id == "b_copy.png").ok_or("no record for the copy")?;
    ensure(copy.duplicate_of.as_deref() == Some("a1.png") && copy.predictions.is_empty(), || format!("copy record {copy:?}"))?;

    let log = RunLog { records: vec![(StageTimings::default(), 1.0); 100], wall_seconds: 4.0 };
    let ips = throughput_report(&log).map_err(e2s)?.images_per_second;
    ensure(ips == 25.0, || format!("{ips} images/s"))?;

    let mut dying = DiesAfter { buf: Vec::new(), flushes: 0, limit: 2 };
    let res = classify_stream(read_source(&dup).map_err(e2s)?, &classifiers, &pcfg, &mut dying);
    ensure(res.is_err(), || "run survived a dead output".into())?;
    let prefix = parse_records(&dying.buf)?;
    ensure(prefix.len() == 2 && prefix[0].record_id == "a0.png" && prefix[1].record_id == "a1.png", || {
        format!("prefix {:?}", prefix.iter().map(|r| &r.record_id).collect::<Vec<_>>())
    })?;
    Ok("3 records × 4 tasks; byte copy flagged duplicate_of a1.png; 100 / 4 s = 25.0/s; interrupted run left 2 complete records".into())
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for (name, published) in [("resnet18", 11.18e6), ("efficientnet_b1", 7.79e6)] {
        let n = count_parameters(name, 2).map_err(e2s)? as f64;
        let rel = (n - published).abs() / published;
        let line = format!("{name} {:.2}M vs {:.2}M ({:+.1}%)", n / 1e6, published / 1e6, 100.0 * (n - published) / published);
        if rel > 0.01 {
            failed.push(line.clone());
        }
        lines.push(line);
    }
    if failed.is_empty() {
        Ok(lines.join("; "))
    } else {
        Err(format!("outside 1%: {}", failed.join("; ")))
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("masked multi-task loss", criterion_1),
        ("split integrity", criterion_2),
        ("multi-task merge", criterion_3),
        ("RandAugment", criterion_4),
        ("training sanity", criterion_5),
        ("noisy-student balancing", criterion_6),
        ("metrics and significance", criterion_7),
        ("Grad-CAM", criterion_8),
        ("streaming pipeline", criterion_9),
        ("parameter counts", criterion_10),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {name} ({secs:.1} s): {detail}");
            }
        }
        let _ = std::io::stdout().flush();
    }
    if failures > 0 {
        println!("{failures} criterion/criteria failed");
        std::process::exit(1);
    }
}

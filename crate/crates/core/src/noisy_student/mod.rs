//! Noisy Student self-training.
//!
//! A teacher labels an unlabeled pool, confident predictions are kept and
//! balanced across classes, and a student is trained under noise on labeled
//! plus pseudo-labeled images. The student can then become the next teacher.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentPolicy;
use crate::data::{ImageRecord, LabelVector, Manifest, TaskId};
use crate::error::{Error, Result};

#[cfg(feature = "nn")]
mod self_training;
#[cfg(feature = "nn")]
pub use self_training::{iterate, pseudo_label, sweep_threshold, train_student, Round, SelfTrainingRun, ThresholdSweep};

/// Dev-set search grid for `--threshold auto`: 0.05, 0.10, ..., 0.95.
pub fn threshold_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Confidence threshold used for a task when none is given.
pub fn default_threshold(task: TaskId) -> f64 {
    match task {
        TaskId::DisasterTypes => 0.7,
        TaskId::Informativeness => 0.8,
        TaskId::Humanitarian => 0.45,
        TaskId::DamageSeverity => 0.45,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct NoisyStudentConfig {
    pub confidence_threshold: f64,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub augment: AugmentPolicy,
    pub dropout_rate: f32,
    pub iterations: usize,
    /// Student training epochs per round. One epoch is enough steps to see
    /// the larger of the two pools once.
    pub student_epochs: usize,
    pub student_backbone: Option<String>,
}

impl Default for NoisyStudentConfig {
    fn default() -> Self {
        Self::for_task(TaskId::Informativeness)
    }
}

impl NoisyStudentConfig {
    pub fn for_task(task: TaskId) -> Self {
        NoisyStudentConfig {
            confidence_threshold: default_threshold(task),
            labeled_batch: 16,
            unlabeled_batch: 48,
            augment: AugmentPolicy::default(),
            dropout_rate: 0.2,
            iterations: 1,
            student_epochs: 20,
            student_backbone: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_threshold(self.confidence_threshold)?;
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return Err(Error::invalid("labeled and unlabeled batch sizes must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("at least one self-training iteration is required"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout rate must be in [0, 1)"));
        }
        if self.student_epochs == 0 {
            return Err(Error::invalid("student_epochs must be positive"));
        }
        Ok(())
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("confidence threshold must lie in (0, 1), got {t}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub record_id: String,
    pub image_ref: String,
    pub class_index: usize,
    /// Maximum of the teacher's probability vector.
    pub confidence: f64,
}

impl PseudoLabel {
    /// Hard label from a probability vector; ties go to the lower index.
    pub fn from_probs(record_id: impl Into<String>, image_ref: impl Into<String>, probs: &[f32]) -> Result<Self> {
        let (class_index, &p) = probs
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, &f32)>, (i, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((i, p)),
            })
            .ok_or_else(|| Error::invalid("empty probability vector"))?;
        Ok(PseudoLabel {
            record_id: record_id.into(),
            image_ref: image_ref.into(),
            class_index,
            confidence: p as f64,
        })
    }
}

/// Keeps pseudo-labels with confidence strictly above `threshold`, then trims
/// every class to the size of the smallest class of the task, keeping the most
/// confident entries. A class with no survivors therefore empties the output.
pub fn filter_and_balance(pseudo: &[PseudoLabel], threshold: f64, task: TaskId) -> Result<Manifest> {
    check_threshold(threshold)?;
    let k = task.schema().num_classes();
    let mut per_class: Vec<Vec<&PseudoLabel>> = vec![Vec::new(); k];
    for p in pseudo {
        task.schema().check_index(p.class_index as i64)?;
        if p.confidence > threshold {
            per_class[p.class_index].push(p);
        }
    }
    let m = per_class.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 {
        let empty: Vec<&str> = per_class
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_empty())
            .filter_map(|(c, _)| task.schema().label_name(c))
            .collect();
        log::warn!("no pseudo-labels above {threshold} for class(es) {empty:?}; pseudo set is empty");
        return Ok(Manifest::new(Vec::new(), None));
    }
    let mut records = Vec::with_capacity(m * k);
    for (class, mut members) in per_class.into_iter().enumerate() {
        // Descending confidence, id as tie-break so the result is deterministic.
        members.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.record_id.cmp(&b.record_id))
        });
        for p in members.into_iter().take(m) {
            records.push(ImageRecord::new(
                p.record_id.clone(),
                "pseudo",
                p.image_ref.clone(),
                LabelVector::single(task, class),
            ));
        }
    }
    Ok(Manifest::new(records, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn pl(id: &str, class: usize, conf: f64) -> PseudoLabel {
        PseudoLabel {
            record_id: id.into(),
            image_ref: format!("{id}.png"),
            class_index: class,
            confidence: conf,
        }
    }

    fn counts(m: &Manifest, task: TaskId) -> Vec<usize> {
        m.class_histograms().remove(&task).unwrap_or_else(|| vec![0; task.schema().num_classes()])
    }

    #[test]
    fn argmax_and_confidence() {
        let p = PseudoLabel::from_probs("a", "a.png", &[0.9, 0.1]).unwrap();
        assert_eq!((p.class_index, p.confidence), (0, 0.9f32 as f64));
        let p = PseudoLabel::from_probs("a", "a.png", &[0.2, 0.5, 0.3]).unwrap();
        assert_eq!(p.class_index, 1);
        assert!(PseudoLabel::from_probs("a", "a.png", &[]).is_err());
    }

    #[test]
    fn five_three_example() {
        let task = TaskId::Informativeness;
        let pseudo = vec![
            pl("a", 0, 0.95),
            pl("b", 0, 0.91),
            pl("c", 0, 0.99),
            pl("d", 0, 0.85),
            pl("e", 0, 0.97),
            pl("f", 1, 0.90),
            pl("g", 1, 0.88),
            pl("h", 1, 0.93),
            pl("low", 1, 0.5),
        ];
        let out = filter_and_balance(&pseudo, 0.8, task).unwrap();
        assert_eq!(counts(&out, task), vec![3, 3]);
        let kept: BTreeSet<&str> = out.records.iter().map(|r| r.record_id.as_str()).collect();
        for id in ["c", "e", "a", "f", "g", "h"] {
            assert!(kept.contains(id), "{id}");
        }
    }

    #[test]
    fn threshold_is_strict_and_empty_cases() {
        let task = TaskId::Informativeness;
        let pseudo = vec![pl("a", 0, 0.8), pl("b", 1, 0.9)];
        assert!(filter_and_balance(&pseudo, 0.8, task).unwrap().is_empty());
        assert!(filter_and_balance(&pseudo, 0.95, task).unwrap().is_empty());
        assert!(filter_and_balance(&[], 0.5, task).unwrap().is_empty());
        let balanced = vec![pl("a", 0, 0.9), pl("b", 1, 0.9)];
        assert_eq!(filter_and_balance(&balanced, 0.5, task).unwrap().len(), 2);
        assert!(filter_and_balance(&balanced, 1.0, task).is_err());
        assert!(filter_and_balance(&[pl("x", 2, 0.9)], 0.5, task).is_err());
    }

    #[test]
    fn grid_and_defaults() {
        let g = threshold_grid();
        assert_eq!(g.len(), 19);
        assert!((g[0] - 0.05).abs() < 1e-12 && (g[18] - 0.95).abs() < 1e-12);
        let c = NoisyStudentConfig::for_task(TaskId::DisasterTypes);
        assert_eq!(c.confidence_threshold, 0.7);
        assert_eq!(c.labeled_batch + c.unlabeled_batch, 64);
        assert_eq!((c.augment.n, c.augment.m), (5, 12));
        c.validate().unwrap();
    }

    fn arb_pseudo() -> impl Strategy<Value = (TaskId, Vec<PseudoLabel>)> {
        prop::sample::select(TaskId::ALL.to_vec()).prop_flat_map(|task| {
            let k = task.schema().num_classes();
            let entry = (0..k, 0u32..=100).prop_map(|(c, q)| (c, q as f64 / 100.0));
            prop::collection::vec(entry, 0..80).prop_map(move |v| {
                let list = v.into_iter().enumerate().map(|(i, (c, conf))| pl(&format!("r{i:03}"), c, conf)).collect();
                (task, list)
            })
        })
    }

    proptest! {
        #[test]
        fn balance_invariants((task, pseudo) in arb_pseudo(), t in 1u32..100) {
            let threshold = t as f64 / 100.0;
            let out = filter_and_balance(&pseudo, threshold, task).unwrap();
            let by_id: BTreeMap<&str, &PseudoLabel> = pseudo.iter().map(|p| (p.record_id.as_str(), p)).collect();
            let c = counts(&out, task);
            prop_assert!(c.iter().all(|&n| n == c[0]));
            let kept: BTreeSet<&str> = out.records.iter().map(|r| r.record_id.as_str()).collect();
            for r in &out.records {
                let p = by_id[r.record_id.as_str()];
                prop_assert!(p.confidence > threshold);
                prop_assert_eq!(r.labels.get(task), Some(p.class_index));
            }
            // Every dropped survivor is no more confident than any kept entry of its class.
            for p in pseudo.iter().filter(|p| p.confidence > threshold && !kept.contains(p.record_id.as_str())) {
                for q in out.records.iter().map(|r| by_id[r.record_id.as_str()]).filter(|q| q.class_index == p.class_index) {
                    prop_assert!(q.confidence >= p.confidence);
                }
            }
            // Brute-force oracle for the per-class size.
            let m = (0..task.schema().num_classes())
                .map(|k| pseudo.iter().filter(|p| p.class_index == k && p.confidence > threshold).count())
                .min()
                .unwrap();
            prop_assert_eq!(out.len(), m * task.schema().num_classes());
        }

        #[test]
        fn raising_threshold_never_grows_survivors((task, pseudo) in arb_pseudo(), a in 1u32..99, b in 1u32..99) {
            let (lo, hi) = (a.min(b) as f64 / 100.0, a.max(b) as f64 / 100.0);
            let lo_n = filter_and_balance(&pseudo, lo, task).unwrap().len();
            let hi_n = filter_and_balance(&pseudo, hi, task).unwrap().len();
            prop_assert!(hi_n <= lo_n);
        }
    }
}

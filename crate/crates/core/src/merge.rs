//! Builds multi-task train/dev/test manifests out of per-task splits.
//!
//! Test sets are merged first and claim every image they contain, then dev
//! sets claim what is left, and train gets the remainder, so an image lives in
//! exactly one output split and carries every label any task gave it.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::{ImageRecord, LabelVector, Manifest, Split, TaskId};
use crate::error::{Error, Result};

/// (train, dev, test) manifests.
pub type Splits = [Manifest; 3];

/// Merges per-task splits. Identity across tasks is the record id. Every label
/// present on an input record is carried over, so merged outputs can be fed
/// back in. Contradicting labels for one (record, task) are an error.
pub fn merge_multitask(per_task: &BTreeMap<TaskId, Splits>) -> Result<Splits> {
    // Highest-priority split holding each record: test, then dev, then train.
    let mut home: BTreeMap<&str, Split> = BTreeMap::new();
    for splits in per_task.values() {
        for split in Split::ALL {
            for r in &splits[split.index()].records {
                let entry = home.entry(&r.record_id).or_insert(split);
                if rank(split) > rank(*entry) {
                    *entry = split;
                }
            }
        }
    }

    let mut merged: BTreeMap<&str, ImageRecord> = BTreeMap::new();
    let mut conflicts: BTreeSet<String> = BTreeSet::new();
    for splits in per_task.values() {
        for m in splits.iter() {
            for r in &m.records {
                let slot = merged.entry(&r.record_id).or_insert_with(|| ImageRecord {
                    labels: LabelVector::empty(),
                    ..r.clone()
                });
                for (task, class) in r.labels.present() {
                    match slot.labels.get(task) {
                        Some(existing) if existing != class => {
                            conflicts.insert(format!("{}:{task}", r.record_id));
                        }
                        _ => slot.labels.set(task, Some(class)),
                    }
                }
            }
        }
    }
    if !conflicts.is_empty() {
        return Err(Error::LabelConflict(
            conflicts.into_iter().collect::<Vec<_>>().join(", "),
        ));
    }

    let mut out: Splits = Split::ALL.map(|s| Manifest::new(Vec::new(), Some(s)));
    for (id, record) in merged {
        out[home[id].index()].records.push(record);
    }
    Ok(out)
}

fn rank(split: Split) -> u8 {
    match split {
        Split::Train => 0,
        Split::Dev => 1,
        Split::Test => 2,
    }
}

/// Keeps records labeled for every task in `tasks`, preserving their split.
pub fn complete_label_subset(merged: &Splits, tasks: &[TaskId]) -> Splits {
    let out = merged.clone().map(|mut m| {
        m.records.retain(|r| r.labels.has_all(tasks));
        m
    });
    if out.iter().all(Manifest::is_empty) {
        log::warn!("no record has complete labels for {tasks:?}");
    }
    out
}

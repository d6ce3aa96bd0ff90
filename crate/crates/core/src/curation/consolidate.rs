use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::duplicates::{find_duplicates, DuplicateGroup};
use super::signature::ImageSignature;
use super::split::{resolve_cross_split_duplicates, SplitPlan};
use crate::data::{ImageRecord, LabelVector, Manifest, TaskId};
use crate::error::{Error, Result};

/// One source dataset with its own split and image signatures (keyed by the
/// dataset's own record ids).
#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub name: String,
    pub manifest: Manifest,
    pub plan: SplitPlan,
    pub signatures: Vec<ImageSignature>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelConflict {
    pub exact_digest: String,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Consolidated {
    pub manifest: Manifest,
    pub plan: SplitPlan,
    pub groups: Vec<DuplicateGroup>,
    pub conflicts: Vec<LabelConflict>,
    pub moved_to_train: usize,
}

fn namespaced(dataset: &str, id: &str) -> String {
    format!("{dataset}/{id}")
}

fn conflicting(a: &LabelVector, b: &LabelVector) -> bool {
    TaskId::ALL
        .iter()
        .any(|t| matches!((a.get(*t), b.get(*t)), (Some(x), Some(y)) if x != y))
}

/// Merges per-dataset splits into one consolidated split.
///
/// Records are renamed `<dataset>/<record_id>`. Byte-identical images with
/// conflicting labels keep only the copies from the largest dataset. Duplicate
/// groups are then recomputed over the union and any group spanning splits is
/// moved into train.
pub fn consolidate(datasets: &[SplitDataset], hamming_threshold: u32) -> Result<Consolidated> {
    let mut datasets: Vec<&SplitDataset> = datasets.iter().collect();
    datasets.sort_by(|a, b| a.name.cmp(&b.name));
    if datasets.windows(2).any(|w| w[0].name == w[1].name) {
        return Err(Error::invalid("dataset names must be unique"));
    }

    let mut records: BTreeMap<String, (usize, ImageRecord)> = BTreeMap::new();
    let mut assignments = BTreeMap::new();
    let mut signatures: Vec<ImageSignature> = Vec::new();
    for (di, ds) in datasets.iter().enumerate() {
        for r in &ds.manifest.records {
            let Some(split) = ds.plan.get(&r.record_id) else {
                log::warn!("{}: {} has no split assignment, skipped", ds.name, r.record_id);
                continue;
            };
            let id = namespaced(&ds.name, &r.record_id);
            let mut rec = r.clone();
            rec.record_id = id.clone();
            if ds.manifest.base_dir.is_some() {
                rec.image_ref = ds.manifest.image_path(r).to_string_lossy().into_owned();
            }
            assignments.insert(id.clone(), split);
            records.insert(id, (di, rec));
        }
        for s in &ds.signatures {
            let id = namespaced(&ds.name, &s.record_id);
            if records.contains_key(&id) {
                signatures.push(ImageSignature {
                    record_id: id,
                    ..s.clone()
                });
            }
        }
    }

    // Label conflicts between byte-identical copies from different datasets.
    let size = |di: usize| datasets[di].manifest.len();
    let mut by_digest: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in &signatures {
        by_digest.entry(&s.exact_digest).or_default().push(&s.record_id);
    }
    let mut conflicts = Vec::new();
    let mut dropped: BTreeSet<String> = BTreeSet::new();
    for (digest, ids) in &by_digest {
        let sources: BTreeSet<usize> = ids.iter().map(|id| records[*id].0).collect();
        if sources.len() < 2 {
            continue;
        }
        let has_conflict = ids.iter().enumerate().any(|(i, a)| {
            ids[i + 1..]
                .iter()
                .any(|b| conflicting(&records[*a].1.labels, &records[*b].1.labels))
        });
        if !has_conflict {
            continue;
        }
        // Largest dataset wins; equal sizes fall back to name order.
        let winner = *sources
            .iter()
            .max_by(|a, b| size(**a).cmp(&size(**b)).then(b.cmp(a)))
            .unwrap();
        let (kept, lost): (Vec<&str>, Vec<&str>) =
            ids.iter().partition(|id| records[**id].0 == winner);
        log::warn!(
            "label conflict for digest {digest}: keeping {kept:?} from {}, dropping {lost:?}",
            datasets[winner].name
        );
        dropped.extend(lost.iter().map(|s| s.to_string()));
        conflicts.push(LabelConflict {
            exact_digest: digest.to_string(),
            kept: kept.iter().map(|s| s.to_string()).collect(),
            dropped: lost.iter().map(|s| s.to_string()).collect(),
        });
    }
    for id in &dropped {
        records.remove(id);
        assignments.remove(id);
    }
    signatures.retain(|s| !dropped.contains(&s.record_id));

    let plan = SplitPlan {
        assignments,
        ratios: [0.0; 3],
        seed: 0,
    };
    let groups = find_duplicates(&signatures, hamming_threshold);
    let (mut plan, moved_to_train) = resolve_cross_split_duplicates(&plan, &groups);
    let sizes = plan.sizes();
    let total = sizes.iter().sum::<usize>().max(1) as f64;
    plan.ratios = sizes.map(|s| s as f64 / total);

    let manifest = Manifest::new(records.into_values().map(|(_, r)| r).collect(), None);
    Ok(Consolidated {
        manifest,
        plan,
        groups,
        conflicts,
        moved_to_train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn dataset(name: &str, recs: &[(&str, Split, usize, u64, &str)]) -> SplitDataset {
        let records = recs
            .iter()
            .map(|(id, _, class, _, _)| {
                ImageRecord::new(*id, name, format!("{id}.jpg"), LabelVector::single(TaskId::Informativeness, *class))
            })
            .collect();
        let plan = SplitPlan {
            assignments: recs.iter().map(|(id, s, ..)| (id.to_string(), *s)).collect(),
            ratios: [0.7, 0.1, 0.2],
            seed: 0,
        };
        let signatures = recs
            .iter()
            .map(|(id, _, _, phash, digest)| ImageSignature {
                record_id: id.to_string(),
                phash: *phash,
                exact_digest: digest.to_string(),
            })
            .collect();
        SplitDataset {
            name: name.into(),
            manifest: Manifest::new(records, None),
            plan,
            signatures,
        }
    }

    #[test]
    fn disjoint_datasets_sum() {
        let a = dataset("A", &[("1", Split::Train, 0, 0x0, "a1"), ("2", Split::Test, 1, 0xFFFF, "a2")]);
        let b = dataset("B", &[("1", Split::Dev, 0, 0xFFFF_0000_0000, "b1")]);
        let c = consolidate(&[a, b], 10).unwrap();
        assert_eq!(c.plan.sizes(), [1, 1, 1]);
        assert_eq!(c.manifest.len(), 3);
        assert!(c.manifest.records.iter().any(|r| r.record_id == "B/1"));
    }

    #[test]
    fn cross_dataset_duplicate_moves_to_train() {
        let a = dataset("A", &[("x", Split::Test, 0, 0xABCD, "same")]);
        let b = dataset("B", &[("y", Split::Train, 0, 0xABCD, "same")]);
        let c = consolidate(&[a, b], 10).unwrap();
        assert_eq!(c.plan.get("A/x"), Some(Split::Train));
        assert_eq!(c.plan.get("B/y"), Some(Split::Train));
        assert_eq!(c.moved_to_train, 1);
    }

    #[test]
    fn conflicting_labels_keep_larger_dataset() {
        let a = dataset("A", &[("x", Split::Test, 0, 1, "same"), ("p", Split::Train, 0, !0, "p")]);
        let b = dataset("B", &[("y", Split::Train, 1, 1, "same")]);
        let c = consolidate(&[b.clone(), a.clone()], 10).unwrap();
        assert_eq!(c.conflicts.len(), 1);
        assert_eq!(c.conflicts[0].dropped, vec!["B/y"]);
        assert!(c.plan.get("B/y").is_none());
        assert_eq!(c.plan.get("A/x"), Some(Split::Test));
        let d = consolidate(&[a, b], 10).unwrap();
        assert_eq!(c.plan, d.plan);
    }
}

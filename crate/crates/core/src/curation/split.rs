use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::duplicates::DuplicateGroup;
use crate::data::{ImageRecord, Manifest, Split, TaskId};
use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.1, 0.2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub assignments: BTreeMap<String, Split>,
    /// (train, dev, test) fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitPlan {
    /// Plan matching already split manifests.
    pub fn from_manifests(train: &Manifest, dev: &Manifest, test: &Manifest) -> Result<Self> {
        let mut assignments = BTreeMap::new();
        for (split, m) in [(Split::Train, train), (Split::Dev, dev), (Split::Test, test)] {
            for r in &m.records {
                if assignments.insert(r.record_id.clone(), split).is_some() {
                    return Err(Error::invalid(format!(
                        "record {} appears in more than one split",
                        r.record_id
                    )));
                }
            }
        }
        let total = assignments.len().max(1) as f64;
        let ratios = [train.len() as f64 / total, dev.len() as f64 / total, test.len() as f64 / total];
        Ok(SplitPlan {
            assignments,
            ratios,
            seed: 0,
        })
    }

    pub fn get(&self, record_id: &str) -> Option<Split> {
        self.assignments.get(record_id).copied()
    }

    pub fn sizes(&self) -> [usize; 3] {
        let mut s = [0; 3];
        for split in self.assignments.values() {
            s[split.index()] += 1;
        }
        s
    }

    /// Splits `manifest` into (train, dev, test) manifests. Records absent from
    /// the plan are dropped.
    pub fn partition(&self, manifest: &Manifest) -> [Manifest; 3] {
        Split::ALL.map(|split| {
            let records: Vec<ImageRecord> = manifest
                .records
                .iter()
                .filter(|r| self.get(&r.record_id) == Some(split))
                .cloned()
                .collect();
            Manifest {
                records,
                split: Some(split),
                ..manifest.clone()
            }
        })
    }
}

/// Largest-remainder allocation of `n` items over `ratios`.
fn allocate(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Stratified random split. Each class of `stratify_task` (records without that
/// label form their own stratum) is shuffled and cut by the ratios; classes with
/// fewer than three records go entirely to train.
pub fn make_splits(
    manifest: &Manifest,
    ratios: [f64; 3],
    seed: u64,
    stratify_task: TaskId,
) -> Result<SplitPlan> {
    if ratios.iter().any(|r| *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    manifest.check_unique_ids()?;

    let mut strata: BTreeMap<Option<usize>, Vec<&str>> = BTreeMap::new();
    for r in &manifest.records {
        strata
            .entry(r.labels.get(stratify_task))
            .or_default()
            .push(&r.record_id);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    for (class, mut ids) in strata {
        ids.sort_unstable();
        if ids.len() < 3 {
            let name = class
                .and_then(|c| stratify_task.schema().label_name(c))
                .unwrap_or("<unlabeled>");
            log::warn!(
                "class {name:?} of {stratify_task} has {} record(s); placing all in train",
                ids.len()
            );
            for id in ids {
                assignments.insert(id.to_string(), Split::Train);
            }
            continue;
        }
        ids.shuffle(&mut rng);
        let [n_train, n_dev, _] = allocate(ids.len(), &ratios);
        for (i, id) in ids.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_dev {
                Split::Dev
            } else {
                Split::Test
            };
            assignments.insert(id.to_string(), split);
        }
    }
    Ok(SplitPlan {
        assignments,
        ratios,
        seed,
    })
}

/// Moves every member of a group that spans more than one split into train.
/// Returns the updated plan and the number of reassigned records.
pub fn resolve_cross_split_duplicates(
    plan: &SplitPlan,
    groups: &[DuplicateGroup],
) -> (SplitPlan, usize) {
    let mut out = plan.clone();
    let mut moved = 0;
    for g in groups {
        let splits: BTreeSet<Split> = g.members.iter().filter_map(|m| plan.get(m)).collect();
        if splits.len() > 1 {
            for m in &g.members {
                if let Some(s) = out.assignments.get_mut(m) {
                    if *s != Split::Train {
                        *s = Split::Train;
                        moved += 1;
                    }
                }
            }
        }
    }
    (out, moved)
}

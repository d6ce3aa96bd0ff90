use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use super::split::SplitPlan;
use crate::data::{Manifest, TaskId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub label: String,
    /// (train, dev, test)
    pub counts: [usize; 3],
    pub total: usize,
}

/// Per-class split counts for one task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub task: TaskId,
    pub rows: Vec<StatsRow>,
    pub totals: StatsRow,
}

pub fn split_stats(manifest: &Manifest, plan: &SplitPlan, task: TaskId) -> SplitStats {
    let schema = task.schema();
    let mut counts = vec![[0usize; 3]; schema.num_classes()];
    for r in &manifest.records {
        if let (Some(class), Some(split)) = (r.labels.get(task), plan.get(&r.record_id)) {
            counts[class][split.index()] += 1;
        }
    }
    let rows: Vec<StatsRow> = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| c.iter().sum::<usize>() > 0)
        .map(|(i, c)| StatsRow {
            label: schema.class_labels[i].clone(),
            counts: *c,
            total: c.iter().sum(),
        })
        .collect();
    let mut total = [0usize; 3];
    for r in &rows {
        for i in 0..3 {
            total[i] += r.counts[i];
        }
    }
    SplitStats {
        task,
        rows,
        totals: StatsRow {
            label: "Total".into(),
            counts: total,
            total: total.iter().sum(),
        },
    }
}

impl fmt::Display for SplitStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain([12])
            .max()
            .unwrap();
        let mut out = String::new();
        let rule = "-".repeat(width + 4 * 9);
        writeln!(out, "{}", self.task)?;
        writeln!(out, "{:<width$}{:>9}{:>9}{:>9}{:>9}", "Class label", "Train", "Dev", "Test", "Total")?;
        writeln!(out, "{rule}")?;
        for r in self.rows.iter().chain(std::iter::once(&self.totals)) {
            if std::ptr::eq(r, &self.totals) {
                writeln!(out, "{rule}")?;
            }
            writeln!(
                out,
                "{:<width$}{:>9}{:>9}{:>9}{:>9}",
                r.label, r.counts[0], r.counts[1], r.counts[2], r.total
            )?;
        }
        f.write_str(&out)
    }
}
